#!/usr/bin/env node
/**
 * weightconv CLI:
 *
 *   weightconv export <checkpoint.safetensors> <arch> <out.sfw>
 *              [--source <id>] [--mean <b> <g> <r>]
 *   weightconv verify <file.sfw> <file.sfw.manifest>
 *
 * Architectures: vgg16 | vgg19-encoders | ust-decoders.
 */

import { ARCH_IDS } from "./arch.js";
import { exportCheckpoint } from "./export.js";
import { verify } from "./verify.js";

const USAGE = `usage:
  weightconv export <checkpoint.safetensors> <${ARCH_IDS.join("|")}> <out.sfw> [--source <id>] [--mean <b> <g> <r>]
  weightconv verify <file.sfw> <manifest>`;

export function main(argv: string[]): number {
    const [command, ...rest] = argv;
    try {
        if (command === "export") {
            const positional: string[] = [];
            let source: string | undefined;
            let mean: [number, number, number] | undefined;
            for (let i = 0; i < rest.length; i++) {
                if (rest[i] === "--source") {
                    source = rest[++i];
                } else if (rest[i] === "--mean") {
                    mean = [Number(rest[++i]), Number(rest[++i]), Number(rest[++i])];
                    if (mean.some(Number.isNaN)) throw new Error("--mean needs 3 numbers");
                } else if (rest[i].startsWith("--")) {
                    throw new Error(`unknown flag ${rest[i]}\n${USAGE}`);
                } else {
                    positional.push(rest[i]);
                }
            }
            if (positional.length !== 3) throw new Error(USAGE);
            const [checkpoint, arch, out] = positional;
            const manifest = exportCheckpoint(checkpoint, arch, out, { source, meanBgr: mean });
            console.log(`exported ${manifest.tensors.length} tensors to ${out}`);
            console.log(`manifest: ${out}.manifest (source: ${manifest.source})`);
            return 0;
        }
        if (command === "verify") {
            if (rest.length !== 2) throw new Error(USAGE);
            const report = verify(rest[0], rest[1]);
            console.log(report.fileOk ? `file: ok (${report.fileDetail})` : `file: FAIL (${report.fileDetail})`);
            for (const e of report.entries) {
                console.log(`${e.ok ? "pass" : "FAIL"}  ${e.name}  ${e.detail}`);
            }
            console.log(report.ok && report.fileOk ? "verify: PASS" : "verify: FAIL");
            return report.ok && report.fileOk ? 0 : 1;
        }
        throw new Error(USAGE);
    } catch (e) {
        console.error(`weightconv: error: ${(e as Error).message}`);
        return 1;
    }
}

// ESM entry-point check: run only when invoked directly, not when imported
if (import.meta.url === `file://${process.argv[1]}`) {
    process.exit(main(process.argv.slice(2)));
}
