/**
 * SFW1 + manifest verification: container structure, trailing CRC, and a
 * per-tensor name / shape / payload-CRC comparison.  Failures never throw;
 * they become report entries.
 */

import { readFileSync } from "node:fs";

import { SfwTensor, decodeSfw, parseManifest, payloadCrc } from "./sfw.js";

export interface VerifyEntry {
    name: string;
    ok: boolean;
    detail: string;
}

export interface VerifyReport {
    ok: boolean;
    fileOk: boolean;
    fileDetail: string;
    entries: VerifyEntry[];
}

export function verify(sfwPath: string, manifestPath: string): VerifyReport {
    const entries: VerifyEntry[] = [];

    let tensors: Map<string, SfwTensor>;
    try {
        const decoded = decodeSfw(readFileSync(sfwPath));
        tensors = new Map(decoded.tensors.map((t) => [t.name, t]));
    } catch (e) {
        return {
            ok: false,
            fileOk: false,
            fileDetail: `format failure: ${(e as Error).message}`,
            entries,
        };
    }

    let manifest;
    try {
        manifest = parseManifest(readFileSync(manifestPath, "utf-8"));
    } catch (e) {
        return {
            ok: false,
            fileOk: true,
            fileDetail: `manifest failure: ${(e as Error).message}`,
            entries,
        };
    }

    for (const want of manifest.tensors) {
        const got = tensors.get(want.name);
        if (!got) {
            entries.push({ name: want.name, ok: false, detail: "missing from file" });
            continue;
        }
        if (got.shape.join("x") !== want.shape.join("x")) {
            entries.push({
                name: want.name,
                ok: false,
                detail: `shape ${got.shape.join("x")} != manifest ${want.shape.join("x")}`,
            });
            continue;
        }
        if (want.crc32 >= 0) {
            const crc = payloadCrc(got.data);
            if (crc !== want.crc32) {
                entries.push({
                    name: want.name,
                    ok: false,
                    detail: `payload crc32 0x${crc.toString(16).toUpperCase()} != manifest`,
                });
                continue;
            }
        }
        entries.push({ name: want.name, ok: true, detail: "ok" });
    }

    const listed = new Set(manifest.tensors.map((t) => t.name));
    for (const name of tensors.keys()) {
        if (!listed.has(name)) {
            entries.push({ name, ok: false, detail: "not listed in manifest" });
        }
    }

    return {
        ok: entries.every((e) => e.ok),
        fileOk: true,
        fileDetail: "container and trailing CRC ok",
        entries,
    };
}
