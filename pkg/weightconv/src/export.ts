/**
 * One-shot checkpoint -> SFW1 conversion.
 *
 * Reads a safetensors checkpoint, resolves every conv layer the target
 * architecture requires, validates shapes, and writes the SFW1 file plus
 * its plain-text manifest alongside.  Output bytes are a pure function of
 * the checkpoint contents, so re-exports are byte-stable.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { basename } from "node:path";

import { architecture } from "./arch.js";
import { Checkpoint, parseSafetensors } from "./safetensors.js";
import {
    ExportManifest,
    SfwTensor,
    encodeManifest,
    encodeSfw,
    payloadCrc,
} from "./sfw.js";

export const IMAGENET_MEAN_BGR: [number, number, number] = [103.939, 116.779, 123.68];

export interface ExportOptions {
    meanBgr?: [number, number, number];
    source?: string;
}

function shapesEqual(a: number[], b: number[]): boolean {
    return a.length === b.length && a.every((v, i) => v === b[i]);
}

function resolve(
    checkpoint: Checkpoint,
    layer: string,
    aliases: string[],
    kind: "weight" | "bias",
): { key: string; shape: number[]; data: Float32Array } {
    const tried: string[] = [];
    for (const prefix of [layer, ...aliases]) {
        const key = `${prefix}.${kind}`;
        tried.push(key);
        const entry = checkpoint.get(key);
        if (entry) return { key, shape: entry.shape, data: entry.data };
    }
    throw new Error(
        `checkpoint is missing layer '${layer}' (${kind}); tried ${tried.join(", ")}`,
    );
}

export function exportCheckpoint(
    checkpointPath: string,
    archId: string,
    outPath: string,
    options: ExportOptions = {},
): ExportManifest {
    const convs = architecture(archId);
    const checkpoint = parseSafetensors(readFileSync(checkpointPath));

    const tensors: SfwTensor[] = [];
    for (const conv of convs) {
        const w = resolve(checkpoint, conv.name, conv.aliases, "weight");
        const wantW = [conv.outChannels, conv.inChannels, 3, 3];
        if (!shapesEqual(w.shape, wantW)) {
            throw new Error(
                `layer ${conv.name}: weight shape ${w.shape.join("x")} != expected ${wantW.join("x")}`,
            );
        }
        const b = resolve(checkpoint, conv.name, conv.aliases, "bias");
        if (!shapesEqual(b.shape, [conv.outChannels])) {
            throw new Error(
                `layer ${conv.name}: bias shape ${b.shape.join("x")} != expected ${conv.outChannels}`,
            );
        }
        tensors.push({ name: `${conv.name}.weight`, shape: wantW, data: w.data });
        tensors.push({ name: `${conv.name}.bias`, shape: [conv.outChannels], data: b.data });
    }

    const manifest: ExportManifest = {
        source: options.source ?? `${archId}:${basename(checkpointPath)}`,
        meanBgr: options.meanBgr ?? IMAGENET_MEAN_BGR,
        tensors: tensors.map((t) => ({
            name: t.name,
            shape: t.shape,
            crc32: payloadCrc(t.data),
        })),
    };

    writeFileSync(outPath, encodeSfw(tensors));
    writeFileSync(`${outPath}.manifest`, encodeManifest(manifest));
    return manifest;
}
