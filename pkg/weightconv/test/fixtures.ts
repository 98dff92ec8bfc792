/** Synthetic checkpoint builders shared by the tests. */

import { architecture } from "../src/arch.js";
import { buildSafetensors } from "../src/safetensors.js";

/** Small deterministic PRNG so fixtures are stable across runs. */
export function lcgFloats(n: number, seed: number): Float32Array {
    const out = new Float32Array(n);
    let state = seed >>> 0;
    for (let i = 0; i < n; i++) {
        state = (Math.imul(state, 1664525) + 1013904223) >>> 0;
        out[i] = (state / 0xffffffff) * 2 - 1;
    }
    return out;
}

export type KeyStyle = "canonical" | "torchvision";

/** Full-shape random checkpoint for an architecture id. */
export function buildCheckpoint(archId: string, style: KeyStyle = "canonical"): Buffer {
    const tensors = new Map<string, { shape: number[]; data: Float32Array }>();
    let seed = 1;
    for (const conv of architecture(archId)) {
        const prefix =
            style === "torchvision" && conv.aliases.length ? conv.aliases[0] : conv.name;
        const wShape = [conv.outChannels, conv.inChannels, 3, 3];
        const wN = wShape.reduce((a, b) => a * b, 1);
        tensors.set(`${prefix}.weight`, { shape: wShape, data: lcgFloats(wN, seed++) });
        tensors.set(`${prefix}.bias`, {
            shape: [conv.outChannels],
            data: lcgFloats(conv.outChannels, seed++),
        });
    }
    return buildSafetensors(tensors);
}
