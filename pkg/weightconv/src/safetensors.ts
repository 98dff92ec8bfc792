/**
 * Minimal safetensors reader: enough to pull named float tensors out of
 * publicly distributed checkpoints.
 *
 * Layout: u64-LE header length, JSON header mapping tensor names to
 * { dtype, shape, data_offsets }, then one contiguous data buffer.
 */

export interface TensorEntry {
    dtype: string;
    shape: number[];
    /** float32 copy of the payload, regardless of source precision */
    data: Float32Array;
}

export type Checkpoint = Map<string, TensorEntry>;

interface HeaderEntry {
    dtype: string;
    shape: number[];
    data_offsets: [number, number];
}

const SUPPORTED: Record<string, number> = { F32: 4, F64: 8 };

export function parseSafetensors(buf: Buffer): Checkpoint {
    if (buf.length < 8) {
        throw new Error("safetensors: file too short for header length");
    }
    const headerLen = Number(buf.readBigUInt64LE(0));
    if (headerLen <= 0 || 8 + headerLen > buf.length) {
        throw new Error(`safetensors: bad header length ${headerLen}`);
    }
    let header: Record<string, HeaderEntry>;
    try {
        header = JSON.parse(buf.subarray(8, 8 + headerLen).toString("utf-8"));
    } catch (e) {
        throw new Error(`safetensors: malformed JSON header (${e})`);
    }
    const dataStart = 8 + headerLen;
    const out: Checkpoint = new Map();
    for (const [name, entry] of Object.entries(header)) {
        if (name === "__metadata__") continue;
        const width = SUPPORTED[entry.dtype];
        if (width === undefined) {
            throw new Error(`safetensors: tensor ${name} has unsupported dtype ${entry.dtype}`);
        }
        const [start, end] = entry.data_offsets;
        const count = entry.shape.reduce((a, b) => a * b, 1);
        if (end - start !== count * width || dataStart + end > buf.length) {
            throw new Error(`safetensors: tensor ${name} has inconsistent offsets`);
        }
        const raw = buf.subarray(dataStart + start, dataStart + end);
        let data: Float32Array;
        if (entry.dtype === "F32") {
            data = new Float32Array(count);
            for (let i = 0; i < count; i++) data[i] = raw.readFloatLE(i * 4);
        } else {
            data = new Float32Array(count);
            for (let i = 0; i < count; i++) data[i] = Math.fround(raw.readDoubleLE(i * 8));
        }
        out.set(name, { dtype: entry.dtype, shape: entry.shape.slice(), data });
    }
    return out;
}

/** Serialize tensors to safetensors bytes (used by tests to build fixtures). */
export function buildSafetensors(tensors: Map<string, { shape: number[]; data: Float32Array }>): Buffer {
    const header: Record<string, HeaderEntry> = {};
    let offset = 0;
    const payloads: Buffer[] = [];
    for (const [name, t] of tensors) {
        const bytes = Buffer.from(t.data.buffer, t.data.byteOffset, t.data.byteLength);
        header[name] = {
            dtype: "F32",
            shape: t.shape.slice(),
            data_offsets: [offset, offset + bytes.length],
        };
        payloads.push(bytes);
        offset += bytes.length;
    }
    const headerJson = Buffer.from(JSON.stringify(header), "utf-8");
    const lenBuf = Buffer.alloc(8);
    lenBuf.writeBigUInt64LE(BigInt(headerJson.length));
    return Buffer.concat([lenBuf, headerJson, ...payloads]);
}
