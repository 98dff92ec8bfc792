/**
 * SFW1 container: little-endian stream of named float32 tensors.
 *
 *   "SFW1" | u32 version=1 | u32 count |
 *   per tensor: u16 name-length, UTF-8 name, u8 dtype (0 = f32),
 *               u8 ndim, ndim x u32 dims, raw f32 payload |
 *   trailing u32 CRC32 of all preceding bytes.
 *
 * The sidecar manifest is plain text: `source`, `mean_bgr`, and one
 * `tensor = <name> <dims> crc32=0x<HEX>` line per entry.
 */

import { crc32 } from "node:zlib";

export const MAGIC = "SFW1";
export const VERSION = 1;

export interface SfwTensor {
    name: string;
    shape: number[];
    data: Float32Array;
}

export interface ManifestEntry {
    name: string;
    shape: number[];
    crc32: number;
}

export interface ExportManifest {
    source: string;
    meanBgr: [number, number, number];
    tensors: ManifestEntry[];
}

export function payloadCrc(data: Float32Array): number {
    return crc32(Buffer.from(data.buffer, data.byteOffset, data.byteLength)) >>> 0;
}

export function encodeSfw(tensors: SfwTensor[]): Buffer {
    const parts: Buffer[] = [];
    const head = Buffer.alloc(12);
    head.write(MAGIC, 0, "ascii");
    head.writeUInt32LE(VERSION, 4);
    head.writeUInt32LE(tensors.length, 8);
    parts.push(head);
    for (const t of tensors) {
        const nameBuf = Buffer.from(t.name, "utf-8");
        const meta = Buffer.alloc(2 + nameBuf.length + 2 + 4 * t.shape.length);
        let off = 0;
        meta.writeUInt16LE(nameBuf.length, off); off += 2;
        nameBuf.copy(meta, off); off += nameBuf.length;
        meta.writeUInt8(0, off); off += 1;             // dtype 0 = f32
        meta.writeUInt8(t.shape.length, off); off += 1;
        for (const d of t.shape) {
            meta.writeUInt32LE(d, off); off += 4;
        }
        parts.push(meta);
        parts.push(Buffer.from(t.data.buffer, t.data.byteOffset, t.data.byteLength));
    }
    const body = Buffer.concat(parts);
    const tail = Buffer.alloc(4);
    tail.writeUInt32LE(crc32(body) >>> 0, 0);
    return Buffer.concat([body, tail]);
}

export interface DecodedSfw {
    tensors: SfwTensor[];
}

/** Parse and validate an SFW1 buffer (structure and trailing CRC). */
export function decodeSfw(buf: Buffer): DecodedSfw {
    if (buf.length < 16 || buf.subarray(0, 4).toString("ascii") !== MAGIC) {
        throw new Error("not an SFW1 file (bad magic)");
    }
    const stored = buf.readUInt32LE(buf.length - 4);
    const actual = crc32(buf.subarray(0, buf.length - 4)) >>> 0;
    if (stored !== actual) {
        throw new Error(
            `CRC mismatch (stored 0x${stored.toString(16).padStart(8, "0").toUpperCase()}, ` +
            `computed 0x${actual.toString(16).padStart(8, "0").toUpperCase()})`,
        );
    }
    const version = buf.readUInt32LE(4);
    if (version !== VERSION) {
        throw new Error(`unsupported version ${version}`);
    }
    const count = buf.readUInt32LE(8);
    let off = 12;
    const end = buf.length - 4;
    const need = (n: number) => {
        if (off + n > end) throw new Error("truncated file");
    };
    const tensors: SfwTensor[] = [];
    for (let i = 0; i < count; i++) {
        need(2);
        const nameLen = buf.readUInt16LE(off); off += 2;
        need(nameLen);
        const name = buf.subarray(off, off + nameLen).toString("utf-8"); off += nameLen;
        need(2);
        const dtype = buf.readUInt8(off); off += 1;
        if (dtype !== 0) throw new Error(`tensor ${name}: unsupported dtype ${dtype}`);
        const ndim = buf.readUInt8(off); off += 1;
        need(4 * ndim);
        const shape: number[] = [];
        for (let d = 0; d < ndim; d++) {
            shape.push(buf.readUInt32LE(off)); off += 4;
        }
        const n = shape.reduce((a, b) => a * b, 1);
        need(4 * n);
        const data = new Float32Array(n);
        for (let j = 0; j < n; j++) data[j] = buf.readFloatLE(off + 4 * j);
        off += 4 * n;
        tensors.push({ name, shape, data });
    }
    if (off !== end) throw new Error("trailing bytes after last tensor");
    return { tensors };
}

export function encodeManifest(m: ExportManifest): string {
    const lines = [`source = ${m.source || "unknown"}`];
    lines.push(`mean_bgr = ${m.meanBgr.map((v) => String(v)).join(" ")}`);
    for (const t of m.tensors) {
        const dims = t.shape.length ? t.shape.join("x") : "1";
        const crc = t.crc32.toString(16).padStart(8, "0").toUpperCase();
        lines.push(`tensor = ${t.name} ${dims} crc32=0x${crc}`);
    }
    return lines.join("\n") + "\n";
}

export function parseManifest(text: string): ExportManifest {
    const out: ExportManifest = { source: "", meanBgr: [103.939, 116.779, 123.68], tensors: [] };
    const lines = text.split(/\r?\n/);
    for (let i = 0; i < lines.length; i++) {
        const line = lines[i].trim();
        if (!line || line.startsWith("#")) continue;
        const eq = line.indexOf("=");
        if (eq < 0) throw new Error(`manifest line ${i + 1}: expected 'key = value'`);
        const key = line.slice(0, eq).trim();
        const value = line.slice(eq + 1).trim();
        if (key === "source") {
            out.source = value;
        } else if (key === "mean_bgr") {
            const parts = value.split(/\s+/).map(Number);
            if (parts.length !== 3 || parts.some(Number.isNaN)) {
                throw new Error(`manifest line ${i + 1}: mean_bgr needs 3 numbers`);
            }
            out.meanBgr = parts as [number, number, number];
        } else if (key === "tensor") {
            const m = /^(\S+)\s+([0-9x]+)(?:\s+crc32=0x([0-9a-fA-F]{8}))?$/.exec(value);
            if (!m) throw new Error(`manifest line ${i + 1}: bad tensor entry`);
            out.tensors.push({
                name: m[1],
                shape: m[2].split("x").map(Number),
                crc32: m[3] ? parseInt(m[3], 16) : -1,
            });
        } else {
            throw new Error(`manifest line ${i + 1}: unknown key '${key}'`);
        }
    }
    return out;
}
