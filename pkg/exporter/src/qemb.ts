/** QEMB binary container (little-endian).
 *
 * header:  magic "QEMB" | version u16 = 1 | d u32 | record_count u64
 * record:  type u8 (0 video, 1 query) | id_len u16 | id utf-8
 *   video: K u32 | K*d float32 row-major
 *   query: target_id_len u16 | target utf-8 | has_span u8
 *          | [start f64 | end f64] | d float32
 */

export const MAGIC = "QEMB";
export const VERSION = 1;

export interface VideoRecord {
  kind: "video";
  id: string;
  rows: Float32Array[];
}

export interface QueryRecord {
  kind: "query";
  id: string;
  targetId: string;
  span: [number, number] | null;
  vector: Float32Array;
}

export type QembRecord = VideoRecord | QueryRecord;

class ByteWriter {
  private chunks: Buffer[] = [];

  u8(value: number) {
    const b = Buffer.alloc(1);
    b.writeUInt8(value);
    this.chunks.push(b);
  }

  u16(value: number) {
    const b = Buffer.alloc(2);
    b.writeUInt16LE(value);
    this.chunks.push(b);
  }

  u32(value: number) {
    const b = Buffer.alloc(4);
    b.writeUInt32LE(value);
    this.chunks.push(b);
  }

  u64(value: number) {
    const b = Buffer.alloc(8);
    b.writeBigUInt64LE(BigInt(value));
    this.chunks.push(b);
  }

  f64(value: number) {
    const b = Buffer.alloc(8);
    b.writeDoubleLE(value);
    this.chunks.push(b);
  }

  bytes(raw: Buffer) {
    this.chunks.push(raw);
  }

  f32Array(values: Float32Array) {
    const b = Buffer.alloc(4 * values.length);
    for (let i = 0; i < values.length; i++) {
      b.writeFloatLE(values[i], 4 * i);
    }
    this.chunks.push(b);
  }

  concat(): Buffer {
    return Buffer.concat(this.chunks);
  }
}

export function encodeQemb(records: QembRecord[], dim: number): Buffer {
  const w = new ByteWriter();
  w.bytes(Buffer.from(MAGIC, "ascii"));
  w.u16(VERSION);
  w.u32(dim);
  w.u64(records.length);
  for (const record of records) {
    const id = Buffer.from(record.id, "utf-8");
    if (record.kind === "video") {
      w.u8(0);
      w.u16(id.length);
      w.bytes(id);
      w.u32(record.rows.length);
      for (const row of record.rows) {
        if (row.length !== dim) {
          throw new Error(`video '${record.id}': row length ${row.length} != d ${dim}`);
        }
        w.f32Array(row);
      }
    } else {
      w.u8(1);
      w.u16(id.length);
      w.bytes(id);
      const target = Buffer.from(record.targetId, "utf-8");
      w.u16(target.length);
      w.bytes(target);
      if (record.span) {
        w.u8(1);
        w.f64(record.span[0]);
        w.f64(record.span[1]);
      } else {
        w.u8(0);
      }
      if (record.vector.length !== dim) {
        throw new Error(`query '${record.id}': vector length ${record.vector.length} != d ${dim}`);
      }
      w.f32Array(record.vector);
    }
  }
  return w.concat();
}

/** Reader used by the exporter's own tests. */
export function decodeQemb(data: Buffer): { dim: number; records: QembRecord[] } {
  let pos = 0;
  const need = (n: number, what: string) => {
    if (pos + n > data.length) {
      throw new Error(`truncated ${what} at byte offset ${pos}`);
    }
  };
  need(18, "header");
  if (data.subarray(0, 4).toString("ascii") !== MAGIC) {
    throw new Error(`bad magic at byte offset 0`);
  }
  pos = 4;
  const version = data.readUInt16LE(pos);
  pos += 2;
  if (version !== VERSION) throw new Error(`unsupported version ${version}`);
  const dim = data.readUInt32LE(pos);
  pos += 4;
  const count = Number(data.readBigUInt64LE(pos));
  pos += 8;

  const records: QembRecord[] = [];
  for (let r = 0; r < count; r++) {
    need(3, "record head");
    const kind = data.readUInt8(pos);
    pos += 1;
    const idLen = data.readUInt16LE(pos);
    pos += 2;
    need(idLen, "id");
    const id = data.subarray(pos, pos + idLen).toString("utf-8");
    pos += idLen;
    if (kind === 0) {
      need(4, "row count");
      const k = data.readUInt32LE(pos);
      pos += 4;
      need(4 * k * dim, `matrix of '${id}'`);
      const rows: Float32Array[] = [];
      for (let i = 0; i < k; i++) {
        const row = new Float32Array(dim);
        for (let j = 0; j < dim; j++) {
          row[j] = data.readFloatLE(pos);
          pos += 4;
        }
        rows.push(row);
      }
      records.push({ kind: "video", id, rows });
    } else if (kind === 1) {
      need(2, "target length");
      const targetLen = data.readUInt16LE(pos);
      pos += 2;
      need(targetLen + 1, "target id");
      const targetId = data.subarray(pos, pos + targetLen).toString("utf-8");
      pos += targetLen;
      const hasSpan = data.readUInt8(pos);
      pos += 1;
      let span: [number, number] | null = null;
      if (hasSpan) {
        need(16, "span");
        span = [data.readDoubleLE(pos), data.readDoubleLE(pos + 8)];
        pos += 16;
      }
      need(4 * dim, `vector of '${id}'`);
      const vector = new Float32Array(dim);
      for (let j = 0; j < dim; j++) {
        vector[j] = data.readFloatLE(pos);
        pos += 4;
      }
      records.push({ kind: "query", id, targetId, span, vector });
    } else {
      throw new Error(`unknown record type ${kind} at byte offset ${pos - 1}`);
    }
  }
  if (pos !== data.length) {
    throw new Error(`${data.length - pos} trailing bytes at offset ${pos}`);
  }
  return { dim, records };
}
