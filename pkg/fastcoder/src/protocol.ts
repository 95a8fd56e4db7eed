/**
 * Framed batch protocol used by the host codec (all integers big-endian).
 *
 * Request:  u32 stream count, then per stream:
 *   u8 op (0 encode, 1 decode), u32 count,
 *   u32 table count, tables (259 bytes each),
 *   encode: count x i8 symbols
 *   decode: u32 state, u32 cursor, u64 length, stream bytes
 * Response: per stream u8 status (0 ok), u32 length, payload.
 *   encode payload: coded bytes
 *   decode payload: u32 new state, u32 new cursor, count x i8 symbols
 *   error payload: utf-8 message
 */

import {
  CdfTable,
  CoderError,
  RansDecoder,
  TABLE_BYTES,
  encodeSymbols,
} from "./rans.js";

export const OP_ENCODE = 0;
export const OP_DECODE = 1;

class Reader {
  private view: DataView;
  private pos = 0;

  constructor(private buf: Uint8Array) {
    this.view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  }

  private need(n: number): void {
    if (this.pos + n > this.buf.length) {
      throw new CoderError("request truncated");
    }
  }

  u8(): number {
    this.need(1);
    return this.view.getUint8(this.pos++);
  }

  u32(): number {
    this.need(4);
    const v = this.view.getUint32(this.pos, false);
    this.pos += 4;
    return v;
  }

  u64(): number {
    this.need(8);
    const v = this.view.getBigUint64(this.pos, false);
    this.pos += 8;
    if (v > BigInt(Number.MAX_SAFE_INTEGER)) {
      throw new CoderError("length field too large");
    }
    return Number(v);
  }

  bytes(n: number): Uint8Array {
    this.need(n);
    const out = this.buf.subarray(this.pos, this.pos + n);
    this.pos += n;
    return out;
  }

  tables(count: number): CdfTable[] {
    const out: CdfTable[] = [];
    for (let i = 0; i < count; i++) {
      out.push(CdfTable.unpack(this.bytes(TABLE_BYTES)));
    }
    return out;
  }
}

function frame(status: number, payload: Uint8Array): Uint8Array {
  const out = new Uint8Array(5 + payload.length);
  out[0] = status;
  new DataView(out.buffer).setUint32(1, payload.length, false);
  out.set(payload, 5);
  return out;
}

function errorFrame(err: unknown): Uint8Array {
  const message = err instanceof Error ? err.message : String(err);
  return frame(1, new TextEncoder().encode(message));
}

export function handleRequest(request: Uint8Array): Uint8Array {
  const reader = new Reader(request);
  const count = reader.u32();
  const frames: Uint8Array[] = [];
  for (let i = 0; i < count; i++) {
    const op = reader.u8();
    const n = reader.u32();
    try {
      if (op === OP_ENCODE) {
        const tables = reader.tables(reader.u32());
        const symbols = new Int8Array(reader.bytes(n));
        frames.push(frame(0, encodeSymbols(symbols, tables)));
      } else if (op === OP_DECODE) {
        const tables = reader.tables(reader.u32());
        const state = reader.u32();
        const cursor = reader.u32();
        const data = reader.bytes(reader.u64());
        const dec = new RansDecoder(data, { state, pos: cursor });
        const symbols = dec.decode(tables);
        const payload = new Uint8Array(8 + symbols.length);
        const view = new DataView(payload.buffer);
        view.setUint32(0, dec.state >>> 0, false);
        view.setUint32(4, dec.pos, false);
        payload.set(new Uint8Array(symbols.buffer, symbols.byteOffset, symbols.length), 8);
        frames.push(frame(0, payload));
      } else {
        throw new CoderError(`unknown op ${op}`);
      }
    } catch (err) {
      if (err instanceof CoderError || err instanceof RangeError) {
        frames.push(errorFrame(err));
      } else {
        throw err;
      }
    }
  }
  const total = frames.reduce((acc, f) => acc + f.length, 0);
  const out = new Uint8Array(total);
  let pos = 0;
  for (const f of frames) {
    out.set(f, pos);
    pos += f.length;
  }
  return out;
}
