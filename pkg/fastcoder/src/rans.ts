/**
 * rANS stream coder, byte-identical to the reference implementation.
 *
 * Contract: 32-bit state, 16-bit probability precision, byte-wise
 * renormalization. The encoder walks symbols in reverse; the stream is a
 * 4-byte big-endian final state followed by renormalization bytes in
 * decoder-consumption order. An empty stream is exactly the 4 flush bytes.
 *
 * All arithmetic stays below 2^31, so plain JS numbers are exact.
 */

export const RANS_L = 1 << 23;
export const PROB_BITS = 16;
export const PROB_SCALE = 1 << PROB_BITS;
export const TABLE_BYTES = 1 + 2 * 129; // offset + 129 big-endian u16 entries

export class CoderError extends Error {}
export class TableError extends CoderError {}
export class EncodeError extends CoderError {}
export class DecodeError extends CoderError {}

export class CdfTable {
  readonly offset: number;
  readonly cdf: Uint32Array; // length L+1, cdf[0]=0, cdf[L]=65536, strictly increasing

  constructor(offset: number, cdf: Uint32Array) {
    if (cdf.length < 2 || cdf[0] !== 0 || cdf[cdf.length - 1] !== PROB_SCALE) {
      throw new TableError("malformed CDF: endpoints must be 0 and 65536");
    }
    for (let i = 1; i < cdf.length; i++) {
      if (cdf[i] <= cdf[i - 1]) {
        throw new TableError(`malformed CDF: not strictly increasing at bin ${i}`);
      }
    }
    this.offset = offset;
    this.cdf = cdf;
  }

  get numSymbols(): number {
    return this.cdf.length - 1;
  }

  /**
   * Parse the shared wire layout: signed 8-bit offset, then 129 cumulative
   * counts as big-endian u16 modulo 65536 (the final 65536 is stored as 0).
   */
  static unpack(buf: Uint8Array, pos = 0): CdfTable {
    if (pos + TABLE_BYTES > buf.length) {
      throw new TableError("packed table truncated");
    }
    const view = new DataView(buf.buffer, buf.byteOffset + pos, TABLE_BYTES);
    const offset = view.getInt8(0);
    const cdf = new Uint32Array(129);
    for (let i = 0; i < 129; i++) {
      cdf[i] = view.getUint16(1 + 2 * i, false);
    }
    cdf[128] = PROB_SCALE;
    return new CdfTable(offset, cdf);
  }

  freqStart(symbol: number): [number, number] {
    const idx = symbol - this.offset;
    if (idx < 0 || idx >= this.numSymbols) {
      throw new EncodeError(`symbol ${symbol} outside table range`);
    }
    const lo = this.cdf[idx];
    return [this.cdf[idx + 1] - lo, lo];
  }

  /** Largest index with cdf[index] <= value. */
  findSymbol(value: number): number {
    let lo = 0;
    let hi = this.numSymbols;
    while (hi - lo > 1) {
      const mid = (lo + hi) >> 1;
      if (this.cdf[mid] <= value) lo = mid;
      else hi = mid;
    }
    return lo;
  }
}

export function encodeSymbols(symbols: Int8Array | number[], tables: CdfTable[]): Uint8Array {
  if (symbols.length !== tables.length) {
    throw new EncodeError(`${symbols.length} symbols but ${tables.length} tables`);
  }
  let x = RANS_L;
  const emitted: number[] = [];
  for (let i = symbols.length - 1; i >= 0; i--) {
    const [freq, start] = tables[i].freqStart(symbols[i]);
    const xMax = freq * 0x8000; // freq << (PROB_BITS - 1) without 32-bit overflow
    while (x >= xMax) {
      emitted.push(x & 0xff);
      x = Math.floor(x / 256);
    }
    x = Math.floor(x / freq) * PROB_SCALE + (x % freq) + start;
  }
  const out = new Uint8Array(4 + emitted.length);
  new DataView(out.buffer).setUint32(0, x >>> 0, false);
  for (let i = 0; i < emitted.length; i++) {
    out[4 + i] = emitted[emitted.length - 1 - i];
  }
  return out;
}

export interface DecodeState {
  state: number;
  pos: number;
}

export class RansDecoder {
  readonly data: Uint8Array;
  state: number;
  pos: number;

  constructor(data: Uint8Array, resume?: DecodeState) {
    this.data = data;
    if (resume) {
      this.state = resume.state;
      this.pos = resume.pos;
    } else {
      if (data.length < 4) {
        throw new DecodeError("stream shorter than the 4 flush bytes");
      }
      this.state = new DataView(data.buffer, data.byteOffset, 4).getUint32(0, false);
      this.pos = 4;
    }
    if (this.state < RANS_L) {
      throw new DecodeError("initial state below normalization bound");
    }
  }

  decode(tables: CdfTable[]): Int8Array {
    const out = new Int8Array(tables.length);
    let x = this.state;
    let pos = this.pos;
    const data = this.data;
    for (let i = 0; i < tables.length; i++) {
      const table = tables[i];
      const low = x % PROB_SCALE;
      const idx = table.findSymbol(low);
      const lo = table.cdf[idx];
      const freq = table.cdf[idx + 1] - lo;
      x = freq * Math.floor(x / PROB_SCALE) + low - lo;
      while (x < RANS_L) {
        if (pos >= data.length) {
          throw new DecodeError("stream truncated mid-symbol");
        }
        x = x * 256 + data[pos];
        pos += 1;
      }
      out[i] = table.offset + idx;
    }
    this.state = x;
    this.pos = pos;
    return out;
  }

  finish(): void {
    if (this.state !== RANS_L) {
      throw new DecodeError("final state mismatch; stream corrupt or tables wrong");
    }
    if (this.pos !== this.data.length) {
      throw new DecodeError(`${this.data.length - this.pos} unconsumed trailing bytes`);
    }
  }
}

export function decodeSymbols(data: Uint8Array, tables: CdfTable[]): Int8Array {
  const dec = new RansDecoder(data);
  const out = dec.decode(tables);
  dec.finish();
  return out;
}
