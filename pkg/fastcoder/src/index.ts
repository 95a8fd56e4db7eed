export {
  CdfTable,
  CoderError,
  DecodeError,
  EncodeError,
  PROB_BITS,
  PROB_SCALE,
  RANS_L,
  RansDecoder,
  TABLE_BYTES,
  TableError,
  decodeSymbols,
  encodeSymbols,
} from "./rans.js";
export { OP_DECODE, OP_ENCODE, handleRequest } from "./protocol.js";
