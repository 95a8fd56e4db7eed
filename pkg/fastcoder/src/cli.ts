/** Batch bridge: reads one framed request from stdin, writes responses to stdout. */

import { handleRequest } from "./protocol.js";

async function readAll(stream: NodeJS.ReadStream): Promise<Uint8Array> {
  const chunks: Buffer[] = [];
  for await (const chunk of stream) {
    chunks.push(chunk as Buffer);
  }
  return new Uint8Array(Buffer.concat(chunks));
}

const request = await readAll(process.stdin);
try {
  const response = handleRequest(request);
  process.stdout.write(Buffer.from(response.buffer, response.byteOffset, response.length));
} catch (err) {
  process.stderr.write(`fastcoder: ${err instanceof Error ? err.message : err}\n`);
  process.exit(3);
}
