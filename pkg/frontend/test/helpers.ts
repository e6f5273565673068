import { readFileSync } from "node:fs";
import { inflateSync } from "node:zlib";

import { decodePng, DecodedImage, Inflate } from "../src/png.js";

export const nodeInflate: Inflate = async (data) => new Uint8Array(inflateSync(data));

export async function decodeFile(path: string): Promise<DecodedImage> {
  return decodePng(new Uint8Array(readFileSync(path)), nodeInflate);
}
