/**
 * Binary layout of a .pcr record file (all integers little-endian):
 *
 *   0   magic "PCR1"
 *   4   u16 format version (1)
 *   6   u16 flags
 *   8   u32 nImages
 *   12  u16 nGroups
 *   14  6 reserved bytes
 *   20  u32 CRC-32 over metadata block + index block
 *   24  metadata block: u32 self-inclusive length, then per image
 *       u64 sampleId, i32 label, u8 nScans, u16 nameLen, UTF-8 name
 *   ... index block: nGroups u64 group offsets, then the
 *       nGroups x nImages u32 length table (group-major)
 *   ... payload: scan groups 1..G
 */

export const MAGIC = "PCR1";
export const HEADER_SIZE = 24;
export const FORMAT_VERSION = 1;
export const META_ENTRY_SIZE = 15; // u64 + i32 + u8 + u16, before the name

export interface SampleMeta {
  sampleId: bigint;
  label: number;
  sourceName: string;
  nScans: number;
}

export interface PcrIndex {
  nImages: number;
  nGroups: number;
  groupOffsets: bigint[];
  /** group-major (nGroups * nImages) byte lengths */
  lengths: Uint32Array;
  metadataLen: number;
}

export class FormatError extends Error {}

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(buf: Uint8Array, seed = 0): number {
  let c = ~seed >>> 0;
  for (let i = 0; i < buf.length; i++) {
    c = CRC_TABLE[(c ^ buf[i]) & 0xff] ^ (c >>> 8);
  }
  return ~c >>> 0;
}

export interface ParsedHeader {
  nImages: number;
  nGroups: number;
  checksum: number;
}

export function parseHeader(buf: Buffer): ParsedHeader {
  if (buf.length < HEADER_SIZE) {
    throw new FormatError("file shorter than the fixed header");
  }
  if (buf.toString("latin1", 0, 4) !== MAGIC) {
    throw new FormatError("bad magic (not a PCR file)");
  }
  const version = buf.readUInt16LE(4);
  if (version !== FORMAT_VERSION) {
    throw new FormatError(`unsupported format version ${version}`);
  }
  return {
    nImages: buf.readUInt32LE(8),
    nGroups: buf.readUInt16LE(12),
    checksum: buf.readUInt32LE(20),
  };
}

export function parseMetadata(block: Buffer, nImages: number): SampleMeta[] {
  const metas: SampleMeta[] = [];
  let pos = 0;
  for (let i = 0; i < nImages; i++) {
    if (pos + META_ENTRY_SIZE > block.length) {
      throw new FormatError("metadata block shorter than declared entries");
    }
    const sampleId = block.readBigUInt64LE(pos);
    const label = block.readInt32LE(pos + 8);
    const nScans = block.readUInt8(pos + 12);
    const nameLen = block.readUInt16LE(pos + 13);
    pos += META_ENTRY_SIZE;
    if (pos + nameLen > block.length) {
      throw new FormatError("metadata name overruns block");
    }
    const sourceName = block.toString("utf8", pos, pos + nameLen);
    pos += nameLen;
    metas.push({ sampleId, label, sourceName, nScans });
  }
  if (pos !== block.length) {
    throw new FormatError("metadata block has trailing bytes");
  }
  return metas;
}

export function parseIndexBlock(
  block: Buffer,
  nImages: number,
  nGroups: number,
  metadataLen: number,
): PcrIndex {
  const offsets: bigint[] = [];
  for (let g = 0; g < nGroups; g++) {
    offsets.push(block.readBigUInt64LE(8 * g));
  }
  const lengths = new Uint32Array(nGroups * nImages);
  const base = 8 * nGroups;
  for (let i = 0; i < lengths.length; i++) {
    lengths[i] = block.readUInt32LE(base + 4 * i);
  }
  return { nImages, nGroups, groupOffsets: offsets, lengths, metadataLen };
}

export function indexNBytes(nImages: number, nGroups: number): number {
  return 8 * nGroups + 4 * nGroups * nImages;
}

export function groupSize(index: PcrIndex, g: number): number {
  let total = 0;
  const row = (g - 1) * index.nImages;
  for (let i = 0; i < index.nImages; i++) {
    total += index.lengths[row + i];
  }
  return total;
}
