import { promises as fs } from "node:fs";
import * as path from "node:path";

import {
  FormatError,
  HEADER_SIZE,
  PcrIndex,
  SampleMeta,
  crc32,
  groupSize,
  indexNBytes,
  parseHeader,
  parseIndexBlock,
  parseMetadata,
} from "./format.js";

const EOI = Buffer.from([0xff, 0xd9]);

export interface DatasetImage {
  label: number;
  bytes: Uint8Array;
  sampleId: bigint;
  sourceName: string;
}

export class FidelityUnavailableError extends Error {}

async function readExact(
  handle: fs.FileHandle,
  size: number,
  position: number,
  what: string,
): Promise<Buffer> {
  const buf = Buffer.allocUnsafe(size);
  const { bytesRead } = await handle.read(buf, 0, size, position);
  if (bytesRead !== size) {
    throw new FormatError(`short read while loading ${what}`);
  }
  return buf;
}

interface RecordPrefix {
  index: PcrIndex;
  metas: SampleMeta[];
  groups: Buffer[]; // groups[k] holds scan group k+1
}

async function readRecordPrefix(file: string, scanGroup: number): Promise<RecordPrefix> {
  const handle = await fs.open(file, "r");
  try {
    const header = parseHeader(await readExact(handle, HEADER_SIZE, 0, "header"));
    const lenPrefix = await readExact(handle, 4, HEADER_SIZE, "metadata length");
    const metadataLen = lenPrefix.readUInt32LE(0);
    const metaBlock = await readExact(
      handle, metadataLen - 4, HEADER_SIZE + 4, "metadata block");
    const idxBytes = indexNBytes(header.nImages, header.nGroups);
    const indexBlock = await readExact(
      handle, idxBytes, HEADER_SIZE + metadataLen, "index block");
    const crc = crc32(indexBlock, crc32(metaBlock, crc32(lenPrefix)));
    if (crc !== header.checksum) {
      throw new FormatError(`${file}: metadata/index checksum mismatch`);
    }
    const metas = parseMetadata(metaBlock, header.nImages);
    const index = parseIndexBlock(indexBlock, header.nImages, header.nGroups, metadataLen);
    if (scanGroup > index.nGroups) {
      throw new FidelityUnavailableError(
        `${file}: requested scan group ${scanGroup} but record has ${index.nGroups}`);
    }
    const groups: Buffer[] = [];
    let position = HEADER_SIZE + metadataLen + idxBytes;
    for (let g = 1; g <= scanGroup; g++) {
      const size = groupSize(index, g);
      groups.push(await readExact(handle, size, position, `scan group ${g}`));
      position += size;
    }
    return { index, metas, groups };
  } finally {
    await handle.close();
  }
}

function assembleImage(prefix: RecordPrefix, imageI: number, scanGroup: number): Buffer {
  const { index, groups } = prefix;
  const parts: Buffer[] = [];
  let total = 0;
  for (let g = 1; g <= scanGroup; g++) {
    let offset = 0;
    const row = (g - 1) * index.nImages;
    for (let i = 0; i < imageI; i++) {
      offset += index.lengths[row + i];
    }
    const len = index.lengths[row + imageI];
    if (len > 0) {
      parts.push(groups[g - 1].subarray(offset, offset + len)); // view, no copy
      total += len;
    }
  }
  if (total === 0) {
    throw new FormatError(`image ${imageI} has no bytes in scan group 1`);
  }
  const last = parts[parts.length - 1];
  const hasEoi =
    total >= 2 && last[last.length - 2] === 0xff && last[last.length - 1] === 0xd9;
  if (!hasEoi) {
    parts.push(EOI);
    total += 2;
  }
  return Buffer.concat(parts, total); // the single per-image copy
}

/** Deterministic PRNG for optional record-order shuffling. */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export class DatasetHandle {
  /** Total bytes copied across the boundary; exactly one copy per image. */
  copiedBytes = 0;

  private scanGroup: number;

  constructor(
    private readonly recordFiles: string[],
    scanGroup: number,
    private readonly shuffleSeed?: number,
  ) {
    if (scanGroup < 0) throw new RangeError("scanGroup must be >= 0");
    this.scanGroup = scanGroup;
  }

  /** Fidelity for the NEXT pass; an in-flight iteration is unaffected. */
  setScanGroup(g: number): this {
    if (g < 0) throw new RangeError("scanGroup must be >= 0");
    this.scanGroup = g;
    return this;
  }

  get currentScanGroup(): number {
    return this.scanGroup;
  }

  private passOrder(): string[] {
    const files = [...this.recordFiles];
    if (this.shuffleSeed !== undefined) {
      const rand = mulberry32(this.shuffleSeed);
      for (let i = files.length - 1; i > 0; i--) {
        const j = Math.floor(rand() * (i + 1));
        [files[i], files[j]] = [files[j], files[i]];
      }
    }
    return files;
  }

  async *iterate(): AsyncGenerator<DatasetImage, void, void> {
    const g = this.scanGroup; // fixed for the whole pass
    for (const file of this.passOrder()) {
      const prefix = await readRecordPrefix(file, g);
      for (let i = 0; i < prefix.index.nImages; i++) {
        const meta = prefix.metas[i];
        let bytes: Uint8Array;
        if (g === 0) {
          bytes = new Uint8Array(0); // labels only
        } else {
          bytes = assembleImage(prefix, i, g);
          this.copiedBytes += bytes.length;
        }
        yield {
          label: meta.label,
          bytes,
          sampleId: meta.sampleId,
          sourceName: meta.sourceName,
        };
      }
    }
  }
}

export async function open(
  datasetPath: string,
  scanGroup: number,
  options: { shuffleSeed?: number } = {},
): Promise<DatasetHandle> {
  const stat = await fs.stat(datasetPath);
  let files: string[];
  if (stat.isDirectory()) {
    const entries = await fs.readdir(datasetPath);
    files = entries
      .filter((e) => e.endsWith(".pcr"))
      .sort()
      .map((e) => path.join(datasetPath, e));
    if (files.length === 0) {
      throw new FormatError(`no .pcr files under ${datasetPath}`);
    }
  } else {
    files = [datasetPath];
  }
  return new DatasetHandle(files, scanGroup, options.shuffleSeed);
}
