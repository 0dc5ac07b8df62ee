export {
  DatasetHandle,
  DatasetImage,
  FidelityUnavailableError,
  open,
} from "./dataset.js";
export {
  FormatError,
  PcrIndex,
  SampleMeta,
  crc32,
  parseHeader,
} from "./format.js";
