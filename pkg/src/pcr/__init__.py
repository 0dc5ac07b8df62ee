"""Progressive Compressed Records: fidelity-ordered storage for JPEG training data.

Progressive JPEGs are split into scans, scans of equal fidelity are grouped
together in a record file, and readers pull a single sequential prefix to
materialize the whole record at a chosen fidelity. Companion modules model
and simulate the resulting I/O throughput, score reconstruction fidelity
with MSSIM, and pick a scan group via gradient cosine similarity.
"""

from . import (autotune, container, decode, fidelity, jpeg_scan, perf_model,
               pipeline_sim, reader)
from .container import PcrIndex, PcrRecord, SampleMeta, encode_record, read_index, write_record
from .errors import PcrError
from .jpeg_scan import ScanMap, entropy_skip, parse_scans
from .reader import AssembledImage, FidelityRequest, assemble, iterate, open_record, read_prefix

__version__ = "0.1.0"

__all__ = [
    "autotune", "container", "decode", "fidelity", "jpeg_scan", "perf_model",
    "pipeline_sim", "reader",
    "PcrIndex", "PcrRecord", "SampleMeta", "encode_record", "read_index",
    "write_record", "PcrError", "ScanMap", "entropy_skip", "parse_scans",
    "AssembledImage", "FidelityRequest", "assemble", "iterate", "open_record",
    "read_prefix", "__version__",
]
