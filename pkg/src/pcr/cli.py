"""Command-line interface: encode, inspect, extract, stats, bench, simulate,
sweep, mssim, and autotune subcommands.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

import argparse
import json
import os
import shlex
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import autotune, container, decode, fidelity, perf_model, pipeline_sim
from .errors import NotProgressive, PcrError
from .jpeg_scan import parse_scans
from .reader import FidelityRequest, iterate

USAGE_ERROR = 1
DATA_ERROR = 2

JPEG_SUFFIXES = (".jpg", ".jpeg", ".JPG", ".JPEG")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _gather_inputs(input_dir: Path) -> list[tuple[Path, int]]:
    """(path, label) pairs: from a labels.tsv manifest, or subdirectory names."""
    manifest = input_dir / "labels.tsv"
    if manifest.is_file():
        pairs = []
        for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                rel, label = line.split("\t")
                pairs.append((input_dir / rel, int(label)))
            except ValueError:
                raise PcrError(f"{manifest}:{lineno}: expected path<TAB>label")
        return pairs

    files = sorted(p for p in input_dir.rglob("*") if p.suffix in JPEG_SUFFIXES)
    if not files:
        raise PcrError(f"no JPEG files under {input_dir}")
    class_names = sorted({f.relative_to(input_dir).parts[0]
                          for f in files if len(f.relative_to(input_dir).parts) > 1})
    class_ids = {name: i for i, name in enumerate(class_names)}
    pairs = []
    for f in files:
        parts = f.relative_to(input_dir).parts
        label = class_ids[parts[0]] if len(parts) > 1 else -1
        pairs.append((f, label))
    return pairs


def _transcode(transcoder: str, path: Path) -> bytes:
    cmd = shlex.split(transcoder) + [str(path)]
    proc = subprocess.run(cmd, capture_output=True)
    if proc.returncode != 0:
        raise PcrError(f"transcoder failed on {path}: {proc.stderr.decode().strip()}")
    return proc.stdout


def _load_one(path: Path, transcoder: str | None) -> bytes:
    data = path.read_bytes()
    try:
        parse_scans(data)
        return data
    except NotProgressive:
        if not transcoder:
            raise
        data = _transcode(transcoder, path)
        parse_scans(data)
        return data


def cmd_encode(args) -> int:
    input_dir = Path(args.input)
    output_dir = Path(args.output)
    output_dir.mkdir(parents=True, exist_ok=True)
    transcoder = args.transcoder or os.environ.get("PCR_TRANSCODER")

    pairs = _gather_inputs(input_dir)
    failures: list[str] = []
    loaded: list[tuple[bytes, container.SampleMeta]] = []

    def load(item):
        i, (path, label) = item
        name = str(path.relative_to(input_dir))
        try:
            data = _load_one(path, transcoder)
            return i, (data, container.SampleMeta(i, label, name)), None
        except Exception as exc:
            return i, None, f"{name}: {exc}"

    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        for _, entry, err in pool.map(load, enumerate(pairs)):
            if err:
                failures.append(err)
            else:
                loaded.append(entry)

    total_in = 0
    total_payload = 0
    manifest = {"records": [], "n_groups": args.groups}
    for r, start in enumerate(range(0, len(loaded), args.images_per_record)):
        batch = loaded[start:start + args.images_per_record]
        record = container.encode_record(batch, n_groups=args.groups)
        out_path = output_dir / f"record-{r:05d}.pcr"
        with open(out_path, "wb") as f:
            container.write_record(record, f)
        total_in += sum(len(d) for d, _ in batch)
        total_payload += record.index.payload_nbytes
        manifest["records"].append({
            "file": out_path.name,
            "n_images": record.n_images,
            "images": [{"sample_id": m.sample_id, "label": m.label,
                        "source": m.source_name, "n_scans": m.n_scans}
                       for m in record.metadata],
        })
    manifest["n_images"] = sum(r["n_images"] for r in manifest["records"])
    (output_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))

    n_records = len(manifest["records"])
    print(f"encoded {manifest['n_images']} images into {n_records} records "
          f"({args.groups} scan groups)")
    print(f"payload bytes {total_payload} == input bytes {total_in}: "
          f"{'yes' if total_payload == total_in else 'NO'}")
    if failures:
        print(f"{len(failures)} images failed:", file=sys.stderr)
        for f in failures:
            print(f"  {f}", file=sys.stderr)
        return DATA_ERROR
    if total_payload != total_in:
        return DATA_ERROR
    return 0


def cmd_inspect(args) -> int:
    with open(args.file, "rb") as f:
        index, metas = container.read_index(f)
    sizes = [index.group_size(g) for g in range(1, index.n_groups + 1)]
    cum = index.cumulative_image_sizes()
    print(f"{args.file}: {index.n_images} images, {index.n_groups} scan groups")
    print(f"metadata {index.metadata_len} B, index {index.index_nbytes} B, "
          f"payload {index.payload_nbytes} B, file {index.file_nbytes} B")
    print(f"{'group':>5} {'bytes':>12} {'cum_mean_bytes':>15}")
    for g in range(1, index.n_groups + 1):
        print(f"{g:>5} {sizes[g - 1]:>12} {cum[g - 1].mean():>15.1f}")
    if args.csv:
        import csv as _csv
        with open(args.csv, "w", newline="") as f:
            w = _csv.writer(f)
            w.writerow(["group", "group_bytes", "cumulative_mean_bytes"])
            for g in range(1, index.n_groups + 1):
                w.writerow([g, sizes[g - 1], f"{cum[g - 1].mean():.10g}"])
    return 0


def _safe_name(meta: container.SampleMeta) -> str:
    base = Path(meta.source_name).name or f"image-{meta.sample_id}.jpg"
    return f"{meta.sample_id:08d}-{base}"


def cmd_extract(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for img in iterate(args.file, FidelityRequest(args.group)):
        (out_dir / _safe_name(img.meta)).write_bytes(img.jpeg_bytes)
        count += 1
    print(f"extracted {count} images at scan group {args.group} to {out_dir}")
    return 0


def cmd_stats(args) -> int:
    stats = perf_model.collect_stats(args.dataset)
    if args.out:
        with open(args.out, "w", newline="") as f:
            perf_model.stats_to_csv(stats, f)
    else:
        perf_model.stats_to_csv(stats, sys.stdout)
    return 0


def cmd_bench(args) -> int:
    req = FidelityRequest(args.group)
    if args.mode == "read":
        t0 = time.perf_counter()
        nbytes = 0
        count = 0
        for img in iterate(args.dataset, req):
            nbytes += len(img.jpeg_bytes)
            count += 1
        dt = time.perf_counter() - t0
        print(f"read {count} images, {nbytes / 2**20:.1f} MiB in {dt:.3f} s "
              f"= {nbytes / 2**20 / dt:.1f} MiB/s, {count / dt:.1f} images/s")
        return 0

    # decode benchmark: single-thread rate over at least --min-images decodes
    payloads = [img.jpeg_bytes for img in iterate(args.dataset, req)]
    if not payloads:
        raise PcrError("no images in dataset")
    todo = []
    while len(todo) < args.min_images:
        todo.extend(payloads)

    def work(chunk):
        for p in chunk:
            decode.to_rgb(p)

    t0 = time.perf_counter()
    if args.threads == 1:
        work(todo)
    else:
        chunks = [todo[i::args.threads] for i in range(args.threads)]
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            list(pool.map(work, chunks))
    dt = time.perf_counter() - t0
    print(f"decoded {len(todo)} images at scan group {args.group} with "
          f"{args.threads} thread(s) in {dt:.2f} s = {len(todo) / dt:.1f} images/s")
    return 0


def cmd_simulate(args) -> int:
    config, _ = pipeline_sim.parse_config_file(args.config)
    trace = pipeline_sim.simulate(config)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        trace.to_csv(out)
    finally:
        if args.out:
            out.close()
    print(f"steady-state {trace.throughput_images_per_s():.2f} images/s, "
          f"stall fraction {trace.stall_fraction:.4f}", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    config, axes = pipeline_sim.parse_config_file(args.config)
    if "bandwidths" not in axes or "scan_groups" not in axes:
        raise PcrError("sweep config needs bandwidths= and scan_groups=")
    cells, errors = pipeline_sim.sweep(config, axes["bandwidths"], axes["scan_groups"])
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        pipeline_sim.sweep_to_csv(cells, out)
    finally:
        if args.out:
            out.close()
    for e in errors:
        print(f"cell failed: {e}", file=sys.stderr)
    return DATA_ERROR if errors else 0


def cmd_mssim(args) -> int:
    rep = fidelity.report(args.dataset, max_images=args.max_images)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        fidelity.report_to_csv(rep, out)
    finally:
        if args.out:
            out.close()
    if rep.n_failures:
        print(f"{rep.n_failures} decode failures excluded", file=sys.stderr)
    return 0


def cmd_autotune(args) -> int:
    policy = autotune.TunePolicy(
        threshold=args.threshold, warmup_epochs=args.warmup,
        tune_interval_epochs=args.interval, batch_budget=args.budget,
        n_trials=args.trials, seed=args.seed)
    labels = autotune.corpus_labels(args.dataset)
    n_classes = int(labels.max()) + 1 if labels.size else 1
    model = autotune.GradModel.zeros(max(n_classes, 2))
    tuner = autotune.Tuner(args.dataset, model, policy)
    if args.pretrain_steps:
        rng = np.random.default_rng(args.seed)
        idx, lab = tuner._trial_batch(rng)
        feats = np.stack([tuner._features(*tuner._catalog[i][:2], tuner.n_groups)
                          for i in idx])
        tuner.model = autotune.pretrain(model, feats, lab, steps=args.pretrain_steps)
    for epoch in range(args.epochs):
        choice = tuner.choose(epoch)
        print(f"epoch {epoch}: scan group {choice}")
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        autotune.decisions_to_csv(tuner, out)
    finally:
        if args.out:
            out.close()
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="pcr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", parents=[], help="encode JPEGs into PCR records")
    enc.add_argument("--input", required=True, help="directory of progressive JPEGs")
    enc.add_argument("--output", required=True, help="directory for .pcr records")
    enc.add_argument("--images-per-record", dest="images_per_record", type=int,
                     default=1024)
    enc.add_argument("--groups", type=int, default=10, help="scan groups per record")
    enc.add_argument("--transcoder",
                     help="command run as '<transcoder> <file>' emitting a "
                          "progressive JPEG on stdout (or set PCR_TRANSCODER)")
    enc.add_argument("--threads", type=int, default=1)
    enc.set_defaults(func=cmd_encode)

    ins = sub.add_parser("inspect", help="show a record's index and group sizes")
    ins.add_argument("file")
    ins.add_argument("--csv", help="also dump group sizes to a CSV file")
    ins.set_defaults(func=cmd_inspect)

    ext = sub.add_parser("extract", help="write JPEGs at a chosen fidelity")
    ext.add_argument("file", help=".pcr file or directory")
    ext.add_argument("--group", type=int, required=True)
    ext.add_argument("--out", required=True)
    ext.set_defaults(func=cmd_extract)

    st = sub.add_parser("stats", help="cumulative size stats from record indexes")
    st.add_argument("--dataset", required=True)
    st.add_argument("--out")
    st.set_defaults(func=cmd_stats)

    be = sub.add_parser("bench", help="decode-rate / read-rate benchmarks")
    be_sub = be.add_subparsers(dest="mode", required=True)
    for mode in ("decode", "read"):
        bm = be_sub.add_parser(mode)
        bm.add_argument("--dataset", required=True)
        bm.add_argument("--group", type=int, required=True)
        bm.add_argument("--threads", type=int, default=1)
        bm.add_argument("--min-images", dest="min_images", type=int, default=1000)
        bm.set_defaults(func=cmd_bench, mode=mode)

    si = sub.add_parser("simulate", help="token-bucket pipeline simulation")
    si.add_argument("--config", required=True)
    si.add_argument("--out")
    si.set_defaults(func=cmd_simulate)

    sw = sub.add_parser("sweep", help="bandwidth x scan-group simulation grid")
    sw.add_argument("--config", required=True)
    sw.add_argument("--out")
    sw.set_defaults(func=cmd_sweep)

    ms = sub.add_parser("mssim", help="per-group MSSIM report")
    ms.add_argument("--dataset", required=True)
    ms.add_argument("--out")
    ms.add_argument("--max-images", dest="max_images", type=int)
    ms.set_defaults(func=cmd_mssim)

    au = sub.add_parser("autotune", help="gradient-similarity scan-group tuning")
    au.add_argument("--dataset", required=True)
    au.add_argument("--threshold", type=float, default=0.8)
    au.add_argument("--epochs", type=int, default=30)
    au.add_argument("--warmup", type=int, default=5)
    au.add_argument("--interval", type=int, default=20)
    au.add_argument("--budget", type=int, default=2560)
    au.add_argument("--trials", type=int, default=3)
    au.add_argument("--seed", type=int, default=0)
    au.add_argument("--pretrain-steps", dest="pretrain_steps", type=int, default=5)
    au.add_argument("--out")
    au.set_defaults(func=cmd_autotune)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PcrError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"pcr: error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
