"""Command-line surface tying the pipeline together.

Subcommands: ``inspect`` (stream structure and block-grid shapes), ``decode``
(frequency-domain tensor file or PPM image), ``bench-decode`` (partial vs
full decode throughput), ``infer`` (single-image detection), ``flops``
(static cost table), ``eval`` (mAP over JSONL files).

Exit codes: 0 success, 1 usage, 2 input/parse error, 3 unsupported feature.
With --json each command prints exactly one JSON document on stdout;
diagnostics go to stderr.  The DCTDET_THREADS environment variable caps
worker threads everywhere a command fans out per-image or per-class work.
"""

import argparse
import json
import os
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import zoo
from .codec import (
    JpegError,
    UnsupportedJpegError,
    full_decode,
    parse_markers,
    partial_decode,
    save_dct_tensor,
    _MARKER_NAMES,
)
from .detection import flatten_head_outputs, generate_priors, postprocess
from .evaluation import EvaluationError, evaluate_map
from .graph import GraphError, flop_count, load_weights, run_graph, seed_weights
from .transform import bilinear_resize

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_UNSUPPORTED = 3

_PLANE_NAMES = {1: ["Y"], 3: ["Y", "Cb", "Cr"]}


class UsageError(Exception):
    """Bad invocation detected after argument parsing (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; the CLI contract reserves
    # 2 for input/parse errors, so usage failures are remapped to 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _runs_int(text):
    value = int(text)
    if value < 2:
        raise argparse.ArgumentTypeError("at least 2 runs are required")
    return value


def _worker_cap():
    """Thread budget from DCTDET_THREADS; None means unset."""
    raw = os.environ.get("DCTDET_THREADS")
    if raw is None:
        return None
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"DCTDET_THREADS must be an integer, got {raw!r}")
    if value < 1:
        raise UsageError("DCTDET_THREADS must be at least 1")
    return value


def _load_bytes(path):
    with open(path, "rb") as f:
        return f.read()


def _parse_file(path, data):
    """parse_markers with the file name prepended to any stream error."""
    try:
        return parse_markers(data)
    except JpegError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def _emit(args, doc, text_lines):
    if getattr(args, "json", False):
        print(json.dumps(doc, indent=2))
    else:
        for line in text_lines:
            print(line)


# ---------------------------------------------------------------------------
# inspect


def _segment_list(data, structure):
    """Marker names/offsets from SOI through EOI (stream already validated)."""
    segs = [{"name": "SOI", "offset": 0}]
    pos = 2
    while pos < structure.entropy_offset:
        offset = pos
        while data[pos] == 0xFF:
            pos += 1
        marker = data[pos]
        pos += 1
        name = _MARKER_NAMES.get(marker, f"0x{marker:02X}")
        segs.append({"name": name, "offset": offset})
        if marker == 0xDA:
            break
        pos += (data[pos] << 8) | data[pos + 1]
    segs.append({"name": "EOI",
                 "offset": structure.entropy_offset + len(structure.entropy_data)})
    return segs


def _structure_report(path, data, structure):
    frame = structure.frame
    names = _PLANE_NAMES[len(frame.components)]
    scan_by_id = {c.component_id: c for c in structure.scan.components}
    components = []
    for comp, plane in zip(frame.components, names):
        from .codec import plane_grid
        bw, bh = plane_grid(frame.width, frame.height, comp.h, comp.v,
                            frame.h_max, frame.v_max)
        sc = scan_by_id[comp.component_id]
        components.append({
            "id": comp.component_id,
            "plane": plane,
            "h": comp.h,
            "v": comp.v,
            "quant_table": comp.quant_id,
            "dc_table": sc.dc_id,
            "ac_table": sc.ac_id,
            "blocks_wide": bw,
            "blocks_high": bh,
        })
    return {
        "file": path,
        "size_bytes": len(data),
        "width": frame.width,
        "height": frame.height,
        "precision": frame.precision,
        "num_components": len(frame.components),
        "sampling": frame.sampling,
        "restart_interval": structure.restart_interval,
        "markers": _segment_list(data, structure),
        "quant_tables": sorted(structure.quant_tables),
        "dc_tables": sorted(structure.dc_tables),
        "ac_tables": sorted(structure.ac_tables),
        "components": components,
    }


def cmd_inspect(args):
    data = _load_bytes(args.file)
    structure = _parse_file(args.file, data)
    report = _structure_report(args.file, data, structure)
    lines = [
        f"{args.file}: baseline JPEG, {report['width']}x{report['height']} px, "
        f"{report['precision']}-bit, {report['num_components']} component"
        f"{'s' if report['num_components'] != 1 else ''}, {report['sampling']}",
        "markers: " + " ".join(seg["name"] for seg in report["markers"]),
        "restart interval: " + (f"every {report['restart_interval']} MCUs"
                                if report["restart_interval"] else "none"),
        "quant tables: " + ", ".join(map(str, report["quant_tables"]))
        + "   huffman: DC " + ",".join(map(str, report["dc_tables"]))
        + " / AC " + ",".join(map(str, report["ac_tables"])),
    ]
    for comp in report["components"]:
        lines.append(
            f"{comp['plane']}: {comp['blocks_wide']}x{comp['blocks_high']} blocks "
            f"(sampling {comp['h']}x{comp['v']}, quant {comp['quant_table']}, "
            f"DC {comp['dc_table']}, AC {comp['ac_table']})")
    _emit(args, report, lines)
    return EXIT_OK


# ---------------------------------------------------------------------------
# decode


def _write_ppm(path, rgb):
    header = f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def cmd_decode(args):
    data = _load_bytes(args.file)
    if args.mode == "partial":
        try:
            image = partial_decode(data)
        except JpegError as exc:
            raise type(exc)(f"{args.file}: {exc}") from None
        save_dct_tensor(args.out, image.planes)
        names = _PLANE_NAMES[len(image.planes)]
        doc = {
            "file": args.file,
            "mode": "partial",
            "out": args.out,
            "width": image.width,
            "height": image.height,
            "sampling": image.sampling,
            "planes": [{"plane": name, "blocks_wide": p.blocks_wide,
                        "blocks_high": p.blocks_high}
                       for name, p in zip(names, image.planes)],
        }
        lines = [f"{args.file} -> {args.out} (DCTT, {len(image.planes)} plane"
                 f"{'s' if len(image.planes) != 1 else ''})"]
        lines += [f"  {d['plane']}: {d['blocks_wide']}x{d['blocks_high']} blocks"
                  for d in doc["planes"]]
    else:
        try:
            rgb = full_decode(data)
        except JpegError as exc:
            raise type(exc)(f"{args.file}: {exc}") from None
        _write_ppm(args.out, rgb)
        doc = {
            "file": args.file,
            "mode": "full",
            "out": args.out,
            "width": rgb.shape[1],
            "height": rgb.shape[0],
        }
        lines = [f"{args.file} -> {args.out} "
                 f"(PPM P6, {rgb.shape[1]}x{rgb.shape[0]})"]
    _emit(args, doc, lines)
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench-decode


def _corpus_files(directory):
    try:
        entries = sorted(os.listdir(directory))
    except OSError as exc:
        raise type(exc)(exc.errno, f"{directory}: {exc.strerror}") from None
    files = [os.path.join(directory, e) for e in entries
             if e.lower().endswith((".jpg", ".jpeg"))]
    if not files:
        raise ValueError(f"{directory}: no .jpg/.jpeg files found")
    return files


def cmd_bench_decode(args):
    files = _corpus_files(args.corpus)
    blobs = []
    images = []
    for path in files:
        data = _load_bytes(path)
        structure = _parse_file(path, data)
        blobs.append(data)
        images.append({"file": os.path.basename(path),
                       "width": structure.frame.width,
                       "height": structure.frame.height})

    # identical file sequence for both modes, bytes preloaded above so the
    # timings isolate compute
    sequence = [blobs[i % len(blobs)] for i in range(args.per_run)]
    # sequential by default: thread fan-out overlaps the two paths unevenly
    # (vector stages release the GIL, entropy decoding holds it), which would
    # measure contention instead of per-image decode work
    cap = _worker_cap()
    workers = min(args.batch, cap) if cap else 1

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        def run_once(fn):
            start = time.perf_counter()
            if pool is None:
                for blob in sequence:
                    fn(blob)
            else:
                for i in range(0, len(sequence), args.batch):
                    for _ in pool.map(fn, sequence[i:i + args.batch]):
                        pass
            return time.perf_counter() - start

        mode_stats = {}
        totals = {}
        for mode, fn in (("partial_dct", partial_decode),
                         ("full_rgb", full_decode)):
            run_once(fn)  # warmup, excluded from the statistics
            seconds = [run_once(fn) for _ in range(args.runs)]
            ips = [args.per_run / s for s in seconds]
            mode_stats[mode] = {
                "run_seconds": seconds,
                "images_per_sec_mean": statistics.mean(ips),
                "images_per_sec_std": statistics.stdev(ips),
            }
            totals[mode] = sum(seconds)
    finally:
        if pool is not None:
            pool.shutdown()

    report = {
        "corpus": {
            "directory": args.corpus,
            "file_count": len(files),
            "total_bytes": sum(len(b) for b in blobs),
            "images": images,
        },
        "config": {
            "runs": args.runs,
            "batch": args.batch,
            "per_run": args.per_run,
            "warmup_runs": 1,
            "workers": workers,
        },
        "modes": mode_stats,
        "speedup_ratio": totals["full_rgb"] / totals["partial_dct"],
    }
    print(json.dumps(report, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# infer


def _class_names(args, num_default=21):
    if args.classes:
        with open(args.classes, "r", encoding="utf-8") as f:
            names = [line.strip() for line in f if line.strip()]
        if not names:
            raise ValueError(f"{args.classes}: no class names found")
        return names
    return [f"class_{i:02d}" for i in range(1, num_default)]


def _centered_offset(extent, target):
    return (extent - target) // 2


def _prepare_inputs(path, data, model):
    """Decode the file into the model's input tensors.

    Returns (inputs, region) where region = (x0, y0, x1, y1) in original
    pixels, the area of the image the tensors cover; detection boxes in
    [0, 1] map onto it.
    """
    specs = model.input_specs
    if "rgb" in specs:
        rgb = full_decode(data)
        th, tw, _ = specs["rgb"]
        resized = bilinear_resize(rgb.astype(np.float64), th, tw)
        h, w = rgb.shape[:2]
        return {"rgb": resized.astype(np.float32)}, (0.0, 0.0, float(w), float(h))

    image = partial_decode(data)
    ty, tx = specs["y"][:2]
    yp = image.y
    if yp.blocks_high < ty or yp.blocks_wide < tx:
        raise ValueError(
            f"{path}: Y plane is {yp.blocks_wide}x{yp.blocks_high} blocks; "
            f"architecture {model.architecture!r} needs at least {tx}x{ty}")

    chroma_key = "cbcr" if "cbcr" in specs else ("cb" if "cb" in specs else None)
    if chroma_key is None:
        # luma-only: center crop on the Y grid alone
        oy = _centered_offset(yp.blocks_high, ty)
        ox = _centered_offset(yp.blocks_wide, tx)
        inputs = {"y": yp.blocks[oy:oy + ty, ox:ox + tx, :]}
    else:
        if image.sampling != "4:2:0" or image.cb is None:
            raise ValueError(
                f"{path}: architecture {model.architecture!r} consumes 4:2:0 "
                f"chroma planes; this file is {image.sampling}")
        tc_h, tc_w = specs[chroma_key][:2]
        cb, cr = image.cb, image.cr
        if cb.blocks_high < tc_h or cb.blocks_wide < tc_w:
            raise ValueError(
                f"{path}: chroma planes are {cb.blocks_wide}x{cb.blocks_high} "
                f"blocks; architecture {model.architecture!r} needs at least "
                f"{tc_w}x{tc_h}")
        # crop the chroma grid centered, then pin the luma crop to twice the
        # chroma offset so both cover the same pixels
        ocy = _centered_offset(cb.blocks_high, tc_h)
        ocx = _centered_offset(cb.blocks_wide, tc_w)
        oy, ox = 2 * ocy, 2 * ocx
        cb_crop = cb.blocks[ocy:ocy + tc_h, ocx:ocx + tc_w, :]
        cr_crop = cr.blocks[ocy:ocy + tc_h, ocx:ocx + tc_w, :]
        inputs = {"y": yp.blocks[oy:oy + ty, ox:ox + tx, :]}
        if chroma_key == "cbcr":
            inputs["cbcr"] = np.concatenate([cb_crop, cr_crop], axis=-1)
        else:
            inputs["cb"] = cb_crop
            inputs["cr"] = cr_crop

    x0, y0 = ox * 8.0, oy * 8.0
    x1 = min(x0 + tx * 8.0, float(image.width))
    y1 = min(y0 + ty * 8.0, float(image.height))
    return inputs, (x0, y0, x1, y1)


def cmd_infer(args):
    names = _class_names(args)
    num_classes = len(names) + 1
    model = zoo.build(args.arch, num_classes=num_classes)
    if args.weights:
        weights = load_weights(args.weights)
    else:
        weights = seed_weights(model.graph, args.seed)

    data = _load_bytes(args.file)
    try:
        inputs, region = _prepare_inputs(args.file, data, model)
    except JpegError as exc:
        raise type(exc)(f"{args.file}: {exc}") from None

    outputs = run_graph(model.graph, weights, inputs)
    geometry = zoo.head_geometry(model)
    loc_maps = [outputs[f"head{i}_loc"] for i in range(1, len(geometry) + 1)]
    conf_maps = [outputs[f"head{i}_conf"] for i in range(1, len(geometry) + 1)]
    loc, logits = flatten_head_outputs(geometry, loc_maps, conf_maps,
                                       num_classes)
    priors = generate_priors(geometry)
    result = postprocess(loc, logits, priors,
                         score_threshold=args.score_thr,
                         iou_threshold=args.iou_thr,
                         top_k=args.top_k,
                         max_total=args.max_total,
                         workers=_worker_cap() or 1)

    x0, y0, x1, y1 = region
    image_name = os.path.basename(args.file)
    records = []
    for det in result.detections:
        bx0, by0, bx1, by1 = det.box
        records.append({
            "image": image_name,
            "class": names[det.class_id - 1],
            "score": float(det.score),
            "bbox": [x0 + bx0 * (x1 - x0), y0 + by0 * (y1 - y0),
                     x0 + bx1 * (x1 - x0), y0 + by1 * (y1 - y0)],
        })

    lines = [json.dumps(r) for r in records]
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            for line in lines:
                f.write(line + "\n")
    if args.json:
        doc = {
            "file": args.file,
            "image": image_name,
            "arch": args.arch,
            "num_detections": len(records),
            "degenerate_dropped": result.degenerate_dropped,
            "detections": records,
        }
        print(json.dumps(doc, indent=2))
    elif not args.out:
        for line in lines:
            print(line)
    return EXIT_OK


# ---------------------------------------------------------------------------
# flops


def _flops_row(arch):
    model = zoo.build(arch)
    counts = flop_count(model.graph)
    row = {
        "architecture": arch,
        "kind": "detector" if arch in zoo.DETECTOR_IDS else "backbone",
        "input_elements": zoo.input_element_count(model),
        "total_macs": counts["total_macs"],
        "total_elementwise": counts["total_elementwise"],
    }
    if row["kind"] == "detector":
        row["priors"] = zoo.num_priors(model)
    return row


def cmd_flops(args):
    ids = list(zoo.ARCHITECTURE_IDS) if args.all else [args.arch]
    rows = [_flops_row(arch) for arch in ids]
    doc = {"architectures": rows}
    width = max(len(r["architecture"]) for r in rows)
    lines = [f"{'architecture':<{width}}  {'kind':<8} {'input_elems':>12} "
             f"{'total_macs':>16} {'priors':>7}"]
    for r in rows:
        priors = str(r.get("priors", "-"))
        lines.append(f"{r['architecture']:<{width}}  {r['kind']:<8} "
                     f"{r['input_elements']:>12} {r['total_macs']:>16} "
                     f"{priors:>7}")
    _emit(args, doc, lines)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args):
    report = evaluate_map(args.detections, args.ground_truth,
                          mode=args.mode, iou_threshold=args.iou_thr)
    lines = [f"mode {report['mode']}, "
             + (f"IoU {report['iou_threshold']}, " if report["iou_threshold"]
                is not None else "")
             + f"{report['num_images']} images"]
    for cls, entry in report["classes"].items():
        flag = "  [no ground truth]" if entry["zero_ground_truth"] else ""
        lines.append(f"{cls}: AP {entry['ap']:.6f} "
                     f"(gt {entry['num_gt']}, dets {entry['num_detections']})"
                     f"{flag}")
    lines.append(f"mAP {report['map']:.6f}")
    _emit(args, report, lines)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and entry point


def _build_parser():
    parser = _Parser(prog="dctdet",
                     description="JPEG DCT-domain detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="command")

    p = sub.add_parser("inspect", help="report JPEG structure and block grids")
    p.add_argument("file")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("decode",
                       help="decode to a DCTT tensor file or a PPM image")
    p.add_argument("file")
    p.add_argument("--mode", choices=("partial", "full"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("bench-decode",
                       help="time partial vs full decode over a corpus")
    p.add_argument("corpus", help="directory of .jpg/.jpeg files")
    p.add_argument("--runs", type=_runs_int, default=10)
    p.add_argument("--batch", type=_positive_int, default=8)
    p.add_argument("--per-run", type=_positive_int, default=200,
                   dest="per_run")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench_decode)

    p = sub.add_parser("infer", help="run detection on one JPEG")
    p.add_argument("file")
    p.add_argument("--arch", required=True, choices=zoo.DETECTOR_IDS)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--weights", help="WTS1 weight file")
    group.add_argument("--seed", type=int, help="seed for random weights")
    p.add_argument("--score-thr", type=float, default=0.01, dest="score_thr")
    p.add_argument("--iou-thr", type=float, default=0.45, dest="iou_thr")
    p.add_argument("--top-k", type=_positive_int, default=200, dest="top_k")
    p.add_argument("--max-total", type=_positive_int, default=200,
                   dest="max_total")
    p.add_argument("--classes", help="file with one class name per line")
    p.add_argument("--out", help="write detections JSONL here instead of stdout")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("flops", help="static cost table per architecture")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--arch", choices=zoo.ARCHITECTURE_IDS)
    group.add_argument("--all", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("eval", help="mean average precision over JSONL files")
    p.add_argument("detections")
    p.add_argument("ground_truth")
    p.add_argument("--mode", choices=("voc11", "area", "coco"),
                   default="voc11")
    p.add_argument("--iou-thr", type=float, default=0.5, dest="iou_thr")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"dctdet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnsupportedJpegError as exc:
        print(f"dctdet: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except (JpegError, EvaluationError, GraphError, OSError, ValueError) as exc:
        print(f"dctdet: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
