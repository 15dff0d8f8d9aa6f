"""Command-line entry point: ``spxpool <subcommand> ...``.

Exit status is 0 on success, 1 on usage errors and 2 on data or format
errors. Diagnostics go to stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import bench, metrics, netgraph
from .errors import SpxError
from .io import load_image, read_array, read_tensor, write_array, write_tensor
from .pooling import pool_forward, pool_forward_parallel, unpool_broadcast
from .superpixels import SlicParams, block_segment, slic_segment
from .tensor import LabelMap, PooledFeatures

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_help()}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _csv_out():
    return csv.writer(sys.stdout, lineterminator="\n")


def cmd_info(args):
    arr = read_array(args.file)
    kind = "f32" if arr.dtype.kind == "f" else "i32"
    print(f"dtype: {kind}")
    print(f"dims: {' '.join(str(d) for d in arr.shape)}")
    if arr.size:
        print(f"min: {arr.min()}")
        print(f"max: {arr.max()}")


def cmd_segment(args):
    img = load_image(args.input)
    if args.method == "block":
        seg = block_segment(img.shape, args.k)
    else:
        seg = slic_segment(img, SlicParams(args.k, args.compactness, args.iters))
    write_tensor(seg, args.out)
    print(f"{seg.num_labels} superpixels over {img.shape}", file=sys.stderr)


def cmd_pool(args):
    img = load_image(args.img)
    seg = read_tensor(args.seg, expect=LabelMap)
    if args.parallel:
        pooled, cache = pool_forward_parallel(img, seg, args.mode, args.cell_edge)
    else:
        pooled, cache = pool_forward(img, seg, args.mode)
    write_tensor(pooled, args.out)
    if args.cache:
        write_array(cache.argmax if cache.mode == "max" else cache.counts, args.cache)


def cmd_unpool(args):
    pooled = read_tensor(args.pooled, expect=PooledFeatures)
    seg = read_tensor(args.seg, expect=LabelMap)
    write_tensor(unpool_broadcast(pooled, seg), args.out)


def _class_map(path) -> np.ndarray:
    """Integer label files are used as-is; float score files are arg-maxed over channels."""
    arr = read_array(path)
    if arr.dtype.kind == "f":
        return arr.argmax(axis=0).reshape(-1)
    return arr.reshape(-1)


def cmd_eval(args):
    pred, truth = _class_map(args.pred), _class_map(args.truth)
    score = metrics.dice if args.metric == "dice" else metrics.iou
    result = score(pred, truth, args.classes)
    out = _csv_out()
    out.writerow(["class", args.metric])
    for c, v in enumerate(result.per_class):
        out.writerow([c, "" if np.isnan(v) else f"{v:.6f}"])
    out.writerow(["mean", f"{result.mean:.6f}"])


def cmd_oracle(args):
    seg = read_tensor(args.seg, expect=LabelMap)
    truth = _class_map(args.truth)
    labels = metrics.oracle_labels(seg, truth)
    d = metrics.dice(labels, truth, args.classes)
    j = metrics.iou(labels, truth, args.classes)
    out = _csv_out()
    out.writerow(["class", "dice", "iou"])
    fmt = lambda v: "" if np.isnan(v) else f"{v:.6f}"
    for c in range(args.classes):
        out.writerow([c, fmt(d.per_class[c]), fmt(j.per_class[c])])
    out.writerow(["mean", fmt(d.mean), fmt(j.mean)])


def cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.instances):
        head, x, seg, targets = netgraph.random_instance(rng, args.topology, args.mode)
        worst = max(worst, netgraph.gradcheck(head, x, seg, targets))
    print(f"{worst:.3e}")


def cmd_toytrain(args):
    data = netgraph.make_toy_dataset(args.images, seed=args.seed, noise=args.noise)
    channels = data[0][0].channels
    head = netgraph.SegHead.init(args.topology, channels, 2, args.mode, seed=args.seed)
    result = netgraph.train_toy(head, data, args.steps, args.lr)
    out = _csv_out()
    out.writerow(["step", "loss", "accuracy"])
    for step, (loss, acc) in enumerate(zip(result.losses, result.accuracies)):
        out.writerow([step, f"{loss:.6f}", f"{acc:.6f}"])
    out.writerow(["final", "", f"{result.final_accuracy:.6f}"])


def cmd_bench(args):
    cfg = bench.BenchConfig(tuple(args.sizes), tuple(args.ks), args.channels, args.repeats,
                            args.mode, args.kernel, args.seed)
    rows = bench.bench_run(cfg)
    bench.write_csv(rows, args.out)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spxpool", description="Superpixel pooling toolkit.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    s = sub.add_parser("info", help="print dtype, dims and value range of an SPXT file")
    s.add_argument("file")
    s.set_defaults(func=cmd_info)

    s = sub.add_parser("segment", help="generate a superpixel label map")
    s.add_argument("--method", choices=("slic", "block"), default="slic")
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--compactness", type=float, default=10.0)
    s.add_argument("--iters", type=int, default=10)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("pool", help="pool a feature image over superpixels")
    s.add_argument("--mode", choices=("max", "avg"), default="max")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--parallel", action="store_true")
    g.add_argument("--serial", dest="parallel", action="store_false")
    s.add_argument("--cell-edge", type=int, default=32)
    s.add_argument("--img", required=True)
    s.add_argument("--seg", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--cache")
    s.set_defaults(func=cmd_pool)

    s = sub.add_parser("unpool", help="broadcast pooled values back to pixels")
    s.add_argument("--pooled", required=True)
    s.add_argument("--seg", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_unpool)

    topologies = [k.value for k in netgraph.TopologyKind]
    s = sub.add_parser("gradcheck", help="finite-difference check of a segmentation head")
    s.add_argument("--topology", choices=topologies, required=True)
    s.add_argument("--mode", choices=("max", "avg"), default="max")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--instances", type=int, default=10)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("toytrain", help="train a head on a synthetic dataset")
    s.add_argument("--topology", choices=topologies, required=True)
    s.add_argument("--mode", choices=("max", "avg"), default="max")
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--lr", type=float, default=2.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--images", type=int, default=4)
    s.add_argument("--noise", type=float, default=1.5)
    s.set_defaults(func=cmd_toytrain)

    s = sub.add_parser("eval", help="score a prediction against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--classes", type=int, required=True)
    s.add_argument("--metric", choices=("dice", "iou"), default="dice")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("oracle", help="best score of any labeling constant on superpixels")
    s.add_argument("--seg", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--classes", type=int, required=True)
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("bench", help="time the pooling kernels over a P x K sweep")
    s.add_argument("--out")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--sizes", type=_int_list, default=[2 ** 18, 2 ** 20])
    s.add_argument("--ks", type=_int_list, default=[1000])
    s.add_argument("--channels", type=int, default=1)
    s.add_argument("--kernel", choices=("serial", "parallel", "both"), default="both")
    s.add_argument("--mode", choices=("max", "avg"), default="max")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"spxpool: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args)
    except (SpxError, OSError, ValueError) as exc:
        print(f"spxpool {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
