"""Command line entry point: ``repgelan <command> ...``."""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .boxes import format_detections
from .config import parse_config, resolve_config
from .data import load_image
from .evaluate import run_eval
from .exceptions import ConfigError, DimensionError, FormatError
from .graph import build_graph, count_params_flops, fuse_graph, model_forward
from .head import DEFAULT_CONF, DEFAULT_IOU
from .selfcheck import check_fusion, run_selfcheck
from .weights import load_weights, save_weights

# published static figures for the reference model, used as soft targets
REFERENCE_PARAMS_M = 25.4
REFERENCE_GFLOPS = 240.7
PARAMS_BAND = 0.10
GFLOPS_BAND = 0.15


def _graph(args, size):
    g = build_graph(parse_config(resolve_config(args.cfg)), size, seed=args.seed)
    if getattr(args, "weights", None):
        g = load_weights(g, args.weights)
    return g


def cmd_build(args):
    g = _graph(args, args.size)
    print(f"{'node':<20} {'from':<12} {'output shape':<22} {'params':>10}")
    for node in g.nodes:
        shape = node.out_shape
        text = " ".join(str(tuple(s)) for s in shape) if isinstance(shape, list) else str(tuple(shape))
        src = ",".join("in" if s == -1 else str(s) for s in node.sources)
        print(f"{node.name:<20} {src:<12} {text:<22} {node.cost.params:>10,d}")
    print(f"{len(g.nodes)} nodes, strides {g.strides}, {sum(n.cost.params for n in g.nodes):,d} parameters")
    return 0


def _targets(args):
    if args.target_params is not None or args.target_gflops is not None:
        return args.target_params, args.target_gflops
    if Path(args.cfg).name == "reference.cfg":
        return REFERENCE_PARAMS_M, REFERENCE_GFLOPS
    return None, None


def cmd_flops(args):
    g = _graph(args, args.size)
    if args.fused:
        g = fuse_graph(g)
    report = count_params_flops(g, args.size)
    out = report.to_dict()
    if not args.nodes:
        out.pop("nodes")
    params_t, gflops_t = _targets(args)
    deviating = False
    if params_t is not None or gflops_t is not None:
        cmp = {}
        if params_t is not None:
            dev = report.total_params / 1e6 / params_t - 1
            cmp["params"] = {"target_millions": params_t, "deviation": round(dev, 4), "within": abs(dev) <= PARAMS_BAND}
        if gflops_t is not None:
            dev = report.total_gflops / gflops_t - 1
            cmp["gflops"] = {"target": gflops_t, "deviation": round(dev, 4), "within": abs(dev) <= GFLOPS_BAND}
        out["comparison"] = cmp
        deviating = any(abs(v["deviation"]) > 1e-3 for v in cmp.values())
    print(json.dumps(out, indent=2))
    if deviating or args.table:
        print(report.table(), file=sys.stderr)
    return 0


def cmd_fuse(args):
    g = _graph(args, args.size)
    status = 0
    if args.check:
        image = np.random.default_rng(args.seed).random((1, g.ch, args.size, args.size)).astype(np.float32)
        r = check_fusion(g, image, args.conf, args.iou)
        print(f"max |logit diff|      {r.max_logit_diff:.3e}")
        print(f"detections            {r.n_unfused} unfused, {r.n_fused} fused")
        print(f"min paired IoU        {r.min_iou:.6f}")
        print(f"max paired score diff {r.max_score_diff:.3e}")
        print(f"idempotent            {r.idempotent}")
        print(f"BN left after fusion  {r.bn_left}")
        print("fusion check " + ("passed" if r.passed() else "FAILED"))
        status = 0 if r.passed() else 1
    if args.save:
        save_weights(fuse_graph(g), args.save)
        print(f"fused weights written to {args.save}")
    return status


def cmd_detect(args):
    image = load_image(Path(args.image).read_bytes())
    g = _graph(args, image.shape[2])
    if not args.no_fuse:
        g = fuse_graph(g)
    sys.stdout.write(format_detections(model_forward(g, image, args.conf, args.iou)))
    return 0


def cmd_selfcheck(args):
    results = run_selfcheck(args.seed)
    for r in results:
        print(r.line())
    return 0 if all(r.ok for r in results) else 1


def cmd_eval(args):
    graph, accounting = None, None
    if args.cfg:
        graph = _graph(args, args.size)
        accounting = count_params_flops(graph, args.size)
        graph = fuse_graph(graph)
    elif not args.pred:
        raise SystemExit("eval: give --cfg, --pred or both")
    report = run_eval(args.data, graph, args.pred, args.conf, args.iou_nms, accounting)
    print(report.table())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    return 0


def _common(p, size=640):
    p.add_argument("cfg", help="config file or bundled config name (reference.cfg, toy.cfg)")
    p.add_argument("--size", type=int, default=size, help="square input size (default %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="seed for random weights")
    p.add_argument("--weights", help="RGW1 weights file to load")


def build_parser():
    parser = argparse.ArgumentParser(prog="repgelan", description="RepVGG-GELAN detector toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="validate a config and print its shape table")
    _common(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("flops", help="parameter and FLOP accounting as JSON")
    _common(p)
    p.add_argument("--fused", action="store_true", help="count the deploy-form graph")
    p.add_argument("--nodes", action="store_true", help="include the per-node breakdown in the JSON")
    p.add_argument("--table", action="store_true", help="always print the breakdown table to stderr")
    p.add_argument("--target-params", type=float, help="expected parameters in millions")
    p.add_argument("--target-gflops", type=float, help="expected GFLOPs")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("fuse", help="fuse BN and RepVGG branches")
    _common(p, size=128)
    p.add_argument("--check", action="store_true", help="compare fused and unfused outputs on a random image")
    p.add_argument("--conf", type=float, default=DEFAULT_CONF)
    p.add_argument("--iou", type=float, default=DEFAULT_IOU)
    p.add_argument("--save", help="write the fused weights here")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("detect", help="run the detector on a PGM image")
    p.add_argument("cfg")
    p.add_argument("image")
    p.add_argument("--conf", type=float, default=DEFAULT_CONF)
    p.add_argument("--iou", type=float, default=DEFAULT_IOU)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weights")
    p.add_argument("--no-fuse", action="store_true", help="run the train-form graph")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("selfcheck", help="run the built-in oracle checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selfcheck)

    p = sub.add_parser("eval", help="evaluate on a dataset directory")
    p.add_argument("--data", required=True, help="directory holding images/ and labels/")
    p.add_argument("--cfg", help="model config (runs inference unless --pred is given)")
    p.add_argument("--pred", help="directory of per-image prediction files")
    p.add_argument("--conf", type=float, default=DEFAULT_CONF)
    p.add_argument("--iou-nms", type=float, default=DEFAULT_IOU)
    p.add_argument("--size", type=int, default=640, help="input size for accounting")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weights")
    p.add_argument("--out", help="write the report JSON here")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormatError, DimensionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
