"""Layer graph assembled from a :class:`ModelConfig`: shape inference,
parameter/FLOP accounting, whole-graph fusion and end-to-end inference."""

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .blocks import ADownBlock, Concat, ConvUnit, RepNcspElan4, Sequential, SppElanBlock, Upsample
from .cost import Cost, total
from .exceptions import ConfigError, DimensionError
from .head import DEFAULT_CONF, DEFAULT_IOU, REG_MAX, DDetect, decode_batch, make_anchors, nms
from .init import as_rng
from .reparam import RcsBlock, RepVGGBlockTrain
from .tensor import BnParams
from .validation import check_tensor4


def _opt(args, i, default):
    return args[i] if len(args) > i else default


def _make_single(module, c1, args, kw, rng):
    c2 = args[0] if args else None
    if module == "Conv":
        return ConvUnit.random(rng, c1, c2, k=_opt(args, 1, 1), stride=_opt(args, 2, 1), groups=_opt(args, 3, 1),
                               act=kw.get("act", "silu"))
    if module == "RepVGG":
        return RepVGGBlockTrain.random(rng, c1, c2, stride=_opt(args, 1, 1), groups=_opt(args, 2, 1),
                                       identity=kw.get("identity"), act=kw.get("act", "relu"))
    if module == "RCS":
        return RcsBlock.random(rng, c1, c2, stride=_opt(args, 1, 1), identity_half=bool(kw.get("identity_half", False)),
                               act=kw.get("act", "relu"))
    if module == "RepNCSPELAN4":
        return RepNcspElan4.random(rng, c1, c2, args[1], args[2], n=_opt(args, 3, 1), rcs=bool(kw.get("rcs", False)))
    if module == "ADown":
        return ADownBlock.random(rng, c1, c2)
    if module == "SPPELAN":
        return SppElanBlock.random(rng, c1, c2, args[1], k=_opt(args, 2, 5))
    if module == "Upsample":
        return Upsample(int(_opt(args, 0, 2)))
    raise ConfigError(f"module {module} is not a single-input block")


@dataclass(frozen=True, eq=False)
class Node:
    index: int
    module: str
    sources: tuple
    block: object
    out_shape: object  # tuple, or list of tuples for the detect node
    cost: Cost
    line: int = 0

    @property
    def name(self):
        return f"{self.index}.{self.module}"


@dataclass(frozen=True, eq=False)
class ModelGraph:
    nodes: tuple
    ch: int
    nc: int
    input_size: int
    detect_index: int

    @property
    def detect(self):
        return self.nodes[self.detect_index].block

    @property
    def strides(self):
        shapes = self.nodes[self.detect_index].out_shape
        return [self.input_size // s[2] for s in shapes]

    @property
    def is_fused(self):
        return bn_count(self) == 0 and not any(isinstance(o, RepVGGBlockTrain) for o in iter_objects(self.nodes))

    def forward_trace(self, x):
        """Run every node; returns the list of per-node outputs."""
        x = check_tensor4(x, name="image", channels=self.ch)
        outs = []
        for node in self.nodes:
            ins = [x if s == -1 else outs[s] for s in node.sources]
            try:
                if node.module in ("Concat", "DDetect"):
                    y = node.block.forward(ins)
                    outs.append(list(y.layers) if node.module == "DDetect" else y)
                else:
                    outs.append(node.block.forward(ins[0]))
            except DimensionError as exc:
                raise DimensionError(f"node {node.name}: {exc}") from exc
        return outs

    def forward_raw(self, x):
        """Raw head output for an NCHW batch."""
        x = check_tensor4(x, name="image", channels=self.ch)
        self._check_divisible(x.shape)
        outs = {}
        last_use = {}
        for node in self.nodes:
            for s in node.sources:
                last_use[s] = node.index
        for node in self.nodes:
            ins = [x if s == -1 else outs[s] for s in node.sources]
            try:
                if node.module in ("Concat", "DDetect"):
                    y = node.block.forward(ins)
                else:
                    y = node.block.forward(ins[0])
            except DimensionError as exc:
                raise DimensionError(f"node {node.name}: {exc}") from exc
            if node.index == self.detect_index:
                return y
            outs[node.index] = y
            for s in node.sources:
                if last_use.get(s) == node.index:
                    outs.pop(s, None)
        raise AssertionError("detect node never reached")

    def _check_divisible(self, shape):
        step = max(self.strides)
        if shape[2] % step or shape[3] % step:
            raise DimensionError(f"image {shape[2]}x{shape[3]} is not divisible by the largest stride {step}")

    def anchors_for(self, raw, image_hw):
        shapes = raw.shapes
        strides = [image_hw[0] // h for h, _ in shapes]
        return make_anchors([tuple(s) for s in shapes], strides)

    def predict_batch(self, x, conf_thresh=DEFAULT_CONF, iou_thresh=DEFAULT_IOU):
        x = check_tensor4(x, name="image", channels=self.ch)
        raw = self.forward_raw(x)
        anchors = self.anchors_for(raw, x.shape[2:])
        return [nms(d, iou_thresh) for d in decode_batch(raw, anchors, conf_thresh)]


def _infer_node(index, module, block, in_shapes, names):
    try:
        if module in ("Concat", "DDetect"):
            return block.output_shape(in_shapes)
        return block.output_shape(in_shapes[0])
    except DimensionError as exc:
        raise ConfigError(f"shape mismatch at node {index}.{module} (inputs from {', '.join(names)}): {exc}") from exc


def build_graph(cfg, input_size=640, seed=0):
    """Instantiate every layer with seeded random weights and infer shapes
    for a ``1 x ch x input_size x input_size`` input."""
    rng = as_rng(seed)
    shapes = {-1: (1, cfg.ch, input_size, input_size)}
    nodes = []
    for index, spec in enumerate(cfg.layers):
        in_shapes = [shapes[s] for s in spec.sources]
        names = ["input" if s == -1 else f"{s}.{cfg.layers[s].module}" for s in spec.sources]
        if any(isinstance(s, list) for s in in_shapes):
            raise ConfigError(f"node {index}.{spec.module} reads from the detect node", spec.line)
        try:
            if spec.module == "Concat":
                block = Concat()
            elif spec.module == "DDetect":
                strides = []
                for s in in_shapes:
                    if input_size % s[2]:
                        raise ConfigError(f"detect input {s} does not divide the image size {input_size}")
                    strides.append(input_size // s[2])
                nc = spec.args[0] if spec.args else cfg.nc
                block = DDetect.random(rng, nc, [s[1] for s in in_shapes], strides, input_size,
                                       reg_max=int(spec.kwargs.get("reg_max", REG_MAX)))
            else:
                c1 = in_shapes[0][1]
                blocks = []
                for r in range(spec.repeats):
                    blocks.append(_make_single(spec.module, c1, spec.args, spec.kwargs, rng))
                    c1 = getattr(blocks[-1], "out_ch", c1)
                block = blocks[0] if len(blocks) == 1 else Sequential(tuple(blocks))
        except (DimensionError, ValueError, IndexError, TypeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"cannot build node {index}.{spec.module} from {', '.join(names)}: {exc}", spec.line) from exc
        out = _infer_node(index, spec.module, block, in_shapes, names)
        cost = block.cost(in_shapes if spec.module in ("Concat", "DDetect") else in_shapes[0])
        shapes[index] = out
        nodes.append(Node(index, spec.module, spec.sources, block, out, cost, spec.line))
    return ModelGraph(tuple(nodes), cfg.ch, cfg.nc, input_size, cfg.detect_index)


def infer_shapes(g, input_size):
    """Per-node output shapes for a square input of ``input_size``."""
    shapes = {-1: (1, g.ch, input_size, input_size)}
    out = []
    for node in g.nodes:
        ins = [shapes[s] for s in node.sources]
        names = ["input" if s == -1 else g.nodes[s].name for s in node.sources]
        shapes[node.index] = _infer_node(node.index, node.module, node.block, ins, names)
        out.append(shapes[node.index])
    return out


def fuse_graph(g):
    """Fold every BN into its conv and reparameterize every RepVGG block."""
    nodes = tuple(dataclasses.replace(n, block=n.block.fuse()) for n in g.nodes)
    return _with_costs(dataclasses.replace(g, nodes=nodes))


def _with_costs(g):
    shapes = {-1: (1, g.ch, g.input_size, g.input_size)}
    nodes = []
    for n in g.nodes:
        ins = [shapes[s] for s in n.sources]
        cost = n.block.cost(ins if n.module in ("Concat", "DDetect") else ins[0])
        shapes[n.index] = n.out_shape
        nodes.append(dataclasses.replace(n, cost=cost))
    return dataclasses.replace(g, nodes=tuple(nodes))


def model_forward(g, image, conf_thresh=DEFAULT_CONF, iou_thresh=DEFAULT_IOU):
    """Detections for a single ``1 x ch x H x W`` image."""
    image = check_tensor4(image, name="image", channels=g.ch)
    if image.shape[0] != 1:
        raise DimensionError(f"model_forward takes one image, got a batch of {image.shape[0]}")
    return g.predict_batch(image, conf_thresh, iou_thresh)[0]


@dataclass(frozen=True)
class AccountingReport:
    total_params: int
    total_gflops: float
    input_size: int
    fused: bool
    macs: int
    rows: tuple  # (node name, output shape, params, gflops)

    def to_dict(self):
        return {
            "total_params": self.total_params,
            "params_millions": round(self.total_params / 1e6, 4),
            "total_gflops": round(self.total_gflops, 4),
            "input_size": self.input_size,
            "fused": self.fused,
            "macs": self.macs,
            "nodes": [{"name": r[0], "shape": list(r[1]) if not isinstance(r[1], list) else [list(s) for s in r[1]],
                       "params": r[2], "gflops": round(r[3], 6)} for r in self.rows],
        }

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)

    def table(self):
        lines = [f"{'node':<20} {'params':>12} {'GFLOPs':>10}  shape"]
        for name, shape, params, gf in self.rows:
            lines.append(f"{name:<20} {params:>12,d} {gf:>10.3f}  {shape}")
        lines.append(f"{'total':<20} {self.total_params:>12,d} {self.total_gflops:>10.3f}")
        return "\n".join(lines)


def count_params_flops(g, input_size=None):
    """Parameter and FLOP totals for one square image of ``input_size``."""
    input_size = g.input_size if input_size is None else input_size
    shapes = {-1: (1, g.ch, input_size, input_size)}
    rows, costs = [], []
    for node, out in zip(g.nodes, infer_shapes(g, input_size)):
        ins = [shapes[s] for s in node.sources]
        c = node.block.cost(ins if node.module in ("Concat", "DDetect") else ins[0])
        shapes[node.index] = out
        costs.append(c)
        rows.append((node.name, out, c.params, c.flops / 1e9))
    t = total(costs)
    return AccountingReport(t.params, t.flops / 1e9, input_size, g.is_fused, t.macs, tuple(rows))


# generic traversal over the immutable block trees

def iter_objects(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        yield obj
        for f in dataclasses.fields(obj):
            yield from iter_objects(getattr(obj, f.name))
    elif isinstance(obj, (tuple, list)):
        for v in obj:
            yield from iter_objects(v)


def iter_arrays(obj, path=""):
    """Yield ``(path, array)`` for every ndarray leaf in a fixed order."""
    if isinstance(obj, np.ndarray):
        yield path, obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            if f.name in ("out_shape", "cost"):
                continue
            yield from iter_arrays(getattr(obj, f.name), f"{path}.{f.name}" if path else f.name)
    elif isinstance(obj, (tuple, list)):
        for i, v in enumerate(obj):
            yield from iter_arrays(v, f"{path}[{i}]")


def map_arrays(obj, fn, path=""):
    """Rebuild ``obj`` with every ndarray leaf replaced by ``fn(path, array)``."""
    if isinstance(obj, np.ndarray):
        return fn(path, obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        changes = {}
        for f in dataclasses.fields(obj):
            if f.name in ("out_shape", "cost"):
                continue
            changes[f.name] = map_arrays(getattr(obj, f.name), fn, f"{path}.{f.name}" if path else f.name)
        return dataclasses.replace(obj, **changes)
    if isinstance(obj, tuple):
        return tuple(map_arrays(v, fn, f"{path}[{i}]") for i, v in enumerate(obj))
    if isinstance(obj, list):
        return [map_arrays(v, fn, f"{path}[{i}]") for i, v in enumerate(obj)]
    return obj


def bn_count(g):
    return sum(isinstance(o, BnParams) for o in iter_objects(g.nodes))


def structure(g):
    """Hashable description of the graph: node wiring, block types, array shapes."""
    return tuple(
        (n.index, n.module, n.sources, tuple(type(o).__name__ for o in iter_objects(n.block)),
         tuple((p, a.shape) for p, a in iter_arrays(n.block)))
        for n in g.nodes
    )


def same_graph(a, b):
    """Structural and bitwise equality of two graphs."""
    if structure(a) != structure(b):
        return False
    return all(np.array_equal(x, y) for (_, x), (_, y) in zip(iter_arrays(a.nodes), iter_arrays(b.nodes)))
