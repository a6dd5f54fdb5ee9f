"""Model configuration files.

Grammar (a YAML subset)::

    ch: 1            # input channels, defaults to 1
    nc: 1            # class count, required
    layers:
      - [-1, 1, Conv, [32, 3, 2]]
      - [[-1, 4], 1, Concat, []]
      - [[9, 12], 1, DDetect, [nc]]

Each layer is ``[from, repeats, Module, [args]]``. ``from`` is ``-1`` (the
previous layer), another negative offset, an absolute index of an earlier
layer, or a list of those. A mapping inside ``args`` supplies keyword
arguments, e.g. ``[128, 64, 32, 1, {rcs: true}]``; the bare word ``nc`` is
replaced by the class count.
"""

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .exceptions import ConfigError

MODULES = ("Conv", "RepVGG", "RCS", "RepNCSPELAN4", "ADown", "SPPELAN", "Upsample", "Concat", "DDetect")
MULTI_INPUT = ("Concat", "DDetect")
NO_REPEAT = ("Upsample", "Concat", "DDetect")


@dataclass(frozen=True)
class LayerSpec:
    sources: tuple  # resolved absolute indices; -1 means the input image
    repeats: int
    module: str
    args: tuple
    kwargs: dict = field(default_factory=dict)
    line: int = 0


@dataclass(frozen=True)
class ModelConfig:
    ch: int
    nc: int
    layers: tuple

    @property
    def detect_index(self):
        return next(i for i, l in enumerate(self.layers) if l.module == "DDetect")


def _line(node):
    return node.start_mark.line + 1


def _scalar(node):
    return yaml.safe_load(yaml.serialize(node))


def _int_field(mapping, key, default=None):
    for k, v in mapping.value:
        if k.value == key:
            value = _scalar(v)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"'{key}' must be a positive integer, got {value!r}", _line(v))
            return value
    if default is None:
        raise ConfigError(f"missing required '{key}' (the class count must be given explicitly)")
    return default


def _resolve_from(raw, index, line):
    items = raw if isinstance(raw, list) else [raw]
    if not items:
        raise ConfigError(f"layer {index}: empty 'from' list", line)
    out = []
    for f in items:
        if isinstance(f, bool) or not isinstance(f, int):
            raise ConfigError(f"layer {index}: 'from' entries must be integers, got {f!r}", line)
        src = index + f if f < 0 else f
        if f >= index or src < -1 or (f < 0 and src < 0 and not (index == 0 and f == -1)):
            raise ConfigError(f"layer {index}: bad 'from' reference {f} (only earlier layers or -1)", line)
        out.append(src)
    return tuple(out), isinstance(raw, list)


def parse_config(text):
    """Parse config text into a validated :class:`ModelConfig`."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"syntax error: {getattr(exc, 'problem', exc)}", mark.line + 1 if mark else None) from exc
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError("config must be a mapping with 'ch', 'nc' and 'layers'")
    keys = {k.value: v for k, v in root.value}
    for k, v in root.value:
        if k.value not in ("ch", "nc", "layers"):
            raise ConfigError(f"unknown top-level key '{k.value}'", _line(k))
    nc = _int_field(root, "nc")
    ch = _int_field(root, "ch", default=1)
    seq = keys.get("layers")
    if not isinstance(seq, yaml.SequenceNode) or not seq.value:
        raise ConfigError("'layers' must be a non-empty list", _line(seq) if seq is not None else None)

    layers = []
    for index, node in enumerate(seq.value):
        line = _line(node)
        entry = _scalar(node)
        if not isinstance(entry, list) or len(entry) != 4:
            raise ConfigError(f"layer {index}: expected [from, repeats, Module, [args]]", line)
        raw_from, repeats, module, args = entry
        if module not in MODULES:
            raise ConfigError(f"layer {index}: unknown module '{module}' (known: {', '.join(MODULES)})", line)
        sources, is_list = _resolve_from(raw_from, index, line)
        if module in MULTI_INPUT and not is_list:
            raise ConfigError(f"layer {index}: {module} takes a list of inputs", line)
        if module not in MULTI_INPUT and len(sources) != 1:
            raise ConfigError(f"layer {index}: {module} takes exactly one input", line)
        if isinstance(repeats, bool) or not isinstance(repeats, int) or repeats < 1:
            raise ConfigError(f"layer {index}: repeats must be a positive integer, got {repeats!r}", line)
        if module in NO_REPEAT and repeats != 1:
            raise ConfigError(f"layer {index}: {module} cannot be repeated", line)
        if args is None:
            args = []
        if not isinstance(args, list):
            raise ConfigError(f"layer {index}: args must be a list", line)
        positional, kwargs = [], {}
        for a in args:
            if isinstance(a, dict):
                kwargs.update(a)
            elif a == "nc":
                positional.append(nc)
            else:
                positional.append(a)
        layers.append(LayerSpec(sources, repeats, module, tuple(positional), kwargs, line))

    detects = [i for i, l in enumerate(layers) if l.module == "DDetect"]
    if len(detects) != 1:
        raise ConfigError(f"config must contain exactly one DDetect layer, found {len(detects)}")
    return ModelConfig(ch, nc, tuple(layers))


def load_config(path):
    return parse_config(Path(path).read_text())


def bundled_config(name="reference.cfg"):
    """Text of a config shipped inside the package."""
    return (Path(__file__).parent / "configs" / name).read_text()


def resolve_config(config=None):
    """Config text from a path, a bundled config name, or literal text.

    ``None`` selects the bundled reference model.
    """
    if config is None:
        return bundled_config()
    text = str(config)
    if "\n" not in text:
        if Path(text).is_file():
            return Path(text).read_text()
        bundled = Path(__file__).parent / "configs" / Path(text).name
        if bundled.is_file():
            return bundled.read_text()
        raise FileNotFoundError(f"no config file {text!r}")
    return text
