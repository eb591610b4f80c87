"""Plain-text ``key = value`` configuration for scenes and training runs.

Lines starting with ``#`` are comments. Vectors are whitespace separated.
In scene files the ``object`` key may repeat, one object per line::

    object = box small 2.0 3.0 0.4  0.3 0.3 0.4  1  0.9 0.2 0.2

with fields ``shape size cx cy cz ex ey ez class r g b``; ``e`` is the
half-extent of a box or, in its first component, the radius of a sphere.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_type_hints

import numpy as np

from ..sparse_voxel import VoxelGridSpec

SHAPES = ("box", "sphere")
SIZE_CLASSES = ("small", "large")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    size: str
    center: tuple[float, float, float]
    extent: tuple[float, float, float]
    class_id: int
    color: tuple[float, float, float]

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown shape {self.shape!r}")
        if self.size not in SIZE_CLASSES:
            raise ConfigError(f"unknown size class {self.size!r}")
        if min(self.extent) <= 0:
            raise ConfigError("object extents must be positive")
        if not all(0.0 <= c <= 1.0 for c in self.color):
            raise ConfigError("object colors must lie in [0, 1]")

    @classmethod
    def parse(cls, text: str) -> "ObjectSpec":
        tok = text.split()
        if len(tok) != 12:
            raise ConfigError(f"object needs 12 fields, got {len(tok)}: {text!r}")
        f = [float(x) for x in tok[2:8]] + [int(tok[8])] + [float(x) for x in tok[9:]]
        return cls(tok[0], tok[1], tuple(f[0:3]), tuple(f[3:6]), f[6], tuple(f[7:10]))

    def format(self) -> str:
        nums = [*self.center, *self.extent]
        return " ".join([self.shape, self.size] + [repr(float(x)) for x in nums] + [str(self.class_id)]
                        + [repr(float(x)) for x in self.color])


@dataclass(frozen=True)
class SceneSpec:
    """Synthetic scene description. The grid keys mirror :class:`RunConfig`."""

    grid_origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    voxel_size: float = 0.25
    grid_dims: tuple[int, int, int] = (32, 32, 8)
    n_classes: int = 4
    objects: tuple[ObjectSpec, ...] = ()
    ground_plane: bool = False
    ground_class: int = 4
    ground_color: tuple[float, float, float] = (0.45, 0.45, 0.4)
    camera_count: int = 4
    camera_radius: float = 7.0
    camera_height: float = 4.0
    camera_fov: float = 60.0
    image_width: int = 64
    image_height: int = 64
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    lidar_rays: int = 6000
    lidar_height: float = 1.8
    range_noise: float = 0.01
    intensity_noise: float = 0.02
    truth_opacity: float = 0.97

    def __post_init__(self):
        spec = self.grid
        lo, hi = spec.lo, spec.hi
        for ob in self.objects:
            if not 1 <= ob.class_id <= self.n_classes:
                raise ConfigError(f"class id {ob.class_id} outside [1, {self.n_classes}]")
            c = list(ob.center)
            if any(not lo[i] <= c[i] <= hi[i] for i in range(3)):
                raise ConfigError(f"object center {ob.center} outside the grid")
        if self.ground_plane and not 1 <= self.ground_class <= self.n_classes:
            raise ConfigError("ground_class outside [1, n_classes]")
        if self.camera_count < 1 or self.image_width < 11 or self.image_height < 11:
            raise ConfigError("need at least one camera and images of at least 11x11")

    @property
    def grid(self) -> VoxelGridSpec:
        return VoxelGridSpec(self.grid_origin, self.voxel_size, self.grid_dims)


@dataclass(frozen=True)
class RunConfig:
    """Training configuration. Network optimizer defaults follow the reference setup."""

    grid_origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    voxel_size: float = 0.25
    grid_dims: tuple[int, int, int] = (32, 32, 8)
    channels: int = 16
    candidates: tuple[int, ...] = (1, 2, 3, 4)
    tau: float = 1.0
    lam: float = 0.2
    fixed_k: int = 0  # 0 selects k per query
    use_rgb: bool = True
    use_pc: bool = True
    # network optimizer (fusion, k-selector, init network, head)
    lr: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # per-group Gaussian learning rates (Adam, cosine schedule, no decay)
    lr_mu: float = 2e-3
    lr_log_scale: float = 5e-3
    lr_rot: float = 1e-3
    lr_opacity: float = 5e-2
    lr_color: float = 5e-2
    phase1_iters: int = 300
    phase2_iters: int = 500
    outer_loops: int = 1
    densify_every: int = 100
    densify_grad_threshold: float = 2e-4
    densify_scale_threshold: float = 0.25
    norm_threshold: float = 1e-3
    filter_min_neighbors: int = 0
    filter_radius: float = 0.5
    init_hidden: int = 16
    init_head_scale: float = 0.1
    head_hidden: int = 32
    seed: int = 0
    out_dir: str = ""

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError("channels must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must lie in [0, 1]")
        if self.fixed_k < 0 or self.fixed_k > max(self.candidates):
            raise ConfigError("fixed_k must be 0 or within the candidate range")
        if self.phase1_iters < 0 or self.phase2_iters < 0 or self.outer_loops < 1:
            raise ConfigError("iteration counts must be non-negative and outer_loops >= 1")
        if self.densify_every < 1:
            raise ConfigError("densify_every must be positive")

    @property
    def grid(self) -> VoxelGridSpec:
        return VoxelGridSpec(self.grid_origin, self.voxel_size, self.grid_dims)


# -- text format -------------------------------------------------------------------

def _convert(raw: str, typ: Any, key: str):
    text = raw.strip()
    try:
        if typ is bool:
            if text.lower() in ("true", "1", "yes", "on"):
                return True
            if text.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if typ in (int, float, str):
            return typ(text)
        origin = getattr(typ, "__origin__", None)
        if origin is tuple:
            args = typ.__args__
            elem = args[0]
            vals = tuple(elem(x) for x in text.split())
            if args[-1] is not Ellipsis and len(vals) != len(args):
                raise ValueError(f"expected {len(args)} values")
            return vals
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
    raise ConfigError(f"unsupported type for {key}")


def parse_pairs(text: str) -> list[tuple[str, str]]:
    pairs = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    return pairs


def _build(cls, pairs, **overrides):
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kw: dict[str, Any] = {}
    objects = []
    for k, v in pairs:
        if cls is SceneSpec and k == "object":
            objects.append(ObjectSpec.parse(v))
            continue
        if k not in names or k == "objects":
            raise ConfigError(f"unknown key {k!r} for {cls.__name__}")
        if k in kw:
            raise ConfigError(f"duplicate key {k!r}")
        kw[k] = _convert(v, hints[k], k)
    if objects:
        kw["objects"] = tuple(objects)
    kw.update(overrides)
    return cls(**kw)


def load_scene_spec(path) -> SceneSpec:
    return _build(SceneSpec, parse_pairs(Path(path).read_text()))


def load_run_config(path, **overrides) -> RunConfig:
    return _build(RunConfig, parse_pairs(Path(path).read_text()), **overrides)


def scene_spec_from_text(text: str) -> SceneSpec:
    return _build(SceneSpec, parse_pairs(text))


def run_config_from_text(text: str, **overrides) -> RunConfig:
    return _build(RunConfig, parse_pairs(text), **overrides)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return " ".join(_fmt(x) for x in v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_config(obj) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if f.name == "objects":
            lines += [f"object = {ob.format()}" for ob in v]
        else:
            lines.append(f"{f.name} = {_fmt(v)}")
    return "\n".join(lines) + "\n"
