"""Pipeline configuration: one flat dataclass, a ``key = value`` file format
and matching command-line flags.

File format::

    # comment
    k = 10
    c_grid = 0.01, 0.1, 1, 10, 100
    svm_iter = none

Keys are the field names below; ``--conf-thresh`` on the command line sets
``conf_thresh`` and wins over the file. Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import asdict, dataclass, fields

from .graspclf import GraspConfig
from .graspfeat import HOGParams
from .illumskin import FeatureConfig, ForestParams
from .proposals import FallbackParams
from .refine import RefineParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    jobs: int = 1
    # illumination clusters and skin forests
    k: int = 10
    kmeans_iters: int = 300
    hist_bins: tuple[int, ...] = (8, 8, 8)
    n_trees: int = 30
    max_depth: int = 12
    min_leaf: int = 5
    max_features: int | None = None
    n_bins: int = 64
    samples_per_image: int = 2000
    # clusters smaller than this borrow their nearest non-member images
    min_cluster_images: int = 1
    sift_stride: int = 2
    sift_patch: int = 16
    use_lab: bool = False
    blend_n: int = 1
    tau: float = 0.5
    # proposals
    conf_thresh: float = 0.15
    nms_iou: float = 0.45
    fallback_max_side: int = 160
    fallback_min_area: int = 20
    fallback_pad: float = 0.2
    # refinement
    margin: float = 0.15
    f_min: float = 0.02
    pad: float = 0.05
    # grasp features and classifier
    hog_cell: int = 8
    hog_block: int = 16
    hog_stride: int = 8
    hog_bins: int = 9
    hog_signed: bool = False
    pca_dim: int = 30
    task: str = "3class"
    c_grid: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0, 100.0)
    folds: int = 10
    svm_iter: int | None = None
    class_weight: bool = True
    jitter_n: int = 5
    jitter_scale: tuple[float, ...] = (0.9, 1.1)
    jitter_shift: float = 0.1
    test_fraction: float = 0.2
    masked: bool = True
    # evaluation
    iou_min: float = 0.5
    ap_method: str = "all"
    level: str | None = None
    # paths
    corpus: str | None = None
    bank: str | None = None
    grasp_model: str | None = None
    out: str | None = None

    def __post_init__(self):
        validate(self)

    # -- builders for the stage parameter objects --------------------------

    def forest_params(self) -> ForestParams:
        return ForestParams(self.n_trees, self.max_depth, self.min_leaf, self.max_features, self.n_bins)

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(tuple(self.hist_bins), self.sift_stride, self.sift_patch, self.use_lab)

    def refine_params(self) -> RefineParams:
        return RefineParams(self.margin, self.f_min, self.pad, self.tau, self.blend_n)

    def fallback_params(self) -> FallbackParams:
        return FallbackParams(self.fallback_max_side, self.tau, self.fallback_min_area, self.fallback_pad,
                              self.blend_n)

    def hog_params(self) -> HOGParams:
        return HOGParams(self.hog_cell, self.hog_block, self.hog_stride, self.hog_bins, self.hog_signed)

    def grasp_config(self) -> GraspConfig:
        return GraspConfig(self.task, self.hog_params(), self.pca_dim, tuple(self.c_grid), self.folds,
                           self.svm_iter, self.class_weight, self.jitter_n, tuple(self.jitter_scale),
                           self.jitter_shift, self.test_fraction, self.masked)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def to_text(self) -> str:
        return "".join(f"{f.name} = {format_value(getattr(self, f.name))}\n" for f in fields(self))

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


def _check(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def validate(c: PipelineConfig) -> None:
    for name in ("k", "kmeans_iters", "n_trees", "max_depth", "min_leaf", "n_bins", "samples_per_image",
                 "min_cluster_images", "sift_stride", "sift_patch", "blend_n", "jobs", "fallback_max_side",
                 "hog_cell", "hog_block", "hog_stride", "hog_bins", "pca_dim", "jitter_n"):
        _check(getattr(c, name) >= 1, f"{name} must be >= 1")
    _check(c.folds >= 2, "folds must be >= 2")
    _check(c.fallback_min_area >= 0, "fallback_min_area must be >= 0")
    _check(c.blend_n <= c.k, "blend_n must not exceed k")
    _check(c.max_features is None or c.max_features >= 1, "max_features must be >= 1")
    _check(c.svm_iter is None or c.svm_iter >= 1, "svm_iter must be >= 1")
    _check(len(c.hist_bins) == 3 and min(c.hist_bins) >= 1, "hist_bins needs three positive counts")
    for name in ("tau", "conf_thresh", "f_min"):
        _check(0.0 <= getattr(c, name) <= 1.0, f"{name} must lie in [0, 1]")
    for name in ("nms_iou", "iou_min"):
        _check(0.0 < getattr(c, name) <= 1.0, f"{name} must lie in (0, 1]")
    for name in ("margin", "pad", "fallback_pad", "jitter_shift"):
        _check(getattr(c, name) >= 0.0, f"{name} must be >= 0")
    _check(0.0 < c.test_fraction < 1.0, "test_fraction must lie in (0, 1)")
    _check(len(c.c_grid) >= 1 and min(c.c_grid) > 0, "c_grid needs positive values")
    _check(len(c.jitter_scale) == 2 and 0 < c.jitter_scale[0] <= c.jitter_scale[1],
           "jitter_scale must be 'lo, hi' with 0 < lo <= hi")
    _check(c.task in ("3class", "binary"), "task must be '3class' or 'binary'")
    _check(c.ap_method in ("all", "11pt"), "ap_method must be 'all' or '11pt'")
    _check(c.level in (None, "L1", "L2"), "level must be none, L1 or L2")
    try:
        HOGParams(c.hog_cell, c.hog_block, c.hog_stride, c.hog_bins, c.hog_signed)
    except ValueError as e:
        raise ConfigError(str(e)) from None


# -- value parsing ------------------------------------------------------------

_HINTS = typing.get_type_hints(PipelineConfig)
FIELD_NAMES = tuple(f.name for f in fields(PipelineConfig))


def _optional(tp):
    args = typing.get_args(tp)
    if isinstance(tp, types.UnionType) or typing.get_origin(tp) is typing.Union:
        inner = [a for a in args if a is not type(None)]
        return inner[0], True
    return tp, False


def _scalar(kind, text: str):
    if kind is bool:
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    return kind(text)


def parse_value(name: str, text: str):
    """Convert the text of ``name`` to its field type."""
    if name not in _HINTS:
        raise ConfigError(f"unknown key {name!r}")
    kind, nullable = _optional(_HINTS[name])
    text = text.strip()
    if nullable and text.lower() in ("none", "auto", ""):
        return None
    try:
        if typing.get_origin(kind) is tuple:
            elem = typing.get_args(kind)[0]
            return tuple(_scalar(elem, p.strip()) for p in text.split(",") if p.strip())
        return _scalar(kind, text)
    except ValueError as e:
        raise ConfigError(f"{name}: {e}") from None


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(format_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def parse_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _HINTS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = parse_value(key, val)
        except ConfigError as e:
            raise ConfigError(f"{source}:{lineno}: {e}") from None
    return values


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (flag values)."""
    values = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_text(fh.read(), str(path)))
    for key, val in (overrides or {}).items():
        if key not in _HINTS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = val
    return PipelineConfig(**values)


def flag_name(key: str) -> str:
    return "--" + key.replace("_", "-")
