"""Plain-text run configuration: ``key = value`` lines under ``[section]`` headers.

Relative paths resolve against the directory of the config file. Unknown
sections or keys are rejected, and every input path must exist at load time.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .augmentation import AugmentationSpec
from .cloud_io import ClassMap, default_class_map, load_class_map
from .contrastive import TrainConfig
from .errors import ConfigError
from .range_postprocess import KnnParams
from .segmentation import SegmentationParams

BUILTIN_PREFIX = "builtin:"

# "dir"/"file" must exist at load time; "outdir" may be created later
_DATA_KEYS = {
    "points_dir": "dir",
    "labels_dir": "dir",
    "scan_list": "file",
    "class_map": "map",
    "output_dir": "outdir",
}
_TRAIN_KEYS = {
    "temperature": float,
    "learning_rate": float,
    "dropout_rate": float,
    "steps": int,
    "batch_segments": int,
    "start_step": int,
    "init_params": "file",
    "segments_dir": "outdir",
    "pseudo_labels_dir": "outdir",
}
_KNN_KEYS = {
    "k": int,
    "window": int,
    "sigma": float,
    "depth_cutoff": float,
    "width": int,
    "height": int,
    "fov_up_deg": float,
    "fov_down_deg": float,
    "input_dir": "dir",
}
_EVAL_KEYS = {
    "pred_dir": "dir",
    "truth_class_map": "map",
    "pred_class_map": "map_or_target",
}
_RUN_KEYS = {"seed": int, "workers": int}
_SEG_KEYS = {f.name: f.type for f in fields(SegmentationParams) if f.name != "rng_seed"}
_AUG_KEYS = {f.name for f in fields(AugmentationSpec) if f.name != "rng_seed"}

_SECTIONS = ("data", "models", "segmentation", "augmentation", "train", "knn", "eval", "run")


@dataclass
class RunConfig:
    source: Optional[Path] = None
    points_dir: Optional[Path] = None
    labels_dir: Optional[Path] = None
    scan_list: Optional[Path] = None
    class_map: ClassMap = field(default_factory=default_class_map)
    output_dir: Optional[Path] = None
    models: List[Tuple[str, Path]] = field(default_factory=list)
    segmentation: SegmentationParams = field(default_factory=SegmentationParams)
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    start_step: int = 0
    init_params: Optional[Path] = None
    segments_dir: Optional[Path] = None
    pseudo_labels_dir: Optional[Path] = None
    knn: KnnParams = field(default_factory=KnnParams)
    knn_width: int = 2048
    knn_height: int = 64
    knn_fov_up: float = math.radians(3.0)
    knn_fov_down: float = math.radians(-25.0)
    knn_input_dir: Optional[Path] = None
    pred_dir: Optional[Path] = None
    truth_class_map: Optional[ClassMap] = None
    pred_class_map: Optional[ClassMap] = None  # None: predictions are already target ids
    seed: int = 0
    workers: int = 1

    def require(self, *names: str) -> None:
        for name in names:
            if getattr(self, name) in (None, []):
                raise ConfigError(f"missing required config key for this command: {_KEY_NAMES.get(name, name)}")

    @property
    def segments_path(self) -> Path:
        return self.segments_dir or self.output_dir / "segments"

    @property
    def pseudo_path(self) -> Path:
        return self.pseudo_labels_dir or self.output_dir / "pseudo"


_KEY_NAMES = {
    "points_dir": "data.points_dir",
    "labels_dir": "data.labels_dir",
    "scan_list": "data.scan_list",
    "output_dir": "data.output_dir",
    "models": "[models]",
    "knn_input_dir": "knn.input_dir",
    "pred_dir": "eval.pred_dir",
}


def _parse_scalar(kind, raw: str, key: str):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None
    raise AssertionError(kind)


def _parse_tuple(raw: str, key: str, length: int) -> tuple:
    parts = [p for p in raw.replace(",", " ").split() if p]
    if len(parts) != length:
        raise ConfigError(f"{key}: expected {length} comma-separated numbers, got {raw!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as numbers") from None


def _resolve(base: Path, raw: str) -> Path:
    p = Path(raw).expanduser()
    return p if p.is_absolute() else base / p


def _path(base: Path, raw: str, kind: str, key: str) -> Path:
    p = _resolve(base, raw)
    if kind == "dir" and not p.is_dir():
        raise ConfigError(f"{key}: directory does not exist: {p}")
    if kind == "file" and not p.is_file():
        raise ConfigError(f"{key}: file does not exist: {p}")
    return p


def _class_map(base: Path, raw: str, key: str) -> ClassMap:
    raw = raw.strip()
    if raw.startswith(BUILTIN_PREFIX):
        name = raw[len(BUILTIN_PREFIX):]
        try:
            return default_class_map(name)
        except FileNotFoundError:
            raise ConfigError(f"{key}: unknown builtin class map {name!r}") from None
    return load_class_map(_path(base, raw, "file", key))


def _augmentation(section: Dict[str, str], seed: int) -> AugmentationSpec:
    kwargs = {}
    tuples = {"crop_extent": 3, "dropout_extent": 3, "rotation_z_range": 2, "scale_range": 2, "flip_probability": 2}
    for key, raw in section.items():
        name = f"augmentation.{key}"
        if key in tuples:
            kwargs[key] = _parse_tuple(raw, name, tuples[key])
        elif key == "crop_enabled":
            kwargs[key] = _parse_scalar(bool, raw, name)
        elif key == "dropout_cuboids":
            kwargs[key] = _parse_scalar(int, raw, name)
        else:
            kwargs[key] = _parse_scalar(float, raw, name)
    try:
        return AugmentationSpec(rng_seed=seed, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"[augmentation]: {exc}") from None


def parse_config(text: str, base_dir=".", overrides: Sequence[str] = (), source=None) -> RunConfig:
    parser = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",), strict=True
    )
    parser.optionxform = str  # keep model names case-sensitive
    try:
        parser.read_string(text, source=str(source or "<config>"))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None

    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key.strip(), value.strip())

    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")

    base = Path(base_dir)
    cfg = RunConfig(source=Path(source) if source else None)
    sec = {s: dict(parser.items(s)) for s in parser.sections()}

    run = sec.get("run", {})
    for key, raw in run.items():
        if key not in _RUN_KEYS:
            raise ConfigError(f"unknown config key run.{key}")
        setattr(cfg, key, _parse_scalar(_RUN_KEYS[key], raw, f"run.{key}"))
    if cfg.workers < 1:
        raise ConfigError("run.workers must be >= 1")

    for key, raw in sec.get("data", {}).items():
        name = f"data.{key}"
        kind = _DATA_KEYS.get(key)
        if kind is None:
            raise ConfigError(f"unknown config key {name}")
        if kind == "map":
            cfg.class_map = _class_map(base, raw, name)
        elif kind == "outdir":
            cfg.output_dir = _resolve(base, raw)
        else:
            setattr(cfg, key, _path(base, raw, kind, name))

    models = dict(sec.get("models", {}))
    order = models.pop("order", None)
    model_paths = {name: _path(base, raw, "dir", f"models.{name}") for name, raw in models.items()}
    if order is not None:
        names = [n for n in order.replace(",", " ").split() if n]
        unknown = [n for n in names if n not in model_paths]
        if unknown:
            raise ConfigError(f"models.order names undeclared models: {unknown}")
        if sorted(names) != sorted(model_paths) or len(set(names)) != len(names):
            raise ConfigError("models.order must list every declared model exactly once")
    else:
        names = list(model_paths)
    cfg.models = [(n, model_paths[n]) for n in names]

    seg_kwargs = {}
    for key, raw in sec.get("segmentation", {}).items():
        if key not in _SEG_KEYS:
            raise ConfigError(f"unknown config key segmentation.{key}")
        kind = int if _SEG_KEYS[key] in (int, "int") else float
        seg_kwargs[key] = _parse_scalar(kind, raw, f"segmentation.{key}")
    try:
        cfg.segmentation = SegmentationParams(rng_seed=cfg.seed, **seg_kwargs)
    except ValueError as exc:
        raise ConfigError(f"[segmentation]: {exc}") from None

    aug = sec.get("augmentation", {})
    for key in aug:
        if key not in _AUG_KEYS:
            raise ConfigError(f"unknown config key augmentation.{key}")
    cfg.augmentation = _augmentation(aug, cfg.seed)

    train_kwargs = {}
    for key, raw in sec.get("train", {}).items():
        name = f"train.{key}"
        kind = _TRAIN_KEYS.get(key)
        if kind is None:
            raise ConfigError(f"unknown config key {name}")
        if key == "start_step":
            cfg.start_step = _parse_scalar(int, raw, name)
        elif key == "init_params":
            cfg.init_params = _path(base, raw, "file", name)
        elif key in ("segments_dir", "pseudo_labels_dir"):
            # written by one command, read by another: existence is checked by the reader
            setattr(cfg, key, _resolve(base, raw))
        else:
            train_kwargs[key] = _parse_scalar(kind, raw, name)
    try:
        cfg.train = TrainConfig(rng_seed=cfg.seed, **train_kwargs)
    except ValueError as exc:
        raise ConfigError(f"[train]: {exc}") from None

    knn_kwargs = {}
    for key, raw in sec.get("knn", {}).items():
        name = f"knn.{key}"
        kind = _KNN_KEYS.get(key)
        if kind is None:
            raise ConfigError(f"unknown config key {name}")
        if key == "input_dir":
            cfg.knn_input_dir = _path(base, raw, "dir", name)
        elif key in ("width", "height"):
            setattr(cfg, f"knn_{key}", _parse_scalar(int, raw, name))
        elif key in ("fov_up_deg", "fov_down_deg"):
            setattr(cfg, f"knn_{key[:-4]}", math.radians(_parse_scalar(float, raw, name)))
        else:
            knn_kwargs[key] = _parse_scalar(kind, raw, name)
    try:
        cfg.knn = KnnParams(**knn_kwargs)
    except ValueError as exc:
        raise ConfigError(f"[knn]: {exc}") from None

    for key, raw in sec.get("eval", {}).items():
        name = f"eval.{key}"
        kind = _EVAL_KEYS.get(key)
        if kind is None:
            raise ConfigError(f"unknown config key {name}")
        if key == "pred_dir":
            cfg.pred_dir = _path(base, raw, "dir", name)
        elif key == "truth_class_map":
            cfg.truth_class_map = _class_map(base, raw, name)
        elif raw.strip().lower() != "target":
            cfg.pred_class_map = _class_map(base, raw, name)
    return cfg


def load_config(path, overrides: Sequence[str] = ()) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path.parent, overrides, source=path)
