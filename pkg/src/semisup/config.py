"""Run configuration: dataset spec + training knobs + output directory, read from TOML.

Layout of a config file (every key optional)::

    seed = 0                 # the only seed; drives data, split and training
    preset = "desk"          # "desk" (CPU-sized defaults) or "full"
    out_dir = "runs/default"

    [data]
    kind = "shapes"          # shapes | blobs | idx | file
    labels_per_class = 4
    ...

    [train]
    alpha = 0.1
    ...

Unknown keys anywhere raise ``ConfigError``.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from . import data as data_mod
from .data import Dataset, Split, SplitSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Invalid or unknown configuration; the CLI maps it to exit code 2."""


# The full settings (strong RandAugment-style views, EMA 0.999) assume a
# deep network and long schedules.  On a CPU-sized MLP they stall, so the
# desk preset softens the strong view and shortens the EMA horizon.
PRESETS: dict[str, dict] = {
    "full": {},
    "desk": {"ema_decay": 0.99, "strong_magnitude": 5.0, "cutout": 0.25, "epochs": 50},
}


@dataclass
class DataSpec:
    kind: str = "shapes"
    # shapes
    n_per_class: int = 304
    size: int = 32
    variant: str = "fill-color"
    # blobs
    n_classes: int = 3
    dim: int = 8
    separation: float = 0.5
    sigma: float = 0.05
    # idx / file
    images: str = ""
    labels: str = ""
    path: str = ""
    # split
    labels_per_class: int = 4
    test_fraction: float = 0.2
    test_per_class: int | None = 100
    unlabeled_per_class: int | None = 200
    include_labeled_in_unlabeled: bool = False

    def validate(self) -> None:
        if self.kind not in ("shapes", "blobs", "idx", "file"):
            raise ConfigError(f"data.kind must be shapes, blobs, idx or file, got {self.kind!r}")
        if self.kind == "idx" and not (self.images and self.labels):
            raise ConfigError("data.kind = 'idx' needs data.images and data.labels")
        if self.kind == "file" and not self.path:
            raise ConfigError("data.kind = 'file' needs data.path")
        if self.labels_per_class < 1:
            raise ConfigError("data.labels_per_class must be >= 1")
        if self.variant not in ("fill-color", "border-color"):
            raise ConfigError("data.variant must be fill-color or border-color")

    def dataset(self, seed: int) -> Dataset:
        if self.kind == "shapes":
            return data_mod.gen_shapes(self.n_per_class, self.size, self.variant, rng=seed)
        if self.kind == "blobs":
            return data_mod.gen_blobs(self.n_per_class, self.n_classes, self.dim, self.separation, rng=seed, sigma=self.sigma)
        if self.kind == "idx":
            return data_mod.load_idx(self.images, self.labels)
        return data_mod.load_dataset(self.path)

    def split(self, seed: int) -> Split:
        spec = SplitSpec(
            self.labels_per_class,
            self.test_fraction,
            seed,
            self.test_per_class,
            self.unlabeled_per_class,
            self.include_labeled_in_unlabeled,
        )
        return data_mod.split(self.dataset(seed), spec)


@dataclass
class RunConfig:
    seed: int = 0
    preset: str = "desk"
    out_dir: str = "runs/default"
    data: DataSpec = field(default_factory=DataSpec)
    train: TrainConfig = field(default_factory=TrainConfig)

    def with_overrides(self, **kw) -> RunConfig:
        """Apply flag overrides: ``seed``/``out_dir`` at top level, ``labels_per_class`` on data, rest on train."""
        kw = {k: v for k, v in kw.items() if v is not None}
        top = {k: kw.pop(k) for k in ("seed", "out_dir") if k in kw}
        data = self.data
        if "labels_per_class" in kw:
            data = replace(data, labels_per_class=kw.pop("labels_per_class"))
        if "data" in kw:
            data = replace(data, kind=kw.pop("data"))
        unknown = set(kw) - TrainConfig.field_names()
        if unknown:
            raise ConfigError(f"unknown override(s): {sorted(unknown)}")
        seed = top.get("seed", self.seed)
        try:
            train = replace(self.train, seed=seed, **kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        out = replace(self, data=data, train=train, **top)
        out.data.validate()
        return out


def _check_keys(section: str, given: dict, allowed: set[str]) -> None:
    unknown = set(given) - allowed
    if unknown:
        where = f"[{section}]" if section else "top level"
        raise ConfigError(f"unknown key(s) at {where}: {sorted(unknown)}")


def from_dict(raw: dict) -> RunConfig:
    _check_keys("", raw, {"seed", "preset", "out_dir", "data", "train"})
    seed = int(raw.get("seed", 0))
    preset = raw.get("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"preset must be one of {sorted(PRESETS)}")
    data_raw = dict(raw.get("data", {}))
    _check_keys("data", data_raw, {f.name for f in fields(DataSpec)})
    train_raw = dict(raw.get("train", {}))
    _check_keys("train", train_raw, TrainConfig.field_names() - {"seed"})
    try:
        data = DataSpec(**data_raw)
        train = TrainConfig(**{**PRESETS[preset], **train_raw, "seed": seed})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    data.validate()
    return RunConfig(seed, preset, str(raw.get("out_dir", "runs/default")), data, train)


def load(path=None) -> RunConfig:
    """Read a TOML file; ``None`` gives the documented defaults."""
    if path is None:
        return from_dict({})
    try:
        raw = tomllib.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(raw)
