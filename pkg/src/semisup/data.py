"""Dataset generators, IDX ingestion, container export and labeled/unlabeled/test splits."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import Sample
from .container import read_container, write_container

SHAPE_NAMES = ("circle", "triangle", "pentagon")
DATASET_MAGIC = b"SSDS"
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IngestionError(ValueError):
    """Malformed input file; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class Dataset:
    X: np.ndarray  # (N, D) or (N, H, W, ch), values in [0, 1]
    y: np.ndarray  # (N,) int64
    ids: np.ndarray  # (N,) int64, unique
    n_classes: int
    kind: str

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if not (len(self.X) == len(self.y) == len(self.ids)):
            raise ValueError("X, y and ids must have the same length")
        if len(np.unique(self.ids)) != len(self.ids):
            raise ValueError("sample ids must be unique")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self.X.shape[1:]

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.sample_shape))

    @property
    def samples(self) -> list[Sample]:
        return [Sample(int(i), x, int(c)) for i, x, c in zip(self.ids, self.X, self.y)]

    def subset(self, index) -> Dataset:
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.X[index], self.y[index], self.ids[index], self.n_classes, self.kind)


@dataclass
class UnlabeledSet:
    """What the trainer sees of X_u: ids and payloads, no labels."""

    X: np.ndarray
    ids: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def _regular_polygon_mask(yy, xx, cy, cx, r, n_sides, phase):
    """Pixel-center inside test against the n half-planes of a regular polygon."""
    inside = np.ones_like(yy, dtype=bool)
    apothem = r * np.cos(np.pi / n_sides)
    for k in range(n_sides):
        # outward normal of edge k sits between vertices k and k+1
        ang = phase + (2 * k + 1) * np.pi / n_sides
        inside &= (xx - cx) * np.cos(ang) + (yy - cy) * np.sin(ang) <= apothem
    return inside


def shape_mask(kind: int, size: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    if kind == 0:
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    n_sides = 3 if kind == 1 else 5
    # a vertex points straight up
    return _regular_polygon_mask(yy, xx, cy, cx, r, n_sides, -np.pi / 2)


def render_shape(kind: int, size: int, cy, cx, r, color, variant: str, thickness: float = 2.0) -> np.ndarray:
    outer = shape_mask(kind, size, cy, cx, r)
    if variant == "fill-color":
        mask = outer
    elif variant == "border-color":
        mask = outer & ~shape_mask(kind, size, cy, cx, max(r - thickness, 0.0))
    else:
        raise ValueError(f"unknown shapes variant {variant!r}")
    img = np.zeros((size, size, 3))
    img[mask] = color
    return img


def gen_shapes(
    n_per_class: int,
    size: int = 32,
    variant: str = "fill-color",
    rng: np.random.Generator | int = 0,
    radius: tuple[float, float] = (0.3, 0.38),
    max_offset: float = 0.06,
) -> Dataset:
    """Circles, triangles and pentagons at random position, scale and color.

    ``variant`` applies the random color to the outline only ("border-color")
    or to the whole shape ("fill-color").  Radius is a fraction of ``size``;
    the center moves uniformly by up to ``max_offset * size`` while keeping
    the shape inside the canvas.
    """
    if size < 16:
        raise ValueError("size must be >= 16")
    rng = np.random.default_rng(rng)
    n = 3 * n_per_class
    X = np.empty((n, size, size, 3))
    y = np.repeat(np.arange(3), n_per_class)
    for i in range(n):
        r = rng.uniform(*radius) * size
        room = max(0.0, min(max_offset * size, size / 2 - r - 1))
        cy = size / 2 + rng.uniform(-room, room)
        cx = size / 2 + rng.uniform(-room, room)
        color = rng.uniform(0.35, 1.0, size=3)
        X[i] = render_shape(int(y[i]), size, cy, cx, r, color, variant)
    order = rng.permutation(n)
    return Dataset(X[order], y[order], np.arange(n), 3, "shapes")


def gen_blobs(
    n_per_class: int,
    n_classes: int,
    dim: int,
    separation: float = 0.5,
    rng: np.random.Generator | int = 0,
    sigma: float = 0.05,
    max_tries: int = 10_000,
) -> Dataset:
    """Isotropic Gaussian clusters in [0, 1]^dim with centers at least ``separation`` apart.

    Centers are drawn in [0.2, 0.8]^dim by rejection; samples are clipped to [0, 1].
    """
    if separation <= 0:
        raise ValueError("separation must be > 0")
    rng = np.random.default_rng(rng)
    centers: list[np.ndarray] = []
    tries = 0
    while len(centers) < n_classes:
        tries += 1
        if tries > max_tries:
            raise ValueError(f"could not place {n_classes} centers {separation} apart in {dim} dims")
        c = rng.uniform(0.2, 0.8, size=dim)
        if all(np.linalg.norm(c - o) >= separation for o in centers):
            centers.append(c)
    y = np.repeat(np.arange(n_classes), n_per_class)
    X = np.clip(np.stack(centers)[y] + rng.normal(0.0, sigma, size=(len(y), dim)), 0.0, 1.0)
    order = rng.permutation(len(y))
    return Dataset(X[order], y[order], np.arange(len(y)), n_classes, "blobs")


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------


def _idx_header(data: bytes, expected_magic: int, what: str) -> tuple[list[int], int]:
    if len(data) < 4:
        raise IngestionError(f"{what}: file too short for IDX magic", len(data))
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic != expected_magic:
        raise IngestionError(f"{what}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    ndim = magic & 0xFF
    end = 4 + 4 * ndim
    if len(data) < end:
        raise IngestionError(f"{what}: truncated dimension header", len(data))
    dims = list(struct.unpack_from(f">{ndim}I", data, 4))
    return dims, end


def parse_idx_images(data: bytes) -> np.ndarray:
    dims, off = _idx_header(data, IDX_IMAGES_MAGIC, "images")
    need = int(np.prod(dims))
    if len(data) - off < need:
        raise IngestionError(f"images: expected {need} pixel bytes, found {len(data) - off}", len(data))
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=off).reshape(dims)


def parse_idx_labels(data: bytes) -> np.ndarray:
    dims, off = _idx_header(data, IDX_LABELS_MAGIC, "labels")
    need = dims[0]
    if len(data) - off < need:
        raise IngestionError(f"labels: expected {need} label bytes, found {len(data) - off}", len(data))
    labels = np.frombuffer(data, dtype=np.uint8, count=need, offset=off)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise IngestionError(f"labels: value {labels[bad[0]]} outside 0..9", off + int(bad[0]))
    return labels


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair into a grayscale (N, H, W, 1) dataset scaled to [0, 1]."""
    images = parse_idx_images(Path(images_path).read_bytes())
    labels = parse_idx_labels(Path(labels_path).read_bytes())
    if len(images) != len(labels):
        raise IngestionError(f"count mismatch: {len(images)} images vs {len(labels)} labels", 4)
    X = images.astype(np.float64)[..., None] / 255.0
    return Dataset(X, labels.astype(np.int64), np.arange(len(labels)), 10, "idx-image")


def encode_idx_images(images: np.ndarray) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    header = struct.pack(">I", 0x00000800 | images.ndim) + struct.pack(f">{images.ndim}I", *images.shape)
    return header + images.tobytes()


def encode_idx_labels(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes()


# ---------------------------------------------------------------------------
# container export
# ---------------------------------------------------------------------------


def save_dataset(ds: Dataset, path) -> None:
    write_container(path, DATASET_MAGIC, {"kind": ds.kind, "n_classes": ds.n_classes}, {"X": ds.X, "y": ds.y, "ids": ds.ids})


def load_dataset(path) -> Dataset:
    meta, arrays = read_container(path, DATASET_MAGIC)
    return Dataset(arrays["X"], arrays["y"], arrays["ids"], int(meta["n_classes"]), meta["kind"])


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    labels_per_class: int
    test_fraction: float = 0.2
    seed: int = 0
    test_per_class: int | None = None  # overrides test_fraction when set
    unlabeled_per_class: int | None = None  # cap; None keeps the whole remainder
    include_labeled_in_unlabeled: bool = False


@dataclass
class Split:
    labeled: Dataset
    unlabeled: UnlabeledSet
    test: Dataset
    unlabeled_truth: np.ndarray  # metrics only; never handed to the trainer

    def __iter__(self):
        return iter((self.labeled, self.unlabeled, self.test))


def split(ds: Dataset, spec: SplitSpec) -> Split:
    """Class-balanced labeled subset, disjoint test split, the rest unlabeled."""
    if spec.labels_per_class < 1:
        raise ValueError("labels_per_class must be >= 1")
    rng = np.random.default_rng(spec.seed)
    lab, unl, test = [], [], []
    for c in range(ds.n_classes):
        idx = rng.permutation(np.flatnonzero(ds.y == c))
        n_test = spec.test_per_class if spec.test_per_class is not None else int(round(spec.test_fraction * len(idx)))
        if len(idx) < n_test + spec.labels_per_class:
            raise ValueError(
                f"class {c} has {len(idx)} samples; need {n_test} test + {spec.labels_per_class} labeled"
            )
        test.extend(idx[:n_test])
        lab.extend(idx[n_test : n_test + spec.labels_per_class])
        rest = idx[n_test + spec.labels_per_class :]
        if spec.unlabeled_per_class is not None:
            if len(rest) < spec.unlabeled_per_class:
                raise ValueError(f"class {c} has only {len(rest)} samples left for the unlabeled set")
            rest = rest[: spec.unlabeled_per_class]
        unl.extend(rest)
    if spec.include_labeled_in_unlabeled:
        unl = list(lab) + list(unl)
    lab, unl, test = (np.sort(np.asarray(a, dtype=np.int64)) for a in (lab, unl, test))
    u = ds.subset(unl)
    return Split(ds.subset(lab), UnlabeledSet(u.X, u.ids), ds.subset(test), u.y)
