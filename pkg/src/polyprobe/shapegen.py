"""Convex polygon sampling, rasterization and dataset generation.

Polygons are inscribed in an ellipse centred in the image.  The full turn is
split into ``n`` equal sectors and one vertex is drawn per sector, keeping a
margin of half the minimum segment angle on both sides of every sector
boundary, so that any two consecutive vertices are at least
``min_segment_angle`` degrees apart as seen from the ellipse centre.

Pixel ``(row i, col j)`` has its centre at ``(x, y) = (j + 0.5, i + 0.5)``.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import DegenerateInputError, InvalidSpecError, InvalidStateError

CLASS_NAMES = ("triangle", "quadrilateral", "pentagon")
SUPPORTED_VERTICES = (3, 4, 5)
_BOUNDARY_EPS = 1e-9


@dataclass(frozen=True)
class PolygonSpec:
    """Parameters of one polygon family (and of the dataset drawn from it).

    ``semi_axis_a`` / ``semi_axis_b`` default to 0.45 and 0.35 of the image
    side (at most ``image_size / 2 - 1``) when left as ``None``.
    """

    n_vertices: int
    min_segment_angle: float
    shift_to_mean: bool = False
    semi_axis_a: float | None = None
    semi_axis_b: float | None = None
    image_size: int = 32
    count: int = 1
    seed: int = 0

    def __post_init__(self):
        # capped so 16px images keep the 1-pixel margin
        cap = self.image_size / 2 - 1
        if self.semi_axis_a is None:
            object.__setattr__(self, "semi_axis_a", min(0.45 * self.image_size, cap))
        if self.semi_axis_b is None:
            object.__setattr__(self, "semi_axis_b", min(0.35 * self.image_size, cap))
        self.validate()

    def validate(self) -> None:
        n, m = self.n_vertices, self.min_segment_angle
        if int(n) != n or n < 3:
            raise InvalidSpecError(f"n_vertices must be an integer >= 3, got {n}")
        if not m > 0:
            raise InvalidSpecError(f"min_segment_angle must be > 0, got {m}")
        if n * m > 360:
            raise InvalidSpecError(
                f"infeasible polygon: n_vertices x min_segment_angle = {n} x {m:g} "
                f"= {n * m:g} > 360"
            )
        if int(self.image_size) != self.image_size or self.image_size < 16:
            raise InvalidSpecError(f"image_size must be an integer >= 16, got {self.image_size}")
        if self.count < 1:
            raise InvalidSpecError(f"count must be >= 1, got {self.count}")
        if not 0 <= self.seed < 2**64:
            raise InvalidSpecError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        limit = self.image_size / 2 - 1
        for name in ("semi_axis_a", "semi_axis_b"):
            v = getattr(self, name)
            if not 0 < v <= limit:
                raise InvalidSpecError(
                    f"{name}={v:g} must lie in (0, {limit:g}] to fit a {self.image_size}px "
                    "image with a 1-pixel margin"
                )

    @property
    def label(self) -> int:
        return self.n_vertices - 3

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PolygonSpec":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class Polygon:
    """Ordered counter-clockwise vertices plus the centre they were drawn around."""

    vertices: np.ndarray
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 2)
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def __len__(self):
        return len(self.vertices)


def _coords(polygon) -> np.ndarray:
    v = polygon.vertices if isinstance(polygon, Polygon) else np.asarray(polygon, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64).reshape(-1, 2)
    if len(v) < 3:
        raise DegenerateInputError(f"a polygon needs at least 3 vertices, got {len(v)}")
    return v


def ellipse_radius(a: float, b: float, theta: np.ndarray) -> np.ndarray:
    """Distance from the centre to the ellipse boundary along polar angle ``theta`` (radians)."""
    return a * b / np.hypot(b * np.cos(theta), a * np.sin(theta))


def sample_polygon(spec: PolygonSpec, rng: np.random.Generator) -> Polygon:
    spec.validate()
    n = spec.n_vertices
    m = float(spec.min_segment_angle)
    width = 360.0 / n
    lo = np.arange(n) * width + m / 2
    hi = np.maximum(lo, (np.arange(n) + 1) * width - m / 2)
    theta = np.radians(rng.uniform(lo, hi))
    r = ellipse_radius(spec.semi_axis_a, spec.semi_axis_b, theta)
    c = spec.image_size / 2
    verts = np.column_stack([c + r * np.cos(theta), c + r * np.sin(theta)])
    return Polygon(verts, (c, c))


def regular_polygon(n: int, radius: float = 1.0, center=(0.0, 0.0), phase: float = 0.0) -> Polygon:
    theta = phase + 2 * np.pi * np.arange(n) / n
    verts = np.column_stack([center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta)])
    return Polygon(verts, tuple(center))


# -- regularity metrics -----------------------------------------------------


def edge_vectors(polygon) -> np.ndarray:
    v = _coords(polygon)
    return np.roll(v, -1, axis=0) - v


def area(polygon) -> float:
    v = _coords(polygon)
    x, y = v[:, 0], v[:, 1]
    return abs(0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


def perimeter(polygon) -> float:
    return float(np.linalg.norm(edge_vectors(polygon), axis=1).sum())


def area_perimeter_ratio(polygon) -> float:
    return area(polygon) / perimeter(polygon)


def interior_angles(polygon) -> np.ndarray:
    """Interior angle at every vertex, in degrees (convex polygons)."""
    v = _coords(polygon)
    to_prev = np.roll(v, 1, axis=0) - v
    to_next = np.roll(v, -1, axis=0) - v
    cos = np.einsum("ij,ij->i", to_prev, to_next) / (
        np.linalg.norm(to_prev, axis=1) * np.linalg.norm(to_next, axis=1)
    )
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def angle_variance(polygon) -> float:
    return float(np.var(interior_angles(polygon)))


def edge_length_variance(polygon) -> float:
    return float(np.var(np.linalg.norm(edge_vectors(polygon), axis=1)))


def edge_cross_products(polygon) -> np.ndarray:
    e = edge_vectors(polygon)
    nxt = np.roll(e, -1, axis=0)
    return e[:, 0] * nxt[:, 1] - e[:, 1] * nxt[:, 0]


def is_convex(polygon) -> bool:
    cross = edge_cross_products(polygon)
    return bool(np.all(cross > 0) or np.all(cross < 0))


def central_angles(polygon: Polygon) -> np.ndarray:
    """Angle (degrees) subtended at the centre by each pair of consecutive vertices."""
    v = _coords(polygon)
    cx, cy = polygon.center
    phi = np.degrees(np.arctan2(v[:, 1] - cy, v[:, 0] - cx))
    return np.mod(np.roll(phi, -1) - phi, 360.0)


# -- rasterization ------------------------------------------------------------


def rasterize(polygon, image_size: int) -> np.ndarray:
    """Scanline fill of a convex polygon into a binary ``image_size``-square image.

    A pixel is set iff its centre lies inside the polygon or on its boundary.
    """
    v = _coords(polygon)
    if area(v) < 1e-12:
        raise DegenerateInputError("cannot rasterize a zero-area polygon")
    ys = np.arange(image_size) + 0.5
    xmin = np.full(image_size, np.inf)
    xmax = np.full(image_size, -np.inf)
    for (x0, y0), (x1, y1) in zip(v, np.roll(v, -1, axis=0)):
        rows = (ys >= min(y0, y1) - _BOUNDARY_EPS) & (ys <= max(y0, y1) + _BOUNDARY_EPS)
        if not rows.any():
            continue
        if abs(y1 - y0) > _BOUNDARY_EPS:
            t = np.clip((ys[rows] - y0) / (y1 - y0), 0.0, 1.0)
            xs_lo = xs_hi = x0 + t * (x1 - x0)
        else:
            xs_lo, xs_hi = min(x0, x1), max(x0, x1)
        xmin[rows] = np.minimum(xmin[rows], xs_lo)
        xmax[rows] = np.maximum(xmax[rows], xs_hi)
    xs = np.arange(image_size) + 0.5
    img = (xs[None, :] >= xmin[:, None] - _BOUNDARY_EPS) & (xs[None, :] <= xmax[:, None] + _BOUNDARY_EPS)
    return img.astype(np.float64)


# -- datasets ---------------------------------------------------------------


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ShapeDataset:
    """A labelled stack of grayscale images.

    ``images`` has shape ``(N, H, W)``.  ``mean_image`` is always the per-pixel
    mean of the *raw* images, so a centred dataset can be restored by adding
    it back.
    """

    images: np.ndarray
    labels: np.ndarray
    specs: tuple[PolygonSpec, ...]
    mean_image: np.ndarray = field(default=None)
    centered: bool = False

    def __post_init__(self):
        object.__setattr__(self, "images", _frozen(np.asarray(self.images, dtype=np.float64)))
        object.__setattr__(self, "labels", _frozen(np.asarray(self.labels, dtype=np.int64)))
        object.__setattr__(self, "specs", tuple(self.specs))
        if self.images.ndim != 3 or len(self.labels) != len(self.images):
            raise DegenerateInputError("images must be (N, H, W) with one label per image")
        if self.mean_image is None:
            if self.centered:
                raise InvalidStateError("a centred dataset must carry its mean image")
            object.__setattr__(self, "mean_image", self.images.mean(axis=0))
        object.__setattr__(self, "mean_image", _frozen(np.asarray(self.mean_image, dtype=np.float64)))

    def __len__(self):
        return len(self.images)

    @property
    def image_size(self) -> int:
        return self.images.shape[-1]

    @property
    def spec(self) -> PolygonSpec:
        return self.specs[0]

    def raw_images(self) -> np.ndarray:
        return self.images + self.mean_image if self.centered else self.images

    def scaled(self) -> np.ndarray:
        """Images mapped affinely onto [-1, 1].

        Raw images use ``2x - 1``; centred images are stretched from the
        dataset's global min/max.
        """
        if not self.centered:
            return 2.0 * self.images - 1.0
        lo, hi = float(self.images.min()), float(self.images.max())
        if hi - lo < 1e-12:
            return np.zeros_like(self.images)
        return 2.0 * (self.images - lo) / (hi - lo) - 1.0


def _draw_image(spec: PolygonSpec, index: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(index,)))
    return rasterize(sample_polygon(spec, rng), spec.image_size)


def generate_dataset(spec: PolygonSpec, workers: int = 1) -> ShapeDataset:
    """Draw ``spec.count`` images; image ``k`` uses a substream keyed by ``(seed, k)``."""
    spec.validate()
    idx = range(spec.count)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            imgs = list(pool.map(lambda k: _draw_image(spec, k), idx))
    else:
        imgs = [_draw_image(spec, k) for k in idx]
    ds = ShapeDataset(np.stack(imgs), np.full(spec.count, spec.label), (spec,))
    return center_dataset(ds) if spec.shift_to_mean else ds


def center_dataset(dataset: ShapeDataset) -> ShapeDataset:
    if dataset.centered:
        raise InvalidStateError("dataset is already centred")
    mean = dataset.images.mean(axis=0)
    return ShapeDataset(dataset.images - mean, dataset.labels, dataset.specs, mean, centered=True)


def combine_datasets(datasets: Sequence[ShapeDataset], seed: int, center: bool = True) -> ShapeDataset:
    """Union of several datasets (raw pixels), shuffled by ``seed``, optionally centred."""
    imgs = np.concatenate([d.raw_images() for d in datasets])
    labels = np.concatenate([d.labels for d in datasets])
    order = np.random.default_rng(seed).permutation(len(imgs))
    specs = tuple(s for d in datasets for s in d.specs)
    ds = ShapeDataset(imgs[order], labels[order], specs)
    return center_dataset(ds) if center else ds


# -- on-disk format ---------------------------------------------------------

MANIFEST = "manifest.json"
MEAN_FILE = "mean.f64"


def image_name(index: int) -> str:
    return f"img_{index:05}.png"


def write_png(path, image: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def save_dataset(dataset: ShapeDataset, directory) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for k, img in enumerate(dataset.raw_images()):
        write_png(out / image_name(k), img)
    if dataset.centered:
        dataset.mean_image.astype("<f8").tofile(out / MEAN_FILE)
    specs = [s.to_dict() for s in dataset.specs]
    manifest = {
        "format": "polyprobe-dataset",
        "version": 1,
        "count": len(dataset),
        "image_size": dataset.image_size,
        "centered": dataset.centered,
        "seed": specs[0]["seed"] if len(specs) == 1 else [s["seed"] for s in specs],
        "spec": specs[0] if len(specs) == 1 else None,
        "specs": specs,
        "labels": dataset.labels.tolist(),
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_dataset(directory) -> ShapeDataset:
    d = Path(directory)
    manifest_path = d / MANIFEST
    if not manifest_path.exists():
        raise FileNotFoundError(f"{manifest_path}: dataset manifest not found")
    manifest = json.loads(manifest_path.read_text())
    count = manifest["count"]
    raw = np.stack([read_png(d / image_name(k)) for k in range(count)])
    specs = tuple(PolygonSpec.from_dict(s) for s in manifest["specs"])
    ds = ShapeDataset(raw, manifest["labels"], specs)
    if manifest["centered"]:
        size = manifest["image_size"]
        mean = np.fromfile(d / MEAN_FILE, dtype="<f8").reshape(size, size)
        ds = ShapeDataset(raw - mean, ds.labels, specs, mean, centered=True)
    return ds


def load_image_dir(directory) -> np.ndarray:
    """All PNGs in a directory (sorted by name) as an ``(N, H, W)`` array in [0, 1]."""
    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        return np.zeros((0, 0, 0))
    return np.stack([read_png(p) for p in paths])

