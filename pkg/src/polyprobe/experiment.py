"""Sweep runner: dataset -> GAN -> samples -> Inception Scores, one cell at a time.

Output layout::

    <out_dir>/
        classifier.pprb
        report.csv, report.json
        runs/<key>/dataset/  checkpoints/  losses.csv
                   is_synthetic.csv  is_generated.csv  record.json  samples.png
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .errors import ConfigError, DivergedError, SetupError
from .gan import GanLossKind, TrainConfig, sample_scaled, train
from .metrics import (
    DEFAULT_SPLITS,
    MIN_ACCURACY,
    ISResult,
    ShapeClassifier,
    score_collection,
    train_classifier,
    write_is_csv,
)
from .shapegen import PolygonSpec, ShapeDataset, combine_datasets, generate_dataset, save_dataset, write_png

log = logging.getLogger(__name__)

COMBINED = "combined"
_KEY_RE = re.compile(r"^(?:v(\d+)|(combined))_m(true|false)_a([0-9.]+)$")


@dataclass
class SweepConfig:
    vertex_counts: tuple[int, ...] = (3, 4, 5)
    shift_options: tuple[bool, ...] = (True, False)
    angle_options: tuple[float, ...] = (20, 40, 60)
    include_combined: bool = True
    combined_shift_options: tuple[bool, ...] = (True,)
    # polygon template
    image_size: int = 32
    count: int = 2000
    semi_axis_a: float | None = None
    semi_axis_b: float | None = None
    # training template
    latent_dim: int = 64
    batch_size: int = 64
    steps: int = 4000
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    loss_kind: str = "non_saturating"
    clip_c: float = 0.01
    disc_steps_per_gen_step: int | None = None
    base_channels: int = 16
    checkpoint_every: int = 0
    # scoring
    samples_for_is: int = 2000
    n_splits: int = DEFAULT_SPLITS
    classifier_path: str | None = None
    classifier_count: int = 2000
    classifier_epochs: int = 5
    classifier_min_accuracy: float = MIN_ACCURACY
    # bookkeeping
    base_seed: int = 0
    workers: int = 1
    out_dir: str = "runs"

    def __post_init__(self):
        self.vertex_counts = tuple(int(v) for v in self.vertex_counts)
        self.shift_options = tuple(bool(s) for s in self.shift_options)
        self.angle_options = tuple(float(a) for a in self.angle_options)
        self.combined_shift_options = tuple(bool(s) for s in self.combined_shift_options)
        self.loss_kind = GanLossKind.parse(self.loss_kind).value
        if self.samples_for_is < 10 * self.n_splits:
            raise ConfigError(
                f"samples_for_is={self.samples_for_is} must be >= 10 x n_splits = {10 * self.n_splits}"
            )
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if not 0 <= self.base_seed < 2**64:
            raise ConfigError(f"base_seed must be a 64-bit unsigned integer, got {self.base_seed}")

    @property
    def grid_size(self) -> int:
        return len(self.vertex_counts) * len(self.shift_options) * len(self.angle_options)

    def cells(self) -> list[str]:
        keys = [cell_key(n, s, a) for n in self.vertex_counts for s in self.shift_options for a in self.angle_options]
        if self.include_combined:
            keys += [cell_key(COMBINED, s, a) for s in self.combined_shift_options for a in self.angle_options]
        return keys

    def polygon_spec(self, vertices: int, shift: bool, angle: float, count: int | None = None) -> PolygonSpec:
        return PolygonSpec(
            vertices, angle, shift, self.semi_axis_a, self.semi_axis_b, self.image_size,
            self.count if count is None else count, cell_seed(self.base_seed, vertices, shift, angle),
        )

    def train_config(self, seed: int) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"}
        return TrainConfig(seed=seed, **{k: getattr(self, k) for k in names})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    # -- text config ---------------------------------------------------------

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "SweepConfig":
        return cls(**parse_config_values(cls, parse_key_values(text, source), source))

    @classmethod
    def from_file(cls, path) -> "SweepConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        return cls.from_text(path.read_text(), str(path))


def parse_key_values(text: str, source: str = "<config>") -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def _parse_bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _scalar_parser(annotation: str):
    if "bool" in annotation:
        return _parse_bool
    if "int" in annotation:
        return int
    if "float" in annotation:
        return float
    return str


def parse_config_values(cls, raw: dict[str, str], source: str = "<config>") -> dict[str, Any]:
    """Convert string values to the types declared on dataclass ``cls``."""
    types = {f.name: str(f.type) for f in dataclasses.fields(cls)}
    out = {}
    for key, value in raw.items():
        if key not in types:
            raise ConfigError(f"{source}: unknown key {key!r}")
        ann = types[key]
        try:
            if value.lower() in ("none", "null", "") and "None" in ann:
                out[key] = None
            elif ann.startswith("tuple"):
                inner = _scalar_parser(ann[len("tuple"):])
                out[key] = tuple(inner(p) for p in value.split(",") if p.strip())
            else:
                out[key] = _scalar_parser(ann)(value)
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {exc}") from None
    return out


# -- keys and seeds -----------------------------------------------------------


def _angle_str(angle: float) -> str:
    angle = float(angle)
    return str(int(angle)) if angle.is_integer() else repr(angle)


def cell_key(vertices, shift: bool, angle: float) -> str:
    head = COMBINED if vertices == COMBINED else f"v{int(vertices)}"
    return f"{head}_m{str(bool(shift)).lower()}_a{_angle_str(angle)}"


def parse_cell_key(key: str) -> tuple[int | str, bool, float]:
    m = _KEY_RE.match(key)
    if not m:
        raise ConfigError(f"malformed cell key {key!r}; expected e.g. 'v3_mtrue_a20' or 'combined_mtrue_a20'")
    vertices = COMBINED if m.group(2) else int(m.group(1))
    return vertices, m.group(3) == "true", float(m.group(4))


def cell_seed(base_seed: int, vertices, shift: bool, angle: float, purpose: str = "data") -> int:
    token = f"{base_seed}|{vertices}|{str(bool(shift)).lower()}|{_angle_str(angle)}|{purpose}"
    return int.from_bytes(hashlib.blake2b(token.encode(), digest_size=8).digest(), "little")


# -- records ------------------------------------------------------------------


@dataclass
class RunRecord:
    key: str
    vertices: int | str
    mean_shift: bool
    min_segment_angle: float
    dataset_path: str
    checkpoint_path: str
    loss_curve_path: str
    is_synthetic: ISResult | None = None
    is_generated: ISResult | None = None
    n_generated: int = 0
    duration_s: float = 0.0
    status: str = "pending"
    last_valid_step: int | None = None

    def to_dict(self, timings: bool = True) -> dict:
        d = dataclasses.asdict(self)
        d["is_synthetic"] = self.is_synthetic.to_dict() if self.is_synthetic else None
        d["is_generated"] = self.is_generated.to_dict() if self.is_generated else None
        if not timings:
            del d["duration_s"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        d = dict(d)
        for k in ("is_synthetic", "is_generated"):
            d[k] = ISResult.from_dict(d[k]) if d.get(k) else None
        return cls(**d)


@dataclass
class SweepReport:
    records: list[RunRecord]
    classifier: dict = field(default_factory=dict)
    version: str = __version__
    base_seed: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        keys = [r.key for r in self.records]
        if len(set(keys)) != len(keys):
            raise ConfigError("duplicate cell keys in report")

    def record(self, key: str) -> RunRecord:
        for r in self.records:
            if r.key == key:
                return r
        raise KeyError(key)

    def to_json(self) -> str:
        body = {
            "version": self.version,
            "base_seed": self.base_seed,
            "classifier": self.classifier,
            "config": self.config,
            "records": [r.to_dict(timings=False) for r in self.records],
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SweepReport":
        d = json.loads(text)
        return cls(
            [RunRecord.from_dict(r) for r in d["records"]],
            d.get("classifier", {}), d.get("version", __version__), d.get("base_seed", 0), d.get("config", {}),
        )

    def is_rows(self):
        """Rows in the metrics CSV schema (synthetic then generated per record)."""
        for r in self.records:
            for source, res in (("synthetic", r.is_synthetic), ("generated", r.is_generated)):
                yield r.vertices, r.mean_shift, r.min_segment_angle, source, res

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        rows = [row for row in self.is_rows() if row[4] is not None]
        write_is_csv(out / "report.csv", rows)
        (out / "report.json").write_text(self.to_json())


def load_report(run_dir) -> SweepReport:
    run_dir = Path(run_dir)
    path = run_dir / "report.json"
    if path.exists():
        return SweepReport.from_json(path.read_text())
    records = [RunRecord.from_dict(json.loads(p.read_text())) for p in sorted(run_dir.glob("runs/*/record.json"))]
    if not records:
        raise FileNotFoundError(f"{run_dir}: no report.json and no run records")
    return SweepReport(records)


# -- classifier -----------------------------------------------------------------


def classifier_path(config: SweepConfig) -> Path:
    return Path(config.classifier_path) if config.classifier_path else Path(config.out_dir) / "classifier.pprb"


def ensure_classifier(config: SweepConfig) -> ShapeClassifier:
    """Load the configured classifier, or train one on the grid's unshifted, smallest-angle datasets."""
    path = classifier_path(config)
    if path.exists():
        return ShapeClassifier.load(path)
    if config.classifier_path:
        raise SetupError(f"classifier file {path} does not exist")
    if False not in config.shift_options:
        raise SetupError("no classifier given and the grid has no shift=false datasets to train one")
    angle = min(config.angle_options)
    datasets = [
        generate_dataset(config.polygon_spec(n, False, angle, count=config.classifier_count))
        for n in sorted(set(config.vertex_counts) | {3, 4, 5})
    ]
    log.info("training classifier on %d images", sum(len(d) for d in datasets))
    clf = train_classifier(
        datasets, seed=cell_seed(config.base_seed, "classifier", False, angle),
        min_accuracy=config.classifier_min_accuracy, epochs=config.classifier_epochs,
        min_per_class=min(1000, config.classifier_count),
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    clf.save(path)
    return clf


def classifier_meta(clf: ShapeClassifier, path: Path) -> dict:
    return {
        "path": path.name,
        "val_accuracy": clf.val_accuracy,
        "image_size": clf.image_size,
        "n_classes": clf.n_classes,
        "seed": clf.seed,
    }


# -- cells ----------------------------------------------------------------------


def cell_dataset(config: SweepConfig, key: str) -> ShapeDataset:
    vertices, shift, angle = parse_cell_key(key)
    if vertices != COMBINED:
        return generate_dataset(config.polygon_spec(vertices, shift, angle))
    # the per-shape cells with the same (shift, angle); combining uses their raw pixels
    parts = [generate_dataset(config.polygon_spec(n, shift, angle)) for n in (3, 4, 5)]
    return combine_datasets(parts, cell_seed(config.base_seed, COMBINED, shift, angle), center=shift)


def run_single(key: str, config: SweepConfig, classifier: ShapeClassifier | None = None, resume: bool = True) -> RunRecord:
    vertices, shift, angle = parse_cell_key(key)
    if vertices != COMBINED:
        config.polygon_spec(vertices, shift, angle)  # feasibility check before any I/O
    cell_dir = Path(config.out_dir) / "runs" / key
    record_path = cell_dir / "record.json"
    if resume and record_path.exists():
        rec = RunRecord.from_dict(json.loads(record_path.read_text()))
        if rec.status in ("done", "diverged"):
            log.info("%s: already %s, skipping", key, rec.status)
            return rec
    if classifier is None:
        classifier = ensure_classifier(config)

    t0 = time.perf_counter()
    cell_dir.mkdir(parents=True, exist_ok=True)
    rec = RunRecord(
        key, vertices, shift, angle,
        dataset_path=f"runs/{key}/dataset", checkpoint_path=f"runs/{key}/checkpoints/final.pprb",
        loss_curve_path=f"runs/{key}/losses.csv",
    )
    dataset = cell_dataset(config, key)
    save_dataset(dataset, cell_dir / "dataset")
    rec.is_synthetic = score_collection(classifier, dataset.scaled(), config.n_splits)
    write_is_csv(cell_dir / "is_synthetic.csv", [(vertices, shift, angle, "synthetic", rec.is_synthetic)])

    tcfg = config.train_config(cell_seed(config.base_seed, vertices, shift, angle, "train"))
    log.info("%s: training %s GAN for %d steps", key, tcfg.loss_kind.value, tcfg.steps)
    try:
        model, _ = train(dataset, tcfg, out_dir=cell_dir)
    except DivergedError as exc:
        log.warning("%s: training diverged after step %d", key, exc.last_valid_step)
        rec.status, rec.last_valid_step = "diverged", exc.last_valid_step
    else:
        rng = np.random.default_rng(cell_seed(config.base_seed, vertices, shift, angle, "sample"))
        samples = sample_scaled(model, config.samples_for_is, rng)
        rec.n_generated = len(samples)
        rec.is_generated = score_collection(classifier, samples, config.n_splits)
        write_is_csv(cell_dir / "is_generated.csv", [(vertices, shift, angle, "generated", rec.is_generated)])
        write_png(cell_dir / "samples.png", _grid((samples[:64] + 1.0) / 2.0))
        rec.status = "done"
    rec.duration_s = time.perf_counter() - t0
    record_path.write_text(json.dumps(rec.to_dict(), indent=2, sort_keys=True) + "\n")
    return rec


def _grid(images: np.ndarray, cols: int = 8) -> np.ndarray:
    n, h, w = images.shape
    rows = -(-n // cols)
    canvas = np.zeros((rows * h, cols * w))
    for k, img in enumerate(images):
        r, c = divmod(k, cols)
        canvas[r * h:(r + 1) * h, c * w:(c + 1) * w] = img
    return canvas


def _run_cell_worker(args):
    key, config_dict, resume = args
    logging.basicConfig(level=logging.INFO)
    config = SweepConfig(**config_dict)
    return run_single(key, config, ShapeClassifier.load(classifier_path(config)), resume)


def run_sweep(config: SweepConfig, resume: bool = True, workers: int | None = None) -> SweepReport:
    """Run every grid cell (plus combined cells) and write ``report.csv`` / ``report.json``."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clf = ensure_classifier(config)
    keys = config.cells()
    workers = workers or config.workers
    if workers > 1:
        if not classifier_path(config).exists():
            clf.save(classifier_path(config))
        jobs = [(k, config.to_dict(), resume) for k in keys]
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_run_cell_worker, jobs))
    else:
        records = [run_single(k, config, clf, resume) for k in keys]
    report = SweepReport(
        records, classifier_meta(clf, classifier_path(config)), __version__, config.base_seed,
        {k: v for k, v in config.to_dict().items() if k not in ("workers", "out_dir")},
    )
    report.write(out)
    return report
