"""DCGAN-style generator/discriminator, adversarial losses and the training loop."""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import Tape, Tensor, adam_step, load_checkpoint, save_checkpoint
from .autodiff import ops
from .autodiff.tensor import as_tensor
from .autodiff.layers import Activation, BatchNorm, Conv2d, ConvTranspose2d, Network, Reshape
from .autodiff.optim import AdamState
from .errors import ConfigError, DivergedError
from .shapegen import ShapeDataset

log = logging.getLogger(__name__)

SUPPORTED_SIZES = (16, 32, 64)
PROB_EPS = 1e-7


class GanLossKind(str, enum.Enum):
    MINIMAX = "minimax"
    NON_SATURATING = "non_saturating"
    WASSERSTEIN = "wasserstein"
    LEAST_SQUARES = "least_squares"

    @property
    def head(self) -> str:
        return "sigmoid" if self in (GanLossKind.MINIMAX, GanLossKind.NON_SATURATING) else "linear"

    @classmethod
    def parse(cls, name) -> "GanLossKind":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower()
        key = {"ns": "non_saturating", "wgan": "wasserstein", "lsgan": "least_squares"}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(
                f"unknown loss kind {name!r}; expected one of minimax, ns, wgan, lsgan"
            ) from None


@dataclass
class TrainConfig:
    latent_dim: int = 64
    batch_size: int = 64
    steps: int = 4000
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    loss_kind: GanLossKind = GanLossKind.NON_SATURATING
    clip_c: float = 0.01
    disc_steps_per_gen_step: int | None = None
    seed: int = 0
    base_channels: int = 16
    checkpoint_every: int = 0

    def __post_init__(self):
        self.loss_kind = GanLossKind.parse(self.loss_kind)
        if self.disc_steps_per_gen_step is None:
            self.disc_steps_per_gen_step = 5 if self.loss_kind is GanLossKind.WASSERSTEIN else 1
        for name in ("latent_dim", "batch_size", "disc_steps_per_gen_step", "base_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.steps < 0 or self.checkpoint_every < 0:
            raise ConfigError("steps and checkpoint_every must be non-negative")
        if self.loss_kind is GanLossKind.WASSERSTEIN and not self.clip_c > 0:
            raise ConfigError(f"clip_c must be > 0 for wasserstein loss, got {self.clip_c}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_kind"] = self.loss_kind.value
        return d


def _upsamplings(image_size: int) -> int:
    if image_size not in SUPPORTED_SIZES:
        raise ConfigError(f"image_size must be one of {SUPPORTED_SIZES}, got {image_size}")
    return int(math.log2(image_size // 4))


def build_generator(latent_dim: int, image_size: int, rng: np.random.Generator, base_channels: int = 16) -> Network:
    """Latent ``(N, latent_dim)`` -> image ``(N, 1, S, S)`` in [-1, 1]."""
    n_up = _upsamplings(image_size)
    c = base_channels * 2 ** (n_up - 1)
    layers = [
        ("in", Reshape(latent_dim, 1, 1)),
        ("project", ConvTranspose2d(latent_dim, c, 4, 1, 0, rng)),
        ("project_bn", BatchNorm(c, rng)),
        ("project_act", Activation("relu")),
    ]
    for i in range(n_up - 1):
        layers += [
            (f"up{i}", ConvTranspose2d(c, c // 2, 4, 2, 1, rng)),
            (f"up{i}_bn", BatchNorm(c // 2, rng)),
            (f"up{i}_act", Activation("relu")),
        ]
        c //= 2
    layers += [("out", ConvTranspose2d(c, 1, 4, 2, 1, rng, bias=True)), ("out_act", Activation("tanh"))]
    return Network(layers, role="generator", latent_dim=latent_dim, image_size=image_size)


def build_discriminator(image_size: int, loss_kind, rng: np.random.Generator, base_channels: int = 16) -> Network:
    """Image ``(N, 1, S, S)`` -> score ``(N, 1)``; no batchnorm on the first block."""
    kind = GanLossKind.parse(loss_kind)
    n_down = _upsamplings(image_size)
    c = base_channels
    layers = [("in", Conv2d(1, c, 4, 2, 1, rng, bias=True)), ("in_act", Activation("leaky_relu"))]
    for i in range(n_down - 1):
        layers += [
            (f"down{i}", Conv2d(c, 2 * c, 4, 2, 1, rng)),
            (f"down{i}_bn", BatchNorm(2 * c, rng)),
            (f"down{i}_act", Activation("leaky_relu")),
        ]
        c *= 2
    layers += [
        ("head", Conv2d(c, 1, 4, 1, 0, rng, bias=True)),
        ("flat", Reshape(1)),
        ("head_act", Activation("sigmoid" if kind.head == "sigmoid" else "identity")),
    ]
    return Network(layers, role="discriminator", loss_kind=kind, head=kind.head, image_size=image_size)


@dataclass
class GanModel:
    generator: Network
    discriminator: Network
    loss_kind: GanLossKind
    latent_dim: int
    image_size: int

    @classmethod
    def build(cls, config: TrainConfig, image_size: int) -> "GanModel":
        g_seq, d_seq = np.random.SeedSequence(config.seed).spawn(2)
        gen = build_generator(config.latent_dim, image_size, np.random.default_rng(g_seq), config.base_channels)
        disc = build_discriminator(image_size, config.loss_kind, np.random.default_rng(d_seq), config.base_channels)
        return cls(gen, disc, config.loss_kind, config.latent_dim, image_size)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {f"gen.{k}": v for k, v in self.generator.state_dict().items()}
        state.update({f"disc.{k}": v for k, v in self.discriminator.state_dict().items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.generator.load_state_dict({k[4:]: v for k, v in state.items() if k.startswith("gen.")})
        self.discriminator.load_state_dict({k[5:]: v for k, v in state.items() if k.startswith("disc.")})

    def save(self, path) -> Path:
        return save_checkpoint(path, self.state_dict())

    def load(self, path) -> "GanModel":
        self.load_state_dict(load_checkpoint(path))
        return self

    def architecture(self) -> dict:
        return {"generator": self.generator.describe(), "discriminator": self.discriminator.describe()}


# -- losses -------------------------------------------------------------------


def _check_head(kind: GanLossKind, head: str | None, *outputs: Tensor) -> None:
    if head is not None and head != kind.head:
        raise ConfigError(f"{kind.value} loss needs a {kind.head} discriminator head, got {head}")
    if kind.head == "sigmoid":
        for t in outputs:
            if t.size and (t.values.min() < 0.0 or t.values.max() > 1.0):
                raise ConfigError(
                    f"{kind.value} loss expects probabilities in [0, 1]; "
                    "got raw scores (linear head?)"
                )


def _prob(d: Tensor) -> Tensor:
    return ops.clamp(d, PROB_EPS, 1.0 - PROB_EPS)


def disc_loss(kind, d_real, d_fake, head: str | None = None) -> Tensor:
    kind = GanLossKind.parse(kind)
    d_real, d_fake = as_tensor(d_real), as_tensor(d_fake)
    _check_head(kind, head, d_real, d_fake)
    if kind.head == "sigmoid":
        return ops.sub(
            -ops.mean(ops.log(_prob(d_real))),
            ops.mean(ops.log(1.0 - _prob(d_fake))),
        )
    if kind is GanLossKind.WASSERSTEIN:
        return ops.mean(d_fake) - ops.mean(d_real)
    r = d_real - 1.0
    return 0.5 * ops.mean(r * r) + 0.5 * ops.mean(d_fake * d_fake)


def gen_loss(kind, d_fake, head: str | None = None) -> Tensor:
    kind = GanLossKind.parse(kind)
    d_fake = as_tensor(d_fake)
    _check_head(kind, head, d_fake)
    if kind is GanLossKind.NON_SATURATING:
        return -ops.mean(ops.log(_prob(d_fake)))
    if kind is GanLossKind.MINIMAX:
        return ops.mean(ops.log(1.0 - _prob(d_fake)))
    if kind is GanLossKind.WASSERSTEIN:
        return -ops.mean(d_fake)
    r = d_fake - 1.0
    return 0.5 * ops.mean(r * r)


def clip_weights(discriminator: Network, c: float) -> Network:
    kind = discriminator.meta.get("loss_kind")
    if kind is not GanLossKind.WASSERSTEIN:
        raise ConfigError(f"weight clipping only applies to wasserstein loss (discriminator built for {kind})")
    if not c > 0:
        raise ConfigError(f"clip bound must be positive, got {c}")
    for p in discriminator.parameters():
        p.values = np.clip(p.values, -c, c)
    return discriminator


# -- training -----------------------------------------------------------------

CURVE_HEADER = ("step", "gen_loss", "disc_loss", "d_real_mean", "d_fake_mean")


@dataclass
class LossCurve:
    step: list[int] = field(default_factory=list)
    gen_loss: list[float] = field(default_factory=list)
    disc_loss: list[float] = field(default_factory=list)
    d_real_mean: list[float] = field(default_factory=list)
    d_fake_mean: list[float] = field(default_factory=list)
    disc_updates: int = 0
    gen_updates: int = 0

    def __len__(self):
        return len(self.step)

    def append(self, step, g, d, real_mean, fake_mean) -> None:
        if self.step and step <= self.step[-1]:
            raise ValueError(f"step {step} does not follow {self.step[-1]}")
        self.step.append(int(step))
        self.gen_loss.append(float(g))
        self.disc_loss.append(float(d))
        self.d_real_mean.append(float(real_mean))
        self.d_fake_mean.append(float(fake_mean))

    def rows(self):
        return zip(self.step, self.gen_loss, self.disc_loss, self.d_real_mean, self.d_fake_mean)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CURVE_HEADER)
            for s, *vals in self.rows():
                w.writerow([s, *(repr(v) for v in vals)])
        return path

    @classmethod
    def from_csv(cls, path) -> "LossCurve":
        curve = cls()
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                curve.append(int(row["step"]), *(float(row[k]) for k in CURVE_HEADER[1:]))
        return curve


def _latents(rng: np.random.Generator, n: int, latent_dim: int) -> np.ndarray:
    return rng.standard_normal((n, latent_dim))


def train(
    dataset: ShapeDataset,
    config: TrainConfig,
    out_dir=None,
    progress: Callable[[int, LossCurve], None] | None = None,
) -> tuple[GanModel, LossCurve]:
    """Alternate ``disc_steps_per_gen_step`` critic updates with one generator update.

    Real batches are drawn with replacement from the dataset mapped onto
    [-1, 1].  With ``out_dir`` the final checkpoint, any periodic
    checkpoints and ``losses.csv`` are written there.
    """
    model = GanModel.build(config, dataset.image_size)
    curve = LossCurve()
    data_seq, latent_seq = np.random.SeedSequence(config.seed).spawn(4)[2:]
    data_rng, latent_rng = np.random.default_rng(data_seq), np.random.default_rng(latent_seq)
    real_all = dataset.scaled()[:, None, :, :]
    ckpt_dir = Path(out_dir) / "checkpoints" if out_dir is not None else None

    try:
        _train_loop(model, curve, config, real_all, data_rng, latent_rng, ckpt_dir, progress)
    except DivergedError as exc:
        exc.curve = curve
        if out_dir is not None:
            curve.to_csv(Path(out_dir) / "losses.csv")
        raise

    if out_dir is not None:
        model.save(ckpt_dir / "final.pprb")
        curve.to_csv(Path(out_dir) / "losses.csv")
    return model, curve


def _train_loop(model, curve, config, real_all, data_rng, latent_rng, ckpt_dir, progress):
    kind = config.loss_kind
    gen, disc = model.generator, model.discriminator
    n = len(real_all)
    opt = dict(learning_rate=config.learning_rate, beta1=config.beta1, beta2=config.beta2)
    g_state, d_state = AdamState(**opt), AdamState(**opt)
    for step in range(config.steps):
        for _ in range(config.disc_steps_per_gen_step):
            real = Tensor(real_all[data_rng.integers(0, n, config.batch_size)])
            fake = gen(Tensor(_latents(latent_rng, config.batch_size, config.latent_dim)), training=True)
            disc.zero_grad()
            with Tape() as tape:
                d_real = disc(real, training=True)
                d_fake = disc(Tensor(fake.values), training=True)
                _check_finite(step, d_real, d_fake)
                ld = disc_loss(kind, d_real, d_fake, head=disc.meta["head"])
            _check_finite(step, ld)
            tape.backward(ld)
            adam_step(d_state, disc.parameters())
            curve.disc_updates += 1
            if kind is GanLossKind.WASSERSTEIN:
                clip_weights(disc, config.clip_c)

        z = Tensor(_latents(latent_rng, config.batch_size, config.latent_dim))
        gen.zero_grad()
        disc.requires_grad_(False)
        try:
            with Tape() as tape:
                d_gen = disc(gen(z, training=True), training=True)
                _check_finite(step, d_gen)
                lg = gen_loss(kind, d_gen, head=disc.meta["head"])
            _check_finite(step, lg)
            tape.backward(lg)
        finally:
            disc.requires_grad_(True)
        adam_step(g_state, gen.parameters())
        curve.gen_updates += 1
        curve.append(step, lg.item(), ld.item(), d_real.values.mean(), d_fake.values.mean())

        if ckpt_dir is not None and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            model.save(ckpt_dir / f"step_{step + 1:06}.pprb")
        if progress is not None:
            progress(step, curve)


def _check_finite(step: int, *tensors: Tensor) -> None:
    if not all(np.all(np.isfinite(t.values)) for t in tensors):
        raise DivergedError(f"non-finite loss at step {step}", last_valid_step=step - 1)


def sample_scaled(model: GanModel, n: int, rng: np.random.Generator, batch: int = 256) -> np.ndarray:
    """``n`` generator outputs in [-1, 1], shape ``(n, S, S)``; batchnorm in evaluation mode."""
    s = model.image_size
    if n == 0:
        return np.zeros((0, s, s))
    z = _latents(rng, n, model.latent_dim)
    chunks = [model.generator(Tensor(z[i:i + batch]), training=False).values for i in range(0, n, batch)]
    return np.concatenate(chunks)[:, 0]


def sample(model: GanModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` generated images rescaled to [0, 1]."""
    return (sample_scaled(model, n, rng) + 1.0) / 2.0
