import math

import numpy as np
import pytest

from polyprobe.autodiff import Tape, Tensor, load_checkpoint
from polyprobe.errors import ConfigError, DivergedError
from polyprobe.gan import (
    GanLossKind,
    GanModel,
    LossCurve,
    TrainConfig,
    build_discriminator,
    build_generator,
    clip_weights,
    disc_loss,
    gen_loss,
    sample,
    sample_scaled,
    train,
)
from polyprobe.shapegen import PolygonSpec, ShapeDataset, generate_dataset

EPS = 1e-7
KINDS = list(GanLossKind)


def clampp(x):
    return min(max(x, EPS), 1 - EPS)


def disc_oracle(kind, real, fake):
    if kind in (GanLossKind.MINIMAX, GanLossKind.NON_SATURATING):
        return -sum(math.log(clampp(r)) for r in real) / len(real) - sum(math.log(1 - clampp(f)) for f in fake) / len(fake)
    if kind is GanLossKind.WASSERSTEIN:
        return -sum(real) / len(real) + sum(fake) / len(fake)
    return 0.5 * sum((r - 1) ** 2 for r in real) / len(real) + 0.5 * sum(f * f for f in fake) / len(fake)


def gen_oracle(kind, fake):
    n = len(fake)
    if kind is GanLossKind.NON_SATURATING:
        return -sum(math.log(clampp(f)) for f in fake) / n
    if kind is GanLossKind.MINIMAX:
        return sum(math.log(1 - clampp(f)) for f in fake) / n
    if kind is GanLossKind.WASSERSTEIN:
        return -sum(fake) / n
    return 0.5 * sum((f - 1) ** 2 for f in fake) / n


def random_outputs(kind, rng, n):
    if kind.head == "sigmoid":
        return rng.uniform(0, 1, (n, 1))
    return rng.normal(0, 2, (n, 1))


@pytest.mark.parametrize("kind", KINDS)
def test_losses_match_hand_formulas(kind):
    rng = np.random.default_rng(KINDS.index(kind))
    for _ in range(100):
        n = int(rng.integers(1, 65))
        real, fake = random_outputs(kind, rng, n), random_outputs(kind, rng, n)
        assert abs(disc_loss(kind, real, fake).item() - disc_oracle(kind, real.ravel(), fake.ravel())) <= 1e-12
        assert abs(gen_loss(kind, fake).item() - gen_oracle(kind, fake.ravel())) <= 1e-12


def test_loss_point_values():
    half = np.full((4, 1), 0.5)
    assert disc_loss("minimax", half, half).item() == pytest.approx(2 * math.log(2), abs=1e-12)
    assert f"{disc_loss('minimax', half, half).item():.6f}" == "1.386294"
    assert disc_loss("least_squares", np.ones((3, 1)), np.zeros((3, 1))).item() == 0.0
    assert disc_loss("wasserstein", np.full((2, 1), 3.0), np.ones((2, 1))).item() == -2.0
    assert gen_loss("ns", np.ones((2, 1))).item() == pytest.approx(0.0, abs=1e-6)
    assert gen_loss("least_squares", np.ones((2, 1))).item() == 0.0
    assert f"{gen_loss('ns', half).item():.6f}" == "0.693147"


@pytest.mark.parametrize("kind", ["ns", "minimax"])
def test_generator_gradient_sign(kind):
    d = Tensor(np.linspace(0.01, 0.99, 50).reshape(-1, 1), requires_grad=True)
    with Tape() as tape:
        loss = gen_loss(kind, d)
    tape.backward(loss)
    assert np.all(d.grad < 0)


def test_head_mismatch_rejected():
    with pytest.raises(ConfigError):
        disc_loss("minimax", np.full((2, 1), 3.0), np.zeros((2, 1)))
    with pytest.raises(ConfigError):
        gen_loss("ns", np.full((2, 1), -0.5))
    with pytest.raises(ConfigError):
        gen_loss("wasserstein", np.zeros((2, 1)), head="sigmoid")


def test_loss_kind_aliases():
    assert GanLossKind.parse("ns") is GanLossKind.NON_SATURATING
    assert GanLossKind.parse("wgan") is GanLossKind.WASSERSTEIN
    assert GanLossKind.parse("lsgan") is GanLossKind.LEAST_SQUARES
    with pytest.raises(ConfigError):
        GanLossKind.parse("hinge")


def test_train_config_rules():
    assert TrainConfig(loss_kind="wgan").disc_steps_per_gen_step == 5
    assert TrainConfig().disc_steps_per_gen_step == 1
    with pytest.raises(ConfigError):
        TrainConfig(loss_kind="wgan", clip_c=0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


# -- architecture -------------------------------------------------------------------


@pytest.mark.parametrize("size", [16, 32, 64])
def test_generator_and_discriminator_shapes(size):
    rng = np.random.default_rng(0)
    gen = build_generator(64, size, rng)
    z = Tensor(np.random.default_rng(1).normal(size=(3, 64)))
    x = gen(z, training=True)
    assert x.shape == (3, 1, size, size)
    assert np.all(np.abs(x.values) <= 1)
    disc = build_discriminator(size, "ns", rng)
    d = disc(x, training=True)
    assert d.shape == (3, 1)
    assert np.all((d.values > 0) & (d.values < 1))


def test_architecture_rules():
    rng = np.random.default_rng(0)
    g = build_generator(64, 32, rng).describe()
    kinds = [layer["kind"] for layer in g]
    assert kinds[-1] == "tanh" and "leaky_relu" not in kinds
    assert g[-2]["kind"] == "conv2d_transpose"  # no batchnorm before the output
    assert [layer["kind"] for layer in g[1:4]] == ["conv2d_transpose", "batchnorm", "relu"]
    d = build_discriminator(32, "ns", rng).describe()
    dk = [layer["kind"] for layer in d]
    assert dk[:2] == ["conv2d", "leaky_relu"]  # first block has no batchnorm
    assert "relu" not in dk and dk.count("batchnorm") == 2
    assert dk[-1] == "sigmoid"
    assert build_discriminator(32, "wgan", rng).describe()[-1]["kind"] == "identity"


def test_linear_head_is_unbounded():
    rng = np.random.default_rng(0)
    disc = build_discriminator(16, "wasserstein", rng)
    for p in disc.parameters():
        p.values = p.values * 50
    out = disc(Tensor(np.random.default_rng(2).uniform(-1, 1, (8, 1, 16, 16))), training=True).values
    assert out.min() < 0 or out.max() > 1


def test_unsupported_size():
    with pytest.raises(ConfigError):
        build_generator(8, 24, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        build_discriminator(48, "ns", np.random.default_rng(0))


def test_same_seed_same_initial_parameters():
    a = GanModel.build(TrainConfig(seed=5), 32).state_dict()
    b = GanModel.build(TrainConfig(seed=5), 32).state_dict()
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)


# -- clipping ---------------------------------------------------------------------------


def test_clip_weights():
    disc = build_discriminator(16, "wgan", np.random.default_rng(0))
    p = disc.parameters()[0]
    p.values[...] = 0.0
    p.values.flat[0] = 0.5
    p.values.flat[1] = -0.005
    clip_weights(disc, 0.01)
    assert p.values.flat[0] == 0.01 and p.values.flat[1] == -0.005
    assert max(np.abs(q.values).max() for q in disc.parameters()) <= 0.01
    with pytest.raises(ConfigError):
        clip_weights(build_discriminator(16, "ns", np.random.default_rng(0)), 0.01)


# -- training -----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_data():
    return generate_dataset(PolygonSpec(3, 20, image_size=16, count=64, seed=1))


def small_config(**kw):
    base = dict(latent_dim=8, batch_size=8, steps=4, base_channels=4, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_steps(tiny_data):
    model, curve = train(tiny_data, small_config(steps=0))
    assert len(curve) == 0 and curve.gen_updates == 0
    assert model.image_size == 16


@pytest.mark.parametrize("kind", KINDS)
def test_training_bookkeeping(tiny_data, kind):
    cfg = small_config(loss_kind=kind)
    model, curve = train(tiny_data, cfg)
    assert curve.step == list(range(cfg.steps))
    assert curve.disc_updates == cfg.disc_steps_per_gen_step * curve.gen_updates
    assert np.all(np.isfinite(curve.gen_loss)) and np.all(np.isfinite(curve.disc_loss))
    if kind is GanLossKind.WASSERSTEIN:
        assert max(np.abs(p.values).max() for p in model.discriminator.parameters()) <= cfg.clip_c


def test_clipping_after_every_disc_update(tiny_data, monkeypatch):
    import polyprobe.gan as gan_mod

    seen = []
    original = gan_mod.clip_weights

    def spy(disc, c):
        out = original(disc, c)
        seen.append(max(np.abs(p.values).max() for p in disc.parameters()))
        return out

    monkeypatch.setattr(gan_mod, "clip_weights", spy)
    cfg = small_config(loss_kind="wgan", steps=2)
    _, curve = train(tiny_data, cfg)
    assert len(seen) == curve.disc_updates == 10
    assert max(seen) <= cfg.clip_c


def test_training_is_deterministic(tiny_data, tmp_path):
    train(tiny_data, small_config(checkpoint_every=2), out_dir=tmp_path / "a")
    train(tiny_data, small_config(checkpoint_every=2), out_dir=tmp_path / "b")
    for name in ("checkpoints/final.pprb", "checkpoints/step_000002.pprb", "losses.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_checkpoint_restores_model(tiny_data, tmp_path):
    cfg = small_config()
    model, _ = train(tiny_data, cfg, out_dir=tmp_path)
    fresh = GanModel.build(small_config(seed=99), 16).load(tmp_path / "checkpoints" / "final.pprb")
    a = sample_scaled(model, 5, np.random.default_rng(1))
    b = sample_scaled(fresh, 5, np.random.default_rng(1))
    np.testing.assert_array_equal(a, b)
    assert "gen.project_bn.running_mean" in load_checkpoint(tmp_path / "checkpoints" / "final.pprb")


def test_centered_dataset_trains(tmp_path):
    ds = generate_dataset(PolygonSpec(4, 20, True, image_size=16, count=32, seed=2))
    _, curve = train(ds, small_config(steps=2))
    assert len(curve) == 2


def test_divergence_reports_last_valid_step(tmp_path):
    good = generate_dataset(PolygonSpec(3, 20, image_size=16, count=8, seed=1))
    bad = ShapeDataset(np.full_like(good.images, np.nan), good.labels, good.specs)
    with pytest.raises(DivergedError) as info:
        train(bad, small_config(), out_dir=tmp_path)
    assert info.value.last_valid_step == -1
    assert info.value.curve is not None and len(info.value.curve) == 0
    assert (tmp_path / "losses.csv").exists()


def test_loss_curve_csv_round_trip(tmp_path):
    curve = LossCurve()
    curve.append(0, 1.0 / 3, 2.5, 0.6, 0.4)
    curve.append(1, 0.1, 1e-17, 0.5, 0.5)
    path = curve.to_csv(tmp_path / "losses.csv")
    assert path.read_text().splitlines()[0] == "step,gen_loss,disc_loss,d_real_mean,d_fake_mean"
    back = LossCurve.from_csv(path)
    assert list(back.rows()) == list(curve.rows())
    with pytest.raises(ValueError):
        curve.append(1, 0, 0, 0, 0)


# -- sampling -------------------------------------------------------------------------------


def test_sampling_contract():
    model = GanModel.build(small_config(), 16)
    assert sample(model, 0, np.random.default_rng(0)).shape == (0, 16, 16)
    a = sample(model, 6, np.random.default_rng(4))
    b = sample(model, 6, np.random.default_rng(4))
    assert a.shape == (6, 16, 16)
    assert a.min() >= 0 and a.max() <= 1
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a, (sample_scaled(model, 6, np.random.default_rng(4)) + 1) / 2)
