import math

import numpy as np
import pytest

from depthvision.neural import autograd as ag
from depthvision.neural import ops
from depthvision.neural.nets import NetConfig, Nets, refine, truncated_normal
from depthvision.neural.optim import AdamState, adam_step
from depthvision.neural.resize import resize_bilinear
from depthvision.neural.train import (
    GanTrainer, LossWeights, TrainingDiverged, l1_error, mean_logits, train,
)
from depthvision.neural.weights import WeightFileError, load_weights, save_weights

import gradcheck

SMALL64 = NetConfig(image_size=32, gen_base=4, gen_depth=3, disc_base=4, disc_layers=3, refiner_width=4,
                    dtype="float64")


# --- primitives ------------------------------------------------------------------


@pytest.mark.parametrize("case", gradcheck.CASES, ids=lambda c: c.__name__)
def test_primitive_gradients(case):
    rng = np.random.default_rng(hash(case.__name__) % 2**32)
    for _ in range(6):
        err, desc = case(rng)
        assert err < 1e-4, desc


def test_identity_1x1_conv():
    x = np.random.default_rng(0).normal(size=(2, 3, 5, 5))
    w = np.eye(3).reshape(3, 3, 1, 1)
    y, _ = ops.conv2d_forward(x, w)
    assert np.array_equal(y, x)


def test_tanh_backward_at_zero():
    y, c = ops.tanh_forward(np.zeros((1, 1, 1, 1)))
    assert ops.tanh_backward(np.ones_like(y), c)[0, 0, 0, 0] == 1.0


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(2, 3, 7, 6)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    y, _ = ops.conv2d_forward(x, w, b, stride=2, pad=1)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(y)
    for n in range(2):
        for f in range(4):
            for i in range(y.shape[2]):
                for j in range(y.shape[3]):
                    ref[n, f, i, j] = np.sum(xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[f]) + b[f]
    assert np.allclose(y, ref, atol=1e-12)


def test_tconv_is_adjoint_of_conv():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(5, 3, 4, 4))
    y, _ = ops.conv2d_forward(x, w, None, 2, 1)
    g = rng.normal(size=y.shape)
    # <conv(x), g> == <x, tconv(g)> with the same weights viewed as (Cin_t, Cout_t) = (5, 3)
    t, _ = ops.tconv2d_forward(g, w, None, 2, 1)
    assert t.shape == x.shape
    assert np.isclose(np.sum(y * g), np.sum(x * t), rtol=1e-12)


def test_shape_errors_name_both_shapes():
    x = np.zeros((1, 3, 8, 8))
    w = np.zeros((2, 4, 3, 3))
    with pytest.raises(ops.ShapeError, match=r"\(1, 3, 8, 8\).*\(2, 4, 3, 3\)"):
        ops.conv2d_forward(x, w)
    with pytest.raises(ops.ShapeError, match=r"\(1, 2, 4, 4\).*\(1, 3, 5, 4\)"):
        ops.concat_forward([np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 5, 4))])


def test_network_gradient_through_autograd():
    """Whole generator+refiner+discriminator graph against finite differences (float64)."""
    cfg = NetConfig(image_size=16, gen_base=2, gen_depth=2, disc_base=2, disc_layers=2, refiner_width=2,
                    dtype="float64")
    nets = Nets(cfg, seed=3)
    rng = np.random.default_rng(3)
    for p in nets.generator.parameters() + nets.refiner.parameters() + nets.discriminator.parameters():
        p.data = rng.normal(0, 0.3, p.data.shape)
    d = rng.uniform(-1, 1, (2, 1, 16, 16))
    y = rng.uniform(-0.9, 0.9, (2, 3, 16, 16))

    def loss():
        fake = nets.synthesize(ag.Tensor(d), 2)
        adv = ag.bce_with_logits(nets.discriminator(ag.Tensor(d), fake), 1.0)
        return ag.add(adv, ag.scale(ag.l1(fake, ag.Tensor(y)), 3.0))

    params = [nets.generator.params["enc0.w"], nets.generator.params["dec1.b"],
              nets.refiner.params["r1.w"], nets.discriminator.params["out.w"]]
    for p in params:
        p.grad = None
    loss().backward()
    for p in params:
        num = gradcheck.numeric_grad(lambda: float(loss().data), p.data)
        assert gradcheck.rel_error(p.grad, num) < 1e-4


# --- networks -------------------------------------------------------------------


def test_generator_shape_range_determinism():
    cfg = NetConfig(image_size=32, gen_base=4, gen_depth=3, dtype="float64")
    x = np.random.default_rng(0).uniform(-1, 1, (1, 1, 32, 32))
    a = Nets(cfg, seed=5).generator(ag.Tensor(x)).data
    b = Nets(cfg, seed=5).generator(ag.Tensor(x)).data
    assert a.shape == (1, 3, 32, 32)
    assert np.all(np.abs(a) < 1)
    assert np.array_equal(a, b)


def test_generator_rejects_indivisible_size():
    nets = Nets(NetConfig(image_size=32, gen_depth=3), seed=0)
    with pytest.raises(ops.ShapeError, match="divisible"):
        nets.generator(ag.Tensor(np.zeros((1, 1, 20, 20), np.float32)))


@pytest.mark.parametrize("size,layers,grid,rf", [(32, 3, 3, 46), (64, 2, 15, 22), (64, 3, 7, 46)])
def test_discriminator_grid(size, layers, grid, rf):
    cfg = NetConfig(image_size=size, disc_layers=layers, disc_base=4, dtype="float64")
    disc = Nets(cfg, seed=0).discriminator
    rng = np.random.default_rng(0)
    out = disc(ag.Tensor(rng.normal(size=(2, 1, size, size))), ag.Tensor(rng.normal(size=(2, 3, size, size))))
    assert out.shape == (2, 1, grid, grid) and disc.output_size(size) == grid
    assert disc.receptive_field() == rf


def test_discriminator_batch_doubling():
    disc = Nets(SMALL64, seed=1).discriminator
    rng = np.random.default_rng(1)
    d, y = rng.normal(size=(1, 1, 32, 32)), rng.normal(size=(1, 3, 32, 32))
    one = disc(ag.Tensor(d), ag.Tensor(y)).data
    two = disc(ag.Tensor(np.concatenate([d, d])), ag.Tensor(np.concatenate([y, y]))).data
    assert two.shape[0] == 2 * one.shape[0] and np.allclose(two[1], one[0], atol=1e-12)


def test_discriminator_shift_equivariance():
    cfg = NetConfig(image_size=64, disc_layers=2, disc_base=4, dtype="float64")
    disc = Nets(cfg, seed=2).discriminator
    rng = np.random.default_rng(2)
    d, y = rng.normal(size=(1, 1, 64, 64)), rng.normal(size=(1, 3, 64, 64))
    stride = 4  # two stride-2 stages
    base = disc(ag.Tensor(d), ag.Tensor(y)).data[0, 0]
    shifted = disc(ag.Tensor(np.roll(d, stride, -1)), ag.Tensor(np.roll(y, stride, -1))).data[0, 0]
    # interior columns whose receptive field stays away from borders and the wrapped strip
    cols = range(4, base.shape[1] - 5)
    for j in cols:
        assert np.allclose(shifted[2:-2, j + 1], base[2:-2, j], atol=1e-12)


def test_refine_contract():
    nets = Nets(SMALL64, seed=0)
    rng = np.random.default_rng(0)
    x = ag.Tensor(rng.uniform(-1, 1, (2, 3, 32, 32)))
    d = ag.Tensor(rng.uniform(-1, 1, (2, 1, 32, 32)))
    assert refine(nets.refiner, x, d, 0) is x
    for p in nets.refiner.parameters():
        p.data = p.data * 50  # large residuals push x + r past the bounds
    out = refine(nets.refiner, x, d, 3).data
    assert out.min() >= -1 and out.max() <= 1
    for p in nets.refiner.parameters():
        p.data = np.zeros_like(p.data)
    for it in (1, 3, 7):
        assert np.array_equal(refine(nets.refiner, x, d, it).data, x.data)


def test_truncated_normal_bounds():
    a = truncated_normal(np.random.default_rng(0), (10000,))
    assert np.abs(a).max() <= 0.04 and abs(a.std() - 0.02 * 0.88) < 0.001


# --- optimizer -------------------------------------------------------------------


def test_adam_zero_gradient():
    p = [np.ones(3)]
    st = AdamState.for_params(p)
    adam_step(p, [np.zeros(3)], st)
    assert np.array_equal(p[0], np.ones(3)) and st.t == 1


def test_adam_first_step_magnitude():
    p = [np.zeros(4)]
    st = AdamState.for_params(p)
    adam_step(p, [np.ones(4)], st)
    assert np.allclose(p[0], -2e-4, rtol=1e-6)


def test_adam_oscillating_gradients():
    # hand iteration: step 1 m_hat = 1, v_hat = 1; step 2 m = 0.5*0.5 - 0.5 = -0.25,
    # m_hat = -0.25 / 0.75 = -1/3, v_hat = 1, so the second move is a third of the first
    p = [np.zeros(1)]
    st = AdamState.for_params(p)
    adam_step(p, [np.ones(1)], st)
    d1 = p[0][0]
    adam_step(p, [-np.ones(1)], st)
    d2 = p[0][0] - d1
    assert d1 < 0 < d2
    assert math.isclose(abs(d2) / abs(d1), 1 / 3, rel_tol=1e-6)


def test_adam_shape_mismatch():
    with pytest.raises(ops.ShapeError):
        adam_step([np.zeros(3)], [np.zeros(4)], AdamState.for_params([np.zeros(3)]))


# --- training -------------------------------------------------------------------


def _pairs(n, size, seed=0):
    rng = np.random.default_rng(seed)
    d = rng.uniform(-1, 1, (n, 1, size, size))
    # smooth inputs make the identity task learnable at this scale
    d = np.clip(resize_bilinear(d[:, 0].transpose(1, 2, 0)[::4, ::4], size, size).transpose(2, 0, 1)[:, None],
                -1, 1)
    return d, np.repeat(d, 3, axis=1)


def test_bce_at_zero_logits_lambda_zero():
    nets = Nets(NetConfig(image_size=32, gen_base=4, disc_base=4, refiner_width=4), seed=0)
    for p in nets.discriminator.parameters():
        p.data = np.zeros_like(p.data)
    trainer = GanTrainer(nets, LossWeights(lambda_l1=0.0))
    trainer.opt_d.state.lr = 0.0
    d, y = _pairs(2, 32)
    rec = trainer.train_step(d, y)
    assert rec.g_adv == pytest.approx(math.log(2), abs=1e-6)
    assert rec.d_loss == pytest.approx(math.log(2), abs=1e-6)


def test_identity_fit_smoke():
    nets = Nets(NetConfig(image_size=32, gen_base=8, disc_base=8, refiner_width=8), seed=0)
    d, y = _pairs(8, 32)
    hist = train(nets, d, y, steps=200, batch_size=8, seed=0)
    assert hist[-1].g_l1 < 0.5 * hist[0].g_l1


def test_training_is_deterministic():
    cfg = NetConfig(image_size=16, gen_base=4, gen_depth=2, disc_base=4, refiner_width=4)
    d, y = _pairs(4, 16)
    runs = [[(r.d_loss, r.g_adv, r.g_l1) for r in train(Nets(cfg, seed=1), d, y, 5, batch_size=2, seed=3)]
            for _ in range(2)]
    assert runs[0] == runs[1]


def test_divergence_reports_step():
    nets = Nets(NetConfig(image_size=16, gen_depth=2, gen_base=4, disc_base=4, refiner_width=4), seed=0)
    d, y = _pairs(2, 16)
    trainer = GanTrainer(nets)
    trainer.train_step(d, y)
    y_bad = y.copy()
    y_bad[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingDiverged, match="training diverged at step 1"):
        trainer.train_step(d, y_bad)


def test_eval_helpers():
    nets = Nets(NetConfig(image_size=16, gen_depth=2, gen_base=4, disc_base=4, refiner_width=4), seed=0)
    d, y = _pairs(3, 16)
    assert l1_error(nets, d, y) > 0
    real, fake = mean_logits(nets, d, y)
    assert math.isfinite(real) and math.isfinite(fake)
    with pytest.raises(ValueError):
        GanTrainer(nets).train_step(d[:0], y[:0])


# --- weights ---------------------------------------------------------------------


def _trained(tmp_path):
    cfg = NetConfig(image_size=16, gen_depth=2, gen_base=4, disc_base=4, refiner_width=4)
    nets = Nets(cfg, seed=0)
    d, y = _pairs(2, 16)
    trainer = GanTrainer(nets)
    for _ in range(3):
        trainer.train_step(d, y)
    path = tmp_path / "w.dvnn"
    save_weights(path, nets, trainer.opt_g.state, trainer.opt_d.state)
    return nets, trainer, path, d


def test_weights_round_trip(tmp_path):
    nets, trainer, path, d = _trained(tmp_path)
    loaded = load_weights(path, expected=nets.cfg)
    assert np.array_equal(loaded.nets.generate(d), nets.generate(d))
    assert loaded.g_state.t == trainer.opt_g.state.t == 3
    for a, b in zip(loaded.g_state.v, trainer.opt_g.state.v):
        assert np.array_equal(a, b)
    assert loaded.config["encoding_version"] == "linear-v1"
    # saving the loaded copy reproduces the file byte for byte
    save_weights(tmp_path / "again.dvnn", loaded.nets, loaded.g_state, loaded.d_state)
    assert (tmp_path / "again.dvnn").read_bytes() == path.read_bytes()


def test_weights_truncated(tmp_path):
    _, _, path, _ = _trained(tmp_path)
    raw = path.read_bytes()
    for cut in (len(raw) - 1, len(raw) // 2, 10):
        path.write_bytes(raw[:cut])
        with pytest.raises(WeightFileError):
            load_weights(path)


def test_weights_corrupt_byte(tmp_path):
    _, _, path, _ = _trained(tmp_path)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(WeightFileError, match="CRC"):
        load_weights(path)


def test_weights_architecture_mismatch(tmp_path):
    nets, _, path, _ = _trained(tmp_path)
    other = NetConfig(**{**nets.cfg.to_dict(), "refiner_width": 6})
    with pytest.raises(WeightFileError, match="refiner_width"):
        load_weights(path, expected=other)


def test_weights_encoding_mismatch(tmp_path, monkeypatch):
    nets, _, path, _ = _trained(tmp_path)
    from depthvision.neural import weights

    monkeypatch.setattr(weights, "ENCODING_VERSION", "inverse-v9")
    with pytest.raises(WeightFileError, match="encoding"):
        load_weights(path)


# --- resize ---------------------------------------------------------------------


def test_resize_examples():
    a = np.array([[0.0, 1.0, 2.0, 3.0]])
    assert np.allclose(resize_bilinear(a, 1, 2), [[0.5, 2.5]])
    assert np.allclose(resize_bilinear(np.array([[0.0, 1.0]]), 1, 4), [[0.0, 0.25, 0.75, 1.0]])
    img = np.random.default_rng(0).random((5, 6, 3))
    assert np.array_equal(resize_bilinear(img, 5, 6), img)
    assert np.allclose(resize_bilinear(np.full((7, 9), 0.3), 4, 4), 0.3)
