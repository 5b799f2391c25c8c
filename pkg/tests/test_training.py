import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffnrep.config import preset_config
from ffnrep.errors import UnsupportedConfigError
from ffnrep.model import forward_ffn_idle_train, predict
from ffnrep.tensor_core import gelu, gelu_grad
from ffnrep.training import (
    ToyTask,
    ffn_backward,
    finite_diff_grad,
    freeze_then_verify,
    gradient_check,
    random_idle_ffn,
    toy_config,
    train_toy,
)


def test_finite_diff_quadratic_and_constant(rng):
    p = rng.standard_normal((3, 4))
    g = finite_diff_grad(lambda: 0.5 * float(np.sum(p * p)), p)
    np.testing.assert_allclose(g, p, atol=1e-9)
    np.testing.assert_array_equal(finite_diff_grad(lambda: 3.0, p), np.zeros_like(p))


def test_finite_diff_restores_param(rng):
    p = rng.standard_normal(5)
    before = p.copy()
    finite_diff_grad(lambda: float(np.sum(np.sin(p))), p)
    np.testing.assert_array_equal(p, before)


def test_finite_diff_gelu(rng):
    p = rng.standard_normal(20) * 2
    g = finite_diff_grad(lambda: float(np.sum(gelu(p))), p)
    np.testing.assert_allclose(g, gelu_grad(p), atol=1e-6)


def test_zero_upstream_gives_zero_bundle(rng):
    ffn = random_idle_ffn(rng, 4, 8, 3)
    x = rng.standard_normal((5, 4))
    for mode in ("eval", "train"):
        for name, g in ffn_backward(ffn, x, np.zeros((5, 4)), mode).items():
            assert not np.any(g), name


def test_bundle_shapes_mirror_parameters(rng):
    ffn = random_idle_ffn(rng, 4, 8, 3)
    x = rng.standard_normal((5, 4))
    g = ffn_backward(ffn, x, rng.standard_normal((5, 4)), "eval")
    assert g.d_w_in.shape == ffn.w_in.shape
    assert g.d_w_out.shape == ffn.w_out.shape
    assert g.d_gamma2.shape == ffn.bn2.gamma.shape
    assert g.d_x.shape == x.shape


def test_all_idle_dx_is_affine_jacobian(rng):
    ffn = random_idle_ffn(rng, 5, 10, 0)
    x = rng.standard_normal((4, 5))
    up = rng.standard_normal((4, 5))
    s1 = ffn.bn1.gamma / np.sqrt(ffn.bn1.running_var + ffn.bn1.eps)
    s2 = ffn.bn2.gamma / np.sqrt(ffn.bn2.running_var + ffn.bn2.eps)
    w_in_bar = s1[:, None] * ffn.w_in
    w_out_bar = s2[:, None] * ffn.w_out
    expect = up @ (w_in_bar @ w_out_bar + np.eye(5)).T
    np.testing.assert_allclose(ffn_backward(ffn, x, up, "eval").d_x, expect, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("mode", ["eval", "train"])
def test_gradient_check_reference_instance(mode):
    # C=6, rho=3, mu*C=2, N=5
    r = np.random.default_rng(7)
    ffn = random_idle_ffn(r, 6, 18, 2)
    x = r.standard_normal((5, 6))
    errs = gradient_check(ffn, x, r.standard_normal((5, 6)), mode)
    assert max(errs.values()) <= 1e-5, errs


@settings(max_examples=10)
@given(
    c=st.integers(2, 6),
    rho=st.integers(1, 3),
    frac=st.floats(0.01, 0.99),
    n=st.integers(2, 6),
    mode=st.sampled_from(["eval", "train"]),
    seed=st.integers(0, 2**31 - 1),
)
def test_gradient_check_property(c, rho, frac, n, mode, seed):
    r = np.random.default_rng(seed)
    hidden = rho * c
    active = int(frac * hidden)
    ffn = random_idle_ffn(r, c, hidden, active)
    errs = gradient_check(ffn, r.standard_normal((n, c)), r.standard_normal((n, c)), mode)
    assert max(errs.values()) <= 1e-5, errs


def test_idle_columns_receive_gradient(rng):
    ffn = random_idle_ffn(rng, 6, 24, 6)
    x = rng.standard_normal((5, 6))
    g = ffn_backward(ffn, x, rng.standard_normal((5, 6)), "eval")
    assert np.any(g.d_w_in[:, 6:] != 0)
    assert np.any(g.d_w_out[6:, :] != 0)


def test_backward_shape_error(rng):
    ffn = random_idle_ffn(rng, 4, 8, 3)
    with pytest.raises(ValueError):
        ffn_backward(ffn, rng.standard_normal((5, 4)), np.ones((4, 4)), "eval")


SMALL = ToyTask(samples=128)


def test_lr_zero_gives_constant_curve():
    s = train_toy(toy_config(), SMALL, steps=4, lr=0.0, dtype=np.float64)
    assert max(s.loss_curve) - min(s.loss_curve) < 1e-12


def test_training_is_deterministic():
    a = train_toy(toy_config(), SMALL, steps=3)
    b = train_toy(toy_config(), SMALL, steps=3)
    assert a.loss_curve == b.loss_curve


def test_attention_mixer_is_rejected():
    with pytest.raises(UnsupportedConfigError):
        train_toy(preset_config("deit-tiny", depth=1), steps=1)


def test_short_run_reduces_loss_and_reparam_commutes():
    s = train_toy(toy_config(), SMALL, steps=15, dtype=np.float64)
    assert s.loss_curve[-1] < s.loss_curve[0]
    probes, _ = ToyTask(seed=5, samples=16).generate(np.float64)
    pre = predict(s.model, probes)
    out = freeze_then_verify(s.model, probes)
    assert out["max_rel_diff"] <= 1e-10
    assert out["argmax_identical"]
    np.testing.assert_allclose(predict(out["model"], probes), pre, rtol=1e-9, atol=1e-12)


def test_untrained_model_reparam_bound():
    from ffnrep.model import build_model

    m = build_model(toy_config(), np.float32)
    probes, _ = ToyTask(seed=9, samples=16).generate(np.float32)
    assert freeze_then_verify(m, probes)["max_rel_diff"] <= 1e-4


def test_idle_infer_training_runs():
    s = train_toy(toy_config(), SMALL, steps=3, train_form="idle-infer")
    assert s.model.cfg.ffn_form == "idle-infer"
    assert len(s.loss_curve) == 3


def test_toy_task_validation_and_determinism():
    with pytest.raises(ValueError):
        ToyTask(classes=1)
    a, la = ToyTask(seed=3, samples=10).generate()
    b, lb = ToyTask(seed=3, samples=10).generate()
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(la, lb)


def test_train_mode_forward_is_pure_for_gradients(rng):
    ffn = random_idle_ffn(rng, 3, 6, 2)
    x = rng.standard_normal((4, 3))
    a = forward_ffn_idle_train(ffn, x, "train", update_stats=False)
    b = forward_ffn_idle_train(ffn, x, "train", update_stats=False)
    np.testing.assert_array_equal(a, b)


def test_vanishing_gradient_counts_as_agreement():
    # all-idle, train-mode BN: the bias before BN2 cancels against the batch mean
    r = np.random.default_rng(0)
    ffn = random_idle_ffn(r, 2, 4, 0)
    x, up = r.standard_normal((3, 2)), r.standard_normal((3, 2))
    g = ffn_backward(ffn, x, up, "train")
    assert np.linalg.norm(g.d_b_in) < 1e-14
    errs = gradient_check(ffn, x, up, "train")
    assert errs["d_b_in"] == 0.0
    assert max(errs.values()) <= 1e-5


def test_gradient_check_detects_a_wrong_gradient(rng, monkeypatch):
    import ffnrep.training as tr

    ffn = random_idle_ffn(rng, 4, 8, 3)
    x, up = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
    real = tr.ffn_backward

    def broken(*a, **k):
        g = real(*a, **k)
        g.d_w_in = g.d_w_in * 1.001
        return g

    monkeypatch.setattr(tr, "ffn_backward", broken)
    assert tr.gradient_check(ffn, x, up, "eval")["d_w_in"] > 1e-4


def test_held_out_samples_share_prototypes():
    a, la = ToyTask(seed=4, samples=400, noise=0.1).generate(np.float64)
    b, lb = ToyTask(seed=4, samples=400, noise=0.1, sample_seed=1).generate(np.float64)
    assert not np.array_equal(a, b)
    # same class means up to noise
    for k in range(4):
        np.testing.assert_allclose(a[la == k].mean(axis=(0, 1)), b[lb == k].mean(axis=(0, 1)), atol=0.05)
