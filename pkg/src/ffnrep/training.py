"""Hand-derived gradients and a small trainer for pool-mixer models.

Only the FFN, the classifier head and the BN affines are trained; the
trainer exists to exercise train -> freeze -> reparameterize, not to
reproduce any recipe.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .config import ModelConfig
from .errors import DimensionError, UnsupportedConfigError
from .model import (
    IdleFfnInfer,
    IdleFfnTrain,
    Model,
    build_model,
    embed_tokens,
    forward_ffn_idle_infer,
    forward_ffn_idle_train,
    forward_pool_mixer,
    freeze_model,
    predict,
)
from .reparam import reparameterize_model
from .tensor_core import BatchNormParams, LayerNormParams, gelu, gelu_grad, layernorm_p, rel_frobenius


@dataclass
class GradBundle:
    d_w_in: np.ndarray
    d_b_in: np.ndarray
    d_w_out: np.ndarray
    d_b_out: np.ndarray
    d_gamma1: np.ndarray
    d_beta1: np.ndarray
    d_gamma2: np.ndarray
    d_beta2: np.ndarray
    d_x: np.ndarray

    def items(self):
        return asdict(self).items()


# ---------------------------------------------------------------------------
# normalization backward


def _bn_forward(x, bn: BatchNormParams, mode: str):
    if mode == "eval":
        inv = 1.0 / np.sqrt(bn.running_var + bn.eps)
        xhat = (x - bn.running_mean) * inv
    else:
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        inv = 1.0 / np.sqrt(var + bn.eps)
        xhat = (x - mean) * inv
    return xhat * bn.gamma + bn.beta, (xhat, inv)


def _bn_backward(dy, bn: BatchNormParams, cache, mode: str):
    xhat, inv = cache
    d_gamma = np.sum(dy * xhat, axis=0)
    d_beta = np.sum(dy, axis=0)
    dxhat = dy * bn.gamma
    if mode == "eval":
        dx = dxhat * inv
    else:
        dx = inv * (dxhat - dxhat.mean(axis=0) - xhat * np.mean(dxhat * xhat, axis=0))
    return dx, d_gamma, d_beta


def layernorm_backward(x: np.ndarray, ln: LayerNormParams, dy: np.ndarray) -> np.ndarray:
    """Gradient of ``layernorm(x)`` with respect to ``x`` (affine held fixed)."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt(np.mean(xc * xc, axis=-1, keepdims=True) + ln.eps)
    xhat = xc * inv
    dxhat = dy * ln.gamma
    return inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# FFN backward


def ffn_backward(ffn: IdleFfnTrain, x: np.ndarray, upstream: np.ndarray, mode: str = "eval") -> GradBundle:
    """Reverse-mode gradients of the channel-idle FFN.

    The forward is recomputed without touching running statistics. In
    ``train`` mode the BatchNorms are differentiated through their batch
    statistics; in ``eval`` mode the statistics are constants.
    """
    if x.ndim != 2 or x.shape[1] != ffn.channels:
        raise DimensionError(f"x must be (N, {ffn.channels}), got {x.shape}")
    if upstream.shape != x.shape:
        raise DimensionError(f"upstream shape {upstream.shape} does not match output shape {x.shape}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    a = ffn.active
    h, c1 = _bn_forward(x, ffn.bn1, mode)
    x_in = h @ ffn.w_in + ffn.b_in
    x_act = x_in.copy()
    x_act[:, :a] = gelu(x_in[:, :a])
    z, c2 = _bn_forward(x_act, ffn.bn2, mode)

    dy = upstream
    d_b_out = dy.sum(axis=0)
    d_w_out = z.T @ dy
    dz = dy @ ffn.w_out.T
    d_act, d_gamma2, d_beta2 = _bn_backward(dz, ffn.bn2, c2, mode)
    d_in = d_act
    d_in[:, :a] *= gelu_grad(x_in[:, :a])
    d_b_in = d_in.sum(axis=0)
    d_w_in = h.T @ d_in
    dh = d_in @ ffn.w_in.T
    dx, d_gamma1, d_beta1 = _bn_backward(dh, ffn.bn1, c1, mode)
    return GradBundle(d_w_in, d_b_in, d_w_out, d_b_out, d_gamma1, d_beta1, d_gamma2, d_beta2, dx + dy)


def infer_ffn_backward(ffn: IdleFfnInfer, x: np.ndarray, upstream: np.ndarray) -> dict:
    """Gradients of the condensed FFN, keyed by field name plus ``d_x``."""
    dy = upstream
    u = x @ ffn.w_act_in + ffn.b_act_in
    g = gelu(u)
    du = (dy @ ffn.w_act_out.T) * gelu_grad(u)
    return {
        "w_act_in": x.T @ du,
        "b_act_in": du.sum(axis=0),
        "w_act_out": g.T @ dy,
        "w_merged": x.T @ dy,
        "b_merged": dy.sum(axis=0),
        "d_x": du @ ffn.w_act_in.T + dy @ ffn.w_merged.T,
    }


def finite_diff_grad(f, param: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``param`` (perturbed in place, restored)."""
    if not h > 0:
        raise ValueError("h must be positive")
    grad = np.zeros(param.shape, dtype=np.float64)
    flat = param.reshape(-1)
    if not np.shares_memory(flat, param):
        raise ValueError("param must be a contiguous array so it can be perturbed in place")
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        grad.reshape(-1)[i] = (fp - fm) / (2.0 * h)
    return grad


def gradient_check(ffn: IdleFfnTrain, x: np.ndarray, upstream: np.ndarray, mode: str, h: float = 1e-5) -> dict:
    """Relative Frobenius error of every :class:`GradBundle` entry versus central differences.

    Entries whose analytic and numeric gradients both sit below the
    finite-difference noise floor count as agreeing (error 0): their true
    gradient vanishes, e.g. a bias feeding a batch-statistics BatchNorm.
    """

    def loss():
        return float(np.sum(upstream * forward_ffn_idle_train(ffn, x, mode, update_stats=False)))

    g = ffn_backward(ffn, x, upstream, mode)
    # central-difference roundoff is ~eps*|f|/h; below this both sides are "zero"
    floor = 1e3 * np.finfo(np.float64).eps * max(1.0, abs(loss())) / h
    targets = {
        "d_w_in": ffn.w_in,
        "d_b_in": ffn.b_in,
        "d_w_out": ffn.w_out,
        "d_b_out": ffn.b_out,
        "d_gamma1": ffn.bn1.gamma,
        "d_beta1": ffn.bn1.beta,
        "d_gamma2": ffn.bn2.gamma,
        "d_beta2": ffn.bn2.beta,
        "d_x": x,
    }
    out = {}
    for key, param in targets.items():
        fd = finite_diff_grad(loss, param, h)
        an = getattr(g, key)
        if max(np.linalg.norm(fd), np.linalg.norm(an)) <= floor * np.sqrt(fd.size):
            out[key] = 0.0
        else:
            out[key] = rel_frobenius(an, fd)
    return out


def random_idle_ffn(rng: np.random.Generator, c: int, hidden: int, active: int, dtype=np.float64, frozen=True):
    """Train-form FFN with random weights, nonzero biases and random BN state (variances in [0.1, 10])."""

    def bn(n):
        return BatchNormParams(
            gamma=rng.uniform(0.5, 1.5, n).astype(dtype),
            beta=rng.normal(0, 0.5, n).astype(dtype),
            running_mean=rng.normal(0, 0.5, n).astype(dtype),
            running_var=rng.uniform(0.1, 10.0, n).astype(dtype),
            eps=1e-5,
            frozen=frozen,
        )

    s_in, s_out = 1.0 / np.sqrt(c), 1.0 / np.sqrt(hidden)
    return IdleFfnTrain(
        bn1=bn(c),
        w_in=(rng.standard_normal((c, hidden)) * s_in).astype(dtype),
        b_in=rng.normal(0, 0.5, hidden).astype(dtype),
        bn2=bn(hidden),
        w_out=(rng.standard_normal((hidden, c)) * s_out).astype(dtype),
        b_out=rng.normal(0, 0.5, c).astype(dtype),
        active=active,
    )


# ---------------------------------------------------------------------------
# toy task and trainer


@dataclass
class ToyTask:
    """Gaussian class-prototype mixture over token sequences.

    Every token of a sample is its class prototype plus isotropic noise.
    Prototypes depend only on ``seed``; ``sample_seed`` draws a fresh sample
    set from the same distribution (held-out data).
    """

    seed: int = 0
    samples: int = 2000
    token_count: int = 4
    embed_dim: int = 32
    classes: int = 4
    noise: float = 4.0
    sample_seed: int | None = None

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("a toy task needs at least two classes")

    def generate(self, dtype=np.float32):
        rng = np.random.default_rng(self.seed)
        protos = rng.standard_normal((self.classes, self.embed_dim))
        if self.sample_seed is not None:
            rng = np.random.default_rng([self.seed, self.sample_seed])
        labels = rng.integers(0, self.classes, self.samples)
        noise = rng.standard_normal((self.samples, self.token_count, self.embed_dim)) * self.noise
        tokens = protos[labels][:, None, :] + noise
        return tokens.astype(dtype), labels


@dataclass
class TrainSummary:
    loss_curve: list
    final_accuracy: float
    train_form: str
    steps: int
    lr: float
    model: Model | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "loss_curve": [float(v) for v in self.loss_curve],
            "final_accuracy": float(self.final_accuracy),
            "train_form": self.train_form,
            "steps": self.steps,
            "lr": self.lr,
        }


def toy_config(theta: float = 0.75, rho: float = 4.0, seed: int = 0, task: ToyTask | None = None) -> ModelConfig:
    """Pool-mixer config sized for :class:`ToyTask` (C=32, depth 2, 4 tokens, 4 classes)."""
    task = task or ToyTask()
    side = int(round(np.sqrt(task.token_count)))
    if side * side != task.token_count:
        raise ValueError("token_count must be a perfect square")
    return ModelConfig(
        depth=2,
        embed_dim=task.embed_dim,
        heads=4,
        expand_ratio=rho,
        idle_ratio=theta,
        patch_size=2,
        image_size=2 * side,
        num_classes=task.classes,
        mixer="average-pool",
        ffn_form="idle-train",
        seed=seed,
    )


def _softmax_ce(logits: np.ndarray, labels: np.ndarray):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    n = len(labels)
    loss = -np.mean(np.log(p[np.arange(n), labels] + 1e-30))
    dlogits = p
    dlogits[np.arange(n), labels] -= 1.0
    return float(loss), dlogits / n


def _train_step(model: Model, tokens: np.ndarray, labels: np.ndarray, lr: float, momentum: float) -> float:
    b = tokens.shape[0]
    c = model.cfg.embed_dim
    x = embed_tokens(model, tokens)
    ffn_inputs = []
    for blk in model.blocks:
        x = forward_pool_mixer(x)
        rows = x.reshape(-1, c)
        ffn_inputs.append(rows)
        if isinstance(blk.ffn, IdleFfnTrain):
            rows = forward_ffn_idle_train(blk.ffn, rows, "train", momentum=momentum)
        else:
            rows = forward_ffn_idle_infer(blk.ffn, rows)
        x = rows.reshape(b, -1, c)
    cls = x[:, 0, :]
    hcls = layernorm_p(cls, model.norm)
    logits = hcls @ model.head_w + model.head_b
    loss, dlogits = _softmax_ce(logits.astype(np.float64), labels)
    dlogits = dlogits.astype(model.dtype)

    d_head_w = hcls.T @ dlogits
    d_head_b = dlogits.sum(axis=0)
    dx = np.zeros_like(x)
    dx[:, 0, :] = layernorm_backward(cls, model.norm, dlogits @ model.head_w.T)
    updates = []
    for blk, rows in zip(reversed(model.blocks), reversed(ffn_inputs)):
        up = dx.reshape(-1, c)
        f = blk.ffn
        if isinstance(f, IdleFfnTrain):
            g = ffn_backward(f, rows, up, "train")
            updates.append(
                [
                    (f, "w_in", g.d_w_in),
                    (f, "b_in", g.d_b_in),
                    (f, "w_out", g.d_w_out),
                    (f, "b_out", g.d_b_out),
                    (f.bn1, "gamma", g.d_gamma1),
                    (f.bn1, "beta", g.d_beta1),
                    (f.bn2, "gamma", g.d_gamma2),
                    (f.bn2, "beta", g.d_beta2),
                ]
            )
            d_rows = g.d_x
        else:
            g = infer_ffn_backward(f, rows, up)
            updates.append([(f, k, v) for k, v in g.items() if k != "d_x"])
            d_rows = g["d_x"]
        d_mixed = d_rows.reshape(b, -1, c)
        # mixer output is the token mean broadcast to every position
        dx = np.broadcast_to(d_mixed.mean(axis=1, keepdims=True), d_mixed.shape).copy()
    for group in updates:
        for owner, name, grad in group:
            cur = getattr(owner, name)
            setattr(owner, name, (cur - lr * grad).astype(cur.dtype))
    model.head_w = (model.head_w - lr * d_head_w).astype(model.dtype)
    model.head_b = (model.head_b - lr * d_head_b).astype(model.dtype)
    return loss


def train_toy(
    cfg: ModelConfig,
    task: ToyTask | None = None,
    steps: int = 200,
    lr: float = 0.1,
    train_form: str = "idle-train",
    momentum: float = 0.1,
    dtype=np.float32,
) -> TrainSummary:
    """Full-batch gradient descent on ``task``; returns the loss per step.

    ``train_form="idle-train"`` trains the overparameterized channel-idle
    FFN (and is reparameterized afterwards); ``"idle-infer"`` trains the
    condensed form directly from the start.
    """
    if cfg.mixer != "average-pool":
        raise UnsupportedConfigError("backprop is implemented only for average-pool mixers")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if train_form not in ("idle-train", "idle-infer"):
        raise ValueError(f"train_form must be 'idle-train' or 'idle-infer', got {train_form!r}")
    task = task or ToyTask(embed_dim=cfg.embed_dim, classes=cfg.num_classes, token_count=cfg.num_patches)
    if task.embed_dim != cfg.embed_dim or task.token_count != cfg.num_patches or task.classes != cfg.num_classes:
        raise ValueError("toy task shape does not match the model config")
    model = build_model(cfg.with_(ffn_form=train_form), dtype)
    if train_form == "idle-infer":
        model.cfg = cfg.with_(ffn_form="idle-infer")
    tokens, labels = task.generate(dtype)
    curve = [_train_step(model, tokens, labels, lr, momentum) for _ in range(steps)]
    if train_form == "idle-train":
        freeze_model(model)
    acc = float(np.mean(np.argmax(predict(model, tokens), axis=1) == labels))
    return TrainSummary(curve, acc, train_form, steps, lr, model)


def freeze_then_verify(model: Model, probe_inputs: np.ndarray, tol: float | None = None) -> dict:
    """Freeze every BN, reparameterize, and compare logits on ``probe_inputs``.

    ``max_rel_diff`` is the largest per-probe ``||post - pre|| / ||pre||``.
    """
    freeze_model(model)
    pre = predict(model, probe_inputs)
    post_model, reports = reparameterize_model(model, tol=tol)
    post = predict(post_model, probe_inputs)
    rel = max(rel_frobenius(post[i], pre[i]) for i in range(len(pre)))
    same = bool(np.array_equal(np.argmax(pre, axis=1), np.argmax(post, axis=1)))
    return {
        "max_rel_diff": rel,
        "argmax_identical": same,
        "model": post_model,
        "reports": reports,
    }

