"""ViT blocks and models in vanilla, channel-idle train, and condensed inference forms."""

from __future__ import annotations

import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .config import ModelConfig
from .errors import DimensionError, StateError, ValidationError
from .initializers import init_weights
from .tensor_core import (
    BatchNormParams,
    LayerNormParams,
    batchnorm_batch,
    batchnorm_eval,
    batchnorm_train_step,
    concat_cols,
    gelu,
    layernorm_p,
    matmul,
    normalize,
    softmax_rows,
)

BN_EPS = 1e-5
LN_EPS = 1e-6

# ---------------------------------------------------------------------------
# layer containers


@dataclass
class VanillaFfn:
    """Two projections with GELU in between; ``norm`` is usually a LayerNorm."""

    norm: Union[LayerNormParams, BatchNormParams]
    w_in: np.ndarray
    b_in: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray


@dataclass
class IdleFfnTrain:
    """Channel-idle FFN as trained: GELU only on the first ``active`` hidden channels."""

    bn1: BatchNormParams
    w_in: np.ndarray
    b_in: np.ndarray
    bn2: BatchNormParams
    w_out: np.ndarray
    b_out: np.ndarray
    active: int

    def __post_init__(self):
        c, h = self.w_in.shape
        if self.w_out.shape != (h, c):
            raise DimensionError(f"w_out shape {self.w_out.shape} does not mirror w_in {self.w_in.shape}")
        if self.bn1.channels != c or self.bn2.channels != h:
            raise DimensionError(f"BatchNorm widths ({self.bn1.channels}, {self.bn2.channels}) vs ({c}, {h})")
        if not 0 <= self.active <= h:
            raise DimensionError(f"active={self.active} outside [0, {h}]")

    @property
    def channels(self) -> int:
        return self.w_in.shape[0]

    @property
    def hidden(self) -> int:
        return self.w_in.shape[1]

    @property
    def frozen(self) -> bool:
        return self.bn1.frozen and self.bn2.frozen


@dataclass
class IdleFfnInfer:
    """Condensed FFN: active path plus one C x C matrix that absorbed the idle path and shortcut."""

    w_act_in: np.ndarray
    b_act_in: np.ndarray
    w_act_out: np.ndarray
    w_merged: np.ndarray
    b_merged: np.ndarray

    @property
    def channels(self) -> int:
        return self.w_merged.shape[0]

    @property
    def active(self) -> int:
        return self.w_act_in.shape[1]

    def num_params(self) -> int:
        return sum(a.size for a in (self.w_act_in, self.b_act_in, self.w_act_out, self.w_merged, self.b_merged))


@dataclass
class AttentionBlock:
    norm: LayerNormParams
    w_qkv: np.ndarray
    b_qkv: np.ndarray
    w_proj: np.ndarray
    b_proj: np.ndarray
    heads: int


@dataclass
class PoolMixer:
    """Parameter-free token mixer: each token moves to the token mean."""


Ffn = Union[VanillaFfn, IdleFfnTrain, IdleFfnInfer]
Mixer = Union[AttentionBlock, PoolMixer]


@dataclass
class Block:
    mixer: Mixer
    ffn: Ffn


@dataclass
class Model:
    cfg: ModelConfig
    patch_w: np.ndarray
    patch_b: np.ndarray
    cls_token: np.ndarray
    pos_embed: np.ndarray
    blocks: list[Block]
    norm: LayerNormParams
    head_w: np.ndarray
    head_b: np.ndarray

    @property
    def dtype(self):
        return self.patch_w.dtype

    def batchnorms(self):
        """Yield ``(block_index, name, BatchNormParams)`` for every BN in the model."""
        for i, blk in enumerate(self.blocks):
            f = blk.ffn
            if isinstance(f, IdleFfnTrain):
                yield i, "bn1", f.bn1
                yield i, "bn2", f.bn2
            elif isinstance(f, VanillaFfn) and isinstance(f.norm, BatchNormParams):
                yield i, "norm", f.norm


@dataclass
class ComponentTimings:
    ms: dict = field(default_factory=lambda: {"patch_embed": 0.0, "mhsa": 0.0, "ffn": 0.0, "other": 0.0})

    def add(self, key: str, seconds: float):
        self.ms[key] += seconds * 1e3

    @property
    def total_ms(self) -> float:
        return sum(self.ms.values())


# ---------------------------------------------------------------------------
# FFN forwards


def forward_ffn_vanilla(ffn: VanillaFfn, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != ffn.w_in.shape[0]:
        raise DimensionError(f"FFN expects {ffn.w_in.shape[0]} channels, got {x.shape[-1]}")
    h = gelu(matmul(normalize(x, ffn.norm), ffn.w_in) + ffn.b_in)
    return matmul(h, ffn.w_out) + ffn.b_out + x


def _split_activate(x_in: np.ndarray, active: int) -> np.ndarray:
    if active == x_in.shape[-1]:
        return gelu(x_in)
    if active == 0:
        return x_in
    return concat_cols(gelu(x_in[..., :active]), x_in[..., active:])


def forward_ffn_idle_train(
    ffn: IdleFfnTrain,
    x: np.ndarray,
    mode: str = "eval",
    update_stats: bool = True,
    momentum: float = 0.1,
) -> np.ndarray:
    """Channel-idle FFN forward.

    ``mode="train"`` normalizes with batch statistics over all rows; with
    ``update_stats`` it also advances the running statistics (and so
    requires unfrozen BatchNorms). ``update_stats=False`` gives a pure
    function of the inputs, which the gradient oracle relies on.
    """
    if x.shape[-1] != ffn.channels:
        raise DimensionError(f"FFN expects {ffn.channels} channels, got {x.shape[-1]}")
    if mode == "eval":
        h = batchnorm_eval(x, ffn.bn1)
        x_act = _split_activate(matmul(h, ffn.w_in) + ffn.b_in, ffn.active)
        z = batchnorm_eval(x_act, ffn.bn2)
    elif mode == "train":
        if update_stats:
            if ffn.bn1.frozen or ffn.bn2.frozen:
                raise StateError("train-mode forward on a frozen FFN")
            h = batchnorm_train_step(x, ffn.bn1, momentum)
            x_act = _split_activate(matmul(h, ffn.w_in) + ffn.b_in, ffn.active)
            z = batchnorm_train_step(x_act, ffn.bn2, momentum)
        else:
            h = batchnorm_batch(x, ffn.bn1)[0]
            x_act = _split_activate(matmul(h, ffn.w_in) + ffn.b_in, ffn.active)
            z = batchnorm_batch(x_act, ffn.bn2)[0]
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return matmul(z, ffn.w_out) + ffn.b_out + x


def forward_ffn_idle_infer(ffn: IdleFfnInfer, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != ffn.channels:
        raise DimensionError(f"FFN expects {ffn.channels} channels, got {x.shape[-1]}")
    out = matmul(x, ffn.w_merged) + ffn.b_merged
    if ffn.active:
        out += matmul(gelu(matmul(x, ffn.w_act_in) + ffn.b_act_in), ffn.w_act_out)
    return out


def forward_ffn(ffn: Ffn, x: np.ndarray) -> np.ndarray:
    """Eval-mode forward for any FFN form. Multi-axis inputs are flattened to rows."""
    lead = x.shape[:-1]
    rows = x.reshape(-1, x.shape[-1])
    if isinstance(ffn, IdleFfnInfer):
        y = forward_ffn_idle_infer(ffn, rows)
    elif isinstance(ffn, IdleFfnTrain):
        y = forward_ffn_idle_train(ffn, rows, "eval")
    else:
        y = forward_ffn_vanilla(ffn, rows)
    return y.reshape(*lead, -1)


# ---------------------------------------------------------------------------
# token mixers


def forward_mhsa(attn: AttentionBlock, x: np.ndarray) -> np.ndarray:
    """Multi-head self-attention on ``(..., N, C)``; no norm, no residual."""
    c = attn.w_proj.shape[0]
    if x.shape[-1] != c:
        raise DimensionError(f"attention expects {c} channels, got {x.shape[-1]}")
    h = attn.heads
    d = c // h
    n = x.shape[-2]
    lead = x.shape[:-2]
    qkv = (matmul(x, attn.w_qkv) + attn.b_qkv).reshape(*lead, n, 3, h, d)
    qkv = np.moveaxis(qkv, (-3, -2), (0, -3))  # (3, ..., h, n, d)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = np.matmul(q, np.swapaxes(k, -1, -2)) * x.dtype.type(d**-0.5)
    o = np.matmul(softmax_rows(scores), v)  # (..., h, n, d)
    o = np.moveaxis(o, -3, -2).reshape(*lead, n, c)
    return matmul(o, attn.w_proj) + attn.b_proj


def forward_attention_block(attn: AttentionBlock, x: np.ndarray) -> np.ndarray:
    return x + forward_mhsa(attn, layernorm_p(x, attn.norm))


def forward_pool_mixer(x: np.ndarray) -> np.ndarray:
    """``x + (mean_over_tokens(x) - x)``."""
    return x + (x.mean(axis=-2, keepdims=True) - x)


def forward_mixer(mixer: Mixer, x: np.ndarray) -> np.ndarray:
    if isinstance(mixer, AttentionBlock):
        return forward_attention_block(mixer, x)
    return forward_pool_mixer(x)


# ---------------------------------------------------------------------------
# whole model


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """``(B, C_in, H, W)`` -> ``(B, patches, C_in*P*P)`` in channel-major patch order."""
    b, cin, hh, ww = images.shape
    gh, gw = hh // patch, ww // patch
    p = images.reshape(b, cin, gh, patch, gw, patch)
    p = p.transpose(0, 2, 4, 1, 3, 5)
    return p.reshape(b, gh * gw, cin * patch * patch)


def embed_tokens(model: Model, tokens: np.ndarray) -> np.ndarray:
    """Prepend the class token and add the positional table to patch tokens ``(B, T, C)``."""
    b = tokens.shape[0]
    cls = np.broadcast_to(model.cls_token, (b, 1, model.cfg.embed_dim))
    x = np.concatenate([cls.astype(tokens.dtype), tokens], axis=1)
    if x.shape[1] != model.pos_embed.shape[0]:
        raise DimensionError(f"{x.shape[1]} tokens but positional table has {model.pos_embed.shape[0]} rows")
    return x + model.pos_embed


def _as_batch(images: np.ndarray, cfg: ModelConfig):
    single = images.ndim == 3
    if single:
        images = images[None]
    if images.ndim != 4 or images.shape[1:] != (cfg.in_channels, cfg.image_size, cfg.image_size):
        raise DimensionError(
            f"expected images of shape (B, {cfg.in_channels}, {cfg.image_size}, {cfg.image_size}), "
            f"got {images.shape}"
        )
    return images, single


def forward_patch_embed(model: Model, images: np.ndarray) -> np.ndarray:
    imgs, single = _as_batch(np.asarray(images, dtype=model.dtype), model.cfg)
    tokens = matmul(patchify(imgs, model.cfg.patch_size), model.patch_w) + model.patch_b
    x = embed_tokens(model, tokens)
    return x[0] if single else x


def forward_blocks(model: Model, x: np.ndarray, timings: ComponentTimings | None = None) -> np.ndarray:
    for blk in model.blocks:
        if timings is None:
            x = forward_mixer(blk.mixer, x)
            x = forward_ffn(blk.ffn, x)
        else:
            t0 = time.perf_counter()
            x = forward_mixer(blk.mixer, x)
            t1 = time.perf_counter()
            x = forward_ffn(blk.ffn, x)
            t2 = time.perf_counter()
            timings.add("mhsa", t1 - t0)
            timings.add("ffn", t2 - t1)
    return x


def forward_head(model: Model, x: np.ndarray) -> np.ndarray:
    cls = layernorm_p(x[..., 0, :], model.norm)
    return matmul(cls, model.head_w) + model.head_b


def forward_model(model: Model, images: np.ndarray, timing: bool = False):
    """Logits for ``(B, C_in, H, W)`` (or a single ``(C_in, H, W)``) images.

    Returns ``(logits, timings)``; ``timings`` is None unless ``timing`` is set.
    """
    imgs, single = _as_batch(np.asarray(images, dtype=model.dtype), model.cfg)
    timings = ComponentTimings() if timing else None
    t0 = time.perf_counter()
    x = forward_patch_embed(model, imgs)
    if timings is not None:
        timings.add("patch_embed", time.perf_counter() - t0)
    x = forward_blocks(model, x, timings)
    t0 = time.perf_counter()
    logits = forward_head(model, x)
    if timings is not None:
        timings.add("other", time.perf_counter() - t0)
    return (logits[0] if single else logits), timings


def forward_tokens(model: Model, tokens: np.ndarray) -> np.ndarray:
    """Logits for pre-embedded patch tokens ``(B, T, C)``, skipping the patch projection."""
    x = embed_tokens(model, np.asarray(tokens, dtype=model.dtype))
    return forward_head(model, forward_blocks(model, x))


def predict(model: Model, inputs: np.ndarray) -> np.ndarray:
    """Logits for images (4-D) or pre-embedded tokens (3-D)."""
    inputs = np.asarray(inputs)
    if inputs.ndim == 4:
        return forward_model(model, inputs)[0]
    if inputs.ndim == 3 and inputs.shape[-1] == model.cfg.embed_dim and inputs.shape[1] == model.cfg.num_patches:
        return forward_tokens(model, inputs)
    raise DimensionError(f"cannot interpret probe batch of shape {inputs.shape}")


# ---------------------------------------------------------------------------
# parameter layout and construction


def _norm_entries(prefix: str, c: int, kind: str):
    ent = [(f"{prefix}.gamma", (c,), True), (f"{prefix}.beta", (c,), True)]
    if kind == "bn":
        ent += [(f"{prefix}.running_mean", (c,), False), (f"{prefix}.running_var", (c,), False)]
    ent.append((f"{prefix}.eps", (), False))
    return ent


def param_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple[tuple[int, ...], bool]]":
    """Every tensor the model holds: ``name -> (shape, is_learnable_parameter)``.

    Running statistics and eps scalars are buffers (``False``).
    """
    c, h, a = cfg.embed_dim, cfg.hidden_dim, cfg.active_dim
    ent = [
        ("patch_embed.weight", (cfg.patch_dim, c), True),
        ("patch_embed.bias", (c,), True),
        ("cls_token", (c,), True),
        ("pos_embed", (cfg.num_tokens, c), True),
    ]
    for i in range(cfg.depth):
        p = f"blocks.{i}"
        if cfg.mixer == "self-attention":
            ent += _norm_entries(f"{p}.attn.norm", c, "ln")
            ent += [
                (f"{p}.attn.qkv.weight", (c, 3 * c), True),
                (f"{p}.attn.qkv.bias", (3 * c,), True),
                (f"{p}.attn.proj.weight", (c, c), True),
                (f"{p}.attn.proj.bias", (c,), True),
            ]
        f = f"{p}.ffn"
        if cfg.ffn_form == "vanilla-ln":
            ent += _norm_entries(f"{f}.norm", c, "ln")
            ent += [
                (f"{f}.fc1.weight", (c, h), True),
                (f"{f}.fc1.bias", (h,), True),
                (f"{f}.fc2.weight", (h, c), True),
                (f"{f}.fc2.bias", (c,), True),
            ]
        elif cfg.ffn_form == "idle-train":
            ent += _norm_entries(f"{f}.bn1", c, "bn")
            ent += [(f"{f}.fc1.weight", (c, h), True), (f"{f}.fc1.bias", (h,), True)]
            ent += _norm_entries(f"{f}.bn2", h, "bn")
            ent += [(f"{f}.fc2.weight", (h, c), True), (f"{f}.fc2.bias", (c,), True)]
        else:
            ent += [
                (f"{f}.act_in.weight", (c, a), True),
                (f"{f}.act_in.bias", (a,), True),
                (f"{f}.act_out.weight", (a, c), True),
                (f"{f}.merged.weight", (c, c), True),
                (f"{f}.merged.bias", (c,), True),
            ]
    ent += _norm_entries("norm", c, "ln")
    ent += [("head.weight", (c, cfg.num_classes), True), ("head.bias", (cfg.num_classes,), True)]
    return OrderedDict((n, (s, p)) for n, s, p in ent)


def _initial_value(name: str, shape, cfg: ModelConfig, dtype) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if name in ("cls_token", "pos_embed") or leaf == "weight":
        return init_weights(shape, cfg.seed, name, dtype=dtype)
    if leaf in ("bias", "beta", "running_mean"):
        return np.zeros(shape, dtype)
    if leaf in ("gamma", "running_var"):
        return np.ones(shape, dtype)
    if leaf == "eps":
        is_bn = ".bn1." in name or ".bn2." in name
        return np.array(BN_EPS if is_bn else LN_EPS, dtype=np.float64)
    raise KeyError(name)


def _ln(state, prefix) -> LayerNormParams:
    return LayerNormParams(state[f"{prefix}.gamma"], state[f"{prefix}.beta"], float(state[f"{prefix}.eps"]))


def _bn(state, prefix, frozen) -> BatchNormParams:
    return BatchNormParams(
        state[f"{prefix}.gamma"],
        state[f"{prefix}.beta"],
        state[f"{prefix}.running_mean"],
        state[f"{prefix}.running_var"],
        float(state[f"{prefix}.eps"]),
        bool(frozen.get(prefix, False)),
    )


def model_from_state(cfg: ModelConfig, state: dict, frozen: dict | None = None) -> Model:
    """Assemble a :class:`Model` from named tensors (see :func:`param_shapes`)."""
    frozen = frozen or {}
    expected = param_shapes(cfg)
    missing = set(expected) - set(state)
    extra = set(state) - set(expected)
    if missing or extra:
        raise ValidationError(f"state does not match config: missing {sorted(missing)[:5]}, extra {sorted(extra)[:5]}")
    for name, (shape, _) in expected.items():
        if tuple(state[name].shape) != shape:
            raise DimensionError(f"{name}: shape {state[name].shape}, expected {shape}")
    blocks = []
    for i in range(cfg.depth):
        p = f"blocks.{i}"
        if cfg.mixer == "self-attention":
            mixer = AttentionBlock(
                _ln(state, f"{p}.attn.norm"),
                state[f"{p}.attn.qkv.weight"],
                state[f"{p}.attn.qkv.bias"],
                state[f"{p}.attn.proj.weight"],
                state[f"{p}.attn.proj.bias"],
                cfg.heads,
            )
        else:
            mixer = PoolMixer()
        f = f"{p}.ffn"
        if cfg.ffn_form == "vanilla-ln":
            ffn = VanillaFfn(
                _ln(state, f"{f}.norm"),
                state[f"{f}.fc1.weight"],
                state[f"{f}.fc1.bias"],
                state[f"{f}.fc2.weight"],
                state[f"{f}.fc2.bias"],
            )
        elif cfg.ffn_form == "idle-train":
            ffn = IdleFfnTrain(
                _bn(state, f"{f}.bn1", frozen),
                state[f"{f}.fc1.weight"],
                state[f"{f}.fc1.bias"],
                _bn(state, f"{f}.bn2", frozen),
                state[f"{f}.fc2.weight"],
                state[f"{f}.fc2.bias"],
                cfg.active_dim,
            )
        else:
            ffn = IdleFfnInfer(
                state[f"{f}.act_in.weight"],
                state[f"{f}.act_in.bias"],
                state[f"{f}.act_out.weight"],
                state[f"{f}.merged.weight"],
                state[f"{f}.merged.bias"],
            )
        blocks.append(Block(mixer, ffn))
    return Model(
        cfg=cfg,
        patch_w=state["patch_embed.weight"],
        patch_b=state["patch_embed.bias"],
        cls_token=state["cls_token"],
        pos_embed=state["pos_embed"],
        blocks=blocks,
        norm=_ln(state, "norm"),
        head_w=state["head.weight"],
        head_b=state["head.bias"],
    )


def _norm_state(out, prefix, norm):
    out[f"{prefix}.gamma"] = norm.gamma
    out[f"{prefix}.beta"] = norm.beta
    if isinstance(norm, BatchNormParams):
        out[f"{prefix}.running_mean"] = norm.running_mean
        out[f"{prefix}.running_var"] = norm.running_var
    out[f"{prefix}.eps"] = np.array(norm.eps, dtype=np.float64)


def model_state(model: Model) -> "OrderedDict[str, np.ndarray]":
    """Named tensors of ``model`` in :func:`param_shapes` order (arrays are not copied)."""
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    out["patch_embed.weight"] = model.patch_w
    out["patch_embed.bias"] = model.patch_b
    out["cls_token"] = model.cls_token
    out["pos_embed"] = model.pos_embed
    for i, blk in enumerate(model.blocks):
        p = f"blocks.{i}"
        m = blk.mixer
        if isinstance(m, AttentionBlock):
            _norm_state(out, f"{p}.attn.norm", m.norm)
            out[f"{p}.attn.qkv.weight"] = m.w_qkv
            out[f"{p}.attn.qkv.bias"] = m.b_qkv
            out[f"{p}.attn.proj.weight"] = m.w_proj
            out[f"{p}.attn.proj.bias"] = m.b_proj
        f = blk.ffn
        q = f"{p}.ffn"
        if isinstance(f, VanillaFfn):
            _norm_state(out, f"{q}.norm", f.norm)
            out[f"{q}.fc1.weight"], out[f"{q}.fc1.bias"] = f.w_in, f.b_in
            out[f"{q}.fc2.weight"], out[f"{q}.fc2.bias"] = f.w_out, f.b_out
        elif isinstance(f, IdleFfnTrain):
            _norm_state(out, f"{q}.bn1", f.bn1)
            out[f"{q}.fc1.weight"], out[f"{q}.fc1.bias"] = f.w_in, f.b_in
            _norm_state(out, f"{q}.bn2", f.bn2)
            out[f"{q}.fc2.weight"], out[f"{q}.fc2.bias"] = f.w_out, f.b_out
        else:
            out[f"{q}.act_in.weight"], out[f"{q}.act_in.bias"] = f.w_act_in, f.b_act_in
            out[f"{q}.act_out.weight"] = f.w_act_out
            out[f"{q}.merged.weight"], out[f"{q}.merged.bias"] = f.w_merged, f.b_merged
    _norm_state(out, "norm", model.norm)
    out["head.weight"] = model.head_w
    out["head.bias"] = model.head_b
    return out


def frozen_flags(model: Model) -> dict:
    return {f"blocks.{i}.ffn.{name}": bn.frozen for i, name, bn in model.batchnorms()}


def build_model(cfg: ModelConfig, dtype=np.float32) -> Model:
    """Deterministic model from ``cfg``.

    Weights, class token and positional table are truncated normal (std 0.02,
    clipped at two std) seeded per tensor name; biases zero; norms identity.
    An ``idle-infer`` config is produced by building the train form and
    reparameterizing it, so both start from the same function.
    """
    dtype = np.dtype(dtype)
    if cfg.ffn_form == "idle-infer":
        from .reparam import reparameterize_model

        train = build_model(cfg.with_(ffn_form="idle-train"), dtype)
        freeze_model(train)
        return reparameterize_model(train)[0]
    state = {
        name: _initial_value(name, shape, cfg, dtype) for name, (shape, _) in param_shapes(cfg).items()
    }
    return model_from_state(cfg, state)


def freeze_model(model: Model) -> Model:
    for _, _, bn in model.batchnorms():
        bn.frozen = True
    return model


def randomize_batchnorms(model: Model, seed: int = 0, var_range=(0.1, 10.0)) -> Model:
    """Overwrite every BN's affine and running stats with random values (in place).

    Used to make equivalence checks non-trivial on freshly built models.
    """
    rng = np.random.default_rng(seed)
    lo, hi = np.log(var_range[0]), np.log(var_range[1])
    for _, _, bn in model.batchnorms():
        n, dt = bn.channels, bn.gamma.dtype
        bn.gamma = rng.uniform(0.5, 1.5, n).astype(dt)
        bn.beta = rng.normal(0.0, 0.1, n).astype(dt)
        bn.running_mean = rng.normal(0.0, 0.1, n).astype(dt)
        bn.running_var = np.exp(rng.uniform(lo, hi, n)).astype(dt)
    return model


def cast_model(model: Model, dtype) -> Model:
    state = {
        k: (v if k.endswith(".eps") else v.astype(dtype)) for k, v in model_state(model).items()
    }
    return model_from_state(model.cfg, state, frozen_flags(model))


def copy_model(model: Model) -> Model:
    state = {k: v.copy() for k, v in model_state(model).items()}
    return model_from_state(model.cfg, state, frozen_flags(model))
