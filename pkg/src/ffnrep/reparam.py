"""Post-training rewrite of channel-idle FFNs into their condensed inference form.

Pipeline per layer:

1. fold ``bn1`` into ``(w_in, b_in)`` and ``bn2`` into ``(w_out, b_out)``;
2. split the folded projections at the active width;
3. multiply the idle halves together and add the identity (the shortcut);
4. collect every bias that ends up on the linear route into one vector.

Folding and merging are computed in float64 and cast back to the layer
dtype once, since the merged matrix is reused for every input.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionError, EquivalenceError, StateError, UnsupportedConfigError
from .model import (
    AttentionBlock,
    Block,
    IdleFfnInfer,
    IdleFfnTrain,
    Model,
    PoolMixer,
    forward_ffn_idle_infer,
    forward_ffn_idle_train,
)
from .tensor_core import BatchNormParams, LayerNormParams, rel_frobenius

DEFAULT_TOL = {np.dtype(np.float32): 1e-4, np.dtype(np.float64): 1e-10}


@dataclass
class FoldedLinear:
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class ReparamReport:
    layer_index: int
    params_before: int
    params_after: int
    # weight-only ratio (biases and norms excluded); >= 1 means the rewrite inflates
    reduction_ratio_measured: float
    max_abs_diff_spotcheck: float
    reducing: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def fold_batchnorm(bn: BatchNormParams, w: np.ndarray, b: np.ndarray) -> FoldedLinear:
    """Absorb a frozen BN that feeds ``x @ w + b`` into the projection.

    With ``s = gamma / sqrt(var + eps)``:
    ``weight = diag(s) @ w`` and ``bias = (beta - s * mean) @ w + b``.
    """
    if not bn.frozen:
        raise StateError("BatchNorm must be frozen before folding")
    if bn.channels != w.shape[0]:
        raise DimensionError(f"BatchNorm has {bn.channels} channels but weight has {w.shape[0]} rows")
    if b.shape != (w.shape[1],):
        raise DimensionError(f"bias shape {b.shape} does not match weight columns {w.shape[1]}")
    w64 = w.astype(np.float64)
    s = bn.gamma.astype(np.float64) / np.sqrt(bn.running_var.astype(np.float64) + bn.eps)
    shift = bn.beta.astype(np.float64) - s * bn.running_mean.astype(np.float64)
    weight = s[:, None] * w64
    bias = shift @ w64 + b.astype(np.float64)
    return FoldedLinear(weight.astype(w.dtype), bias.astype(b.dtype))


def merge_idle_path(w_in_idle: np.ndarray, b_in_idle: np.ndarray, w_out_idle: np.ndarray):
    """``W_merged = w_in_idle @ w_out_idle + I`` and ``b_in_idle @ w_out_idle``.

    Returns ``(w_merged, bias_contrib)``. An idle width of zero yields the identity.
    """
    c_in, width = w_in_idle.shape
    if w_out_idle.shape[0] != width:
        raise DimensionError(f"idle widths differ: {w_in_idle.shape} vs {w_out_idle.shape}")
    if w_out_idle.shape[1] != c_in:
        raise DimensionError(f"merged matrix would be {c_in}x{w_out_idle.shape[1]}, not square")
    if b_in_idle.shape != (width,):
        raise DimensionError(f"idle bias shape {b_in_idle.shape}, expected ({width},)")
    wo = w_out_idle.astype(np.float64)
    merged = w_in_idle.astype(np.float64) @ wo + np.eye(c_in)
    contrib = b_in_idle.astype(np.float64) @ wo
    return merged.astype(w_in_idle.dtype), contrib.astype(b_in_idle.dtype)


def _fold_and_merge(ffn: IdleFfnTrain) -> IdleFfnInfer:
    dt = ffn.w_in.dtype
    # fold in float64 and keep it until the final cast
    fin = fold_batchnorm(ffn.bn1, ffn.w_in.astype(np.float64), ffn.b_in.astype(np.float64))
    fout = fold_batchnorm(ffn.bn2, ffn.w_out.astype(np.float64), ffn.b_out.astype(np.float64))
    a = ffn.active
    w_merged, contrib = merge_idle_path(fin.weight[:, a:], fin.bias[a:], fout.weight[a:, :])
    return IdleFfnInfer(
        w_act_in=np.ascontiguousarray(fin.weight[:, :a]).astype(dt),
        b_act_in=fin.bias[:a].astype(dt),
        w_act_out=np.ascontiguousarray(fout.weight[:a, :]).astype(dt),
        w_merged=w_merged.astype(dt),
        b_merged=(contrib + fout.bias).astype(dt),
    )


def train_form_params(ffn: IdleFfnTrain) -> int:
    """Learnable parameters of the train form: projections, biases, BN affines."""
    return ffn.w_in.size + ffn.b_in.size + ffn.w_out.size + ffn.b_out.size + 2 * ffn.bn1.channels + 2 * ffn.bn2.channels


def reparameterize_ffn(
    ffn: IdleFfnTrain,
    layer_index: int = 0,
    spot_check: bool = True,
    tol: float | None = None,
    seed: int = 0,
):
    """Rewrite one frozen train-form FFN. Returns ``(IdleFfnInfer, ReparamReport)``.

    The spot check pushes 16 random rows through both forms and raises
    :class:`EquivalenceError` if their relative Frobenius gap exceeds ``tol``.
    """
    if not ffn.bn1.frozen or not ffn.bn2.frozen:
        raise StateError(f"layer {layer_index}: BatchNorms must be frozen before reparameterization")
    infer = _fold_and_merge(ffn)
    c, h = ffn.channels, ffn.hidden
    weights_before = 2 * c * h
    weights_after = (2 * ffn.active + c) * c
    ratio = weights_after / weights_before
    diff = 0.0
    if spot_check:
        dt = ffn.w_in.dtype
        rng = np.random.default_rng([seed, layer_index])
        x = rng.standard_normal((16, c)).astype(dt)
        ref = forward_ffn_idle_train(ffn, x, "eval")
        out = forward_ffn_idle_infer(infer, x)
        diff = float(np.max(np.abs(out.astype(np.float64) - ref)))
        limit = DEFAULT_TOL.get(np.dtype(dt), 1e-4) if tol is None else tol
        rel = rel_frobenius(out, ref)
        if rel > limit:
            raise EquivalenceError(f"layer {layer_index}: spot check rel diff {rel:.3e} > {limit:.1e}")
    report = ReparamReport(
        layer_index=layer_index,
        params_before=train_form_params(ffn),
        params_after=infer.num_params(),
        reduction_ratio_measured=ratio,
        max_abs_diff_spotcheck=diff,
        reducing=ratio < 1.0,
    )
    return infer, report


def _copy_ln(ln: LayerNormParams) -> LayerNormParams:
    return ln.copy()


def _copy_mixer(m):
    if isinstance(m, PoolMixer):
        return PoolMixer()
    return AttentionBlock(_copy_ln(m.norm), m.w_qkv.copy(), m.b_qkv.copy(), m.w_proj.copy(), m.b_proj.copy(), m.heads)


def reparameterize_model(model: Model, spot_check: bool = True, tol: float | None = None):
    """Rewrite every FFN of a frozen train-form model.

    Returns ``(new_model, reports)``; the source model is not modified and all
    non-FFN tensors are copied verbatim.
    """
    form = model.cfg.ffn_form
    if form == "idle-infer":
        raise StateError("model is already in inference form; refusing to reparameterize twice")
    if form != "idle-train":
        raise UnsupportedConfigError(f"cannot reparameterize ffn_form {form!r}; LayerNorm is not foldable")
    for i, name, bn in model.batchnorms():
        if not bn.frozen:
            raise StateError(f"block {i}: {name} is not frozen")
    blocks, reports = [], []
    for i, blk in enumerate(model.blocks):
        infer, rep = reparameterize_ffn(blk.ffn, layer_index=i, spot_check=spot_check, tol=tol, seed=model.cfg.seed)
        blocks.append(Block(_copy_mixer(blk.mixer), infer))
        reports.append(rep)
    new = Model(
        cfg=model.cfg.with_(ffn_form="idle-infer"),
        patch_w=model.patch_w.copy(),
        patch_b=model.patch_b.copy(),
        cls_token=model.cls_token.copy(),
        pos_embed=model.pos_embed.copy(),
        blocks=blocks,
        norm=_copy_ln(model.norm),
        head_w=model.head_w.copy(),
        head_b=model.head_b.copy(),
    )
    return new, reports
