"""Exact parameter and MAC accounting per model component."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Union

from .config import ModelConfig
from .errors import ValidationError
from .model import Model, model_state, param_shapes

COMPONENTS = ("patch_embed", "mhsa", "ffn", "head", "norms_other")
MAC_MODES = ("linear-only", "full")


@dataclass
class AccountingReport:
    per_component: dict
    totals: dict
    config_echo: dict
    counting_mode: str
    tokens: int = 0

    def to_dict(self) -> dict:
        return {
            "per_component": self.per_component,
            "totals": self.totals,
            "config_echo": self.config_echo,
            "counting_mode": self.counting_mode,
            "tokens": self.tokens,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["component", "params", "macs"])
        for name in COMPONENTS:
            c = self.per_component[name]
            w.writerow([name, c["params"], c["macs"]])
        w.writerow(["total", self.totals["params"], self.totals["macs"]])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'component':<12} {'params':>14} {'M':>9} {'macs':>16} {'G':>9}"]
        rows = [(n, self.per_component[n]) for n in COMPONENTS] + [("total", self.totals)]
        for name, c in rows:
            lines.append(
                f"{name:<12} {c['params']:>14,d} {c['params'] / 1e6:>9.2f} {c['macs']:>16,d} {c['macs'] / 1e9:>9.3f}"
            )
        lines.append(f"mode={self.counting_mode} tokens={self.tokens} ffn_form={self.config_echo['ffn_form']}")
        return "\n".join(lines)


def component_of(name: str) -> str:
    if name.startswith("patch_embed.") or name in ("cls_token", "pos_embed"):
        return "patch_embed"
    if name.startswith("blocks."):
        return "mhsa" if ".attn." in name else "ffn"
    if name.startswith("head."):
        return "head"
    return "norms_other"


def _param_sizes(source: Union[Model, ModelConfig]):
    if isinstance(source, Model):
        flags = param_shapes(source.cfg)
        for name, arr in model_state(source).items():
            if flags[name][1]:
                yield name, int(arr.size)
    else:
        for name, (shape, is_param) in param_shapes(source).items():
            if is_param:
                n = 1
                for s in shape:
                    n *= s
                yield name, n


def _macs(cfg: ModelConfig, tokens: int, mode: str) -> dict:
    c, h, a = cfg.embed_dim, cfg.hidden_dim, cfg.active_dim
    out = dict.fromkeys(COMPONENTS, 0)
    out["patch_embed"] = cfg.num_patches * cfg.patch_dim * c
    if cfg.mixer == "self-attention":
        per = tokens * c * 3 * c + tokens * c * c
        if mode == "full":
            per += 2 * tokens * tokens * c
        out["mhsa"] = cfg.depth * per
    if cfg.ffn_form == "idle-infer":
        out["ffn"] = cfg.depth * tokens * (2 * a * c + c * c)
    else:
        out["ffn"] = cfg.depth * 2 * tokens * c * h
    out["head"] = c * cfg.num_classes
    return out


def account(source: Union[Model, ModelConfig], tokens: int | None = None, mode: str = "full") -> AccountingReport:
    """Parameters and per-image MACs for a model or a bare config.

    ``linear-only`` counts projection and patch-embedding matmuls;
    ``full`` also counts the two attention products (scores and values).
    """
    if mode not in MAC_MODES:
        raise ValidationError(f"mode must be one of {MAC_MODES}, got {mode!r}")
    cfg = source.cfg if isinstance(source, Model) else source
    tokens = cfg.num_tokens if tokens is None else int(tokens)
    if tokens < 1:
        raise ValidationError("tokens must be >= 1")
    params = dict.fromkeys(COMPONENTS, 0)
    for name, n in _param_sizes(source):
        params[component_of(name)] += n
    macs = _macs(cfg, tokens, mode)
    per = {k: {"params": params[k], "macs": macs[k]} for k in COMPONENTS}
    totals = {"params": sum(params.values()), "macs": sum(macs.values())}
    return AccountingReport(per, totals, cfg.to_dict(), mode, tokens)


def count_params(source: Union[Model, ModelConfig]) -> AccountingReport:
    return account(source, mode="full")


def count_macs(source: Union[Model, ModelConfig], tokens: int | None = None, mode: str = "linear-only") -> AccountingReport:
    return account(source, tokens, mode)


def reduction_ratio(theta, rho):
    """Fraction of FFN weights kept by the rewrite: ``1 - theta + 1/(2 rho)``.

    Works on floats or :class:`fractions.Fraction` (exact).
    """
    if not 0 <= theta <= 1:
        raise ValidationError(f"theta must lie in [0, 1], got {theta}")
    if not rho >= 1:
        raise ValidationError(f"rho must be >= 1, got {rho}")
    return 1 - theta + 1 / (2 * rho)


def ffn_weight_counts(cfg: ModelConfig) -> tuple[int, int]:
    """Weight-matrix elements of one FFN before and after the rewrite."""
    c = cfg.embed_dim
    return 2 * c * cfg.hidden_dim, (2 * cfg.active_dim + c) * c


def ffn_fraction(report: AccountingReport) -> float:
    return report.per_component["ffn"]["macs"] / report.totals["macs"]
