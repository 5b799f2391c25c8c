"""Architecture configuration and named presets."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace

from .errors import ValidationError

MIXERS = ("self-attention", "average-pool")
FFN_FORMS = ("vanilla-ln", "idle-train", "idle-infer")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ModelConfig:
    depth: int
    embed_dim: int
    heads: int
    expand_ratio: float = 4.0
    idle_ratio: float = 0.75
    patch_size: int = 16
    image_size: int = 224
    in_channels: int = 3
    num_classes: int = 1000
    mixer: str = "self-attention"
    ffn_form: str = "idle-train"
    seed: int = 0

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise ValidationError("invalid ModelConfig: " + "; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        for name in ("depth", "embed_dim", "heads", "patch_size", "image_size", "in_channels", "num_classes"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                out.append(f"{name} must be a positive integer (got {v!r})")
        if out:
            return out
        if not self.expand_ratio >= 1:
            out.append(f"expand_ratio must be >= 1 (got {self.expand_ratio})")
        if not 0.0 <= self.idle_ratio <= 1.0:
            out.append(f"idle_ratio must lie in [0, 1] (got {self.idle_ratio})")
        if self.embed_dim % self.heads:
            out.append(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.image_size % self.patch_size:
            out.append(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.mixer not in MIXERS:
            out.append(f"mixer must be one of {MIXERS} (got {self.mixer!r})")
        if self.ffn_form not in FFN_FORMS:
            out.append(f"ffn_form must be one of {FFN_FORMS} (got {self.ffn_form!r})")
        if not isinstance(self.seed, int) or self.seed < 0:
            out.append(f"seed must be an unsigned integer (got {self.seed!r})")
        if not out:
            hidden = self.expand_ratio * self.embed_dim
            if abs(hidden - round(hidden)) > 1e-9:
                out.append(f"expand_ratio * embed_dim = {hidden} is not an integer")
        return out

    @property
    def hidden_dim(self) -> int:
        """rho * C."""
        return round_half_up(self.expand_ratio * self.embed_dim)

    @property
    def active_dim(self) -> int:
        """mu * C = round((1 - theta) * rho * C); 0 at theta=1, rho*C at theta=0."""
        return round_half_up((1.0 - self.idle_ratio) * self.hidden_dim)

    @property
    def idle_dim(self) -> int:
        return self.hidden_dim - self.active_dim

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def num_tokens(self) -> int:
        return self.num_patches + 1

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.in_channels

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


PRESETS: dict[str, dict] = {
    "deit-tiny": dict(depth=12, embed_dim=192, heads=3),
    "deit-small": dict(depth=12, embed_dim=384, heads=6),
    "deit-base": dict(depth=12, embed_dim=768, heads=12),
    "vit-large": dict(depth=24, embed_dim=1024, heads=16),
    "vit-huge": dict(depth=32, embed_dim=1280, heads=16),
    "pool-tiny": dict(depth=12, embed_dim=192, heads=3, mixer="average-pool"),
}


def preset_config(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kw = dict(PRESETS[name])
    kw.update(overrides)
    return ModelConfig(**kw)


_CONFIG_KEYS = {f.name for f in fields(ModelConfig)}


def config_from_dict(d: dict) -> ModelConfig:
    """Parse a config-file object; ``preset`` expands first, explicit keys win."""
    unknown = set(d) - _CONFIG_KEYS - {"preset"}
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    kw = {}
    if d.get("preset") is not None:
        if d["preset"] not in PRESETS:
            raise ValidationError(f"unknown preset {d['preset']!r}")
        kw.update(ModelConfig(**PRESETS[d["preset"]]).to_dict())
    kw.update({k: v for k, v in d.items() if k != "preset"})
    missing = {"depth", "embed_dim", "heads"} - set(kw)
    if missing:
        raise ValidationError(f"missing config keys: {sorted(missing)}")
    return ModelConfig(**kw)


def load_config(path) -> ModelConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def save_config(cfg: ModelConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
