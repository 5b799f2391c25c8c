"""Latency profiling, equivalence verification and accounting drivers.

Timing follows a warmup-then-measure scheme and reports medians, with pre
and post forms measured in alternation so drift hits both equally.
"""

from __future__ import annotations

import contextlib
import csv
import io
import json
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .accounting import AccountingReport, account
from .config import ModelConfig, preset_config
from .errors import ValidationError
from .model import Model, build_model, forward_model, freeze_model, randomize_batchnorms
from .model_io import load_model, save_model
from .reparam import DEFAULT_TOL, reparameterize_model
from .tensor_core import rel_frobenius

COMPONENT_KEYS = ("patch_embed", "mhsa", "ffn", "other")
MIN_MEASURE_ITERS = 10
VERIFY_TOL = {"f32": 1e-4, "f64": 1e-10}
DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass
class BenchReport:
    preset: str
    theta: float
    batch_size: int
    dtype: str
    warmup_iters: int
    measure_iters: int
    per_component_ms: dict
    images_per_second_pre: float
    images_per_second_post: float
    speedup_percent: float
    environment_note: str
    per_component_ms_post: dict = field(default_factory=dict)
    total_ms_pre: float = 0.0
    total_ms_post: float = 0.0
    baseline_form: str = "idle-train"
    depth: int = 0

    def ffn_fraction_pre(self) -> float:
        return self.per_component_ms["ffn"] / sum(self.per_component_ms.values())

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["component", "pre_ms", "post_ms"])
        for k in COMPONENT_KEYS:
            w.writerow([k, f"{self.per_component_ms[k]:.4f}", f"{self.per_component_ms_post.get(k, 0.0):.4f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [
            f"{self.preset} theta={self.theta} depth={self.depth} batch={self.batch_size} {self.dtype} "
            f"warmup={self.warmup_iters} iters={self.measure_iters} (medians)",
            f"{'component':<12} {'pre ms':>10} {'post ms':>10}",
        ]
        for k in COMPONENT_KEYS:
            lines.append(f"{k:<12} {self.per_component_ms[k]:>10.2f} {self.per_component_ms_post.get(k, 0.0):>10.2f}")
        lines.append(f"{'total':<12} {self.total_ms_pre:>10.2f} {self.total_ms_post:>10.2f}")
        lines.append(
            f"images/s pre={self.images_per_second_pre:.2f} post={self.images_per_second_post:.2f} "
            f"speedup={self.speedup_percent:+.1f}%"
        )
        lines.append(self.environment_note)
        return "\n".join(lines)


@contextlib.contextmanager
def thread_limit(threads: int | None):
    """BLAS thread cap for timed sections; ``None`` means single-threaded."""
    with threadpool_limits(limits=1 if threads is None else threads):
        yield


def _environment_note(threads) -> str:
    return (
        f"python {platform.python_version()}, numpy {np.__version__}, {platform.machine()}, "
        f"blas_threads={1 if threads is None else threads}; absolute numbers are hardware-relative"
    )


def _time_once(model: Model, images: np.ndarray):
    t0 = time.perf_counter()
    _, tm = forward_model(model, images, timing=True)
    wall = (time.perf_counter() - t0) * 1e3
    return wall, tm.ms


def _medians(samples: list[dict]) -> dict:
    return {k: statistics.median(s[k] for s in samples) for k in COMPONENT_KEYS}


def build_pair(cfg: ModelConfig, dtype=np.float32, seed: int = 0, baseline: str = "idle-train"):
    """Pre-reparameterization model (``baseline`` form) and its condensed counterpart."""
    if baseline == "idle-train":
        pre = build_model(cfg.with_(ffn_form="idle-train"), dtype)
        randomize_batchnorms(pre, seed)
        freeze_model(pre)
        post, _ = reparameterize_model(pre)
    elif baseline == "vanilla-ln":
        pre = build_model(cfg.with_(ffn_form="vanilla-ln"), dtype)
        post = build_model(cfg.with_(ffn_form="idle-infer"), dtype)
    else:
        raise ValidationError(f"baseline must be 'idle-train' or 'vanilla-ln', got {baseline!r}")
    return pre, post


def run_profile(
    preset: str,
    theta: float = 0.75,
    batch: int = 32,
    iters: int = 50,
    warmup: int = 10,
    dtype: str = "f32",
    seed: int = 0,
    depth: int | None = None,
    rho: float | None = None,
    baseline: str = "idle-train",
    threads: int | None = None,
    measure_post: bool = True,
) -> BenchReport:
    """Per-component latency of the pre and post forms, medians over ``iters``."""
    if batch < 1:
        raise ValidationError("batch must be >= 1")
    if iters < MIN_MEASURE_ITERS:
        raise ValidationError(f"iters must be >= {MIN_MEASURE_ITERS}, got {iters}")
    if warmup < 0:
        raise ValidationError("warmup must be >= 0")
    if dtype not in DTYPES:
        raise ValidationError(f"dtype must be one of {sorted(DTYPES)}")
    over = {"idle_ratio": theta, "seed": seed}
    if depth is not None:
        over["depth"] = depth
    if rho is not None:
        over["expand_ratio"] = rho
    cfg = preset_config(preset, **over)
    np_dtype = DTYPES[dtype]
    pre, post = build_pair(cfg, np_dtype, seed, baseline)
    images = np.random.default_rng(seed).standard_normal(
        (batch, cfg.in_channels, cfg.image_size, cfg.image_size)
    ).astype(np_dtype)

    models = [pre, post] if measure_post else [pre]
    walls = [[] for _ in models]
    comps = [[] for _ in models]
    with thread_limit(threads):
        for _ in range(warmup):
            for m in models:
                forward_model(m, images)
        for _ in range(iters):
            for j, m in enumerate(models):
                wall, ms = _time_once(m, images)
                walls[j].append(wall)
                comps[j].append(ms)
    total_pre = statistics.median(walls[0])
    pre_ms = _medians(comps[0])
    if measure_post:
        total_post = statistics.median(walls[1])
        post_ms = _medians(comps[1])
    else:
        total_post, post_ms = float("nan"), {}
    ips_pre = batch / (total_pre / 1e3)
    ips_post = batch / (total_post / 1e3) if measure_post else float("nan")
    return BenchReport(
        preset=preset,
        theta=theta,
        batch_size=batch,
        dtype=dtype,
        warmup_iters=warmup,
        measure_iters=iters,
        per_component_ms=pre_ms,
        images_per_second_pre=ips_pre,
        images_per_second_post=ips_post,
        speedup_percent=100.0 * (ips_post / ips_pre - 1.0),
        environment_note=_environment_note(threads),
        per_component_ms_post=post_ms,
        total_ms_pre=total_pre,
        total_ms_post=total_post,
        baseline_form=baseline,
        depth=cfg.depth,
    )


def ffn_latency_fractions(
    presets=("deit-tiny", "deit-small", "deit-base"),
    batch: int = 16,
    iters: int = 30,
    warmup: int = 3,
    depth: int | None = None,
    dtype: str = "f32",
    seed: int = 0,
    form: str = "vanilla-ln",
    threads: int | None = None,
) -> dict:
    """Median FFN share of per-component time for several presets.

    Presets are timed round-robin so slow drift in machine load is shared
    across them instead of biasing whichever ran last.
    """
    if iters < MIN_MEASURE_ITERS:
        raise ValidationError(f"iters must be >= {MIN_MEASURE_ITERS}, got {iters}")
    np_dtype = DTYPES[dtype]
    models, inputs = [], []
    for name in presets:
        over = {"ffn_form": form, "seed": seed}
        if depth is not None:
            over["depth"] = depth
        cfg = preset_config(name, **over)
        m = build_model(cfg, np_dtype)
        if form == "idle-train":
            freeze_model(m)
        models.append(m)
        inputs.append(random_images(cfg, batch, seed, np_dtype))
    shares = [[] for _ in presets]
    with thread_limit(threads):
        for _ in range(warmup):
            for m, x in zip(models, inputs):
                forward_model(m, x)
        for _ in range(iters):
            for j, (m, x) in enumerate(zip(models, inputs)):
                _, ms = _time_once(m, x)
                shares[j].append(ms["ffn"] / sum(ms[k] for k in COMPONENT_KEYS))
    return {name: statistics.median(v) for name, v in zip(presets, shares)}


# ---------------------------------------------------------------------------
# verification


def compare_logits(a: Model, b: Model, probes: np.ndarray) -> dict:
    pre, _ = forward_model(a, probes)
    post, _ = forward_model(b, probes)
    rel = max(rel_frobenius(post[i], pre[i]) for i in range(len(pre)))
    return {
        "max_rel_diff": rel,
        "argmax_identical": bool(np.array_equal(pre.argmax(axis=1), post.argmax(axis=1))),
    }


def random_images(cfg: ModelConfig, n: int, seed: int, dtype) -> np.ndarray:
    rng = np.random.default_rng([seed, 7])
    return rng.standard_normal((n, cfg.in_channels, cfg.image_size, cfg.image_size)).astype(dtype)


def run_verify(
    preset: str,
    theta: float = 0.75,
    probes: int = 20,
    dtype: str = "f64",
    seed: int = 0,
    depth: int | None = None,
    rho: float | None = None,
    corrupt: bool = False,
) -> dict:
    """Whole-model pre/post equivalence on a random frozen model.

    ``corrupt`` perturbs one merged-weight entry by 1e-2 after the rewrite
    (negative control).
    """
    if probes < 1:
        raise ValidationError("probes must be >= 1")
    if dtype not in DTYPES:
        raise ValidationError(f"dtype must be one of {sorted(DTYPES)}")
    over = {"idle_ratio": theta, "seed": seed, "ffn_form": "idle-train"}
    if depth is not None:
        over["depth"] = depth
    if rho is not None:
        over["expand_ratio"] = rho
    cfg = preset_config(preset, **over)
    np_dtype = DTYPES[dtype]
    pre = build_model(cfg, np_dtype)
    randomize_batchnorms(pre, seed)
    freeze_model(pre)
    post, _ = reparameterize_model(pre, tol=max(VERIFY_TOL[dtype], DEFAULT_TOL[np.dtype(np_dtype)]))
    if corrupt:
        post.blocks[0].ffn.w_merged[0, 0] += np_dtype(1e-2)
    out = compare_logits(pre, post, random_images(cfg, probes, seed, np_dtype))
    out["tolerance"] = VERIFY_TOL[dtype]
    out["pass"] = bool(out["max_rel_diff"] <= VERIFY_TOL[dtype] and out["argmax_identical"])
    out.update(preset=preset, theta=theta, probes=probes, dtype=dtype, seed=seed)
    return out


def verify_files(in_path, against=None, probes: int = 8, seed: int = 0) -> dict:
    """Check a weight file.

    With ``against``, compares logits of the two files. Alone, a train-form
    file is reparameterized in memory and compared with itself.
    """
    a = load_model(in_path)
    dt = "f64" if a.dtype == np.float64 else "f32"
    if against is not None:
        b = load_model(against)
        if a.cfg.with_(ffn_form="idle-train") != b.cfg.with_(ffn_form="idle-train"):
            raise ValidationError("the two files describe different architectures")
    else:
        if a.cfg.ffn_form != "idle-train":
            raise ValidationError("a lone file must be in idle-train form; pass --against to compare two files")
        b, _ = reparameterize_model(a, spot_check=False)
    out = compare_logits(a, b, random_images(a.cfg, probes, seed, a.dtype))
    out["tolerance"] = VERIFY_TOL[dt]
    out["pass"] = bool(out["max_rel_diff"] <= VERIFY_TOL[dt] and out["argmax_identical"])
    return out


# ---------------------------------------------------------------------------
# accounting / reparam drivers


def run_account(
    preset: str | None = None,
    theta: float = 0.75,
    mode: str = "linear-only",
    form: str = "idle-infer",
    rho: float | None = None,
    tokens: int | None = None,
    cfg: ModelConfig | None = None,
) -> AccountingReport:
    if cfg is None:
        if preset is None:
            raise ValidationError("need a preset or a config")
        over = {"idle_ratio": theta, "ffn_form": form}
        if rho is not None:
            over["expand_ratio"] = rho
        cfg = preset_config(preset, **over)
    return account(cfg, tokens, mode)


def run_reparam(in_path, out_path, freeze: bool = False) -> list:
    model = load_model(in_path)
    if freeze:
        freeze_model(model)
    new, reports = reparameterize_model(model)
    save_model(new, out_path)
    return reports
