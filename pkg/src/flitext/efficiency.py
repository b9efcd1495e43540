"""Parameter counting, analytic FLOPs estimation, and wall-clock inference
benchmarking.

FLOPs convention (printed in every report): one multiply-add counts as 2
operations; the headline covers matmul and conv kernels only (embedding
lookups are copies and cost 0); layer norm, softmax, activations, biases and
residuals are excluded from the headline and itemized separately. This makes
the analytic estimate exactly equal to an instrumented per-op count over a
real forward pass.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import no_grad
from .errors import ConfigError, PreconditionError
from .models import CLS_ID, InspirerConfig, TargetConfig

CONVENTION = ("multiply-add = 2 flops; headline counts matmul/conv kernels only; "
              "embedding lookup = 0; norm/softmax/activation itemized separately")


def count_params(config) -> int:
    """Closed-form parameter count from the declared weight shapes."""
    if isinstance(config, InspirerConfig):
        d, ff = config.d, config.ff_dim
        per_layer = 4 * (d * d + d) + (d * ff + ff) + (ff * d + d) + 4 * d
        total = config.vocab_size * d + config.max_len * d + config.layers * per_layer
        total += d * config.mlp_hidden + config.mlp_hidden
        total += config.mlp_hidden * config.classes + config.classes
        if config.projection_dim is not None:
            total += d * config.projection_dim + config.projection_dim
        return total
    if isinstance(config, TargetConfig):
        total = config.vocab_size * config.emb_dim
        for k in config.filter_sizes:
            total += k * config.emb_dim * config.channels + config.channels
        total_ch = config.channels * len(config.filter_sizes)
        total += total_ch * config.classes + config.classes
        if config.projection_dim is not None:
            total += config.channels * config.projection_dim + config.projection_dim
        return total
    raise ConfigError(f"count_params got {type(config).__name__}")


def estimate_flops(config, n) -> int:
    """Headline flops of one forward pass over an n-token sequence."""
    if n < 1:
        raise PreconditionError(f"sequence length must be >= 1, got {n}")
    if isinstance(config, InspirerConfig):
        d, ff = config.d, config.ff_dim
        attention = 2 * (2 * n * n * d + 4 * n * d * d)
        feed_forward = 2 * (2 * n * d * ff)
        head = 2 * (d * config.mlp_hidden + config.mlp_hidden * config.classes)
        return config.layers * (attention + feed_forward) + head
    if isinstance(config, TargetConfig):
        conv = sum(2 * k * config.emb_dim * config.channels * (n - k + 1)
                   for k in config.filter_sizes if n - k + 1 > 0)
        total_ch = config.channels * len(config.filter_sizes)
        head = 2 * total_ch * config.classes
        return conv + head
    raise ConfigError(f"estimate_flops got {type(config).__name__}")


def flops_breakdown(config, n) -> dict:
    """Headline parts plus itemized excluded costs (rough, per-element:
    layer_norm 8, softmax 5, relu 1, tanh 8, bias/residual add 1)."""
    if isinstance(config, InspirerConfig):
        d, ff, length = config.d, config.ff_dim, config.layers
        parts = {
            "attention_matmuls": length * 2 * (2 * n * n * d + 4 * n * d * d),
            "feed_forward_matmuls": length * 2 * (2 * n * d * ff),
            "classifier_matmuls": 2 * (d * config.mlp_hidden + config.mlp_hidden * config.classes),
        }
        excluded = {
            "layer_norm": length * 2 * n * d * 8,
            "softmax": length * config.heads * n * n * 5,
            "activations": length * n * ff * 1 + config.mlp_hidden * 8,
            "bias_residual_adds": length * (6 * n * d + n * ff) + config.mlp_hidden + config.classes,
        }
    elif isinstance(config, TargetConfig):
        parts = {
            "conv_kernels": sum(2 * k * config.emb_dim * config.channels * (n - k + 1)
                                for k in config.filter_sizes if n - k + 1 > 0),
            "classifier_matmuls": 2 * config.channels * len(config.filter_sizes) * config.classes,
        }
        excluded = {
            "activations": sum(config.channels * (n - k + 1) for k in config.filter_sizes
                               if n - k + 1 > 0),
            "maxpool_compares": sum(config.channels * (n - k + 1) for k in config.filter_sizes
                                    if n - k + 1 > 0),
            "bias_adds": config.classes,
        }
    else:
        raise ConfigError(f"flops_breakdown got {type(config).__name__}")
    return {"headline": sum(parts.values()), "parts": parts,
            "excluded_itemized": excluded, "convention": CONVENTION}


def full_scale_presets() -> dict:
    """The paper-scale configurations used for the documentation-level FLOPs
    comparison (teacher: 12x768 transformer at n=256; target: TextCNN with
    filters 2/3/5/7/9/11 x 200 channels on 300-d embeddings)."""
    return {
        "inspirer": InspirerConfig(vocab_size=30522, classes=10, layers=12, d=768,
                                   heads=12, ff_dim=3072, max_len=256, mlp_hidden=768,
                                   projection_dim=256, dropout=0.1),
        "target": TargetConfig(vocab_size=30522, classes=10,
                               filter_sizes=(2, 3, 5, 7, 9, 11), channels=200,
                               emb_dim=300, projection_dim=256, dropout=0.5),
    }


@dataclass
class CostReport:
    kind: str
    params: int
    flops: int
    seq_len: int
    latency_mean_s: float = 0.0
    latency_std_s: float = 0.0
    trials: int = 0
    speedup_vs_baseline: float | None = None
    convention: str = CONVENTION

    def as_dict(self):
        return {
            "kind": self.kind, "params": self.params, "flops": self.flops,
            "seq_len": self.seq_len, "latency_mean_s": self.latency_mean_s,
            "latency_std_s": self.latency_std_s, "trials": self.trials,
            "speedup_vs_baseline": self.speedup_vs_baseline,
            "convention": self.convention,
        }


def benchmark_inference(forward, probe, trials=30, warmup=3):
    """Mean/std seconds per example over `trials` passes of the probe set;
    warm-up passes are excluded. `forward(ids)` runs one eval forward."""
    if trials < 10:
        raise PreconditionError(f"benchmark needs trials >= 10, got {trials}")
    if not probe:
        raise PreconditionError("benchmark needs a nonempty probe set")
    times = []
    with no_grad():
        for trial in range(warmup + trials):
            t0 = time.perf_counter()
            for ids in probe:
                forward(ids)
            elapsed = time.perf_counter() - t0
            if trial >= warmup:
                times.append(elapsed / len(probe))
    arr = np.asarray(times)
    return float(arr.mean()), float(arr.std())


def make_probe(config, count=8, seed=0):
    """Random token sequences at the model's working length."""
    rng = np.random.default_rng([seed, 17])
    if isinstance(config, InspirerConfig):
        n, vocab = config.max_len, config.vocab_size
    else:
        n, vocab = max(config.filter_sizes) + 8, config.vocab_size
    out = []
    for _ in range(count):
        ids = rng.integers(3, vocab, size=n)
        ids[0] = CLS_ID
        out.append(ids.tolist())
    return out


def speedup(baseline_mean_s, candidate_mean_s) -> float:
    if candidate_mean_s <= 0:
        raise PreconditionError("candidate latency must be positive")
    return baseline_mean_s / candidate_mean_s
