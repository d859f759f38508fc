"""Scale-by-scale autoregressive sampling with guidance and truncation.

Each scale costs two prior evaluations (condition and null condition) when
guidance is enabled, one otherwise, so the forward-pass count per image is
2K or K regardless of how many tokens the schedule holds. Per-position draws
use a counter-based generator keyed by (seed, scale, position): they are
order-independent, and the paired null evaluation consumes no randomness, so
guidance strength 1 is bit-identical to running without guidance.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .numerics import ContractError
from .prior import PriorModel
from .rng import rng_for
from .tokenizer import TokenizerModel, TokenPyramid, decode_batch


@dataclasses.dataclass(frozen=True)
class SamplingConfig:
    cfg_scale: float | None = None  # None disables guidance (single pass per scale)
    top_k: int | None = None
    top_p: float | None = None
    temperature: float = 1.0
    seed: int = 0
    cfg_ramp: bool = False  # ramp guidance strength 1 -> cfg_scale across scales

    def __post_init__(self):
        if self.cfg_scale is not None and self.cfg_scale < 0:
            raise ContractError("cfg_scale must be non-negative")
        if self.top_k is not None and self.top_k < 1:
            raise ContractError("top_k must be at least 1")
        if self.top_p is not None and not 0.0 < self.top_p <= 1.0:
            raise ContractError("top_p must lie in (0, 1]")
        if self.temperature < 0:
            raise ContractError("temperature must be non-negative")


def cfg_combine(cond: np.ndarray, uncond: np.ndarray, s: float) -> np.ndarray:
    """Guided logits uncond + s * (cond - uncond); s == 1 returns cond exactly."""
    cond = np.asarray(cond, dtype=np.float64)
    uncond = np.asarray(uncond, dtype=np.float64)
    if cond.shape != uncond.shape:
        raise ContractError("conditional/unconditional logits must match in shape")
    if s == 1.0:
        return cond.copy()
    return uncond + s * (cond - uncond)


def top_k_filter(probs: np.ndarray, k: int) -> np.ndarray:
    """Zero all but the k largest masses (ties -> lower index), renormalize."""
    probs = np.asarray(probs, dtype=np.float64)
    if k < 1:
        raise ContractError("top_k must be at least 1")
    if k >= probs.size:
        return probs.copy()
    order = np.argsort(-probs, kind="stable")
    out = np.zeros_like(probs)
    keep = order[:k]
    out[keep] = probs[keep]
    return out / out.sum()


def top_p_filter(probs: np.ndarray, p: float) -> np.ndarray:
    """Keep the smallest descending-order prefix with cumulative mass >= p."""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0.0 < p <= 1.0:
        raise ContractError("top_p must lie in (0, 1]")
    if p == 1.0:
        return probs.copy()
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    cutoff = int(np.searchsorted(cum, p, side="left"))
    keep = order[:cutoff + 1]
    out = np.zeros_like(probs)
    out[keep] = probs[keep]
    return out / out.sum()


def categorical_draw(probs: np.ndarray, seed: int, scale_index: int, position: int) -> int:
    """Inverse-CDF draw using the uniform keyed by (seed, scale, position)."""
    u = float(rng_for(seed, "draw", scale_index, position).random())
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, u, side="right"))
    if idx >= probs.size or probs[idx] == 0.0:
        idx = int(np.flatnonzero(probs > 0)[-1])
    return idx


def _filtered_distribution(logits: np.ndarray, cfg: SamplingConfig) -> np.ndarray:
    if cfg.temperature == 0.0:
        out = np.zeros_like(logits, dtype=np.float64)
        out[int(np.argmax(logits))] = 1.0  # argmax limit; ties -> lowest index
        return out
    scaled = logits / cfg.temperature
    shifted = scaled - scaled.max()
    probs = np.exp(shifted)
    probs /= probs.sum()
    if cfg.top_k is not None:
        probs = top_k_filter(probs, cfg.top_k)
    if cfg.top_p is not None:
        probs = top_p_filter(probs, cfg.top_p)
    return probs


def _guidance_strength(cfg: SamplingConfig, scale_index: int, num_scales: int) -> float:
    s = cfg.cfg_scale
    if not cfg.cfg_ramp or num_scales == 1:
        return s
    return 1.0 + (s - 1.0) * scale_index / (num_scales - 1)


def sample_scale(model: PriorModel, prefix: list[np.ndarray], c: int,
                 cfg: SamplingConfig) -> tuple[np.ndarray, int]:
    """Draw the next scale's grid; returns (grid, forward passes used)."""
    k = len(prefix)
    n = model.schedule.sizes[k]
    if cfg.top_k is not None and cfg.top_k > model.config.vocab_size:
        raise ContractError("top_k exceeds the vocabulary size")
    cond_logits = model.next_scale_logits(prefix, c)
    passes = 1
    if cfg.cfg_scale is None:
        guided = cond_logits.astype(np.float64)
    else:
        uncond_logits = model.next_scale_logits(prefix, model.config.null_index)
        passes = 2
        strength = _guidance_strength(cfg, k, model.schedule.num_scales)
        guided = cfg_combine(cond_logits, uncond_logits, strength)
    flat = np.empty(n * n, dtype=np.int64)
    for pos in range(n * n):
        probs = _filtered_distribution(guided[pos], cfg)
        if cfg.temperature == 0.0:
            flat[pos] = int(np.argmax(probs))
        else:
            flat[pos] = categorical_draw(probs, cfg.seed, k, pos)
    return flat.reshape(n, n), passes


@dataclasses.dataclass
class GenerationResult:
    values: np.ndarray
    pyramid: TokenPyramid
    forward_passes: int


def generate(prior: PriorModel, tokenizer: TokenizerModel, c: int,
             cfg: SamplingConfig) -> GenerationResult:
    """Sample every scale coarse to fine, then decode through the tokenizer."""
    if prior.schedule.sizes != tokenizer.schedule.sizes:
        raise ContractError("prior and tokenizer schedules differ")
    prefix: list[np.ndarray] = []
    passes = 0
    for _ in prior.schedule.sizes:
        grid, used = sample_scale(prior, prefix, c, cfg)
        prefix.append(grid)
        passes += used
    pyramid = TokenPyramid(tuple(prefix))
    values = decode_batch(tokenizer, [g[None] for g in prefix])[0]
    return GenerationResult(values=values, pyramid=pyramid, forward_passes=passes)
