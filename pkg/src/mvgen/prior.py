"""Conditioned next-scale autoregressive transformer over token pyramids.

The flat sequence concatenates every scale's grid cells coarse to fine.
Attention is block-causal at scale granularity (a position sees every position
of its own and all coarser scales), so logits at scale k depend only on grids
strictly coarser than k plus the dataset-label condition. Inputs for scale 1
are the condition embedding; inputs for scale k>1 are the previous scale's
quantized code embeddings, upsampled to the scale-k grid and linearly
projected. The condition also drives every block through adaptive layernorm
modulation, and queries/keys are L2-normalized with a learned per-head
temperature. The output head starts at zero, so an untrained model predicts
the uniform distribution exactly.
"""

from __future__ import annotations

import dataclasses
import math
import os
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt
from .numerics import (
    ContractError,
    NumericError,
    OptimizerConfig,
    Parameter,
    Tensor,
    adamw_update,
    as_tensor,
    clip_grad_norm,
    concat,
    gelu,
    l2_normalize,
    layernorm,
    log_softmax,
    lr_at,
    no_grad,
    resize_bilinear_np,
    softmax,
    take,
    take_along_last,
)
from .rng import rng_for
from .tokenizer import ScaleSchedule, TokenPyramid

MASK_BIAS = -1e9  # exp() underflows to exactly 0.0, so masking is bit-exact


@dataclasses.dataclass(frozen=True)
class PriorConfig:
    depth: int = 4
    width: int = 128
    heads: int = 4
    vocab_size: int = 64
    schedule: tuple[int, ...] = (1, 2, 3, 4)
    n_labels: int = 4
    code_dim: int = 8
    cond_dropout_p: float = 0.1
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "schedule", ScaleSchedule(self.schedule).sizes)
        if self.width % self.heads != 0:
            raise ContractError("width must be divisible by heads")
        if not 0.0 <= self.cond_dropout_p < 1.0:
            raise ContractError("cond_dropout_p must lie in [0, 1)")

    @property
    def scale_schedule(self) -> ScaleSchedule:
        return ScaleSchedule(self.schedule)

    @property
    def null_index(self) -> int:
        return self.n_labels

    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclasses.dataclass(frozen=True)
class BlockCausalMask:
    allow: np.ndarray  # (L, L) bool

    @property
    def length(self) -> int:
        return self.allow.shape[0]


def build_mask(schedule: ScaleSchedule) -> BlockCausalMask:
    """allow[i, j] iff scale(j) <= scale(i); dense within a scale."""
    scale_of = np.concatenate([np.full(n * n, k, dtype=np.int64)
                               for k, n in enumerate(schedule.sizes)])
    allow = scale_of[None, :] <= scale_of[:, None]
    return BlockCausalMask(allow=allow)


def qk_normalize(q: np.ndarray, k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scale head vectors to unit L2 norm (zero vectors stay zero)."""

    def norm(x):
        x = np.asarray(x, dtype=np.float64)
        n = np.sqrt((x * x).sum(axis=-1, keepdims=True))
        return np.where(n > 0, x / np.where(n > 0, n, 1.0), 0.0)

    return norm(q), norm(k)


class PriorModel:
    def __init__(self, config: PriorConfig, params: dict[str, Parameter],
                 code_table: np.ndarray):
        if code_table.shape != (config.vocab_size, config.code_dim):
            raise ContractError("code table must be (vocab_size, code_dim)")
        self.config = config
        self.schedule = config.scale_schedule
        self.params = params
        self.code_table = np.asarray(code_table, dtype=config.np_dtype())
        mask = build_mask(self.schedule)
        self.mask = mask
        self._mask_bias = np.where(mask.allow, 0.0, MASK_BIAS).astype(config.np_dtype())
        self._level_ids = np.concatenate([np.full(n * n, k, dtype=np.int64)
                                          for k, n in enumerate(self.schedule.sizes)])

    @classmethod
    def create(cls, config: PriorConfig, code_table: np.ndarray, seed: int = 0) -> "PriorModel":
        dtype = config.np_dtype()
        w, v = config.width, config.vocab_size
        length = config.scale_schedule.token_count
        params: dict[str, Parameter] = {}

        def normal(name, shape, std=0.02):
            params[name] = Parameter(rng_for(seed, "prior", name)
                                     .normal(0, std, size=shape).astype(dtype))

        def zeros(name, shape):
            params[name] = Parameter(np.zeros(shape, dtype=dtype))

        normal("cond_emb", (config.n_labels + 1, w))
        normal("input_proj.w", (config.code_dim, w))
        zeros("input_proj.b", (w,))
        normal("pos_emb", (length, w))
        normal("level_emb", (config.scale_schedule.num_scales, w))
        for i in range(config.depth):
            for piece in ("wq", "wk", "wv", "wo"):
                normal(f"block{i}.{piece}.w", (w, w))
                zeros(f"block{i}.{piece}.b", (w,))
            params[f"block{i}.temp"] = Parameter(np.ones(config.heads, dtype=dtype))
            normal(f"block{i}.ffn1.w", (w, 4 * w))
            zeros(f"block{i}.ffn1.b", (4 * w,))
            normal(f"block{i}.ffn2.w", (4 * w, w), std=0.02 / math.sqrt(2 * config.depth))
            zeros(f"block{i}.ffn2.b", (w,))
            zeros(f"block{i}.adaln.w", (w, 6 * w))
            zeros(f"block{i}.adaln.b", (6 * w,))
        zeros("final.adaln.w", (w, 2 * w))
        zeros("final.adaln.b", (2 * w,))
        zeros("head.w", (w, v))
        zeros("head.b", (v,))
        return cls(config, params, np.asarray(code_table))

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # -- forward ---------------------------------------------------------

    def embed_inputs(self, prefix_grids: Sequence[np.ndarray], labels: np.ndarray) -> Tensor:
        """Inputs for scales 1 .. len(prefix)+1.

        prefix_grids[j] is the (B, n, n) token grid of scale j+1; labels are
        per-sample condition indices (null index allowed).
        """
        cfg = self.config
        labels = np.asarray(labels, dtype=np.int64)
        if labels.min() < 0 or labels.max() > cfg.null_index:
            raise ContractError("condition index out of range")
        k_active = len(prefix_grids) + 1
        if k_active > self.schedule.num_scales:
            raise ContractError("prefix longer than the schedule allows")
        b = labels.shape[0]
        dtype = cfg.np_dtype()

        cond_rows = take(self.params["cond_emb"], labels)  # (B, W)
        n1 = self.schedule.sizes[0]
        pieces = [cond_rows.reshape(b, 1, cfg.width) *
                  as_tensor(np.ones((1, n1 * n1, 1), dtype=dtype))]
        for j in range(1, k_active):
            n = self.schedule.sizes[j]
            prev = np.asarray(prefix_grids[j - 1])
            if prev.ndim == 2:
                prev = prev[None]
            codes = self.code_table[prev].transpose(0, 3, 1, 2)  # (B, C, m, m)
            up = resize_bilinear_np(codes.astype(dtype), n, n)
            flat = up.transpose(0, 2, 3, 1).reshape(b, n * n, cfg.code_dim)
            pieces.append(as_tensor(flat) @ self.params["input_proj.w"]
                          + self.params["input_proj.b"])
        seq = pieces[0] if len(pieces) == 1 else concat(pieces, axis=1)
        length = seq.shape[1]
        pos = self.params["pos_emb"][:length]
        level = take(self.params["level_emb"], self._level_ids[:length])
        return seq + pos.reshape(1, length, cfg.width) + level.reshape(1, length, cfg.width)

    def _modulation(self, cond: Tensor, name: str, chunks: int) -> list[Tensor]:
        w = self.config.width
        mod = cond @ self.params[f"{name}.w"] + self.params[f"{name}.b"]
        b = mod.shape[0]
        return [mod[:, i * w:(i + 1) * w].reshape(b, 1, w) for i in range(chunks)]

    def _attention(self, i: int, h_in: Tensor, length: int) -> Tensor:
        cfg = self.config
        b = h_in.shape[0]
        heads, hd = cfg.heads, cfg.width // cfg.heads

        def project(piece):
            out = h_in @ self.params[f"block{i}.{piece}.w"] + self.params[f"block{i}.{piece}.b"]
            return out.reshape(b, length, heads, hd).transpose(0, 2, 1, 3)

        q = l2_normalize(project("wq"))
        k = l2_normalize(project("wk"))
        v = project("wv")
        temp = self.params[f"block{i}.temp"].reshape(1, heads, 1, 1)
        scores = (q @ k.transpose(0, 1, 3, 2)) * temp
        scores = scores + as_tensor(self._mask_bias[:length, :length])
        att = softmax(scores)
        mixed = (att @ v).transpose(0, 2, 1, 3).reshape(b, length, cfg.width)
        return mixed @ self.params[f"block{i}.wo.w"] + self.params[f"block{i}.wo.b"]

    def _run(self, seq: Tensor, cond: Tensor) -> Tensor:
        """(B, L', W) inputs + (B, W) condition -> (B, L', V) logits."""
        length = seq.shape[1]
        x = seq
        for i in range(self.config.depth):
            g1, b1, a1, g2, b2, a2 = self._modulation(cond, f"block{i}.adaln", 6)
            h = layernorm(x) * (g1 + 1.0) + b1
            x = x + a1 * self._attention(i, h, length)
            h = layernorm(x) * (g2 + 1.0) + b2
            ffn = gelu(h @ self.params[f"block{i}.ffn1.w"] + self.params[f"block{i}.ffn1.b"])
            ffn = ffn @ self.params[f"block{i}.ffn2.w"] + self.params[f"block{i}.ffn2.b"]
            x = x + a2 * ffn
        gf, bf = self._modulation(cond, "final.adaln", 2)
        x = layernorm(x) * (gf + 1.0) + bf
        return x @ self.params["head.w"] + self.params["head.b"]

    def forward_batch(self, grids: Sequence[np.ndarray], labels: np.ndarray) -> Tensor:
        """Teacher-forced logits (B, L, V) for full pyramids."""
        if tuple(g.shape[-1] for g in grids) != self.schedule.sizes:
            raise ContractError("pyramid does not match the schedule")
        labels = np.asarray(labels, dtype=np.int64)
        seq = self.embed_inputs([np.asarray(g) for g in grids[:-1]], labels)
        cond = take(self.params["cond_emb"], labels)
        return self._run(seq, cond)

    def next_scale_logits(self, prefix_grids: Sequence[np.ndarray], c: int) -> np.ndarray:
        """Logits (n_k^2, V) for the scale following the prefix (single sample)."""
        k = len(prefix_grids)
        with no_grad():
            seq = self.embed_inputs([np.asarray(g)[None] for g in prefix_grids],
                                    np.array([c]))
            cond = take(self.params["cond_emb"], np.array([c]))
            logits = self._run(seq, cond).values[0]
        n = self.schedule.sizes[k]
        return logits[-n * n:]


def forward(tokens: TokenPyramid, c: int, model: PriorModel) -> np.ndarray:
    """Per-position logits (L, V) for one pyramid under condition c."""
    with no_grad():
        out = model.forward_batch([g[None] for g in tokens.grids], np.array([c]))
    return out.values[0]


def flatten_targets(grids: Sequence[np.ndarray]) -> np.ndarray:
    """Per-scale (B, n, n) grids -> (B, L) flat target indices."""
    b = np.asarray(grids[0]).shape[0]
    return np.concatenate([np.asarray(g).reshape(b, -1) for g in grids], axis=1)


def batch_loss(model: PriorModel, grids: Sequence[np.ndarray], labels: np.ndarray) -> Tensor:
    """Summed cross-entropy over all scales, averaged per token."""
    if any(np.asarray(g).max() >= model.config.vocab_size for g in grids):
        raise ContractError("token index out of vocabulary range")
    logits = model.forward_batch(grids, labels)
    logp = log_softmax(logits)
    picked = take_along_last(logp, flatten_targets(grids))
    return -picked.mean()


def train_prior(grids: Sequence[np.ndarray], labels: np.ndarray, model: PriorModel,
                opt: OptimizerConfig, steps: int, batch_size: int = 32, seed: int = 0,
                start_step: int = 0, log_every: int = 25) -> list[tuple[int, float, float]]:
    """Teacher-forced training with per-sample condition dropout."""
    n = labels.shape[0]
    if n == 0:
        raise ContractError("prior training needs a non-empty token corpus")
    scaled = opt.scaled_for_batch(batch_size)
    params = model.parameters()
    p_drop = model.config.cond_dropout_p
    curve = []
    for step in range(start_step, start_step + steps):
        rng = rng_for(seed, "batch", step)
        idx = rng.integers(0, n, size=batch_size)
        batch_grids = [np.asarray(g)[idx] for g in grids]
        batch_labels = labels[idx].copy()
        drop = rng_for(seed, "cdrop", step).random(batch_size) < p_drop
        batch_labels[drop] = model.config.null_index
        model.zero_grad()
        try:
            loss = batch_loss(model, batch_grids, batch_labels)
            loss.backward()
        except NumericError as err:
            raise NumericError(f"prior training diverged at step {step}: {err}") from err
        clip_grad_norm(params, scaled.grad_clip_norm)
        lr = lr_at(step, scaled)
        for p in params:
            adamw_update(p, lr, scaled)
        if step % log_every == 0 or step == start_step + steps - 1:
            curve.append((step, lr, loss.item()))
    return curve


def per_token_loss(model: PriorModel, grids: Sequence[np.ndarray], labels: np.ndarray,
                   chunk: int = 64) -> float:
    """Held-out evaluation loss (no condition dropout)."""
    total, count = 0.0, 0
    n = labels.shape[0]
    with no_grad():
        for lo in range(0, n, chunk):
            part = [np.asarray(g)[lo:lo + chunk] for g in grids]
            part_labels = labels[lo:lo + chunk]
            loss = batch_loss(model, part, part_labels)
            tokens = part_labels.shape[0] * model.schedule.token_count
            total += loss.item() * tokens
            count += tokens
    return total / count


def joint_logprob(pyramid: TokenPyramid, c: int, model: PriorModel) -> float:
    """log p(pyramid | c): sum of log-softmax values at the realized indices."""
    logits = forward(pyramid, c, model)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    flat = pyramid.flat()
    return float(logp[np.arange(flat.size), flat].sum())


def joint_logprob_incremental(pyramid: TokenPyramid, c: int, model: PriorModel) -> float:
    """Same quantity via K separate prefix evaluations (factorization identity)."""
    total = 0.0
    for k, n in enumerate(model.schedule.sizes):
        logits = model.next_scale_logits(list(pyramid.grids[:k]), c)
        shifted = logits - logits.max(axis=-1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        flat = pyramid.grids[k].reshape(-1)
        total += float(logp[np.arange(flat.size), flat].sum())
    return total


# -- checkpointing -------------------------------------------------------------


def save_prior(path: str | os.PathLike, model: PriorModel,
               extra_config: dict | None = None, train_step: int | None = None,
               optimizer_state: bool = False) -> None:
    config = dataclasses.asdict(model.config)
    config["kind"] = "prior"
    if extra_config:
        config.update(extra_config)
    if train_step is not None:
        config["train_step"] = train_step
    arrays: dict[str, np.ndarray] = {"code_table": model.code_table}
    for name, p in model.params.items():
        arrays[name] = p.values
        if optimizer_state:
            arrays[f"opt.{name}.m"] = p.m
            arrays[f"opt.{name}.v"] = p.v
            arrays[f"opt.{name}.step"] = np.array(float(p.step))
    ckpt.write_checkpoint(path, config, arrays)


def load_prior(path: str | os.PathLike) -> tuple[PriorModel, dict]:
    config, arrays = ckpt.read_checkpoint(path)
    if config.get("kind") != "prior":
        raise ValueError("checkpoint does not hold a prior")
    fields = {f.name for f in dataclasses.fields(PriorConfig)}
    cfg = PriorConfig(**{k: v for k, v in config.items() if k in fields})
    dtype = cfg.np_dtype()
    model = PriorModel.create(cfg, arrays["code_table"].astype(dtype), seed=0)
    for name, p in model.params.items():
        p.values = arrays[name].astype(dtype)
        if f"opt.{name}.m" in arrays:
            p.m = arrays[f"opt.{name}.m"].astype(dtype)
            p.v = arrays[f"opt.{name}.v"].astype(dtype)
            p.step = int(arrays[f"opt.{name}.step"].reshape(-1)[0])
    return model, config
