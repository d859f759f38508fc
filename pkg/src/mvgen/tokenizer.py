"""Multi-scale residual vector-quantized autoencoder.

Encoding walks the scale schedule coarse to fine: at each scale the running
latent residual is aligned down to that scale, quantized against a single
shared codebook, and the decoded refinement (upsampled back to the full latent
extent and passed through a per-scale 3x3 conv) is subtracted before the next
scale sees the residual. Reconstruction sums the same refinements and feeds
them to the decoder. Training uses straight-through gradients across the
quantizer, an EMA-updated codebook with dead-code reseeding, and a commitment
penalty pulling pre-quantization features toward their selected codes.
"""

from __future__ import annotations

import dataclasses
import math
import os
from typing import Iterable, Sequence

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
    conv2d,
    conv_transpose2d,
    lr_at,
    no_grad,
    relu,
    resize_bilinear,
    resize_bilinear_np,
    stop_gradient,
)
from .rng import rng_for

MVTK_MAGIC = b"MVTK"
MVTK_VERSION = 1


@dataclasses.dataclass(frozen=True)
class ScaleSchedule:
    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        if len(sizes) == 0 or sizes[0] < 1:
            raise ContractError("schedule needs at least one positive size")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ContractError("schedule sizes must be strictly increasing")

    @property
    def num_scales(self) -> int:
        return len(self.sizes)

    @property
    def latent_size(self) -> int:
        return self.sizes[-1]

    @property
    def token_count(self) -> int:
        return sum(n * n for n in self.sizes)

    def position_slices(self) -> list[slice]:
        """Flat-sequence slice occupied by each scale."""
        out, start = [], 0
        for n in self.sizes:
            out.append(slice(start, start + n * n))
            start += n * n
        return out


PAPER_SCHEDULE = ScaleSchedule((1, 2, 3, 4, 5, 6, 8, 10, 13, 16))
DESK_SCHEDULE = ScaleSchedule((1, 2, 3, 4))


@dataclasses.dataclass
class Codebook:
    embeddings: np.ndarray  # (V, C)
    ema_counts: np.ndarray  # (V,)
    ema_sums: np.ndarray  # (V, C)

    @classmethod
    def create(cls, vocab_size: int, embed_dim: int, seed: int, dtype=np.float64) -> "Codebook":
        rng = rng_for(seed, "codebook-init")
        emb = rng.normal(0.0, 0.1, size=(vocab_size, embed_dim)).astype(dtype)
        return cls(embeddings=emb,
                   ema_counts=np.zeros(vocab_size, dtype=dtype),
                   ema_sums=np.zeros((vocab_size, embed_dim), dtype=dtype))

    @property
    def vocab_size(self) -> int:
        return self.embeddings.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embeddings.shape[1]


@dataclasses.dataclass(frozen=True)
class TokenPyramid:
    grids: tuple[np.ndarray, ...]

    def __post_init__(self):
        grids = tuple(np.asarray(g, dtype=np.int64) for g in self.grids)
        object.__setattr__(self, "grids", grids)
        for g in grids:
            if g.ndim != 2 or g.shape[0] != g.shape[1]:
                raise ContractError("token grids must be square")
            if g.size and g.min() < 0:
                raise ContractError("token indices must be non-negative")

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(g.shape[0] for g in self.grids)

    def flat(self) -> np.ndarray:
        return np.concatenate([g.reshape(-1) for g in self.grids])


@dataclasses.dataclass(frozen=True)
class TokenizerConfig:
    resolution: int = 32
    schedule: tuple[int, ...] = DESK_SCHEDULE.sizes
    vocab_size: int = 64
    embed_dim: int = 8
    beta_commit: float = 0.25
    ema_decay: float = 0.99
    dtype: str = "float64"

    def __post_init__(self):
        sched = ScaleSchedule(self.schedule)
        object.__setattr__(self, "schedule", sched.sizes)
        factor = self.resolution / sched.latent_size
        stages = math.log2(factor) if factor >= 2 else -1
        if stages != int(stages) or stages < 1:
            raise ContractError(
                f"resolution {self.resolution} over latent {sched.latent_size} "
                "must be a power-of-two downsample factor of at least 2")

    @property
    def scale_schedule(self) -> ScaleSchedule:
        return ScaleSchedule(self.schedule)

    @property
    def num_stages(self) -> int:
        return int(math.log2(self.resolution // self.scale_schedule.latent_size))

    def stage_widths(self) -> list[int]:
        """Encoder stage output channels: (32, 64, ..., 64, C)."""
        stages = self.num_stages
        if stages == 1:
            return [self.embed_dim]
        widths = [32] + [64] * (stages - 2) + [self.embed_dim]
        return widths

    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def paper_config() -> TokenizerConfig:
    """Full-resolution configuration (not exercised by the desk-scale suite)."""
    return TokenizerConfig(resolution=256, schedule=PAPER_SCHEDULE.sizes,
                           vocab_size=4096, embed_dim=32, dtype="float32")


class TokenizerModel:
    def __init__(self, config: TokenizerConfig, params: dict[str, Parameter], codebook: Codebook):
        self.config = config
        self.schedule = config.scale_schedule
        self.params = params
        self.codebook = codebook

    @classmethod
    def create(cls, config: TokenizerConfig, seed: int = 0) -> "TokenizerModel":
        dtype = config.np_dtype()
        params: dict[str, Parameter] = {}

        def conv_param(name, cout, cin, k):
            rng = rng_for(seed, "tokenizer", name)
            std = math.sqrt(2.0 / (cin * k * k))
            params[f"{name}.w"] = Parameter(rng.normal(0, std, size=(cout, cin, k, k)).astype(dtype))
            params[f"{name}.b"] = Parameter(np.zeros(cout, dtype=dtype))

        def deconv_param(name, cin, cout, k):
            rng = rng_for(seed, "tokenizer", name)
            std = math.sqrt(2.0 / (cin * k * k))
            params[f"{name}.w"] = Parameter(rng.normal(0, std, size=(cin, cout, k, k)).astype(dtype))
            params[f"{name}.b"] = Parameter(np.zeros(cout, dtype=dtype))

        # 4x4 stride-2 kernels cover the plane evenly (no checkerboard on the
        # transpose side); the per-scale refinements stay 3x3
        widths = config.stage_widths()
        cin = 1
        for i, cout in enumerate(widths):
            conv_param(f"enc{i}", cout, cin, 4)
            cin = cout
        rev = [1] + widths[:-1]
        cin = widths[-1]
        for i, cout in enumerate(reversed(rev)):
            deconv_param(f"dec{i}", cin, cout, 4)
            cin = cout
        for k in range(config.scale_schedule.num_scales):
            conv_param(f"phi{k}", config.embed_dim, config.embed_dim, 3)

        codebook = Codebook.create(config.vocab_size, config.embed_dim, seed, dtype)
        return cls(config, params, codebook)

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # -- network pieces --------------------------------------------------

    def encoder_forward(self, x: Tensor) -> Tensor:
        """(B, 1, R, R) -> (B, C, nK, nK)."""
        h = x
        stages = self.config.num_stages
        for i in range(stages):
            h = conv2d(h, self.params[f"enc{i}.w"], self.params[f"enc{i}.b"],
                       stride=2, padding=1)
            if i < stages - 1:
                h = relu(h)
        return h

    def decoder_forward(self, f: Tensor) -> Tensor:
        """(B, C, nK, nK) -> (B, 1, R, R), unclamped."""
        h = f
        stages = self.config.num_stages
        for i in range(stages):
            h = conv_transpose2d(h, self.params[f"dec{i}.w"], self.params[f"dec{i}.b"],
                                 stride=2, padding=1, output_padding=0)
            if i < stages - 1:
                h = relu(h)
        return h

    def phi(self, k: int, f: Tensor) -> Tensor:
        return conv2d(f, self.params[f"phi{k}.w"], self.params[f"phi{k}.b"],
                      stride=1, padding=1)


# -- spec-level operations ----------------------------------------------------


def interpolate(feature: np.ndarray, target: int) -> np.ndarray:
    """Scale alignment on a channel-last (a, a, C) grid -> (target, target, C)."""
    feature = np.asarray(feature)
    if feature.ndim != 3:
        raise ContractError("interpolate expects an (a, a, C) grid")
    if feature.shape[0] == target:
        return feature
    moved = np.moveaxis(feature, -1, 0)
    out = resize_bilinear_np(moved, target, target)
    return np.moveaxis(out, 0, -1)


def quantize(vec: np.ndarray, codebook: Codebook) -> int:
    """Nearest codebook row by squared Euclidean distance; ties -> lowest index."""
    vec = np.asarray(vec, dtype=np.float64)
    if not np.isfinite(vec).all():
        raise NumericError("quantize received non-finite input")
    deltas = codebook.embeddings.astype(np.float64) - vec[None, :]
    return int(np.argmin((deltas * deltas).sum(axis=1)))


def _quantize_grid(features: np.ndarray, embeddings: np.ndarray) -> np.ndarray:
    """features (B, C, n, n) -> indices (B, n, n). Ties break to lowest index."""
    b, c, n, _ = features.shape
    flat = features.transpose(0, 2, 3, 1).reshape(-1, c)
    e = embeddings
    dist = (flat * flat).sum(axis=1, keepdims=True) - 2.0 * flat @ e.T + (e * e).sum(axis=1)[None, :]
    return np.argmin(dist, axis=1).reshape(b, n, n)


def _lookup(grid: np.ndarray, embeddings: np.ndarray) -> np.ndarray:
    """indices (B, n, n) -> embeddings (B, C, n, n)."""
    return embeddings[grid].transpose(0, 3, 1, 2)


def _check_pyramid(pyramid: TokenPyramid, model: TokenizerModel) -> None:
    if pyramid.sizes != model.schedule.sizes:
        raise ContractError(
            f"pyramid sizes {pyramid.sizes} do not match schedule {model.schedule.sizes}")
    for g in pyramid.grids:
        if g.size and g.max() >= model.codebook.vocab_size:
            raise ContractError("token index out of codebook range")


def encode_batch(model: TokenizerModel, images: np.ndarray) -> list[np.ndarray]:
    """(B, R, R) -> per-scale index grids [(B, n_k, n_k)]."""
    r = model.config.resolution
    if images.ndim != 3 or images.shape[1:] != (r, r):
        raise ContractError(f"expected (B, {r}, {r}) images")
    dtype = model.config.np_dtype()
    emb = model.codebook.embeddings
    with no_grad():
        x = as_tensor(images[:, None, :, :].astype(dtype))
        f = model.encoder_forward(x).values
        n_latent = model.schedule.latent_size
        grids = []
        for k, n in enumerate(model.schedule.sizes):
            fk = resize_bilinear_np(f, n, n)
            idx = _quantize_grid(fk, emb)
            grids.append(idx)
            z_up = resize_bilinear_np(_lookup(idx, emb).astype(dtype), n_latent, n_latent)
            f = f - model.phi(k, as_tensor(z_up)).values
    return grids


def encode(x: np.ndarray, model: TokenizerModel) -> TokenPyramid:
    grids = encode_batch(model, np.asarray(x)[None, :, :])
    return TokenPyramid(tuple(g[0] for g in grids))


def decode_batch(model: TokenizerModel, grids: Sequence[np.ndarray],
                 upto_scale: int | None = None) -> np.ndarray:
    """Per-scale index grids -> images (B, R, R) clamped to [0, 1].

    upto_scale reconstructs from the first k scales only (1-based count).
    """
    k_max = len(grids) if upto_scale is None else upto_scale
    dtype = model.config.np_dtype()
    emb = model.codebook.embeddings
    n_latent = model.schedule.latent_size
    b = grids[0].shape[0]
    with no_grad():
        f = np.zeros((b, model.config.embed_dim, n_latent, n_latent), dtype=dtype)
        for k in range(k_max):
            idx = np.asarray(grids[k])
            if idx.size and idx.max() >= model.codebook.vocab_size:
                raise ContractError("token index out of codebook range")
            z_up = resize_bilinear_np(_lookup(idx, emb).astype(dtype), n_latent, n_latent)
            f = f + model.phi(k, as_tensor(z_up)).values
        out = model.decoder_forward(as_tensor(f)).values[:, 0]
    return np.clip(out, 0.0, 1.0)


def decode(pyramid: TokenPyramid, model: TokenizerModel) -> np.ndarray:
    _check_pyramid(pyramid, model)
    return decode_batch(model, [g[None] for g in pyramid.grids])[0]


# -- training ------------------------------------------------------------------


@dataclasses.dataclass
class _StepStats:
    counts: np.ndarray
    sums: np.ndarray
    feature_pool: np.ndarray  # sampled pre-quantization vectors for reseeding


@dataclasses.dataclass
class StAnchor:
    """Per-scale quantizer state captured at a fixed parameter point.

    The straight-through estimator backpropagates through st = f + sg(zq - f);
    replacing sg(zq - f) with the captured constant offset turns the loss into
    a smooth function whose exact gradient equals the estimator's output, so
    central finite differences become a valid oracle for it.
    """

    offset: np.ndarray  # zq - fk, (B, C, n, n)
    codes: np.ndarray  # zq, (B, C, n, n)


def st_anchors(model: TokenizerModel, batch: np.ndarray) -> list[StAnchor]:
    """Capture straight-through anchors for `batch` at the current weights."""
    cfg = model.config
    dtype = cfg.np_dtype()
    emb = model.codebook.embeddings
    n_latent = model.schedule.latent_size
    anchors = []
    with no_grad():
        f = model.encoder_forward(as_tensor(batch[:, None, :, :].astype(dtype))).values
        for k, n in enumerate(model.schedule.sizes):
            fk = resize_bilinear_np(f, n, n)
            zq = _lookup(_quantize_grid(fk, emb), emb).astype(dtype)
            anchors.append(StAnchor(offset=zq - fk, codes=zq))
            contrib = model.phi(k, as_tensor(resize_bilinear_np(zq, n_latent, n_latent))).values
            f = f - contrib
    return anchors


def training_graph(model: TokenizerModel, batch: np.ndarray,
                   frozen_grids: Sequence[np.ndarray] | None = None,
                   anchors: Sequence[StAnchor] | None = None
                   ) -> tuple[Tensor, _StepStats]:
    """Build the straight-through loss graph for one batch.

    frozen_grids pins the quantizer's index choices. anchors additionally
    replaces the stop-gradient offset with captured constants (see StAnchor),
    which the gradient oracle differentiates by finite differences.
    """
    cfg = model.config
    dtype = cfg.np_dtype()
    emb = model.codebook.embeddings
    v, c = emb.shape
    n_latent = model.schedule.latent_size

    x = as_tensor(batch[:, None, :, :].astype(dtype))
    f = model.encoder_forward(x)
    counts = np.zeros(v, dtype=np.float64)
    sums = np.zeros((v, c), dtype=np.float64)
    pool = []
    recon_feat = None
    commit = None
    for k, n in enumerate(model.schedule.sizes):
        fk = resize_bilinear(f, n, n)
        if anchors is not None:
            zq = anchors[k].codes
            st = fk + as_tensor(anchors[k].offset)
            flat_idx = np.zeros(zq.shape[0] * n * n, dtype=np.int64)
        else:
            if frozen_grids is None:
                idx = _quantize_grid(fk.values, emb)
            else:
                idx = np.asarray(frozen_grids[k])
            zq = _lookup(idx, emb).astype(dtype)
            st = fk + stop_gradient(as_tensor(zq) - fk)  # straight-through selection
            flat_idx = idx.reshape(-1)
        flat_feat = fk.values.transpose(0, 2, 3, 1).reshape(-1, c)
        counts += np.bincount(flat_idx, minlength=v)
        np.add.at(sums, flat_idx, flat_feat.astype(np.float64))
        pool.append(flat_feat)

        term = ((fk - as_tensor(zq)) ** 2.0).mean()
        commit = term if commit is None else commit + term
        contrib = model.phi(k, resize_bilinear(st, n_latent, n_latent))
        recon_feat = contrib if recon_feat is None else recon_feat + contrib
        f = f - contrib

    x_hat = model.decoder_forward(recon_feat)
    recon = ((x_hat - x) ** 2.0).mean()
    loss = recon + cfg.beta_commit * commit
    pooled = np.concatenate(pool, axis=0)
    return loss, _StepStats(counts=counts, sums=sums, feature_pool=pooled)


def _ema_update(model: TokenizerModel, stats: _StepStats, step: int, seed: int) -> None:
    cb = model.codebook
    decay = model.config.ema_decay
    dtype = model.config.np_dtype()
    cb.ema_counts = (decay * cb.ema_counts + (1 - decay) * stats.counts).astype(dtype)
    cb.ema_sums = (decay * cb.ema_sums + (1 - decay) * stats.sums).astype(dtype)
    alive = cb.ema_counts > 1e-4
    cb.embeddings[alive] = (cb.ema_sums[alive] / cb.ema_counts[alive, None]).astype(dtype)
    if step >= 1000:
        dead = cb.ema_counts < 1e-3
        n_dead = int(dead.sum())
        if n_dead:
            rng = rng_for(seed, "reseed", step)
            picks = rng.integers(0, stats.feature_pool.shape[0], size=n_dead)
            fresh = stats.feature_pool[picks].astype(dtype)
            cb.embeddings[dead] = fresh
            revive = max(float(np.median(cb.ema_counts[~dead])) if (~dead).any() else 0.1, 0.1)
            cb.ema_counts[dead] = revive
            cb.ema_sums[dead] = fresh * revive


def init_codebook_from_data(model: TokenizerModel, batch: np.ndarray, seed: int) -> None:
    """Seed codebook rows from encoder features of a data batch (k-means style init)."""
    dtype = model.config.np_dtype()
    with no_grad():
        f = model.encoder_forward(as_tensor(batch[:, None, :, :].astype(dtype))).values
    cells = []
    for n in model.schedule.sizes:
        fk = resize_bilinear_np(f, n, n)
        cells.append(fk.transpose(0, 2, 3, 1).reshape(-1, model.config.embed_dim))
    pool = np.concatenate(cells, axis=0)
    rng = rng_for(seed, "codebook-warm")
    picks = rng.choice(pool.shape[0], size=model.codebook.vocab_size,
                       replace=pool.shape[0] < model.codebook.vocab_size)
    jitter = rng.normal(0, 1e-3, size=(model.codebook.vocab_size, model.config.embed_dim))
    model.codebook.embeddings = (pool[picks] + jitter).astype(dtype)


def train_tokenizer(train_images: np.ndarray, model: TokenizerModel,
                    opt: OptimizerConfig, steps: int, batch_size: int = 16,
                    seed: int = 0, start_step: int = 0, warm_start: bool = True,
                    log_every: int = 25) -> list[tuple[int, float, float]]:
    """AdamW training loop; returns the (step, lr, loss) curve."""
    if train_images.shape[0] == 0:
        raise ContractError("training corpus is empty")
    scaled = opt.scaled_for_batch(batch_size)
    params = model.parameters()
    curve = []
    n = train_images.shape[0]
    for step in range(start_step, start_step + steps):
        idx = rng_for(seed, "batch", step).integers(0, n, size=batch_size)
        batch = train_images[idx]
        if step == 0 and warm_start:
            init_codebook_from_data(model, batch, seed)
        model.zero_grad()
        try:
            loss, stats = training_graph(model, batch)
            loss.backward()
        except NumericError as err:
            raise NumericError(f"tokenizer training diverged at step {step}: {err}") from err
        clip_grad_norm(params, scaled.grad_clip_norm)
        lr = lr_at(step, scaled)
        for p in params:
            adamw_update(p, lr, scaled)
        _ema_update(model, stats, step, seed)
        if step % log_every == 0 or step == start_step + steps - 1:
            curve.append((step, lr, loss.item()))
    return curve


def residual_energies(model: TokenizerModel, images: np.ndarray) -> list[float]:
    """Mean squared norm of the latent residual after each scale's subtraction.

    On trained models the sequence is expected to be non-increasing: every
    scale's quantized refinement removes part of what remains.
    """
    dtype = model.config.np_dtype()
    emb = model.codebook.embeddings
    n_latent = model.schedule.latent_size
    energies = []
    with no_grad():
        f = model.encoder_forward(as_tensor(images[:, None, :, :].astype(dtype))).values
        for k, n in enumerate(model.schedule.sizes):
            fk = resize_bilinear_np(f, n, n)
            idx = _quantize_grid(fk, emb)
            z_up = resize_bilinear_np(_lookup(idx, emb).astype(dtype), n_latent, n_latent)
            f = f - model.phi(k, as_tensor(z_up)).values
            energies.append(float((f.astype(np.float64) ** 2).mean()))
    return energies


def reconstruction_mse(model: TokenizerModel, images: np.ndarray,
                       upto_scale: int | None = None, chunk: int = 64) -> float:
    """Mean squared reconstruction error over a slice set."""
    total, count = 0.0, 0
    for lo in range(0, images.shape[0], chunk):
        part = images[lo:lo + chunk]
        grids = encode_batch(model, part)
        recon = decode_batch(model, grids, upto_scale=upto_scale)
        total += float(((recon - part) ** 2).sum())
        count += part.size
    return total / count


def reconstruction_psnr(model: TokenizerModel, images: np.ndarray, chunk: int = 64) -> float:
    """Mean per-image PSNR (dB) of encode->decode against the originals."""
    psnrs = []
    for lo in range(0, images.shape[0], chunk):
        part = images[lo:lo + chunk]
        grids = encode_batch(model, part)
        recon = decode_batch(model, grids)
        mse = ((recon - part) ** 2).mean(axis=(1, 2))
        psnrs.extend(10.0 * np.log10(1.0 / np.maximum(mse, 1e-12)))
    return float(np.mean(psnrs))


def codebook_usage(model: TokenizerModel, images: np.ndarray,
                   chunk: int = 64) -> tuple[np.ndarray, float, np.ndarray]:
    """Empirical code-selection frequency over a held-out set.

    Returns (histogram summing to 1, utilization fraction, square heatmap).
    """
    if images.shape[0] == 0:
        raise ContractError("codebook_usage needs a non-empty eval set")
    v = model.codebook.vocab_size
    counts = np.zeros(v, dtype=np.int64)
    for lo in range(0, images.shape[0], chunk):
        grids = encode_batch(model, images[lo:lo + chunk])
        for g in grids:
            counts += np.bincount(g.reshape(-1), minlength=v)
    hist = counts / counts.sum()
    utilization = float((counts > 0).mean())
    side = int(math.ceil(math.sqrt(v)))
    heatmap = np.zeros(side * side)
    heatmap[:v] = hist
    return hist, utilization, heatmap.reshape(side, side)


# -- MVTK token streams ---------------------------------------------------------


def tokens_to_bytes(pyramid: TokenPyramid, vocab_size: int) -> bytes:
    if vocab_size > 0xFFFF:
        raise ContractError("MVTK stores indices as u16")
    for g in pyramid.grids:
        if g.size and g.max() >= vocab_size:
            raise ContractError("token index out of range for stream")
    parts = [MVTK_MAGIC, MVTK_VERSION.to_bytes(4, "little"),
             len(pyramid.grids).to_bytes(4, "little")]
    for g in pyramid.grids:
        parts.append(int(g.shape[0]).to_bytes(4, "little"))
    parts.append(int(vocab_size).to_bytes(4, "little"))
    for g in pyramid.grids:
        parts.append(g.astype("<u2").tobytes())
    return b"".join(parts)


def tokens_from_bytes(blob: bytes) -> tuple[TokenPyramid, int]:
    if blob[:4] != MVTK_MAGIC:
        raise ValueError("not an MVTK token stream")
    version = int.from_bytes(blob[4:8], "little")
    if version != MVTK_VERSION:
        raise ValueError(f"unsupported MVTK version {version}")
    k = int.from_bytes(blob[8:12], "little")
    pos = 12
    sizes = []
    for _ in range(k):
        sizes.append(int.from_bytes(blob[pos:pos + 4], "little"))
        pos += 4
    vocab = int.from_bytes(blob[pos:pos + 4], "little")
    pos += 4
    grids = []
    for n in sizes:
        count = n * n
        arr = np.frombuffer(blob, dtype="<u2", count=count, offset=pos)
        grids.append(arr.reshape(n, n).astype(np.int64))
        pos += count * 2
    return TokenPyramid(tuple(grids)), vocab


def write_token_stream(path: str | os.PathLike, pyramid: TokenPyramid, vocab_size: int) -> None:
    with open(path, "wb") as fh:
        fh.write(tokens_to_bytes(pyramid, vocab_size))


def read_token_stream(path: str | os.PathLike) -> tuple[TokenPyramid, int]:
    with open(path, "rb") as fh:
        return tokens_from_bytes(fh.read())


# -- checkpointing ---------------------------------------------------------------


def save_tokenizer(path: str | os.PathLike, model: TokenizerModel,
                   extra_config: dict | None = None, train_step: int | None = None,
                   optimizer_state: bool = False) -> None:
    config = dataclasses.asdict(model.config)
    config["kind"] = "tokenizer"
    if extra_config:
        config.update(extra_config)
    if train_step is not None:
        config["train_step"] = train_step
    arrays: dict[str, np.ndarray] = {}
    for name, p in model.params.items():
        arrays[name] = p.values
        if optimizer_state:
            arrays[f"opt.{name}.m"] = p.m
            arrays[f"opt.{name}.v"] = p.v
            arrays[f"opt.{name}.step"] = np.array(float(p.step))
    arrays["codebook.embeddings"] = model.codebook.embeddings
    arrays["codebook.ema_counts"] = model.codebook.ema_counts
    arrays["codebook.ema_sums"] = model.codebook.ema_sums
    ckpt.write_checkpoint(path, config, arrays)


def load_tokenizer(path: str | os.PathLike) -> tuple[TokenizerModel, dict]:
    config, arrays = ckpt.read_checkpoint(path)
    if config.get("kind") != "tokenizer":
        raise ValueError("checkpoint does not hold a tokenizer")
    fields = {f.name for f in dataclasses.fields(TokenizerConfig)}
    cfg = TokenizerConfig(**{k: v for k, v in config.items() if k in fields})
    if isinstance(cfg.schedule, list):  # JSON round-trip
        cfg = dataclasses.replace(cfg, schedule=tuple(cfg.schedule))
    model = TokenizerModel.create(cfg, seed=0)
    dtype = cfg.np_dtype()
    for name, p in model.params.items():
        p.values = arrays[name].astype(dtype)
        if f"opt.{name}.m" in arrays:
            p.m = arrays[f"opt.{name}.m"].astype(dtype)
            p.v = arrays[f"opt.{name}.v"].astype(dtype)
            p.step = int(arrays[f"opt.{name}.step"].reshape(-1)[0])
    model.codebook.embeddings = arrays["codebook.embeddings"].astype(dtype)
    model.codebook.ema_counts = arrays["codebook.ema_counts"].astype(dtype)
    model.codebook.ema_sums = arrays["codebook.ema_sums"].astype(dtype)
    return model, config
