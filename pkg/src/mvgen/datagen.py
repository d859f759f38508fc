"""Synthetic phantom corpus with the full preprocessing pipeline.

Four procedurally generated geometry families stand in for clinical data: two
CT-style families (pseudo Hounsfield units on an air background) and two
MRI-style families (non-negative intensities on a true-zero background, with
rare heavy-tailed outliers). Each family has a hand-written detector used as
an independent oracle for corpus quality and, later, for conditional samples.

Pipeline order is fixed: foreground filter -> modality normalization
(CT windowing / MRI percentile clipping) -> resize to the canonical square
resolution. Everything is a pure function of (spec, seed).
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
import warnings
from typing import Callable, Iterable

import numpy as np

from .numerics import ContractError, resize_bilinear_np, resize_nearest_np
from .rng import rng_for


class DegenerateInputError(ValueError):
    """Input carries no usable signal (e.g. an all-zero MRI slice)."""


CT = "CT"
MRI = "MRI"

NESTED_ELLIPSES = "nested_ellipses"
PARALLEL_BANDS = "parallel_bands"
RING_WITH_CORE = "ring_with_core"
LATTICE_OF_BLOBS = "lattice_of_blobs"

FAMILIES = (NESTED_ELLIPSES, PARALLEL_BANDS, RING_WITH_CORE, LATTICE_OF_BLOBS)
FAMILY_MODALITY = {
    NESTED_ELLIPSES: CT,
    PARALLEL_BANDS: CT,
    RING_WITH_CORE: MRI,
    LATTICE_OF_BLOBS: MRI,
}

# soft-tissue window defaults
CT_WINDOW_LEVEL = 40.0
CT_WINDOW_WIDTH = 400.0


@dataclasses.dataclass(frozen=True)
class DatasetLabel:
    id: int
    name: str

    def __post_init__(self):
        if self.id < 0:
            raise ContractError("label ids must be non-negative")


@dataclasses.dataclass(frozen=True)
class PhantomSpec:
    label: DatasetLabel
    family: str
    noise_level: float = 1.0
    base_seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ContractError(f"unknown geometry family '{self.family}'")

    @property
    def modality(self) -> str:
        return FAMILY_MODALITY[self.family]


@dataclasses.dataclass
class RawSlice:
    intensities: np.ndarray
    mask: np.ndarray
    modality: str

    def __post_init__(self):
        if self.intensities.shape != self.mask.shape:
            raise ContractError("intensity and mask extents must match")
        if self.modality == MRI and self.intensities.min() < 0:
            raise ContractError("MRI intensities must be non-negative")

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]


@dataclasses.dataclass(frozen=True)
class Slice:
    values: np.ndarray
    label: DatasetLabel

    def __post_init__(self):
        h, w = self.values.shape
        if h != w:
            raise ContractError("canonical slices are square")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ContractError("slice values must lie in [0, 1]")

    @property
    def resolution(self) -> int:
        return self.values.shape[0]


def default_labels() -> list[tuple[DatasetLabel, str]]:
    return [
        (DatasetLabel(0, NESTED_ELLIPSES), NESTED_ELLIPSES),
        (DatasetLabel(1, PARALLEL_BANDS), PARALLEL_BANDS),
        (DatasetLabel(2, RING_WITH_CORE), RING_WITH_CORE),
        (DatasetLabel(3, LATTICE_OF_BLOBS), LATTICE_OF_BLOBS),
    ]


# -- phantom construction -----------------------------------------------------


def _disk(yy, xx, cy, cx, radius):
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2


def _ellipse(yy, xx, cy, cx, a, b, angle):
    dy, dx = yy - cy, xx - cx
    ca, sa = np.cos(angle), np.sin(angle)
    u = dx * ca + dy * sa
    v = -dx * sa + dy * ca
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def make_phantom(spec: PhantomSpec, seed: int) -> RawSlice:
    """Deterministic phantom for (spec, seed); see the family catalogue above."""
    rng = rng_for(spec.base_seed, seed, spec.label.id, "phantom")
    size = int(rng.integers(44, 65))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    s = float(size)

    if spec.family == NESTED_ELLIPSES:
        img = np.full((size, size), -1000.0)
        cy = s / 2 + rng.uniform(-0.06, 0.06) * s
        cx = s / 2 + rng.uniform(-0.06, 0.06) * s
        a = rng.uniform(0.30, 0.40) * s
        b = a * rng.uniform(0.50, 0.70)
        angle = rng.uniform(0, np.pi)
        mask = _ellipse(yy, xx, cy, cx, a, b, angle)
        for scale, hu in ((1.0, 0.0), (0.62, 120.0), (0.30, 220.0)):
            img[_ellipse(yy, xx, cy, cx, a * scale, b * scale, angle)] = hu
    elif spec.family == PARALLEL_BANDS:
        img = np.full((size, size), -1000.0)
        cy = s / 2 + rng.uniform(-0.03, 0.03) * s
        cx = s / 2 + rng.uniform(-0.03, 0.03) * s
        body = _disk(yy, xx, cy, cx, 0.46 * s)
        period = rng.uniform(0.12, 0.22) * s
        phase = rng.uniform(0, period)
        bright = (np.floor((yy - phase) / period).astype(np.int64) % 2) == 0
        img[body] = -40.0
        img[body & bright] = 140.0
        mask = body
    elif spec.family == RING_WITH_CORE:
        img = np.zeros((size, size))
        cy = s / 2 + rng.uniform(-0.04, 0.04) * s
        cx = s / 2 + rng.uniform(-0.04, 0.04) * s
        r_core = rng.uniform(0.10, 0.14) * s
        r_gap = rng.uniform(0.24, 0.30) * s
        r_ring = rng.uniform(0.36, 0.42) * s
        mask = _disk(yy, xx, cy, cx, r_ring)
        img[mask] = 60.0 * rng.uniform(0.9, 1.1)
        ring = mask & ~_disk(yy, xx, cy, cx, r_gap)
        img[ring] = 420.0 * rng.uniform(0.9, 1.1)
        img[_disk(yy, xx, cy, cx, r_core)] = 500.0 * rng.uniform(0.9, 1.1)
    elif spec.family == LATTICE_OF_BLOBS:
        img = np.zeros((size, size))
        cy = s / 2 + rng.uniform(-0.02, 0.02) * s
        cx = s / 2 + rng.uniform(-0.02, 0.02) * s
        plate = _disk(yy, xx, cy, cx, 0.47 * s)
        img[plate] = 70.0 * rng.uniform(0.9, 1.1)
        span = 0.72 * s
        spacing = span / 3.0
        blob_r = spacing * rng.uniform(0.26, 0.34)
        blob_value = 480.0 * rng.uniform(0.95, 1.05)
        for gy in range(4):
            for gx in range(4):
                by = cy - span / 2 + gy * spacing + rng.uniform(-0.10, 0.10) * spacing
                bx = cx - span / 2 + gx * spacing + rng.uniform(-0.10, 0.10) * spacing
                img[_disk(yy, xx, by, bx, blob_r)] = blob_value
        mask = plate
    else:  # pragma: no cover - guarded by PhantomSpec
        raise ContractError(spec.family)

    if spec.noise_level > 0:
        if spec.modality == CT:
            img = img + rng.normal(0.0, 10.0 * spec.noise_level, size=img.shape)
            img = np.clip(img, -1000.0, 1000.0)
        else:
            noise = rng.normal(0.0, 8.0 * spec.noise_level, size=img.shape)
            img = np.where(mask, img + noise, img)
            # rare heavy-tailed intensity spikes, the reason percentile clipping exists;
            # two-sided in log space so roughly half land above the usual range
            fg = np.flatnonzero(mask)
            n_out = max(1, int(round(0.01 * fg.size)))
            picks = rng.choice(fg, size=n_out, replace=False)
            tails = np.clip(rng.standard_cauchy(size=n_out), -5.0, 5.0)
            flat = img.reshape(-1)
            flat[picks] = flat[picks] * np.exp(0.8 * tails)
            img = np.clip(flat.reshape(img.shape), 0.0, None)
    return RawSlice(intensities=img, mask=mask.copy(), modality=spec.modality)


# -- modality normalization ---------------------------------------------------


def ct_window(raw: RawSlice, level: float = CT_WINDOW_LEVEL,
              width: float = CT_WINDOW_WIDTH) -> np.ndarray:
    """Map HU through a fixed window to [0, 1]: clamp((v - (level - width/2)) / width)."""
    if raw.modality != CT:
        raise ContractError("ct_window requires a CT slice")
    if width <= 0:
        raise ContractError("window width must be positive")
    lo = level - width / 2.0
    return np.clip((raw.intensities - lo) / width, 0.0, 1.0)


def mri_percentile_clip(raw: RawSlice, fraction: float = 0.005) -> np.ndarray:
    """Clip to percentile bounds of the non-zero intensities, then map to [0, 1].

    Bounds drop the lowest/highest floor(fraction * n) order statistics of the
    sorted non-zero values; zero pixels always map to 0.
    """
    if raw.modality != MRI:
        raise ContractError("mri_percentile_clip requires an MRI slice")
    if not 0.0 <= fraction < 0.5:
        raise ContractError("fraction must lie in [0, 0.5)")
    nonzero = np.sort(raw.intensities[raw.intensities > 0])
    if nonzero.size == 0:
        raise DegenerateInputError("all-zero MRI slice")
    k = int(np.floor(fraction * nonzero.size))
    p_low, p_high = nonzero[k], nonzero[nonzero.size - 1 - k]
    out = np.zeros_like(raw.intensities, dtype=np.float64)
    fg = raw.intensities > 0
    if p_high == p_low:
        warnings.warn("degenerate MRI intensity range; foreground mapped to 0")
        return out
    out[fg] = (np.clip(raw.intensities[fg], p_low, p_high) - p_low) / (p_high - p_low)
    return out


# -- connected components and the foreground filter ---------------------------


def label_components(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """4-connected component labelling. Returns (labels starting at 1, counts).

    counts[i] is the pixel count of component i+1.
    """
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent: list[int] = [0]

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    prev_runs: list[tuple[int, int, int]] = []  # (start, end, label) on previous row
    for y in range(h):
        row = mask[y]
        runs: list[tuple[int, int, int]] = []
        x = 0
        while x < w:
            if not row[x]:
                x += 1
                continue
            x0 = x
            while x < w and row[x]:
                x += 1
            lbl = 0
            for ps, pe, plbl in prev_runs:
                if ps < x and pe > x0:  # columns overlap -> 4-connected
                    root = find(plbl)
                    if lbl == 0:
                        lbl = root
                    elif root != lbl:
                        a, b = sorted((root, lbl))
                        parent[b] = a
                        lbl = a
            if lbl == 0:
                parent.append(len(parent))
                lbl = len(parent) - 1
            runs.append((x0, x, lbl))
            labels[y, x0:x] = lbl
        prev_runs = runs

    if len(parent) == 1:
        return labels, np.zeros(0, dtype=np.int64)
    roots = np.array([find(i) for i in range(len(parent))], dtype=np.int32)
    remap = np.zeros(len(parent), dtype=np.int32)
    unique_roots = sorted(set(roots[1:]))
    for new, root in enumerate(unique_roots, start=1):
        remap[roots == root] = new
    labels = remap[labels]
    counts = np.bincount(labels.reshape(-1), minlength=len(unique_roots) + 1)[1:]
    return labels, counts


def foreground_filter(raw: RawSlice, min_area_fraction: float = 0.001) -> RawSlice | None:
    """Drop mask components below min_area_fraction of the slice; None = rejected."""
    labels, counts = label_components(raw.mask.astype(bool))
    if counts.size == 0:
        return None
    threshold = min_area_fraction * raw.mask.size
    keep = np.flatnonzero(counts >= threshold) + 1
    if keep.size == 0:
        return None
    new_mask = np.isin(labels, keep)
    return RawSlice(intensities=raw.intensities, mask=new_mask, modality=raw.modality)


def resize_canonical(values: np.ndarray, resolution: int, kind: str = "bilinear") -> np.ndarray:
    """Resize to resolution x resolution; bilinear for intensities, nearest for masks."""
    if resolution < 1:
        raise ContractError("canonical resolution must be positive")
    if values.shape[0] < 1 or values.shape[1] < 1:
        raise ContractError("source extents must be at least 1")
    if kind == "bilinear":
        return resize_bilinear_np(np.asarray(values, dtype=np.float64), resolution, resolution)
    if kind == "nearest":
        return resize_nearest_np(np.asarray(values), resolution, resolution)
    raise ContractError(f"unknown resize kind '{kind}'")


def preprocess(raw: RawSlice, resolution: int) -> np.ndarray | None:
    """foreground filter -> modality normalization -> canonical resize."""
    kept = foreground_filter(raw)
    if kept is None:
        return None
    if kept.modality == CT:
        values = ct_window(kept)
    else:
        values = mri_percentile_clip(kept)
    return np.clip(resize_canonical(values, resolution, "bilinear"), 0.0, 1.0)


# -- corpus -------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class CorpusRecord:
    path: str
    label_id: int
    split: str
    seed: int


@dataclasses.dataclass
class Corpus:
    labels: list[DatasetLabel]
    families: dict[int, str]
    slices: dict[str, list[Slice]]  # split -> slices
    records: list[CorpusRecord]
    resolution: int

    def manifest_text(self) -> str:
        lines = ["MVCORPUS 1"]
        for r in self.records:
            lines.append(f"{r.path}\t{r.label_id}\t{r.split}\t{r.seed}")
        return "\n".join(lines) + "\n"

    def manifest_hash(self) -> str:
        return hashlib.sha256(self.manifest_text().encode("ascii")).hexdigest()


def _generate_corpus_item(args: tuple[PhantomSpec, int, str, int, int]
                          ) -> tuple[Slice, CorpusRecord]:
    spec, index, split_name, master_seed, resolution = args
    for attempt in range(8):
        seed = int(rng_for(master_seed, "sample", spec.label.id, index, attempt)
                   .integers(0, 2**31 - 1))
        values = preprocess(make_phantom(spec, seed), resolution)
        if values is not None:
            path = f"images/{spec.label.name}/{split_name}_{index:05d}.pgm"
            return (Slice(values=values, label=spec.label),
                    CorpusRecord(path=path, label_id=spec.label.id,
                                 split=split_name, seed=seed))
    raise ContractError(
        f"phantom generation kept rejecting (label {spec.label.id}, index {index})")


def build_corpus(specs: Iterable[PhantomSpec], per_label: int, resolution: int,
                 split: tuple[float, float, float] = (0.8, 0.1, 0.1),
                 master_seed: int = 0) -> Corpus:
    from .parallel import parallel_map

    specs = list(specs)
    if per_label <= 0:
        raise ContractError("per_label must be positive")
    if abs(sum(split) - 1.0) > 1e-9:
        raise ContractError("split fractions must sum to 1")
    n_val = int(np.floor(per_label * split[1]))
    n_test = int(np.floor(per_label * split[2]))
    n_train = per_label - n_val - n_test

    jobs = []
    for spec in specs:
        for index in range(per_label):
            split_name = ("train" if index < n_train
                          else "val" if index < n_train + n_val else "test")
            jobs.append((spec, index, split_name, master_seed, resolution))
    # each job's seed derives from (master_seed, label, index), never from
    # worker identity, so the thread count cannot change the corpus
    results = parallel_map(_generate_corpus_item, jobs)

    slices: dict[str, list[Slice]] = {"train": [], "val": [], "test": []}
    records: list[CorpusRecord] = []
    for item, record in results:
        slices[record.split].append(item)
        records.append(record)
    return Corpus(labels=[s.label for s in specs],
                  families={s.label.id: s.family for s in specs},
                  slices=slices, records=records, resolution=resolution)


def split_arrays(corpus: Corpus, split: str, dtype=np.float64) -> tuple[np.ndarray, np.ndarray]:
    """Stack one split into (values (N,R,R), label_ids (N,))."""
    items = corpus.slices[split]
    values = np.stack([s.values for s in items]).astype(dtype)
    labels = np.array([s.label.id for s in items], dtype=np.int64)
    return values, labels


def save_corpus(corpus: Corpus, out_dir: str | os.PathLike) -> None:
    """Write PGM slices plus the MVCORPUS manifest under out_dir."""
    from . import pgmio

    out = os.fspath(out_dir)
    by_split = {name: iter(items) for name, items in corpus.slices.items()}
    for record in corpus.records:
        path = os.path.join(out, record.path)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        pgmio.write_pgm(path, next(by_split[record.split]).values)
    with open(os.path.join(out, "manifest.txt"), "w", encoding="ascii") as fh:
        fh.write(corpus.manifest_text())


@dataclasses.dataclass
class LoadedCorpus:
    values: dict[str, np.ndarray]  # split -> (N, R, R)
    labels: dict[str, np.ndarray]  # split -> (N,)
    label_names: dict[int, str]
    resolution: int


def load_corpus(corpus_dir: str | os.PathLike, dtype=np.float32) -> LoadedCorpus:
    """Read a saved corpus back from its manifest."""
    from . import pgmio
    from .parallel import parallel_map

    root = os.fspath(corpus_dir)
    manifest = os.path.join(root, "manifest.txt")
    with open(manifest, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "MVCORPUS 1":
        raise ContractError("not an MVCORPUS manifest")
    records = []
    for line in lines[1:]:
        if not line:
            continue
        path, label_id, split, seed = line.split("\t")
        records.append(CorpusRecord(path=path, label_id=int(label_id),
                                    split=split, seed=int(seed)))
    images = parallel_map(lambda r: pgmio.read_pgm(os.path.join(root, r.path)), records)
    values: dict[str, list[np.ndarray]] = {"train": [], "val": [], "test": []}
    labels: dict[str, list[int]] = {"train": [], "val": [], "test": []}
    names: dict[int, str] = {}
    for record, img in zip(records, images):
        values[record.split].append(img)
        labels[record.split].append(record.label_id)
        names.setdefault(record.label_id, record.path.split("/")[1])
    stacked = {k: (np.stack(v).astype(dtype) if v else np.zeros((0, 0, 0), dtype=dtype))
               for k, v in values.items()}
    resolution = next(v.shape[1] for v in stacked.values() if v.size)
    return LoadedCorpus(values=stacked,
                        labels={k: np.array(v, dtype=np.int64) for k, v in labels.items()},
                        label_names=names, resolution=resolution)


# -- geometry detectors (independent oracles) ---------------------------------


def _robust_normalize(img: np.ndarray) -> np.ndarray:
    """Rescale so the 99.5th percentile maps to 1; shields detectors from
    per-sample contrast squash left behind by surviving intensity outliers."""
    q = float(np.quantile(img, 0.995))
    if q < 0.05:
        return np.asarray(img, dtype=np.float64)
    return np.clip(np.asarray(img, dtype=np.float64) / q, 0.0, 1.0)


def _fg_moments(fg: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
    ys, xs = np.nonzero(fg)
    if ys.size < 8:
        return None
    pts = np.stack([ys, xs], axis=1).astype(np.float64)
    center = pts.mean(axis=0)
    centered = pts - center
    cov = centered.T @ centered / pts.shape[0]
    return center, cov


def _aspect_ratio(cov: np.ndarray) -> float:
    eigvals = np.linalg.eigvalsh(cov)
    lo = max(float(eigvals[0]), 1e-9)
    return float(np.sqrt(eigvals[1] / lo))


def detect_parallel_bands(img: np.ndarray) -> bool:
    """Row-variance test on the central crop: the image is nearly a function of
    the row index alone (strong row-mean variance, tiny residual within rows)."""
    r = img.shape[0]
    img = _robust_normalize(img)
    c = img[r // 4: 3 * r // 4, r // 4: 3 * r // 4]
    row_profile = c.mean(axis=1)
    v_row = float(row_profile.var())
    v_col = float(c.mean(axis=0).var())
    within_row = float(((c - row_profile[:, None]) ** 2).mean())
    if not (v_row > 0.004 and v_col < 0.25 * v_row and within_row < 0.25 * v_row):
        return False
    # stripes either alternate (several reversals) or show a flat two-level
    # profile; a single smooth arch (an eccentric blob) does neither
    steps = np.diff(row_profile)
    signs = np.sign(steps[np.abs(steps) > 0.03])
    reversals = int((signs[1:] != signs[:-1]).sum()) if signs.size > 1 else 0
    lo, hi = np.quantile(row_profile, (0.25, 0.75))
    near_level = (np.abs(row_profile - lo) < 0.08) | (np.abs(row_profile - hi) < 0.08)
    bimodal = hi - lo > 0.15 and float(near_level.mean()) >= 0.75
    return reversals >= 2 or bimodal


def detect_nested_ellipses(img: np.ndarray) -> bool:
    """Eccentric footprint with intensity decreasing outward along elliptical shells."""
    img = _robust_normalize(img)
    fg = img > 0.15
    if fg.sum() < 0.02 * img.size:
        return False
    moments = _fg_moments(fg)
    if moments is None:
        return False
    center, cov = moments
    if _aspect_ratio(cov) < 1.15:
        return False
    ys, xs = np.nonzero(fg)
    pts = np.stack([ys, xs], axis=1).astype(np.float64) - center
    inv = np.linalg.inv(cov + 1e-9 * np.eye(2))
    radii = np.sqrt(np.einsum("ni,ij,nj->n", pts, inv, pts))
    order = np.argsort(radii)
    vals = img[ys[order], xs[order]]
    shells = np.array_split(vals, 4)
    means = [float(s.mean()) for s in shells]
    monotone = all(means[i] >= means[i + 1] - 0.05 for i in range(3))
    return monotone and (means[0] - means[3]) > 0.12


def detect_ring_with_core(img: np.ndarray) -> bool:
    """Isotropic footprint whose radial profile is bright-dip-bright."""
    img = _robust_normalize(img)
    fg = img > 0.2
    if fg.sum() < 0.01 * img.size:
        return False
    _, counts = label_components(fg)
    min_size = max(3, int(0.001 * img.size))
    if int((counts >= min_size).sum()) > 3:
        return False
    moments = _fg_moments(fg)
    if moments is None:
        return False
    center, cov = moments
    if _aspect_ratio(cov) > 1.30:
        return False
    yy, xx = np.mgrid[0:img.shape[0], 0:img.shape[1]].astype(np.float64)
    radius = np.sqrt((yy - center[0]) ** 2 + (xx - center[1]) ** 2)
    ys, xs = np.nonzero(fg)
    r_max = float(np.quantile(np.sqrt((ys - center[0]) ** 2 + (xs - center[1]) ** 2), 0.98))
    if r_max < 4:
        return False
    bins = np.clip((radius / r_max * 8).astype(np.int64), 0, 8)
    profile = np.array([float(img[bins == i].mean()) if np.any(bins == i) else 0.0
                        for i in range(8)])
    core = profile[0]
    if core < 0.5:
        return False
    dip_idx = int(np.argmin(profile[1:7])) + 1
    dip = profile[dip_idx]
    rebound = float(profile[dip_idx:].max())
    # the gap must be genuinely dark, not just darker than the core
    return dip <= 0.25 and dip <= core - 0.3 and rebound >= dip + 0.2


def detect_lattice_of_blobs(img: np.ndarray) -> bool:
    """Many small bright components arranged on the plate."""
    fg = _robust_normalize(img) > 0.45
    _, counts = label_components(fg)
    min_size = max(3, int(0.0008 * img.size))
    return int((counts >= min_size).sum()) >= 6


DETECTORS: dict[str, Callable[[np.ndarray], bool]] = {
    NESTED_ELLIPSES: detect_nested_ellipses,
    PARALLEL_BANDS: detect_parallel_bands,
    RING_WITH_CORE: detect_ring_with_core,
    LATTICE_OF_BLOBS: detect_lattice_of_blobs,
}


def geometry_detector(family: str) -> Callable[[np.ndarray], bool]:
    if family not in DETECTORS:
        raise ContractError(f"no detector for family '{family}'")
    return DETECTORS[family]
