"""Seeded synthetic domain-shift benchmarks.

A source set is drawn from a 2-D generator (two moons or Gaussian blobs), a
target set is a fresh draw from the same process pushed through a geometric
shift (rotate, scale, translate), and both are optionally lifted to a higher
dimension by one shared random linear embedding plus noise.  Everything is a
pure function of its parameters and seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .exceptions import ConfigError, ContractError

GENERATORS = ("two_moons", "blobs")


@dataclass(frozen=True)
class ShiftSpec:
    """Geometric shift applied to a fresh draw of the source process.

    noise_sigma None inherits the source generator's own noise level, so the
    identity ShiftSpec reproduces the source distribution exactly (up to the
    sampling draw).  Order of application: rotate, scale, translate.
    """

    rotation_deg: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0
    noise_sigma: float | None = None
    class_imbalance_ratio: float = 1.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")
        if self.noise_sigma is not None and self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.class_imbalance_ratio <= 0:
            raise ConfigError(f"class_imbalance_ratio must be positive, "
                              f"got {self.class_imbalance_ratio}")


@dataclass
class LabeledSet:
    """2-D points with integer labels and the generator recipe that made them."""

    x: np.ndarray
    y: np.ndarray
    meta: dict


def make_two_moons(n: int, noise_sigma: float, seed) -> LabeledSet:
    """Two interleaving half-circles with Gaussian coordinate noise.

    Class 0 sits on the unit upper half-circle centered at the origin,
    class 1 on a lower half-circle offset to interleave with it.
    """
    if n < 2:
        raise ConfigError(f"two moons needs n >= 2, got {n}")
    if noise_sigma < 0:
        raise ConfigError(f"noise_sigma must be >= 0, got {noise_sigma}")
    n0 = n - n // 2
    n1 = n // 2
    t0 = np.linspace(0.0, np.pi, n0)
    t1 = np.linspace(0.0, np.pi, n1)
    x = np.vstack([
        np.column_stack([np.cos(t0), np.sin(t0)]),
        np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)]),
    ])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    rng = np.random.default_rng(seed)
    if noise_sigma > 0:
        x = x + rng.normal(0.0, noise_sigma, size=x.shape)
    meta = {"generator": "two_moons", "n": n, "noise_sigma": noise_sigma}
    return LabeledSet(x, y, meta)


def _class_counts(n: int, c: int, ratio: float) -> np.ndarray:
    """Split n into c counts whose weights ramp linearly from 1 to ratio,
    rounded by largest remainder so they always sum to n."""
    if c == 1:
        return np.array([n])
    weights = 1.0 + (ratio - 1.0) * np.arange(c) / (c - 1)
    exact = n * weights / weights.sum()
    counts = np.floor(exact).astype(np.int64)
    remainder = exact - counts
    for i in np.argsort(-remainder)[: n - counts.sum()]:
        counts[i] += 1
    return counts


def make_blobs(n: int, n_classes: int, centers, sigma: float, seed,
               imbalance_ratio: float = 1.0) -> LabeledSet:
    """Isotropic Gaussian clusters, optionally with ramped class imbalance."""
    if n_classes < 2:
        raise ConfigError(f"blobs needs at least 2 classes, got {n_classes}")
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    ctr = np.asarray(centers, dtype=np.float64)
    if ctr.ndim != 2 or ctr.shape[0] != n_classes:
        raise ConfigError(f"{ctr.shape[0] if ctr.ndim == 2 else '?'} centers "
                          f"for {n_classes} classes")
    counts = _class_counts(n, n_classes, imbalance_ratio)
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for k in range(n_classes):
        pts = np.tile(ctr[k], (counts[k], 1))
        if sigma > 0:
            pts = pts + rng.normal(0.0, sigma, size=pts.shape)
        xs.append(pts)
        ys.append(np.full(counts[k], k, dtype=np.int64))
    meta = {"generator": "blobs", "n": n, "n_classes": n_classes, "sigma": sigma,
            "centers": ctr.tolist(), "imbalance_ratio": imbalance_ratio}
    return LabeledSet(np.vstack(xs), np.concatenate(ys), meta)


def _redraw(meta: dict, seed, noise_override: float | None,
            imbalance_ratio: float) -> LabeledSet:
    if meta["generator"] == "two_moons":
        if imbalance_ratio != 1.0:
            raise ConfigError("class_imbalance_ratio applies to the blobs generator only")
        noise = meta["noise_sigma"] if noise_override is None else noise_override
        return make_two_moons(meta["n"], noise, seed)
    if meta["generator"] == "blobs":
        sigma = meta["sigma"] if noise_override is None else noise_override
        return make_blobs(meta["n"], meta["n_classes"], meta["centers"], sigma, seed,
                          imbalance_ratio)
    raise ConfigError(f"unknown generator {meta['generator']!r}")


def _generator_centroid(meta: dict) -> np.ndarray:
    """Population mean of the generator, independent of any particular draw."""
    if meta["generator"] == "two_moons":
        # each moon's half-circle mean is (0, 2/pi) shifted by its offset;
        # the equal-count mixture lands at (0.5, 0.25)
        return np.array([0.5, 0.25])
    return np.asarray(meta["centers"], dtype=np.float64).mean(axis=0)


def apply_shift(source: LabeledSet, spec: ShiftSpec, seed) -> LabeledSet:
    """Fresh draw from the source's generative process, then rotate and scale
    it about the generator centroid and translate.  Labels ride along for
    evaluation only."""
    drawn = _redraw(source.meta, seed, spec.noise_sigma, spec.class_imbalance_ratio)
    theta = np.deg2rad(spec.rotation_deg)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    c = _generator_centroid(source.meta)
    x = spec.scale * ((drawn.x - c) @ rot.T) + c + np.asarray(spec.translation,
                                                              dtype=np.float64)
    meta = dict(drawn.meta)
    meta.update({"rotation_deg": spec.rotation_deg, "translation": list(spec.translation),
                 "scale": spec.scale, "imbalance_ratio": spec.class_imbalance_ratio})
    return LabeledSet(x, drawn.y, meta)


def lift_embedding(dim_in: int, dim_out: int, seed) -> np.ndarray:
    """Fixed random linear map, the same for both domains of a dataset."""
    if dim_out < dim_in:
        raise ConfigError(f"lift cannot reduce dimension ({dim_in} -> {dim_out})")
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0 / np.sqrt(dim_in), size=(dim_in, dim_out))


def lift(x: np.ndarray, embedding: np.ndarray, noise_sigma: float, seed) -> np.ndarray:
    lifted = x @ embedding
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        lifted = lifted + rng.normal(0.0, noise_sigma, size=lifted.shape)
    return lifted


@dataclass
class DomainDataset:
    """Labeled source samples plus unlabeled-for-training target samples.

    target_y is held out for evaluation; the batch view never exposes it.
    """

    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    target_y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source_x.shape[0] != self.source_y.shape[0]:
            raise ContractError("source sample/label counts differ")
        if self.target_x.shape[0] != self.target_y.shape[0]:
            raise ContractError("target sample/label counts differ")
        if self.source_x.shape[0] == 0 or self.target_x.shape[0] == 0:
            raise ContractError("both domains must be non-empty")

    @property
    def n_source(self) -> int:
        return self.source_x.shape[0]

    @property
    def n_target(self) -> int:
        return self.target_x.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.source_y.max()) + 1

    @property
    def input_dim(self) -> int:
        return self.source_x.shape[1]


def make_domain_dataset(source: LabeledSet, shift: ShiftSpec, seed,
                        lift_dim: int = 0, lift_noise: float = 0.0) -> DomainDataset:
    """Pair a source set with its shifted redraw; optionally lift both
    through one shared embedding.  lift_dim 0 keeps the raw 2-D data."""
    # seed offsets 900.. keep dataset streams disjoint from network-init seeds
    target = apply_shift(source, shift, [seed, 901])
    sx, tx = source.x, target.x
    meta = {"source": dict(source.meta), "target": dict(target.meta), "seed": seed,
            "lift_dim": lift_dim, "lift_noise": lift_noise}
    if lift_dim:
        emb = lift_embedding(sx.shape[1], lift_dim, [seed, 902])
        sx = lift(sx, emb, lift_noise, [seed, 903])
        tx = lift(tx, emb, lift_noise, [seed, 904])
    return DomainDataset(sx, source.y, tx, target.y, meta)


def standard_benchmark(seed, n_source: int = 500, n_target: int = 500,
                       noise_sigma: float = 0.15, rotation_deg: float = 45.0,
                       translation: tuple[float, float] = (0.0, 0.0),
                       scale: float = 1.0, lift_dim: int = 16,
                       lift_noise: float = 0.05) -> DomainDataset:
    """Two moons versus their rotated redraw, lifted to 16-D by default."""
    source = make_two_moons(n_source, noise_sigma, [seed, 900])
    # the redraw reads n from the recipe, so the target count can differ
    recipe = LabeledSet(source.x, source.y, {**source.meta, "n": n_target})
    shift = ShiftSpec(rotation_deg=rotation_deg, translation=translation, scale=scale)
    return make_domain_dataset(recipe, shift, seed, lift_dim, lift_noise)


@dataclass(frozen=True)
class Batch:
    """One training step's view: labeled source rows, unlabeled target rows.

    Sample ids are stable across epochs (source rows keep their dataset
    index, target rows are offset by the source count) so per-sample
    prediction smoothing can key on them.
    """

    xs: np.ndarray
    ys: np.ndarray
    xt: np.ndarray
    src_ids: np.ndarray
    tgt_ids: np.ndarray


def batches(dataset: DomainDataset, batch_size: int, seed, epoch: int) -> list[Batch]:
    """Independent per-domain shuffles for one epoch; short tail dropped."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be positive, got {batch_size}")
    if batch_size > min(dataset.n_source, dataset.n_target):
        raise ConfigError(f"batch_size {batch_size} exceeds the smaller domain "
                          f"({min(dataset.n_source, dataset.n_target)} samples)")
    perm_s = np.random.default_rng([seed, 101, epoch]).permutation(dataset.n_source)
    perm_t = np.random.default_rng([seed, 202, epoch]).permutation(dataset.n_target)
    n = min(dataset.n_source // batch_size, dataset.n_target // batch_size)
    out = []
    for b in range(n):
        rows_s = perm_s[b * batch_size:(b + 1) * batch_size]
        rows_t = perm_t[b * batch_size:(b + 1) * batch_size]
        out.append(Batch(
            xs=dataset.source_x[rows_s],
            ys=dataset.source_y[rows_s],
            xt=dataset.target_x[rows_t],
            src_ids=rows_s.astype(np.int64),
            tgt_ids=(dataset.n_source + rows_t).astype(np.int64),
        ))
    return out


def batch_stream(dataset: DomainDataset, batch_size: int, seed) -> Iterator[Batch]:
    """Endless batch iterator cycling through reshuffled epochs."""
    epoch = 0
    while True:
        yield from batches(dataset, batch_size, seed, epoch)
        epoch += 1


# ---------------------------------------------------------------------------
# dataset export / import: CSV with a key-value metadata sidecar


def _flatten_meta(meta: dict, prefix: str = "") -> list[tuple[str, str]]:
    items = []
    for k in sorted(meta):
        v = meta[k]
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            items.extend(_flatten_meta(v, f"{key}."))
        else:
            if isinstance(v, (np.floating, np.integer)):
                v = v.item()
            items.append((key, repr(v)))
    return items


def save_dataset(dataset: DomainDataset, csv_path, meta_path) -> None:
    dim = dataset.input_dim
    header = "id,split,label," + ",".join(f"x_{j}" for j in range(dim))
    lines = [header]
    for i in range(dataset.n_source):
        coords = ",".join(repr(float(v)) for v in dataset.source_x[i])
        lines.append(f"{i},source,{dataset.source_y[i]},{coords}")
    for i in range(dataset.n_target):
        coords = ",".join(repr(float(v)) for v in dataset.target_x[i])
        lines.append(f"{dataset.n_source + i},target,{dataset.target_y[i]},{coords}")
    with open(csv_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(meta_path, "w") as fh:
        for k, v in _flatten_meta(dataset.meta):
            fh.write(f"{k} = {v}\n")


def load_dataset(csv_path) -> DomainDataset:
    with open(csv_path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("id,split,label,"):
        raise ContractError(f"unrecognized dataset header in {csv_path}")
    sx, sy, tx, ty = [], [], [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        split, label = parts[1], int(parts[2])
        coords = [float(v) for v in parts[3:]]
        if split == "source":
            sx.append(coords)
            sy.append(label)
        elif split == "target":
            tx.append(coords)
            ty.append(label)
        else:
            raise ContractError(f"unknown split {split!r} in {csv_path}")
    return DomainDataset(np.array(sx), np.array(sy, dtype=np.int64),
                         np.array(tx), np.array(ty, dtype=np.int64))
