"""Synthetic domain construction with controllable label shift.

Domains are Gaussian class-conditional clouds. With zero conditional
shift the source and target share D(X | Y = y) exactly, so any label
distribution pair realizes label shift by construction; the optional
per-class target offset deliberately breaks it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import Categorical, empirical_label_dist, jsd
from .errors import EmptyClassAfterSubsample, InvalidCount, InvalidSpec, ParseError

__all__ = [
    "Dataset",
    "DomainSpec",
    "Task",
    "circle_class_means",
    "make_gaussian_domain",
    "make_shift_task",
    "subsample_protocol",
    "jsd_task_suite",
    "write_dataset_csv",
    "read_dataset_csv",
]


@dataclass(frozen=True)
class Dataset:
    """A labeled feature matrix for one domain.

    Target labels stay out of the training losses; they exist for
    diagnostics and oracle weighting only.
    """

    features: np.ndarray
    labels: np.ndarray
    k: int
    domain_tag: str = "source"

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise InvalidSpec(f"features must be (n >= 1, d), got {feats.shape}")
        if labels.shape != (feats.shape[0],):
            raise InvalidSpec("labels must be one per feature row")
        if not np.all(np.isfinite(feats)):
            raise InvalidSpec("features contain non-finite values")
        if labels.min() < 0 or labels.max() >= self.k:
            raise InvalidSpec(f"labels must lie in [0, {self.k})")
        feats = feats.copy()
        labels = labels.copy()
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def label_distribution(self) -> Categorical:
        return empirical_label_dist(self.labels, self.k)


@dataclass(frozen=True)
class DomainSpec:
    """Recipe for one Gaussian-mixture domain.

    ``exact_counts`` draws class sizes by largest-remainder rounding of
    n * label_dist instead of i.i.d. sampling, so the realized label
    distribution matches the requested one exactly.
    """

    k: int
    d: int
    class_means: np.ndarray
    class_covariance_scale: float
    label_dist: Categorical
    n: int
    seed: int
    conditional_shift: np.ndarray | None = None
    exact_counts: bool = False


def _exact_class_counts(probs: np.ndarray, n: int) -> np.ndarray:
    raw = probs * n
    counts = np.floor(raw).astype(int)
    remainder = n - counts.sum()
    order = np.argsort(-(raw - counts))
    counts[order[:remainder]] += 1
    return counts


def circle_class_means(k: int, d: int = 2, radius: float = 1.0) -> np.ndarray:
    """k class means spread evenly on a circle in the first two coordinates."""
    if k < 2 or d < 1:
        raise InvalidSpec("need k >= 2 and d >= 1")
    means = np.zeros((k, d))
    angles = 2.0 * np.pi * np.arange(k) / k
    means[:, 0] = radius * np.cos(angles)
    if d > 1:
        means[:, 1] = radius * np.sin(angles)
    return means


def make_gaussian_domain(spec: DomainSpec, domain_tag: str = "source") -> Dataset:
    """Sample labels from the spec's label distribution, then features from
    N(mean_y + shift_y, sigma^2 I). Deterministic given the spec's seed."""
    means = np.asarray(spec.class_means, dtype=float)
    if means.shape != (spec.k, spec.d):
        raise InvalidSpec(f"class_means has shape {means.shape}, expected ({spec.k}, {spec.d})")
    if not np.all(np.isfinite(means)):
        raise InvalidSpec("class_means contain non-finite values")
    if spec.label_dist.k != spec.k:
        raise InvalidSpec("label_dist length must equal k")
    if spec.class_covariance_scale < 0:
        raise InvalidSpec("covariance scale must be nonnegative")
    if spec.n < 1:
        raise InvalidSpec("n must be at least 1")
    shift = np.zeros((spec.k, spec.d))
    if spec.conditional_shift is not None:
        shift = np.asarray(spec.conditional_shift, dtype=float)
        if shift.shape != (spec.k, spec.d):
            raise InvalidSpec(
                f"conditional_shift has shape {shift.shape}, expected ({spec.k}, {spec.d})"
            )
    rng = np.random.default_rng(spec.seed)
    if spec.exact_counts:
        counts = _exact_class_counts(spec.label_dist.probs, spec.n)
        labels = np.repeat(np.arange(spec.k), counts)
        rng.shuffle(labels)
    else:
        labels = rng.choice(spec.k, size=spec.n, p=spec.label_dist.probs)
    noise = rng.standard_normal((spec.n, spec.d)) * spec.class_covariance_scale
    feats = means[labels] + shift[labels] + noise
    return Dataset(features=feats, labels=labels, k=spec.k, domain_tag=domain_tag)


def make_shift_task(
    k: int = 3,
    d: int = 2,
    n_source: int = 3000,
    n_target: int = 3000,
    sigma: float = 0.25,
    radius: float = 1.0,
    p_source=None,
    p_target=None,
    seed: int = 0,
    conditional_shift: np.ndarray | None = None,
    exact_counts: bool = False,
) -> tuple[Dataset, Dataset]:
    """Build a source/target pair sharing class-conditional clouds."""
    means = circle_class_means(k, d, radius)
    p_s = Categorical(np.full(k, 1.0 / k)) if p_source is None else Categorical(np.asarray(p_source, dtype=float))
    p_t = Categorical(np.full(k, 1.0 / k)) if p_target is None else Categorical(np.asarray(p_target, dtype=float))
    src = make_gaussian_domain(
        DomainSpec(k, d, means, sigma, p_s, n_source, seed, exact_counts=exact_counts),
        domain_tag="source",
    )
    tgt = make_gaussian_domain(
        DomainSpec(k, d, means, sigma, p_t, n_target, seed + 1, conditional_shift, exact_counts),
        domain_tag="target",
    )
    return src, tgt


def subsample_protocol(data: Dataset, fraction: float, seed: int = 0) -> Dataset:
    """Keep only ``fraction`` of the samples in the first half of the classes.

    Classes 0 .. ceil(k/2)-1 keep floor(fraction * n_y) uniformly chosen
    samples each; the remaining classes are untouched.
    """
    if not 0.0 < fraction <= 1.0:
        raise InvalidSpec(f"fraction must lie in (0, 1], got {fraction!r}")
    rng = np.random.default_rng(seed)
    first_half = (data.k + 1) // 2
    keep: list[np.ndarray] = []
    for y in range(data.k):
        idx = np.flatnonzero(data.labels == y)
        if y < first_half:
            m = int(np.floor(fraction * idx.size))
            if m < 1:
                raise EmptyClassAfterSubsample(f"class {y} would keep 0 of {idx.size} samples")
            idx = rng.choice(idx, size=m, replace=False)
        keep.append(idx)
    order = np.sort(np.concatenate(keep))
    return Dataset(
        features=data.features[order],
        labels=data.labels[order],
        k=data.k,
        domain_tag=data.domain_tag,
    )


@dataclass(frozen=True)
class Task:
    """One adaptation task tagged with its label-distribution divergence."""

    source: Dataset
    target: Dataset
    jsd_label: float
    subsampled: str = "source"


def _apply_keep_vector(data: Dataset, keep: np.ndarray, rng) -> Dataset:
    idx_all: list[np.ndarray] = []
    for y in range(data.k):
        idx = np.flatnonzero(data.labels == y)
        m = max(1, int(round(keep[y] * idx.size)))
        idx_all.append(rng.choice(idx, size=min(m, idx.size), replace=False))
    order = np.sort(np.concatenate(idx_all))
    return Dataset(data.features[order], data.labels[order], data.k, data.domain_tag)


def jsd_task_suite(
    base_source: Dataset,
    base_target: Dataset,
    count: int,
    seed: int = 0,
    jsd_envelope: tuple[float, float] = (0.004, 0.095),
) -> list[Task]:
    """Generate adaptation tasks with an approximately uniform spread of
    label-distribution divergences.

    Per-class keep fractions are drawn in [0.1, 1]^k; half of the tasks
    subsample the source, half the target. A large candidate pool is
    scored by the divergence its keep vector would induce, and one
    candidate is selected per rung of an evenly spaced divergence ladder
    (automatic replacement for hand rejection).
    """
    if count < 1:
        raise InvalidCount(f"count must be >= 1, got {count}")
    if base_source.k != base_target.k:
        raise InvalidSpec("base domains disagree on the class count")
    k = base_source.k
    rng = np.random.default_rng(seed)
    n_src_tasks = (count + 1) // 2
    sides = ["source"] * n_src_tasks + ["target"] * (count - n_src_tasks)

    pool = max(80, 30 * count)
    exponents = rng.uniform(0.4, 5.0, size=pool)
    raw = rng.uniform(0.0, 1.0, size=(pool, k))
    keeps = 0.1 + 0.9 * raw ** exponents[:, None]

    tasks: list[Task] = []
    for side, n_side in (("source", n_src_tasks), ("target", count - n_src_tasks)):
        if n_side == 0:
            continue
        base = base_source if side == "source" else base_target
        other = base_target if side == "source" else base_source
        counts = np.bincount(base.labels, minlength=k).astype(float)
        cand_jsd = np.empty(pool)
        for i in range(pool):
            sub = Categorical.normalize(counts * keeps[i])
            cand_jsd[i] = jsd(sub, other.label_distribution())
        lo = max(jsd_envelope[0], float(cand_jsd.min()))
        hi = min(jsd_envelope[1], float(cand_jsd.max()))
        ladder = np.linspace(lo, hi, n_side) if n_side > 1 else np.array([(lo + hi) / 2])
        used: set[int] = set()
        for target_jsd in ladder:
            order = np.argsort(np.abs(cand_jsd - target_jsd))
            pick = next(int(i) for i in order if int(i) not in used)
            used.add(pick)
            sub = _apply_keep_vector(base, keeps[pick], rng)
            src = sub if side == "source" else base_source
            tgt = base_target if side == "source" else sub
            realized = jsd(src.label_distribution(), tgt.label_distribution())
            tasks.append(Task(source=src, target=tgt, jsd_label=realized, subsampled=side))
    return tasks


def write_dataset_csv(data: Dataset, path) -> None:
    """CSV with header feature_0,...,feature_{d-1},label."""
    header = ",".join(f"feature_{j}" for j in range(data.dim)) + ",label"
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header + "\n")
        for row, lab in zip(data.features, data.labels):
            fh.write(",".join(repr(float(v)) for v in row) + f",{int(lab)}\n")


def read_dataset_csv(path, k: int | None = None, domain_tag: str = "source") -> Dataset:
    """Read a dataset written by :func:`write_dataset_csv`.

    ``k`` defaults to max(label) + 1. Parse failures name the line.
    """
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    header = lines[0].split(",")
    if header[-1] != "label" or not all(h.startswith("feature_") for h in header[:-1]):
        raise ParseError(f"{path}: line 1: bad header {lines[0]!r}")
    d = len(header) - 1
    feats = []
    labels = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != d + 1:
            raise ParseError(f"{path}: line {lineno}: expected {d + 1} fields, got {len(parts)}")
        try:
            feats.append([float(v) for v in parts[:-1]])
            labels.append(int(parts[-1]))
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from exc
    if not feats:
        raise ParseError(f"{path}: no data rows")
    labels_arr = np.asarray(labels)
    k = int(labels_arr.max()) + 1 if k is None else k
    return Dataset(np.asarray(feats), labels_arr, k=k, domain_tag=domain_tag)
