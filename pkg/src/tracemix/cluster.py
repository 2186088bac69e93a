"""Group anonymous jobs in 5-D metric space: k-means with BIC model selection.

The number of clusters is picked by sweeping k and keeping the argmax-BIC
clustering, the same selection criterion x-means applies recursively. All
randomness flows from explicit seeds: points are put into a canonical order
before seeding, so results are reproducible and independent of input order.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import METRIC_DIMS, AnonymousJob, MetricVector, TraceToolError

RESULT_SCHEMA = "clustering-result/1"

DEFAULT_RESTARTS = 8
DEFAULT_MAX_ITERS = 100


class ClusteringError(TraceToolError):
    pass


class KTooLarge(ClusteringError):
    pass


class DegenerateVariance(ClusteringError):
    pass


@dataclass(frozen=True)
class Normalization:
    """Per-dimension raw-space mean and population std used for z-scoring."""

    mean: tuple[float, ...]
    std: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, data: dict) -> "Normalization":
        return cls(mean=tuple(float(v) for v in data["mean"]), std=tuple(float(v) for v in data["std"]))


def z_normalize(jobs: Sequence[AnonymousJob]) -> tuple[np.ndarray, Normalization]:
    """Z-score job metrics per dimension; constant dimensions map to zero."""
    if not jobs:
        raise ValueError("need at least one job")
    raw = np.array([job.metrics.as_tuple() for job in jobs], dtype=float)
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)  # population std, matching the CV's sigma
    scale = np.where(std > 0, std, 1.0)
    points = (raw - mean) / scale
    points[:, std == 0] = 0.0
    return points, Normalization(mean=tuple(mean.tolist()), std=tuple(std.tolist()))


def denormalize(points: np.ndarray, normalization: Normalization) -> np.ndarray:
    """Map z-scored points back to raw metric space."""
    std = np.asarray(normalization.std)
    mean = np.asarray(normalization.mean)
    return np.asarray(points) * std + mean


@dataclass
class KMeansRun:
    """One converged Lloyd's run. ``sse_history`` is SSE after each update."""

    assignment: np.ndarray
    centroids: np.ndarray
    sse: float
    iterations: int
    sse_history: list[float]


def _canonical_order(points: np.ndarray) -> np.ndarray:
    # Lexicographic sort: makes seeding, ties and repairs independent of the
    # order the caller supplied the points in.
    return np.lexsort(points.T[::-1])


def _seed_centroids(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centroids by squared distance."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=float)
    centroids[0] = points[rng.integers(n)]
    closest = np.sum((points - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            # All remaining points coincide with chosen centroids; cannot
            # happen while k <= number of distinct points.
            centroids[i] = points[rng.integers(n)]
            continue
        idx = rng.choice(n, p=closest / total)
        centroids[i] = points[idx]
        closest = np.minimum(closest, np.sum((points - centroids[i]) ** 2, axis=1))
    return centroids


def kmeans(points: np.ndarray, k: int, seed: int, max_iters: int = DEFAULT_MAX_ITERS) -> KMeansRun:
    """Lloyd's algorithm with k-means++ seeding from ``seed``.

    Converges when assignments stop changing or ``max_iters`` is reached;
    empty clusters are repaired by reassigning the point farthest from its
    centroid. Requires 1 <= k <= number of distinct points.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a non-empty 2-D array")
    n = pts.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    n_distinct = np.unique(pts, axis=0).shape[0]
    if k > n_distinct:
        raise KTooLarge(f"k={k} exceeds the {n_distinct} distinct points")

    order = _canonical_order(pts)
    sorted_pts = pts[order]
    rng = np.random.default_rng(seed)
    centroids = _seed_centroids(sorted_pts, k, rng)

    assignment = np.full(n, -1, dtype=int)
    sse_history: list[float] = []
    iterations = 0
    for _ in range(max_iters):
        iterations += 1
        sq_dists = np.sum((sorted_pts[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assignment = np.argmin(sq_dists, axis=1)

        counts = np.bincount(new_assignment, minlength=k)
        if np.any(counts == 0):
            own = sq_dists[np.arange(n), new_assignment].copy()
            for empty in np.flatnonzero(counts == 0):
                # Only steal from clusters that keep >= 1 member afterwards.
                donors = np.flatnonzero(counts[new_assignment] >= 2)
                farthest = int(donors[np.argmax(own[donors])])
                counts[new_assignment[farthest]] -= 1
                counts[empty] += 1
                new_assignment[farthest] = empty
                own[farthest] = -1.0

        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for j in range(k):
            centroids[j] = sorted_pts[assignment == j].mean(axis=0)
        sse_history.append(float(np.sum((sorted_pts - centroids[assignment]) ** 2)))

    result = np.empty(n, dtype=int)
    result[order] = assignment
    return KMeansRun(
        assignment=result,
        centroids=centroids,
        sse=sse_history[-1],
        iterations=iterations,
        sse_history=sse_history,
    )


def free_parameters(k: int, dims: int) -> int:
    """Parameter count of the k-cluster spherical mixture: centroids, weights, shared variance."""
    return k * (dims + 1) + 1


def bic_penalty(k: int, dims: int, n_points: int) -> float:
    return 0.5 * free_parameters(k, dims) * math.log(n_points)


def bic_score(points: np.ndarray, assignment: np.ndarray, centroids: np.ndarray) -> float:
    """BIC of a clustering under a shared-variance spherical Gaussian mixture.

    The likelihood uses the pooled ML variance s2 = SSE / (R - K); the score
    is log-likelihood minus ``bic_penalty``. Higher is better.
    """
    pts = np.asarray(points, dtype=float)
    assignment = np.asarray(assignment, dtype=int)
    n, dims = pts.shape
    k = centroids.shape[0]
    if k >= n:
        raise ValueError(f"BIC needs fewer clusters than points (K={k}, R={n})")
    # Summing per-point terms in sorted order makes the score bit-identical
    # under permutation of the input points.
    per_point = np.sum((pts - np.asarray(centroids)[assignment]) ** 2, axis=1)
    sse = float(np.sort(per_point).sum())
    sigma2 = sse / (n - k)
    if sigma2 <= 0:
        raise DegenerateVariance("all points coincide with their centroids")
    counts = np.bincount(assignment, minlength=k)
    counts = counts[counts > 0]
    log_likelihood = (
        float(np.sum(counts * np.log(counts)))
        - n * math.log(n)
        - 0.5 * n * dims * math.log(2.0 * math.pi * sigma2)
        - 0.5 * (n - k)
    )
    return log_likelihood - bic_penalty(k, dims, n)


@dataclass
class SelectKResult:
    k: int
    assignment: np.ndarray
    centroids: np.ndarray
    bic: float
    sse: float


def default_k_max(n_points: int) -> int:
    return max(1, min(20, math.isqrt(n_points)))


def _derived_seed(seed: int, k: int, restart: int) -> int:
    return int(np.random.SeedSequence([seed, k, restart]).generate_state(1)[0])


def select_k(
    points: np.ndarray,
    k_max: Optional[int] = None,
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> SelectKResult:
    """Sweep k = 1..k_max with restarts and keep the argmax-BIC clustering.

    Each k runs ``restarts`` k-means++ restarts and keeps the lowest-SSE run
    (lowest restart index on ties). Values of k whose clustering cannot be
    scored (k = number of points, or zero pooled variance) are skipped; if no
    k is scorable the single-cluster result is returned with bic = -inf.
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if k_max is None:
        k_max = default_k_max(n)
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    if restarts < 1:
        raise ValueError(f"restarts must be >= 1, got {restarts}")
    n_distinct = np.unique(pts, axis=0).shape[0]

    best: Optional[SelectKResult] = None
    fallback: Optional[SelectKResult] = None
    for k in range(1, min(k_max, n_distinct) + 1):
        run: Optional[KMeansRun] = None
        for r in range(restarts):
            candidate = kmeans(pts, k, seed=_derived_seed(seed, k, r), max_iters=max_iters)
            if run is None or candidate.sse < run.sse:
                run = candidate
        assert run is not None
        if k == 1:
            fallback = SelectKResult(k=1, assignment=run.assignment, centroids=run.centroids, bic=float("-inf"), sse=run.sse)
        try:
            bic = bic_score(pts, run.assignment, run.centroids)
        except (ValueError, DegenerateVariance):
            continue
        if best is None or bic > best.bic:
            best = SelectKResult(k=k, assignment=run.assignment, centroids=run.centroids, bic=bic, sse=run.sse)
    if best is not None:
        return best
    assert fallback is not None
    return fallback


@dataclass(frozen=True)
class Cluster:
    """A group of anonymous jobs with its raw-space summary statistics."""

    cluster_id: int
    member_job_ids: tuple[str, ...]
    centroid: MetricVector
    per_dim_mean: tuple[float, ...]
    per_dim_std: tuple[float, ...]

    def __post_init__(self):
        if not self.member_job_ids:
            raise ValueError("cluster must have at least one member")
        if any(s < 0 for s in self.per_dim_std):
            raise ValueError("per-dimension std must be >= 0")

    @property
    def size(self) -> int:
        return len(self.member_job_ids)

    @classmethod
    def from_members(cls, cluster_id: int, members: Sequence[AnonymousJob]) -> "Cluster":
        """Build a cluster from member jobs, sorted canonically by job id."""
        ordered = sorted(members, key=lambda job: job.job_id)
        raw = np.array([job.metrics.as_tuple() for job in ordered], dtype=float)
        mean = raw.mean(axis=0)
        std = raw.std(axis=0)
        return cls(
            cluster_id=cluster_id,
            member_job_ids=tuple(job.job_id for job in ordered),
            centroid=MetricVector(*(float(v) for v in mean)),
            per_dim_mean=tuple(float(v) for v in mean),
            per_dim_std=tuple(float(v) for v in std),
        )

    def to_dict(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "member_job_ids": list(self.member_job_ids),
            "centroid": self.centroid.to_dict(),
            "per_dim_mean": list(self.per_dim_mean),
            "per_dim_std": list(self.per_dim_std),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Cluster":
        return cls(
            cluster_id=int(data["cluster_id"]),
            member_job_ids=tuple(data["member_job_ids"]),
            centroid=MetricVector.from_dict(data["centroid"]),
            per_dim_mean=tuple(float(v) for v in data["per_dim_mean"]),
            per_dim_std=tuple(float(v) for v in data["per_dim_std"]),
        )


@dataclass(frozen=True)
class ClusteringResult:
    """Clusters plus everything needed to reproduce them."""

    k: int
    clusters: tuple[Cluster, ...]
    bic: float
    normalization: Normalization
    seed: int

    def __post_init__(self):
        if self.k != len(self.clusters):
            raise ValueError("k must equal the number of clusters")

    def membership(self) -> dict[str, int]:
        """Map job id -> cluster id; clusters partition the job set."""
        mapping: dict[str, int] = {}
        for cluster in self.clusters:
            for job_id in cluster.member_job_ids:
                if job_id in mapping:
                    raise ValueError(f"job {job_id!r} appears in multiple clusters")
                mapping[job_id] = cluster.cluster_id
        return mapping

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema": RESULT_SCHEMA,
                "seed": self.seed,
                "k": self.k,
                "bic": self.bic if math.isfinite(self.bic) else None,
                "normalization": self.normalization.to_dict(),
                "clusters": [c.to_dict() for c in self.clusters],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ClusteringResult":
        data = json.loads(text)
        if data.get("schema") != RESULT_SCHEMA:
            raise ValueError(f"unsupported clustering schema: {data.get('schema')!r}")
        bic = data["bic"]
        return cls(
            k=int(data["k"]),
            clusters=tuple(Cluster.from_dict(c) for c in data["clusters"]),
            bic=float(bic) if bic is not None else float("-inf"),
            normalization=Normalization.from_dict(data["normalization"]),
            seed=int(data["seed"]),
        )


def cluster_jobs(
    jobs: Sequence[AnonymousJob],
    k_max: Optional[int] = None,
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
) -> ClusteringResult:
    """Z-normalize job metrics, pick k by BIC, and package the clusters."""
    if not jobs:
        raise ValueError("need at least one job")
    ids = [job.job_id for job in jobs]
    if len(set(ids)) != len(ids):
        raise ValueError("job ids must be unique")
    points, normalization = z_normalize(jobs)
    selection = select_k(points, k_max=k_max, seed=seed, restarts=restarts)
    clusters = []
    for label in range(selection.k):
        members = [jobs[i] for i in np.flatnonzero(selection.assignment == label)]
        clusters.append(Cluster.from_members(label, members))
    return ClusteringResult(
        k=selection.k,
        clusters=tuple(clusters),
        bic=selection.bic,
        normalization=normalization,
        seed=seed,
    )
