"""Network partitioning into homogeneous sub-regions.

Each link becomes a 3-d point (alpha * x, alpha * y, beta * v) from its
min-max normalized midpoint and its mean speed during the peak-production
window, and the points are clustered with seeded k-means. Defaults:
K = 4, alpha = 1, beta = 1.5, window half-width 2 around window index 40.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import RoadNetwork, fit_minmax
from .simulate import SimRecord


@dataclass(frozen=True)
class PartitionParams:
    k: int = 4
    alpha: float = 1.0
    beta: float = 1.5
    t_window: int = 2
    t_max: int = 40
    seed: int = 0
    max_iter: int = 300


@dataclass(frozen=True)
class PartitionAssignment:
    labels: dict[int, int]          # link id -> region label in 0..k-1
    centroids: np.ndarray           # (k, 3) in the weighted feature space
    params: PartitionParams

    def __getitem__(self, link_id: int) -> int:
        return self.labels[link_id]

    def __contains__(self, link_id: int) -> bool:
        return link_id in self.labels

    def region_sizes(self) -> list[int]:
        sizes = [0] * self.params.k
        for lab in self.labels.values():
            sizes[lab] += 1
        return sizes


def peak_window_speed(record: SimRecord, link_index: int, t_max: int,
                      t_window: int) -> float:
    """Mean link speed over windows [t_max - t_window, t_max + t_window],
    clipped to the record bounds."""
    lo = max(t_max - t_window, 0)
    hi = min(t_max + t_window, record.n_windows - 1)
    if lo > hi or hi < 0 or lo >= record.n_windows:
        raise ValueError("window range does not intersect the record")
    return float(record.speeds[lo:hi + 1, link_index].mean())


def build_cluster_points(net: RoadNetwork, record: SimRecord, alpha: float,
                         beta: float, t_window: int, t_max: int) -> np.ndarray:
    """One 3-d point per link: weighted normalized (x, y, peak speed)."""
    mids = np.array([net.midpoint(lk.id) for lk in net.links])
    speeds = np.array([
        peak_window_speed(record, zi, t_max, t_window)
        for zi in range(net.n_links)
    ])
    raw = np.column_stack([mids, speeds])
    norm = fit_minmax(raw).apply(raw)
    return norm * np.array([alpha, alpha, beta])


def _wcss(points: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    return float(((points - centroids[labels]) ** 2).sum())


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centroids = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[i] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[i]) ** 2).sum(axis=1))
    return centroids


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator,
           max_iter: int) -> tuple[np.ndarray, np.ndarray]:
    centroids = _kmeanspp_init(points, k, rng)
    labels = np.full(len(points), -1, dtype=int)
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        # re-seed any emptied cluster from the farthest point whose donor
        # cluster keeps at least one member
        own_d2 = d2[np.arange(len(points)), new_labels]
        for c in range(k):
            if np.any(new_labels == c):
                continue
            for far in np.argsort(-own_d2):
                far = int(far)
                if np.sum(new_labels == new_labels[far]) > 1:
                    new_labels[far] = c
                    own_d2[far] = 0.0
                    break
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            centroids[c] = points[labels == c].mean(axis=0)
    return labels, centroids


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 300,
           n_init: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations from k-means++ starts, deterministic per seed.

    Points tied between centroids go to the lowest centroid index (argmin
    tie-break). The best of ``n_init`` restarts by within-cluster sum of
    squares is returned; restart seeds are spawned from ``seed``.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or len(points) < k:
        raise ValueError("need at least k points")
    best = None
    for child in np.random.SeedSequence(seed).spawn(max(n_init, 1)):
        labels, centroids = _lloyd(points, k, np.random.default_rng(child),
                                   max_iter)
        obj = _wcss(points, labels, centroids)
        if best is None or obj < best[0]:
            best = (obj, labels, centroids)
    return best[1], best[2]


def partition_network(net: RoadNetwork, record: SimRecord,
                      params: PartitionParams | None = None) -> PartitionAssignment:
    params = params or PartitionParams()
    points = build_cluster_points(net, record, params.alpha, params.beta,
                                  params.t_window, params.t_max)
    labels, centroids = kmeans(points, params.k, seed=params.seed,
                               max_iter=params.max_iter)
    return PartitionAssignment(
        labels={lk.id: int(lab) for lk, lab in zip(net.links, labels)},
        centroids=centroids, params=params,
    )


# ---------------------------------------------------------------------------
# partition file: parameter header + "REGION link_id label" lines
# ---------------------------------------------------------------------------

def save_partition(assignment: PartitionAssignment, path) -> None:
    p = assignment.params
    with open(path, "w") as fh:
        fh.write("# network partition\n")
        for key, val in (("k", p.k), ("alpha", p.alpha), ("beta", p.beta),
                         ("t_window", p.t_window), ("t_max", p.t_max),
                         ("seed", p.seed), ("max_iter", p.max_iter)):
            fh.write(f"PARAM {key} {val!r}\n")
        for c in assignment.centroids:
            fh.write("CENTROID " + " ".join(repr(float(v)) for v in c) + "\n")
        for link_id in sorted(assignment.labels):
            fh.write(f"REGION {link_id} {assignment.labels[link_id]}\n")


def load_partition(path) -> PartitionAssignment:
    params: dict[str, float] = {}
    labels: dict[int, int] = {}
    centroids: list[list[float]] = []
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "PARAM":
                params[parts[1]] = float(parts[2])
            elif parts[0] == "CENTROID":
                centroids.append([float(v) for v in parts[1:]])
            elif parts[0] == "REGION":
                labels[int(parts[1])] = int(parts[2])
            else:
                raise ValueError(f"unknown partition record {parts[0]!r}")
    p = PartitionParams(k=int(params["k"]), alpha=params["alpha"],
                        beta=params["beta"], t_window=int(params["t_window"]),
                        t_max=int(params["t_max"]), seed=int(params["seed"]),
                        max_iter=int(params["max_iter"]))
    return PartitionAssignment(labels=labels, centroids=np.array(centroids),
                               params=p)
