"""Sub-chromosome token vocabulary: seeded k-means, overcluster merging,
and Potts-model label smoothing by iterated conditional modes."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ClusterError
from .features import FeatureMatrix


@dataclass(frozen=True)
class ClusterModel:
    """K-centroid vocabulary model.

    centroids are the assignment-level centroids. For a merged model they
    stay at overcluster granularity and merge_map sends overcluster ids onto
    the K final ids; final_centroids then holds the member-weighted means
    used for encoding and smoothing. Unmerged models have
    final_centroids == centroids.
    """

    centroids: np.ndarray
    K: int
    seed: int
    merge_map: np.ndarray | None = None
    final_centroids: np.ndarray | None = None
    objective_history: tuple = ()

    def __post_init__(self):
        cents = np.ascontiguousarray(np.asarray(self.centroids, dtype=np.float64))
        if self.K < 2:
            raise ClusterError("K must be >= 2", code="bad_k")
        if not np.isfinite(cents).all():
            raise ClusterError("centroids contain non-finite values",
                               code="non_finite")
        cents.setflags(write=False)
        object.__setattr__(self, "centroids", cents)
        if self.merge_map is not None:
            mm = np.asarray(self.merge_map, dtype=np.int64)
            if mm.shape[0] != cents.shape[0]:
                raise ClusterError("merge_map length must match centroid count",
                                   code="bad_merge_map")
            if set(mm.tolist()) != set(range(self.K)):
                raise ClusterError("merge_map must be surjective onto 0..K-1",
                                   code="bad_merge_map")
            mm.setflags(write=False)
            object.__setattr__(self, "merge_map", mm)
        fin = self.final_centroids if self.final_centroids is not None else cents
        fin = np.ascontiguousarray(np.asarray(fin, dtype=np.float64))
        if fin.shape[0] != self.K:
            raise ClusterError("final_centroids must have K rows", code="bad_shape")
        fin.setflags(write=False)
        object.__setattr__(self, "final_centroids", fin)

    @property
    def dim(self):
        return self.centroids.shape[1]


@dataclass(frozen=True)
class LabelField:
    """Per-patch cluster labels plus the smoothing objective value.

    unary caches squared distances to the final centroids so smoothing can
    re-evaluate energies without the feature matrix.
    """

    labels: np.ndarray
    energy: float
    unary: np.ndarray = None
    energy_history: tuple = ()

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        if not np.isfinite(self.energy):
            raise ClusterError("label-field energy must be finite",
                               code="non_finite")
        if self.unary is not None:
            unary = np.ascontiguousarray(np.asarray(self.unary, dtype=np.float64))
            unary.setflags(write=False)
            object.__setattr__(self, "unary", unary)


def _as_matrix(features):
    if isinstance(features, FeatureMatrix):
        return features.vectors
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def _sq_dists(points, centroids):
    # (N, K) squared Euclidean distances
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kpp_init(points, k, rng):
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining mass sits on chosen centroids: take lowest index
            # not yet used as a centroid value
            idx = int(np.argmax(d2 == d2.max()))
        else:
            u = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), u, side="right"))
            idx = min(idx, n - 1)
        centroids[i] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[i]) ** 2).sum(axis=1))
    return centroids


def fit_kmeans(features, K, seed, max_iters=100):
    """Lloyd's algorithm with k-means++ seeding, fully deterministic per seed.

    Runs until the assignment reaches a fixpoint or max_iters. Empty clusters
    are re-seeded to the point farthest from its assigned centroid (tie:
    lowest index). The within-cluster squared-distance objective is recorded
    per iteration and asserted non-increasing.
    """
    points = _as_matrix(features)
    n = points.shape[0]
    if not np.isfinite(points).all():
        raise ClusterError("features contain non-finite values", code="non_finite")
    if K < 2:
        raise ClusterError("K must be >= 2", code="bad_k")
    if n < K:
        raise ClusterError(f"need at least K={K} points, got {n}", code="too_few")
    rng = np.random.default_rng(seed)
    centroids = _kpp_init(points, K, rng)
    labels = None
    history = []
    for _ in range(max_iters):
        d2 = _sq_dists(points, centroids)
        new_labels = d2.argmin(axis=1)
        objective = float(d2[np.arange(n), new_labels].sum())
        if history:
            assert objective <= history[-1] + 1e-9 * max(1.0, history[-1]), \
                "k-means objective increased"
        history.append(objective)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        used = set()
        for k in range(K):
            members = points[labels == k]
            if len(members):
                centroids[k] = members.mean(axis=0)
            else:
                dist_own = d2[np.arange(n), labels].copy()
                dist_own[list(used)] = -1.0
                far = int(np.argmax(dist_own))
                used.add(far)
                centroids[k] = points[far]
    return ClusterModel(centroids=centroids.copy(), K=K, seed=int(seed),
                        objective_history=tuple(history))


def assign(model, features):
    """Label each patch with its nearest centroid (ties: lowest id), then
    apply the merge map when present."""
    points = _as_matrix(features)
    if points.shape[1] != model.dim:
        raise ClusterError(
            f"feature dim {points.shape[1]} != centroid dim {model.dim}",
            code="dim_mismatch")
    d2 = _sq_dists(points, model.centroids)
    labels = d2.argmin(axis=1)
    if model.merge_map is not None:
        labels = model.merge_map[labels]
    unary = _sq_dists(points, model.final_centroids)
    energy = float(unary[np.arange(points.shape[0]), labels].sum())
    return LabelField(labels=labels, energy=energy, unary=unary,
                      energy_history=(energy,))


def overcluster_merge(model, target_K, train_features):
    """Agglomeratively merge the closest centroid pair until target_K remain.

    Member counts come from assigning train_features at overcluster
    granularity; merged centroids are member-weighted means. Final ids are
    ordered by each group's smallest original overcluster id.
    """
    if target_K < 2:
        raise ClusterError("target_K must be >= 2", code="bad_k")
    k_over = model.centroids.shape[0]
    if target_K >= k_over:
        raise ClusterError("target_K must be smaller than the overcluster count",
                           code="bad_k")
    points = _as_matrix(train_features)
    over_labels = _sq_dists(points, model.centroids).argmin(axis=1)
    counts = np.bincount(over_labels, minlength=k_over).astype(np.float64)
    groups = [{"ids": [i], "count": counts[i],
               "centroid": model.centroids[i].copy()} for i in range(k_over)]
    while len(groups) > target_K:
        best = None
        for i in range(len(groups)):
            for j in range(i + 1, len(groups)):
                d = float(np.linalg.norm(groups[i]["centroid"] - groups[j]["centroid"]))
                key = (d, i, j)
                if best is None or key < best:
                    best = key
        _, i, j = best
        gi, gj = groups[i], groups[j]
        total = gi["count"] + gj["count"]
        if total > 0:
            centroid = (gi["centroid"] * gi["count"] + gj["centroid"] * gj["count"]) / total
        else:
            centroid = (gi["centroid"] + gj["centroid"]) / 2.0
        gi.update(ids=sorted(gi["ids"] + gj["ids"]), count=total, centroid=centroid)
        del groups[j]
    groups.sort(key=lambda g: min(g["ids"]))
    merge_map = np.empty(k_over, dtype=np.int64)
    for final_id, g in enumerate(groups):
        for over_id in g["ids"]:
            merge_map[over_id] = final_id
    final_centroids = np.vstack([g["centroid"] for g in groups])
    return ClusterModel(centroids=model.centroids, K=target_K, seed=model.seed,
                        merge_map=merge_map, final_centroids=final_centroids,
                        objective_history=model.objective_history)


def _grid_adjacency(grid):
    index = {p.grid_pos: i for i, p in enumerate(grid.patches)}
    adj = [[] for _ in grid.patches]
    for i, p in enumerate(grid.patches):
        gi, gj = p.grid_pos
        for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            j = index.get((gi + di, gj + dj))
            if j is not None:
                adj[i].append(j)
    return adj


def _total_energy(labels, unary, adj, lam):
    e = float(unary[np.arange(len(labels)), labels].sum())
    for i, nbrs in enumerate(adj):
        for j in nbrs:
            if j > i and labels[i] != labels[j]:
                e += lam
    return e


def smooth_labels(field, grid, model, lam, max_sweeps=10):
    """Potts smoothing by iterated conditional modes.

    Minimizes sum of squared distances to the labelled final centroid plus
    lam per disagreeing 4-neighbor pair on the patch grid. Row-major sweeps;
    each patch takes the label with minimal local energy (tie: keep current,
    then lowest id). Stops at a fixpoint or after max_sweeps.
    """
    if lam < 0:
        raise ClusterError("lambda must be >= 0", code="bad_lambda")
    if field.unary is None:
        raise ClusterError("label field lacks cached unary distances",
                           code="missing_unary")
    if len(field.labels) != len(grid.patches):
        raise ClusterError("label field not aligned to patch grid",
                           code="misaligned")
    unary = field.unary
    n, k = unary.shape
    labels = field.labels.copy()
    adj = _grid_adjacency(grid)
    history = [_total_energy(labels, unary, adj, lam)]
    for _ in range(max_sweeps):
        changed = False
        for i in range(n):
            disagree = np.zeros(k, dtype=np.float64)
            for j in adj[i]:
                disagree += lam
                disagree[labels[j]] -= lam
            local = unary[i] + disagree
            best = int(local.argmin())
            if local[best] < local[labels[i]]:
                labels[i] = best
                changed = True
        history.append(_total_energy(labels, unary, adj, lam))
        assert history[-1] <= history[-2] + 1e-9 * max(1.0, abs(history[-2])), \
            "ICM energy increased"
        if not changed:
            break
    return LabelField(labels=labels, energy=history[-1], unary=unary,
                      energy_history=tuple(history))


def save_model(model, path, extra=None):
    obj = {"version": 1, "K": model.K, "dim": model.dim, "seed": model.seed,
           "centroids": model.centroids.tolist()}
    if model.merge_map is not None:
        obj["merge_map"] = model.merge_map.tolist()
        obj["final_centroids"] = model.final_centroids.tolist()
    if extra:
        obj.update(extra)
    Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n")


def load_model(path):
    obj = json.loads(Path(path).read_text())
    return ClusterModel(
        centroids=np.array(obj["centroids"], dtype=np.float64),
        K=int(obj["K"]),
        seed=int(obj["seed"]),
        merge_map=np.array(obj["merge_map"], dtype=np.int64) if "merge_map" in obj else None,
        final_centroids=(np.array(obj["final_centroids"], dtype=np.float64)
                         if "final_centroids" in obj else None))
