from __future__ import annotations

import logging
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np
from sklearn.decomposition import PCA
from sklearn.metrics import adjusted_rand_score

from ..errors import DataError
from ..models import Archetype, ArchetypeSet, ClusterModel
from .vqae_service import VqAutoencoder, decode

logger = logging.getLogger(__name__)

RESTART_STRIDE = 7919
PROJECTION_METHOD = "pca"  # linear stand-in for a UMAP embedding, plots only


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DataError(f"expected an N x M point matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise DataError("points contain non-finite values")
    return arr


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(N, k) squared Euclidean distances, one centroid at a time."""
    out = np.empty((points.shape[0], centroids.shape[0]))
    for j, c in enumerate(centroids):
        diff = points - c
        out[:, j] = np.einsum("ij,ij->i", diff, diff)
    return out


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_distances(points, points[chosen]).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            raise DataError(f"cannot seed {k} distinct centroids")
        nxt = int(rng.choice(n, p=closest / total))
        chosen.append(nxt)
        closest = np.minimum(closest, _sq_distances(points, points[[nxt]]).ravel())
    return points[chosen].copy()


def _assign(points: np.ndarray, centroids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per point; empty clusters get the farthest point."""
    k = centroids.shape[0]
    for _ in range(k + 1):
        dist = _sq_distances(points, centroids)
        labels = np.argmin(dist, axis=1)
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            return labels, dist[np.arange(points.shape[0]), labels]
        own = dist[np.arange(points.shape[0]), labels]
        # only points whose cluster keeps another member may move
        movable = counts[labels] > 1
        own = np.where(movable, own, -1.0)
        far = int(np.argmax(own))
        logger.debug("reseeding empty cluster %d at point %d", empty[0], far)
        centroids[empty[0]] = points[far]
    raise DataError("could not repair empty clusters")


def kmeans(points, k: int, seed: int, max_iter: int = 300, tol: float = 1e-9) -> ClusterModel:
    """Lloyd's algorithm from a k-means++ start."""
    pts = _as_points(points)
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise DataError(f"need 1 <= k <= N, got k={k}, N={n}")
    distinct = np.unique(pts, axis=0).shape[0]
    if distinct < k:
        raise DataError(f"only {distinct} distinct points for k={k}")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(pts, k, rng)
    history: List[float] = []
    labels = None
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new_labels, own = _assign(pts, centroids)
        wcss = float(own.sum())
        unchanged = labels is not None and np.array_equal(new_labels, labels)
        improved = history[-1] - wcss if history else np.inf
        labels = new_labels
        history.append(wcss)
        if unchanged or improved < tol or n_iter == max_iter:
            break
        for j in range(k):
            members = pts[labels == j]
            centroids[j] = members.mean(axis=0)

    logger.debug("kmeans k=%d seed=%d: wcss=%.6g after %d iterations", k, seed, history[-1], n_iter)
    return ClusterModel(
        k=k,
        centroids=centroids,
        assignments=labels.astype(np.int64),
        wcss=history[-1],
        seed=seed,
        n_iter=n_iter,
        wcss_history=tuple(history),
    )


def fit_best(points, k: int, seed: int, restarts: int = 5, max_iter: int = 300,
             tol: float = 1e-9) -> ClusterModel:
    """Best WCSS over seeded restarts; earliest restart wins ties."""
    best: Optional[ClusterModel] = None
    for r in range(restarts):
        model = kmeans(points, k, seed + RESTART_STRIDE * r, max_iter, tol)
        if best is None or model.wcss < best.wcss:
            best = model
    return best


def elbow_k(wcss_curve: Sequence[float], k_min: int = 1) -> int:
    """k with the largest second difference wcss(k-1) - 2 wcss(k) + wcss(k+1)."""
    curve = np.asarray(wcss_curve, dtype=np.float64)
    if curve.size < 3:
        raise DataError(f"elbow rule needs at least 3 WCSS values, got {curve.size}")
    second = curve[:-2] - 2.0 * curve[1:-1] + curve[2:]
    return k_min + 1 + int(np.argmax(second))


def choose_k_wcss(points, k_min: int, k_max: int, seed: int, restarts: int = 5,
                  max_iter: int = 300, tol: float = 1e-9) -> Tuple[int, List[float]]:
    if k_min < 1 or k_max < k_min + 2:
        raise DataError(f"k range [{k_min}, {k_max}] too small; need k_min >= 1 and k_max >= k_min + 2")
    pts = _as_points(points)
    if pts.shape[0] < k_max:
        raise DataError(f"need at least k_max={k_max} points, got {pts.shape[0]}")
    curve = [fit_best(pts, k, seed, restarts, max_iter, tol).wcss for k in range(k_min, k_max + 1)]
    chosen = elbow_k(curve, k_min)
    logger.info("elbow over k=%d..%d chose k=%d", k_min, k_max, chosen)
    return chosen, curve


def project_2d(points) -> np.ndarray:
    pts = _as_points(points)
    if pts.shape[0] < 2:
        raise DataError("projection needs at least 2 points")
    if np.all(pts == pts[0]):
        raise DataError("points are all identical (rank 0); nothing to project")
    n_comp = min(2, pts.shape[1], pts.shape[0])
    pca = PCA(n_components=n_comp, svd_solver="full").fit(pts)
    components = pca.components_.copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    xy = (pts - pca.mean_) @ components.T
    if n_comp < 2:
        xy = np.hstack([xy, np.zeros((xy.shape[0], 2 - n_comp))])
    return xy


def sample_archetype(model: ClusterModel, points, ids: Sequence[str]) -> List[str]:
    """Member nearest each centroid in the full latent space; lowest id wins ties."""
    pts = _as_points(points)
    if len(ids) != pts.shape[0] or model.assignments.shape[0] != pts.shape[0]:
        raise DataError("points, ids and assignments disagree in length")
    chosen = []
    for c in range(model.k):
        members = model.members(c)
        d = _sq_distances(pts[members], model.centroids[[c]]).ravel()
        nearest = members[d == d.min()]
        chosen.append(min(ids[i] for i in nearest))
    return chosen


def mean_embedding(points: np.ndarray) -> np.ndarray:
    # anchored on the first member: identical members give that member back exactly
    anchor = points[0]
    return anchor + (points - anchor).mean(axis=0)


def average_archetype(model: ClusterModel, points, vq_model: VqAutoencoder) -> List[np.ndarray]:
    """Decode of each cluster's mean embedding, not re-quantized."""
    pts = _as_points(points)
    cfg = vq_model.config
    expected = cfg.latent_grid * cfg.latent_grid * cfg.embed_dim
    if pts.shape[1] != expected:
        raise DataError(f"embeddings have length {pts.shape[1]}, model latent map needs {expected}")
    grids = []
    for c in range(model.k):
        mean = mean_embedding(pts[model.members(c)])
        grids.append(decode(mean.reshape(cfg.latent_grid, cfg.latent_grid, cfg.embed_dim), vq_model))
    return grids


def adjusted_rand_index(reference: Sequence, predicted: Sequence) -> float:
    return float(adjusted_rand_score(list(reference), list(predicted)))


def blur_entropy(grid: np.ndarray) -> float:
    """Mean per-pixel binary entropy in bits; crisp 0/1 maps score 0."""
    p = np.clip(np.asarray(grid, dtype=np.float64), 0.0, 1.0)
    q = 1.0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(p > 0, p * np.log2(p), 0.0) + np.where(q > 0, q * np.log2(q), 0.0))
    return float(h.mean())


def build_archetype_set(model: ClusterModel, points, ids: Sequence[str],
                        floor_areas: Mapping[str, float], vq_model: VqAutoencoder) -> ArchetypeSet:
    sampled = sample_archetype(model, points, ids)
    averaged = average_archetype(model, points, vq_model)
    archetypes = []
    for c in range(model.k):
        members = tuple(ids[i] for i in model.members(c))
        archetypes.append(Archetype(
            cluster=c,
            sampled_member_id=sampled[c],
            averaged_heightmap=averaged[c],
            member_ids=members,
            member_total_floor_area_m2=float(sum(floor_areas[m] for m in members)),
        ))
    return archetypes
