"""Energy-based cluster sampling of auxiliary outliers.

Each training iteration clusters a feature-normalized auxiliary pool into k
groups and takes two samples per group: the lowest-energy member feeds the
energy-margin loss, the highest-energy member feeds the gradient penalty. The
per-cluster picks keep the 2k-sample auxiliary batch spread over the pool's
regions instead of letting one high- or low-energy region dominate.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import GraphError
from .model import MlpModel, feature_array, logits_array
from .scores import energy_score


def normalize_features(z: np.ndarray) -> np.ndarray:
    """Scale each row to unit L2 norm; all-zero rows pass through unchanged."""
    z = np.asarray(z, dtype=np.float64)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return z / safe


@dataclass
class ClusterAssignment:
    centroids: np.ndarray  # (k, d)
    labels: np.ndarray  # (n,) int
    objective: float  # sum of squared distances to assigned centroids
    history: list = field(default_factory=list)  # objective after each Lloyd assignment


def _sq_dists(z, c):
    d2 = np.sum(z * z, axis=1)[:, None] + np.sum(c * c, axis=1)[None, :] - 2.0 * (z @ c.T)
    return np.maximum(d2, 0.0)


def _seed_centroids(z, k, rng):
    """Distance-weighted seeding: each new centroid is drawn with probability
    proportional to squared distance from the nearest chosen one."""
    n = z.shape[0]
    idx = [int(rng.integers(n))]
    d2 = np.sum((z - z[idx[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            idx.append(int(rng.integers(n)))
        else:
            idx.append(int(rng.choice(n, p=d2 / total)))
        d2 = np.minimum(d2, np.sum((z - z[idx[-1]]) ** 2, axis=1))
    return z[idx].copy()


def _lloyd(z, k, rng, max_iters):
    cent = _seed_centroids(z, k, rng)
    labels = None
    history = []
    for _ in range(max_iters):
        d2 = _sq_dists(z, cent)
        new_labels = np.argmin(d2, axis=1)  # ties go to the lowest cluster id
        # empty-cluster repair: reseed at the point farthest from its centroid,
        # never raiding a singleton cluster (that would just move the hole)
        counts = np.bincount(new_labels, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            own = d2[np.arange(z.shape[0]), new_labels]
            own[counts[new_labels] <= 1] = -np.inf
            far = int(np.argmax(own))
            cent[empty] = z[far]
            counts[new_labels[far]] -= 1
            counts[empty] = 1
            new_labels[far] = empty
            d2 = _sq_dists(z, cent)
        history.append(float(np.sum(d2[np.arange(z.shape[0]), new_labels])))
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
        for c in range(k):
            members = labels == c
            if members.any():
                cent[c] = z[members].mean(axis=0)
    d2 = _sq_dists(z, cent)
    obj = float(np.sum(d2[np.arange(z.shape[0]), labels]))
    return ClusterAssignment(cent, labels, obj, history)


def kmeans(z: np.ndarray, k: int, seed: int = 0, restarts: int = 1, max_iters: int = 100) -> ClusterAssignment:
    """Lloyd iterations with distance-weighted seeding, best of `restarts`.

    Deterministic in (z, k, seed, restarts): restarts draw from one seeded
    stream and the lowest final objective wins, first winner on ties.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise GraphError(f"kmeans needs a (n, d) matrix, got shape {z.shape}")
    if not 1 <= k <= z.shape[0]:
        raise GraphError(f"k must be in [1, {z.shape[0]}], got {k}")
    if restarts < 1:
        raise GraphError("restarts must be at least 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    best = None
    for _ in range(restarts):
        cand = _lloyd(z, k, rng, max_iters)
        if best is None or cand.objective < best.objective:
            best = cand
    return best


def select_per_cluster(labels: np.ndarray, energies: np.ndarray, k: int):
    """Per nonempty cluster: index of its lowest- and highest-energy member.

    Ties resolve to the lowest pool index. Returns (low, high) index arrays
    ordered by cluster id.
    """
    labels = np.asarray(labels)
    energies = np.asarray(energies, dtype=np.float64)
    if labels.shape != energies.shape:
        raise GraphError("labels and energies must align")
    low, high = [], []
    for c in range(k):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            continue
        e = energies[members]
        low.append(int(members[np.argmin(e)]))
        high.append(int(members[np.argmax(e)]))
    return np.array(low, dtype=int), np.array(high, dtype=int)


@dataclass
class SampleSelection:
    low: np.ndarray  # pool indices for the energy-margin side
    high: np.ndarray  # pool indices for the gradient-penalty side
    labels: np.ndarray
    energies: np.ndarray


def sample_batch(model: MlpModel, pool: np.ndarray, k: int, seed: int = 0, restarts: int = 1) -> SampleSelection:
    """Cluster the pool in normalized feature space and pick 2k samples.

    Pure with respect to the model: reads features and energies, never writes
    parameters. low/high each hold k indices (clusters are nonempty after
    repair); a singleton cluster contributes the same index to both sides.
    """
    pool = np.asarray(pool, dtype=np.float64)
    z = normalize_features(feature_array(model, pool))
    energies = energy_score(logits_array(model, pool))
    assign = kmeans(z, k, seed=seed, restarts=restarts)
    low, high = select_per_cluster(assign.labels, energies, k)
    return SampleSelection(low, high, assign.labels, energies)
