"""Spherical k-means over product vectors and cluster-transition estimation.

Clustering groups products by cosine similarity; the transition matrix is the
maximum-likelihood multinomial estimate of which cluster a purchase from
cluster i is followed by, counted over consecutive purchases in each user's
flat sequence (never across users).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .corpus import Corpus, flat_products
from .embedding import EmbeddingModel


@dataclass
class ClusterModel:
    assignment: np.ndarray           # product id -> cluster id
    centroids: np.ndarray | None     # C x D unit rows; None when loaded from file
    objective_history: list[float]

    @property
    def num_clusters(self) -> int:
        if self.centroids is not None:
            return self.centroids.shape[0]
        return int(self.assignment.max()) + 1


@dataclass
class TransitionMatrix:
    theta: np.ndarray           # C x C row-stochastic (zero rows where unsupported)
    support_counts: np.ndarray  # transitions observed out of each cluster

    @property
    def num_clusters(self) -> int:
        return self.theta.shape[0]

    def zero_support(self) -> np.ndarray:
        return self.support_counts == 0


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    out = np.asarray(matrix, dtype=np.float64).copy()
    norms = np.linalg.norm(out, axis=1)
    nonzero = norms > 0
    out[nonzero] /= norms[nonzero, None]
    return out


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding on cosine distance (1 - cos)."""
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    dist = 1.0 - points @ points[chosen[0]]
    dist = np.maximum(dist, 0.0)
    for _ in range(1, k):
        weights = dist.copy()
        weights[chosen] = 0.0
        total = weights.sum()
        if total <= 1e-12:
            # All remaining mass is on already-chosen points (duplicates);
            # take the lowest-id unchosen point.
            remaining = sorted(set(range(n)) - set(chosen))
            nxt = remaining[0]
        else:
            nxt = int(rng.choice(n, p=weights / total))
        chosen.append(nxt)
        dist = np.minimum(dist, np.maximum(1.0 - points @ points[nxt], 0.0))
    return points[chosen].copy()


def kmeans_cosine(
    model: EmbeddingModel | np.ndarray,
    num_clusters: int,
    max_iters: int = 50,
    seed: int = 0,
) -> ClusterModel:
    """Spherical k-means: assign to the highest-cosine centroid (ties to the
    lowest cluster id), recompute centroids as the normalized member mean,
    stop on zero reassignments or max_iters. Empty clusters are re-seeded
    with the point of lowest cosine to their stale centroid. The objective
    (sum of cosines to the owning centroid) never decreases."""
    vectors = model.input_vectors if isinstance(model, EmbeddingModel) else model
    P = vectors.shape[0]
    if not 1 <= num_clusters <= P:
        raise ValueError("need 1 <= num_clusters <= number of products")
    points = _unit_rows(vectors)
    if np.allclose(points, points[0]):
        raise ValueError("all vectors identical; clustering is undefined")

    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    centroids = _kmeanspp(points, num_clusters, rng)
    assignment = np.full(P, -1, dtype=np.int64)
    history: list[float] = []

    for _ in range(max_iters):
        sims = points @ centroids.T
        new_assignment = np.argmax(sims, axis=1)  # argmax takes the lowest id on ties
        history.append(float(sims[np.arange(P), new_assignment].sum()))
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment

        taken: set[int] = set()
        for c in range(num_clusters):
            if not np.any(assignment == c):
                order = np.argsort(points @ centroids[c], kind="stable")
                victim = next(int(i) for i in order if int(i) not in taken)
                taken.add(victim)
                assignment[victim] = c
                centroids[c] = points[victim]

        for c in range(num_clusters):
            members = assignment == c
            if np.any(members):
                mean = points[members].sum(axis=0)
                norm = np.linalg.norm(mean)
                if norm > 0:
                    centroids[c] = mean / norm

    return ClusterModel(assignment, centroids, history)


def estimate_transitions(corpus: Corpus, clusters: ClusterModel, seed: int) -> TransitionMatrix:
    """theta[i, j] = (# consecutive purchase pairs cluster i -> j) / (# cluster-i
    purchases followed by anything); rows without support stay all-zero.
    `seed` must match the training seed so flat sequences line up."""
    C = clusters.num_clusters
    counts = np.zeros((C, C), dtype=np.int64)
    for log in corpus.logs:
        seq = flat_products(log, seed)
        if len(seq) < 2:
            continue
        labels = clusters.assignment[seq]
        np.add.at(counts, (labels[:-1], labels[1:]), 1)
    support = counts.sum(axis=1)
    theta = np.zeros((C, C), dtype=np.float64)
    rows = support > 0
    theta[rows] = counts[rows] / support[rows, None]
    return TransitionMatrix(theta, support)


def write_clusters(clusters: ClusterModel, vocab_tokens: list[str], stream) -> None:
    for pid, tok in enumerate(vocab_tokens):
        stream.write(f"{tok}\t{int(clusters.assignment[pid])}\n")


def read_clusters(lines: Iterable[str], vocab_index: dict[str, int]) -> np.ndarray:
    assignment = np.full(len(vocab_index), -1, dtype=np.int64)
    for line in lines:
        if not line.strip():
            continue
        tok, cid = line.rstrip("\n").split("\t")
        assignment[vocab_index[tok]] = int(cid)
    if np.any(assignment < 0):
        raise ValueError("cluster file does not cover the vocabulary")
    return assignment


def write_transitions(transitions: TransitionMatrix, stream) -> None:
    C = transitions.num_clusters
    stream.write(f"{C}\n")
    for row, support in zip(transitions.theta, transitions.support_counts):
        stream.write(" ".join(f"{v:.9g}" for v in row) + f" {int(support)}\n")


def read_transitions(lines: Iterable[str]) -> TransitionMatrix:
    it = iter(lines)
    C = int(next(it).strip())
    theta = np.zeros((C, C), dtype=np.float64)
    support = np.zeros(C, dtype=np.int64)
    for i in range(C):
        parts = next(it).split()
        if len(parts) != C + 1:
            raise ValueError(f"transition row {i} must have {C} values plus a support count")
        theta[i] = [float(x) for x in parts[:C]]
        support[i] = int(parts[C])
    return TransitionMatrix(theta, support)
