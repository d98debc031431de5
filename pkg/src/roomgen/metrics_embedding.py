"""Retrieval, clustering and rank-correlation scores for room embeddings."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from sklearn.cluster import KMeans
from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score, silhouette_score

from . import vocab
from .losses import geom_descriptors, standardize
from .room import Room


class EmbeddingMetricError(ValueError):
    pass


# -- index and relevance ----------------------------------------------------------

@dataclass(frozen=True)
class RoomMeta:
    room_type: int
    props: tuple[int, ...]
    casework: tuple[int, ...]
    door_families: tuple[int, ...]

    @classmethod
    def of(cls, r: Room) -> "RoomMeta":
        props = tuple(sorted(e.category for e in r.entities if e.kind == vocab.PROP))
        casework = tuple(sorted(e.category for e in r.entities if e.kind == vocab.CASEWORK))
        doors = tuple(sorted(d.family for d in r.envelope.doors))
        return cls(r.envelope.room_type, props, casework, doors)


def multiset_jaccard(a: Sequence, b: Sequence) -> float:
    ca, cb = Counter(a), Counter(b)
    union = sum((ca | cb).values())
    if union == 0:
        return 1.0
    return sum((ca & cb).values()) / union


def entity_similarity(a, b) -> float:
    """Mean multiset Jaccard over props, casework and door families."""
    ma = a if isinstance(a, RoomMeta) else RoomMeta.of(a)
    mb = b if isinstance(b, RoomMeta) else RoomMeta.of(b)
    return (multiset_jaccard(ma.props, mb.props) + multiset_jaccard(ma.casework, mb.casework)
            + multiset_jaccard(ma.door_families, mb.door_families)) / 3.0


@dataclass
class RetrievalIndex:
    embeddings: np.ndarray  # (N, d)
    meta: list[RoomMeta]
    descriptors: np.ndarray  # (N, 5)

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        norms = np.linalg.norm(self.embeddings, axis=1)
        if np.any(norms == 0):
            raise EmbeddingMetricError("zero embedding rows cannot be L2-normalized")
        self._unit = self.embeddings / norms[:, None]

    @classmethod
    def build(cls, embeddings: np.ndarray, rooms: Sequence[Room]) -> "RetrievalIndex":
        return cls(embeddings, [RoomMeta.of(r) for r in rooms], geom_descriptors([r.envelope for r in rooms]))

    @property
    def n(self) -> int:
        return len(self.embeddings)

    @property
    def labels(self) -> np.ndarray:
        return np.array([m.room_type for m in self.meta])

    def cosine(self) -> np.ndarray:
        return self._unit @ self._unit.T

    def ranking(self, q: int, candidates: Optional[np.ndarray] = None) -> np.ndarray:
        """Candidates sorted by descending cosine; ties by index; the query itself is excluded."""
        if candidates is None:
            candidates = np.arange(self.n)
        candidates = candidates[candidates != q]
        sims = self._unit[candidates] @ self._unit[q]
        return candidates[np.lexsort((candidates, -sims))]

    def neighbors(self, q: int, k: int) -> list[tuple[int, float]]:
        order = self.ranking(q)[:k]
        return [(int(i), float(self._unit[i] @ self._unit[q])) for i in order]


@dataclass(frozen=True)
class RelevanceOracle:
    """rel = w_entity * entity similarity + (1 - w_entity) * (1 - normalized descriptor distance)."""

    w_entity: float = 0.5
    threshold: float = 0.5

    def matrix(self, index: RetrievalIndex) -> np.ndarray:
        n = index.n
        ent = np.ones((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                ent[i, j] = ent[j, i] = entity_similarity(index.meta[i], index.meta[j])
        geo = descriptor_distances(index.descriptors)
        top = geo.max()
        geo_sim = 1.0 - (geo / top if top > 0 else geo)
        return self.w_entity * ent + (1.0 - self.w_entity) * geo_sim


def descriptor_distances(descriptors: np.ndarray) -> np.ndarray:
    z = standardize(descriptors)
    diff = z[:, None, :] - z[None, :, :]
    return np.sqrt((diff ** 2).sum(-1))


# -- ranking metrics -----------------------------------------------------------------

def dcg(gains: Sequence[float]) -> float:
    g = np.asarray(gains, dtype=float)
    return float((g / np.log2(np.arange(2, len(g) + 2))).sum())


def ndcg_from_ranking(gains_by_rank: Sequence[float], all_gains: Sequence[float], k: int) -> float:
    ideal = dcg(sorted(all_gains, reverse=True)[:k])
    return dcg(list(gains_by_rank)[:k]) / ideal if ideal > 0 else 0.0


def _check(index: RetrievalIndex, k: int) -> None:
    if index.n < 2:
        raise EmbeddingMetricError("retrieval metrics need at least 2 rooms")
    if not 1 <= k <= index.n - 1:
        raise EmbeddingMetricError(f"k must be in [1, {index.n - 1}]")


@dataclass(frozen=True)
class RetrievalScores:
    ndcg: float
    success: float
    mrr: float
    precision: float


def retrieval_scores(index: RetrievalIndex, oracle: RelevanceOracle, k: int,
                     rel: Optional[np.ndarray] = None) -> RetrievalScores:
    """nDCG@k, Success@k, MRR and Precision@k averaged over every query."""
    _check(index, k)
    rel = oracle.matrix(index) if rel is None else rel
    nd, sc, rr, pr = [], [], [], []
    for q in range(index.n):
        order = index.ranking(q)
        gains = rel[q, order]
        nd.append(ndcg_from_ranking(gains, gains, k))
        hits = gains >= oracle.threshold
        sc.append(float(hits[:k].any()))
        pr.append(float(hits[:k].mean()))
        first = np.flatnonzero(hits)
        rr.append(1.0 / (first[0] + 1) if len(first) else 0.0)
    return RetrievalScores(float(np.mean(nd)), float(np.mean(sc)), float(np.mean(rr)), float(np.mean(pr)))


def ndcg_at_k(index, oracle, k, rel=None) -> float:
    return retrieval_scores(index, oracle, k, rel).ndcg


def success_at_k(index, oracle, k, rel=None) -> float:
    return retrieval_scores(index, oracle, k, rel).success


def mrr(index, oracle, k=1, rel=None) -> float:
    return retrieval_scores(index, oracle, k, rel).mrr


def precision_at_k(index, oracle, k, rel=None) -> float:
    return retrieval_scores(index, oracle, k, rel).precision


@dataclass(frozen=True)
class ConstrainedResult:
    ndcg: float
    coverage: float  # fraction of queries with a large enough same-type pool
    n_queries: int


def type_constrained_ndcg(index: RetrievalIndex, oracle: RelevanceOracle, k: int,
                          rel: Optional[np.ndarray] = None) -> ConstrainedResult:
    if index.n < 2:
        raise EmbeddingMetricError("retrieval metrics need at least 2 rooms")
    rel = oracle.matrix(index) if rel is None else rel
    labels = index.labels
    scores = []
    for q in range(index.n):
        pool = np.flatnonzero(labels == labels[q])
        if len(pool) < k + 1:
            continue
        gains = rel[q, index.ranking(q, pool)]
        scores.append(ndcg_from_ranking(gains, gains, k))
    n = len(scores)
    return ConstrainedResult(float(np.mean(scores)) if n else math.nan, n / index.n, n)


def sample_eval_triplets(labels: Sequence[int], rng: np.random.Generator, per_anchor: int = 1):
    labels = np.asarray(labels)
    out = []
    idx = np.arange(len(labels))
    for a in idx:
        pos = idx[(labels == labels[a]) & (idx != a)]
        neg = idx[labels != labels[a]]
        if len(pos) == 0 or len(neg) == 0:
            continue
        for _ in range(per_anchor):
            out.append((int(a), int(rng.choice(pos)), int(rng.choice(neg))))
    return out


def triplet_accuracy(embeddings: np.ndarray, triplets: Sequence[tuple[int, int, int]]) -> float:
    """Fraction of (anchor, positive, negative) with cos(a, p) strictly above cos(a, n)."""
    if not triplets:
        return math.nan
    e = np.asarray(embeddings, dtype=float)
    norms = np.linalg.norm(e, axis=1, keepdims=True)
    u = e / np.where(norms > 0, norms, 1.0)
    t = np.asarray(triplets)
    cp = (u[t[:, 0]] * u[t[:, 1]]).sum(1)
    cn = (u[t[:, 0]] * u[t[:, 2]]).sum(1)
    return float((cp > cn).mean())


# -- clustering -------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusterScores:
    nmi: float
    ari: float
    silhouette: float


def clustering_metrics(embeddings: np.ndarray, labels: Sequence[int], k: Optional[int] = None,
                       seed: int = 0) -> ClusterScores:
    x = np.asarray(embeddings, dtype=float)
    labels = np.asarray(labels)
    k = len(np.unique(labels)) if k is None else k
    if not 2 <= k <= len(x):
        raise EmbeddingMetricError("clustering needs 2 <= k <= N")
    distinct = len(np.unique(x, axis=0))
    if distinct < k:
        # k-means cannot place k distinct centers; every point shares one cluster
        pred = np.zeros(len(x), dtype=int)
    else:
        pred = KMeans(n_clusters=k, n_init=20, random_state=seed).fit_predict(x)
    nmi = normalized_mutual_info_score(labels, pred, average_method="arithmetic")
    ari = adjusted_rand_score(labels, pred)
    sil = silhouette_score(x, pred) if 2 <= len(np.unique(pred)) < len(x) and distinct > 1 else 0.0
    return ClusterScores(float(nmi), float(ari), float(sil))


# -- rank correlation -----------------------------------------------------------------------

@dataclass(frozen=True)
class RankCorrelation:
    spearman: float
    kendall: float
    n_constant: int  # queries where one side had constant distances (scored 0)


def geometric_rank_correlation(embeddings: np.ndarray, descriptors: np.ndarray) -> RankCorrelation:
    """Per query, correlate embedding distances with descriptor distances over the other rooms."""
    e = np.asarray(embeddings, dtype=float)
    n = len(e)
    if n < 3:
        raise EmbeddingMetricError("rank correlation needs at least 3 rooms")
    de = np.sqrt(((e[:, None, :] - e[None, :, :]) ** 2).sum(-1))
    dg = descriptor_distances(np.asarray(descriptors, dtype=float))
    rhos, taus, flat = [], [], 0
    for q in range(n):
        others = np.arange(n) != q
        a, b = de[q, others], dg[q, others]
        if np.ptp(a) == 0 or np.ptp(b) == 0:
            rhos.append(0.0)
            taus.append(0.0)
            flat += 1
            continue
        rhos.append(float(stats.spearmanr(a, b).statistic))
        taus.append(float(stats.kendalltau(a, b).statistic))
    return RankCorrelation(float(np.mean(rhos)), float(np.mean(taus)), flat)


# -- report ------------------------------------------------------------------------------

def embedding_report(embeddings: np.ndarray, rooms: Sequence[Room], k: int = 10, seed: int = 0,
                     oracle: RelevanceOracle = RelevanceOracle()) -> dict:
    index = RetrievalIndex.build(embeddings, rooms)
    k = min(k, index.n - 1)
    rel = oracle.matrix(index)
    rs = retrieval_scores(index, oracle, k, rel)
    tc = type_constrained_ndcg(index, oracle, k, rel)
    rng = np.random.default_rng(seed)
    trip = triplet_accuracy(index.embeddings, sample_eval_triplets(index.labels, rng))
    n_types = len(np.unique(index.labels))
    cl = clustering_metrics(index.embeddings, index.labels, seed=seed) if n_types >= 2 else None
    corr = geometric_rank_correlation(index.embeddings, index.descriptors)
    # mean entity similarity of each query's top-k neighbours
    ent = [np.mean([entity_similarity(index.meta[q], index.meta[j]) for j in index.ranking(q)[:k]])
           for q in range(index.n)]
    return {
        "n_rooms": index.n,
        "k": k,
        "ndcg": rs.ndcg,
        "ndcg_type_constrained": None if math.isnan(tc.ndcg) else tc.ndcg,
        "type_constrained_coverage": tc.coverage,
        "success": rs.success,
        "mrr": rs.mrr,
        "precision": rs.precision,
        "triplet": None if math.isnan(trip) else trip,
        "entity_sim": float(np.mean(ent)),
        "nmi": cl.nmi if cl else None,
        "ari": cl.ari if cl else None,
        "silhouette": cl.silhouette if cl else None,
        "spearman": corr.spearman,
        "kendall": corr.kendall,
    }
