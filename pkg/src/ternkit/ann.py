"""Nearest-neighbor indexes and retrieval metrics.

Four index families over a fixed vector store: exact brute-force L2, an
inverted-file index over seeded k-means cells, random-hyperplane LSH ranked
by Hamming distance, and a hierarchical navigable-small-world graph. All
distances are squared L2 computed in float64 through one shared helper, so
exhaustively-probed IVF reproduces brute force bit for bit, tie order
included. Ties always break toward the smaller id.

Embeddings are L2-normalized before indexing in the evaluation harness, so
L2 ranking coincides with cosine ranking.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .rng import Rng
from .tensor import FLOAT

INDEX_KINDS = ("flat", "ivf", "lsh", "hnsw")


@dataclass(eq=False)
class VectorStore:
    """Vectors with implicit stable ids 0..N-1."""

    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=FLOAT)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1 or self.vectors.shape[1] < 1:
            raise ValueError(f"vectors must be a non-empty 2-D array, got {self.vectors.shape}")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _sq_dists(vectors: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Squared L2 distances, float64. Row-wise, so subsets reproduce exactly."""
    diff = vectors.astype(np.float64) - query.astype(np.float64)
    return (diff * diff).sum(axis=1)


def _check_query(query: np.ndarray, dim: int) -> np.ndarray:
    query = np.asarray(query, dtype=FLOAT).reshape(-1)
    if query.shape[0] != dim:
        raise ValueError(f"query dim {query.shape[0]} != store dim {dim}")
    return query


def _rank(ids: np.ndarray, dists: np.ndarray, k: int) -> np.ndarray:
    """ids sorted by (distance, id) ascending, truncated to k."""
    order = np.lexsort((ids, dists))
    return ids[order[:k]]


# -- flat ---------------------------------------------------------------------

def flat_search(store: VectorStore, query: np.ndarray, k: int) -> np.ndarray:
    """Exact top-k by ascending L2 distance, ties broken by smaller id."""
    query = _check_query(query, store.dim)
    if not 1 <= k <= len(store):
        raise ValueError(f"k must be in [1, {len(store)}], got {k}")
    dists = _sq_dists(store.vectors, query)
    return _rank(np.arange(len(store)), dists, k)


# -- IVF-Flat -----------------------------------------------------------------

@dataclass
class IvfParams:
    nlist: int
    nprobe: int
    kmeans_iters: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.nlist < 1:
            raise ValueError(f"nlist must be >= 1, got {self.nlist}")
        if not 1 <= self.nprobe <= self.nlist:
            raise ValueError(f"nprobe must be in [1, nlist={self.nlist}], got {self.nprobe}")
        if self.kmeans_iters < 1:
            raise ValueError(f"kmeans_iters must be >= 1, got {self.kmeans_iters}")


class IvfIndex:
    def __init__(self, store: VectorStore, params: IvfParams,
                 centroids: np.ndarray, lists: list[np.ndarray]):
        self.store = store
        self.params = params
        self.centroids = centroids
        self.lists = lists

    def search(self, query: np.ndarray, k: int) -> np.ndarray:
        return ivf_search(self, query, k)


def _kmeans(vectors: np.ndarray, nlist: int, iters: int, seed: int) -> np.ndarray:
    """Seeded Lloyd iterations; empty cells re-seed to the farthest point."""
    rng = Rng(seed)
    centroids = vectors[np.sort(rng.permutation(len(vectors))[:nlist])].astype(np.float64)
    for _ in range(iters):
        assign = _assign(vectors, centroids)
        counts = np.bincount(assign, minlength=nlist)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, vectors.astype(np.float64))
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        for cell in np.flatnonzero(~nonempty):
            # steal the point farthest from its own centroid
            far = int(np.argmax(_residuals(vectors, centroids, assign)))
            centroids[cell] = vectors[far].astype(np.float64)
            assign[far] = cell
    return centroids


def _residuals(vectors: np.ndarray, centroids: np.ndarray, assign: np.ndarray) -> np.ndarray:
    diff = vectors.astype(np.float64) - centroids[assign]
    return (diff * diff).sum(axis=1)


def _assign(vectors: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest-centroid assignment, ties to the lowest cell id."""
    n = len(vectors)
    assign = np.empty(n, dtype=np.int64)
    step = max(1, 2_000_000 // max(1, len(centroids) * vectors.shape[1]))
    for start in range(0, n, step):
        chunk = vectors[start:start + step].astype(np.float64)
        d = ((chunk[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign[start:start + step] = np.argmin(d, axis=1)
    return assign


def ivf_build(store: VectorStore, params: IvfParams) -> IvfIndex:
    if params.nlist > len(store):
        raise ValueError(f"nlist {params.nlist} exceeds store size {len(store)}")
    centroids = _kmeans(store.vectors, params.nlist, params.kmeans_iters, params.seed)
    assign = _assign(store.vectors, centroids)
    lists = [np.flatnonzero(assign == c) for c in range(params.nlist)]
    return IvfIndex(store, params, centroids.astype(FLOAT), lists)


def ivf_search(index: IvfIndex, query: np.ndarray, k: int) -> np.ndarray:
    """Scan the nprobe nearest cells exactly; top-k of their union.

    May return fewer than k ids when the probed cells hold fewer points;
    probing every cell always yields exactly the brute-force ranking.
    """
    query = _check_query(query, index.store.dim)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    cd = _sq_dists(index.centroids, query)
    probe = _rank(np.arange(len(index.centroids)), cd, index.params.nprobe)
    cand = np.concatenate([index.lists[c] for c in probe]) if len(probe) else np.empty(0, int)
    if cand.size == 0:
        return cand
    dists = _sq_dists(index.store.vectors[cand], query)
    return _rank(cand, dists, k)


# -- LSH ----------------------------------------------------------------------

@dataclass
class LshParams:
    nbits: int
    seed: int = 0

    def __post_init__(self):
        if self.nbits < 1:
            raise ValueError(f"nbits must be >= 1, got {self.nbits}")


class LshIndex:
    def __init__(self, store: VectorStore, params: LshParams,
                 hyperplanes: np.ndarray, codes: np.ndarray):
        self.store = store
        self.params = params
        self.hyperplanes = hyperplanes
        self.codes = codes

    def search(self, query: np.ndarray, k: int) -> np.ndarray:
        return lsh_search(self, query, k)


def _lsh_code(vectors: np.ndarray, hyperplanes: np.ndarray) -> np.ndarray:
    """Sign bits of the projections (dot >= 0 -> 1), packed LSB-first per row."""
    bits = vectors.astype(np.float64) @ hyperplanes.T.astype(np.float64) >= 0.0
    return np.packbits(bits, axis=1, bitorder="little")


def lsh_build(store: VectorStore, params: LshParams) -> LshIndex:
    rng = Rng(params.seed)
    planes = rng.normals(params.nbits * store.dim).reshape(params.nbits, store.dim)
    planes = planes.astype(FLOAT)
    codes = _lsh_code(store.vectors, planes)
    return LshIndex(store, params, planes, codes)


def lsh_search(index: LshIndex, query: np.ndarray, k: int) -> np.ndarray:
    """Rank by Hamming distance between sign codes, ties by smaller id."""
    query = _check_query(query, index.store.dim)
    if not 1 <= k <= len(index.store):
        raise ValueError(f"k must be in [1, {len(index.store)}], got {k}")
    qcode = _lsh_code(query[None, :], index.hyperplanes)
    hamming = np.bitwise_count(index.codes ^ qcode).sum(axis=1)
    return _rank(np.arange(len(index.store)), hamming.astype(np.float64), k)


# -- HNSW ---------------------------------------------------------------------

@dataclass
class HnswParams:
    M: int = 16
    ef_construction: int = 200
    ef_search: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.M < 2:
            raise ValueError(f"M must be >= 2, got {self.M}")
        if self.ef_construction < 1 or self.ef_search < 1:
            raise ValueError("ef_construction and ef_search must be >= 1")


class HnswIndex:
    """Hierarchical NSW graph: geometric levels with multiplier 1/ln(M),
    greedy descent on upper layers, beam search with ef on layer 0, and
    simple nearest-neighbor selection when linking (layer 0 keeps up to 2M
    links, upper layers up to M).

    After every insert the build finalizes layer 0: the adjacency is
    symmetrized (degree-cap eviction during inserts can strand one-way
    edges) and any component cut off from the entry point is reconnected
    through its nearest reachable node. Those repair edges may exceed the
    degree cap; they guarantee the base layer is connected, so an
    exhaustive beam reaches every node."""

    def __init__(self, store: VectorStore, params: HnswParams):
        self.store = store
        self.params = params
        self._vecs = store.vectors.astype(np.float64)
        self.levels: list[int] = []
        self.neighbors: list[list[list[int]]] = []
        self.entry = -1
        self.max_level = -1

    # distances from one stored/query vector to a batch of node ids
    def _dists(self, q64: np.ndarray, ids: list[int]) -> np.ndarray:
        sub = self._vecs[ids]
        diff = sub - q64
        return (diff * diff).sum(axis=1)

    def _search_layer(self, q64: np.ndarray, entries: list[int], ef: int,
                      layer: int) -> list[tuple[float, int]]:
        visited = set(entries)
        dists = self._dists(q64, entries)
        candidates = [(float(d), e) for d, e in zip(dists, entries)]
        heapq.heapify(candidates)
        best = [(-d, e) for d, e in candidates]
        heapq.heapify(best)
        while candidates:
            d, node = heapq.heappop(candidates)
            if len(best) >= ef and d > -best[0][0]:
                break
            fresh = [n for n in self.neighbors[node][layer] if n not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            for dn, nid in zip(self._dists(q64, fresh), fresh):
                dn = float(dn)
                if len(best) < ef or dn < -best[0][0]:
                    heapq.heappush(candidates, (dn, nid))
                    heapq.heappush(best, (-dn, nid))
                    if len(best) > ef:
                        heapq.heappop(best)
        return sorted((-d, n) for d, n in best)

    def _shrink(self, node: int, layer: int, limit: int) -> None:
        ids = self.neighbors[node][layer]
        if len(ids) <= limit:
            return
        ids_arr = np.array(ids)
        dists = self._dists(self._vecs[node], ids)
        order = np.lexsort((ids_arr, dists))
        self.neighbors[node][layer] = [int(ids_arr[o]) for o in order[:limit]]

    def _insert(self, i: int, level: int) -> None:
        self.levels.append(level)
        self.neighbors.append([[] for _ in range(level + 1)])
        if self.entry < 0:
            self.entry = i
            self.max_level = level
            return
        q = self._vecs[i]
        ep = [self.entry]
        for lc in range(self.max_level, level, -1):
            ep = [self._search_layer(q, ep, 1, lc)[0][1]]
        m, m0 = self.params.M, 2 * self.params.M
        for lc in range(min(level, self.max_level), -1, -1):
            found = self._search_layer(q, ep, self.params.ef_construction, lc)
            limit = m0 if lc == 0 else m
            for _, nid in found[:m]:
                self.neighbors[i][lc].append(nid)
                self.neighbors[nid][lc].append(i)
                self._shrink(nid, lc, limit)
            ep = [n for _, n in found]
        if level > self.max_level:
            self.entry = i
            self.max_level = level

    def _finalize_layer0(self) -> None:
        n = len(self.neighbors)
        if n <= 1:
            return
        adj = [set(layers[0]) for layers in self.neighbors]
        for u in range(n):
            for v in self.neighbors[u][0]:
                adj[v].add(u)
        reached = self._component(adj, self.entry)
        while len(reached) < n:
            u = min(i for i in range(n) if i not in reached)
            members = sorted(reached)
            dists = self._dists(self._vecs[u], members)
            order = np.lexsort((np.array(members), dists))
            v = members[int(order[0])]
            adj[u].add(v)
            adj[v].add(u)
            reached |= self._component(adj, u)
        for u in range(n):
            self.neighbors[u][0] = sorted(adj[u])

    @staticmethod
    def _component(adj: list[set], start: int) -> set:
        seen = {start}
        stack = [start]
        while stack:
            node = stack.pop()
            for nb in adj[node]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return seen

    def search(self, query: np.ndarray, k: int) -> np.ndarray:
        return hnsw_search(self, query, k)


def hnsw_build(store: VectorStore, params: HnswParams) -> HnswIndex:
    index = HnswIndex(store, params)
    rng = Rng(params.seed)
    ml = 1.0 / math.log(params.M)
    levels = np.floor(-np.log(rng.uniforms_open(len(store))) * ml).astype(int)
    for i in range(len(store)):
        index._insert(i, int(levels[i]))
    index._finalize_layer0()
    return index


def hnsw_search(index: HnswIndex, query: np.ndarray, k: int) -> np.ndarray:
    query = _check_query(query, index.store.dim)
    ef = index.params.ef_search
    if ef < k:
        raise ValueError(f"ef_search {ef} must be >= k {k}")
    if not 1 <= k <= len(index.store):
        raise ValueError(f"k must be in [1, {len(index.store)}], got {k}")
    q = query.astype(np.float64)
    ep = [index.entry]
    for lc in range(index.max_level, 0, -1):
        ep = [index._search_layer(q, ep, 1, lc)[0][1]]
    found = index._search_layer(q, ep, ef, 0)
    return np.array([n for _, n in found[:k]], dtype=np.int64)


def hnsw_level_bounds_ok(index: HnswIndex) -> bool:
    """Every link stays within both endpoints' level range, no self loops."""
    for i, layers in enumerate(index.neighbors):
        if len(layers) != index.levels[i] + 1:
            return False
        for lc, ids in enumerate(layers):
            for n in ids:
                if n == i or index.levels[n] < lc:
                    return False
    return True


def hnsw_layer0_connected(index: HnswIndex) -> bool:
    """Every node is reachable from the entry point along layer-0 links."""
    n = len(index.neighbors)
    if n <= 1:
        return True
    seen = {index.entry}
    stack = [index.entry]
    while stack:
        node = stack.pop()
        for nb in index.neighbors[node][0]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == n


# -- metrics ------------------------------------------------------------------

def precision_at_k(retrieved, relevant: set, k: int) -> float:
    """|top-k intersect relevant| / k."""
    if k < 1 or k > len(retrieved):
        raise ValueError(f"k must be in [1, {len(retrieved)}], got {k}")
    hits = sum(1 for r in list(retrieved)[:k] if r in relevant)
    return hits / k


def recall_at_k(retrieved, relevant: set, k: int) -> float:
    """|top-k intersect relevant| / |relevant|."""
    if not relevant:
        raise ValueError("relevant set must be non-empty for recall")
    if k < 1 or k > len(retrieved):
        raise ValueError(f"k must be in [1, {len(retrieved)}], got {k}")
    hits = sum(1 for r in list(retrieved)[:k] if r in relevant)
    return hits / len(relevant)


def recall_vs_exact(approx_ids, exact_ids, k: int) -> float:
    """Overlap between an approximate top-k and the exact top-k, over k."""
    return len(set(list(approx_ids)[:k]) & set(list(exact_ids)[:k])) / k


# -- defaults and harness -------------------------------------------------------

def default_params(kind: str, n: int, dim: int, seed: int = 0):
    """Documented per-index defaults: nlist ~ sqrt(N), nprobe 8,
    nbits = 4*dim capped at 512, M 16, ef_construction 200, ef_search 128."""
    if kind == "flat":
        return None
    if kind == "ivf":
        nlist = max(1, min(n, round(math.sqrt(n))))
        return IvfParams(nlist=nlist, nprobe=min(8, nlist), seed=seed)
    if kind == "lsh":
        return LshParams(nbits=min(4 * dim, 512), seed=seed)
    if kind == "hnsw":
        return HnswParams(seed=seed)
    raise ValueError(f"unknown index kind {kind!r}")


class _FlatIndex:
    def __init__(self, store: VectorStore):
        self.store = store

    def search(self, query, k):
        return flat_search(self.store, query, k)


def build_index(kind: str, store: VectorStore, params=None, seed: int = 0):
    """Uniform constructor over the four index kinds."""
    if params is None:
        params = default_params(kind, len(store), store.dim, seed)
    if kind == "flat":
        return _FlatIndex(store)
    if kind == "ivf":
        return ivf_build(store, params)
    if kind == "lsh":
        return lsh_build(store, params)
    if kind == "hnsw":
        return hnsw_build(store, params)
    raise ValueError(f"unknown index kind {kind!r}")


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """L2-normalize rows; zero rows stay zero."""
    x64 = np.asarray(x, dtype=np.float64)
    norms = np.sqrt((x64 * x64).sum(axis=1, keepdims=True))
    return (x64 / np.where(norms > 0, norms, 1.0)).astype(FLOAT)


def evaluate_retrieval(embeddings: np.ndarray, labels: np.ndarray, kind: str,
                       ks: list[int], params=None, seed: int = 0) -> dict:
    """Self-retrieval benchmark over a labeled corpus.

    Every embedded vector queries the whole corpus; its own id is dropped
    from the result list and the relevant set is every other vector with
    the same label. Precision@k is the strict fraction of relevant hits in
    the top k. Recall@k is normalized by min(|relevant|, k) — the capped
    form — so a top-k made entirely of the right cluster scores 1.0 even
    when the cluster holds more than k members.
    """
    embeddings = normalize_rows(embeddings)
    labels = np.asarray(labels)
    if embeddings.shape[0] != labels.shape[0]:
        raise ValueError("labels must match embeddings rows")
    n = embeddings.shape[0]
    ks = sorted(set(int(k) for k in ks))
    if any(k < 1 for k in ks):
        raise ValueError("all k must be >= 1")
    if max(ks) >= n:
        raise ValueError(f"max k {max(ks)} must be below corpus size {n}")
    store = VectorStore(embeddings)
    index = build_index(kind, store, params=params, seed=seed)
    kmax = max(ks)
    by_label: dict = {}
    for i, lab in enumerate(labels.tolist()):
        by_label.setdefault(lab, set()).add(i)
    precision = {k: 0.0 for k in ks}
    recall = {k: 0.0 for k in ks}
    for i in range(n):
        got = [r for r in index.search(store.vectors[i], kmax + 1) if r != i][:kmax]
        relevant = by_label[labels[i]] - {i}
        for k in ks:
            top = got[:k]
            hits = sum(1 for r in top if r in relevant)
            precision[k] += hits / k
            denom = min(len(relevant), k)
            recall[k] += hits / denom if denom else 0.0
    return {
        "index": kind,
        "num_vectors": n,
        "num_queries": n,
        "precision_at_k": {str(k): precision[k] / n for k in ks},
        "recall_at_k": {str(k): recall[k] / n for k in ks},
    }
