"""Pairwise distances and density-based clustering.

Implements the HDBSCAN pipeline on a precomputed distance matrix: core
distances, mutual reachability, minimum spanning tree, single-linkage
hierarchy, condensed tree with minimum cluster size, and excess-of-mass
cluster extraction. Points in no selected cluster are labeled NOISE.

Sized for small inputs (tens of points); everything is dense and O(n^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SchemaError

NOISE = -1


def pairwise_distances(vectors, metric: str = "euclidean") -> np.ndarray:
    """Symmetric distance matrix with zero diagonal.

    ``cosine`` distance is 1 - cosine similarity; pairs involving a
    zero-norm vector get distance 1 by convention.
    """
    vs = [np.asarray(v, dtype=np.float64).ravel() for v in vectors]
    if not vs:
        return np.zeros((0, 0), dtype=np.float64)
    dim = vs[0].size
    if any(v.size != dim for v in vs):
        raise SchemaError("vectors must share one dimension")
    x = np.stack(vs)
    if metric == "euclidean":
        sq = np.sum(x * x, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
        d = np.sqrt(np.maximum(d2, 0.0))
    elif metric == "cosine":
        norms = np.linalg.norm(x, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        unit = x / safe[:, None]
        sim = np.clip(unit @ unit.T, -1.0, 1.0)
        d = 1.0 - sim
        zero = norms == 0
        d[zero, :] = 1.0
        d[:, zero] = 1.0
    else:
        raise ValueError(f"unknown metric {metric!r}")
    d = (d + d.T) / 2.0
    np.fill_diagonal(d, 0.0)
    return d


@dataclass
class _CondensedCluster:
    parent: int  # parent condensed-cluster id, -1 for root
    birth_lambda: float
    children: list[int]
    stability: float = 0.0
    death_lambda: float | None = None  # split level, None if the cluster never splits
    # points that departed this cluster directly, with their departure lambda
    point_departures: list[tuple[int, float]] = None

    def __post_init__(self):
        if self.point_departures is None:
            self.point_departures = []


def _mst_prim(weights: np.ndarray) -> list[tuple[float, int, int]]:
    """Deterministic Prim MST over a dense symmetric weight matrix."""
    n = weights.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    best_from = np.zeros(n, dtype=np.int64)
    in_tree[0] = True
    best[0] = -np.inf  # never re-picked
    np.minimum(best, weights[0], out=best)
    best_from[:] = 0
    best[0] = -np.inf
    edges = []
    for _ in range(n - 1):
        candidates = np.where(~in_tree, best, np.inf)
        v = int(np.argmin(candidates))
        u = int(best_from[v])
        edges.append((float(weights[u, v]), min(u, v), max(u, v)))
        in_tree[v] = True
        improved = weights[v] < best
        improved &= ~in_tree
        best_from[improved] = v
        best[improved] = weights[v][improved]
    edges.sort()
    return edges


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        self.parent[self.find(a)] = self.find(b)


def _single_linkage(edges, n: int) -> list[tuple[int, int, float, int]]:
    """Merge list [(left_node, right_node, dist, size)]; leaves are 0..n-1."""
    uf = _UnionFind(2 * n - 1)
    current_node = {i: i for i in range(n)}  # uf root -> dendrogram node
    sizes = {i: 1 for i in range(n)}
    merges = []
    next_node = n
    for dist, u, v in edges:
        ru, rv = uf.find(u), uf.find(v)
        nu, nv = current_node[ru], current_node[rv]
        size = sizes[nu] + sizes[nv]
        merges.append((nu, nv, dist, size))
        uf.union(ru, rv)
        root = uf.find(ru)
        current_node[root] = next_node
        sizes[next_node] = size
        next_node += 1
    return merges


def hdbscan(dist: np.ndarray, min_pts: int) -> np.ndarray:
    """Cluster labels for a precomputed distance matrix.

    ``min_pts`` doubles as the minimum cluster size and the core-distance
    neighbor count (the k-th nearest neighbor counting the point itself).
    Returns per-point integer labels, NOISE = -1.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if min_pts < 2:
        raise ValueError("min_pts must be >= 2")
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n < min_pts:
        return labels
    if float(dist.max()) == 0.0:
        # Zero-diameter input: a single maximally dense cluster.
        return np.zeros(n, dtype=np.int64)

    core = np.sort(dist, axis=1)[:, min_pts - 1]
    mreach = np.maximum(dist, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(mreach, 0.0)

    merges = _single_linkage(_mst_prim(mreach), n)
    clusters, departure, departure_lambda = _condense(merges, n, min_cluster_size=min_pts)
    selected = _extract_eom(clusters)

    if not selected:
        # The hierarchy never split into two viable clusters, so the data is
        # one cluster shedding outliers. Keep it as a single cluster, pruning
        # points separated from the dense body by a wide density gap.
        return _single_cluster_labels(departure_lambda, min_pts)

    # Antichain property: at most one selected cluster on any root path.
    cluster_ids: dict[int, int] = {}
    for point in range(n):
        c = departure[point]
        while c != -1 and c not in selected:
            c = clusters[c].parent
        if c == -1:
            continue
        if c not in cluster_ids:
            cluster_ids[c] = len(cluster_ids)
        labels[point] = cluster_ids[c]
    return labels


_GAP_RATIO = 3.0  # density ratio treated as a real break in the root case


def _single_cluster_labels(departure_lambda: np.ndarray, min_pts: int) -> np.ndarray:
    n = departure_lambda.size
    lam = departure_lambda.copy()
    finite = lam[np.isfinite(lam)]
    if finite.size == 0:
        return np.zeros(n, dtype=np.int64)
    lam[~np.isfinite(lam)] = finite.max()
    order = np.argsort(lam, kind="stable")
    values = lam[order]
    best_cut, best_ratio = None, _GAP_RATIO
    for i in range(n - 1):
        lo, hi = values[i], values[i + 1]
        if n - (i + 1) < min_pts:
            break  # too few points above this cut to form a cluster
        ratio = np.inf if lo <= 0 else hi / lo
        if ratio >= best_ratio:
            best_cut, best_ratio = i, ratio
    labels = np.zeros(n, dtype=np.int64)
    if best_cut is not None:
        labels[order[: best_cut + 1]] = NOISE
    return labels


def _condense(merges, n: int, min_cluster_size: int):
    """Collapse the single-linkage dendrogram into condensed clusters.

    Returns (clusters, departure) where ``departure[p]`` is the condensed
    cluster a point fell out of.
    """
    node_children = {}
    node_size = {i: 1 for i in range(n)}
    for left, right, d, size in merges:
        node = n + len(node_children)
        node_children[node] = (left, right, d)
        node_size[node] = size
    root = n + len(node_children) - 1 if merges else 0

    clusters: list[_CondensedCluster] = [
        _CondensedCluster(parent=-1, birth_lambda=0.0, children=[])
    ]
    departure = np.zeros(n, dtype=np.int64)
    departure_lambda = np.full(n, np.inf)

    def leaves_under(node: int):
        stack, out = [node], []
        while stack:
            x = stack.pop()
            if x < n:
                out.append(x)
            else:
                left, right, _ = node_children[x]
                stack.extend((left, right))
        return out

    # Walk top-down; each stack entry is (dendrogram node, condensed cluster id).
    stack = [(root, 0)]
    while stack:
        node, cid = stack.pop()
        if node < n:
            # A cluster shrank to a single point; it departs when its last
            # merge dissolves, which was already accounted at the split.
            departure[node] = cid
            clusters[cid].point_departures.append((node, np.inf))
            continue
        left, right, d = node_children[node]
        lam = np.inf if d <= 0.0 else 1.0 / d
        big_left = node_size[left] >= min_cluster_size
        big_right = node_size[right] >= min_cluster_size
        if big_left and big_right:
            for child in (left, right):
                new_id = len(clusters)
                clusters.append(
                    _CondensedCluster(parent=cid, birth_lambda=lam, children=[])
                )
                clusters[cid].children.append(new_id)
                stack.append((child, new_id))
            clusters[cid].death_lambda = lam
        else:
            for child, big in ((left, big_left), (right, big_right)):
                if big:
                    stack.append((child, cid))
                else:
                    for p in leaves_under(child):
                        departure[p] = cid
                        departure_lambda[p] = lam
                        clusters[cid].point_departures.append((p, lam))

    # Stability: sum over points of (departure lambda - birth lambda); a
    # split contributes (split lambda - birth) for every point that went on
    # into the children.
    subtree_points = [0] * len(clusters)
    for cid in range(len(clusters) - 1, -1, -1):
        c = clusters[cid]
        subtree_points[cid] = len(c.point_departures) + sum(
            subtree_points[ch] for ch in c.children
        )
    for cid, c in enumerate(clusters):
        birth = c.birth_lambda
        if not np.isfinite(birth):
            c.stability = 0.0  # born at infinite density: zero-width band
            continue
        total = 0.0
        for _, lam in c.point_departures:
            total += (lam - birth) if np.isfinite(lam) else np.inf
        if c.children:
            migrated = sum(subtree_points[ch] for ch in c.children)
            split = c.death_lambda if c.death_lambda is not None else birth
            total += migrated * ((split - birth) if np.isfinite(split) else np.inf)
        c.stability = total
    return clusters, departure, departure_lambda


def _extract_eom(clusters) -> set[int]:
    """Excess-of-mass cluster selection; the root never competes."""
    selected: set[int] = set()
    subtree_value = [0.0] * len(clusters)
    for cid in range(len(clusters) - 1, 0, -1):
        c = clusters[cid]
        if not c.children:
            subtree_value[cid] = c.stability
            selected.add(cid)
            continue
        child_sum = sum(subtree_value[ch] for ch in c.children)
        if c.stability >= child_sum:
            subtree_value[cid] = c.stability
            # Deselect the whole subtree in favor of this cluster.
            stack = list(c.children)
            while stack:
                x = stack.pop()
                selected.discard(x)
                stack.extend(clusters[x].children)
            selected.add(cid)
        else:
            subtree_value[cid] = child_sum
    return selected


def largest_non_noise_cluster(labels: np.ndarray) -> list[int]:
    """Indices of the most populous non-noise cluster.

    If every point is noise, returns all indices: downstream aggregation then
    degrades to a plain average instead of failing. Ties go to the lowest
    cluster id.
    """
    labels = np.asarray(labels)
    ids = [int(c) for c in np.unique(labels) if c != NOISE]
    if not ids:
        return list(range(labels.size))
    sizes = {c: int(np.sum(labels == c)) for c in ids}
    best = max(ids, key=lambda c: (sizes[c], -c))
    return [int(i) for i in np.where(labels == best)[0]]


def export_distances_csv(dist: np.ndarray, path) -> None:
    """Write a distance matrix as plain CSV for external cross-checks."""
    np.savetxt(path, np.asarray(dist, dtype=np.float64), delimiter=",", fmt="%.17g")
