"""Exact HDBSCAN* for small point sets.

Pipeline: core distances -> mutual reachability graph -> minimum spanning
tree (Kruskal, ties broken by raw distance, then by ids) -> single-linkage
hierarchy -> condensed tree -> excess-of-mass cluster selection.

Everything is O(n^2) memory and meant for a few hundred points.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NOISE = -1
# floor for zero merge distances so lambda = 1/d stays finite
_MIN_DIST = 1e-300


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    n_clusters: int
    outliers: list[int] = field(default_factory=list)

    def members(self, cluster: int) -> list[int]:
        return np.flatnonzero(self.labels == cluster).tolist()

    def clusters(self) -> list[list[int]]:
        return [self.members(c) for c in range(self.n_clusters)]


@dataclass
class CondensedTree:
    """Rows (parent cluster, child, lambda, child size); ``is_point`` marks point rows."""

    parent: np.ndarray
    child: np.ndarray
    lam: np.ndarray
    size: np.ndarray
    is_point: np.ndarray
    n_points: int

    @property
    def n_clusters(self) -> int:
        return int(max(self.child[~self.is_point].max(initial=0), 0)) + 1


def core_distances(D: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance to the ``min_samples``-th nearest point, counting the point itself."""
    k = min(min_samples, D.shape[0]) - 1
    return np.sort(D, axis=1)[:, k]


def pairwise_distances(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=-1))


def mutual_reachability(X: np.ndarray, min_samples: int) -> np.ndarray:
    D = pairwise_distances(X)
    core = core_distances(D, min_samples)
    return np.maximum(D, np.maximum(core[:, None], core[None, :]))


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


def minimum_spanning_tree(M: np.ndarray, D: np.ndarray | None = None) -> np.ndarray:
    """Kruskal MST as rows (i, j, weight), i < j.

    Mutual reachability weights tie whenever a core distance dominates, so
    equal weights are ordered by the raw distance ``D`` first. With distinct
    raw distances the tree then does not depend on how points are numbered.
    """
    n = M.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    w = M[iu, ju]
    raw = D[iu, ju] if D is not None else np.zeros_like(w)
    order = np.lexsort((ju, iu, raw, w))
    uf = _UnionFind(n)
    edges = []
    for e in order:
        a, b = int(iu[e]), int(ju[e])
        if uf.find(a) != uf.find(b):
            uf.union(a, b)
            edges.append((a, b, float(w[e])))
            if len(edges) == n - 1:
                break
    return np.array(edges, dtype=np.float64).reshape(-1, 3)


def single_linkage(mst: np.ndarray, n: int) -> np.ndarray:
    """Merge list in scipy linkage layout: (left, right, distance, size).

    Leaves are 0..n-1; the merge in row r creates node n + r.
    """
    uf = _UnionFind(2 * n - 1)
    size = np.ones(2 * n - 1, dtype=np.int64)
    out = np.zeros((n - 1, 4))
    for r, (a, b, d) in enumerate(mst):
        ra, rb = uf.find(int(a)), uf.find(int(b))
        node = n + r
        size[node] = size[ra] + size[rb]
        out[r] = (ra, rb, d, size[node])
        uf.union(ra, node)
        uf.union(rb, node)
    return out


def _leaves(hierarchy: np.ndarray, node: int, n: int) -> list[int]:
    stack, out = [node], []
    while stack:
        x = stack.pop()
        if x < n:
            out.append(x)
        else:
            left, right = hierarchy[x - n, :2].astype(int)
            stack.extend((right, left))
    return out


def condense_tree(hierarchy: np.ndarray, n: int, min_cluster_size: int) -> CondensedTree:
    """Collapse the hierarchy so only splits into two big-enough children survive.

    Cluster labels are 0 (root), 1, 2, ...; children have larger labels than
    their parent.
    """
    rows: list[tuple[int, int, float, int, bool]] = []
    if n < 2:
        rows = [(0, p, np.inf, 1, True) for p in range(n)]
        return _tree(rows, n)
    root = 2 * n - 2
    label = {root: 0}
    next_label = 1
    queue = [root]
    while queue:
        node = queue.pop(0)
        left, right, dist, _ = hierarchy[node - n]
        left, right = int(left), int(right)
        lam = 1.0 / max(dist, _MIN_DIST)
        parent = label[node]
        sizes = [1 if c < n else int(hierarchy[c - n, 3]) for c in (left, right)]
        big = [s >= min_cluster_size for s in sizes]
        if all(big):
            for c, s in zip((left, right), sizes):
                label[c] = next_label
                rows.append((parent, next_label, lam, s, False))
                next_label += 1
                if c >= n:
                    queue.append(c)
            continue
        for c, s, keep in zip((left, right), sizes, big):
            if keep:
                label[c] = parent
                if c >= n:
                    queue.append(c)
            else:
                for p in _leaves(hierarchy, c, n):
                    rows.append((parent, p, lam, 1, True))
    return _tree(rows, n)


def _tree(rows, n: int) -> CondensedTree:
    return CondensedTree(
        parent=np.array([r[0] for r in rows], dtype=np.int64),
        child=np.array([r[1] for r in rows], dtype=np.int64),
        lam=np.array([r[2] for r in rows], dtype=np.float64),
        size=np.array([r[3] for r in rows], dtype=np.int64),
        is_point=np.array([r[4] for r in rows], dtype=bool),
        n_points=n,
    )


def stabilities(tree: CondensedTree) -> np.ndarray:
    """Excess of mass per cluster: sum over rows of (lambda - birth(parent)) * size."""
    m = tree.n_clusters
    birth = np.zeros(m)
    clusters = ~tree.is_point
    birth[tree.child[clusters]] = tree.lam[clusters]
    stab = np.zeros(m)
    np.add.at(stab, tree.parent, (tree.lam - birth[tree.parent]) * tree.size)
    return stab


def select_clusters(tree: CondensedTree) -> list[int]:
    """Excess-of-mass selection; the root is only chosen when it never splits."""
    m = tree.n_clusters
    if m == 1:
        return [0]
    stab = stabilities(tree)
    children: dict[int, list[int]] = {c: [] for c in range(m)}
    for p, c in zip(tree.parent[~tree.is_point], tree.child[~tree.is_point]):
        children[int(p)].append(int(c))
    selected = {c: True for c in range(1, m)}
    subtree = stab.copy()
    for c in range(m - 1, 0, -1):
        kids = children[c]
        if not kids:
            continue
        below = sum(subtree[k] for k in kids)
        if below > stab[c]:
            selected[c] = False
            subtree[c] = below
        else:
            stack = list(kids)
            while stack:
                k = stack.pop()
                selected[k] = False
                stack.extend(children[k])
    return sorted(c for c, keep in selected.items() if keep)


def label_points(tree: CondensedTree, chosen: list[int]) -> np.ndarray:
    n = tree.n_points
    parent_of = {int(c): int(p) for p, c in zip(tree.parent[~tree.is_point], tree.child[~tree.is_point])}
    chosen_set = set(chosen)
    labels = np.full(n, NOISE, dtype=np.int64)
    for p, pt in zip(tree.parent[tree.is_point], tree.child[tree.is_point]):
        c = int(p)
        while c not in chosen_set and c in parent_of:
            c = parent_of[c]
        if c in chosen_set:
            labels[int(pt)] = c
    return labels


def hdbscan(points, min_cluster_size: int = 7, min_samples: int | None = None) -> ClusterAssignment:
    """Cluster ``points`` (n x dims). Cluster ids are renumbered 0..m-1 by first member."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if min_cluster_size < 1:
        raise ValueError("min_cluster_size must be >= 1")
    if n < max(min_cluster_size, 2):
        labels = np.full(n, NOISE, dtype=np.int64)
        if n == 1 and min_cluster_size == 1:
            labels[0] = 0
        return _assignment(labels)
    D = pairwise_distances(X)
    core = core_distances(D, min_samples or min_cluster_size)
    M = np.maximum(D, np.maximum(core[:, None], core[None, :]))
    hierarchy = single_linkage(minimum_spanning_tree(M, D), n)
    tree = condense_tree(hierarchy, n, min_cluster_size)
    return _assignment(label_points(tree, select_clusters(tree)))


def _assignment(raw: np.ndarray) -> ClusterAssignment:
    labels = np.full(raw.shape, NOISE, dtype=np.int64)
    remap: dict[int, int] = {}
    for i, c in enumerate(raw):
        if c == NOISE:
            continue
        labels[i] = remap.setdefault(int(c), len(remap))
    return ClusterAssignment(labels, len(remap), np.flatnonzero(labels == NOISE).tolist())
