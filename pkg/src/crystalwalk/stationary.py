"""Stationary measure, cycle basis and the homological / asymptotic direction."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .lattice import CrystalLattice, LatticeError, NumericalError, QuotientGraph, TransitionKernel

RESIDUAL_TOL = 1e-12
SYMMETRY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class StationaryMeasure:
    weight: np.ndarray

    def edge_flow(self, graph: QuotientGraph, kernel: TransitionKernel) -> np.ndarray:
        """Dart weights p(e) m(o(e))."""
        return kernel.prob * self.weight[graph.origin]


@dataclass(frozen=True, eq=False)
class CycleBasis:
    """Fundamental cycles of a spanning tree.

    ``cotree`` holds the forward dart id of every non-tree edge; ``cycles[i]``
    is the closed dart path that starts with ``cotree[i]`` and returns to its
    origin through the tree.
    """

    tree_darts: frozenset[int]
    cotree: tuple[int, ...]
    cycles: tuple[tuple[int, ...], ...]


@dataclass(frozen=True, eq=False)
class DirectionReport:
    edge_flow: np.ndarray
    homology_coords: np.ndarray
    asymptotic: np.ndarray
    basis: CycleBasis


def _graph(obj) -> QuotientGraph:
    return obj.quotient if isinstance(obj, CrystalLattice) else obj


def stationary_measure(graph, kernel: TransitionKernel) -> StationaryMeasure:
    """Normalized solution of m = m P, solved densely with one equation
    replaced by the normalization row."""
    graph = _graph(graph)
    P = graph.transition_matrix(kernel.prob)
    n = graph.n_vertices
    A = np.eye(n) - P.T
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        m = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"stationary solve failed: {exc}") from None
    residual = np.max(np.abs(m @ P - m), initial=0.0)
    if residual > RESIDUAL_TOL or np.any(m <= 0):
        raise NumericalError(f"stationary solve residual {residual:.3e}; kernel invalid?")
    return StationaryMeasure(m)


def stationary_power_iteration(graph, kernel: TransitionKernel, tol: float = 1e-15,
                               max_iter: int = 1_000_000) -> StationaryMeasure:
    """Power iteration on the lazy chain (I + P) / 2, which has the same
    invariant measure and is aperiodic even when P is not."""
    graph = _graph(graph)
    P = 0.5 * (np.eye(graph.n_vertices) + graph.transition_matrix(kernel.prob))
    m = np.full(graph.n_vertices, 1.0 / graph.n_vertices)
    for _ in range(max_iter):
        nxt = m @ P
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - m)) <= tol:
            return StationaryMeasure(nxt)
        m = nxt
    raise NumericalError("power iteration did not converge")


def cycle_basis(lattice_or_graph, tree: tuple[int, ...] | None = None) -> CycleBasis:
    """Fundamental cycle basis.

    Without a tree, a breadth-first spanning tree is grown from vertex 0,
    scanning outgoing darts in id order.  A lattice's ``tree_hint`` is used
    when present.
    """
    graph = _graph(lattice_or_graph)
    if tree is None and isinstance(lattice_or_graph, CrystalLattice):
        tree = lattice_or_graph.tree_hint
    n = graph.n_vertices

    # parent dart (pointing towards the root) for every non-root vertex
    parent: dict[int, int] = {}
    if tree is None:
        seen = {0}
        queue = deque([0])
        while queue:
            x = queue.popleft()
            for d in graph.outgoing[x]:
                y = graph.darts[d].terminus
                if y not in seen:
                    seen.add(y)
                    parent[y] = graph.darts[d].inverse
                    queue.append(y)
        tree_edges = {min(d, graph.darts[d].inverse) for d in parent.values()}
    else:
        tree_edges = {min(d, graph.darts[d].inverse) for d in tree}
        if len(tree_edges) != n - 1:
            raise LatticeError("tree must have |V| - 1 edges")
        adj: dict[int, list[int]] = {x: [] for x in range(n)}
        for k in sorted(tree_edges):
            e = graph.darts[k]
            adj[e.origin].append(k)
            adj[e.terminus].append(e.inverse)
        seen = {0}
        queue = deque([0])
        while queue:
            x = queue.popleft()
            for d in adj[x]:
                y = graph.darts[d].terminus
                if y in seen:
                    if y != x:
                        continue
                    raise LatticeError("tree contains a loop")
                seen.add(y)
                parent[y] = graph.darts[d].inverse
                queue.append(y)
        if len(seen) != n:
            raise LatticeError("tree does not span the quotient graph")

    def path_to_root(x: int) -> list[int]:
        out = []
        while x != 0:
            d = parent[x]
            out.append(d)
            x = graph.darts[d].terminus
        return out

    cotree = tuple(k for k in range(0, graph.n_darts, 2) if k not in tree_edges)
    cycles = []
    for k in cotree:
        e = graph.darts[k]
        up = path_to_root(e.terminus)
        down = [graph.darts[d].inverse for d in reversed(path_to_root(e.origin))]
        path = [k] + up + down
        # cancel backtracking where the two tree paths share a tail
        reduced: list[int] = []
        for d in path:
            if reduced and graph.darts[reduced[-1]].inverse == d and len(reduced) > 1:
                reduced.pop()
            else:
                reduced.append(d)
        cycles.append(tuple(reduced))
    tree_darts = frozenset(tree_edges | {graph.darts[k].inverse for k in tree_edges})
    return CycleBasis(tree_darts, cotree, tuple(cycles))


def homological_direction(lattice: CrystalLattice, kernel: TransitionKernel,
                          m: StationaryMeasure, basis: CycleBasis | None = None) -> DirectionReport:
    """Homological direction in the cycle basis and its image in Z^d (x) R.

    The asymptotic direction is ``sum_e m~(e) voltage(e)``; coboundary parts
    of the voltage pair to zero with the cycle, so no basis is involved.
    """
    graph = lattice.quotient
    if basis is None:
        basis = cycle_basis(lattice)
    flow = m.edge_flow(graph, kernel)
    coords = np.array([flow[k] - flow[graph.inverse[k]] for k in basis.cotree])
    asymptotic = flow @ lattice.voltage.astype(float)
    return DirectionReport(flow, coords, asymptotic, basis)


def net_flow(graph, flow: np.ndarray) -> np.ndarray:
    """Boundary of the 1-chain sum_e flow(e) e at every vertex."""
    graph = _graph(graph)
    net = np.zeros(graph.n_vertices)
    np.add.at(net, graph.origin, flow - flow[graph.inverse])
    return net


def is_symmetric(graph, kernel: TransitionKernel, m: StationaryMeasure,
                 tol: float = SYMMETRY_TOL) -> bool:
    """Detailed balance p(e) m(o(e)) = p(e~) m(t(e)) on every dart."""
    graph = _graph(graph)
    flow = m.edge_flow(graph, kernel)
    return bool(np.all(np.abs(flow - flow[graph.inverse]) <= tol))


def expected_edge_average(graph, kernel: TransitionKernel, f, n: int, start) -> float:
    """Exact E[(1/n) sum_{i=1..n} f(e_i)] for the walk started from ``start``.

    ``start`` is a vertex index or a probability vector on the vertices.
    """
    graph = _graph(graph)
    if n < 1:
        raise ValueError("n must be at least 1")
    f = np.asarray(f, dtype=float)
    if np.ndim(start) == 0:
        mu = np.zeros(graph.n_vertices)
        mu[int(start)] = 1.0
    else:
        mu = np.array(start, dtype=float)
    g = np.zeros(graph.n_vertices)
    np.add.at(g, graph.origin, kernel.prob * f)
    P = graph.transition_matrix(kernel.prob)
    terms = []
    for _ in range(n):
        terms.append(mu @ g)
        mu = mu @ P
        # keep rounding from drifting the total mass over long horizons
        mu /= mu.sum()
    return math.fsum(terms) / n
