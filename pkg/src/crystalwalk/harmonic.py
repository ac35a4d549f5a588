"""Modified harmonic realization, energy inner product and the Albanese metric."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lattice import CrystalLattice, LatticeError, LatticeState, NumericalError, TransitionKernel
from .stationary import StationaryMeasure, _graph

HARMONIC_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class OneForm:
    """Antisymmetric function on darts."""

    value: np.ndarray

    def __add__(self, other: "OneForm") -> "OneForm":
        return OneForm(self.value + other.value)

    def __rmul__(self, scalar: float) -> "OneForm":
        return OneForm(scalar * self.value)

    def is_antisymmetric(self, graph, tol: float = 0.0) -> bool:
        graph = _graph(graph)
        return bool(np.all(np.abs(self.value + self.value[graph.inverse]) <= tol))


@dataclass(frozen=True, eq=False)
class Realization:
    """Vertex positions on a fundamental domain and per-dart displacements,
    both in generator coordinates."""

    position: np.ndarray
    increment: np.ndarray
    base: int
    drift: np.ndarray

    @property
    def rank(self) -> int:
        return self.increment.shape[1]

    def coordinate_form(self, i: int) -> OneForm:
        return OneForm(self.increment[:, i].copy())

    def place(self, state: LatticeState) -> np.ndarray:
        return self.position[state.vertex] + np.asarray(state.cell, dtype=float)

    def harmonic_residual(self, graph, kernel: TransitionKernel, target=None) -> float:
        """Largest deviation of the one-step mean displacement from ``target``
        (the drift by default) over all vertices."""
        graph = _graph(graph)
        target = self.drift if target is None else np.asarray(target, dtype=float)
        mean = np.zeros_like(self.position)
        np.add.at(mean, graph.origin, kernel.prob[:, None] * self.increment)
        return float(np.max(np.abs(mean - target), initial=0.0))


@dataclass(frozen=True, eq=False)
class AlbaneseMetric:
    gram: np.ndarray
    metric: np.ndarray
    to_orthonormal: np.ndarray

    def length_squared(self, w) -> float:
        w = np.asarray(w, dtype=float)
        return float(w @ self.metric @ w)


def difference(graph, f) -> OneForm:
    """Coboundary df(e) = f(t(e)) - f(o(e))."""
    graph = _graph(graph)
    f = np.asarray(f, dtype=float)
    return OneForm(f[graph.terminus] - f[graph.origin])


def pairing(flow: np.ndarray, omega: OneForm) -> float:
    """Pairing of the 1-chain sum_e flow(e) e with a 1-form."""
    return float(flow @ omega.value)


def energy_inner(omega: OneForm, eta: OneForm, flow: np.ndarray) -> float:
    """sum_e flow(e) omega(e) eta(e) - <flow, omega> <flow, eta>."""
    return float(np.sum(flow * omega.value * eta.value)) - pairing(flow, omega) * pairing(flow, eta)


def modified_harmonic_realization(lattice: CrystalLattice, kernel: TransitionKernel,
                                  m: StationaryMeasure, base: int | str = 0) -> Realization:
    """Realization whose mean one-step displacement equals the asymptotic
    direction at every vertex, pinned to zero at ``base``."""
    graph = lattice.quotient
    base = graph.vertex_index(base)
    n, d = graph.n_vertices, lattice.rank
    volt = lattice.voltage.astype(float)
    flow = m.edge_flow(graph, kernel)
    drift = flow @ volt

    P = graph.transition_matrix(kernel.prob)
    A = P - np.eye(n)
    mean_voltage = np.zeros((n, d))
    np.add.at(mean_voltage, graph.origin, kernel.prob[:, None] * volt)
    rhs = drift[None, :] - mean_voltage

    keep = [x for x in range(n) if x != base]
    position = np.zeros((n, d))
    if keep:
        try:
            position[keep] = np.linalg.solve(A[np.ix_(keep, keep)], rhs[keep])
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"harmonic solve failed: {exc}") from None
    increment = position[graph.terminus] - position[graph.origin] + volt
    real = Realization(position, increment, base, drift)
    residual = real.harmonic_residual(graph, kernel)
    if residual > HARMONIC_TOL:
        raise NumericalError(f"harmonicity residual {residual:.3e}; is m stationary?")
    return real


def albanese(lattice: CrystalLattice, kernel: TransitionKernel, m: StationaryMeasure,
             realization: Realization) -> AlbaneseMetric:
    """Gram matrix of the coordinate forms, its inverse, and the lower
    triangular transform onto the Gram-Schmidt frame (first form first,
    positive diagonal)."""
    graph = lattice.quotient
    flow = m.edge_flow(graph, kernel)
    target = flow @ realization.increment
    residual = realization.harmonic_residual(graph, kernel, target)
    if residual > HARMONIC_TOL:
        raise NumericalError(f"realization is not harmonic for this kernel (residual {residual:.3e})")
    inc = realization.increment
    gram = (inc * flow[:, None]).T @ inc - np.outer(target, target)
    gram = 0.5 * (gram + gram.T)
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise NumericalError("Gram matrix is not positive definite") from None
    transform = np.linalg.inv(chol)
    metric = np.linalg.inv(gram)
    return AlbaneseMetric(gram, 0.5 * (metric + metric.T), transform)


def to_orthonormal_coords(metric: AlbaneseMetric, w) -> np.ndarray:
    """Coordinates of the vector with generator coordinates ``w`` in the
    dual of the orthonormalized form frame."""
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != metric.gram.shape[0]:
        raise ValueError("dimension mismatch")
    return w @ metric.to_orthonormal.T


def line_integral(graph, omega: OneForm, path: Sequence[int]) -> float:
    graph = _graph(graph)
    for a, b in zip(path, path[1:]):
        if graph.darts[a].terminus != graph.darts[b].origin:
            raise LatticeError(f"path breaks between darts {a} and {b}")
    return float(sum(omega.value[e] for e in path))

