"""Exact n-step distributions on the covering lattice and ratio comparisons."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .girsanov import ChangedKernel
from .harmonic import AlbaneseMetric, Realization
from .lattice import CrystalLattice, LatticeError, LatticeState, TransitionKernel

DEFAULT_MAX_SUPPORT = 5_000_000


class SupportBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class CellDistribution:
    n: int
    start: LatticeState
    mass: dict[tuple[int, tuple[int, ...]], float]

    @property
    def support_size(self) -> int:
        return len(self.mass)

    def total(self) -> float:
        return math.fsum(self.mass.values())

    def get(self, state: LatticeState) -> float:
        return self.mass.get((state.vertex, tuple(state.cell)), 0.0)


def _step(lattice: CrystalLattice, kernel: TransitionKernel, mass: dict,
          prune: float, budget: int) -> dict:
    graph = lattice.quotient
    moves = [
        [(graph.darts[e].terminus, tuple(int(c) for c in lattice.voltage[e]), float(kernel.prob[e]))
         for e in graph.outgoing[x]]
        for x in range(graph.n_vertices)
    ]
    out: dict = defaultdict(float)
    for (x, cell), w in mass.items():
        for y, volt, p in moves[x]:
            out[(y, tuple(a + b for a, b in zip(cell, volt)))] += w * p
        if len(out) > budget:
            raise SupportBudgetExceeded(f"support exceeds {budget} states")
    if prune > 0.0:
        return {k: v for k, v in out.items() if v >= prune}
    return dict(out)


def iterate_steps(lattice: CrystalLattice, kernel: TransitionKernel, start: LatticeState,
                  n_max: int, *, prune: float = 0.0,
                  max_support: int = DEFAULT_MAX_SUPPORT) -> Iterator[CellDistribution]:
    """Yield the distributions after 0, 1, ..., n_max steps."""
    if n_max < 0:
        raise ValueError("n must be non-negative")
    start = LatticeState(int(start.vertex), tuple(int(c) for c in start.cell))
    if len(start.cell) != lattice.rank:
        raise LatticeError("start cell has the wrong length")
    mass = {(start.vertex, start.cell): 1.0}
    yield CellDistribution(0, start, mass)
    for n in range(1, n_max + 1):
        mass = _step(lattice, kernel, mass, prune, max_support)
        yield CellDistribution(n, start, mass)


def n_step(lattice: CrystalLattice, kernel: TransitionKernel, start: LatticeState, n: int, *,
           prune: float = 0.0, max_support: int = DEFAULT_MAX_SUPPORT) -> CellDistribution:
    """Exact distribution of the lifted walk after ``n`` steps.  ``prune``
    drops entries below the threshold and is meant for exploration only."""
    for dist in iterate_steps(lattice, kernel, start, n, prune=prune, max_support=max_support):
        pass
    return dist


@dataclass(frozen=True)
class RatioRow:
    n: int
    min_ratio: float
    max_ratio: float
    support_size: int


def _ratio_row(p_dist: CellDistribution, q_dist: CellDistribution, m_p: float,
               keep=None) -> RatioRow:
    scale = math.exp(p_dist.n * m_p)
    lo, hi, count = math.inf, -math.inf, 0
    for key, pm in p_dist.mass.items():
        if pm <= 0.0 or (keep is not None and not keep(key)):
            continue
        r = q_dist.mass.get(key, 0.0) / (pm * scale)
        lo, hi, count = min(lo, r), max(hi, r), count + 1
    if count == 0:
        # a narrow window can miss every endpoint at small n
        return RatioRow(p_dist.n, math.nan, math.nan, 0)
    return RatioRow(p_dist.n, lo, hi, count)


def _drift_window(realization: Realization, metric: AlbaneseMetric, start: LatticeState, radius: float):
    """Predicate keeping endpoints within ``radius * sqrt(n)`` (Albanese
    length) of the law-of-large-numbers centre."""
    origin = realization.place(start)

    def factory(n: int):
        centre = origin + n * realization.drift
        limit = radius * radius * n

        def keep(key) -> bool:
            x, cell = key
            dev = realization.position[x] + np.asarray(cell, dtype=float) - centre
            return metric.length_squared(dev) <= limit
        return keep
    return factory


def ratio_table(lattice: CrystalLattice, kernel: TransitionKernel, changed: ChangedKernel,
                start: LatticeState, n_max: int, *, window: float | None = None,
                realization: Realization | None = None, metric: AlbaneseMetric | None = None,
                max_support: int = DEFAULT_MAX_SUPPORT) -> list[RatioRow]:
    """Extremes of tilted(n, x, y) / (p(n, x, y) exp(n M_p)) for n = 1..n_max.

    With ``window`` set, only endpoints within ``window * sqrt(n)`` of the
    drift centre are considered (needs ``realization`` and ``metric``).
    """
    factory = None
    if window is not None:
        if realization is None or metric is None:
            raise ValueError("a window needs the realization and the metric")
        factory = _drift_window(realization, metric, start, window)
    rows = []
    p_iter = iterate_steps(lattice, kernel, start, n_max, max_support=max_support)
    q_iter = iterate_steps(lattice, changed.kernel, start, n_max, max_support=max_support)
    for p_dist, q_dist in zip(p_iter, q_iter):
        if p_dist.n == 0:
            continue
        keep = factory(p_dist.n) if factory else None
        rows.append(_ratio_row(p_dist, q_dist, changed.m_p, keep))
    return rows


def rate_ratio_bounds(lattice: CrystalLattice, kernel: TransitionKernel, changed: ChangedKernel,
                    start: LatticeState, n: int, **kwargs) -> tuple[float, float]:
    if n < 1:
        raise ValueError("n must be at least 1")
    row = ratio_table(lattice, kernel, changed, start, n, **kwargs)[-1]
    return row.min_ratio, row.max_ratio


def bouquet_explicit(lattice: CrystalLattice, p_dist: CellDistribution, changed: ChangedKernel,
                     realization: Realization, y: LatticeState) -> float:
    """Closed-form tilted n-step probability on a single-vertex quotient:
    p(n, x, y) exp(lambda*[Phi(y) - Phi(x)]) F(lambda*)^(-n)."""
    if lattice.quotient.n_vertices != 1:
        raise LatticeError("closed form needs a single-vertex quotient")
    lam = changed.minimizers.lam[0]
    F = changed.minimizers.value[0]
    disp = realization.place(y) - realization.place(p_dist.start)
    pairing = float(lam @ (changed.frame @ disp))
    return p_dist.get(y) * math.exp(pairing) * F ** (-p_dist.n)
