"""Seeded simulation of lifted walks and moment-level limit-theorem checks.

Walkers are advanced in fixed chunks, vectorized across walkers.  Walker
``i`` draws its uniforms from its own generator keyed by ``(seed, i)``, and
chunk boundaries do not depend on the thread count, so results are
bit-identical for any number of worker threads.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .girsanov import change_kernel, interpolation_family
from .harmonic import AlbaneseMetric, Realization, albanese, modified_harmonic_realization
from .lattice import CrystalLattice, LatticeError, TransitionKernel
from .stationary import StationaryMeasure, stationary_measure

CHUNK = 8192
BLOCK = 1000
COMPARE_LIMIT = 32
KERNEL_CHOICES = ("original", "changed", "interpolated")


@dataclass(frozen=True)
class WalkConfig:
    walkers: int
    steps: int
    seed: int = 0
    kernel_choice: str = "original"
    eps: float | None = None
    time_grid: tuple[float, ...] = (1.0,)
    threads: int = 1

    def __post_init__(self):
        if self.walkers < 1:
            raise ValueError("walkers must be positive")
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if self.kernel_choice not in KERNEL_CHOICES:
            raise ValueError(f"kernel_choice must be one of {KERNEL_CHOICES}")
        if self.eps is not None and not 0.0 <= self.eps <= 1.0:
            raise ValueError("eps must lie in [0, 1]")
        grid = tuple(float(t) for t in self.time_grid)
        if any(not 0.0 <= t <= 1.0 for t in grid) or list(grid) != sorted(grid):
            raise ValueError("time grid must be sorted within [0, 1]")
        if self.threads < 1:
            raise ValueError("threads must be positive")
        object.__setattr__(self, "time_grid", grid)

    @property
    def interpolation_eps(self) -> float:
        return self.eps if self.eps is not None else self.steps ** -0.5


@dataclass(frozen=True, eq=False)
class CltStats:
    empirical_mean: np.ndarray
    empirical_cov: np.ndarray
    stderr_mean: np.ndarray
    sample_count: int
    skewness: np.ndarray = field(default=None)
    excess_kurtosis: np.ndarray = field(default=None)

    def to_document(self) -> dict:
        return {
            "empirical_mean": self.empirical_mean.tolist(),
            "empirical_cov": self.empirical_cov.tolist(),
            "stderr_mean": self.stderr_mean.tolist(),
            "sample_count": self.sample_count,
            "skewness": self.skewness.tolist(),
            "excess_kurtosis": self.excess_kurtosis.tolist(),
        }


def clt_stats(samples: np.ndarray) -> CltStats:
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    cov = np.atleast_2d(np.cov(samples, rowvar=False))
    cov = 0.5 * (cov + cov.T)
    stderr = np.sqrt(np.diag(cov) / n)
    return CltStats(mean, cov, stderr, n, stats.skew(samples, axis=0), stats.kurtosis(samples, axis=0))


# -- simulation engine -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class _Tables:
    thresholds: np.ndarray
    term_by_pos: np.ndarray
    dart_by_pos: np.ndarray
    code_by_pos: np.ndarray | None
    volt_by_pos: np.ndarray
    radix: int


def _tables(lattice: CrystalLattice, kernel: TransitionKernel, steps: int) -> _Tables:
    g = lattice.quotient
    thresholds, darts = [], []
    for x, out in enumerate(g.outgoing):
        cum = np.cumsum(kernel.prob[list(out)])[:-1]
        thresholds.extend(x + cum)
        darts.extend(out)
    darts = np.array(darts, dtype=np.int64)
    volt = lattice.voltage[darts].astype(np.int64)
    d = lattice.rank
    radix = 1 << (62 // d)
    reach = steps * int(np.abs(lattice.voltage).max(initial=0)) + 1
    code = None
    if 2 * reach < radix:
        code = volt @ (radix ** np.arange(d, dtype=np.int64))
    return _Tables(np.array(thresholds, dtype=float), g.terminus[darts].astype(np.int64),
                   darts, code, volt, radix)


def _decode(code: np.ndarray, d: int, radix: int) -> np.ndarray:
    half = radix // 2
    out = np.empty((code.shape[0], d), dtype=np.int64)
    rest = code.copy()
    for i in range(d):
        digit = (rest + half) % radix - half
        out[:, i] = digit
        rest = (rest - digit) // radix
    return out


def _walker_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def _run_chunk(tables: _Tables, d: int, start_vertex: int, first: int, count: int,
               steps: int, seed: int, record: Sequence[int]) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Advance walkers ``first .. first+count-1``; return (vertex, cell) at
    each step index listed in ``record``."""
    rngs = [_walker_rng(seed, first + i) for i in range(count)]
    vert = np.full(count, start_vertex, dtype=np.int64)
    packed = tables.code_by_pos is not None
    code = np.zeros(count, dtype=np.int64) if packed else np.zeros((count, d), dtype=np.int64)
    wanted = set(record)
    snaps: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def snap(s):
        cell = _decode(code, d, tables.radix) if packed else code.copy()
        snaps[s] = (vert.astype(np.int64), cell)

    B = tables.thresholds
    step_table = tables.code_by_pos if packed else tables.volt_by_pos
    # few thresholds: count them with int8 comparisons, far cheaper than a
    # binary search per walker
    small = len(B) <= COMPARE_LIMIT and len(tables.term_by_pos) < 127
    if small:
        vert = vert.astype(np.int8)
        term = tables.term_by_pos.astype(np.int8)
        acc = np.empty(count, dtype=np.int8)
        hit = np.empty(count, dtype=bool)
    key = np.empty(count)
    s = 0
    while s < steps:
        width = min(BLOCK, steps - s)
        rows = np.empty((count, width))
        for i, rng in enumerate(rngs):
            rng.random(out=rows[i])
        U = np.ascontiguousarray(rows.T)
        del rows
        for j in range(width):
            if s in wanted:
                snap(s)
            np.add(vert, U[j], out=key)
            if small:
                np.copyto(acc, vert)
                for b in B:
                    np.greater_equal(key, b, out=hit)
                    acc += hit.view(np.int8)
                pos = acc
            else:
                pos = np.searchsorted(B, key, side="right")
                pos += vert
            code += step_table.take(pos, axis=0)
            vert = (term if small else tables.term_by_pos).take(pos)
            s += 1
    if steps in wanted:
        snap(steps)
    return snaps


def simulate_positions(lattice: CrystalLattice, kernel: TransitionKernel, realization: Realization,
                       walkers: int, steps: int, seed: int, record: Sequence[int] | None = None,
                       threads: int = 1, start_vertex: int | None = None) -> dict[int, np.ndarray]:
    """Realized displacements Phi(w_s) - Phi(w_0) of every walker at each
    recorded step index; rows are in walker order."""
    record = sorted(set([steps] if record is None else record))
    if any(not 0 <= s <= steps for s in record):
        raise ValueError("record indices must lie in [0, steps]")
    start = realization.base if start_vertex is None else start_vertex
    tables = _tables(lattice, kernel, steps)
    d = lattice.rank
    origin = realization.position[start]
    chunks = [(a, min(CHUNK, walkers - a)) for a in range(0, walkers, CHUNK)]

    def job(chunk):
        return _run_chunk(tables, d, start, chunk[0], chunk[1], steps, seed, record)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, chunks))
    else:
        results = [job(c) for c in chunks]

    out = {}
    for s in record:
        vert = np.concatenate([r[s][0] for r in results])
        cell = np.concatenate([r[s][1] for r in results])
        out[s] = realization.position[vert] + cell - origin
    return out


def _grid_points(n: int, t: float) -> tuple[int, float]:
    nt = n * t
    k = round(nt)
    if abs(nt - k) > 1e-9:
        k = math.floor(nt)
    return k, max(nt - k, 0.0)


def path_map(positions: dict[int, np.ndarray], n: int, t: float) -> np.ndarray:
    """Piecewise-linear scaled path at time t, from recorded displacements."""
    k, frac = _grid_points(n, t)
    value = positions[k]
    if frac > 0.0:
        value = value + frac * (positions[k + 1] - value)
    return value / math.sqrt(n)


def grid_steps(n: int, grid: Sequence[float]) -> list[int]:
    steps = set()
    for t in grid:
        k, frac = _grid_points(n, t)
        steps.add(k)
        if frac > 0.0:
            steps.add(k + 1)
    return sorted(steps)


# -- experiments -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PreparedWalk:
    """Kernel to simulate, realization used to measure positions, metric
    whose orthonormal frame standardizes the statistics, and the drift to
    remove (zero when the drift is the signal or absent)."""

    kernel: TransitionKernel
    realization: Realization
    metric: AlbaneseMetric
    centre: np.ndarray


def prepare_walk(lattice: CrystalLattice, kernel: TransitionKernel, config: WalkConfig,
                 m: StationaryMeasure | None = None) -> PreparedWalk:
    if m is None:
        m = stationary_measure(lattice, kernel)
    d = lattice.rank
    if config.kernel_choice == "interpolated":
        eps = config.interpolation_eps
        p_eps = interpolation_family(lattice, kernel, m, eps)
        m_eps = stationary_measure(lattice, p_eps)
        real = modified_harmonic_realization(lattice, p_eps, m_eps)
        p_zero = interpolation_family(lattice, kernel, m, 0.0)
        m_zero = stationary_measure(lattice, p_zero)
        metric = albanese(lattice, p_zero, m_zero, modified_harmonic_realization(lattice, p_zero, m_zero))
        return PreparedWalk(p_eps, real, metric, np.zeros(d))
    real = modified_harmonic_realization(lattice, kernel, m)
    if config.kernel_choice == "changed":
        changed = change_kernel(lattice, kernel, m, real)
        return PreparedWalk(changed.kernel, real, changed.albanese, np.zeros(d))
    return PreparedWalk(kernel, real, albanese(lattice, kernel, m, real), real.drift.copy())


def standardized_endpoints(displacement: np.ndarray, n: int, centre, frame: AlbaneseMetric) -> np.ndarray:
    """(xi_n - n centre) / sqrt(n) in the orthonormal frame."""
    scaled = (displacement - n * np.asarray(centre)) / math.sqrt(n)
    return scaled @ frame.to_orthonormal.T


def simulate_endpoint_stats(lattice: CrystalLattice, kernel: TransitionKernel, realization: Realization,
                            frame: AlbaneseMetric, config: WalkConfig, centre=None) -> CltStats:
    """Moments of the centered, scaled endpoint in the frame of ``frame``.

    The original kernel is centered by n times the realization's drift; the
    changed and interpolated kernels are not centered.
    """
    if centre is None:
        centre = realization.drift if config.kernel_choice == "original" else np.zeros(lattice.rank)
    n = config.steps
    disp = simulate_positions(lattice, kernel, realization, config.walkers, n, config.seed,
                              threads=config.threads)[n]
    return clt_stats(standardized_endpoints(disp, n, centre, frame))


def simulate_path_stats(lattice: CrystalLattice, kernel: TransitionKernel, realization: Realization,
                        frame: AlbaneseMetric, config: WalkConfig, centre=None) -> dict[float, CltStats]:
    """Statistics of the scaled path map at every time in the config grid."""
    if centre is None:
        centre = realization.drift if config.kernel_choice == "original" else np.zeros(lattice.rank)
    n = config.steps
    pos = simulate_positions(lattice, kernel, realization, config.walkers, n, config.seed,
                             record=grid_steps(n, config.time_grid), threads=config.threads)
    out = {}
    for t in config.time_grid:
        values = path_map(pos, n, t) - math.sqrt(n) * t * np.asarray(centre)
        out[t] = clt_stats(values @ frame.to_orthonormal.T)
    return out


def drift_estimate(lattice: CrystalLattice, kernel: TransitionKernel, realization: Realization,
                   config: WalkConfig) -> np.ndarray:
    """Average of xi_n / n over walkers, in generator coordinates."""
    n = config.steps
    disp = simulate_positions(lattice, kernel, realization, config.walkers, n, config.seed,
                              threads=config.threads)[n]
    return disp.mean(axis=0) / n


@dataclass(frozen=True, eq=False)
class InterpolationExperiment:
    stats: CltStats
    target_mean: np.ndarray
    eps: float
    prepared: PreparedWalk


def interpolation_experiment(lattice: CrystalLattice, kernel: TransitionKernel, m: StationaryMeasure | None,
                    n: int, walkers: int, seed: int, threads: int = 1) -> InterpolationExperiment:
    """Walk with the kernel interpolated at eps = n^(-1/2); the scaled
    endpoint should have mean equal to the original drift and identity
    covariance, both in the frame of the reversible (eps = 0) metric."""
    config = WalkConfig(walkers, n, seed, "interpolated", threads=threads)
    prep = prepare_walk(lattice, kernel, config, m)
    stats_ = simulate_endpoint_stats(lattice, prep.kernel, prep.realization, prep.metric, config,
                                     centre=prep.centre)
    if m is None:
        m = stationary_measure(lattice, kernel)
    drift = m.edge_flow(lattice.quotient, kernel) @ lattice.voltage.astype(float)
    target = drift @ prep.metric.to_orthonormal.T
    return InterpolationExperiment(stats_, target, config.interpolation_eps, prep)


def ergodic_edge_average(lattice: CrystalLattice, kernel: TransitionKernel, f, n: int, seed: int,
                         start: int = 0) -> float:
    """(1/n) sum of f over the darts of one trajectory of length n."""
    if n < 1:
        raise ValueError("n must be at least 1")
    g = lattice.quotient
    f = np.asarray(f, dtype=float)
    if f.shape != (g.n_darts,):
        raise LatticeError(f"f must have one value per dart ({g.n_darts})")
    cums = [list(np.cumsum(kernel.prob[list(out)])[:-1]) for out in g.outgoing]
    outs = [list(out) for out in g.outgoing]
    terms = g.terminus.tolist()
    values = f.tolist()
    u = _walker_rng(seed, 0).random(n).tolist()
    x = start
    total = 0.0
    for r in u:
        e = outs[x][bisect_right(cums[x], r)]
        total += values[e]
        x = terms[e]
    return total / n
