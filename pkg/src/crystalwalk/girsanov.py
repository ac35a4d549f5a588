"""Free energy minimization and the exponentially tilted (drift-free) kernel."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .harmonic import HARMONIC_TOL, AlbaneseMetric, Realization, albanese
from .lattice import CrystalLattice, LatticeError, NumericalError, TransitionKernel, validate_kernel
from .stationary import DirectionReport, StationaryMeasure, _graph, homological_direction, stationary_measure

EXP_LIMIT = 700.0
GRADIENT_TOL = 1e-12
MAX_NEWTON = 200
MAX_HALVINGS = 60
# Newton decrements below this fraction of F are pure roundoff; the line
# search cannot distinguish them from zero, so the full step is taken.
ROUNDOFF_DECREMENT = 1e-13


@dataclass(frozen=True, eq=False)
class FreeEnergyContext:
    """Per-vertex probabilities and increments, with increments already
    expressed against the evaluation frame (``frame @ increment``)."""

    prob: tuple[np.ndarray, ...]
    steps: tuple[np.ndarray, ...]
    frame: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.prob)

    def pair(self, lam, w) -> float:
        """lambda[w] for a generator-coordinate vector ``w``."""
        return float(np.asarray(lam, dtype=float) @ (self.frame @ np.asarray(w, dtype=float)))


def free_energy_context(graph, kernel: TransitionKernel, realization: Realization,
                        frame: np.ndarray | AlbaneseMetric | None = None) -> FreeEnergyContext:
    """Build the context.  ``frame`` is None for the generator-dual frame,
    or an AlbaneseMetric / matrix for an orthonormal frame."""
    graph = _graph(graph)
    d = realization.rank
    if frame is None:
        frame = np.eye(d)
    elif isinstance(frame, AlbaneseMetric):
        frame = frame.to_orthonormal
    frame = np.asarray(frame, dtype=float)
    steps = realization.increment @ frame.T
    probs, incs = [], []
    for x in range(graph.n_vertices):
        out = list(graph.outgoing[x])
        probs.append(kernel.prob[out].copy())
        incs.append(steps[out].copy())
    return FreeEnergyContext(tuple(probs), tuple(incs), frame)


def _weights(ctx: FreeEnergyContext, x: int, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    arg = ctx.steps[x] @ lam
    worst = np.max(np.abs(arg), initial=0.0)
    if not np.isfinite(worst) or worst > EXP_LIMIT:
        raise NumericalError(f"free energy exponent {worst:.4g} at vertex {x} exceeds {EXP_LIMIT:g}")
    return ctx.prob[x] * np.exp(arg)


def free_energy(ctx: FreeEnergyContext, x: int, lam) -> float:
    return float(np.sum(_weights(ctx, x, lam)))


def free_energy_gradient(ctx: FreeEnergyContext, x: int, lam) -> np.ndarray:
    return _weights(ctx, x, lam) @ ctx.steps[x]


def free_energy_hessian(ctx: FreeEnergyContext, x: int, lam) -> np.ndarray:
    w = _weights(ctx, x, lam)
    W = ctx.steps[x]
    return (W * w[:, None]).T @ W


@dataclass(frozen=True)
class NewtonStep:
    value: float
    gradient_norm: float
    step_length: float


@dataclass(frozen=True, eq=False)
class VertexMinimum:
    lam: np.ndarray
    value: float
    iterations: int
    gradient_norm: float
    trace: tuple[NewtonStep, ...] = field(default=())


@dataclass(frozen=True, eq=False)
class MinimizerResult:
    lam: np.ndarray
    value: np.ndarray
    iterations: int
    gradient_norm: float
    per_vertex: tuple[VertexMinimum, ...]


def _safe_value(ctx, x, lam) -> float:
    try:
        return free_energy(ctx, x, lam)
    except NumericalError:
        return np.inf


def minimize_free_energy(ctx: FreeEnergyContext, x: int) -> VertexMinimum:
    """Damped Newton from the origin with step halving until F decreases."""
    d = ctx.frame.shape[0]
    lam = np.zeros(d)
    value = free_energy(ctx, x, lam)
    grad = free_energy_gradient(ctx, x, lam)
    gnorm = float(np.linalg.norm(grad))
    trace = [NewtonStep(value, gnorm, 0.0)]
    for it in range(MAX_NEWTON + 1):
        if gnorm <= GRADIENT_TOL:
            return VertexMinimum(lam, value, it, gnorm, tuple(trace))
        if it == MAX_NEWTON:
            break
        hess = free_energy_hessian(ctx, x, lam)
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise NumericalError(f"singular Hessian at vertex {x}; increments do not span") from None
        decrement = -float(grad @ step)
        t = 1.0
        if decrement > ROUNDOFF_DECREMENT * value:
            for _ in range(MAX_HALVINGS):
                trial = _safe_value(ctx, x, lam + t * step)
                if trial < value:
                    break
                t *= 0.5
            else:
                raise NumericalError(f"line search stalled at vertex {x} (|grad| = {gnorm:.3e})")
        lam = lam + t * step
        value = free_energy(ctx, x, lam)
        grad = free_energy_gradient(ctx, x, lam)
        gnorm = float(np.linalg.norm(grad))
        trace.append(NewtonStep(value, gnorm, t))
    raise NumericalError(f"Newton did not converge at vertex {x} in {MAX_NEWTON} iterations "
                         f"(|grad| = {gnorm:.3e})")


def minimize_all(ctx: FreeEnergyContext) -> MinimizerResult:
    per = tuple(minimize_free_energy(ctx, x) for x in range(ctx.n_vertices))
    return MinimizerResult(
        lam=np.array([v.lam for v in per]),
        value=np.array([v.value for v in per]),
        iterations=max(v.iterations for v in per),
        gradient_norm=max(v.gradient_norm for v in per),
        per_vertex=per,
    )


@dataclass(frozen=True, eq=False)
class ChangedKernel:
    kernel: TransitionKernel
    stationary: StationaryMeasure
    direction: DirectionReport
    m_p: float
    albanese: AlbaneseMetric
    minimizers: MinimizerResult
    frame: np.ndarray

    @property
    def prob(self) -> np.ndarray:
        return self.kernel.prob


def change_kernel(lattice: CrystalLattice, kernel: TransitionKernel, m: StationaryMeasure,
                  realization: Realization, frame: np.ndarray | AlbaneseMetric | None = None) -> ChangedKernel:
    """Tilt every dart by exp(lambda*(origin)[increment]) / F_origin(lambda*).

    The result has zero mean displacement at every vertex; the rate constant
    averages lambda*[drift] - log F under the original stationary measure.
    """
    graph = lattice.quotient
    ctx = free_energy_context(graph, kernel, realization, frame)
    mins = minimize_all(ctx)

    tilted = np.empty(graph.n_darts)
    for x in range(graph.n_vertices):
        out = list(graph.outgoing[x])
        tilted[out] = _weights(ctx, x, mins.lam[x]) / mins.value[x]
    new_kernel = validate_kernel(graph, tilted, source="tilted kernel")

    residual = realization.harmonic_residual(graph, new_kernel, np.zeros(realization.rank))
    if residual > HARMONIC_TOL:
        raise NumericalError(f"tilted kernel leaves drift {residual:.3e}")

    drift_in_frame = ctx.frame @ realization.drift
    m_p = float(np.sum(m.weight * (mins.lam @ drift_in_frame - np.log(mins.value))))

    new_m = stationary_measure(graph, new_kernel)
    direction = homological_direction(lattice, new_kernel, new_m)
    metric = albanese(lattice, new_kernel, new_m, realization)
    return ChangedKernel(new_kernel, new_m, direction, m_p, metric, mins, ctx.frame)


def interpolation_family(graph, kernel: TransitionKernel, m: StationaryMeasure, eps: float) -> TransitionKernel:
    """p_eps = p_sym + eps * p_anti, where p_sym is the m-reversible part."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    graph = _graph(graph)
    p = kernel.prob
    w = m.weight
    reverse = (w[graph.terminus] / w[graph.origin]) * p[graph.inverse]
    sym = 0.5 * (p + reverse)
    anti = 0.5 * (p - reverse)
    out = sym + eps * anti
    bad = np.flatnonzero(out <= 0)
    if bad.size:
        raise LatticeError(f"interpolated probability non-positive on dart {graph.darts[bad[0]].name}")
    # rows sum to one up to rounding of the reversed part
    return validate_kernel(graph, out, source=f"interpolation eps={eps:g}")
