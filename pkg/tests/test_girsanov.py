import math

import numpy as np
import pytest
from hypothesis import given, settings
from scipy.optimize import minimize

from crystalwalk.girsanov import (
    change_kernel, free_energy, free_energy_context, free_energy_gradient, free_energy_hessian,
    interpolation_family, minimize_all, minimize_free_energy,
)
from crystalwalk.harmonic import albanese, modified_harmonic_realization
from crystalwalk.lattice import BUILTIN_NAMES, LatticeError, NumericalError, builtin
from crystalwalk.stationary import homological_direction, is_symmetric, stationary_measure

from conftest import lattice_and_kernel, random_kernel
from golden_constants import DICE, HEXAGONAL


def setup(lattice, kernel, frame=None):
    m = stationary_measure(lattice, kernel)
    real = modified_harmonic_realization(lattice, kernel, m)
    return m, real, free_energy_context(lattice, kernel, real, frame)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_free_energy_at_origin_is_one(name):
    lattice, kernel = builtin(name)
    _, _, ctx = setup(lattice, kernel)
    for x in range(lattice.quotient.n_vertices):
        assert free_energy(ctx, x, np.zeros(lattice.rank)) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("p", [0.1, 0.3, 0.5, 0.75])
def test_bouquet_closed_form(p):
    lattice, kernel = builtin("bouquet1", p)
    _, _, ctx = setup(lattice, kernel)
    for lam in (-1.5, 0.0, 0.4, 2.0):
        assert free_energy(ctx, 0, [lam]) == pytest.approx(p * math.exp(lam) + (1 - p) * math.exp(-lam), rel=1e-14)
    best = minimize_free_energy(ctx, 0)
    assert best.lam[0] == pytest.approx(0.5 * math.log((1 - p) / p), abs=1e-12)
    assert best.value == pytest.approx(2 * math.sqrt(p * (1 - p)), rel=1e-14)


def test_bouquet_tilt_is_fair():
    lattice, kernel = builtin("bouquet1", 0.3)
    m = stationary_measure(lattice, kernel)
    changed = change_kernel(lattice, kernel, m, modified_harmonic_realization(lattice, kernel, m))
    assert np.allclose(changed.prob, 0.5, atol=1e-14)
    # lambda* drift - log F* at p = 0.3
    rate = 0.5 * math.log(0.7 / 0.3) * (0.3 - 0.7) - math.log(2 * math.sqrt(0.21))
    assert changed.m_p == pytest.approx(rate, abs=1e-13)
    assert changed.m_p <= 0


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_derivatives_match_finite_differences(name):
    lattice, _ = builtin(name)
    rng = np.random.default_rng(11)
    _, _, ctx = setup(lattice, random_kernel(lattice, rng))
    d, h = lattice.rank, 1e-6
    for _ in range(50):
        lam = rng.uniform(-2, 2, d)
        x = int(rng.integers(lattice.quotient.n_vertices))
        grad = free_energy_gradient(ctx, x, lam)
        hess = free_energy_hessian(ctx, x, lam)
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            fd = (free_energy(ctx, x, lam + e) - free_energy(ctx, x, lam - e)) / (2 * h)
            assert fd == pytest.approx(grad[i], rel=1e-6, abs=1e-8)
            fd_grad = (free_energy_gradient(ctx, x, lam + e) - free_energy_gradient(ctx, x, lam - e)) / (2 * h)
            assert np.allclose(fd_grad, hess[:, i], rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_hessian_is_positive_definite(name):
    lattice, kernel = builtin(name)
    _, _, ctx = setup(lattice, kernel)
    rng = np.random.default_rng(5)
    for lam in rng.uniform(-3, 3, (100, lattice.rank)):
        for x in range(lattice.quotient.n_vertices):
            assert np.linalg.eigvalsh(free_energy_hessian(ctx, x, lam)).min() > 0


@given(lattice_and_kernel())
@settings(max_examples=40, deadline=None)
def test_newton_matches_independent_optimizer(lk):
    lattice, kernel = lk
    _, _, ctx = setup(lattice, kernel)
    for x in range(lattice.quotient.n_vertices):
        ours = minimize_free_energy(ctx, x)
        ref = minimize(lambda lam: free_energy(ctx, x, lam), np.zeros(lattice.rank),
                       jac=lambda lam: free_energy_gradient(ctx, x, lam), method="BFGS",
                       options={"gtol": 1e-12})
        assert ours.gradient_norm <= 1e-12
        assert ours.value <= ref.fun + 1e-14
        assert ours.value == pytest.approx(ref.fun, rel=1e-12)
        assert np.allclose(ours.lam, ref.x, atol=1e-6)


def test_newton_trace_is_monotone(dice):
    _, _, ctx = setup(*dice)
    for x in range(3):
        values = [s.value for s in minimize_free_energy(ctx, x).trace]
        assert all(b <= a for a, b in zip(values, values[1:]))


def test_hexagonal_minimum():
    lattice, kernel = builtin("hexagonal")
    m, real, _ = setup(lattice, kernel)
    changed = change_kernel(lattice, kernel, m, real)
    # both vertices share the minimum value; the tilted kernel is uniform
    assert np.allclose(changed.minimizers.value, 3 * 6 ** (-2 / 3), rtol=1e-12)
    assert np.allclose(changed.prob, 1 / 3, atol=1e-12)
    assert np.allclose(changed.stationary.weight, HEXAGONAL["tilted_m"], atol=1e-13)


def test_dice_minimum(dice):
    lattice, kernel = dice
    m, real, _ = setup(lattice, kernel)
    changed = change_kernel(lattice, kernel, m, real)
    assert np.allclose(changed.minimizers.value, DICE["free_energy"], rtol=1e-12)
    g = lattice.quotient
    for i, expected in enumerate(DICE["tilted_forward"], start=1):
        e = g.dart_index(f"e{i}")
        assert changed.prob[e] == pytest.approx(expected, abs=1e-12)
        assert changed.prob[g.darts[e].inverse] == pytest.approx(DICE["tilted_reverse"], abs=1e-12)
    assert np.allclose(changed.stationary.weight, DICE["tilted_m"], atol=1e-12)
    # closed form from the minimizers above; the reference constant differs, see test_acceptance
    assert math.exp(changed.m_p) == pytest.approx(1.5 ** (1 / 6) * math.sqrt(math.sqrt(3) - 1), rel=1e-12)


def test_dice_minimizers_in_transposed_frame(dice):
    lattice, kernel = dice
    m, real, _ = setup(lattice, kernel)
    metric = albanese(lattice, kernel, m, real)
    _, _, ctx = setup(lattice, kernel, metric.to_orthonormal.T)
    lam = minimize_all(ctx).lam
    assert np.allclose(lam, DICE["lambda_frame"], atol=1e-10)


@given(lattice_and_kernel())
@settings(max_examples=30, deadline=None)
def test_tilt_is_frame_independent(lk):
    lattice, kernel = lk
    m, real, _ = setup(lattice, kernel)
    metric = albanese(lattice, kernel, m, real)
    a = change_kernel(lattice, kernel, m, real)
    b = change_kernel(lattice, kernel, m, real, metric)
    assert np.allclose(a.prob, b.prob, atol=1e-10)
    assert np.allclose(a.minimizers.value, b.minimizers.value, rtol=1e-12)
    assert a.m_p == pytest.approx(b.m_p, abs=1e-12)
    # lambda transforms contravariantly to the increments
    assert np.allclose(a.minimizers.lam, b.minimizers.lam @ metric.to_orthonormal, atol=1e-8)


@given(lattice_and_kernel())
@settings(max_examples=40, deadline=None)
def test_tilted_kernel_invariants(lk):
    lattice, kernel = lk
    m, real, _ = setup(lattice, kernel)
    changed = change_kernel(lattice, kernel, m, real)
    assert real.harmonic_residual(lattice, changed.kernel, np.zeros(lattice.rank)) <= 1e-10
    assert np.max(np.abs(changed.direction.asymptotic)) <= 1e-10
    assert changed.m_p <= 1e-12
    assert np.all(changed.minimizers.value <= 1 + 1e-14)


def test_symmetric_kernel_is_unchanged():
    for name in ("square", "bouquet1"):
        lattice, kernel = builtin(name)
        m, real, _ = setup(lattice, kernel)
        assert is_symmetric(lattice, kernel, m)
        changed = change_kernel(lattice, kernel, m, real)
        assert np.allclose(changed.prob, kernel.prob, atol=1e-14)
        assert changed.m_p == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("name", ["hexagonal", "dice"])
def test_interpolation_endpoints_and_direction(name):
    lattice, kernel = builtin(name)
    m = stationary_measure(lattice, kernel)
    assert np.allclose(interpolation_family(lattice, kernel, m, 1.0).prob, kernel.prob, atol=1e-15)
    sym = interpolation_family(lattice, kernel, m, 0.0)
    assert is_symmetric(lattice, sym, m)
    full = homological_direction(lattice, kernel, m).asymptotic
    for eps in (0.1, 0.5, 0.9):
        pe = interpolation_family(lattice, kernel, m, eps)
        me = stationary_measure(lattice, pe)
        # every member keeps the same stationary measure
        assert np.allclose(me.weight, m.weight, atol=1e-13)
        assert np.allclose(homological_direction(lattice, pe, me).asymptotic, eps * full, atol=1e-13)


def test_interpolation_rejects_bad_eps(hexagonal):
    lattice, kernel = hexagonal
    m = stationary_measure(lattice, kernel)
    with pytest.raises(ValueError):
        interpolation_family(lattice, kernel, m, 1.5)


def test_interpolation_rejects_non_positive(hexagonal):
    lattice, kernel = hexagonal
    bogus = type(stationary_measure(lattice, kernel))(np.array([0.999, 0.001]))
    with pytest.raises(LatticeError):
        interpolation_family(lattice, kernel, bogus, 0.0)


def test_exponent_guard():
    lattice, kernel = builtin("bouquet1", 0.5)
    _, _, ctx = setup(lattice, kernel)
    with pytest.raises(NumericalError, match="exponent"):
        free_energy(ctx, 0, [701.0])
