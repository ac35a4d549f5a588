import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crystalwalk.lattice import (
    BUILTIN_NAMES, LatticeError, LatticeState, build_lattice, builtin, builtin_description, lift_step,
    load_lattice, validate_kernel,
)
from crystalwalk.stationary import cycle_basis

from conftest import lattice_and_kernel


def test_hexagonal_shape(hexagonal):
    lattice, kernel = hexagonal
    g = lattice.quotient
    assert (g.n_vertices, g.n_darts, lattice.rank) == (2, 6, 2)
    for out in g.outgoing:
        assert kernel.prob[list(out)].sum() == pytest.approx(1.0, abs=1e-15)
    names = {d.name: d.id for d in g.darts}
    assert kernel.prob[names["e1"]] == pytest.approx(1 / 2)
    assert kernel.prob[names["~e3"]] == pytest.approx(1 / 2)


def test_dice_shape(dice):
    lattice, kernel = dice
    g = lattice.quotient
    assert g.n_darts == 12
    x = g.vertex_index("x")
    assert len(g.outgoing[x]) == 6
    assert kernel.prob[list(g.outgoing[x])].sum() == pytest.approx(1.0, abs=1e-15)


def test_bouquet_is_symmetric_at_half():
    lattice, kernel = builtin("bouquet1", "1/2")
    assert lattice.quotient.n_vertices == 1
    assert kernel.prob.tolist() == [0.5, 0.5]


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_dart_involution(name):
    g = builtin(name)[0].quotient
    for d in g.darts:
        inv = g.darts[d.inverse]
        assert inv.inverse == d.id and inv.id != d.id
        assert (inv.origin, inv.terminus) == (d.terminus, d.origin)
    listed = sorted(e for out in g.outgoing for e in out)
    assert listed == list(range(g.n_darts))
    for x, out in enumerate(g.outgoing):
        assert all(g.darts[e].origin == x for e in out)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_voltage_antisymmetric(name):
    lattice = builtin(name)[0]
    inv = lattice.quotient.inverse
    assert np.array_equal(lattice.voltage[inv], -lattice.voltage)


def test_lift_step_examples(hexagonal, dice):
    lat, _ = hexagonal
    e1 = lat.quotient.dart_index("e1")
    s = lift_step(lat, LatticeState(0, (0, 0)), e1)
    assert s == LatticeState(1, (1, 0))
    back = lift_step(lat, s, lat.quotient.darts[e1].inverse)
    assert back == LatticeState(0, (0, 0))

    dl, _ = dice
    e6 = dl.quotient.dart_index("e6")
    s = lift_step(dl, LatticeState(dl.quotient.vertex_index("x"), (2, 3)), e6)
    assert s == LatticeState(dl.quotient.vertex_index("z"), (1, 4))


def test_lift_step_rejects_foreign_dart(hexagonal):
    lat, _ = hexagonal
    with pytest.raises(LatticeError):
        lift_step(lat, LatticeState(1, (0, 0)), lat.quotient.dart_index("e1"))


@given(lattice_and_kernel(), st.lists(st.integers(0, 10**6), min_size=1, max_size=20),
       st.lists(st.integers(-5, 5), min_size=2, max_size=2))
@settings(max_examples=50, deadline=None)
def test_lift_then_inverse_round_trips(lk, choices, cell):
    lattice, _ = lk
    g = lattice.quotient
    state = LatticeState(0, tuple(cell[: lattice.rank]))
    for c in choices:
        out = g.outgoing[state.vertex]
        dart = out[c % len(out)]
        there = lift_step(lattice, state, dart)
        assert lift_step(lattice, there, g.darts[dart].inverse) == state
        state = there


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_cycle_voltages_antisymmetric_under_reversal(name):
    lattice = builtin(name)[0]
    g = lattice.quotient
    for cyc in cycle_basis(lattice).cycles:
        rev = [g.darts[e].inverse for e in reversed(cyc)]
        assert np.array_equal(lattice.cycle_voltage_matrix([rev])[0], -lattice.cycle_voltage_matrix([cyc])[0])


def _hex_desc(**changes):
    desc = builtin_description("hexagonal")
    for k, v in changes.items():
        desc["edges"][0][k] = v
    return desc


def test_row_sum_violation_is_rejected():
    desc = _hex_desc(p=0.4)  # forward row at x1 sums to 0.9
    with pytest.raises(LatticeError, match="x1"):
        build_lattice(desc)


def test_non_positive_probability_is_rejected():
    desc = builtin_description("square")
    desc["edges"][0]["p"] = 0.0
    desc["edges"][0]["p_rev"] = 0.5
    with pytest.raises(LatticeError, match="non-positive"):
        build_lattice(desc)


def test_voltage_length_is_checked():
    with pytest.raises(LatticeError, match="voltage"):
        build_lattice(_hex_desc(voltage=[1, 0, 0]))


def test_disconnected_graph_is_rejected():
    desc = builtin_description("hexagonal")
    desc["vertices"].append("lonely")
    with pytest.raises(LatticeError, match="disconnected"):
        build_lattice(desc)


def test_cycles_must_generate_the_group():
    desc = builtin_description("square")
    desc["edges"][0]["voltage"] = [2, 0]
    with pytest.raises(LatticeError, match="generate"):
        build_lattice(desc)


def test_tiny_row_deviation_is_renormalized(hexagonal):
    lattice, kernel = hexagonal
    prob = kernel.prob.copy()
    prob[0] += 4e-15
    fixed = validate_kernel(lattice.quotient, prob)
    for out in lattice.quotient.outgoing:
        assert abs(fixed.prob[list(out)].sum() - 1.0) <= 1e-15


def test_rational_strings_are_kept(hexagonal):
    _, kernel = hexagonal
    assert kernel.source[0] == "1/2"
    assert kernel.prob[0] == 0.5


def test_load_from_file(tmp_path):
    path = tmp_path / "hex.json"
    path.write_text(json.dumps(builtin_description("hexagonal")))
    lattice, kernel = load_lattice(path)
    assert lattice.quotient.n_darts == 6


def test_unknown_builtin():
    with pytest.raises(LatticeError):
        builtin("kagome")


def test_bouquet_parameter_range():
    with pytest.raises(LatticeError):
        builtin("bouquet1", 1.0)
