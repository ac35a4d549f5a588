"""Crystal lattices as voltage-labelled finite quotient multigraphs.

The covering graph is never built.  A lattice is the pair (quotient graph,
voltage) where each dart carries the integer translation it induces between
fundamental domains, written in the generator basis of Z^d.  Walks on the
covering lattice are lifted one step at a time with :func:`lift_step`.

Dart ids are integers.  Geometric edge ``k`` contributes the forward dart
``2k`` and its inverse ``2k + 1``; the inverse of an edge named ``e1`` is
named ``~e1``.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

ROW_SUM_TOL = 1e-14


class LatticeError(ValueError):
    """Invalid lattice description or transition kernel."""


class NumericalError(ArithmeticError):
    """A numerical routine failed to reach its tolerance."""


@dataclass(frozen=True)
class Dart:
    id: int
    origin: int
    terminus: int
    inverse: int
    name: str


@dataclass(frozen=True, eq=False)
class QuotientGraph:
    vertices: tuple[str, ...]
    darts: tuple[Dart, ...]
    outgoing: tuple[tuple[int, ...], ...]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_darts(self) -> int:
        return len(self.darts)

    @property
    def n_edges(self) -> int:
        return len(self.darts) // 2

    @cached_property
    def origin(self) -> np.ndarray:
        return np.array([e.origin for e in self.darts], dtype=np.int64)

    @cached_property
    def terminus(self) -> np.ndarray:
        return np.array([e.terminus for e in self.darts], dtype=np.int64)

    @cached_property
    def inverse(self) -> np.ndarray:
        return np.array([e.inverse for e in self.darts], dtype=np.int64)

    def vertex_index(self, name: str | int) -> int:
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < self.n_vertices:
                raise LatticeError(f"vertex index {name} out of range")
            return int(name)
        try:
            return self.vertices.index(name)
        except ValueError:
            raise LatticeError(f"unknown vertex {name!r}") from None

    def dart_index(self, name: str | int) -> int:
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < self.n_darts:
                raise LatticeError(f"dart index {name} out of range")
            return int(name)
        for e in self.darts:
            if e.name == name:
                return e.id
        raise LatticeError(f"unknown dart {name!r}")

    def transition_matrix(self, prob: np.ndarray) -> np.ndarray:
        """Vertex-to-vertex matrix P[x, y] = sum of prob over darts x -> y."""
        P = np.zeros((self.n_vertices, self.n_vertices))
        np.add.at(P, (self.origin, self.terminus), prob)
        return P

    def is_connected(self) -> bool:
        seen = {0}
        queue = deque([0])
        while queue:
            x = queue.popleft()
            for d in self.outgoing[x]:
                y = self.darts[d].terminus
                if y not in seen:
                    seen.add(y)
                    queue.append(y)
        return len(seen) == self.n_vertices


@dataclass(frozen=True, eq=False)
class CrystalLattice:
    """Quotient graph plus a Z^d voltage on every dart.

    ``tree_hint`` optionally names the geometric edges (by forward dart id)
    that the cycle basis should use as its spanning tree.
    """

    quotient: QuotientGraph
    rank: int
    voltage: np.ndarray
    tree_hint: tuple[int, ...] | None = None
    name: str = ""

    def cycle_voltage_matrix(self, cycles: Sequence[Sequence[int]]) -> np.ndarray:
        rows = [self.voltage[list(c)].sum(axis=0) for c in cycles]
        return np.array(rows, dtype=np.int64).reshape(len(rows), self.rank)


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """Strictly positive, row-stochastic dart probabilities.

    ``source`` keeps the literal each probability was parsed from (for
    example ``"1/6"``) when the kernel came from a description file.
    """

    prob: np.ndarray
    source: tuple[str | None, ...] | None = None

    def __post_init__(self):
        self.prob.setflags(write=False)


@dataclass(frozen=True)
class LatticeState:
    vertex: int
    cell: tuple[int, ...]


def validate_kernel(graph: QuotientGraph, prob, source=None) -> TransitionKernel:
    """Check positivity and row sums; renormalize deviations below tolerance."""
    prob = np.array(prob, dtype=float)
    if prob.shape != (graph.n_darts,):
        raise LatticeError(f"expected {graph.n_darts} dart probabilities, got {prob.shape}")
    bad = np.flatnonzero(~(prob > 0) | ~np.isfinite(prob))
    if bad.size:
        e = graph.darts[bad[0]]
        raise LatticeError(f"dart {e.name} has non-positive probability {prob[bad[0]]!r}")
    if np.any(prob > 1):
        e = graph.darts[int(np.argmax(prob))]
        raise LatticeError(f"dart {e.name} has probability above 1")
    for x, out in enumerate(graph.outgoing):
        s = math.fsum(prob[list(out)])
        if abs(s - 1.0) > ROW_SUM_TOL:
            raise LatticeError(
                f"probabilities out of vertex {graph.vertices[x]} sum to {s!r}, not 1"
            )
        prob[list(out)] /= s
    return TransitionKernel(prob, source)


def _parse_prob(value) -> tuple[float, str | None]:
    if isinstance(value, str):
        try:
            return float(Fraction(value.strip())), value
        except (ValueError, ZeroDivisionError):
            raise LatticeError(f"cannot parse probability {value!r}") from None
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value), None
    raise LatticeError(f"cannot parse probability {value!r}")


def _integer_minors_gcd(M: np.ndarray, d: int) -> int:
    """gcd of all d x d minors of an integer matrix (0 when rank < d)."""
    g = 0
    for rows in itertools.combinations(range(M.shape[0]), d):
        det = round(np.linalg.det(M[list(rows)].astype(float))) if d > 0 else 1
        g = math.gcd(g, abs(int(det)))
        if g == 1:
            break
    return g


def build_lattice(description: Mapping) -> tuple[CrystalLattice, TransitionKernel]:
    """Build and validate a lattice and kernel from a description mapping.

    The mapping has the layout of the lattice JSON file::

        {"rank": d, "vertices": [...],
         "edges": [{"id", "from", "to", "voltage", "p", "p_rev"}, ...],
         "tree": [edge ids]}            # "tree" is optional

    Inverse darts are synthesized with the id ``"~" + id``.
    """
    try:
        d = int(description["rank"])
        vertex_names = [str(v) for v in description["vertices"]]
        edges = list(description["edges"])
    except (KeyError, TypeError, ValueError) as exc:
        raise LatticeError(f"malformed lattice description: {exc}") from None
    if d < 1:
        raise LatticeError("rank must be positive")
    if len(set(vertex_names)) != len(vertex_names) or not vertex_names:
        raise LatticeError("vertex names must be non-empty and unique")
    vindex = {v: i for i, v in enumerate(vertex_names)}

    darts: list[Dart] = []
    voltages: list[list[int]] = []
    probs: list[float] = []
    sources: list[str | None] = []
    seen_ids: set[str] = set()
    for k, edge in enumerate(edges):
        try:
            eid = str(edge["id"])
            o, t = vindex[edge["from"]], vindex[edge["to"]]
            volt = [int(c) for c in edge["voltage"]]
            p, ps = _parse_prob(edge["p"])
            pr, prs = _parse_prob(edge["p_rev"])
        except KeyError as exc:
            raise LatticeError(f"edge #{k}: missing or unknown {exc}") from None
        except (TypeError, ValueError) as exc:
            raise LatticeError(f"edge #{k}: {exc}") from None
        if eid in seen_ids or eid.startswith("~"):
            raise LatticeError(f"edge id {eid!r} is duplicated or reserved")
        seen_ids.add(eid)
        if len(volt) != d:
            raise LatticeError(f"edge {eid}: voltage has length {len(volt)}, rank is {d}")
        darts.append(Dart(2 * k, o, t, 2 * k + 1, eid))
        darts.append(Dart(2 * k + 1, t, o, 2 * k, "~" + eid))
        voltages += [volt, [-c for c in volt]]
        probs += [p, pr]
        sources += [ps, prs]
    if not darts:
        raise LatticeError("lattice has no edges")

    outgoing = tuple(
        tuple(e.id for e in darts if e.origin == x) for x in range(len(vertex_names))
    )
    graph = QuotientGraph(tuple(vertex_names), tuple(darts), outgoing)
    if not graph.is_connected():
        raise LatticeError("quotient graph is disconnected")
    kernel = validate_kernel(graph, probs, tuple(sources))

    tree_hint = None
    if description.get("tree") is not None:
        tree_hint = tuple(graph.dart_index(str(n)) for n in description["tree"])
        if any(i % 2 for i in tree_hint):
            raise LatticeError("tree must list forward edge ids")
    voltage = np.array(voltages, dtype=np.int64).reshape(len(darts), d)
    voltage.setflags(write=False)
    lattice = CrystalLattice(graph, d, voltage, tree_hint, str(description.get("name", "")))

    # local import: stationary depends on this module
    from .stationary import cycle_basis

    basis = cycle_basis(lattice)
    M = lattice.cycle_voltage_matrix(basis.cycles)
    if M.shape[0] < d or _integer_minors_gcd(M, d) != 1:
        raise LatticeError("cycle voltages do not generate Z^d")
    return lattice, kernel


def load_lattice(path: str | Path) -> tuple[CrystalLattice, TransitionKernel]:
    try:
        description = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise LatticeError(f"{path}: invalid JSON ({exc})") from None
    return build_lattice(description)


def lift_step(lattice: CrystalLattice, state: LatticeState, dart: int) -> LatticeState:
    e = lattice.quotient.darts[dart]
    if e.origin != state.vertex:
        raise LatticeError(
            f"dart {e.name} does not leave vertex {lattice.quotient.vertices[state.vertex]}"
        )
    cell = tuple(int(c + v) for c, v in zip(state.cell, lattice.voltage[dart]))
    return LatticeState(e.terminus, cell)


# -- builtin lattices ------------------------------------------------------

def _hexagonal() -> dict:
    return {
        "name": "hexagonal",
        "rank": 2,
        "vertices": ["x1", "x2"],
        "edges": [
            {"id": "e1", "from": "x1", "to": "x2", "voltage": [1, 0], "p": "1/2", "p_rev": "1/6"},
            {"id": "e2", "from": "x1", "to": "x2", "voltage": [0, 0], "p": "1/3", "p_rev": "1/3"},
            {"id": "e3", "from": "x1", "to": "x2", "voltage": [0, 1], "p": "1/6", "p_rev": "1/2"},
        ],
        "tree": ["e2"],
    }


def _dice() -> dict:
    def edge(i, to, volt, p, pr):
        return {"id": f"e{i}", "from": "x", "to": to, "voltage": volt, "p": p, "p_rev": pr}

    return {
        "name": "dice",
        "rank": 2,
        "vertices": ["x", "y", "z"],
        "edges": [
            edge(1, "y", [1, -1], "1/4", "1/6"),
            edge(2, "y", [0, 0], "1/6", "1/3"),
            edge(3, "y", [0, -1], "1/12", "1/2"),
            edge(4, "z", [0, 1], "1/4", "1/6"),
            edge(5, "z", [0, 0], "1/6", "1/3"),
            edge(6, "z", [-1, 1], "1/12", "1/2"),
        ],
        "tree": ["e2", "e5"],
    }


def _bouquet1(p) -> dict:
    pf = Fraction(p) if isinstance(p, str) else p
    if not 0 < float(pf) < 1:
        raise LatticeError("bouquet1 needs 0 < p < 1")
    if isinstance(pf, Fraction):
        fwd, rev = str(pf), str(1 - pf)
    else:
        fwd, rev = float(pf), 1.0 - float(pf)
    return {
        "name": "bouquet1",
        "rank": 1,
        "vertices": ["o"],
        "edges": [{"id": "e", "from": "o", "to": "o", "voltage": [1], "p": fwd, "p_rev": rev}],
    }


def _square() -> dict:
    return {
        "name": "square",
        "rank": 2,
        "vertices": ["o"],
        "edges": [
            {"id": "a", "from": "o", "to": "o", "voltage": [1, 0], "p": "1/4", "p_rev": "1/4"},
            {"id": "b", "from": "o", "to": "o", "voltage": [0, 1], "p": "1/4", "p_rev": "1/4"},
        ],
    }


BUILTIN_NAMES = ("hexagonal", "dice", "bouquet1", "square")


def builtin_description(name: str, p: float | str | None = None) -> dict:
    if name == "hexagonal":
        return _hexagonal()
    if name == "dice":
        return _dice()
    if name == "square":
        return _square()
    if name == "bouquet1":
        return _bouquet1("1/2" if p is None else p)
    raise LatticeError(f"unknown builtin lattice {name!r}; choose from {', '.join(BUILTIN_NAMES)}")


def builtin(name: str, p: float | str | None = None) -> tuple[CrystalLattice, TransitionKernel]:
    """One of the bundled lattices: hexagonal, dice, bouquet1 (parameter ``p``) or square."""
    return build_lattice(builtin_description(name, p))


def with_probabilities(lattice: CrystalLattice, prob: Iterable[float]) -> TransitionKernel:
    """Validate an arbitrary probability vector against ``lattice``."""
    return validate_kernel(lattice.quotient, list(prob))
