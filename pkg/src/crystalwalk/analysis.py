"""Full pipeline report and its JSON / text serializations."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from urllib.parse import quote, unquote

import numpy as np

from .girsanov import ChangedKernel, change_kernel
from .harmonic import AlbaneseMetric, Realization, albanese, modified_harmonic_realization
from .lattice import CrystalLattice, TransitionKernel
from .stationary import DirectionReport, StationaryMeasure, homological_direction, is_symmetric, stationary_measure

SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class AnalysisReport:
    lattice: CrystalLattice
    kernel: TransitionKernel
    stationary: StationaryMeasure
    direction: DirectionReport
    realization: Realization
    albanese: AlbaneseMetric
    changed: ChangedKernel

    @property
    def m_p(self) -> float:
        return self.changed.m_p

    @property
    def exp_m_p(self) -> float:
        return math.exp(self.changed.m_p)

    def to_document(self) -> dict:
        return report_document(self)


def analyze(lattice: CrystalLattice, kernel: TransitionKernel, base: int | str = 0) -> AnalysisReport:
    m = stationary_measure(lattice, kernel)
    direction = homological_direction(lattice, kernel, m)
    real = modified_harmonic_realization(lattice, kernel, m, base)
    metric = albanese(lattice, kernel, m, real)
    changed = change_kernel(lattice, kernel, m, real)
    return AnalysisReport(lattice, kernel, m, direction, real, metric, changed)


def _floats(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def _metric_doc(metric: AlbaneseMetric) -> dict:
    return {"gram": _floats(metric.gram), "metric": _floats(metric.metric),
            "frame": _floats(metric.to_orthonormal)}


def report_document(report: AnalysisReport) -> dict:
    L = report.lattice
    g = L.quotient
    vnames = list(g.vertices)
    dnames = [d.name for d in g.darts]
    by_vertex = lambda arr: dict(zip(vnames, _floats(arr)))
    by_dart = lambda arr: dict(zip(dnames, _floats(arr)))
    basis = report.direction.basis
    changed = report.changed
    mins = changed.minimizers
    # orthonormal-frame coordinates of lambda*: pairing is lam . w = lam_o . (T w)
    lam_orth = np.linalg.solve(report.albanese.to_orthonormal.T, mins.lam.T).T
    source = report.kernel.source or (None,) * len(dnames)

    return {
        "schema": SCHEMA_VERSION,
        "lattice": {"name": L.name, "rank": L.rank, "vertices": vnames, "darts": dnames,
                    "edges": g.n_edges},
        "kernel": {"p": by_dart(report.kernel.prob),
                   "source": {k: v for k, v in zip(dnames, source) if v is not None}},
        "stationary": by_vertex(report.stationary.weight),
        "direction": {
            "cycles": [[dnames[e] for e in c] for c in basis.cycles],
            "homology_coords": _floats(report.direction.homology_coords),
            "asymptotic": _floats(report.direction.asymptotic),
        },
        "realization": {
            "base": vnames[report.realization.base],
            "position": by_vertex(report.realization.position),
            "increment": by_dart(report.realization.increment),
        },
        "albanese": _metric_doc(report.albanese),
        "minimizers": {
            "lambda": by_vertex(mins.lam),
            "lambda_orthonormal": by_vertex(lam_orth),
            "free_energy": by_vertex(mins.value),
            "iterations": mins.iterations,
            "gradient_norm": mins.gradient_norm,
        },
        "changed": {
            "p": by_dart(changed.prob),
            "stationary": by_vertex(changed.stationary.weight),
            "homology_coords": _floats(changed.direction.homology_coords),
            "asymptotic": _floats(changed.direction.asymptotic),
            "symmetric": is_symmetric(L, changed.kernel, changed.stationary),
            "albanese": _metric_doc(changed.albanese),
        },
        "m_p": report.m_p,
        "exp_m_p": report.exp_m_p,
    }


def emit_json(document: dict) -> str:
    return json.dumps(document, indent=2) + "\n"


def parse_json(text: str) -> dict:
    return json.loads(text)


def _format_scalar(value) -> str:
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, int):
        return str(value)
    s = "%.17g" % value
    if s.lstrip("-").isdigit():
        s += ".0"
    return s


def _flatten(prefix: str, value, out: list[str]) -> None:
    if isinstance(value, dict) and value:
        for k, v in value.items():
            key = quote(str(k), safe="")
            _flatten(f"{prefix}/{key}" if prefix else key, v, out)
    elif isinstance(value, list) and value:
        for i, v in enumerate(value):
            _flatten(f"{prefix}[{i}]", v, out)
    elif isinstance(value, (dict, list)):
        out.append(f"{prefix} = {json.dumps(value)}")
    else:
        out.append(f"{prefix} = {_format_scalar(value)}")


def emit_text(document: dict) -> str:
    """One ``path = value`` line per leaf; floats at 17 significant digits."""
    lines: list[str] = []
    _flatten("", document, lines)
    return "\n".join(lines) + "\n"


def _split_path(path: str) -> list:
    parts: list = []
    for chunk in path.split("/"):
        head, *indices = chunk.split("[")
        parts.append(unquote(head))
        parts.extend(int(i.rstrip("]")) for i in indices)
    return parts


def parse_text(text: str) -> dict:
    root: dict = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        path, _, raw = line.partition(" = ")
        value = json.loads(raw)
        parts = _split_path(path)
        node = root
        for part, nxt in zip(parts, parts[1:]):
            if isinstance(node, list):
                while len(node) <= part:
                    node.append(None)
                if node[part] is None:
                    node[part] = [] if isinstance(nxt, int) else {}
                node = node[part]
            else:
                node = node.setdefault(part, [] if isinstance(nxt, int) else {})
        last = parts[-1]
        if isinstance(node, list):
            while len(node) <= last:
                node.append(None)
            node[last] = value
        else:
            node[last] = value
    return root
