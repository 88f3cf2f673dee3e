"""Sector-level aggregation (A-NPI, A-NPF), cash-flow influence, HHI/CR3."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import networkx as nx
import numpy as np

from .errors import InputError, NumericError, ParseError
from .graph import FIRM, OwnershipGraph
from .power import PowerEstimates

logger = logging.getLogger(__name__)

SECTOR_HEADER = ["firm_id", "size_value"]


@dataclass(frozen=True)
class SectorSpec:
    firms: tuple[str, ...]
    size_values: Mapping[str, float]
    size_variable_name: str = "total_assets"
    excluded: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "firms", tuple(self.firms))
        if not self.firms:
            raise InputError("sector must contain at least one firm")
        if len(set(self.firms)) != len(self.firms):
            raise InputError("duplicate firm in sector")

    def check_against(self, graph: OwnershipGraph) -> None:
        for f in self.firms:
            if f not in graph.nodes:
                raise InputError(f"sector firm {f!r} is not in the graph")
            if graph.nodes[f].kind != FIRM:
                raise InputError(f"sector member {f!r} is not of kind firm")


def load_sector(
    path: str | Path,
    size_variable_name: str = "total_assets",
    ebit_floor: float | None = None,
) -> SectorSpec:
    """Read ``firm_id,size_value`` rows (optionally with an ``ebit`` column).

    With ``ebit_floor`` set, only firms whose EBIT exceeds the floor are kept.
    EBIT is read from the ``ebit`` column when present, otherwise the size
    value itself is taken to be EBIT.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    firms, sizes, excluded = [], {}, []
    with fh:
        reader = csv.reader(fh)
        header = [c.strip().lstrip("\ufeff") for c in next(reader, [])]
        if header[:2] != SECTOR_HEADER or header[2:] not in ([], ["ebit"]):
            raise ParseError(f"bad header {header!r}, expected firm_id,size_value[,ebit]", str(path), 1)
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} columns, got {len(row)}", str(path), reader.line_num)
            cells = [c.strip() for c in row]
            try:
                values = [float(c) for c in cells[1:]]
            except ValueError:
                raise ParseError(f"non-numeric value in {cells!r}", str(path), reader.line_num) from None
            firm, size = cells[0], values[0]
            ebit = values[1] if len(values) > 1 else size
            if firm in sizes:
                raise ParseError(f"duplicate firm {firm!r}", str(path), reader.line_num)
            if ebit_floor is not None and not ebit > ebit_floor:
                logger.warning("excluding %s: EBIT %.6g does not exceed floor %.6g", firm, ebit, ebit_floor)
                excluded.append(firm)
                continue
            firms.append(firm)
            sizes[firm] = size
    return SectorSpec(tuple(firms), sizes, size_variable_name, tuple(excluded))


def sector_weights(spec: SectorSpec) -> dict[str, float]:
    """Size-normalized weights ``v_j / sum_k v_k``."""
    missing = [f for f in spec.firms if f not in spec.size_values]
    if missing:
        raise InputError(f"no size value for firm {missing[0]!r}")
    values = {f: float(spec.size_values[f]) for f in spec.firms}
    negative = [f for f, v in values.items() if v < 0 or math.isnan(v)]
    if negative:
        raise InputError(f"negative size value for firm {negative[0]!r}")
    # fsum over sorted values: independent of firm order.
    total = math.fsum(sorted(values.values()))
    if total <= 0.0:
        raise InputError("degenerate weights: all size values are zero")
    return {f: v / total for f, v in values.items()}


@dataclass(frozen=True)
class InvestorIndices:
    investor: str
    a_npi: float
    a_npi_weighted: float
    a_npf_unweighted: float
    a_npf_weighted: float
    # Exact numerators (run counts summed over sector firms).
    npi_count: int = 0
    npf_count: int = 0


@dataclass(frozen=True)
class AggregateIndices:
    rows: tuple[InvestorIndices, ...]
    firms: tuple[str, ...]
    weights: Mapping[str, float]
    runs: int

    def __getitem__(self, investor: str) -> InvestorIndices:
        for r in self.rows:
            if r.investor == investor:
                return r
        raise KeyError(investor)

    def __contains__(self, investor: str) -> bool:
        return any(r.investor == investor for r in self.rows)

    def as_map(self) -> dict[str, InvestorIndices]:
        return {r.investor: r for r in self.rows}


def aggregate_indices(
    estimates: PowerEstimates,
    spec: SectorSpec,
    weights: Mapping[str, float] | None = None,
) -> AggregateIndices:
    """Sum firm-level estimates over the sector, plain and size-weighted.

    Rows are sorted by weighted A-NPI (descending), ties by investor id.
    Investors with no mass on any sector firm are left out.
    """
    if weights is None:
        weights = sector_weights(spec)
    for f in spec.firms:
        if not estimates.covers(f):
            raise InputError(f"sector firm {f!r} has no power estimates")
    cols = [estimates.firm_index(f) for f in spec.firms]
    w = np.array([weights[f] for f in spec.firms], dtype=np.float64)
    npi = estimates.tnpi_counts[:, cols].toarray()
    npf = estimates.tnpf_counts[:, cols].toarray()
    runs = estimates.runs
    rows = []
    for i in np.flatnonzero(npf.sum(axis=1)):
        # Fixed left-to-right summation in sector firm order.
        pi = npi[i] / runs
        pf = npf[i] / runs
        rows.append(
            InvestorIndices(
                investor=estimates.investors[i],
                a_npi=int(npi[i].sum()) / runs,
                a_npi_weighted=_ordered_dot(w, pi),
                a_npf_unweighted=int(npf[i].sum()) / runs,
                a_npf_weighted=_ordered_dot(w, pf),
                npi_count=int(npi[i].sum()),
                npf_count=int(npf[i].sum()),
            )
        )
    rows.sort(key=lambda r: (-r.a_npi_weighted, r.investor))
    return AggregateIndices(tuple(rows), tuple(spec.firms), dict(weights), runs)


def _ordered_dot(w: np.ndarray, p: np.ndarray) -> float:
    total = 0.0
    for a, b in zip(w.tolist(), p.tolist()):
        total += a * b
    return total


def integrated_ownership(
    graph: OwnershipGraph,
    spec: SectorSpec | Sequence[str],
    tol: float = 1e-12,
    max_sweeps: int = 10**6,
) -> dict[tuple[str, str], float]:
    """Sum over all holder paths ``i -> ... -> j`` of the product of stakes.

    Computed by propagating flow backwards from each sector firm until the
    added mass falls below ``tol``. Cycles converge because some of every
    cycle's ownership leaks to outside holders; a cycle that owns itself
    completely makes the series diverge and is reported as a
    :class:`NumericError`.
    """
    firms = list(spec.firms if isinstance(spec, SectorSpec) else spec)
    for f in firms:
        if f not in graph.nodes:
            raise InputError(f"firm {f!r} is not in the graph")
    _check_closed_cycles(graph)
    ids = graph.node_ids()
    index = {n: k for k, n in enumerate(ids)}
    n = len(ids)
    own = np.zeros((n, n))
    for (h, j), f in graph.edges.items():
        own[index[h], index[j]] = f
    cols = [index[f] for f in firms]
    term = own[:, cols].copy()
    total = term.copy()
    sweeps = 1
    while np.abs(term).max(initial=0.0) > tol:
        if sweeps >= max_sweeps:
            raise NumericError(f"integrated ownership did not converge after {max_sweeps} sweeps")
        term = own @ term
        total += term
        sweeps += 1
    out = {}
    for c, f in enumerate(firms):
        for r in np.flatnonzero(total[:, c]):
            out[(ids[r], f)] = float(total[r, c])
    return out


def _check_closed_cycles(graph: OwnershipGraph) -> None:
    g = nx.DiGraph()
    g.add_edges_from(graph.edges)
    for comp in nx.strongly_connected_components(g):
        if len(comp) < 2:
            continue
        inside = [
            math.fsum(f for h, f in graph.holders(j) if h in comp) for j in comp
        ]
        if all(s >= 1.0 - 1e-12 for s in inside):
            raise NumericError(
                "closed ownership cycle with no outside holders: " + " -> ".join(sorted(comp))
            )


@dataclass(frozen=True)
class ConcentrationReport:
    hhi: float
    cr3: float
    shares: tuple[tuple[str, float], ...]


def baseline_concentration(shares: Sequence[tuple[str, float]]) -> ConcentrationReport:
    """Herfindahl-Hirschman index (0-10000 points) and three-firm ratio."""
    if not shares:
        raise InputError("need at least one market share")
    for name, s in shares:
        if not (0.0 < s <= 1.0):
            raise InputError(f"share of {name!r} must lie in (0, 1], got {s!r}")
    if math.fsum(s for _, s in shares) > 1.0 + 1e-9:
        raise InputError("market shares sum to more than 1")
    ordered = sorted(shares, key=lambda kv: (-kv[1], kv[0]))
    hhi = math.fsum((100.0 * s) ** 2 for _, s in ordered)
    cr3 = math.fsum(s for _, s in ordered[:3])
    return ConcentrationReport(hhi, cr3, tuple(ordered))
