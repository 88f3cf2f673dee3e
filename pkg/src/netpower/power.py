"""Monte Carlo estimation of target-level control (T-NPI) and flow (T-NPF).

In every run each node that has shareholders gets a direct controller: the
pivotal shareholder of a uniformly random ordering of its register, i.e. the
first holder whose cumulative stake strictly exceeds the control threshold.
Following direct controllers upward gives each firm's control chain; the end
of the chain is its ultimate controller. Control cycles resolve to their
lexicographically smallest member.

``tnpi(i, j)`` is the share of runs in which ``i`` ultimately controls ``j``;
``tnpf(i, j)`` is the share of runs in which ``i`` sits anywhere on ``j``'s
control chain.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np
import scipy.sparse as sp

from . import streams
from .errors import ContractError, InputError, SizeGuardError
from .graph import FIRM, PRIVATE, NodeRecord, OwnershipGraph

# Cumulative stakes within this of the threshold do not count as exceeding it;
# guards against float noise such as 0.1 + 0.2 + 0.2 > 0.5.
PIVOT_EPS = 1e-12
EXACT_MAX_HOLDERS = 10
IMPUTED_TOL = 1e-6
# Upper bound on run-chunk cells (runs x nodes) held in memory at once.
_CHUNK_CELLS = 1 << 21
_DENSE_COUNT_LIMIT = 1 << 24


@dataclass(frozen=True)
class McConfig:
    runs: int = 100_000
    threshold: float = 0.5
    master_seed: int = 0

    def __post_init__(self):
        if int(self.runs) < 1:
            raise InputError("runs must be >= 1")
        if not (0.0 < self.threshold < 1.0):
            raise InputError("threshold must lie in (0, 1)")
        if not (0 <= int(self.master_seed) < 2**64):
            raise InputError("master_seed must be a 64-bit unsigned integer")


# -- single-register primitives ---------------------------------------------


def pivot_position(ordered_fractions: Sequence[float], threshold: float = 0.5) -> int:
    """Index of the first entry whose running total strictly exceeds ``threshold``."""
    total = 0.0
    for pos, frac in enumerate(ordered_fractions):
        total += frac
        if total > threshold + PIVOT_EPS:
            return pos
    raise ContractError(
        f"register total {total:.9g} never exceeds threshold {threshold}; impute the graph first"
    )


def pivot_draw(holders: Sequence[tuple[str, float]], threshold: float, run_rng) -> str:
    """Draw one random ordering of ``holders`` and return its pivotal member.

    ``run_rng`` is anything with a numpy-style ``permutation(n)`` method.
    """
    if not holders:
        raise ContractError("pivot_draw needs at least one holder")
    order = run_rng.permutation(len(holders))
    pos = pivot_position([holders[k][1] for k in order], threshold)
    return holders[order[pos]][0]


def exact_power(holders: Sequence[tuple[str, float]], threshold: float = 0.5) -> dict[str, float]:
    """Pivot probabilities by enumerating every ordering of the register."""
    n = len(holders)
    if n > EXACT_MAX_HOLDERS:
        raise SizeGuardError(f"exact enumeration is capped at {EXACT_MAX_HOLDERS} holders, got {n}")
    if n == 0:
        raise ContractError("exact_power needs at least one holder")
    counts = [0] * n
    fracs = [f for _, f in holders]
    for perm in itertools.permutations(range(n)):
        counts[perm[pivot_position([fracs[k] for k in perm], threshold)]] += 1
    total = math.factorial(n)
    out: dict[str, float] = {}
    for (h, _), c in zip(holders, counts):
        out[h] = out.get(h, 0.0) + c / total
    return out


# -- chain resolution (reference implementation) -----------------------------


@dataclass(frozen=True)
class ChainResolution:
    ultimate: dict[str, str]
    chain: dict[str, list[str]]


def resolve_chains(assignment: Mapping[str, str], graph: OwnershipGraph) -> ChainResolution:
    """Follow direct-controller pointers from every node of ``graph``.

    ``assignment`` maps each node with shareholders to its direct controller
    for one run. Plain Python; the simulation engine uses a vectorized
    equivalent and is tested against this.
    """
    missing = [j for j in graph.held_nodes() if j not in assignment]
    if missing:
        raise ContractError(f"no controller assigned for {missing[0]!r}")
    ultimate: dict[str, str] = {}
    chains: dict[str, list[str]] = {}
    for j in graph.node_ids():
        if j not in assignment:
            ultimate[j], chains[j] = j, []
            continue
        seq = [j]
        seen = {j: 0}
        cur = j
        while cur in assignment:
            cur = assignment[cur]
            if cur in seen:
                break
            seen[cur] = len(seq)
            seq.append(cur)
        if cur not in assignment:
            ultimate[j], chains[j] = cur, seq[1:]
            continue
        cycle = seq[seen[cur]:]
        rep = min(cycle)
        cycle_set = set(cycle)
        chain = []
        for node in seq[1:]:
            chain.append(node)
            if node in cycle_set:
                break
        if chain[-1] != rep:
            chain.append(rep)
        ultimate[j], chains[j] = rep, chain
    return ChainResolution(ultimate, chains)


# -- estimates -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PowerEstimates:
    """Run counts over ``runs`` simulations.

    ``tnpi_counts`` and ``tnpf_counts`` are sparse ``len(investors) x
    len(firms)`` integer matrices; probabilities are counts divided by runs.
    """

    investors: tuple[str, ...]
    firms: tuple[str, ...]
    tnpi_counts: sp.csr_matrix
    tnpf_counts: sp.csr_matrix
    runs: int
    tracked_firms: tuple[str, ...] = ()
    controlled_count_sums: np.ndarray | None = None
    _inv_index: dict = field(init=False, repr=False)
    _firm_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_inv_index", {n: k for k, n in enumerate(self.investors)})
        object.__setattr__(self, "_firm_index", {n: k for k, n in enumerate(self.firms)})

    def firm_index(self, firm: str) -> int:
        return self._firm_index[firm]

    def investor_index(self, investor: str) -> int:
        return self._inv_index[investor]

    def covers(self, firm: str) -> bool:
        return firm in self._firm_index

    def tnpi(self, investor: str, firm: str) -> float:
        return self._cell(self.tnpi_counts, investor, firm) / self.runs

    def tnpf(self, investor: str, firm: str) -> float:
        return self._cell(self.tnpf_counts, investor, firm) / self.runs

    def _cell(self, mat, investor, firm) -> int:
        i = self._inv_index.get(investor)
        j = self._firm_index.get(firm)
        if i is None or j is None:
            return 0
        return int(mat[i, j])

    def tnpi_column(self, firm: str) -> dict[str, float]:
        col = self.tnpi_counts[:, self.firm_index(firm)].tocoo()
        return {self.investors[i]: int(c) / self.runs for i, c in zip(col.row, col.data) if c}

    def cells(self):
        """Yield ``(investor, firm, tnpi, tnpf)`` for cells with tnpf > 0, ordered by (firm, investor)."""
        npf = self.tnpf_counts.tocsc()
        npi = self.tnpi_counts.tocsc()
        by_firm = sorted(range(len(self.firms)), key=lambda k: self.firms[k])
        for j in by_firm:
            rows = npf.indices[npf.indptr[j]:npf.indptr[j + 1]]
            vals = npf.data[npf.indptr[j]:npf.indptr[j + 1]]
            ci = dict(
                zip(
                    npi.indices[npi.indptr[j]:npi.indptr[j + 1]],
                    npi.data[npi.indptr[j]:npi.indptr[j + 1]],
                )
            )
            for i, c in sorted(zip(rows, vals), key=lambda rc: self.investors[rc[0]]):
                if c:
                    yield self.investors[i], self.firms[j], int(ci.get(i, 0)) / self.runs, int(c) / self.runs

    def controlled_firm_means(self) -> dict[str, float]:
        """Run average of the number of tracked firms each investor controls."""
        if self.controlled_count_sums is None:
            return {}
        return {
            self.investors[i]: int(c) / self.runs
            for i, c in enumerate(self.controlled_count_sums)
            if c
        }


def standard_error(estimates: PowerEstimates) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Binomial standard errors ``sqrt(p (1 - p) / T)`` for tnpi and tnpf cells."""
    out = []
    for counts in (estimates.tnpi_counts, estimates.tnpf_counts):
        se = counts.astype(np.float64).tocsr(copy=True)
        p = se.data / estimates.runs
        se.data = np.sqrt(p * (1.0 - p) / estimates.runs)
        out.append(se)
    return out[0], out[1]


def binomial_se(p: float, runs: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / runs)


# -- vectorized engine -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _HolderGroup:
    """Held nodes sharing the same register size, drawn together."""

    nodes: np.ndarray  # (G,) node indices
    bases: np.ndarray  # (G,) uint64 stream bases
    holders: np.ndarray  # (G, n) holder indices
    fractions: np.ndarray  # (G, n)


@dataclass(frozen=True, eq=False)
class _Model:
    ids: tuple[str, ...]
    is_root: np.ndarray
    fixed_nodes: np.ndarray
    fixed_ctrl: np.ndarray
    groups: tuple[_HolderGroup, ...]
    targets: np.ndarray  # node index per estimate column
    held_targets: np.ndarray  # columns whose node has holders
    root_targets: np.ndarray  # columns whose node is self-controlled
    tracked: np.ndarray  # bool per column
    acyclic: bool
    threshold: float
    seed: int


def _sure_pivot(fracs: Sequence[float], threshold: float) -> int | None:
    """Holder that is pivotal in every ordering, when one exists."""
    total = math.fsum(fracs)
    margin = threshold + PIVOT_EPS
    for k, f in enumerate(fracs):
        if f > margin + 1e-12 and total - f + 1e-12 <= margin:
            return k
    return None


def _build_model(graph: OwnershipGraph, config: McConfig, track: Iterable[str] | None) -> _Model:
    ids = tuple(graph.node_ids())
    index = {n: k for k, n in enumerate(ids)}
    held = graph.held_nodes()
    for j in held:
        total = graph.incoming_sum(j)
        if total < 1.0 - IMPUTED_TOL:
            raise ContractError(
                f"register of {j!r} sums to {total:.9g} < 1; impute the graph before simulating"
            )
    is_root = np.ones(len(ids), dtype=bool)
    fixed_nodes, fixed_ctrl = [], []
    by_size: dict[int, list] = defaultdict(list)
    for j in held:
        is_root[index[j]] = False
        reg = graph.holders(j)
        fracs = [f for _, f in reg]
        sure = _sure_pivot(fracs, config.threshold)
        if sure is not None:
            fixed_nodes.append(index[j])
            fixed_ctrl.append(index[reg[sure][0]])
        else:
            by_size[len(reg)].append((index[j], streams.node_base(config.master_seed, j), reg))
    groups = []
    for n in sorted(by_size):
        members = by_size[n]
        groups.append(
            _HolderGroup(
                nodes=np.array([m[0] for m in members], dtype=np.int64),
                bases=np.array([m[1] for m in members], dtype=np.uint64),
                holders=np.array([[index[h] for h, _ in m[2]] for m in members], dtype=np.int64),
                fractions=np.array([[f for _, f in m[2]] for m in members], dtype=np.float64),
            )
        )
    target_ids = sorted(set(held) | {n for n in ids if graph.nodes[n].kind == FIRM})
    targets = np.array([index[n] for n in target_ids], dtype=np.int64)
    track_set = set(track or ())
    unknown = sorted(track_set - set(target_ids))
    if unknown:
        raise InputError(f"tracked firm {unknown[0]!r} is not in the graph")
    sub = nx.DiGraph()
    sub.add_edges_from(graph.edges)
    return _Model(
        ids=ids,
        is_root=is_root,
        fixed_nodes=np.array(fixed_nodes, dtype=np.int64),
        fixed_ctrl=np.array(fixed_ctrl, dtype=np.int64),
        groups=tuple(groups),
        targets=targets,
        held_targets=np.flatnonzero(~is_root[targets]),
        root_targets=np.flatnonzero(is_root[targets]),
        tracked=np.array([n in track_set for n in target_ids], dtype=bool),
        acyclic=nx.is_directed_acyclic_graph(sub),
        threshold=float(config.threshold),
        seed=int(config.master_seed),
    )


def _draw_controllers(model: _Model, start: int, stop: int) -> np.ndarray:
    """``(stop - start) x N`` direct-controller matrix; roots point to themselves."""
    runs = np.arange(start, stop, dtype=np.uint64)
    n_nodes = len(model.ids)
    ctrl = np.broadcast_to(np.arange(n_nodes, dtype=np.int64), (len(runs), n_nodes)).copy()
    if len(model.fixed_nodes):
        ctrl[:, model.fixed_nodes] = model.fixed_ctrl
    margin = model.threshold + PIVOT_EPS
    offsets = (runs + np.uint64(1)) * np.uint64(streams.GOLDEN)
    for grp in model.groups:
        n = grp.holders.shape[1]
        # (C, G) per-(run, node) stream states, then (C, G, n) draws.
        states = streams.mix64_array(offsets[:, None] + grp.bases[None, :])
        k = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(streams.GOLDEN)
        keys = streams.mix64_array(states[:, :, None] + k[None, None, :])
        order = np.argsort(keys, axis=2, kind="stable")
        fr = np.take_along_axis(np.broadcast_to(grp.fractions, keys.shape), order, axis=2)
        pos = np.argmax(np.cumsum(fr, axis=2) > margin, axis=2)
        picked = np.take_along_axis(order, pos[:, :, None], axis=2)[:, :, 0]
        ctrl[:, grp.nodes] = np.take_along_axis(
            np.broadcast_to(grp.holders, order.shape[:2] + (n,)), picked[:, :, None], axis=2
        )[:, :, 0]
    return ctrl


def _cycle_tables(ctrl: np.ndarray, is_root: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per run: which nodes lie on a control cycle, and each cycle's smallest member."""
    n_nodes = ctrl.shape[1]
    steps = max(1, math.ceil(math.log2(max(n_nodes, 2))))
    jump = ctrl
    low = np.minimum(ctrl, np.arange(n_nodes)[None, :])
    for _ in range(steps):
        low = np.minimum(low, np.take_along_axis(low, jump, axis=1))
        jump = np.take_along_axis(jump, jump, axis=1)
    # After 2**steps >= N hops every walk sits on a cycle or a root.
    on_cycle = np.zeros(ctrl.shape, dtype=bool)
    rows = np.broadcast_to(np.arange(ctrl.shape[0])[:, None], ctrl.shape)
    on_cycle[rows, jump] = True
    on_cycle &= ~is_root[None, :]
    return on_cycle, low


def _count_matrix(rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]) -> sp.csr_matrix:
    if shape[0] * shape[1] <= _DENSE_COUNT_LIMIT:
        dense = np.bincount(rows * shape[1] + cols, minlength=shape[0] * shape[1])
        return sp.csr_matrix(dense.reshape(shape).astype(np.int64))
    data = np.ones(len(rows), dtype=np.int64)
    return sp.coo_matrix((data, (rows, cols)), shape=shape).tocsr()


def _simulate_chunk(model: _Model, start: int, stop: int):
    ctrl = _draw_controllers(model, start, stop)
    n_runs, n_nodes = ctrl.shape
    n_cols = len(model.targets)
    shape = (n_nodes, n_cols)

    npi_rows, npi_cols, npf_rows, npf_cols = [], [], [], []
    tracked_runs, tracked_ctrl = [], []

    if len(model.root_targets):
        cols = np.tile(model.root_targets, n_runs)
        rows = model.targets[cols]
        npi_rows.append(rows), npi_cols.append(cols)
        npf_rows.append(rows), npf_cols.append(cols)
        keep = model.tracked[cols]
        tracked_runs.append(np.repeat(np.arange(n_runs), len(model.root_targets))[keep])
        tracked_ctrl.append(rows[keep])

    if len(model.held_targets):
        if not model.acyclic:
            on_cycle, low = _cycle_tables(ctrl, model.is_root)
        run = np.repeat(np.arange(n_runs), len(model.held_targets))
        col = np.tile(model.held_targets, n_runs)
        cur = ctrl[run, model.targets[col]]
        while len(cur):
            npf_rows.append(cur), npf_cols.append(col)
            at_root = model.is_root[cur]
            if model.acyclic:
                done = at_root
                ultimate = cur[done]
            else:
                at_cycle = on_cycle[run, cur]
                done = at_root | at_cycle
                rep = np.where(at_cycle, low[run, cur], cur)
                extra = at_cycle & (rep != cur)
                npf_rows.append(rep[extra]), npf_cols.append(col[extra])
                ultimate = rep[done]
            npi_rows.append(ultimate), npi_cols.append(col[done])
            keep = model.tracked[col[done]]
            tracked_runs.append(run[done][keep]), tracked_ctrl.append(ultimate[keep])
            live = ~done
            run, col = run[live], col[live]
            cur = ctrl[run, cur[live]]

    cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)  # noqa: E731
    tnpi = _count_matrix(cat(npi_rows), cat(npi_cols), shape)
    tnpf = _count_matrix(cat(npf_rows), cat(npf_cols), shape)
    # Per-run controlled counts N_i(t), summed over the chunk's runs.
    per_run = np.zeros((n_runs, n_nodes), dtype=np.int64)
    np.add.at(per_run, (cat(tracked_runs), cat(tracked_ctrl)), 1)
    return tnpi, tnpf, per_run.sum(axis=0)


def _chunks(runs: int, n_nodes: int, chunk_runs: int | None) -> list[tuple[int, int]]:
    size = chunk_runs or max(64, min(8192, _CHUNK_CELLS // max(n_nodes, 1)))
    return [(s, min(s + size, runs)) for s in range(0, runs, size)]


def _run_chunks(model: _Model, bounds: list[tuple[int, int]], workers: int):
    if workers <= 1 or len(bounds) == 1:
        return [_simulate_chunk(model, a, b) for a, b in bounds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_simulate_chunk, model, a, b) for a, b in bounds]
        return [f.result() for f in futures]


def run_simulation(
    graph: OwnershipGraph,
    config: McConfig,
    workers: int = 1,
    track: Iterable[str] | None = None,
    chunk_runs: int | None = None,
) -> PowerEstimates:
    """Estimate T-NPI and T-NPF for every held node and every firm of ``graph``.

    ``graph`` must be imputed. ``track`` lists sector firms for which per-run
    controlled-firm counts are accumulated separately (a cross-check on the
    aggregate index). Output does not depend on ``workers`` or ``chunk_runs``.
    """
    model = _build_model(graph, config, track)
    bounds = _chunks(int(config.runs), len(model.ids), chunk_runs)
    parts = _run_chunks(model, bounds, workers)
    # Integer counts: merge order cannot change the result.
    tnpi = parts[0][0]
    tnpf = parts[0][1]
    tracked = parts[0][2].copy()
    for a, b, c in parts[1:]:
        tnpi = tnpi + a
        tnpf = tnpf + b
        tracked += c
    tnpi.eliminate_zeros()
    tnpf.eliminate_zeros()
    firms = tuple(model.ids[k] for k in model.targets)
    return PowerEstimates(
        investors=model.ids,
        firms=firms,
        tnpi_counts=tnpi.tocsr(),
        tnpf_counts=tnpf.tocsr(),
        runs=int(config.runs),
        tracked_firms=tuple(f for f, t in zip(firms, model.tracked) if t),
        controlled_count_sums=tracked if track is not None else None,
    )


def simulate_assignments(graph: OwnershipGraph, config: McConfig, start: int, stop: int) -> list[dict[str, str]]:
    """Direct-controller assignments the engine uses for runs ``start..stop-1``."""
    model = _build_model(graph, config, None)
    ctrl = _draw_controllers(model, start, stop)
    held = np.flatnonzero(~model.is_root)
    return [{model.ids[j]: model.ids[row[j]] for j in held} for row in ctrl]


def register_graph(holders: Sequence[tuple[str, float]], target: str = "target") -> OwnershipGraph:
    """One-firm graph whose register is ``holders``; handy for oracle checks."""
    nodes = [NodeRecord(target, target, FIRM)] + [NodeRecord(h, h, PRIVATE) for h, _ in holders]
    return OwnershipGraph.build(nodes, [(h, target, f) for h, f in holders if f > 0])
