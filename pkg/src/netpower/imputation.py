"""Completion of partial shareholder registers before power estimation.

Three policies are available:

* ``s1`` renormalizes the recorded stakes so they sum to one;
* ``s2`` assigns the missing mass to an "ocean" of equal synthetic holders;
* ``s4`` hands the missing mass to the private investors on the register in
  proportion to their stakes, leaving state and municipal holders untouched.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from .errors import InputError, OverSubscriptionError
from .graph import (
    FLOAT,
    INVESTOR_KINDS,
    OVERSUBSCRIPTION_TOL,
    PRIVATE,
    NodeRecord,
    OwnershipGraph,
)

logger = logging.getLogger(__name__)

S1 = "s1"
S2 = "s2"
S4 = "s4"
SCENARIO_LABELS = {
    S1: "S1-renormalize",
    S2: "S2-ocean",
    S4: "S4-private-proportional",
}

# Missing mass at or below this is treated as a complete register.
MISSING_TOL = 1e-9


class ClassificationMissingError(InputError):
    pass


@dataclass(frozen=True)
class ImputationScenario:
    variant: str = S4
    ocean_slices: int = 100

    def __post_init__(self):
        v = self.variant.lower()
        for key, label in SCENARIO_LABELS.items():
            if v in (key, label.lower()):
                object.__setattr__(self, "variant", key)
                break
        else:
            raise InputError(f"unknown imputation scenario {self.variant!r}")
        if int(self.ocean_slices) < 1:
            raise InputError("ocean_slices must be >= 1")

    @property
    def label(self) -> str:
        return SCENARIO_LABELS[self.variant]


def float_node_id(node: str, k: int) -> str:
    return f"{node}#float{k}"


def _ocean(node: str, missing: float, slices: int) -> list[tuple[str, float]]:
    share = missing / slices
    return [(float_node_id(node, k), share) for k in range(1, slices + 1)]


def impute(graph: OwnershipGraph, scenario: ImputationScenario | str) -> OwnershipGraph:
    """Return a copy of ``graph`` where every held node's register sums to one.

    Nodes without shareholders are left alone; they are root investors.
    """
    if isinstance(scenario, str):
        scenario = ImputationScenario(scenario)
    if scenario.variant == S4:
        _check_classified(graph)

    nodes = dict(graph.nodes)
    edges: dict[tuple[str, str], float] = {}
    for j in graph.held_nodes():
        register = graph.holders(j)
        known = math.fsum(f for _, f in register)
        if known > 1.0 + OVERSUBSCRIPTION_TOL:
            raise OverSubscriptionError(j, known)
        missing = 1.0 - known
        if abs(missing) <= MISSING_TOL:
            completed = register
        elif missing < 0.0 or scenario.variant == S1:
            # Negative branch absorbs the small over-subscription tolerated at load.
            completed = [(h, f / known) for h, f in register]
        elif scenario.variant == S2:
            completed = register + _ocean(j, missing, scenario.ocean_slices)
        else:
            private = math.fsum(f for h, f in register if graph.nodes[h].kind == PRIVATE)
            if private > 0.0:
                completed = [
                    (h, f + missing * (f / private) if graph.nodes[h].kind == PRIVATE else f)
                    for h, f in register
                ]
            else:
                logger.warning("%s has no private holders; applying the S2 ocean instead", j)
                completed = register + _ocean(j, missing, scenario.ocean_slices)
        for h, f in completed:
            if h not in nodes:
                nodes[h] = NodeRecord(h, "dispersed float", FLOAT, "unknown")
            edges[(h, j)] = f
    return OwnershipGraph(nodes, edges, graph.year)


def _check_classified(graph: OwnershipGraph) -> None:
    if not graph.edges:
        return
    holder_kinds = {graph.nodes[h].kind for h, _ in graph.edges}
    if not holder_kinds & set(INVESTOR_KINDS):
        raise ClassificationMissingError(
            "s4 needs investor classifications, but no shareholder is typed as an investor"
        )


@dataclass(frozen=True)
class ImputationRecord:
    node: str
    missing_mass: float
    scenario: str
    synthetic_added: int
    synthetic_fraction: float
    fallback: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def imputation_report(
    before: OwnershipGraph,
    after: OwnershipGraph,
    scenario: ImputationScenario | str,
) -> dict:
    """Summarize what :func:`impute` changed, one record per deficient node."""
    if isinstance(scenario, str):
        scenario = ImputationScenario(scenario)
    extra = set(after.nodes) - set(before.nodes)
    bad = sorted(n for n in extra if after.nodes[n].kind != FLOAT)
    if bad:
        raise InputError(f"node {bad[0]!r} appears after imputation but is not synthetic")
    records = []
    for j in before.held_nodes():
        missing = 1.0 - before.incoming_sum(j)
        if abs(missing) <= MISSING_TOL:
            continue
        synthetic = [f for h, f in after.holders(j) if h in extra]
        records.append(
            ImputationRecord(
                node=j,
                missing_mass=missing,
                scenario=scenario.label,
                synthetic_added=len(synthetic),
                synthetic_fraction=synthetic[0] if synthetic else 0.0,
                fallback=scenario.variant == S4 and bool(synthetic),
            )
        )
    return {
        "scenario": scenario.label,
        "ocean_slices": scenario.ocean_slices,
        "records": [r.as_dict() for r in records],
    }
