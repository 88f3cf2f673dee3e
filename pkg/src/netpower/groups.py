"""Dominant corporate group of a target firm.

For a target, every source node (no shareholders of its own) that can reach
the target is a candidate group leader. A leader's group is the leader plus
everything it can reach. The dominant group is the one containing the most
direct shareholders of the target; ties go to the larger combined stake, then
to the smaller leader id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import networkx as nx

from .errors import InputError, LookupFailure, NetPowerError
from .graph import OwnershipGraph


class EmptyRegisterError(InputError):
    pass


@dataclass(frozen=True)
class GroupReport:
    target: str
    leader: str | None
    members: tuple[str, ...] = ()
    count: int = 0
    aggregated_share: float = 0.0
    candidates: int = 0

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["members"] = list(self.members)
        return d


@dataclass(frozen=True)
class GroupScanError:
    target: str
    status: str
    message: str

    def as_dict(self) -> dict:
        return {"target": self.target, "error": self.status, "message": self.message}


def dominant_group(graph: OwnershipGraph, target: str, _nx: nx.DiGraph | None = None) -> GroupReport:
    if target not in graph.nodes:
        raise LookupFailure(f"target {target!r} is not in the graph")
    register = dict(graph.holders(target))
    if not register:
        raise EmptyRegisterError(f"target {target!r} has no direct shareholders")
    g = _nx if _nx is not None else graph.to_networkx()
    leaders = sorted(a for a in nx.ancestors(g, target) if g.in_degree(a) == 0)
    if not leaders:
        # Every ancestor has an owner: the target sits under a source-less cycle.
        return GroupReport(target, None)
    best = None
    for leader in leaders:
        group = nx.descendants(g, leader) | {leader}
        members = tuple(sorted(h for h in register if h in group))
        share = math.fsum(register[m] for m in members)
        key = (-len(members), -share, leader)
        if best is None or key < best[0]:
            best = (key, leader, members, share)
    _, leader, members, share = best
    return GroupReport(target, leader, members, len(members), share, len(leaders))


def group_scan(graph: OwnershipGraph, targets: Iterable[str]) -> list[GroupReport | GroupScanError]:
    """Run :func:`dominant_group` per target; failures become error entries."""
    g = graph.to_networkx()
    out: list[GroupReport | GroupScanError] = []
    for t in targets:
        try:
            out.append(dominant_group(graph, t, _nx=g))
        except NetPowerError as exc:
            out.append(GroupScanError(t, exc.status, str(exc)))
    return out
