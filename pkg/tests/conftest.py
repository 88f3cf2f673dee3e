from __future__ import annotations

from importlib import resources
from pathlib import Path

import pytest

from netpower.graph import FIRM, PRIVATE, NodeRecord, OwnershipGraph


DATA = Path(str(resources.files("netpower") / "data"))


@pytest.fixture
def fixture_paths():
    return {
        "nodes": DATA / "fixture_nodes.csv",
        "edges": DATA / "fixture_edges.csv",
        "sector": DATA / "fixture_sector.csv",
    }


def make_graph(edges, kinds=None, year=0):
    """Graph from ``(holder, held, fraction)`` triples; nodes default to firms."""
    kinds = kinds or {}
    ids = sorted({e[0] for e in edges} | {e[1] for e in edges} | set(kinds))
    nodes = [NodeRecord(n, n, kinds.get(n, FIRM)) for n in ids]
    return OwnershipGraph.build(nodes, edges, year)


@pytest.fixture
def chain_graph():
    # A -> B -> C, each a 100% stake.
    return make_graph([("A", "B", 1.0), ("B", "C", 1.0)], kinds={"A": PRIVATE})


@pytest.fixture
def toy_group_graph():
    """Five-node example: L owns H1 and H2, which hold T; X is an outside root."""
    return make_graph(
        [
            ("L", "H1", 1.0),
            ("L", "H2", 1.0),
            ("H1", "T", 0.10),
            ("H2", "T", 0.15),
            ("X", "T", 0.30),
        ],
        kinds={"L": PRIVATE, "X": PRIVATE},
    )


def write_csv(path: Path, header: str, rows) -> Path:
    lines = [header] + [",".join(str(c) for c in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# Acceptance outcomes, printed once at the end of the session.
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
