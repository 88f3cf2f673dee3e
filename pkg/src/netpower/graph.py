"""Ownership network data model, CSV ingestion, descriptive statistics, export."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping
from xml.sax.saxutils import quoteattr

import networkx as nx

from .errors import (
    InputError,
    ParseError,
    OverSubscriptionError,
    ReferentialIntegrityError,
)

logger = logging.getLogger(__name__)

FIRM = "firm"
PRIVATE = "investor-private"
STATE = "investor-state"
MUNICIPAL = "investor-municipal"
FLOAT = "float-synthetic"
KINDS = (FIRM, PRIVATE, STATE, MUNICIPAL, FLOAT)
INVESTOR_KINDS = (PRIVATE, STATE, MUNICIPAL)

# Tolerance above 1 for a register's total before it is rejected.
OVERSUBSCRIPTION_TOL = 1e-6

NODE_HEADER = ["id", "name", "kind", "country"]
EDGE_HEADER = ["holder_id", "held_id", "fraction"]
EXPORT_FORMATS = ("dot", "graphml", "json")


@dataclass(frozen=True)
class NodeRecord:
    id: str
    name: str = ""
    kind: str = FIRM
    country: str = "unknown"

    def __post_init__(self):
        if not self.id:
            raise InputError("node id must be non-empty")
        if self.kind not in KINDS:
            raise InputError(f"node {self.id!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class OwnershipEdge:
    holder: str
    held: str
    fraction: float


@dataclass(frozen=True, eq=False)
class OwnershipGraph:
    """Immutable snapshot of an ownership network for one year.

    ``edges`` maps ``(holder, held)`` to the equity fraction held. Use
    :meth:`build` to construct from loose records; the constructor validates
    but does not merge or drop anything.
    """

    nodes: Mapping[str, NodeRecord]
    edges: Mapping[tuple[str, str], float]
    year: int = 0
    _holders: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        holders: dict[str, list[tuple[str, float]]] = defaultdict(list)
        for (h, j), frac in self.edges.items():
            if h not in self.nodes:
                raise ReferentialIntegrityError(f"edge {h}->{j}: unknown holder {h!r}")
            if j not in self.nodes:
                raise ReferentialIntegrityError(f"edge {h}->{j}: unknown held node {j!r}")
            if h == j:
                raise InputError(f"self-holding {h}->{j} not allowed")
            if not (frac > 0.0) or math.isnan(frac):
                raise InputError(f"edge {h}->{j}: fraction must be > 0, got {frac!r}")
            holders[j].append((h, frac))
        for j, regs in holders.items():
            regs.sort()
            total = math.fsum(f for _, f in regs)
            if total > 1.0 + OVERSUBSCRIPTION_TOL:
                raise OverSubscriptionError(j, total)
        object.__setattr__(self, "_holders", dict(holders))

    @classmethod
    def build(
        cls,
        nodes: Iterable[NodeRecord],
        edges: Iterable[OwnershipEdge | tuple[str, str, float]],
        year: int = 0,
    ) -> "OwnershipGraph":
        """Construct a graph, dropping self-holdings and summing duplicate pairs."""
        node_map: dict[str, NodeRecord] = {}
        for rec in nodes:
            if rec.id in node_map:
                raise InputError(f"duplicate node id {rec.id!r}")
            node_map[rec.id] = rec
        edge_map: dict[tuple[str, str], float] = {}
        for e in edges:
            h, j, frac = (e.holder, e.held, e.fraction) if isinstance(e, OwnershipEdge) else e
            if h == j:
                logger.warning("dropping self-holding %s->%s (%.6g)", h, j, frac)
                continue
            edge_map[(h, j)] = edge_map.get((h, j), 0.0) + float(frac)
        return cls(node_map, edge_map, int(year))

    # -- queries ---------------------------------------------------------

    def node_ids(self) -> list[str]:
        return sorted(self.nodes)

    def holders(self, node: str) -> list[tuple[str, float]]:
        """Direct shareholders of ``node`` as ``(holder, fraction)``, sorted by id."""
        return list(self._holders.get(node, ()))

    def has_holders(self, node: str) -> bool:
        return node in self._holders

    def held_nodes(self) -> list[str]:
        """Nodes with at least one recorded shareholder, sorted."""
        return sorted(self._holders)

    def incoming_sum(self, node: str) -> float:
        return math.fsum(f for _, f in self._holders.get(node, ()))

    def edge_list(self) -> list[OwnershipEdge]:
        return [OwnershipEdge(h, j, f) for (h, j), f in sorted(self.edges.items())]

    def firms(self) -> list[str]:
        return sorted(n for n, rec in self.nodes.items() if rec.kind == FIRM)

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        for nid in self.node_ids():
            rec = self.nodes[nid]
            g.add_node(nid, name=rec.name, kind=rec.kind, country=rec.country)
        for (h, j), f in sorted(self.edges.items()):
            g.add_edge(h, j, fraction=f)
        return g

    def fingerprint(self) -> str:
        """Content hash of the canonical JSON serialization."""
        return hashlib.sha256(export_graph(self, {}, "json")).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, OwnershipGraph):
            return NotImplemented
        return (
            self.year == other.year
            and dict(self.nodes) == dict(other.nodes)
            and dict(self.edges) == dict(other.edges)
        )

    __hash__ = None


# -- ingestion -------------------------------------------------------------


def _read_rows(path: Path, header: list[str]):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError("empty file, expected header " + ",".join(header), str(path), 1)
        if [c.strip().lstrip("\ufeff") for c in first] != header:
            raise ParseError(
                f"bad header {first!r}, expected {','.join(header)}", str(path), 1
            )
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} columns, got {len(row)}",
                    str(path),
                    reader.line_num,
                )
            yield reader.line_num, [c.strip() for c in row]


def parse_fraction(text: str, path: str | None = None, line: int | None = None) -> float:
    try:
        frac = float(text)
    except ValueError:
        raise ParseError(f"non-numeric fraction {text!r}", path, line) from None
    if not (0.0 < frac <= 1.0):
        raise ParseError(f"fraction {text!r} outside (0, 1]", path, line)
    return frac


def read_nodes(path: str | Path) -> list[NodeRecord]:
    path = Path(path)
    out = []
    for line, (nid, name, kind, country) in _read_rows(path, NODE_HEADER):
        if not nid:
            raise ParseError("empty node id", str(path), line)
        if kind not in KINDS or kind == FLOAT:
            raise ParseError(f"invalid node kind {kind!r}", str(path), line)
        out.append(NodeRecord(nid, name, kind, country or "unknown"))
    return out


def read_edges(path: str | Path) -> list[OwnershipEdge]:
    path = Path(path)
    out = []
    for line, (h, j, frac) in _read_rows(path, EDGE_HEADER):
        if not h or not j:
            raise ParseError("empty node id in edge row", str(path), line)
        out.append(OwnershipEdge(h, j, parse_fraction(frac, str(path), line)))
    return out


def load_graph(nodes_file: str | Path, edges_file: str | Path, year: int = 0) -> OwnershipGraph:
    """Read and validate one yearly snapshot from the node and edge CSV files."""
    nodes = read_nodes(nodes_file)
    edges = read_edges(edges_file)
    known = {n.id for n in nodes}
    for e in edges:
        for end in (e.holder, e.held):
            if end not in known:
                raise ReferentialIntegrityError(
                    f"edge {e.holder}->{e.held} references unknown node {end!r}"
                )
    return OwnershipGraph.build(nodes, edges, year)


def graph_from_json(data: bytes | str | dict, allow_synthetic: bool = True) -> OwnershipGraph:
    """Inverse of ``export_graph(..., "json")``; annotations are ignored."""
    if not isinstance(data, dict):
        data = json.loads(data)
    nodes = []
    for rec in data["nodes"]:
        if rec["kind"] == FLOAT and not allow_synthetic:
            raise InputError(f"synthetic node {rec['id']!r} in input")
        nodes.append(NodeRecord(rec["id"], rec.get("name", ""), rec["kind"], rec.get("country", "unknown")))
    edges = [OwnershipEdge(e["holder"], e["held"], float(e["fraction"])) for e in data["edges"]]
    return OwnershipGraph.build(nodes, edges, int(data.get("year", 0)))


# -- statistics --------------------------------------------------------------


@dataclass(frozen=True)
class GraphStats:
    nodes: int
    edges: int
    density: float
    components: int
    min_degree: int
    max_degree: int
    avg_degree: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def density(n_nodes: int, n_edges: int) -> float:
    """Directed density E / (N (N - 1))."""
    if n_nodes < 2:
        return 0.0
    return n_edges / (n_nodes * (n_nodes - 1))


def average_degree(n_nodes: int, n_edges: int) -> float:
    return 2.0 * n_edges / n_nodes if n_nodes else 0.0


def graph_stats(graph: OwnershipGraph) -> GraphStats:
    n, e = len(graph.nodes), len(graph.edges)
    if n == 0:
        return GraphStats(0, 0, 0.0, 0, 0, 0, 0.0)
    degree = dict.fromkeys(graph.nodes, 0)
    for h, j in graph.edges:
        degree[h] += 1
        degree[j] += 1
    comps = nx.number_weakly_connected_components(graph.to_networkx())
    return GraphStats(
        nodes=n,
        edges=e,
        density=density(n, e),
        components=comps,
        min_degree=min(degree.values()),
        max_degree=max(degree.values()),
        avg_degree=average_degree(n, e),
    )


# -- export --------------------------------------------------------------------


def _annotated_nodes(graph: OwnershipGraph, annotations: Mapping[str, Mapping[str, float]]):
    unknown = sorted(set(annotations) - set(graph.nodes))
    if unknown:
        raise InputError(f"annotation for node not in graph: {unknown[0]!r}")
    for nid in graph.node_ids():
        rec = graph.nodes[nid]
        ann = annotations.get(nid, {})
        yield rec, float(ann.get("npi", 0.0)), float(ann.get("npf", 0.0))


def _dot_id(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def _to_dot(graph: OwnershipGraph, annotations) -> str:
    lines = [f"digraph ownership_{graph.year} {{"]
    for rec, npi, npf in _annotated_nodes(graph, annotations):
        lines.append(
            f"  {_dot_id(rec.id)} [label={_dot_id(rec.name or rec.id)}, kind={_dot_id(rec.kind)}, "
            f"country={_dot_id(rec.country)}, npi={npi!r}, npf={npf!r}];"
        )
    for (h, j), f in sorted(graph.edges.items()):
        lines.append(f"  {_dot_id(h)} -> {_dot_id(j)} [fraction={f!r}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _to_graphml(graph: OwnershipGraph, annotations) -> str:
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<graphml xmlns="http://graphml.graphdrawing.org/xmlns">',
        '  <key id="name" for="node" attr.name="name" attr.type="string"/>',
        '  <key id="kind" for="node" attr.name="kind" attr.type="string"/>',
        '  <key id="country" for="node" attr.name="country" attr.type="string"/>',
        '  <key id="npi" for="node" attr.name="npi" attr.type="double"/>',
        '  <key id="npf" for="node" attr.name="npf" attr.type="double"/>',
        '  <key id="fraction" for="edge" attr.name="fraction" attr.type="double"/>',
        f'  <graph id="ownership_{graph.year}" edgedefault="directed">',
    ]
    for rec, npi, npf in _annotated_nodes(graph, annotations):
        out.append(f"    <node id={quoteattr(rec.id)}>")
        for key, val in (("name", rec.name), ("kind", rec.kind), ("country", rec.country)):
            out.append(f'      <data key="{key}">{_xml_text(val)}</data>')
        out.append(f'      <data key="npi">{npi!r}</data>')
        out.append(f'      <data key="npf">{npf!r}</data>')
        out.append("    </node>")
    for (h, j), f in sorted(graph.edges.items()):
        out.append(f"    <edge source={quoteattr(h)} target={quoteattr(j)}>")
        out.append(f'      <data key="fraction">{f!r}</data>')
        out.append("    </edge>")
    out += ["  </graph>", "</graphml>"]
    return "\n".join(out) + "\n"


def _xml_text(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _to_json(graph: OwnershipGraph, annotations) -> str:
    payload = {
        "year": graph.year,
        "nodes": [
            {
                "id": rec.id,
                "name": rec.name,
                "kind": rec.kind,
                "country": rec.country,
                "npi": npi,
                "npf": npf,
            }
            for rec, npi, npf in _annotated_nodes(graph, annotations)
        ],
        "edges": [
            {"holder": h, "held": j, "fraction": f} for (h, j), f in sorted(graph.edges.items())
        ],
    }
    return json.dumps(payload, indent=1, ensure_ascii=False) + "\n"


def export_graph(
    graph: OwnershipGraph,
    annotations: Mapping[str, Mapping[str, float]] | None = None,
    format: str = "json",
) -> bytes:
    """Serialize ``graph`` with per-node ``npi``/``npf`` annotations.

    Nodes and edges are written in lexicographic id order so that identical
    inputs give identical bytes. Nodes missing from ``annotations`` get zeros.
    """
    writers = {"dot": _to_dot, "graphml": _to_graphml, "json": _to_json}
    if format not in writers:
        raise InputError(f"unknown export format {format!r}; choose from {', '.join(EXPORT_FORMATS)}")
    return writers[format](graph, annotations or {}).encode("utf-8")


def write_graph_csv(graph: OwnershipGraph, nodes_file: str | Path, edges_file: str | Path) -> None:
    """Write the graph back out in the ingestion CSV layout."""
    nodes_text, edges_text = graph_to_csv_text(graph)
    Path(nodes_file).write_text(nodes_text, encoding="utf-8")
    Path(edges_file).write_text(edges_text, encoding="utf-8")


def graph_to_csv_text(graph: OwnershipGraph) -> tuple[str, str]:
    nodes, edges = io.StringIO(), io.StringIO()
    w = csv.writer(nodes, lineterminator="\n")
    w.writerow(NODE_HEADER)
    for nid in graph.node_ids():
        rec = graph.nodes[nid]
        w.writerow([rec.id, rec.name, rec.kind, rec.country])
    w = csv.writer(edges, lineterminator="\n")
    w.writerow(EDGE_HEADER)
    for (h, j), f in sorted(graph.edges.items()):
        w.writerow([h, j, repr(f)])
    return nodes.getvalue(), edges.getvalue()
