"""Command-line entry point: ``netpower <subcommand> ...``.

Every analytics command writes its outputs together with one JSON manifest
recording tool version, input digests and every setting that affects the
numbers. Outputs are staged and only moved into ``--out-dir`` once the whole
command has succeeded. Failures print one JSON object on stderr::

    {"status": "input error", "stage": "load", "message": "..."}
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import datetime as _dt
import hashlib
import io
import json
import logging
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from . import __version__
from .aggregate import (
    AggregateIndices,
    SectorSpec,
    aggregate_indices,
    load_sector,
    sector_weights,
)
from .errors import EXIT_CODES, INPUT_ERROR, NUMERIC_ERROR, OK, InputError, NetPowerError, NumericError, ParseError
from .graph import (
    OwnershipGraph,
    export_graph,
    graph_stats,
    graph_to_csv_text,
    load_graph,
    parse_fraction,
)
from .groups import GroupReport, group_scan
from .imputation import ImputationScenario, impute, imputation_report
from .power import (
    McConfig,
    PowerEstimates,
    binomial_se,
    exact_power,
    register_graph,
    run_simulation,
    standard_error,
)

logger = logging.getLogger("netpower")

POWER_HEADER = ["investor_id", "firm_id", "tnpi", "tnpf", "se_tnpi"]
AGGREGATE_HEADER = ["investor_id", "a_npi", "a_npi_weighted", "a_npf_unweighted", "a_npf_weighted"]
EXPORT_SUFFIX = {"dot": "dot", "graphml": "graphml", "json": "json"}


# -- configuration ------------------------------------------------------------


@dataclasses.dataclass
class PipelineConfig:
    nodes: str | None = None
    edges: str | None = None
    sector: str | None = None
    year: int = 0
    scenario: str = "s4"
    ocean_slices: int = 100
    runs: int = 100_000
    seed: int = 0
    threshold: float = 0.5
    size_variable: str = "total_assets"
    ebit_floor: float | None = None
    workers: int = 1
    out_dir: str = "out"
    format: str = "json"

    @classmethod
    def from_sources(cls, config_file: str | None, overrides: dict[str, Any]) -> "PipelineConfig":
        """Values from the JSON ``config_file``, overridden by non-None flags."""
        known = {f.name for f in dataclasses.fields(cls)}
        values: dict[str, Any] = {}
        if config_file:
            try:
                raw = json.loads(Path(config_file).read_text(encoding="utf-8"))
            except OSError as exc:
                raise InputError(f"cannot read config {config_file}: {exc.strerror or exc}") from exc
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", config_file, exc.lineno) from exc
            unknown = sorted(set(raw) - known)
            if unknown:
                raise InputError(f"unknown config key {unknown[0]!r}")
            values.update(raw)
        values.update({k: v for k, v in overrides.items() if k in known and v is not None})
        return cls(**values)


# -- output staging and manifests ------------------------------------------------


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return "sha256:" + h.hexdigest()


class Outputs:
    """Collects output files in a staging area; commits them all at once."""

    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)
        self._staging = Path(tempfile.mkdtemp(prefix="netpower-"))
        self.files: list[str] = []

    def write(self, name: str, data: bytes | str) -> None:
        if isinstance(data, str):
            data = data.encode("utf-8")
        (self._staging / name).write_bytes(data)
        self.files.append(name)

    def commit(self, manifest_name: str, manifest: dict) -> list[Path]:
        manifest = dict(manifest, outputs=sorted(self.files))
        self.write(manifest_name, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        self.out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for name in self.files:
            dest = self.out_dir / name
            shutil.move(str(self._staging / name), dest)
            written.append(dest)
        self.discard()
        return written

    def discard(self) -> None:
        shutil.rmtree(self._staging, ignore_errors=True)


def build_manifest(command: str, inputs: dict[str, str | None], settings: dict[str, Any]) -> dict:
    return {
        "tool": "netpower",
        "version": __version__,
        "command": command,
        "inputs": {k: {"path": str(v), "digest": file_digest(v)} for k, v in sorted(inputs.items()) if v},
        "settings": settings,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


# -- serialization helpers ---------------------------------------------------------


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def estimates_csv(estimates: PowerEstimates) -> str:
    se_npi, _ = standard_error(estimates)
    se_npi = se_npi.todok()
    rows = []
    for inv, firm, p_i, p_f in estimates.cells():
        se = float(se_npi.get((estimates.investor_index(inv), estimates.firm_index(firm)), 0.0))
        rows.append((inv, firm, float(p_i), float(p_f), se))
    return _csv_text(POWER_HEADER, rows)


def aggregate_csv(indices: AggregateIndices) -> str:
    return _csv_text(
        AGGREGATE_HEADER,
        (
            (r.investor, float(r.a_npi), float(r.a_npi_weighted), float(r.a_npf_unweighted), float(r.a_npf_weighted))
            for r in indices.rows
        ),
    )


def read_estimates_csv(path: str | Path, runs: int) -> PowerEstimates:
    """Rebuild run counts from a ``power`` CSV produced with ``runs`` runs."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    reader = csv.reader(io.StringIO(text))
    if next(reader, None) != POWER_HEADER:
        raise ParseError("bad header, expected " + ",".join(POWER_HEADER), str(path), 1)
    cells = []
    for row in reader:
        if len(row) != len(POWER_HEADER):
            raise ParseError("wrong column count", str(path), reader.line_num)
        try:
            cells.append((row[0], row[1], float(row[2]), float(row[3])))
        except ValueError:
            raise ParseError("non-numeric probability", str(path), reader.line_num) from None
    investors = tuple(sorted({c[0] for c in cells} | {c[1] for c in cells}))
    firms = tuple(sorted({c[1] for c in cells}))
    inv_idx = {n: k for k, n in enumerate(investors)}
    firm_idx = {n: k for k, n in enumerate(firms)}
    rows = [inv_idx[c[0]] for c in cells]
    cols = [firm_idx[c[1]] for c in cells]
    shape = (len(investors), len(firms))
    npi = sp.csr_matrix((np.rint(np.array([c[2] for c in cells]) * runs).astype(np.int64), (rows, cols)), shape=shape)
    npf = sp.csr_matrix((np.rint(np.array([c[3] for c in cells]) * runs).astype(np.int64), (rows, cols)), shape=shape)
    npi.eliminate_zeros()
    return PowerEstimates(investors, firms, npi, npf, runs)


def read_indices_csv(path: str | Path) -> dict[str, dict[str, float]]:
    """Annotations ``{investor: {npi, npf}}`` from an ``aggregate`` CSV (weighted columns)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != AGGREGATE_HEADER:
            raise ParseError("bad header, expected " + ",".join(AGGREGATE_HEADER), str(path), 1)
        return {
            row["investor_id"]: {"npi": float(row["a_npi_weighted"]), "npf": float(row["a_npf_weighted"])}
            for row in reader
        }


def read_register(path: str | Path) -> list[tuple[str, float]]:
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.reader(fh)
        if [c.strip() for c in next(reader, [])] != ["holder_id", "fraction"]:
            raise ParseError("bad header, expected holder_id,fraction", str(path), 1)
        out = []
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise ParseError("expected 2 columns", str(path), reader.line_num)
            out.append((row[0].strip(), parse_fraction(row[1].strip(), str(path), reader.line_num)))
    return out


# -- stage tracking -------------------------------------------------------------------


class _Stage:
    name = "setup"


@contextlib.contextmanager
def stage(name: str) -> Iterator[None]:
    prev, _Stage.name = _Stage.name, name
    yield
    _Stage.name = prev


def _load(cfg: PipelineConfig) -> OwnershipGraph:
    if not cfg.nodes or not cfg.edges:
        raise InputError("--nodes and --edges are required")
    with stage("load"):
        return load_graph(cfg.nodes, cfg.edges, cfg.year)


def _scenario(cfg: PipelineConfig) -> ImputationScenario:
    return ImputationScenario(cfg.scenario, int(cfg.ocean_slices))


def _mc(cfg: PipelineConfig) -> McConfig:
    return McConfig(runs=int(cfg.runs), threshold=float(cfg.threshold), master_seed=int(cfg.seed))


def _sector(cfg: PipelineConfig, graph: OwnershipGraph) -> SectorSpec:
    if not cfg.sector:
        raise InputError("--sector is required")
    with stage("sector"):
        spec = load_sector(cfg.sector, cfg.size_variable, cfg.ebit_floor)
        spec.check_against(graph)
    return spec


def _mc_settings(cfg: PipelineConfig) -> dict:
    return {
        "scenario": _scenario(cfg).label,
        "ocean_slices": int(cfg.ocean_slices),
        "runs": int(cfg.runs),
        "threshold": float(cfg.threshold),
        "master_seed": int(cfg.seed),
        "year": int(cfg.year),
    }


# -- subcommands ------------------------------------------------------------------------


def cmd_ingest(cfg: PipelineConfig, args) -> int:
    graph = _load(cfg)
    summary = {
        "year": graph.year,
        "nodes": len(graph.nodes),
        "edges": len(graph.edges),
        "held_nodes": len(graph.held_nodes()),
        "incomplete_registers": sum(1 for j in graph.held_nodes() if graph.incoming_sum(j) < 1 - 1e-9),
        "fingerprint": graph.fingerprint(),
    }
    print(json.dumps(summary, indent=2))
    return 0


def cmd_stats(cfg: PipelineConfig, args) -> int:
    graph = _load(cfg)
    print(json.dumps(graph_stats(graph).as_dict(), indent=2))
    return 0


def cmd_impute(cfg: PipelineConfig, args) -> int:
    graph = _load(cfg)
    scenario = _scenario(cfg)
    with stage("impute"):
        imputed = impute(graph, scenario)
        report = imputation_report(graph, imputed, scenario)
    out = Outputs(cfg.out_dir)
    nodes_text, edges_text = graph_to_csv_text(imputed)
    out.write("imputed_nodes.csv", nodes_text)
    out.write("imputed_edges.csv", edges_text)
    out.write("imputation.json", json.dumps(report, indent=2) + "\n")
    manifest = build_manifest(
        "impute",
        {"nodes": cfg.nodes, "edges": cfg.edges},
        {"scenario": scenario.label, "ocean_slices": scenario.ocean_slices, "year": cfg.year},
    )
    out.commit("impute.manifest.json", manifest)
    return 0


def _simulate(cfg: PipelineConfig, graph: OwnershipGraph, track=None):
    scenario = _scenario(cfg)
    with stage("impute"):
        imputed = impute(graph, scenario)
        report = imputation_report(graph, imputed, scenario)
    with stage("simulate"):
        estimates = run_simulation(imputed, _mc(cfg), workers=int(cfg.workers), track=track)
    return imputed, report, estimates


def cmd_power(cfg: PipelineConfig, args) -> int:
    graph = _load(cfg)
    imputed, _, estimates = _simulate(cfg, graph)
    out = Outputs(cfg.out_dir)
    out.write("power.csv", estimates_csv(estimates))
    manifest = build_manifest(
        "power",
        {"nodes": cfg.nodes, "edges": cfg.edges},
        dict(_mc_settings(cfg), graph_fingerprint=imputed.fingerprint()),
    )
    out.commit("power.manifest.json", manifest)
    return 0


def _aggregate_manifest_settings(cfg, spec: SectorSpec, weights) -> dict:
    return dict(
        _mc_settings(cfg),
        size_variable=spec.size_variable_name,
        ebit_floor=cfg.ebit_floor,
        sector_firms=list(spec.firms),
        excluded_firms=list(spec.excluded),
        weights={f: weights[f] for f in spec.firms},
    )


def cmd_aggregate(cfg: PipelineConfig, args) -> int:
    inputs = {"sector": cfg.sector}
    if args.estimates:
        runs = cfg.runs if args.runs_explicit else None
        prior = Path(args.estimates).with_name("power.manifest.json")
        if prior.exists():
            # Echo the settings the estimates were produced with.
            settings = json.loads(prior.read_text(encoding="utf-8"))["settings"]
            runs = runs or settings["runs"]
            cfg.scenario = ImputationScenario(settings["scenario"]).variant
            cfg.ocean_slices = settings["ocean_slices"]
            cfg.threshold = settings["threshold"]
            cfg.seed = settings["master_seed"]
        if not runs:
            raise InputError("run count unknown: pass --runs or keep power.manifest.json next to the estimates")
        cfg.runs = int(runs)
        if not cfg.sector:
            raise InputError("--sector is required")
        with stage("sector"):
            spec = load_sector(cfg.sector, cfg.size_variable, cfg.ebit_floor)
        with stage("load"):
            estimates = read_estimates_csv(args.estimates, cfg.runs)
        inputs["estimates"] = args.estimates
    else:
        graph = _load(cfg)
        spec = _sector(cfg, graph)
        _, _, estimates = _simulate(cfg, graph)
        inputs.update(nodes=cfg.nodes, edges=cfg.edges)
    with stage("aggregate"):
        weights = sector_weights(spec)
        indices = aggregate_indices(estimates, spec, weights)
    out = Outputs(cfg.out_dir)
    out.write("aggregate.csv", aggregate_csv(indices))
    out.commit(
        "aggregate.manifest.json",
        build_manifest("aggregate", inputs, _aggregate_manifest_settings(cfg, spec, weights)),
    )
    return 0


def _group_rows(entries) -> tuple[str, str]:
    payload = [e.as_dict() for e in entries]
    rows = []
    for e in entries:
        if isinstance(e, GroupReport):
            rows.append((e.target, e.leader or "", e.count, float(e.aggregated_share), ";".join(e.members), ""))
        else:
            rows.append((e.target, "", 0, 0.0, "", e.message))
    text = _csv_text(["target", "leader", "count", "aggregated_share", "members", "error"], rows)
    return json.dumps(payload, indent=2) + "\n", text


def cmd_groups(cfg: PipelineConfig, args) -> int:
    graph = _load(cfg)
    if args.post_imputation:
        with stage("impute"):
            graph = impute(graph, _scenario(cfg))
    if args.all_firms:
        targets = [f for f in graph.firms() if graph.has_holders(f)]
    elif args.target:
        targets = list(args.target)
    else:
        raise InputError("pass --target ID (repeatable) or --all-firms")
    with stage("groups"):
        entries = group_scan(graph, targets)
    js, text = _group_rows(entries)
    out = Outputs(cfg.out_dir)
    out.write("groups.json", js)
    out.write("groups.csv", text)
    settings = {"targets": targets, "post_imputation": bool(args.post_imputation), "year": cfg.year}
    if args.post_imputation:
        settings.update(scenario=_scenario(cfg).label, ocean_slices=int(cfg.ocean_slices))
    out.commit("groups.manifest.json", build_manifest("groups", {"nodes": cfg.nodes, "edges": cfg.edges}, settings))
    return 0


def cmd_export(cfg: PipelineConfig, args) -> int:
    graph = _load(cfg)
    annotations = {}
    if args.indices:
        with stage("export"):
            annotations = {k: v for k, v in read_indices_csv(args.indices).items() if k in graph.nodes}
    with stage("export"):
        data = export_graph(graph, annotations, cfg.format)
    if args.output:
        Path(args.output).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
    return 0


def cmd_pipeline(cfg: PipelineConfig, args) -> int:
    graph = _load(cfg)
    spec = _sector(cfg, graph)
    with stage("stats"):
        stats = graph_stats(graph)
    imputed, report, estimates = _simulate(cfg, graph)
    with stage("aggregate"):
        weights = sector_weights(spec)
        indices = aggregate_indices(estimates, spec, weights)
    with stage("export"):
        annotations = {
            r.investor: {"npi": r.a_npi_weighted, "npf": r.a_npf_weighted} for r in indices.rows
        }
        exported = export_graph(imputed, annotations, cfg.format)
    out = Outputs(cfg.out_dir)
    out.write("stats.json", json.dumps(stats.as_dict(), indent=2) + "\n")
    out.write("imputation.json", json.dumps(report, indent=2) + "\n")
    out.write("power.csv", estimates_csv(estimates))
    out.write("aggregate.csv", aggregate_csv(indices))
    out.write(f"graph.{EXPORT_SUFFIX[cfg.format]}", exported)
    settings = dict(
        _aggregate_manifest_settings(cfg, spec, weights),
        format=cfg.format,
        graph_fingerprint=imputed.fingerprint(),
    )
    out.commit(
        "manifest.json",
        build_manifest("pipeline", {"nodes": cfg.nodes, "edges": cfg.edges, "sector": cfg.sector}, settings),
    )
    return 0


def cmd_oracle_check(cfg: PipelineConfig, args) -> int:
    with stage("load"):
        register = read_register(args.holders)
    with stage("oracle"):
        exact = exact_power(register, float(cfg.threshold))
        est = run_simulation(register_graph(register), _mc(cfg))
        mc = est.tnpi_column("target")
    ok = True
    print(f"{'holder':<16}{'fraction':>10}{'exact':>12}{'mc':>12}{'se':>12}  result")
    for holder, frac in register:
        p, q = exact[holder], mc.get(holder, 0.0)
        se = binomial_se(p, est.runs)
        # An exactly-zero SE only allows an exact match.
        hit = abs(q - p) <= 3 * se + 1e-15
        ok &= hit
        print(f"{holder:<16}{frac:>10.4f}{p:>12.6f}{q:>12.6f}{se:>12.6f}  {'pass' if hit else 'FAIL'}")
    print(f"oracle check: {'pass' if ok else 'FAIL'} (runs={est.runs}, threshold={cfg.threshold}, seed={cfg.seed})")
    if not ok:
        raise NumericError("Monte Carlo estimate outside 3 standard errors of the exact value")
    return 0


# -- argument parsing -------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, *, graph=True, sector=False, mc=False, out=False) -> None:
    p.add_argument("--config", help="JSON file with pipeline settings; flags override it")
    if graph:
        p.add_argument("--nodes", help="nodes CSV (id,name,kind,country)")
        p.add_argument("--edges", help="edges CSV (holder_id,held_id,fraction)")
        p.add_argument("--year", type=int)
    if sector:
        p.add_argument("--sector", help="sector CSV (firm_id,size_value[,ebit])")
        p.add_argument("--size-variable", dest="size_variable")
        p.add_argument("--ebit-floor", dest="ebit_floor", type=float)
    if mc:
        p.add_argument("--scenario", choices=["s1", "s2", "s4"])
        p.add_argument("--ocean-slices", dest="ocean_slices", type=int)
        p.add_argument("--runs", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--threshold", type=float)
        p.add_argument("--workers", type=int)
    if out:
        p.add_argument("--out-dir", dest="out_dir")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="netpower", description="Corporate control indices on ownership networks")
    ap.add_argument("--version", action="version", version=f"netpower {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate input files and summarize the graph")
    _common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="descriptive graph statistics")
    _common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("impute", help="complete shareholder registers")
    _common(p, mc=True, out=True)
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("power", help="Monte Carlo T-NPI / T-NPF estimates")
    _common(p, mc=True, out=True)
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("aggregate", help="sector A-NPI / A-NPF")
    _common(p, sector=True, mc=True, out=True)
    p.add_argument("--estimates", help="power.csv from a previous 'power' run")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("groups", help="dominant corporate group per target")
    _common(p, mc=True, out=True)
    p.add_argument("--target", action="append")
    p.add_argument("--all-firms", action="store_true")
    p.add_argument("--post-imputation", action="store_true", help="run on the imputed graph")
    p.set_defaults(func=cmd_groups)

    p = sub.add_parser("export", help="export the graph with index annotations")
    _common(p)
    p.add_argument("--format", choices=sorted(EXPORT_SUFFIX))
    p.add_argument("--indices", help="aggregate.csv supplying npi/npf annotations")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("pipeline", help="load, impute, simulate, aggregate and export")
    _common(p, sector=True, mc=True, out=True)
    p.add_argument("--format", choices=sorted(EXPORT_SUFFIX))
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("oracle-check", help="compare Monte Carlo pivot shares with exact enumeration")
    p.add_argument("--config")
    p.add_argument("--holders", required=True, help="register CSV (holder_id,fraction), at most 10 rows")
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_oracle_check)
    return ap


def _fail(status: str, message: str) -> int:
    sys.stderr.write(json.dumps({"status": status, "stage": _Stage.name, "message": message}) + "\n")
    return EXIT_CODES[status]


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    _Stage.name = "setup"
    overrides = {k: v for k, v in vars(args).items() if k not in ("func", "command", "config")}
    args.runs_explicit = getattr(args, "runs", None) is not None
    try:
        cfg = PipelineConfig.from_sources(args.config, overrides)
        status = args.func(cfg, args)
    except NetPowerError as exc:
        return _fail(exc.status, str(exc))
    except OSError as exc:
        return _fail(INPUT_ERROR, f"{exc.filename or ''}: {exc.strerror or exc}")
    except (OverflowError, FloatingPointError) as exc:
        return _fail(NUMERIC_ERROR, str(exc))
    return status if status is not None else EXIT_CODES[OK]


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
