import logging
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_graph
from netpower.errors import InputError
from netpower.graph import FLOAT, MUNICIPAL, PRIVATE, STATE
from netpower.imputation import (
    ClassificationMissingError,
    ImputationScenario,
    impute,
    imputation_report,
)

KINDS = {"State": STATE, "PrivA": PRIVATE, "PrivB": PRIVATE}


@pytest.fixture
def partial():
    return make_graph([("State", "J", 0.30), ("PrivA", "J", 0.20), ("PrivB", "J", 0.10)], kinds=KINDS)


def s4_oracle(register, kinds):
    """Proportional top-up of private stakes, in exact rationals."""
    reg = {h: Fraction(f) for h, f in register.items()}
    missing = 1 - sum(reg.values())
    private = sum(f for h, f in reg.items() if kinds[h] == PRIVATE)
    return {h: f + missing * f / private if kinds[h] == PRIVATE else f for h, f in reg.items()}


def test_s4_worked_example(partial):
    out = impute(partial, "s4")
    got = dict(out.holders("J"))
    assert got["State"] == 0.30
    assert got["PrivA"] == pytest.approx(0.4667, abs=1e-4)
    assert got["PrivB"] == pytest.approx(0.2333, abs=1e-4)
    expected = s4_oracle({"State": 0.30, "PrivA": 0.20, "PrivB": 0.10}, KINDS)
    for h, f in expected.items():
        assert got[h] == pytest.approx(float(f), abs=1e-15)
    assert math.fsum(got.values()) == pytest.approx(1.0, abs=1e-9)
    assert set(out.nodes) == set(partial.nodes)


def test_s1_worked_example(partial):
    got = dict(impute(partial, "s1").holders("J"))
    assert got["State"] == pytest.approx(0.50, abs=1e-12)
    assert got["PrivA"] == pytest.approx(1 / 3, abs=1e-12)
    assert got["PrivB"] == pytest.approx(1 / 6, abs=1e-12)


@pytest.mark.parametrize("variant", ["s1", "s2", "s4"])
def test_complete_register_unchanged(variant):
    g = make_graph([("A", "T", 0.6), ("B", "T", 0.4)], kinds={"A": PRIVATE, "B": STATE})
    out = impute(g, variant)
    assert out == g
    assert imputation_report(g, out, variant)["records"] == []


def test_s2_ocean(partial):
    out = impute(partial, ImputationScenario("s2", ocean_slices=100))
    synthetic = [(h, f) for h, f in out.holders("J") if out.nodes[h].kind == FLOAT]
    assert len(synthetic) == 100
    assert all(f == pytest.approx(0.004, abs=1e-15) for _, f in synthetic)
    assert {h for h, _ in synthetic} == {f"J#float{k}" for k in range(1, 101)}
    report = imputation_report(partial, out, "s2")
    (rec,) = report["records"]
    assert rec["synthetic_added"] == 100
    assert rec["synthetic_fraction"] == pytest.approx(0.004)
    assert rec["missing_mass"] == pytest.approx(0.4)
    assert not rec["fallback"]
    assert report["scenario"] == "S2-ocean"


def test_s4_fallback_flagged(caplog):
    g = make_graph([("S", "T", 0.4), ("M", "T", 0.2)], kinds={"S": STATE, "M": MUNICIPAL})
    with caplog.at_level(logging.WARNING):
        out = impute(g, ImputationScenario("s4", ocean_slices=10))
    assert any("no private holders" in r.message for r in caplog.records)
    assert dict(out.holders("T"))["S"] == 0.4
    assert len(out.holders("T")) == 12
    (rec,) = imputation_report(g, out, "s4")["records"]
    assert rec["fallback"] and rec["node"] == "T"


def test_s4_needs_classification():
    g = make_graph([("A", "T", 0.3), ("B", "T", 0.2)])  # all firm-kind
    with pytest.raises(ClassificationMissingError):
        impute(g, "s4")
    # The other scenarios do not care about kinds.
    impute(g, "s1")
    impute(g, "s2")


def test_scenario_validation():
    assert ImputationScenario("S4-private-proportional").variant == "s4"
    assert ImputationScenario("S1").label == "S1-renormalize"
    with pytest.raises(InputError):
        ImputationScenario("s3")
    with pytest.raises(InputError):
        ImputationScenario("s2", ocean_slices=0)


def test_roots_untouched(partial):
    out = impute(partial, "s2")
    for root in ("State", "PrivA", "PrivB"):
        assert out.holders(root) == []


def test_deterministic(fixture_paths):
    from netpower.graph import load_graph

    g = load_graph(fixture_paths["nodes"], fixture_paths["edges"])
    for v in ("s1", "s2", "s4"):
        assert impute(g, v) == impute(g, v)


# -- properties --------------------------------------------------------------

KIND_CHOICES = [PRIVATE, STATE, MUNICIPAL]


@st.composite
def partial_registers(draw):
    n_targets = draw(st.integers(1, 4))
    edges, kinds = [], {}
    for t in range(n_targets):
        n = draw(st.integers(1, 5))
        coverage = draw(st.floats(0.05, 1.0))
        raw = draw(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n))
        total = sum(raw)
        for k, r in enumerate(raw):
            h = f"h{t}_{k}"
            kinds[h] = draw(st.sampled_from(KIND_CHOICES))
            edges.append((h, f"T{t}", r / total * coverage))
    # Make sure at least one private investor exists so s4 runs.
    kinds[edges[0][0]] = PRIVATE
    return make_graph(edges, kinds=kinds)


@settings(max_examples=80, deadline=None)
@given(partial_registers(), st.sampled_from(["s1", "s2", "s4"]), st.integers(1, 50))
def test_registers_complete(g, variant, slices):
    out = impute(g, ImputationScenario(variant, ocean_slices=slices))
    for j in out.held_nodes():
        assert abs(math.fsum(f for _, f in out.holders(j)) - 1.0) <= 1e-9
    assert out == impute(g, ImputationScenario(variant, ocean_slices=slices))


@settings(max_examples=60, deadline=None)
@given(partial_registers())
def test_s4_keeps_public_stakes(g):
    out = impute(g, "s4")
    for (h, j), f in g.edges.items():
        if g.nodes[h].kind != PRIVATE:
            assert out.edges[(h, j)] == f


@settings(max_examples=60, deadline=None)
@given(partial_registers())
def test_s1_preserves_ratios(g):
    out = impute(g, "s1")
    for j in g.held_nodes():
        reg = g.holders(j)
        for (a, fa), (b, fb) in zip(reg, reg[1:]):
            assert out.edges[(a, j)] / out.edges[(b, j)] == pytest.approx(fa / fb, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(partial_registers(), st.integers(1, 40))
def test_s2_slice_count(g, slices):
    out = impute(g, ImputationScenario("s2", ocean_slices=slices))
    for j in g.held_nodes():
        missing = 1.0 - g.incoming_sum(j)
        synthetic = [f for h, f in out.holders(j) if h not in g.nodes]
        if missing > 1e-9:
            assert len(synthetic) == slices
            assert all(f == pytest.approx(missing / slices, rel=1e-12) for f in synthetic)
        else:
            assert synthetic == []
