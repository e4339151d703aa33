import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from solentrunc import maxweight as M
from solentrunc import solver as S
from solentrunc import verify as V
from solentrunc.grid import GridDomain, magnitude, sym_gradient

P2 = S.StressModel.p_laplacian(2.0)


@pytest.fixture(scope="module")
def singular_p2():
    dom = GridDomain.box(16)
    f = S.singular_forcing(dom, (0.5, 0.5, 0.5), 1.55, q=1.9).f
    return dom, f, S.solve_stokes(P2, f, dom)


@pytest.fixture(scope="module")
def layer_data():
    dom = GridDomain.ball(16, 0.45)
    rng = np.random.default_rng(0)
    u = S.random_test_fields(dom, 1, rng)[0]
    g = M.random_bump_field(dom, rng) + 0.1
    return dom, magnitude(sym_gradient(u, dom)), M.maximal(g, dom)


# -- exponents -----------------------------------------------------------------

def test_alpha_values():
    assert V.alpha(0.0, 2.5) == 0.0
    assert V.alpha(0.0, 4.0) == pytest.approx(0.5)
    assert V.alpha(0.1, 2.5) == pytest.approx(0.4)
    assert V.alpha(0.1, 6.0) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        V.alpha(0.1, 2.0)


def test_ns_exponent_at_energy_exponent():
    # q = p' gives s = 0: 1/(p-2) + (p-3)/(p-2) = 1 for p > 3
    assert V.ns_exponent(4.0, 4.0 / 3.0) == pytest.approx(1.0)
    assert V.ns_exponent(2.5, 5.0 / 3.0) == pytest.approx(2.0)


def test_weight_admissibility_recomputed():
    r = V.weight_admissibility(2.0, 1.9)
    # (p'-q)(3-p)/3 * p'/p* = 0.1 * 1/3 * 2/6
    assert r["alpha"] == pytest.approx(0.1 / 9)
    assert r["alpha_printed"] == pytest.approx(0.1)
    assert r["admissible"]
    assert V.weight_admissibility(2.0, 2.0)["alpha"] == 0.0
    with pytest.raises(ValueError):
        V.weight_admissibility(3.0, 1.2)


# -- Stokes estimates --------------------------------------------------------------

def test_zero_forcing_gives_zero_lhs():
    dom = GridDomain.box(8)
    f = np.zeros((3, 3) + dom.dims)
    sol = S.solve_stokes(P2, f, dom)
    rep = V.verify_mt1(sol, f, 2.0, 1.5, dom)
    assert rep.lhs == 0 and rep.rhs == 1.0 and rep.ratio == 0
    with pytest.raises(ValueError):
        V.verify_mt1(sol, f, 2.0, 2.5, dom)


def test_mt2_weight_and_bridge(singular_p2):
    dom, f, sol = singular_p2
    at_energy = V.verify_mt2(sol, f, 2.0, 2.0, dom)
    assert at_energy.extra == {}
    assert np.all(V.forcing_weight(f, 2.0, 2.0, dom) == 1)
    rep = V.verify_mt2(sol, f, 2.0, 1.9, dom)
    assert rep.extra["bridge_lhs"] <= rep.extra["bridge_rhs"]
    assert 0 < rep.ratio < np.inf


def test_mt1_homogeneity():
    # f -> t^(p-1) f scales the LHS by t^(q(p-1))
    dom = GridDomain.ball(12, 0.45)
    f = S.singular_forcing(dom, (0.5, 0.5, 0.5), 0.5, strength=5.0).f
    p, q, t = 3.0, 1.4, 2.0
    m = S.StressModel.p_laplacian(p)
    base = S.SolverConfig()
    a = S.solve_stokes(m, f, dom, base)
    b = S.solve_stokes(m, t ** (p - 1) * f, dom, S.SolverConfig(deltas=tuple(t * d for d in base.deltas)))
    la = V.verify_mt1(a, f, p, q, dom).lhs
    lb = V.verify_mt1(b, t ** (p - 1) * f, p, q, dom).lhs
    assert lb / la == pytest.approx(t ** (q * (p - 1)), rel=1e-7)


def test_translation_invariance():
    dom = GridDomain.box(16)
    ratios = {"mt1": [], "mt2": []}
    for shift in (0, 1, -1):
        c = 0.5 + shift * dom.h
        f = S.singular_forcing(dom, (c, 0.5, 0.5), 1.55, q=1.9).f
        sol = S.solve_stokes(P2, f, dom)
        ratios["mt1"].append(V.verify_mt1(sol, f, 2.0, 1.9, dom).ratio)
        ratios["mt2"].append(V.verify_mt2(sol, f, 2.0, 1.9, dom).ratio)
    for r in ratios.values():
        assert max(r) <= 1.1 * min(r)


def test_ladder_bounded_by_unclamped(singular_p2):
    dom, f, sol = singular_p2
    ref = V.verify_mt1(sol, f, 2.0, 1.9, dom).ratio
    lad = []
    for k in (1.0, 4.0, 16.0, 256.0):
        fk = S.approximate_forcing(f, k)
        lad.append(V.verify_mt1(S.solve_stokes(P2, fk, dom), fk, 2.0, 1.9, dom).ratio)
    # f_1 is a constant tensor here, whose solution vanishes
    assert lad[0] < 1e-20
    assert np.all(np.diff(lad) >= 0)
    assert V.bounded_by_reference(lad, ref)
    assert lad[-1] == pytest.approx(ref)


def test_stability_helpers():
    assert V.stable_within([1.0, 1.9])
    assert not V.stable_within([1.0, 2.1])
    assert not V.stable_within([0.0, 1.0])
    assert V.bounded_by_reference([0.0, 0.5, 2.0], 1.0)
    assert not V.bounded_by_reference([0.0, 2.5], 1.0)
    assert not V.bounded_by_reference([0.5], 0.0)


def test_report_csv_columns():
    rep = V.EstimateReport("mt1", 2.0, 4.0, dict(p=2.0, q=1.9, h=0.0625, k=8), {"note": 1})
    fh = io.StringIO()
    V.write_reports_csv([rep], fh, {"scenario_hash": "abc"})
    lines = fh.getvalue().splitlines()
    assert lines[0] == ",".join(V.REPORT_COLUMNS) + ",scenario_hash"
    assert lines[1] == 'mt1,2.0,4.0,0.5,2.0,1.9,,0.0625,,8,"{""note"": 1}",abc'


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), q=st.floats(1.2, 1.99))
def test_forcing_weight_in_unit_interval(seed, q):
    dom = GridDomain.ball(8, 0.45)
    f = np.random.default_rng(seed).standard_normal((3, 3) + dom.dims) * 10
    w = V.forcing_weight(f, 2.0, q, dom)
    assert np.all(w > 0) and np.all(w <= 1)


# -- Navier-Stokes estimates ----------------------------------------------------------

def test_regime_mismatch_errors(singular_p2):
    dom, f, sol = singular_p2
    lin = S.StressModel.linear_at_infinity()
    with pytest.raises(ValueError, match="regime"):
        V.verify_ns_estimate(sol, f, 2.0, 1.9, dom, model=P2)
    with pytest.raises(ValueError, match="regime"):
        V.verify_ns_estimate(sol, f, 2.0, 1.5, dom, model=lin)
    with pytest.raises(ValueError, match="regime"):
        V.verify_ns_estimate(sol, f, 3.0, 1.4, dom, model=lin)
    with pytest.raises(ValueError, match="regime"):
        V.verify_ns_estimate(sol, f, 1.5, 1.4, dom)


def test_ns_p4_report():
    dom = GridDomain.ball(10, 0.45)
    m = S.StressModel.p_laplacian(4.0)
    f = S.singular_forcing(dom, (0.5, 0.5, 0.5), 0.5, q=4 / 3).f
    sol = S.solve_navier_stokes(m, f, dom)
    rep = V.verify_ns_estimate(sol, f, 4.0, 4 / 3, dom, model=m)
    assert rep.extra["exponent"] == pytest.approx(1.0)
    assert 0 < rep.ratio < 1


def test_ns2_pipeline_split():
    dom = GridDomain.ball(10, 0.45)
    m = S.StressModel.linear_at_infinity(1.0, 2.0)
    q = 12 / 7
    f = S.singular_forcing(dom, (0.5, 0.5, 0.5), 1.6, q=q).f
    w = V.forcing_weight(f, 2.0, q, dom)
    total = S.tail_mass(f, 1e-300, q, dom, w)
    rep, u, v = V.ns2_pipeline(m, f, dom, q, 0.5 * total)
    assert 0 < rep.extra["tail"] <= 0.5 * total
    assert rep.extra["small_part_energy"] > 0 and rep.extra["large_part_mass"] > 0
    assert rep.params["k"] > 0 and np.isfinite(rep.lhs) and rep.rhs == 1.0


# -- proof identities ---------------------------------------------------------------------

def test_layer_cake_constant_closed_form():
    dom = GridDomain.ball(12, 0.45)
    s, m, eps, p = 0.7, 3.0, 0.1, 2.0
    rep = V.layer_cake_identity(np.full(dom.dims, s), np.full(dom.dims, m), eps, dom, p=p)
    exact = dom.measure * s**p * m ** (-eps) / eps
    assert rep.lhs == pytest.approx(exact, rel=1e-6)
    assert rep.rhs == pytest.approx(exact, rel=1e-12)


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.2])
def test_layer_cake_random(layer_data, eps):
    dom, e, Mg = layer_data
    rep = V.layer_cake_identity(e, Mg, eps, dom)
    assert rep.extra["discrepancy"] <= 1e-6
    assert rep.ratio == pytest.approx(1.0, abs=1e-6)


def test_layer_cake_trapezoid_refinement(layer_data):
    dom, e, Mg = layer_data
    errs = [V.layer_cake_identity(e, Mg, 0.1, dom, nodes=n).extra["trapezoid_discrepancy"] for n in (50, 100, 200, 400)]
    assert np.all(np.diff(errs) < 0)
    # second order in the node spacing
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders.min() > 1.5
    with pytest.raises(ValueError):
        V.layer_cake_identity(e, Mg, 0.0, dom)


def test_korn_candidates():
    dom = GridDomain.ball(16, 0.45)
    r = V.korn_constant(dom, 2.0)
    assert r["ratios"]["gradient"] == pytest.approx(1.0, abs=1e-12)
    assert r["ratios"]["rotation_xy"] > 1
    assert r["value"] >= max(r["ratios"].values())
    f = S.singular_forcing(dom, (0.5, 0.5, 0.5), 1.55).f
    wr = V.korn_constant(dom, 2.0, weight=V.forcing_weight(f, 2.0, 1.9, dom))
    assert np.isfinite(wr["value"]) and wr["value"] > 1


def test_embedding_ratios():
    ratios = []
    for n in (12, 16):
        dom = GridDomain.ball(n, 0.45)
        fields = S.random_test_fields(dom, 5, np.random.default_rng(1))
        rep = V.embedding_check(fields, 2.0, None, dom)
        assert rep.extra["pstar"] == 6.0 and 0 < rep.extra["poincare"] < np.inf
        ratios.append(rep.ratio)
    assert V.stable_within(ratios, 1.5)
    const = V.embedding_check([np.ones(dom.dims)], 2.0, None, dom)
    assert const.extra["poincare_lhs"] == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(ValueError):
        V.embedding_check(fields, 3.0, None, dom)


def test_scan_energy_exponent_is_stable():
    dom = GridDomain.box(12)
    family = {"center": (0.5, 0.5, 0.5), "a": 1.4}
    out = V.scan_epsilon0(P2, dom, family, [2.0, 1.9, 1.8], k_ladder=(1.0, 8.0, 256.0))
    rows = {r["q"]: r for r in out["rows"]}
    assert rows[2.0]["stable"]
    assert out["epsilon0"] >= 0.0
    with pytest.raises(ValueError):
        V.scan_epsilon0(P2, dom, family, [2.5])
