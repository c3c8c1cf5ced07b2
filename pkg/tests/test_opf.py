import cmath
import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import two_bus
from icnnopf.grid import Branch, bundled_case
from icnnopf.lp import EQ, INFEASIBLE, brute_force_lp, solve
from icnnopf.opf import (
    FLOW_SIGN,
    admittance_coefficients,
    branch_power_flows,
    build_ac,
    build_dc,
    build_soc,
    dc_formulation,
    dumps_formulation,
    export_formulation,
    load_formulation,
    loads_formulation,
    objective_value,
    residuals,
    soc_branch_coefficients,
    value_and_gradient,
)


def lifted(vi, vj, ti, tj):
    return vi * vi, vi * vj * math.cos(tj - ti), vi * vj * math.sin(tj - ti)


def fitted_coefficients(branch: Branch, end: str) -> np.ndarray:
    """Recover the 3 real-part and 3 imaginary-part coefficients by sampling.

    The complex flow is linear in (w, wr, wi), so three generic operating
    points determine the coefficients; solved directly from the complex
    equations without using the hand expansion.
    """
    pts = [(1.0, 1.0, 0.0, 0.0), (1.1, 0.9, 0.2, -0.3), (0.95, 1.05, -0.4, 0.5)]
    rows, sp_, sq = [], [], []
    for vi, vj, ti, tj in pts:
        s_ft, s_tf = branch_power_flows(branch, cmath.rect(vi, ti), cmath.rect(vj, tj))
        w_f, wr, wi = lifted(vi, vj, ti, tj)
        if end == "forward":
            rows.append([w_f, wr, wi])
            s = s_ft
        else:
            rows.append([vj * vj, wr, wi])
            s = s_tf
        sp_.append(s.real)
        sq.append(s.imag)
    M = np.array(rows)
    return np.concatenate([np.linalg.solve(M, sp_), np.linalg.solve(M, sq)])


def as_array(fc) -> np.ndarray:
    return np.array([fc.p_w, fc.p_r, fc.p_i, fc.q_w, fc.q_r, fc.q_i])


class TestBuildDc:
    def test_two_bus_structure(self):
        prob = build_dc(two_bus(), [0.0, 1.0])
        lp = prob.lp
        assert (len(prob.gen_cols), len(prob.angle_cols), len(prob.flow_cols)) == (1, 2, 1)
        assert len(prob.balance_rows) == 2 and len(prob.ohm_rows) == 1
        assert lp.shape == (4, 4)
        assert all(k == EQ for k in lp.kinds)
        pin = lp.A.toarray()[prob.slack_row]
        assert pin[prob.angle_cols[0]] == 1.0 and lp.b[prob.slack_row] == 0.0

    def test_case14_dimensions(self, case14):
        prob = build_dc(case14, case14.pd)
        assert prob.n_vars == 5 + 14 + 20
        assert len(prob.angle_rows) == 40  # every branch carries a +/-30 degree window

    def test_index_maps_are_a_bijection(self, case14):
        prob = build_dc(case14, case14.pd)
        cols = np.concatenate([prob.gen_cols, prob.angle_cols, prob.flow_cols])
        assert sorted(cols) == list(range(prob.n_vars))
        rows = list(prob.balance_rows) + list(prob.ohm_rows) + [prob.slack_row] + [r for r, _, _ in prob.angle_rows]
        assert sorted(rows) == list(range(prob.lp.shape[0]))

    def test_ohm_sign(self):
        net = two_bus()
        prob = build_dc(net, [0.0, 1.0])
        sol = solve(prob.lp)
        _, va, pf = prob.split(sol.x)
        # power flows downhill in angle towards the load
        assert va[1] < va[0]
        assert pf[0] == pytest.approx(FLOW_SIGN * net.branches[0].b * (va[1] - va[0]), abs=1e-12)
        assert pf[0] == pytest.approx(1.0, abs=1e-9)

    def test_zero_demand(self, case14):
        val = value_and_gradient(case14, np.zeros(case14.n_bus))
        assert val.z == pytest.approx(0.0, abs=1e-9)
        pg, _, _ = val.problem.split(val.solution.x)
        np.testing.assert_allclose(pg, 0.0, atol=1e-9)

    def test_length_mismatch(self, case14):
        with pytest.raises(ValueError):
            build_dc(case14, np.ones(3))

    def test_balance_rows_sum_to_generation(self, case14):
        """Summing every balance row cancels all flow and angle columns."""
        prob = build_dc(case14, case14.pd)
        total = np.asarray(prob.lp.A[prob.balance_rows].sum(axis=0)).ravel()
        np.testing.assert_array_equal(total[prob.gen_cols], 1.0)
        np.testing.assert_array_equal(np.delete(total, prob.gen_cols), 0.0)

    @settings(max_examples=15, deadline=None)
    @given(st.floats(0.5, 1.05), st.integers(0, 1000))
    def test_dispatch_matches_total_load(self, scale, seed):
        net = bundled_case("case5")
        pd = net.pd * scale * np.random.default_rng(seed).uniform(0.9, 1.1, net.n_bus)
        val = value_and_gradient(net, pd)
        assert val.optimal
        pg, _, _ = val.problem.split(val.solution.x)
        assert pg.sum() == pytest.approx(pd.sum(), abs=1e-9)

    def test_infeasible_when_load_exceeds_capacity(self):
        net = two_bus(pmax=2.0)
        val = value_and_gradient(net, [0.0, 3.0])
        assert val.status == INFEASIBLE
        assert val.z is None and val.y is None


class TestValueGradient:
    def test_uncongested_prices(self):
        net = two_bus(cost=10.0)
        val = value_and_gradient(net, [0.0, 1.0])
        # oracle: vertex enumeration at shifted loads
        h = 1e-3
        base = brute_force_lp(build_dc(net, [0.0, 1.0]).lp).objective
        for k in range(2):
            pd = np.array([0.0, 1.0])
            pd[k] += h
            fd = (brute_force_lp(build_dc(net, pd).lp).objective - base) / h
            assert val.y[k] == pytest.approx(fd, abs=1e-6)
        np.testing.assert_allclose(val.y, [10.0, 10.0], atol=1e-6)
        assert val.z == pytest.approx(10.0, abs=1e-9)

    @pytest.mark.parametrize("name", ["case5", "case14"])
    def test_finite_differences(self, name):
        net = bundled_case(name)
        rng = np.random.default_rng(0)
        eps = 1e-5
        for _ in range(3):
            pd = net.pd * rng.uniform(0.85, 1.05, net.n_bus)
            val = value_and_gradient(net, pd)
            for k in np.flatnonzero(net.pd > 0):
                e = np.zeros(net.n_bus)
                e[k] = eps
                zp = value_and_gradient(net, pd + e).z
                zm = value_and_gradient(net, pd - e).z
                fwd, bwd = (zp - val.z) / eps, (val.z - zm) / eps
                if abs(fwd - bwd) > 1e-3 * max(1.0, abs(fwd)):
                    continue  # kink: the value function is not differentiable here
                fd = (zp - zm) / (2 * eps)
                assert abs(fd - val.y[k]) <= 1e-4 * max(1.0, abs(fd))

    def test_lp_relaxation_bounds_discrete_dispatch(self):
        """The LP optimum lower-bounds every dispatch on a discrete grid."""
        net = two_bus(cost=10.0, rate=0.6, second_gen_cost=30.0)
        pd = np.array([0.2, 1.1])
        z = value_and_gradient(net, pd).z
        best = math.inf
        for pg1 in np.arange(0.0, 2.0001, 0.05):
            for pg2 in np.arange(0.0, 2.0001, 0.05):
                flow = pg1 - pd[0]
                if abs(pg2 + flow - pd[1]) < 1e-9 and abs(flow) <= 0.6 + 1e-12:
                    best = min(best, 10.0 * pg1 + 30.0 * pg2)
        assert math.isfinite(best)
        assert z <= best + 1e-9
        assert z == pytest.approx(best, abs=1e-9)  # the vertex lies on the grid here


class TestSocCoefficients:
    def test_resistive_branch(self):
        c = admittance_coefficients(complex(1.0, 0.0), 0j)
        assert (c.forward.p_w, c.forward.p_r, c.forward.p_i) == (1.0, -1.0, 0.0)

    def test_zero_admittance(self):
        c = admittance_coefficients(0j, 0j)
        assert not np.any(as_array(c.forward)) and not np.any(as_array(c.reverse))

    def test_lossless_branch(self):
        br = Branch(1, 2, 0.0, 0.25, 0.0, math.inf)
        c = soc_branch_coefficients(br)
        oracle = fitted_coefficients(br, "forward")
        assert c.forward.p_w == 0.0 and c.forward.p_r == 0.0
        np.testing.assert_allclose(oracle[:2], 0.0, atol=1e-12)

    @pytest.mark.parametrize("end", ["forward", "reverse"])
    def test_matches_fitted_coefficients(self, end, rng):
        for _ in range(20):
            br = Branch(1, 2, rng.uniform(0, 0.1), rng.uniform(0.01, 0.5), rng.uniform(0, 0.4), math.inf)
            c = soc_branch_coefficients(br)
            np.testing.assert_allclose(as_array(getattr(c, end)), fitted_coefficients(br, end), atol=1e-9)

    def test_random_cross_check(self, rng):
        worst = 0.0
        for _ in range(1000):
            br = Branch(1, 2, rng.uniform(0, 0.2), rng.uniform(0.01, 0.6), rng.uniform(0, 0.5), math.inf)
            vi, vj = rng.uniform(0.9, 1.1, 2)
            ti, tj = rng.uniform(-0.6, 0.6, 2)
            s_ft, s_tf = branch_power_flows(br, cmath.rect(vi, ti), cmath.rect(vj, tj))
            w_f, wr, wi = lifted(vi, vj, ti, tj)
            c = soc_branch_coefficients(br)
            p, q = c.forward.flows(w_f, wr, wi)
            pr, qr = c.reverse.flows(vj * vj, wr, wi)
            worst = max(worst, abs(p - s_ft.real), abs(q - s_ft.imag), abs(pr - s_tf.real), abs(qr - s_tf.imag))
        assert worst <= 1e-10


def flat_network(net):
    """Zero demand, no shunts, no line charging, pmin = 0."""
    return dataclasses.replace(
        net,
        buses=tuple(dataclasses.replace(b, pd=0.0, qd=0.0, gs=0.0, bs=0.0, vmin=min(b.vmin, 1.0), vmax=max(b.vmax, 1.0)) for b in net.buses),
        branches=tuple(dataclasses.replace(br, charging=0.0) for br in net.branches),
        generators=tuple(dataclasses.replace(g, pmin=0.0, qmin=min(g.qmin, 0.0), qmax=max(g.qmax, 0.0)) for g in net.generators),
    )


def ac_point(net, vm, va):
    """Consistent AC point: flows from voltages, generation from bus balance."""
    idx = net.bus_index
    V = vm * np.exp(1j * va)
    ne = len(net.branches)
    S = np.zeros(2 * ne, complex)
    for k, br in enumerate(net.branches):
        S[k], S[ne + k] = branch_power_flows(br, V[idx[br.f_bus]], V[idx[br.t_bus]])
    return {"va": va, "vm": vm, "pf": S.real, "qf": S.imag}


class TestSocDescription:
    def test_case14_counts(self, case14):
        f = build_soc(case14, case14.pd, case14.qd)
        assert f.count("jabr-soc") == 20
        assert f.count("thermal-soc") == 40
        assert f.variable("w").size == 14
        assert f.variable("wr").size == f.variable("wi").size == 20
        ohm = f.of_kind("ohm")
        assert len(ohm) == 40
        assert all(set(c.coefficients) == {"p_w", "p_r", "p_i", "q_w", "q_r", "q_i"} for c in ohm)

    def test_unit_voltage_bounds(self, case5):
        net = dataclasses.replace(case5, buses=tuple(dataclasses.replace(b, vmin=1.0, vmax=1.0) for b in case5.buses))
        w = build_soc(net, net.pd, net.qd).variable("w")
        assert w.lower == [1.0] * 5 and w.upper == [1.0] * 5

    def test_lifted_ac_point_is_feasible(self, case5, rng):
        """An AC operating point mapped to (w, wr, wi) satisfies every ohm and jabr row."""
        net = case5
        vm = rng.uniform(0.95, 1.05, net.n_bus)
        va = rng.uniform(-0.1, 0.1, net.n_bus)
        pt = ac_point(net, vm, va)
        idx = net.bus_index
        f_ix = [idx[b.f_bus] for b in net.branches]
        t_ix = [idx[b.t_bus] for b in net.branches]
        point = {
            "w": vm**2,
            "wr": vm[f_ix] * vm[t_ix] * np.cos(va[t_ix] - va[f_ix]),
            "wi": vm[f_ix] * vm[t_ix] * np.sin(va[t_ix] - va[f_ix]),
            "pg": np.zeros(len(net.generators)),
            "qg": np.zeros(len(net.generators)),
            "pf": pt["pf"],
            "qf": pt["qf"],
        }
        res = residuals(build_soc(net, net.pd, net.qd), point)
        assert res["ohm"] <= 1e-12
        assert res["jabr-soc"] <= 1e-12

    def test_length_mismatch(self, case5):
        with pytest.raises(ValueError):
            build_soc(case5, case5.pd[:2], case5.qd)


class TestAcDescription:
    def test_two_bus_structure(self, case2):
        f = build_ac(case2, case2.pd, case2.qd)
        assert f.count("balance") == 2
        assert f.count("ohm") == 2
        assert f.count("thermal") == 2
        assert f.count("reference-angle") == 1
        assert f.variable("vm").lower == [0.9, 0.9]

    def test_flat_point_zero_demand(self, case14):
        net = flat_network(case14)
        f = build_ac(net, net.pd, net.qd)
        n, ng = net.n_bus, len(net.generators)
        point = ac_point(net, np.ones(n), np.zeros(n))
        point.update(pg=np.zeros(ng), qg=np.zeros(ng))
        res = residuals(f, point)
        assert max(res.values()) <= 1e-12
        assert objective_value(f, point) == 0.0

    def test_perturbed_point_violates_balance(self, case14):
        net = flat_network(case14)
        f = build_ac(net, net.pd, net.qd)
        n, ng = net.n_bus, len(net.generators)
        va = np.zeros(n)
        va[3] = 0.05
        point = ac_point(net, np.ones(n), va)
        point.update(pg=np.zeros(ng), qg=np.zeros(ng))
        res = residuals(f, point)
        assert res["ohm"] <= 1e-12
        assert res["balance"] > 1e-3

    def test_round_trip(self, case14):
        f = build_ac(case14, case14.pd, case14.qd)
        assert loads_formulation(dumps_formulation(f)).to_dict() == f.to_dict()


class TestExport:
    def test_deterministic_bytes(self, case14, tmp_path):
        f = build_soc(case14, case14.pd, case14.qd)
        a = export_formulation(f, tmp_path / "a.json").read_bytes()
        b = export_formulation(build_soc(case14, case14.pd, case14.qd), tmp_path / "b.json").read_bytes()
        assert a == b

    def test_top_level_fields(self, case2, tmp_path):
        import json

        path = export_formulation(dc_formulation(build_dc(case2, case2.pd)), tmp_path / "dc.json")
        d = json.loads(path.read_text())
        assert list(d) == ["schema_version", "formulation", "variables", "constraints", "objective"]
        assert d["formulation"] == "dc"

    def test_dc_export_matches_lp(self, case14, tmp_path):
        prob = build_dc(case14, case14.pd)
        f = load_formulation(export_formulation(dc_formulation(prob), tmp_path / "dc.json"))
        assert sum(v.size for v in f.variables) == prob.n_vars
        assert len(f.constraints) == prob.lp.shape[0]
        A = prob.lp.A.toarray()
        for r, c in enumerate(f.constraints):
            row = np.zeros(prob.n_vars)
            row[c.indices["columns"]] = c.coefficients["values"]
            np.testing.assert_array_equal(row, A[r])
            assert c.coefficients["rhs"] == prob.lp.b[r]
            assert c.coefficients["sense"] == prob.lp.kinds[r]
        assert f.count("balance") == 14 and f.count("ohm") == 20

    def test_float_precision_survives(self, case300, tmp_path):
        f = build_soc(case300, case300.pd, case300.qd)
        again = load_formulation(export_formulation(f, tmp_path / "s.json"))
        assert again.to_dict() == f.to_dict()

    def test_rejects_other_schema_version(self, case2):
        text = dumps_formulation(build_ac(case2, case2.pd, case2.qd)).replace('"schema_version": 1,', '"schema_version": 99,', 1)
        with pytest.raises(ValueError, match="schema_version"):
            loads_formulation(text)


@pytest.fixture(scope="module")
def case300():
    return bundled_case("case300")
