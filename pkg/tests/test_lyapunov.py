import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lyocert.comparison import ScalarFunction
from lyocert.integral import QuadPolicy, certify_integral, integral_transform
from lyocert.lyapunov import (ConstructionError, LyapunovEvaluator, certify_lyapunov, construct_nclf,
                              dini_derivative, level_set_csv, monotonicity_along_trajectory, verify_bellman,
                              verify_decay, verify_integral_bound)
from lyocert.plan import SamplingPlan
from lyocert.system import EnsembleSpec, SystemDef, evaluate_flow

ID = ScalarFunction.identity()
STATES = [np.array([v]) for v in (-2.0, -1.0, -0.5, -0.1, 0.0, 0.1, 0.5, 1.0, 2.0)]
PLAN = SamplingPlan(radii=(0.5, 1.0, 2.0), horizon=30.0, ensemble=EnsembleSpec(n_random=4, max_switches=3))


@pytest.fixture(scope="module")
def vhat(stable, rho):
    return construct_nclf(stable, rho)


class TestConstruction:
    def test_saturated_value(self, vhat):
        assert vhat([2.0]) == pytest.approx(math.log(2) + 1, abs=1e-8)

    def test_unsaturated_value(self, vhat):
        assert vhat([0.5]) == pytest.approx(0.5, abs=1e-8)

    def test_origin(self, vhat):
        assert vhat([0.0]) == 0.0

    def test_metadata(self, vhat):
        meta = vhat.metadata([2.0])
        assert {"argmax", "tail_bound", "quad_error"} <= set(meta)

    def test_rejects_kinf(self, stable):
        with pytest.raises(ConstructionError, match="Kinf"):
            construct_nclf(stable, ScalarFunction.identity())

    def test_rejects_unbounded_declared_k(self, stable):
        with pytest.raises(ConstructionError, match="unbounded"):
            construct_nclf(stable, ScalarFunction.closed_form("r^2", "K"))

    def test_rejects_other_classes(self, stable):
        with pytest.raises(ConstructionError):
            construct_nclf(stable, ScalarFunction.closed_form("exp(-r)", "L"))

    def test_deterministic(self, bilinear, rho):
        a = construct_nclf(bilinear, rho, horizon=20.0)([0.7])
        b = construct_nclf(bilinear, rho, horizon=20.0)([0.7])
        assert a == b

    def test_round_trip(self, stable, vhat):
        again = LyapunovEvaluator.from_dict(vhat.to_dict(), stable)
        assert again([1.3]) == vhat([1.3])

    def test_positivity(self, bilinear, rho):
        V = construct_nclf(bilinear, rho, horizon=20.0, ensemble_spec=EnsembleSpec(n_random=4))
        for x in (1e-6, -1e-3, 0.3, -2.0, 5.0):
            assert V([x]) > 0

    @settings(max_examples=15, deadline=None)
    @given(st.floats(-3, 3), st.integers(0, 6))
    def test_ensemble_monotone(self, x, k):
        sys = SystemDef.from_catalogue("bilinear")
        rho = ScalarFunction.closed_form("min(r, 1)", "K")
        full = EnsembleSpec(n_random=6, max_switches=3).build(sys.box, 20.0)
        small = construct_nclf(sys, rho, ensemble=full[:k + 1], horizon=20.0)
        large = construct_nclf(sys, rho, ensemble=full, horizon=20.0)
        assert small([x]) <= large([x])

    @pytest.mark.parametrize("h", [0.3, 1.0, 2.5])
    def test_cocycle_consistency(self, stable, vhat, h):
        x = np.array([2.0])
        direct = vhat(evaluate_flow(stable, h, x))
        tail = integral_transform(stable, vhat.rho, x, t0=h, policy=QuadPolicy(horizon=vhat.horizon))
        assert direct == pytest.approx(tail.total, abs=1e-8)


class TestDini:
    def test_abs_stable(self, stable):
        est = dini_derivative(LyapunovEvaluator.closed_form("abs(x1)"), stable, [2.0])
        assert est.converged and est.estimate == pytest.approx(-2.0, abs=1e-4)

    def test_abs_origin(self, stable):
        assert dini_derivative(LyapunovEvaluator.closed_form("abs(x1)"), stable, [0.0]).estimate == 0.0

    def test_constructed(self, stable, vhat):
        est = dini_derivative(vhat, stable, [2.0])
        assert est.estimate == pytest.approx(-1.0, abs=1e-3)

    def test_bad_ladder(self, stable):
        with pytest.raises(ValueError):
            dini_derivative(LyapunovEvaluator.closed_form("abs(x1)"), stable, [1.0], ladder=(1e-2, 1e-1))

    def test_non_convergence_flagged(self, stable):
        V = LyapunovEvaluator.closed_form("abs(x1) + 0.01*sin(1e6*x1)")
        est = dini_derivative(V, stable, [1.0])
        assert not est.converged


class TestDecay:
    def test_abs_identity(self, stable):
        ev = verify_decay(LyapunovEvaluator.closed_form("abs(x1)"), stable, ID, states=STATES)
        assert ev.supported and abs(ev.margin) < 1e-3

    def test_square(self, stable):
        ev = verify_decay(LyapunovEvaluator.closed_form("x1^2"), stable, ScalarFunction.closed_form("r^2", "Kinf"),
                          states=STATES)
        assert ev.supported
        assert ev.margin == pytest.approx(0.0, abs=1e-3)  # slack x^2 is smallest at x = 0
        slacks = {s["x"][0]: s["slack"] for s in ev.details["samples"]}
        assert slacks[2.0] == pytest.approx(4.0, rel=1e-3)

    def test_unstable_refuted(self, unstable):
        ev = verify_decay(LyapunovEvaluator.closed_form("abs(x1)"), unstable, ID, states=[np.array([1.0])])
        assert ev.refuted and ev.witness["dini"]["estimate"] > 0

    def test_constructed_rate_rho(self, stable, vhat, rho):
        assert verify_decay(vhat, stable, rho, states=STATES).supported


class TestBellman:
    def test_equality_case(self, stable, vhat):
        ev = verify_bellman(vhat, stable, [2.0], h_grid=(math.log(2),))
        assert ev.supported and abs(ev.margin) < 1e-8

    def test_origin(self, stable, vhat):
        ev = verify_bellman(vhat, stable, [0.0], h_grid=(0.5,))
        assert ev.supported and ev.margin == 0.0

    def test_small_h_trend(self, stable, vhat):
        hs = (1e-1, 1e-2, 1e-3)
        rows = verify_bellman(vhat, stable, [2.0], h_grid=hs).details["rows"]
        ratios = [abs(r["slack_over_h"]) for r in rows]
        assert max(ratios) < 1e-5

    def test_closed_form_rejected(self, stable):
        with pytest.raises(ValueError):
            verify_bellman(LyapunovEvaluator.closed_form("abs(x1)"), stable, [1.0])


class TestIntegralBound:
    def test_abs(self, stable):
        ev = verify_integral_bound(LyapunovEvaluator.closed_form("abs(x1)"), stable, ID, ID, PLAN, STATES)
        assert ev.supported
        assert ev.details["upper_margin"] == 0.0

    def test_psi2_half_refuted(self, stable):
        ev = verify_integral_bound(LyapunovEvaluator.closed_form("abs(x1)"), stable, ID,
                                   ScalarFunction.closed_form("r/2", "Kinf"), PLAN, STATES)
        assert ev.refuted and ev.witness["side"] == "upper"

    def test_lower_side_refuted(self, stable):
        ev = verify_integral_bound(LyapunovEvaluator.closed_form("abs(x1)/4"), stable, ID, ID, PLAN, STATES)
        assert ev.refuted and ev.witness["side"] == "lower"

    def test_constructed_implies_iugs(self, stable, vhat, rho):
        psi2 = ScalarFunction.tabulated([0, 1, 2, 4, 8], [0, 1, 1 + math.log(2), 1 + math.log(4) + 1e-3,
                                                            1 + math.log(8) + 1e-3], "Kinf", slope=1.0)
        plan = PLAN.with_(ensemble=EnsembleSpec(n_random=0))
        decay = verify_decay(vhat, stable, rho, plan, STATES)
        bound = verify_integral_bound(vhat, stable, rho, psi2, plan, STATES)
        assert decay.supported and bound.supported
        assert certify_integral("iUGS", stable, {"alpha": rho, "psi": psi2}, plan).supported


class TestMonotonicity:
    def test_constructed(self, stable, vhat):
        assert monotonicity_along_trajectory(vhat, stable, [1.5]).supported

    def test_square_unstable(self, unstable):
        assert monotonicity_along_trajectory(LyapunovEvaluator.closed_form("x1^2"), unstable, [1.0]).refuted

    def test_zero(self, unstable):
        ev = monotonicity_along_trajectory(LyapunovEvaluator.closed_form("x1^2"), unstable, [0.0])
        assert ev.supported and set(ev.details["values"]) == {0.0}


class TestCertificate:
    def test_nclf_constructed(self, stable, vhat, rho):
        psi2 = ScalarFunction.closed_form("r + 1", "Kinf")
        cert = certify_lyapunov(vhat, stable, rho, psi2, plan=PLAN.with_(ensemble=EnsembleSpec(n_random=0)),
                                states=STATES)
        assert cert.property_id == "NCLF"
        assert cert.evidence().supported
        assert cert.to_dict()["scope"] == "desk-scale evidence"

    def test_coercive(self, stable):
        cert = certify_lyapunov(LyapunovEvaluator.closed_form("abs(x1)"), stable, ID, ID, psi1=ID, plan=PLAN,
                                states=STATES)
        assert cert.property_id == "CLF" and cert.evidence().supported

    def test_level_set_csv(self, vhat):
        lines = level_set_csv(vhat, [[0.0], [0.5]]).splitlines()
        assert lines[0] == "x1,value"
        assert float(lines[2].split(",")[1]) == pytest.approx(0.5, abs=1e-8)
