import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lyocert.evidence import Status
from lyocert.system import (DEFAULT_SWITCHED, ConfigError, DisturbanceSignal, EnsembleSpec, FiniteEscape, SystemDef,
                            check_axioms, concatenate, equilibrium_check, evaluate_flow, load_system, shift,
                            simulate, system_from_config)

CONFIGS = __import__("pathlib").Path(__file__).resolve().parent.parent / "configs"

signals = st.builds(
    lambda gaps, vals: DisturbanceSignal(tuple(np.concatenate([[0.0], np.cumsum(gaps)]).tolist()),
                                         tuple((v,) for v in vals[:len(gaps) + 1])),
    st.lists(st.floats(0.05, 3.0), min_size=0, max_size=5),
    st.lists(st.floats(-1.0, 1.0), min_size=6, max_size=6),
)
SAMPLE = np.linspace(0, 12, 241)


def values(d, ts=SAMPLE):
    return np.array([d(t) for t in ts])


class TestDisturbanceSignal:
    def test_constant_shift(self):
        d = DisturbanceSignal.constant((0.3,))
        assert shift(d, 2.5) == d

    def test_shift_drops_past(self):
        d = DisturbanceSignal((0.0, 1.0), ((-1.0,), (1.0,)))
        assert shift(d, 1.0) == DisturbanceSignal.constant((1.0,))

    def test_normalization(self):
        d = DisturbanceSignal((0.0, 1.0, 1.0, 2.0), ((1.0,), (2.0,), (3.0,), (3.0,)))
        assert d.breakpoints == (0.0, 1.0)
        assert d.values == ((1.0,), (3.0,))

    def test_invalid(self):
        with pytest.raises(ValueError):
            DisturbanceSignal((1.0,), ((0.0,),))
        with pytest.raises(ValueError):
            shift(DisturbanceSignal.constant((0.0,)), -1.0)
        with pytest.raises(ValueError):
            concatenate(DisturbanceSignal.constant((0.0,)), DisturbanceSignal.constant((0.0,)), 0.0)

    def test_concatenate_constants(self):
        c = DisturbanceSignal.constant((0.5,))
        assert concatenate(c, c, 3.0) == c

    def test_concatenate_sides(self):
        d1 = DisturbanceSignal((0.0, 0.5), ((0.1,), (0.2,)))
        d2 = DisturbanceSignal((0.0, 0.01), ((0.7,), (0.9,)))
        d = concatenate(d1, d2, 2.0)
        eps = 1e-3
        assert d(2.0 - eps) == d1(2.0 - eps)
        assert d(2.0 + eps) == d2(eps)
        assert d(2.0) == d2(0.0)

    @given(signals, st.floats(0, 5), st.floats(0, 5))
    def test_shift_composes(self, d, s, t):
        lhs = values(shift(shift(d, s), t))
        rhs = values(shift(d, s + t))
        assert np.array_equal(lhs, rhs)

    @given(signals, st.floats(0.1, 6))
    def test_concatenate_round_trip(self, d, t):
        assert np.array_equal(values(concatenate(d, shift(d, t), t)), values(d))

    @given(signals, signals, st.floats(0.1, 6), st.floats(0, 4))
    def test_membership_preserved(self, d1, d2, t, tau):
        box = [[-1.0, 1.0]]
        assert shift(d1, tau).within(box)
        assert concatenate(d1, d2, t).within(box)

    def test_json_round_trip(self):
        d = DisturbanceSignal((0.0, 1.5), ((0.2, -0.1), (0.3, 0.4)))
        assert DisturbanceSignal.from_dict(json.loads(json.dumps(d.to_dict()))) == d


class TestEnsemble:
    def test_corners_first_and_deterministic(self):
        box = [[-1.0, 1.0], [0.0, 2.0]]
        a = EnsembleSpec().build(box, 10.0)
        b = EnsembleSpec().build(box, 10.0)
        assert a == b
        assert len(a) == 4 + 64
        assert {d.values[0] for d in a[:4]} == {(-1.0, 0.0), (-1.0, 2.0), (1.0, 0.0), (1.0, 2.0)}
        assert all(d.within(box) for d in a)
        assert all(len(d.breakpoints) <= 9 for d in a)

    def test_seed_changes_signals(self):
        assert EnsembleSpec(seed=1).build([[-1, 1]], 5.0) != EnsembleSpec(seed=0).build([[-1, 1]], 5.0)


class TestFlow:
    def test_scalar_stable(self):
        s = SystemDef.from_catalogue("scalar_stable")
        assert evaluate_flow(s, 1.0, [2.0])[0] == pytest.approx(2 * math.exp(-1), abs=1e-12)

    def test_scalar_unstable(self):
        s = SystemDef.from_catalogue("scalar_unstable")
        assert evaluate_flow(s, math.log(2), [1.0])[0] == pytest.approx(2.0, abs=1e-12)

    @pytest.mark.parametrize("name", ["scalar_stable", "bilinear", "saturating", "switched_2d"])
    def test_identity_exact(self, name):
        s = SystemDef.from_catalogue(name)
        x = np.full(s.dimension, 0.37)
        assert np.array_equal(evaluate_flow(s, 0.0, x), x)

    def test_ode_matches_closed_form(self):
        s = SystemDef.from_rhs(["-x1"])
        assert evaluate_flow(s, 1.0, [2.0])[0] == pytest.approx(2 * math.exp(-1), abs=1e-8)

    def test_ode_breakpoints_respected(self):
        s = SystemDef.from_rhs(["d1"], [[-1, 1]])
        d = DisturbanceSignal((0.0, 1.0), ((1.0,), (-1.0,)))
        traj = simulate(s, [0.0], d, 2.0)
        assert 1.0 in traj.knots.tolist()
        assert traj(1.0)[0] == pytest.approx(1.0, abs=1e-10)
        assert traj(2.0)[0] == pytest.approx(0.0, abs=1e-10)

    def test_saturating_matches_ode(self):
        cat = SystemDef.from_catalogue("saturating")
        ode = SystemDef.from_rhs(["-x1/(1+x1^2)"])
        for x in (0.3, 2.0, -5.0):
            assert evaluate_flow(cat, 3.0, [x])[0] == pytest.approx(evaluate_flow(ode, 3.0, [x])[0], abs=1e-8)

    def test_switched_matches_ode(self):
        cat = SystemDef.from_catalogue("switched_2d")
        a1, a2 = np.asarray(DEFAULT_SWITCHED["A1"]), np.asarray(DEFAULT_SWITCHED["A2"])
        d = DisturbanceSignal((0.0, 0.7), ((-1.0,), (1.0,)))
        x = np.array([1.0, -0.5])
        from scipy.linalg import expm
        oracle = expm(a2 * 0.8) @ expm(a1 * 0.7) @ x
        assert np.allclose(evaluate_flow(cat, 1.5, x, d), oracle, atol=1e-12)

    def test_finite_escape(self):
        s = SystemDef.from_rhs(["x1^2"])
        with pytest.raises(FiniteEscape) as info:
            simulate(s, [1.0], None, 5.0)
        lo, hi = info.value.bracket
        assert lo <= 1.0 + 1e-6 and hi >= 1.0 - 1e-6 and hi - lo < 0.5


class TestAxioms:
    def test_scalar_stable_supported(self):
        res = check_axioms(SystemDef.from_catalogue("scalar_stable"), tol=1e-8)
        assert set(res) == {"identity", "causality", "continuity", "cocycle"}
        assert all(ev.status is Status.SUPPORTED for ev in res.values())

    @pytest.mark.parametrize("name", ["scalar_stable", "scalar_unstable", "bilinear", "switched_2d", "saturating"])
    def test_catalogue_cocycle_tight(self, name):
        assert check_axioms(SystemDef.from_catalogue(name), tol=1e-12)["cocycle"].supported

    def test_ode_cocycle(self):
        res = check_axioms(SystemDef.from_rhs(["-x1"]), tol=1e-6)
        assert res["cocycle"].supported

    def test_broken_cocycle(self):
        ev = check_axioms(SystemDef.from_catalogue("broken_cocycle_demo"))["cocycle"]
        assert ev.refuted
        assert (ev.witness["t"], ev.witness["h"]) == (1.0, 1.0)
        assert ev.witness["composed"] == [2.0] and ev.witness["direct"] == [4.0]

    def test_escape_is_inconclusive(self):
        res = check_axioms(SystemDef.from_rhs(["x1^2"]), tol=1e-6)
        assert res["cocycle"].status is Status.INCONCLUSIVE
        assert res["cocycle"].witness is not None

    def test_integrator_convergence_trend(self):
        x = np.array([0.9])

        def residual(sys):
            return max(float(np.linalg.norm(evaluate_flow(sys, h, evaluate_flow(sys, t, x))
                                            - evaluate_flow(sys, t + h, x)))
                       for t in (1.0, 0.5, 2.0) for h in (1.0, 0.5, 2.0))

        res = [residual(SystemDef.from_rhs(["-x1+sin(x1)/2"], rtol=rt, atol=rt * 1e-2, method="RK45"))
               for rt in (1e-4, 1e-5, 1e-6, 1e-7)]
        assert all(b < a for a, b in zip(res, res[1:]))


class TestEquilibrium:
    def test_stable(self):
        s = SystemDef.from_catalogue("scalar_stable")
        assert equilibrium_check(s, 10.0, [DisturbanceSignal.constant(())]).supported

    def test_additive_refuted(self):
        s = SystemDef.from_rhs(["-x1+d1"], [[-1, 1]])
        ev = equilibrium_check(s, 5.0, EnsembleSpec(n_random=4).build(s.box, 5.0))
        assert ev.refuted
        assert ev.witness["d"]["values"] in ([[1.0]], [[-1.0]])

    def test_multiplicative_supported(self):
        s = SystemDef.from_rhs(["-x1+d1*x1"], [[-1, 1]])
        assert equilibrium_check(s, 5.0, EnsembleSpec(n_random=4).build(s.box, 5.0)).supported


class TestConfig:
    @pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
    def test_shipped_configs_load(self, path):
        sys = load_system(path)
        assert sys.dimension >= 1

    @pytest.mark.parametrize("cfg, fragment", [
        ({}, "either"),
        ({"catalogue": {"name": "nope"}}, "catalogue.name"),
        ({"rhs": ["x3"], "dimension": 1}, "rhs"),
        ({"rhs": ["-x1"], "dimension": 2}, "dimension"),
        ({"rhs": ["-x1"], "disturbance": {"dim": 2, "box": [[-1, 1]]}}, "disturbance.dim"),
        ({"rhs": ["-x1"], "disturbance": {"box": [[-1]]}}, "disturbance.box"),
    ])
    def test_config_errors(self, cfg, fragment):
        with pytest.raises(ConfigError, match=fragment.replace(".", r"\.")):
            system_from_config(cfg)

    def test_bad_json_location(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"rhs": [\n  "-x1",,\n]}')
        with pytest.raises(ConfigError, match=r"bad\.json:2:"):
            load_system(p)
