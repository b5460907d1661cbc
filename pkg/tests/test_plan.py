import math
import threading

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lyocert.comparison import ScalarFunction
from lyocert.plan import (INTERIOR_POINTS, PlanContext, SamplingPlan, TrajectoryBank, ball_states, geometric_ladder,
                          interior_states, parallel_map, sphere_states, suffix_integrals, tail_bound)
from lyocert.system import EnsembleSpec, SystemDef, simulate


class TestLadders:
    def test_geometric(self):
        assert geometric_ladder(4.0) == (0.0, 0.25, 0.5, 1.0, 2.0, 4.0)
        assert geometric_ladder(3.0)[-1] == 3.0

    def test_eps_and_deltas(self):
        plan = SamplingPlan(eps0=1.0, eps_levels=3)
        assert plan.eps_ladder == (1.0, 0.5, 0.25)
        d = plan.deltas(0.5)
        assert d[0] == 2.0 and list(d) == sorted(d, reverse=True)

    def test_default_times_half_horizon(self):
        assert SamplingPlan(horizon=50.0).times[-1] == 25.0

    def test_round_trip(self):
        plan = SamplingPlan(radii=(1.0, 3.0), t_ladder=(0, 1, 2), ensemble=EnsembleSpec(seed=3, n_random=5))
        assert SamplingPlan.from_dict(plan.to_dict()) == plan


class TestStates:
    @given(st.integers(1, 5), st.floats(0.1, 10))
    def test_sphere_norms(self, dim, r):
        pts = sphere_states(dim, r, 8)
        assert all(abs(np.linalg.norm(p) - r) < 1e-9 * r for p in pts)

    @given(st.integers(1, 4), st.floats(0.1, 10))
    def test_interior_inside(self, dim, r):
        assert all(np.linalg.norm(p) <= r * (1 + 1e-12) for p in interior_states(dim, r, 16))

    def test_ball_contains_origin_and_inner_spheres(self):
        pts = ball_states(1, 2.0, SamplingPlan(radii=(0.5, 1.0, 2.0, 4.0)))
        norms = sorted({float(np.linalg.norm(p)) for p in pts})
        assert norms == [0.0, 0.5, 1.0, 2.0]

    def test_interior_layer_default(self):
        plan = SamplingPlan(radii=(1.0,))
        cat = PlanContext(SystemDef.from_catalogue("scalar_stable"), plan)
        ode = PlanContext(SystemDef.from_rhs(["-x1"]), plan)
        assert len(ode.ball(1.0)) == len(cat.ball(1.0)) + INTERIOR_POINTS
        fixed = PlanContext(SystemDef.from_rhs(["-x1"]), plan.with_(interior_points=0))
        assert len(fixed.ball(1.0)) == len(cat.ball(1.0))


class TestIntegrals:
    def test_tail_zero_and_infinite(self):
        assert tail_bound(lambda s: 0 * s, 10.0, 1.0) == 0.0
        assert math.isinf(tail_bound(lambda s: np.exp(s), 10.0, 1.0))

    def test_tail_exponential(self):
        got = tail_bound(lambda s: np.exp(-s), 10.0, 1.0)
        assert got == pytest.approx(math.exp(-10.0), rel=1e-9)

    def test_suffix_integrals(self):
        sys = SystemDef.from_catalogue("scalar_stable")
        tr = simulate(sys, [1.0], None, 10.0)
        vals, err = suffix_integrals(tr, ScalarFunction.identity(), [0.0, 1.0, 5.0])
        expect = [math.exp(-c) - math.exp(-10.0) for c in (0.0, 1.0, 5.0)]
        assert vals == pytest.approx(expect, abs=1e-12)
        assert err < 1e-10


class TestConcurrency:
    def test_parallel_map_order(self, monkeypatch):
        monkeypatch.setenv("LYOCERT_THREADS", "4")
        assert parallel_map(lambda v: v * v, list(range(50))) == [v * v for v in range(50)]

    def test_bank_shared_entries(self):
        sys = SystemDef.from_catalogue("bilinear")
        bank = TrajectoryBank(sys, EnsembleSpec(n_random=2).build(sys.box, 5.0), 5.0)
        x = np.array([0.7])
        seen = []
        threads = [threading.Thread(target=lambda: seen.append(bank.get(x, 1))) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(s is seen[0] for s in seen)
