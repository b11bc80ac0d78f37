import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from shapecomp import metrics as M
from shapecomp.geometry import EmptyCloudError, PointCloud

S1 = np.array([[0.0, 0, 0], [1, 0, 0]])
S2 = np.array([[0.0, 0, 0], [0, 1, 0]])


def brute_emd(a, b):
    """Minimum mean distance over all n! bijections."""
    best, arg = math.inf, None
    for perm in itertools.permutations(range(len(a))):
        cost = M.plan_cost(a, b, np.array(perm))
        if cost < best:
            best, arg = cost, perm
    return best, arg


def brute_chamfer(a, b):
    d = ((a[:, None] - b[None]) ** 2).sum(-1)
    return d.min(1).mean() + d.min(0).mean()


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    return q * np.sign(np.diag(r))


class TestChamfer:
    def test_identity(self):
        pts = np.random.default_rng(0).normal(size=(10, 3))
        assert M.chamfer(pts, pts) == 0.0

    def test_two_point_example(self):
        assert M.chamfer(S1, S2) == pytest.approx(1.0, abs=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(7, 3)), rng.normal(size=(11, 3))
        assert M.chamfer(a, b) == M.chamfer(b, a)

    def test_squared_distances(self):
        assert M.chamfer([[0, 0, 0]], [[2, 0, 0]]) == pytest.approx(8.0)

    @pytest.mark.parametrize("n", [1, 17, 256, 2048])
    def test_index_equals_bruteforce(self, n):
        rng = np.random.default_rng(n)
        a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        assert M.chamfer(a, b, method="index") == M.chamfer(a, b, method="brute")

    def test_against_oracle(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(30, 3)), rng.normal(size=(20, 3))
        assert M.chamfer(a, b) == pytest.approx(brute_chamfer(a, b), rel=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyCloudError):
            M.chamfer(np.zeros((0, 3)), S1)


class TestEmdExact:
    def test_identity(self):
        plan = M.emd_exact(S1, S1)
        assert plan.total_cost == 0.0 and plan.mapping.tolist() == [0, 1]

    def test_two_point_example(self):
        plan = M.emd_exact(S1, S2)
        assert plan.total_cost == pytest.approx(math.sqrt(2) / 2, abs=1e-12)
        assert plan.mapping.tolist() == [0, 1]

    @pytest.mark.parametrize("seed", range(20))
    def test_factorial_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 7))
        a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        best, _ = brute_emd(a, b)
        assert M.emd_exact(a, b).total_cost == best

    def test_plan_invariants(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(40, 3)), rng.normal(size=(40, 3))
        plan = M.emd_exact(a, b)
        assert sorted(plan.mapping.tolist()) == list(range(40))
        assert plan.total_cost == pytest.approx(np.linalg.norm(a - b[plan.mapping], axis=1).mean())

    def test_symmetric(self):
        rng = np.random.default_rng(4)
        a, b = rng.normal(size=(30, 3)), rng.normal(size=(30, 3))
        assert M.emd_exact(a, b).total_cost == pytest.approx(M.emd_exact(b, a).total_cost, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_rigid_invariance(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(25, 3)), rng.normal(size=(25, 3))
        r, t = random_rotation(rng), rng.normal(size=3)
        before = M.emd_exact(a, b).total_cost
        after = M.emd_exact(a @ r.T + t, b @ r.T + t).total_cost
        assert abs(before - after) < 1e-9

    @pytest.mark.parametrize("seed", range(10))
    def test_triangle(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (rng.normal(size=(12, 3)) for _ in range(3))
        e = lambda x, y: M.emd_exact(x, y).total_cost
        assert e(a, c) <= e(a, b) + e(b, c) + 1e-9

    def test_errors(self):
        with pytest.raises(ValueError, match="equal"):
            M.emd_exact(np.zeros((2, 3)), np.zeros((3, 3)))
        with pytest.raises(ValueError, match="512"):
            M.emd_exact(np.zeros((513, 3)), np.zeros((513, 3)))
        with pytest.raises(EmptyCloudError):
            M.emd_exact(np.zeros((0, 3)), np.zeros((0, 3)))

    def test_accepts_point_clouds(self):
        assert M.emd_exact(PointCloud(S1), PointCloud(S2)).total_cost == pytest.approx(math.sqrt(2) / 2)


class TestEmdApprox:
    def test_identity(self):
        pts = np.random.default_rng(0).normal(size=(20, 3))
        assert M.emd_approx(pts, pts, 1e-3).total_cost == 0.0

    def test_bounds(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            a, b = rng.normal(size=(48, 3)), rng.normal(size=(48, 3))
            exact = M.emd_exact(a, b).total_cost
            cost = M.cost_matrix(a, b)
            for eps in (1e-1, 1e-2, 1e-3):
                got = M.emd_approx(a, b, eps).total_cost
                assert exact - 1e-12 <= got <= exact + eps * (cost.max() - cost.min()) + 1e-12

    def test_within_one_percent(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            a, b = rng.uniform(-1, 1, (64, 3)), rng.uniform(-1, 1, (64, 3))
            exact = M.emd_exact(a, b).total_cost
            assert M.emd_approx(a, b).total_cost <= 1.01 * exact

    def test_monotone_in_eps(self):
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            a, b = rng.normal(size=(40, 3)), rng.normal(size=(40, 3))
            costs = [M.emd_approx(a, b, eps).total_cost for eps in (0.3, 0.1, 0.03, 0.01, 1e-3, 1e-4)]
            assert all(x >= y for x, y in zip(costs, costs[1:]))

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        a, b = rng.normal(size=(64, 3)), rng.normal(size=(64, 3))
        p1, p2 = M.emd_approx(a, b, 1e-2), M.emd_approx(a, b, 1e-2)
        assert np.array_equal(p1.mapping, p2.mapping) and p1.total_cost == p2.total_cost

    def test_non_convergence_carries_plan(self):
        rng = np.random.default_rng(6)
        a, b = rng.normal(size=(64, 3)), rng.normal(size=(64, 3))
        with pytest.raises(M.AuctionNotConverged) as info:
            M.emd_approx(a, b, 1e-4, iters=10)
        plan = info.value.plan
        assert sorted(plan.mapping.tolist()) == list(range(64))

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            M.emd_approx(S1, S2, eps=0.0)

    def test_single_point(self):
        assert M.emd_approx([[0, 0, 0]], [[3, 4, 0]]).total_cost == 5.0


class TestLosses:
    def test_batched_emd_loss_mean(self):
        rng = np.random.default_rng(0)
        p, q = rng.normal(size=(3, 10, 3)), rng.normal(size=(3, 10, 3))
        loss = M.emd_loss(M.T.Tensor(p), q, exact=True).item()
        expected = np.mean([M.emd_exact(x, y).total_cost for x, y in zip(p, q)])
        assert loss == pytest.approx(expected, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            M.emd_loss(M.T.Tensor(np.zeros((2, 4, 3))), np.zeros((2, 5, 3)))


class TestMetricReport:
    def test_json_round_trip(self):
        rep = M.MetricReport(0.5, 0.25, {"box": (0.1, 0.2)}, oracle={"box": (0.01, 0.02)})
        back = M.MetricReport.from_json(rep.to_json())
        assert back == rep

    def test_fixed_keys(self):
        d = json.loads(M.MetricReport(0.0, 0.0).to_json())
        assert {"cd", "emd", "per_object", "scale_note"} <= set(d)
        assert "1e4" in d["scale_note"] and "1e2" in d["scale_note"]

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            M.MetricReport(-1.0, 0.0)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0, 1e6), st.floats(0, 1e6))
    def test_values_round_trip_exactly(self, cd, emd):
        rep = M.MetricReport(cd, emd, {"x": (cd, emd)})
        assert M.MetricReport.from_json(rep.to_json()).per_object["x"] == (cd, emd)
