import numpy as np
import pytest

from slfm import autodiff as ad
from slfm import slfm
from slfm.autodiff import Tensor
from slfm.errors import ConfigError

D2R = np.pi / 180.0


def geo(ts, tt, phi):
    loss, codes = slfm.geo_loss_pit(np.array([ts * D2R], np.float32), np.array([tt * D2R], np.float32), np.array([phi * D2R], np.float32))
    return float(loss.data), int(codes[0])


class TestGeoPit:
    def test_exact_consistency_zero(self):
        val, code = geo(30.0, 0.0, 30.0)
        assert val == pytest.approx(0.0, abs=1e-9)
        assert code == 0

    def test_reflection_branch_zero(self):
        val, code = geo(-30.0, 0.0, 30.0)
        assert val == pytest.approx(0.0, abs=1e-9)
        assert code in (2, 3)  # source angle reflected

    def test_orthogonal_all_branches_equal_two(self):
        # every branch: ||r(0) - R(90)r(0)||^2 = 2
        val, _ = geo(0.0, 0.0, 90.0)
        assert val == pytest.approx(2.0, abs=1e-6)

    def test_matches_vector_formulation(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            ts, tt, phi = rng.uniform(-np.pi, np.pi, 3)
            val, _ = geo(np.degrees(ts), np.degrees(tt), np.degrees(phi))
            best = np.inf
            q = np.diag([1.0, -1.0])
            rot = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
            for ms in (np.eye(2), q):
                for mt in (np.eye(2), q):
                    rs = ms @ np.array([np.cos(ts), np.sin(ts)])
                    rt = mt @ np.array([np.cos(tt), np.sin(tt)])
                    best = min(best, float(np.sum((rs - rot @ rt) ** 2)))
            assert val == pytest.approx(best, abs=1e-5)

    def test_mirror_invariance(self):
        # jointly reflecting all angles leaves the PIT minimum unchanged
        rng = np.random.default_rng(1)
        for _ in range(30):
            ts, tt, phi = rng.uniform(-180, 180, 3)
            a, _ = geo(ts, tt, phi)
            b, _ = geo(-ts, -tt, -phi)
            assert a == pytest.approx(b, abs=1e-5)


class TestBinauralLoss:
    def test_zero_angle_ln2(self):
        for d in (-1, 1):
            val = float(slfm.binaural_loss(np.zeros(1, np.float32), [d]).data)
            assert val == pytest.approx(np.log(2.0), abs=1e-6)

    def test_positive_agreement_small_loss(self):
        val = float(slfm.binaural_loss(np.array([30 * D2R], np.float32), [1]).data)
        assert val == pytest.approx(np.logaddexp(0, -2.5), abs=1e-4)  # ~0.0789

    def test_disagreement_large_loss(self):
        val = float(slfm.binaural_loss(np.array([-30 * D2R], np.float32), [1]).data)
        assert val == pytest.approx(np.logaddexp(0, 2.5), abs=1e-4)  # ~2.5789

    def test_monotone_in_logit(self):
        thetas = np.linspace(-0.5 * np.pi, 0.5 * np.pi, 41)
        vals = [float(slfm.binaural_loss(np.array([t], np.float32), [1]).data) for t in thetas]
        assert all(a >= b - 1e-7 for a, b in zip(vals, vals[1:]))

    def test_rejects_bad_targets(self):
        with pytest.raises(ConfigError):
            slfm.binaural_loss(np.zeros(1, np.float32), [0])


class TestSymLoss:
    def test_consistent_zero(self):
        val = slfm.sym_loss(
            np.array([10 * D2R], np.float32), np.array([-10 * D2R], np.float32),
            np.array([20 * D2R], np.float32), np.array([-20 * D2R], np.float32),
        )
        assert float(val.data) == pytest.approx(0.0, abs=1e-7)

    def test_two_degree_residual(self):
        val = slfm.sym_loss(
            np.array([10 * D2R], np.float32), np.array([-8 * D2R], np.float32),
            np.array([20 * D2R], np.float32), np.array([-20 * D2R], np.float32),
        )
        assert float(val.data) == pytest.approx(2 * D2R, abs=1e-6)

    def test_symmetric_under_pair_exchange(self):
        a = slfm.sym_loss(np.array([0.1], np.float32), np.array([0.2], np.float32), np.array([0.3], np.float32), np.array([-0.25], np.float32))
        b = slfm.sym_loss(np.array([0.1], np.float32), np.array([0.2], np.float32), np.array([-0.25], np.float32), np.array([0.3], np.float32))
        assert float(a.data) == pytest.approx(float(b.data), abs=1e-7)


class TestCombinedLoss:
    def _outputs(self, n=8, seed=0):
        rng = np.random.default_rng(seed)
        mk = lambda: Tensor(rng.uniform(-1.5, 1.5, n).astype(np.float32), requires_grad=True)
        d = rng.choice([-1, 1], size=n)
        return [mk() for _ in range(6)], d

    def test_breakdown_identity(self):
        (ts, tt, tsf, ttf, pst, pts), d = self._outputs()
        total, bd = slfm.combined_loss(ts, tt, tsf, ttf, pst, pts, d, -d, lam=5.0)
        assert bd.total == pytest.approx(5.0 * bd.geo + bd.binaural + bd.sym, abs=1e-5)
        assert float(total.data) == pytest.approx(bd.total, abs=1e-6)

    def test_lambda_zero_decouples_geo(self):
        (ts, tt, tsf, ttf, pst, pts), d = self._outputs(seed=3)
        _, bd = slfm.combined_loss(ts, tt, tsf, ttf, pst, pts, d, d, lam=0.0)
        assert bd.total == pytest.approx(bd.binaural + bd.sym, abs=1e-6)
        assert bd.geo > 0

    def test_loss_subsets(self):
        (ts, tt, tsf, ttf, pst, pts), d = self._outputs(seed=4)
        _, bd = slfm.combined_loss(ts, tt, tsf, ttf, pst, pts, d, d, losses=("geo",))
        assert bd.binaural == 0.0 and bd.sym == 0.0 and bd.geo > 0

    def test_nonnegative_and_zero_iff_perfect(self):
        ts = Tensor(np.array([0.5], np.float32))
        tt = Tensor(np.array([0.2], np.float32))
        pst = Tensor(np.array([0.3], np.float32))
        pts = Tensor(np.array([-0.3], np.float32))
        tsf = Tensor(np.array([-0.5], np.float32))
        ttf = Tensor(np.array([-0.2], np.float32))
        total, bd = slfm.combined_loss(ts, tt, tsf, ttf, pst, pts, [1], [1], lam=5.0)
        assert bd.geo == pytest.approx(0.0, abs=1e-7)
        assert bd.sym == pytest.approx(0.0, abs=1e-7)
        assert bd.binaural > 0  # BCE never exactly zero
        assert bd.total >= 0

    def test_gradients_flow_through_selected_branch_only(self):
        ts = Tensor(np.array([30 * D2R], np.float32), requires_grad=True)
        tt = Tensor(np.array([0.0], np.float32), requires_grad=True)
        pst = Tensor(np.array([30 * D2R], np.float32), requires_grad=True)
        loss, codes = slfm.geo_loss_pit(ts, tt, pst)
        loss.backward()
        assert ts.grad is not None and np.isfinite(ts.grad).all()
