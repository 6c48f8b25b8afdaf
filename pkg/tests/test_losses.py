"""Loss definitions, curriculum, and trainer behavior."""

import math

import numpy as np
import pytest

from planealign import autodiff as ad
from planealign.errors import DegenerateWeights, NonFiniteLoss, TooFewPairs
from planealign.features import FeatureMap
from planealign.geom import Sim2, make_rng, sim2_apply
from planealign.losses import (
    CorrespondenceBatch,
    LossConfig,
    SoftMatchResult,
    geo_log_ratio_mean,
    loss_feat,
    loss_geo,
    loss_geo_var,
    loss_regr,
    loss_topo,
    sample_pairs,
    sample_triplets,
    soft_match,
    total_loss,
    train_toy,
)


def unit_rows(rng, q, c):
    x = rng.normal(size=(q, c))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_sim2(rng):
    return Sim2(
        s=math.exp(rng.uniform(-1, 1)),
        theta=rng.uniform(-math.pi, math.pi),
        t=tuple(rng.uniform(-30, 30, 2)),
    )


class TestLossFeat:
    def test_identity_two_pair_closed_form(self):
        # S = I at tau=1: every row/col term is log(1 + e^-1)
        f = np.eye(2)
        val = loss_feat(np.array(f), np.array(f), tau=1.0)
        assert val == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
        assert val == pytest.approx(0.3132616875182228, abs=1e-9)

    def test_permutation_invariance(self):
        rng = make_rng(1)
        fd = unit_rows(rng, 16, 8)
        ff = unit_rows(rng, 16, 8)
        perm = rng.permutation(16)
        assert loss_feat(fd, ff, 0.07) == pytest.approx(
            loss_feat(fd[perm], ff[perm], 0.07), abs=1e-12
        )

    def test_too_few_pairs(self):
        with pytest.raises(TooFewPairs):
            loss_feat(np.ones((1, 4)) / 2.0, np.ones((1, 4)) / 2.0, 0.07)

    def test_nonnegative_finite(self):
        rng = make_rng(2)
        for _ in range(20):
            val = loss_feat(unit_rows(rng, 8, 6), unit_rows(rng, 8, 6), 0.07)
            assert np.isfinite(val) and val >= 0


class TestSoftMatch:
    def make_fm(self, rng, hp=4, wp=4, c=6):
        return FeatureMap(grid=rng.normal(size=(hp, wp, c)), patch=16, source_size=(hp * 16, wp * 16))

    def test_saturated_row_hits_patch_centroid(self):
        rng = make_rng(3)
        fm = self.make_fm(rng)
        flat = fm.flat()
        target = 5  # row 1, col 1
        f = flat[target] / np.linalg.norm(flat[target])
        res = soft_match(f[None, :], fm, tau=1e-4)
        assert np.allclose(res.coords[0], fm.centroids()[target], atol=1e-6)
        assert res.weights[0] > 0.999

    def test_orthogonal_query_gives_uniform_row(self):
        # constant feature map: every patch matches equally
        fm = FeatureMap(grid=np.ones((4, 4, 4)), patch=16, source_size=(64, 64))
        q = np.ones((1, 4)) / 2.0
        res = soft_match(q, fm, tau=0.07)
        assert np.allclose(res.coords[0], (32.0, 32.0), atol=1e-9)
        assert res.weights[0] == pytest.approx(1.0 / 16, abs=1e-12)

    def test_matches_naive_reference(self):
        rng = make_rng(4)
        fm = self.make_fm(rng)
        q = unit_rows(rng, 5, 6)
        res = soft_match(q, fm, tau=0.07)
        flat = fm.flat()
        flat = flat / np.linalg.norm(flat, axis=1, keepdims=True)
        cents = fm.centroids()
        for i in range(5):
            logits = np.array([q[i] @ flat[k] / 0.07 for k in range(16)])
            p = np.exp(logits - logits.max())
            p /= p.sum()
            want = sum(p[k] * cents[k] for k in range(16))
            assert np.allclose(res.coords[i], want, atol=1e-9)
            assert res.weights[i] == pytest.approx(p.max(), abs=1e-12)
            assert p.sum() == pytest.approx(1.0, abs=1e-9)


class TestLossRegr:
    def test_zero_when_exact(self):
        rng = make_rng(5)
        gt = rng.uniform(0, 50, (6, 2))
        pred = SoftMatchResult(coords=gt.copy(), weights=np.full(6, 0.5))
        assert loss_regr(pred, gt, huber_delta=1.0) < 1e-9

    def test_half_delta_quadratic_value(self):
        delta = 2.0
        gt = np.array([[0.0, 0.0]])
        pred = SoftMatchResult(coords=np.array([[0.5 * delta, 0.0]]), weights=np.array([0.7]))
        # quadratic branch: 0.5 * (0.5 delta)^2, weights cancel for a single pair
        assert loss_regr(pred, gt, huber_delta=delta) == pytest.approx(
            0.5 * (0.5 * delta) ** 2, abs=1e-12
        )

    def test_equal_weights_reduce_to_mean(self):
        rng = make_rng(6)
        gt = rng.uniform(0, 50, (8, 2))
        coords = gt + rng.normal(0, 0.3, (8, 2))
        pred = SoftMatchResult(coords=coords, weights=np.full(8, 0.25))
        dists = np.linalg.norm(coords - gt, axis=1)
        huber = np.where(dists <= 1.0, 0.5 * dists**2, 1.0 * (dists - 0.5))
        assert loss_regr(pred, gt, 1.0) == pytest.approx(huber.mean(), abs=1e-12)

    def test_zero_weights_raise(self):
        pred = SoftMatchResult(coords=np.zeros((3, 2)), weights=np.zeros(3))
        with pytest.raises(DegenerateWeights):
            loss_regr(pred, np.zeros((3, 2)), 1.0)


class TestLossTopoGeo:
    def test_similarity_transform_gives_zero_topo(self):
        rng = make_rng(7)
        for _ in range(50):
            src = rng.uniform(0, 100, (10, 2))
            m = random_sim2(rng)
            pred = SoftMatchResult(coords=sim2_apply(m, src), weights=rng.uniform(0.2, 1, 10))
            val = loss_topo(pred, src, n_triplets=20, rng=make_rng(1))
            assert val <= 1e-9

    def test_reflection_detected(self):
        src = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        mirrored = src * np.array([1.0, -1.0])  # reflection flips the signed sine
        pred = SoftMatchResult(coords=mirrored, weights=np.ones(3))
        val = loss_topo(pred, src, n_triplets=8, rng=make_rng(2))
        assert val > 1e-3

    def test_hand_computed_single_triplet(self):
        src = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        pred_pts = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 1.0]])
        from planealign.losses import loss_topo_var

        tri = np.array([[0, 1, 2]])
        val = float(
            loss_topo_var(
                ad.Var(pred_pts), ad.Var(np.ones(3)), src, tri, huber_delta=0.1
            ).value
        )
        # src angle at vertex 0 is 90deg: cos=0, sin=1.
        # pred: u=(2,0), v=(1,1): cos=1/sqrt2, sin=1/sqrt2.
        # both residuals exceed delta=0.1, so both take the linear branch.
        d_cos = abs(1 / math.sqrt(2) - 0.0)
        d_sin = abs(1 / math.sqrt(2) - 1.0)
        want = 0.1 * (d_cos - 0.05) + 0.1 * (d_sin - 0.05)
        assert val == pytest.approx(want, abs=1e-12)

    def test_too_few_for_triplets(self):
        pred = SoftMatchResult(coords=np.zeros((2, 2)), weights=np.ones(2))
        with pytest.raises(TooFewPairs):
            loss_topo(pred, np.zeros((2, 2)), 4, rng=make_rng(3))

    def test_similarity_gives_zero_geo(self):
        rng = make_rng(8)
        for _ in range(50):
            src = rng.uniform(0, 100, (8, 2))
            m = random_sim2(rng)
            pred = SoftMatchResult(coords=sim2_apply(m, src), weights=rng.uniform(0.2, 1, 8))
            assert loss_geo(pred, src, n_pairs=16, rng=make_rng(4)) <= 1e-9

    def test_pure_scaling_gives_zero_geo(self):
        rng = make_rng(9)
        src = rng.uniform(0, 100, (8, 2))
        pred = SoftMatchResult(coords=2.0 * src, weights=np.ones(8))
        assert loss_geo(pred, src, n_pairs=16, rng=make_rng(5)) <= 1e-9

    def test_one_stretched_pair_hand_value(self):
        src = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        coords = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
        pairs = np.array([[0, 1], [0, 2], [1, 2]])
        w = np.ones(3)
        val = float(
            loss_geo_var(ad.Var(coords), ad.Var(w), src, pairs, huber_delta=0.1).value
        )
        deltas = np.array(
            [math.log(2.0), 0.0, math.log(math.hypot(2, 1) / math.hypot(1, 1))]
        )
        mean = deltas.mean()
        h = np.where(
            np.abs(deltas - mean) <= 0.1,
            0.5 * (deltas - mean) ** 2,
            0.1 * (np.abs(deltas - mean) - 0.05),
        )
        assert val == pytest.approx(h.mean(), abs=1e-12)
        assert val > 0

    def test_stop_gradient_semantics(self):
        rng = make_rng(10)
        src = rng.uniform(0, 60, (6, 2))
        coords = rng.uniform(0, 60, (6, 2))
        w = rng.uniform(0.3, 1.0, 6)
        pairs = sample_pairs(src, 12, make_rng(6))
        base_mean = geo_log_ratio_mean(coords, w, src, pairs)

        cv = ad.Var(coords)
        out = loss_geo_var(cv, ad.Var(w), src, pairs, 0.1)
        ad.backward(out)
        analytic = cv.grad.copy()

        h = 1e-6
        fd_frozen = np.zeros_like(coords)
        fd_live = np.zeros_like(coords)
        for i in range(coords.shape[0]):
            for j in range(2):
                for sign in (+1, -1):
                    bumped = coords.copy()
                    bumped[i, j] += sign * h
                    frozen = float(
                        loss_geo_var(
                            ad.Var(bumped), ad.Var(w), src, pairs, 0.1, frozen_mean=base_mean
                        ).value
                    )
                    live = float(
                        loss_geo_var(ad.Var(bumped), ad.Var(w), src, pairs, 0.1).value
                    )
                    fd_frozen[i, j] += sign * frozen / (2 * h)
                    fd_live[i, j] += sign * live / (2 * h)
        # analytic gradient equals FD with the mean frozen ...
        assert np.allclose(analytic, fd_frozen, atol=1e-4)
        # ... and differs from FD with the mean live
        assert not np.allclose(analytic, fd_live, atol=1e-6)


class TestTotalLoss:
    def test_default_coefficients(self):
        cfg = LossConfig()
        assert (cfg.lambda_feat, cfg.lambda_regr, cfg.lambda_topo, cfg.lambda_geo) == (
            1.0,
            50.0,
            10.0,
            10.0,
        )
        assert cfg.tau == 0.07

    def test_gates(self):
        cfg = LossConfig()
        parts = {"feat": 1.0, "regr": 2.0, "topo": 3.0, "geo": 4.0}
        assert total_loss(0.05, parts, cfg) == pytest.approx(1.0)
        assert total_loss(0.10, parts, cfg) == pytest.approx(1.0 + 100.0)
        assert total_loss(0.15, parts, cfg) == pytest.approx(1.0 + 100.0)
        assert total_loss(0.20, parts, cfg) == pytest.approx(1.0 + 100.0 + 30.0 + 40.0)
        assert total_loss(0.5, parts, cfg) == pytest.approx(171.0)

    def test_gated_terms_carry_no_gradient(self):
        feat = ad.Var(np.array(1.0))
        topo = ad.Var(np.array(3.0))
        parts = {"feat": feat, "regr": ad.Var(np.array(2.0)), "topo": topo, "geo": ad.Var(np.array(4.0))}
        out = total_loss(0.05, parts, LossConfig())
        ad.backward(out)
        assert feat.grad is not None
        assert topo.grad is None  # not even part of the graph


class TestSampling:
    def test_triplets_are_distinct_and_spread(self):
        rng = make_rng(11)
        src = rng.uniform(0, 10, (20, 2))
        tri = sample_triplets(src, 50, rng)
        assert len(tri) == 50
        assert np.all(tri[:, 0] != tri[:, 1])
        assert np.all(tri[:, 1] != tri[:, 2])
        assert np.all(tri[:, 0] != tri[:, 2])

    def test_pairs_reject_coincident(self):
        src = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 5.0]])
        pairs = sample_pairs(src, 30, make_rng(12))
        d = np.linalg.norm(src[pairs[:, 0]] - src[pairs[:, 1]], axis=1)
        assert np.all(d > 0)


class TestTrainer:
    def small_corpus(self, q=12, size=64):
        def corpus(step, rng):
            img_d = make_rng([step, 1]).random((size, size))
            img_f = make_rng([step, 2]).random((size, size, 3))
            pd = make_rng([step, 3]).uniform(4, size - 4, (q, 2))
            pf = make_rng([step, 4]).uniform(4, size - 4, (q, 2))
            return CorrespondenceBatch(img_d, img_f, pd, pf)

        return corpus

    def test_zero_steps_rejected(self):
        with pytest.raises(ValueError):
            train_toy(self.small_corpus(), LossConfig(), steps=0, seed=1)

    def test_deterministic_for_seed(self):
        from planealign.features import ToyEncoder

        kw = dict(cfg=LossConfig(n_triplets=8, n_pairs=8), steps=3, seed=5)
        enc_a, log_a = train_toy(
            self.small_corpus(), encoder=ToyEncoder.init(5, hidden=16, channels=8), **kw
        )
        enc_b, log_b = train_toy(
            self.small_corpus(), encoder=ToyEncoder.init(5, hidden=16, channels=8), **kw
        )
        for k in enc_a.params:
            assert np.array_equal(enc_a.params[k], enc_b.params[k])
        assert log_a == log_b

    def test_log_schema(self, tmp_path):
        from planealign.features import ToyEncoder

        log_path = tmp_path / "log.jsonl"
        _, log = train_toy(
            self.small_corpus(),
            LossConfig(n_triplets=8, n_pairs=8),
            steps=2,
            seed=3,
            encoder=ToyEncoder.init(3, hidden=16, channels=8),
            log_path=log_path,
        )
        import json

        lines = [json.loads(line) for line in log_path.read_text().splitlines()]
        assert len(lines) == 2
        for entry in lines:
            assert set(entry) == {"step", "frac", "feat", "regr", "topo", "geo", "total", "grad_norm"}

    def test_non_finite_aborts_with_checkpoint(self):
        from planealign.features import ToyEncoder

        enc = ToyEncoder.init(9, hidden=16, channels=8)

        base = self.small_corpus()

        def corpus(step, rng):
            batch = base(step, rng)
            if step == 1:
                batch.density_image = np.full_like(batch.density_image, np.nan)
            return batch

        with pytest.raises(NonFiniteLoss) as err:
            train_toy(corpus, LossConfig(n_triplets=8, n_pairs=8), steps=4, seed=9, encoder=enc)
        assert err.value.step == 1
        assert err.value.last_good is not None
        assert np.all(np.isfinite(err.value.last_good.params["w1"]))
