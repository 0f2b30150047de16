import numpy as np
import pytest

from aenib.autodiff import Tensor
from aenib.errors import UnsupportedConfigurationError
from aenib.latent import LatentPair
from aenib.ood import (DetectionResult, ScoreKind, auroc_exact,
                       auroc_threshold_sweep, combined_score, detection_metrics,
                       dirichlet_score, fpr_at_tpr, msp_score, score_samples)

rng = np.random.default_rng(2024)


def brute_force_auroc(s_in, s_out):
    wins = sum(1.0 if a > b else (0.5 if a == b else 0.0) for a in s_in for b in s_out)
    return wins / (len(s_in) * len(s_out))


class TestScores:
    def test_msp(self):
        onehot = np.zeros(10)
        onehot[4] = 1.0
        assert msp_score(onehot) == 1.0
        assert msp_score(np.full(10, 0.1)) == pytest.approx(0.1)
        assert msp_score(np.array([0.7, 0.2, 0.1])) == pytest.approx(0.7)

    def test_dirichlet_uniform(self):
        val = dirichlet_score(np.full(10, 0.1), 0.05)
        assert val == pytest.approx((0.05 - 1) * 10 * np.log(0.1), rel=1e-9)

    def test_dirichlet_clamped_onehot(self):
        onehot = np.zeros(10)
        onehot[0] = 1.0
        val = dirichlet_score(onehot, 0.05)
        assert val == pytest.approx((0.05 - 1) * 9 * np.log(1e-12), rel=1e-9)

    def test_dirichlet_prefers_peaked(self):
        for k in (2, 5, 10):
            peaked = np.full(k, (1 - 0.9) / (k - 1))
            peaked[0] = 0.9
            assert dirichlet_score(peaked) > dirichlet_score(np.full(k, 1 / k))

    def test_dirichlet_permutation_invariant(self):
        p = rng.dirichlet(np.ones(8))
        assert dirichlet_score(p) == pytest.approx(
            dirichlet_score(p[rng.permutation(8)]), rel=1e-12)

    def test_dirichlet_alpha_range(self):
        with pytest.raises(ValueError):
            dirichlet_score(np.full(4, 0.25), alpha=1.5)

    def test_combined_zero_nuisance(self):
        p = rng.dirichlet(np.ones(10))
        assert combined_score(p, np.zeros(16)) == pytest.approx(dirichlet_score(p))

    def test_combined_decreases_with_norm(self):
        p = np.full(10, 0.1)
        vals = [combined_score(p, np.full(4, r)) for r in (0.0, 0.5, 1.0, 2.0)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_combined_example_value(self):
        val = combined_score(np.full(10, 0.1), np.ones(4), 0.05)
        assert val == pytest.approx((0.05 - 1) * 10 * np.log(0.1) - 2.0, rel=1e-9)

    def test_combined_rejects_vq_payload(self):
        pair = LatentPair(z=Tensor(np.zeros((1, 4))), codes=np.zeros((1, 2), int),
                          quantized=Tensor(np.zeros((1, 2, 3))))
        with pytest.raises(UnsupportedConfigurationError):
            combined_score(np.full((1, 10), 0.1), pair)

    def test_scores_order_invariant(self):
        probs = rng.dirichlet(np.ones(10), size=20)
        zn = rng.standard_normal((20, 8))
        perm = rng.permutation(20)
        for kind in ScoreKind:
            a = score_samples(kind, probs, zn)
            b = score_samples(kind, probs[perm], zn[perm])
            assert np.allclose(a[perm], b)


class TestAUROC:
    def test_example_partial_overlap(self):
        # brute force: 4 winning pairs of 6
        assert auroc_exact([3, 2, 1], [2.5, 0]) == pytest.approx(4 / 6, rel=1e-12)

    def test_perfect_and_symmetric(self):
        assert auroc_exact([1, 2], [0, 0.5]) == 1.0
        assert auroc_exact([1, 2, 3], [1, 2, 3]) == pytest.approx(0.5)

    def test_threshold_sweep_equals_exact_on_200_instances(self):
        for seed in range(200):
            r = np.random.default_rng(seed)
            n_in, n_out = int(r.integers(1, 51)), int(r.integers(1, 51))
            # quantized values force plenty of ties
            s_in = np.round(r.standard_normal(n_in) * 2) / 2
            s_out = np.round(r.standard_normal(n_out) * 2) / 2
            a = auroc_exact(s_in, s_out)
            b = auroc_threshold_sweep(s_in, s_out)
            assert abs(a - b) <= 1e-12
            assert abs(a - brute_force_auroc(list(s_in), list(s_out))) <= 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            detection_metrics([], [1.0])


class TestDetectionMetrics:
    def test_perfect_separation(self):
        res = detection_metrics([2.0, 3.0], [0.0, 1.0])
        assert res.auroc == 1.0
        assert res.aupr == 1.0
        assert res.fpr_at_95tpr == 0.0

    def test_counts_and_ranges(self):
        res = detection_metrics(rng.standard_normal(40), rng.standard_normal(30))
        assert res.n_in == 40 and res.n_out == 30
        for v in (res.auroc, res.aupr, res.fpr_at_95tpr):
            assert 0.0 <= v <= 1.0

    def test_fpr_monotone_as_ood_shifts_down(self):
        s_in = rng.standard_normal(200)
        s_out = rng.standard_normal(150)
        prev = None
        for shift in (0.0, 0.5, 1.0, 2.0, 4.0):
            val = fpr_at_tpr(s_in, s_out - shift)
            if prev is not None:
                assert val <= prev + 1e-12
            prev = val

    def test_fpr_threshold_rule(self):
        # 20 in-scores: the 19th largest (ceil(0.95*20)) sets the threshold
        s_in = np.arange(20, dtype=float)
        thr = np.sort(s_in)[::-1][int(np.ceil(0.95 * 20)) - 1]
        s_out = np.array([thr - 0.1, thr, thr + 0.1])
        assert fpr_at_tpr(s_in, s_out) == pytest.approx(2 / 3)

    def test_aupr_in_distribution_positive(self):
        # all in-scores above all out-scores except one inversion
        res = detection_metrics([4.0, 3.0, 1.0], [2.0])
        # thresholds desc: 4 (P=1,R=1/3), 3 (P=1,R=2/3), 2 (P=2/3,R=2/3), 1 (P=3/4,R=1)
        expect = (1 / 3) * 1.0 + (1 / 3) * 1.0 + 0.0 * (2 / 3) + (1 / 3) * (3 / 4)
        assert res.aupr == pytest.approx(expect, rel=1e-12)


def test_detection_result_validation():
    with pytest.raises(ValueError):
        DetectionResult(auroc=1.2, aupr=0.5, fpr_at_95tpr=0.5, n_in=1, n_out=1)
    with pytest.raises(ValueError):
        DetectionResult(auroc=0.5, aupr=0.5, fpr_at_95tpr=0.5, n_in=0, n_out=1)
