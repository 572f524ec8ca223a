import logging

import numpy as np
import pytest

from mediagraph._smo import smo_solve
from mediagraph.classify import (
    RepresentationChannel,
    SvmConfig,
    cross_validate,
    decision_function,
    fit_channel_fold,
    fit_fusion_weights,
    ingest_external_representation,
    late_fuse,
    majority_cv,
    model_fingerprint,
    predict,
    predict_proba,
    rbf_kernel,
    standardize_apply,
    standardize_fit,
    stratified_folds,
    train_svm_rbf,
    write_channel_csv,
)

QUICK = SvmConfig(c_grid=(1.0, 10.0), gamma_grid=(0.01, 0.1, 1.0))


def blobs(rng, centers, sigma=0.1, per=30):
    x = np.vstack([rng.normal(size=(per, len(centers[0]))) * sigma + c for c in centers])
    y = np.repeat(np.arange(len(centers)), per)
    return x, y


class TestSmoSolver:
    def test_kkt_conditions_within_tolerance(self, rng):
        x, y = blobs(rng, [[2, 0], [-2, 0]], sigma=0.8)
        scaler = standardize_fit(x)
        xs = standardize_apply(x, scaler)
        yb = np.where(y == 0, 1.0, -1.0)
        tol = 1e-3
        for c_value, gamma in [(1.0, 0.1), (10.0, 0.5), (100.0, 0.01)]:
            kernel = rbf_kernel(xs, xs, gamma)
            alpha, b, converged = smo_solve(kernel, yb, c_value, tol, 100_000)
            assert converged
            margins = yb * (kernel @ (alpha * yb) + b)
            for i in range(len(yb)):
                if alpha[i] <= 1e-12:
                    assert margins[i] >= 1 - tol
                elif alpha[i] >= c_value - 1e-12:
                    assert margins[i] <= 1 + tol
                else:
                    assert abs(margins[i] - 1) <= tol

    def test_box_and_equality_constraints(self, rng):
        x, y = blobs(rng, [[1, 1], [-1, -1]], sigma=0.9, per=25)
        yb = np.where(y == 0, 1.0, -1.0)
        kernel = rbf_kernel(x, x, 0.3)
        c_value = 5.0
        alpha, _, _ = smo_solve(kernel, yb, c_value, 1e-3, 100_000)
        assert np.all(alpha >= -1e-12) and np.all(alpha <= c_value + 1e-12)
        assert abs(np.sum(alpha * yb)) < 1e-9

    def test_deterministic(self, rng):
        x, y = blobs(rng, [[1, 0], [-1, 0]], sigma=0.6)
        yb = np.where(y == 0, 1.0, -1.0)
        kernel = rbf_kernel(x, x, 0.2)
        a1, b1, _ = smo_solve(kernel, yb, 2.0, 1e-3, 100_000)
        a2, b2, _ = smo_solve(kernel, yb, 2.0, 1e-3, 100_000)
        assert np.array_equal(a1, a2) and b1 == b2


class TestTrainSvmRbf:
    def test_separable_blobs_perfect(self, rng):
        x, y = blobs(rng, [[5, 0], [-5, 0]], sigma=0.1)
        holdout_x, holdout_y = blobs(rng, [[5, 0], [-5, 0]], sigma=0.1, per=10)
        scaler = standardize_fit(x)
        model = train_svm_rbf(standardize_apply(x, scaler), y, 2, QUICK, seed=1)
        assert (predict(model, standardize_apply(x, scaler)) == y).all()
        assert (predict(model, standardize_apply(holdout_x, scaler)) == holdout_y).all()

    def test_xor_needs_nonlinearity(self, rng):
        centers = [[1, 1], [-1, -1], [1, -1], [-1, 1]]
        labels = [0, 0, 1, 1]
        x = np.vstack([rng.normal(size=(30, 2)) * 0.2 + c for c in centers])
        y = np.repeat(labels, 30)
        scaler = standardize_fit(x)
        xs = standardize_apply(x, scaler)
        model = train_svm_rbf(xs, y, 2, SvmConfig(), seed=2)
        assert (predict(model, xs) == y).mean() > 0.95
        # least-squares linear oracle caps out near chance on XOR
        design = np.hstack([xs, np.ones((len(xs), 1))])
        w, *_ = np.linalg.lstsq(design, np.where(y == 0, -1.0, 1.0), rcond=None)
        linear_pred = (design @ w > 0).astype(int)
        assert (linear_pred == y).mean() <= 0.6

    def test_single_class_degenerates_to_constant(self, rng, caplog):
        x = rng.normal(size=(12, 3))
        y = np.ones(12, dtype=np.int64)
        with caplog.at_level(logging.WARNING):
            model = train_svm_rbf(x, y, 3, QUICK, seed=0)
        assert "constant" in caplog.text
        proba = predict_proba(model, rng.normal(size=(4, 3)))
        assert np.array_equal(proba[:, 1], np.ones(4))
        assert np.array_equal(proba.sum(axis=1), np.ones(4))


class TestPredictProba:
    def setup_method(self):
        rng = np.random.default_rng(11)
        self.x, self.y = blobs(rng, [[4, 0], [-4, 0], [0, 4]], sigma=0.3, per=20)
        self.scaler = standardize_fit(self.x)
        self.xs = standardize_apply(self.x, self.scaler)
        self.model = train_svm_rbf(self.xs, self.y, 3, QUICK, seed=3)

    def test_rows_sum_to_one(self, rng):
        probe = standardize_apply(rng.normal(size=(50, 2)) * 4, self.scaler)
        proba = predict_proba(self.model, probe)
        assert np.max(np.abs(proba.sum(axis=1) - 1.0)) < 1e-12
        assert ((proba > 0) & (proba < 1)).all()

    def test_blob_centers_classified(self):
        centers = standardize_apply(np.array([[4.0, 0.0], [-4.0, 0.0], [0.0, 4.0]]), self.scaler)
        assert predict_proba(self.model, centers).argmax(axis=1).tolist() == [0, 1, 2]

    def test_duplicate_rows_identical_posteriors(self):
        probe = np.vstack([self.xs[:5], self.xs[:5]])
        proba = predict_proba(self.model, probe)
        assert np.array_equal(proba[:5], proba[5:])

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            predict_proba(self.model, np.zeros((3, 7)))


class TestGridSearchInvariance:
    def test_feature_rescale_gamma_compensation(self, rng):
        x, y = blobs(rng, [[2, 1], [-1, -2]], sigma=0.7, per=20)
        base = SvmConfig(c_grid=(1.0, 10.0), gamma_grid=(0.01, 0.1))
        comp = SvmConfig(c_grid=(1.0, 10.0), gamma_grid=(0.01 / 4, 0.1 / 4))
        m1 = train_svm_rbf(x, y, 2, base, seed=4)
        m2 = train_svm_rbf(2.0 * x, y, 2, comp, seed=4)
        assert m2.gamma == m1.gamma / 4 and m2.c_value == m1.c_value
        probe = rng.normal(size=(20, 2))
        d1 = decision_function(m1, probe)
        d2 = decision_function(m2, 2.0 * probe)
        assert np.allclose(d1, d2, atol=1e-9)


class TestStratifiedFolds:
    def test_each_fold_gets_class_share(self):
        y = np.array([0] * 50 + [1] * 25 + [2] * 25)
        fold_of = stratified_folds(y, 5, seed=3)
        for f in range(5):
            members = y[fold_of == f]
            assert (members == 0).sum() == 10
            assert (members == 1).sum() == 5
            assert (members == 2).sum() == 5

    def test_small_class_warns(self, caplog):
        y = np.array([0] * 20 + [1] * 3)
        with caplog.at_level(logging.WARNING):
            stratified_folds(y, 5, seed=0)
        assert "best-effort" in caplog.text


def one_hot_channel(y, n_classes):
    mat = np.zeros((len(y), n_classes))
    mat[np.arange(len(y)), y] = 1.0
    return mat


class TestCrossValidate:
    def test_perfect_channel_reaches_one(self):
        rng = np.random.default_rng(0)
        y_int = rng.integers(0, 3, size=90)
        labels = [f"c{v}" for v in y_int]
        channels = {"oracle": one_hot_channel(y_int, 3)}
        results = cross_validate(channels, labels, ["c0", "c1", "c2"], folds=5, seed=1, svm=QUICK)
        assert results["oracle"].report.mean_macro_f1 == 1.0

    def test_noise_channel_near_chance(self):
        rng = np.random.default_rng(1)
        labels = [f"c{i % 3}" for i in range(300)]
        channels = {"noise": rng.normal(size=(300, 8))}
        results = cross_validate(channels, labels, ["c0", "c1", "c2"], folds=5, seed=2, svm=QUICK)
        assert results["noise"].report.mean_accuracy == pytest.approx(1 / 3, abs=0.08)

    def test_same_seed_identical_results(self):
        rng = np.random.default_rng(2)
        y_int = rng.integers(0, 2, size=60)
        labels = [f"c{v}" for v in y_int]
        x = rng.normal(size=(60, 4)) + y_int[:, None]
        r1 = cross_validate({"ch": x}, labels, ["c0", "c1"], folds=5, seed=7, svm=QUICK)
        r2 = cross_validate({"ch": x}, labels, ["c0", "c1"], folds=5, seed=7, svm=QUICK)
        assert np.array_equal(r1["ch"].fold_of, r2["ch"].fold_of)
        assert np.array_equal(r1["ch"].oof_posterior, r2["ch"].oof_posterior)
        assert r1["ch"].report.fold_macro_f1 == r2["ch"].report.fold_macro_f1
        assert r1["ch"].fingerprints == r2["ch"].fingerprints

    def test_no_leakage_fingerprint(self):
        rng = np.random.default_rng(3)
        y_int = np.array([i % 2 for i in range(40)])
        x = rng.normal(size=(40, 3)) + 2.0 * y_int[:, None]
        fold_of = stratified_folds(y_int, 4, seed=9)
        te = fold_of == 0
        shuffled = y_int.copy()
        shuffled[te] = rng.permutation(shuffled[te])
        s1, m1 = fit_channel_fold(x, y_int, 2, ~te, QUICK, seed=13)
        s2, m2 = fit_channel_fold(x, shuffled, 2, ~te, QUICK, seed=13)
        assert model_fingerprint(m1, s1) == model_fingerprint(m2, s2)

    def test_misaligned_channel_rejected(self):
        with pytest.raises(ValueError):
            cross_validate({"bad": np.zeros((5, 2))}, ["c0"] * 6, ["c0", "c1"], svm=QUICK)

    def test_majority_cv_matches_share(self):
        labels = ["a"] * 60 + ["b"] * 30 + ["c"] * 10
        result = majority_cv(labels, ["a", "b", "c"], folds=5, seed=4)
        assert result.report.mean_accuracy == pytest.approx(0.6, abs=1e-12)


class TestLateFuse:
    def test_identical_inputs_fixed_point(self, rng):
        p = rng.dirichlet(np.ones(3), size=10)
        fused = late_fuse([p, p, p], [1 / 3, 1 / 3, 1 / 3])
        assert np.allclose(fused, p, atol=1e-15)

    def test_uniform_average_arithmetic(self):
        a = np.array([[1.0, 0.0, 0.0]])
        b = np.array([[0.0, 1.0, 0.0]])
        fused = late_fuse([a, b], [0.5, 0.5])
        assert np.array_equal(fused, [[0.5, 0.5, 0.0]])

    def test_degenerate_weight_returns_channel(self, rng):
        a = rng.dirichlet(np.ones(4), size=6)
        b = rng.dirichlet(np.ones(4), size=6)
        assert np.array_equal(late_fuse([a, b], [1.0, 0.0]), a)

    def test_row_sums_preserved(self, rng):
        mats = [rng.dirichlet(np.ones(3), size=20) for _ in range(4)]
        w = rng.dirichlet(np.ones(4))
        fused = late_fuse(mats, w)
        assert np.max(np.abs(fused.sum(axis=1) - 1.0)) < 1e-12

    def test_shape_and_weight_validation(self, rng):
        a = rng.dirichlet(np.ones(3), size=5)
        b = rng.dirichlet(np.ones(3), size=6)
        with pytest.raises(ValueError):
            late_fuse([a, b], [0.5, 0.5])
        with pytest.raises(ValueError):
            late_fuse([a, a], [0.7, 0.7])
        with pytest.raises(ValueError):
            late_fuse([a, a], [-0.5, 1.5])


class TestFitFusionWeights:
    def test_planted_perfect_channel_dominates(self):
        # perfect channel barely confident; adversarial channel loudly wrong
        # on a third of the rows: only a >= 0.95 weight on the perfect
        # channel classifies everything correctly
        rng = np.random.default_rng(5)
        n = 120
        y_int = np.array([i % 3 for i in range(n)])
        labels = [f"c{v}" for v in y_int]
        perfect = np.full((n, 3), 0.325)
        perfect[np.arange(n), y_int] = 0.35
        adversary = np.full((n, 3), 0.02)
        adversary[np.arange(n), (y_int + 1) % 3] = 0.96
        weights = fit_fusion_weights([perfect, adversary], labels, ["c0", "c1", "c2"])
        assert weights[0] >= 0.9

    def test_identical_channels_uniform(self, rng):
        p = rng.dirichlet(np.ones(3), size=30)
        labels = [f"c{i % 3}" for i in range(30)]
        weights = fit_fusion_weights([p, p.copy(), p.copy()], labels, ["c0", "c1", "c2"])
        assert np.allclose(weights, [1 / 3, 1 / 3, 1 / 3])

    def test_single_channel_weight_one(self, rng):
        p = rng.dirichlet(np.ones(3), size=10)
        weights = fit_fusion_weights([p], ["c0"] * 10, ["c0", "c1", "c2"])
        assert weights.tolist() == [1.0]


class TestChannelIngestion:
    def test_full_coverage(self, tmp_path, rng):
        domains = [f"d{i}.test" for i in range(6)]
        matrix = rng.normal(size=(6, 4))
        path = tmp_path / "chan.csv"
        write_channel_csv(RepresentationChannel("x", matrix, np.ones(6, bool)), domains, path)
        channel = ingest_external_representation(path, domains, "x")
        assert channel.coverage.all()
        assert np.array_equal(channel.matrix, matrix)

    def test_missing_domains_zero_with_coverage_false(self, tmp_path, rng):
        domains = [f"d{i}.test" for i in range(6)]
        matrix = rng.normal(size=(3, 4))
        path = tmp_path / "chan.csv"
        write_channel_csv(RepresentationChannel("x", matrix, np.ones(3, bool)), domains[:3], path)
        channel = ingest_external_representation(path, domains, "x")
        assert channel.coverage.tolist() == [True] * 3 + [False] * 3
        assert np.array_equal(channel.matrix[3:], np.zeros((3, 4)))

    def test_unknown_domain_listed_in_error(self, tmp_path, rng):
        path = tmp_path / "chan.csv"
        write_channel_csv(
            RepresentationChannel("x", rng.normal(size=(2, 2)), np.ones(2, bool)),
            ["ghost.test", "known.test"],
            path,
        )
        with pytest.raises(ValueError, match="ghost.test"):
            ingest_external_representation(path, ["known.test"], "x")

    def test_round_trip(self, tmp_path, rng):
        domains = [f"d{i}.test" for i in range(4)]
        matrix = rng.normal(size=(4, 3))
        path = tmp_path / "chan.csv"
        write_channel_csv(RepresentationChannel("x", matrix, np.ones(4, bool)), domains, path)
        again = ingest_external_representation(path, domains, "x")
        assert np.array_equal(again.matrix, matrix)

    def test_ragged_file_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("domain,v0,v1\na.test,1.0\n")
        with pytest.raises(ValueError):
            ingest_external_representation(path, ["a.test"], "x")
