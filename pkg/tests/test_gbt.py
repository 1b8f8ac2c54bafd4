import numpy as np
import pytest

from resmatch.gbt import (
    SOFTMAX,
    SQUARED,
    GbtError,
    GbtParams,
    best_split,
    fit_gbt,
    grad_hess,
    load_gbt,
    model_from_dict,
    model_to_dict,
    objective,
    predict_gbt,
    predict_proba,
    save_gbt,
)


def brute_force_best_gain(X, g, h, lam, gamma):
    """Oracle: enumerate every (feature, midpoint) partition directly."""

    def score(idx):
        G, H = g[idx].sum(), h[idx].sum()
        return G * G / (H + lam)

    n, n_feat = X.shape
    everything = np.arange(n)
    best = None
    for f in range(n_feat):
        for thr in np.unique(X[:, f]):
            left = everything[X[:, f] < thr]
            right = everything[X[:, f] >= thr]
            if len(left) == 0 or len(right) == 0:
                continue
            gain = 0.5 * (score(left) + score(right) - score(everything)) - gamma
            if best is None or gain > best:
                best = gain
    return best


class TestGradHess:
    def test_squared_error(self):
        g, h = grad_hess(SQUARED, np.array([1.0]), np.array([0.0]))
        assert g[0] == -1.0 and h[0] == 1.0

    def test_zero_at_minimum(self):
        y = np.array([0.3, -2.0, 5.5])
        g, _ = grad_hess(SQUARED, y, y.copy())
        np.testing.assert_array_equal(g, 0.0)

    def test_softmax_uniform(self):
        g, h = grad_hess(SOFTMAX, np.array([0]), np.zeros((1, 2)))
        np.testing.assert_allclose(g[0], [-0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(h[0], [0.25, 0.25], atol=1e-12)


class TestBestSplit:
    def test_step_function_gain(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([1.0, 1.0, -1.0, -1.0])
        g, h = grad_hess(SQUARED, y, np.zeros(4))
        split = best_split(X, g, h, lam=0.0, gamma=0.0)
        assert split is not None
        assert split.threshold == pytest.approx(1.5)
        assert split.gain == pytest.approx(2.0, abs=1e-12)

    def test_gamma_suppresses_split(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([1.0, 1.0, -1.0, -1.0])
        g, h = grad_hess(SQUARED, y, np.zeros(4))
        assert best_split(X, g, h, lam=0.0, gamma=3.0) is None

    def test_constant_target_no_split(self):
        X = np.array([[0.0], [1.0], [2.0]])
        g, h = grad_hess(SQUARED, np.full(3, 2.0), np.full(3, 2.0))
        assert best_split(X, g, h, lam=0.0, gamma=0.0) is None

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            n = rng.integers(2, 65)
            d = rng.integers(1, 5)
            X = np.round(rng.normal(size=(n, d)), 2)  # rounded to force ties
            y = rng.normal(size=n)
            g, h = grad_hess(SQUARED, y, np.zeros(n))
            lam = float(rng.choice([0.0, 0.5, 2.0]))
            gamma = float(rng.choice([0.0, 0.1]))
            split = best_split(X, g, h, lam, gamma)
            oracle = brute_force_best_gain(X, g, h, lam, gamma)
            if split is None:
                assert oracle is None or oracle <= 0
            else:
                assert split.gain == pytest.approx(oracle, abs=1e-9)

    def test_leaf_weight_formula(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(40, 3))
        y = rng.normal(size=40)
        lam = 1.5
        params = GbtParams(n_rounds=1, max_depth=3, learning_rate=1.0, lam=lam)
        model = fit_gbt(X, y, SQUARED, params)
        g, h = grad_hess(SQUARED, y, np.zeros(40))

        def check(node, idx):
            if "weight" in node:
                G, H = g[idx].sum(), h[idx].sum()
                assert node["weight"] == pytest.approx(-G / (H + lam), abs=1e-12)
                return
            mask = X[idx, node["feature"]] < node["threshold"]
            check(node["left"], idx[mask])
            check(node["right"], idx[~mask])

        check(model.trees[0][0], np.arange(40))

    def test_leaf_weight_optimality(self):
        rng = np.random.default_rng(11)
        g = rng.normal(size=10)
        h = np.abs(rng.normal(size=10)) + 0.1
        lam = 0.7
        w_star = -g.sum() / (h.sum() + lam)

        def obj(w):
            return g.sum() * w + 0.5 * (h.sum() + lam) * w * w

        for eps in (1e-3, -1e-3):
            assert obj(w_star + eps) > obj(w_star)


class TestFitPredict:
    def test_single_round_step_function(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([1.0, 1.0, -1.0, -1.0])
        params = GbtParams(n_rounds=1, max_depth=1, learning_rate=1.0, lam=0.0)
        model = fit_gbt(X, y, SQUARED, params)
        np.testing.assert_allclose(predict_gbt(model, X), y, atol=1e-12)

    def test_zero_rounds_forbidden(self):
        with pytest.raises(GbtError):
            GbtParams(n_rounds=0)

    def test_interpolates_distinct_features(self):
        rng = np.random.default_rng(3)
        X = rng.permutation(20).astype(float)[:, None]
        y = rng.normal(size=20)
        params = GbtParams(n_rounds=40, max_depth=6, learning_rate=1.0, lam=0.0)
        model = fit_gbt(X, y, SQUARED, params)
        np.testing.assert_allclose(predict_gbt(model, X), y, atol=1e-8)

    def test_empty_data_rejected(self):
        with pytest.raises(GbtError):
            fit_gbt(np.empty((0, 2)), np.empty(0), SQUARED, GbtParams())

    def test_nan_features_rejected(self):
        X = np.array([[0.0], [np.nan]])
        with pytest.raises(GbtError):
            fit_gbt(X, np.array([1.0, 2.0]), SQUARED, GbtParams())

    def test_zero_tree_model_is_base_score(self):
        model = fit_gbt(np.array([[0.0], [1.0]]), np.array([0.0, 0.0]), SQUARED,
                        GbtParams(n_rounds=1))
        model.trees = []
        assert predict_gbt(model, np.array([5.0])) == model.base_score

    def test_single_leaf_shifts_everywhere(self):
        X = np.array([[0.0], [1.0]])
        y = np.array([4.0, 4.0])
        params = GbtParams(n_rounds=1, max_depth=1, learning_rate=0.5, lam=0.0)
        model = fit_gbt(X, y, SQUARED, params)
        # single leaf of weight 4 -> prediction 0 + 0.5*4 everywhere
        assert predict_gbt(model, np.array([77.0])) == pytest.approx(2.0)

    def test_train_prediction_consistency(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([1.0, 1.0, -1.0, -1.0])
        params = GbtParams(n_rounds=5, max_depth=2, learning_rate=0.6, lam=0.1)
        model = fit_gbt(X, y, SQUARED, params)
        again = predict_gbt(model, X)
        model2 = fit_gbt(X, y, SQUARED, params)
        np.testing.assert_array_equal(again, predict_gbt(model2, X))

    def test_dimension_mismatch(self):
        model = fit_gbt(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([1.0, 2.0]),
                        SQUARED, GbtParams())
        with pytest.raises(GbtError):
            predict_gbt(model, np.array([[1.0, 2.0, 3.0]]))


class TestObjectiveMonotone:
    @pytest.mark.parametrize("lr,lam,gamma", [(1.0, 0.0, 0.0), (1.0, 1.0, 0.1), (0.6, 0.0, 0.0)])
    def test_nonincreasing_over_rounds(self, lr, lam, gamma):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(80, 3))
        y = np.sin(X[:, 0]) + 0.5 * X[:, 1] ** 2 + 0.1 * rng.normal(size=80)
        objs = []
        for rounds in range(1, 12):
            params = GbtParams(n_rounds=rounds, max_depth=3, learning_rate=lr,
                               lam=lam, gamma=gamma)
            model = fit_gbt(X, y, SQUARED, params)
            objs.append(objective(model, X, y))
        assert all(b <= a + 1e-9 for a, b in zip(objs, objs[1:]))


class TestMonotoneTransformInvariance:
    def test_structure_unchanged(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(60, 2))
        y = (X[:, 0] > 0.3).astype(float) + rng.normal(size=60) * 0.01
        params = GbtParams(n_rounds=3, max_depth=3, learning_rate=1.0, lam=0.5)
        model_a = fit_gbt(X, y, SQUARED, params)
        X2 = X.copy()
        X2[:, 0] = np.exp(X2[:, 0])  # strictly increasing transform

        def partitions(model, X_used):
            parts = []
            for round_trees in model.trees:
                for tree in round_trees:
                    stack = [(tree, np.arange(X_used.shape[0]))]
                    while stack:
                        nd, idx = stack.pop()
                        if "weight" in nd:
                            parts.append(tuple(sorted(idx)))
                            continue
                        m = X_used[idx, nd["feature"]] < nd["threshold"]
                        stack.append((nd["left"], idx[m]))
                        stack.append((nd["right"], idx[~m]))
            return parts

        model_b = fit_gbt(X2, y, SQUARED, params)
        assert partitions(model_a, X) == partitions(model_b, X2)


class TestSoftmax:
    def test_separable_two_class(self):
        rng = np.random.default_rng(1)
        X = np.concatenate([rng.normal(-3, 0.5, (30, 1)), rng.normal(3, 0.5, (30, 1))])
        y = np.array([0] * 30 + [1] * 30)
        model = fit_gbt(X, y, SOFTMAX, GbtParams(n_rounds=20, max_depth=2))
        pred = predict_gbt(model, X).argmax(axis=1)
        assert (pred == y).all()

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(50, 2))
        y = rng.integers(0, 3, 50)
        model = fit_gbt(X, y, SOFTMAX, GbtParams(n_rounds=10, max_depth=2))
        proba = predict_proba(model, rng.normal(size=(20, 2)))
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)


class TestSerialization:
    def test_json_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(30, 2))
        y = rng.normal(size=30)
        model = fit_gbt(X, y, SQUARED, GbtParams(n_rounds=4, max_depth=3))
        path = tmp_path / "model.json"
        save_gbt(model, path)
        back = load_gbt(path)
        np.testing.assert_array_equal(predict_gbt(model, X), predict_gbt(back, X))

    def test_dict_round_trip_multiclass(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(40, 2))
        y = rng.integers(0, 3, 40)
        model = fit_gbt(X, y, SOFTMAX, GbtParams(n_rounds=3, max_depth=2))
        back = model_from_dict(model_to_dict(model))
        np.testing.assert_array_equal(predict_gbt(model, X), predict_gbt(back, X))
