"""Objective values, gradients, Hessian-vector products, and the gradient
correction, checked against finite differences and closed forms."""

import numpy as np
import pytest

from fedosaa.dataset import parse_libsvm, partition_iid
from fedosaa.objective import (
    GradientCorrection,
    LogisticModel,
    QuadraticModel,
    corrected_gradient,
    corrected_value,
    generate_quadratic,
    generate_synthetic_logistic,
)


def _logistic_model(n=60, d=8, k=3, gamma=1e-2, seed=0):
    ds = generate_synthetic_logistic(n, d, seed)
    part = partition_iid(ds, k, seed)
    return LogisticModel(ds, part, gamma)


def _fd_gradient(f, w, h=1e-6):
    g = np.zeros_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def test_logistic_value_matches_direct_formula():
    model = _logistic_model()
    rng = np.random.default_rng(1)
    w = rng.normal(size=model.d)
    # rebuild the loss densely for one client
    k = 1
    X = model._X[k].toarray()
    y = model._y[k]
    m = y * (X @ w)
    want = np.mean(np.log1p(np.exp(-m))) + 0.5 * model.gamma * w @ w
    assert model.value(w, k) == pytest.approx(want, rel=1e-12)


def test_logistic_value_stable_at_large_margins():
    ds = parse_libsvm("+1 1:1\n-1 1:1\n")
    part = partition_iid(ds, 1, 0)
    model = LogisticModel(ds, part, 1e-3)
    w = np.array([1e4])
    v = model.value(w)
    assert np.isfinite(v)
    # the +1 example contributes ~0, the -1 example ~1e4, plus the ridge
    assert v == pytest.approx(0.5 * 1e4 + 0.5 * 1e-3 * 1e8, rel=1e-6)


def test_logistic_gradient_matches_finite_differences():
    model = _logistic_model()
    rng = np.random.default_rng(2)
    for _ in range(5):
        w = rng.normal(size=model.d)
        g = model.gradient(w)
        g_fd = _fd_gradient(model.value, w)
        assert np.linalg.norm(g - g_fd) <= 1e-6 * max(1.0, np.linalg.norm(g))


def test_logistic_hvp_matches_gradient_differences():
    model = _logistic_model()
    rng = np.random.default_rng(3)
    w = rng.normal(size=model.d)
    v = rng.normal(size=model.d)
    h = 1e-6
    for k in range(model.n_clients):
        hv = model.hessian_vec(k, w, v)
        fd = (model.gradient(w + h * v, k) - model.gradient(w - h * v, k)) / (2 * h)
        assert np.linalg.norm(hv - fd) <= 1e-5 * max(1.0, np.linalg.norm(hv))


def test_global_is_size_weighted_average():
    ds = generate_synthetic_logistic(50, 5, 0)
    part = partition_iid(ds, 2, 0)
    model = LogisticModel(ds, part, 1e-2)
    w = np.ones(5)
    want = sum(
        model.client_weight(k) * model.gradient(w, k) for k in range(2)
    )
    np.testing.assert_allclose(model.gradient(w), want, rtol=1e-13)


def test_minibatch_full_gradient_agrees():
    model = _logistic_model()
    w = np.full(model.d, 0.3)
    full = model.minibatch_gradient(0, w, None)
    batch = model.minibatch_gradient(0, w, np.arange(model.client_sizes[0]))
    np.testing.assert_allclose(full, batch, rtol=1e-13)


def test_minibatch_subset_mean():
    model = _logistic_model()
    w = np.full(model.d, -0.2)
    idx = np.array([0, 3, 5])
    got = model.minibatch_gradient(0, w, idx)
    singles = [model.minibatch_gradient(0, w, np.array([i])) for i in idx]
    np.testing.assert_allclose(got, np.mean(singles, axis=0), rtol=1e-12)


def test_minibatch_rejects_empty():
    model = _logistic_model()
    with pytest.raises(ValueError):
        model.minibatch_gradient(0, np.zeros(model.d), np.array([], dtype=int))


def test_smoothness_bound_dominates_hessian():
    model = _logistic_model()
    beta = model.smoothness_bound()
    rng = np.random.default_rng(4)
    w = rng.normal(size=model.d)
    for k in range(model.n_clients):
        H = np.column_stack(
            [model.hessian_vec(k, w, e) for e in np.eye(model.d)]
        )
        assert np.max(np.linalg.eigvalsh(0.5 * (H + H.T))) <= beta + 1e-12


def test_quadratic_model_closed_forms():
    rng = np.random.default_rng(5)
    d = 6
    A = [np.eye(d) * (k + 1) for k in range(3)]
    b = [rng.normal(size=d) for _ in range(3)]
    model = QuadraticModel(A, b, sizes=(1, 2, 1))
    w = rng.normal(size=d)
    assert model.value(w, 1) == pytest.approx(0.5 * 2 * w @ w - b[1] @ w)
    np.testing.assert_allclose(model.gradient(w, 2), 3 * w - b[2])
    np.testing.assert_allclose(model.hessian_vec(0, w, w), w)
    np.testing.assert_allclose(
        model.global_matrix(), (1 * 1 + 2 * 2 + 1 * 3) / 4 * np.eye(d)
    )


def test_generate_quadratic_spectrum_and_minimizer():
    model, w_star = generate_quadratic(12, 4, condition_number=50.0,
                                       heterogeneity=1.0, seed=9)
    for Ak in model.A:
        eig = np.linalg.eigvalsh(Ak)
        assert eig[0] == pytest.approx(1.0, rel=1e-9)
        assert eig[-1] == pytest.approx(50.0, rel=1e-9)
    g = model.gradient(w_star)
    assert np.linalg.norm(g) <= 1e-9 * max(1.0, np.linalg.norm(w_star))


def test_generate_quadratic_heterogeneity_moves_local_minimizers():
    tight, _ = generate_quadratic(8, 4, 10.0, heterogeneity=0.0, seed=2)
    wide, _ = generate_quadratic(8, 4, 10.0, heterogeneity=5.0, seed=2)

    def spread(model):
        mins = [np.linalg.solve(model.A[k], model.b[k]) for k in range(4)]
        return np.max([np.linalg.norm(m - mins[0]) for m in mins])

    assert spread(wide) > spread(tight) + 1.0


def test_svrg_correction_matches_global_gradient_at_anchor():
    model = _logistic_model()
    rng = np.random.default_rng(6)
    w_t = rng.normal(size=model.d)
    g = model.gradient(w_t)
    corr = GradientCorrection.svrg(w_t, g)
    for k in range(model.n_clients):
        np.testing.assert_allclose(
            corrected_gradient(model, k, w_t, corr), g, atol=1e-14
        )


def test_scaffold_correction_offsets_gradient():
    model = _logistic_model()
    rng = np.random.default_rng(7)
    w = rng.normal(size=model.d)
    c = rng.normal(size=model.d)
    c_k = rng.normal(size=model.d)
    corr = GradientCorrection.scaffold(c, c_k)
    got = corrected_gradient(model, 0, w, corr)
    np.testing.assert_allclose(got, model.gradient(w, 0) + c - c_k, atol=1e-14)


def test_zero_correction_is_plain_gradient():
    model = _logistic_model()
    w = np.full(model.d, 0.1)
    corr = GradientCorrection.none(model.d)
    np.testing.assert_allclose(
        corrected_gradient(model, 1, w, corr), model.gradient(w, 1), atol=1e-15
    )


def test_corrected_value_gradient_consistency():
    # the corrected value must differentiate to the corrected gradient
    model = _logistic_model()
    rng = np.random.default_rng(8)
    w_t = rng.normal(size=model.d)
    g = model.gradient(w_t)
    corr = GradientCorrection.svrg(w_t, g)
    w = rng.normal(size=model.d)
    fd = _fd_gradient(lambda u: corrected_value(model, 0, u, corr), w)
    exact = corrected_gradient(model, 0, w, corr)
    assert np.linalg.norm(fd - exact) <= 1e-5 * max(1.0, np.linalg.norm(exact))


def test_synthetic_logistic_shape_and_flips():
    ds = generate_synthetic_logistic(500, 10, seed=0, flip_fraction=0.1)
    assert ds.n == 500 and ds.d == 10
    labels = ds.labels()
    assert set(np.unique(labels)) == {-1.0, 1.0}
    # determinism
    ds2 = generate_synthetic_logistic(500, 10, seed=0, flip_fraction=0.1)
    assert ds == ds2
