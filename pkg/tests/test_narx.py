import numpy as np
import pytest

from extremis.errors import (
    MissingDependencyError,
    NarxDivergenceError,
    NarxRankError,
)
from extremis.narx import (
    LagSpec,
    ManifoldStage,
    NarxModel,
    build_lag_vector,
    build_manifold,
    fit_narx,
    monomial_exponents,
    predict_narx,
)
from extremis.rng import substream


def _linear_system(n=600, seed=60, noise=0.0):
    """y[t] = 0.6 y[t-1] - 0.25 y[t-2] + 1.4 x[t] - 0.7 x[t-1] + 0.5"""
    rng = substream(seed, "arx")
    x = rng.standard_normal(n)
    y = np.zeros(n)
    for t in range(2, n):
        y[t] = 0.6 * y[t - 1] - 0.25 * y[t - 2] + 1.4 * x[t] - 0.7 * x[t - 1] + 0.5
    if noise:
        y = y + noise * rng.standard_normal(n)
    return {"x": x}, y


SPEC = LagSpec((1, 2), {"x": (0, 1)})


# -- LagSpec ------------------------------------------------------------------

def test_lagspec_properties():
    assert SPEC.dim == 4
    assert SPEC.max_lag == 2
    assert SPEC.channel_names == ("x",)
    s2 = LagSpec((1,), {"a": (0,), "b": (3,)})
    assert s2.max_lag == 3
    assert s2.dim == 3


def test_lagspec_validation():
    with pytest.raises(ValueError, match="causality"):
        LagSpec((0, 1))
    with pytest.raises(ValueError, match="sorted"):
        LagSpec((2, 1))
    with pytest.raises(ValueError, match="unique|sorted"):
        LagSpec((1, 1))
    with pytest.raises(ValueError, match=">= 0"):
        LagSpec((1,), {"x": (-1,)})


def test_lagspec_roundtrip():
    clone = LagSpec.from_dict(SPEC.to_dict())
    assert clone == SPEC


def test_build_lag_vector_order():
    inputs = {"x": np.arange(10.0) * 10.0}
    y = np.arange(10.0)
    phi = build_lag_vector(inputs, y, SPEC, 5)
    # output lags first (y[4], y[3]), then channel lags (x[5], x[4])
    np.testing.assert_array_equal(phi, [4.0, 3.0, 50.0, 40.0])
    with pytest.raises(IndexError):
        build_lag_vector(inputs, y, SPEC, 1)


# -- monomials ---------------------------------------------------------------------

def test_monomial_exponents_counts():
    # C(dim + degree, degree) rows for the full basis
    assert len(monomial_exponents(4, 2)) == 15
    assert len(monomial_exponents(2, 3)) == 10
    e = monomial_exponents(3, 2)
    np.testing.assert_array_equal(e[0], [0, 0, 0])  # constant first
    assert set(map(tuple, e[1:4])) == {(1, 0, 0), (0, 1, 0), (0, 0, 1)}
    assert np.all(e.sum(axis=1) <= 2)


def test_monomial_interaction_cap():
    full = monomial_exponents(3, 2)
    capped = monomial_exponents(3, 2, interaction_order=1)
    # cross terms (two distinct variables) removed: x0x1, x0x2, x1x2
    assert len(full) - len(capped) == 3
    assert all(np.count_nonzero(row) <= 1 for row in capped)
    with pytest.raises(ValueError):
        monomial_exponents(3, 0)


# -- fitting ------------------------------------------------------------------------

def test_fit_recovers_linear_arx_exactly():
    design = [_linear_system()]
    model = fit_narx(design, SPEC, degree=1)
    # terms: const, y1, y2, x0, x1
    np.testing.assert_allclose(
        model.coefficients, [0.5, 0.6, -0.25, 1.4, -0.7], atol=1e-10
    )
    assert model.train_rmse < 1e-10


def test_fit_quadratic_system():
    # bounded input keeps the quadratic recursion away from its escape point
    rng = substream(61, "quad")
    x = 0.8 * rng.uniform(-1.0, 1.0, 500)
    y = np.zeros(500)
    for t in range(1, 500):
        y[t] = 0.3 * y[t - 1] + 0.05 * y[t - 1] ** 2 + x[t]
    spec = LagSpec((1,), {"x": (0,)})
    model = fit_narx([({"x": x}, y)], spec, degree=2)
    assert model.train_rmse < 1e-9
    # free run from the true initial value reproduces the trajectory
    yhat = predict_narx(model, {"x": x}, y[:1])
    np.testing.assert_allclose(yhat, y, atol=1e-7)


def test_fit_multiple_series():
    d1 = _linear_system(seed=62)
    d2 = _linear_system(seed=63)
    model = fit_narx([d1, d2], SPEC, degree=1)
    np.testing.assert_allclose(
        model.coefficients, [0.5, 0.6, -0.25, 1.4, -0.7], atol=1e-10
    )


def test_fit_constant_output_gives_intercept_only():
    inputs = {"x": substream(64, "c").standard_normal(100)}
    y = np.full(100, 3.25)
    model = fit_narx([(inputs, y)], LagSpec((1,), {"x": (0,)}), degree=2)
    assert model.coefficients[0] == pytest.approx(3.25, abs=1e-12)
    np.testing.assert_allclose(model.coefficients[1:], 0.0, atol=1e-12)


def test_fit_rank_error_on_collinear_inexact():
    # duplicated channel makes columns collinear; with noise there is no
    # exact solution, so zero regularization must raise
    rng = substream(65, "rank")
    x = rng.standard_normal(300)
    inputs = {"a": x, "b": x.copy()}
    y = np.zeros(300)
    for t in range(1, 300):
        y[t] = 0.5 * y[t - 1] + x[t]
    y_noisy = y + 0.05 * rng.standard_normal(300)
    spec = LagSpec((1,), {"a": (0,), "b": (0,)})
    with pytest.raises(NarxRankError):
        fit_narx([(inputs, y_noisy)], spec, degree=1)
    # the same system fits fine with ridge
    model = fit_narx([(inputs, y_noisy)], spec, degree=1, regularization=1e-8)
    assert model.train_rmse < 0.1
    # and the noiseless case is rank-deficient but exactly solvable
    exact = fit_narx([(inputs, y)], spec, degree=1)
    assert exact.train_rmse < 1e-10


def test_fit_needs_enough_rows():
    inputs = {"x": np.arange(5.0)}
    y = np.arange(5.0)
    with pytest.raises(ValueError, match="rows"):
        fit_narx([(inputs, y)], SPEC, degree=3)
    with pytest.raises(ValueError):
        fit_narx([(inputs, y)], SPEC, degree=1, regularization=-1.0)


def test_ridge_does_not_penalize_intercept():
    # a large constant offset must survive heavy ridge on the slopes
    inputs = {"x": substream(66, "ridge").standard_normal(400)}
    y = np.zeros(400)
    for t in range(1, 400):
        y[t] = 100.0 + 0.1 * inputs["x"][t]
    spec = LagSpec((1,), {"x": (0,)})
    model = fit_narx([(inputs, y)], spec, degree=1, regularization=1e3)
    yhat_mean = np.mean(model.coefficients[0]
                        + model.coefficients[1] * y[:-1].mean())
    assert yhat_mean == pytest.approx(100.0, rel=0.05)


# -- prediction ---------------------------------------------------------------------

def test_predict_matches_analytic_trajectory():
    inputs, y = _linear_system(n=2_000, seed=67)
    model = fit_narx([(inputs, y)], SPEC, degree=1)
    yhat = predict_narx(model, inputs, y[:2])
    np.testing.assert_allclose(yhat, y, atol=1e-8)


def test_predict_validation():
    inputs, y = _linear_system(n=100)
    model = fit_narx([(inputs, y)], SPEC, degree=1)
    with pytest.raises(ValueError, match="initial"):
        predict_narx(model, inputs, y[:1])
    with pytest.raises(ValueError, match="shorter"):
        predict_narx(model, {"x": inputs["x"][:1]}, y[:2])
    # a shorter input series is not an error, just a shorter horizon
    short = predict_narx(model, {"x": inputs["x"][:50]}, y[:2])
    assert len(short) == 50
    # mismatched channel lengths are
    spec2 = LagSpec((1,), {"a": (0,), "b": (0,)})
    rng = substream(71, "mm")
    a = rng.standard_normal(80)
    ya = np.zeros(80)
    for t in range(1, 80):
        ya[t] = 0.2 * ya[t - 1] + a[t]
    m2 = fit_narx([({"a": a, "b": np.zeros(80)}, ya)], spec2, degree=1,
                  regularization=1e-10)
    with pytest.raises(ValueError, match="length"):
        predict_narx(m2, {"a": a, "b": np.zeros(40)}, ya[:1])


def test_predict_divergence_error():
    # an explosive fitted system must raise with the offending index
    spec = LagSpec((1,), {"x": (0,)})
    model = NarxModel(
        spec=spec, degree=2,
        exponents=monomial_exponents(2, 2),
        coefficients=np.array([0.0, 0.0, 0.0, 3.0, 0.0, 0.0]),  # y = 3 y_prev^2
        train_rmse=0.0, train_range=1.0,
    )
    with pytest.raises(NarxDivergenceError) as err:
        predict_narx(model, {"x": np.zeros(100)}, np.array([2.0]))
    assert err.value.index > 0
    assert "diverged" in str(err.value)


def test_model_save_load_roundtrip(tmp_path):
    inputs, y = _linear_system(n=200, seed=68)
    model = fit_narx([(inputs, y)], SPEC, degree=2, interaction_order=1)
    p = tmp_path / "narx.json"
    model.save(p)
    clone = NarxModel.load(p)
    assert clone.spec == model.spec
    assert clone.interaction_order == 1
    np.testing.assert_array_equal(clone.exponents, model.exponents)
    np.testing.assert_allclose(clone.coefficients, model.coefficients, rtol=1e-15)
    yhat0 = predict_narx(model, inputs, y[:2])
    yhat1 = predict_narx(clone, inputs, y[:2])
    np.testing.assert_array_equal(yhat1, yhat0)


# -- manifold ------------------------------------------------------------------------

def test_manifold_analytic_stage():
    x = np.linspace(0.0, 1.0, 50)
    stage = ManifoldStage(name="sq", builder="analytic_map", inputs=("x",),
                          func=lambda x: x**2)
    channels = build_manifold([stage], {"x": x})
    assert set(channels) == {"x", "sq"}
    np.testing.assert_allclose(channels["sq"], x**2)


def test_manifold_declaration_order_irrelevant():
    x = np.linspace(0.0, 2.0, 40)
    s1 = ManifoldStage(name="a", builder="analytic_map", inputs=("x",),
                       func=lambda x: x + 1.0)
    s2 = ManifoldStage(name="b", builder="analytic_map", inputs=("a",),
                       func=lambda a: 2.0 * a)
    fwd = build_manifold([s1, s2], {"x": x})
    rev = build_manifold([s2, s1], {"x": x})
    np.testing.assert_array_equal(fwd["b"], rev["b"])
    np.testing.assert_allclose(fwd["b"], 2.0 * (x + 1.0))


def test_manifold_narx_submodel_stage():
    inputs, y = _linear_system(n=300, seed=69)
    sub = fit_narx([(inputs, y)], SPEC, degree=1)
    stage = ManifoldStage(name="yhat", builder="narx_submodel", inputs=("x",),
                          model=sub, init=y[:2])
    channels = build_manifold([stage], {"x": inputs["x"]})
    np.testing.assert_allclose(channels["yhat"], y, atol=1e-8)


def test_manifold_missing_dependency_vs_cycle():
    s_missing = ManifoldStage(name="m", builder="analytic_map",
                              inputs=("nope",), func=lambda nope: nope)
    with pytest.raises(MissingDependencyError, match="unknown"):
        build_manifold([s_missing], {"x": np.zeros(5)})
    c1 = ManifoldStage(name="p", builder="analytic_map", inputs=("q",),
                       func=lambda q: q)
    c2 = ManifoldStage(name="q", builder="analytic_map", inputs=("p",),
                       func=lambda p: p)
    with pytest.raises(MissingDependencyError, match="cycle"):
        build_manifold([c1, c2], {"x": np.zeros(5)})


def test_manifold_length_mismatch():
    bad = ManifoldStage(name="short", builder="analytic_map", inputs=("x",),
                        func=lambda x: x[:3])
    with pytest.raises(ValueError, match="length"):
        build_manifold([bad], {"x": np.zeros(10)})


def test_manifold_stage_validation():
    with pytest.raises(ValueError, match="builder"):
        ManifoldStage(name="z", builder="magic", inputs=())
    with pytest.raises(ValueError, match="func"):
        ManifoldStage(name="z", builder="analytic_map", inputs=())
    with pytest.raises(ValueError, match="model"):
        ManifoldStage(name="z", builder="narx_submodel", inputs=())


def test_manifold_augmentation_does_not_hurt_one_step_rmse():
    # nonlinear plant: manifold exposes the quadratic channel, so the
    # augmented linear fit can only match or beat the raw linear fit
    rng = substream(70, "aug")
    x = rng.standard_normal(800)
    y = np.zeros(800)
    for t in range(1, 800):
        y[t] = 0.4 * y[t - 1] + 0.8 * x[t] ** 2 + 0.1 * x[t]
    raw_spec = LagSpec((1,), {"x": (0,)})
    raw = fit_narx([({"x": x}, y)], raw_spec, degree=1)
    stage = ManifoldStage(name="x2", builder="analytic_map", inputs=("x",),
                          func=lambda x: x**2)
    channels = build_manifold([stage], {"x": x})
    aug_spec = LagSpec((1,), {"x": (0,), "x2": (0,)})
    aug = fit_narx([(channels, y)], aug_spec, degree=1)
    assert aug.train_rmse <= raw.train_rmse + 1e-12
    assert aug.train_rmse < 0.01 * raw.train_rmse  # the channel is the true term
