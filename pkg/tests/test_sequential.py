"""Tests for the sequential surrogate loop and its building blocks."""
import dataclasses
import math
import warnings

import numpy as np
import pytest

from extremis import sequential
from extremis.bruteforce import return_value_from_annual_maxima
from extremis.envmodel import (
    Condition,
    EnvModel,
    LognormalConditional,
    WeibullMarginal,
)
from extremis.errors import DomainError, SimulatorFailure
from extremis.gp import fit_gp
from extremis.rng import derive_seed, substream
from extremis.sequential import (
    ExceedanceKDE,
    ExperimentHistory,
    IterationRecord,
    LongTermRun,
    acquisition_argmax,
    exceedance_kde,
    failure_probability,
    fit_condition,
    initial_design,
    return_value,
    run_sequential,
    simulate_longterm,
)
from extremis.simulator import SimPreset


def _empty_run(annual):
    annual = np.asarray(annual, dtype=float)
    return LongTermRun(
        years=len(annual),
        annual_maxima=annual,
        exceed_conditions=np.empty((0, 2)),
        exceed_responses=np.empty(0),
        threshold=math.nan,
        n_clamped=0,
    )


@pytest.fixture(scope="module")
def toy_gp():
    # smooth gumbel-parameter surface, low noise: behaves like a converged fit
    def f(u, s):
        return np.array([2.0 + 0.3 * u + 0.5 * s, 0.5 + 0.02 * u])

    rng = substream(61, "seq-gp")
    out = []
    for _ in range(20):
        u = rng.uniform(3.0, 25.0)
        s = rng.uniform(0.2, 4.0)
        out.append((Condition(u, s), f(u, s), 1e-4 * np.eye(2)))
    return fit_gp(out)


# -- LongTermRun / summaries -------------------------------------------------


def test_longterm_run_validation():
    with pytest.raises(ValueError, match="length"):
        LongTermRun(3, np.zeros(2), np.empty((0, 2)), np.empty(0), math.nan, 0)
    with pytest.raises(ValueError, match="finite"):
        _empty_run([1.0, -0.5])
    with pytest.raises(ValueError, match="finite"):
        _empty_run([1.0, np.inf])


def test_return_value_and_wide_warning():
    run = _empty_run(np.arange(1.0, 121.0))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        v50 = return_value(run, 50.0)
    assert v50 == return_value_from_annual_maxima(run.annual_maxima, 50.0)[0]
    with pytest.warns(UserWarning, match="wide"):
        return_value(run, 100.0)


def test_failure_probability_strict():
    run = _empty_run([1.0, 2.0, 3.0])
    assert failure_probability(run, 2.0) == pytest.approx(1.0 / 3.0)
    assert failure_probability(run, 3.0) == 0.0
    with pytest.raises(DomainError):
        failure_probability(run, 0.0)


# -- simulate_longterm -------------------------------------------------------


def test_simulate_longterm_topk(toy_gp, brittany_env):
    run = simulate_longterm(toy_gp, brittany_env, 30, substream(5, "lt"),
                            grid=(64, 64))
    assert run.years == 30
    assert run.annual_maxima.shape == (30,)
    assert np.all(np.isfinite(run.annual_maxima))
    assert np.all(run.annual_maxima >= 0)
    assert math.isnan(run.threshold)
    assert len(run.exceed_responses) == 50          # default top_k
    assert run.exceed_conditions.shape == (50, 2)
    assert run.exceed_responses.max() == run.annual_maxima.max()
    assert run.n_clamped >= 0


def test_simulate_longterm_threshold(toy_gp, brittany_env):
    base = simulate_longterm(toy_gp, brittany_env, 30, substream(5, "lt"),
                             grid=(64, 64))
    thr = float(np.median(base.exceed_responses))
    run = simulate_longterm(toy_gp, brittany_env, 30, substream(5, "lt"),
                            threshold=thr, grid=(64, 64))
    assert run.threshold == thr
    assert np.all(run.exceed_responses > thr)
    np.testing.assert_array_equal(run.annual_maxima, base.annual_maxima)
    # every annual max above the cut must appear among the recorded exceedances
    big = run.annual_maxima[run.annual_maxima > thr]
    assert np.isin(big, run.exceed_responses).all()


def test_simulate_longterm_deterministic(toy_gp, brittany_env):
    a = simulate_longterm(toy_gp, brittany_env, 12, substream(9, "det"),
                          grid=(64, 64))
    b = simulate_longterm(toy_gp, brittany_env, 12, substream(9, "det"),
                          grid=(64, 64))
    np.testing.assert_array_equal(a.annual_maxima, b.annual_maxima)
    np.testing.assert_array_equal(a.exceed_conditions, b.exceed_conditions)
    np.testing.assert_array_equal(a.exceed_responses, b.exceed_responses)


def test_simulate_longterm_thread_invariant(toy_gp, brittany_env):
    a = simulate_longterm(toy_gp, brittany_env, 12, substream(9, "det"),
                          grid=(64, 64), threads=1)
    b = simulate_longterm(toy_gp, brittany_env, 12, substream(9, "det"),
                          grid=(64, 64), threads=3)
    np.testing.assert_array_equal(a.annual_maxima, b.annual_maxima)
    np.testing.assert_array_equal(a.exceed_responses, b.exceed_responses)


def test_simulate_longterm_validation(toy_gp, brittany_env):
    with pytest.raises(ValueError, match="years"):
        simulate_longterm(toy_gp, brittany_env, 0, 1)


# -- exceedance KDE ----------------------------------------------------------


def test_kde_silverman_bandwidth():
    rng = substream(7, "kde")
    pts = rng.normal([10.0, 2.0], [2.0, 0.5], size=(40, 2))
    kde = exceedance_kde(pts)
    assert isinstance(kde, ExceedanceKDE)
    # d = 2 makes the Silverman prefactor (4/(d+2))^(1/(d+4)) exactly 1
    expect = pts.std(axis=0, ddof=1) * 40.0 ** (-1.0 / 6.0)
    np.testing.assert_allclose(kde.bandwidth, expect, rtol=1e-12)


def test_kde_matches_manual_sum():
    pts = np.array([[1.0, 0.5], [2.0, 1.5], [0.5, 2.0]])
    h = np.array([0.3, 0.7])
    kde = ExceedanceKDE(pts, bandwidth=h)
    x = np.array([[1.2, 1.0], [3.0, 0.2]])
    t = (x[:, None, :] - pts[None, :, :]) / h
    manual = np.exp(-0.5 * (t**2).sum(axis=2)).sum(axis=1)
    manual /= len(pts) * h.prod() * 2.0 * math.pi
    np.testing.assert_allclose(kde(x), manual, rtol=1e-12)


def test_kde_integrates_to_one():
    rng = substream(11, "kde-int")
    pts = rng.normal(0.0, 1.0, size=(25, 2))
    kde = ExceedanceKDE(pts)
    g = np.linspace(-8.0, 8.0, 321)
    xx, yy = np.meshgrid(g, g)
    vals = kde(np.column_stack([xx.ravel(), yy.ravel()])).reshape(xx.shape)
    total = np.trapezoid(np.trapezoid(vals, g, axis=1), g)
    assert total == pytest.approx(1.0, rel=1e-3)


def test_kde_chunking_identical():
    rng = substream(12, "kde-chunk")
    pts = rng.random((30, 2))
    x = rng.random((17, 2))
    kde = ExceedanceKDE(pts)
    np.testing.assert_array_equal(kde(x, chunk=3), kde(x, chunk=4096))


def test_kde_single_point_and_scalar():
    kde = ExceedanceKDE(np.array([[5.0, 1.0]]))
    # degenerate spread falls back to unit bandwidth
    np.testing.assert_array_equal(kde.bandwidth, [1.0, 1.0])
    v = kde(np.array([[5.0, 1.0]]))
    assert isinstance(v, float)
    assert v == pytest.approx(1.0 / (2.0 * math.pi), rel=1e-12)


def test_kde_accepts_conditions():
    conds = [Condition(8.0, 1.0), Condition(12.0, 2.0), Condition(16.0, 1.5)]
    kde = ExceedanceKDE(conds)
    arr = np.array([[8.0, 1.0], [12.0, 2.0], [16.0, 1.5]])
    np.testing.assert_array_equal(kde.points, arr)
    np.testing.assert_allclose(kde([Condition(10.0, 1.2)]),
                               ExceedanceKDE(arr)(np.array([[10.0, 1.2]])))


def test_kde_validation():
    with pytest.raises(ValueError, match="at least one"):
        ExceedanceKDE(np.empty((0, 2)))
    with pytest.raises(ValueError, match="bandwidth"):
        ExceedanceKDE(np.ones((3, 2)), bandwidth="scott")
    with pytest.raises(ValueError, match="positive"):
        ExceedanceKDE(np.ones((3, 2)), bandwidth=[0.5, -1.0])


# -- acquisition -------------------------------------------------------------


def test_acquisition_prefers_posterior_uncertainty(toy_gp):
    # flat density: the score reduces to the posterior-sd width
    near = toy_gp.x_train[0]
    cands = np.array([near, [24.5, 7.5]])
    pick = acquisition_argmax(toy_gp, lambda xy: np.ones(len(xy)), cands)
    assert pick == Condition(24.5, 7.5)


def test_acquisition_weights_density(toy_gp):
    # sharply peaked density at a training point beats a wide posterior
    near = toy_gp.x_train[0]
    kde = ExceedanceKDE(near[None, :], bandwidth=[0.05, 0.05])
    cands = np.array([near, [24.5, 7.5]])
    pick = acquisition_argmax(toy_gp, kde, cands)
    assert pick == Condition(float(near[0]), float(near[1]))


def test_acquisition_tie_breaks_to_first(toy_gp):
    cands = np.array([[10.0, 1.0], [12.0, 2.0], [14.0, 3.0]])
    pick = acquisition_argmax(toy_gp, lambda xy: np.zeros(len(xy)), cands)
    assert pick == Condition(10.0, 1.0)


def test_acquisition_norms_and_validation(toy_gp):
    cands = np.array([[10.0, 1.0], [20.0, 3.0]])
    flat = lambda xy: np.ones(len(xy))
    for norm in ("euclidean", "product", "max"):
        pick = acquisition_argmax(toy_gp, flat, cands, norm=norm)
        assert 3.0 <= pick.u <= 25.0
    with pytest.raises(ValueError, match="empty"):
        acquisition_argmax(toy_gp, flat, np.empty((0, 2)))
    with pytest.raises(DomainError, match="band"):
        acquisition_argmax(toy_gp, flat, np.array([[2.0, 1.0]]))
    with pytest.raises(ValueError, match="norm"):
        acquisition_argmax(toy_gp, flat, cands, norm="sum")


# -- initial design ----------------------------------------------------------


def test_initial_design_latin_maximin(brittany_env):
    n = 8
    band = (3.0, 25.0)
    pts = initial_design(brittany_env, n, rng=3, band=band)
    assert len(pts) == n
    s_lo, s_hi = brittany_env.sigma_range(band, coverage=0.999)
    s_lo = max(s_lo, 0.0)
    u = np.array([p.u for p in pts])
    s = np.array([p.sigma_u for p in pts])
    assert np.all((u >= band[0]) & (u <= band[1]))
    assert np.all((s >= s_lo) & (s <= s_hi))
    # one point per latin stratum in each dimension
    bins_u = np.floor((u - band[0]) / (band[1] - band[0]) * n).astype(int)
    bins_s = np.floor((s - s_lo) / (s_hi - s_lo) * n).astype(int)
    assert sorted(np.clip(bins_u, 0, n - 1)) == list(range(n))
    assert sorted(np.clip(bins_s, 0, n - 1)) == list(range(n))
    again = initial_design(brittany_env, n, rng=3, band=band)
    assert pts == again
    with pytest.raises(ValueError, match="at least 3"):
        initial_design(brittany_env, 2)


# -- fit_condition -----------------------------------------------------------


def test_fit_condition_shapes_and_determinism(brittany_sim):
    cond = Condition(12.0, 1.5)
    seed_fn = lambda j, a: derive_seed(4242, "fc", j, a)
    obs, fit = fit_condition(cond, brittany_sim, 4, seed_fn,
                             state_duration_hours=1.0)
    assert obs.shape == (24,)       # 4 seeds x 6 blocks per 1-hour state
    assert np.all(np.isfinite(obs))
    assert fit.mean.shape == (2,)
    assert fit.cov.shape == (2, 2)
    obs2, fit2 = fit_condition(cond, brittany_sim, 4, seed_fn,
                               state_duration_hours=1.0)
    np.testing.assert_array_equal(obs, obs2)
    np.testing.assert_array_equal(fit.mean, fit2.mean)
    np.testing.assert_array_equal(fit.cov, fit2.cov)


def test_fit_condition_retries_failures(brittany_sim):
    flaky = dataclasses.replace(brittany_sim, fail_prob=0.4)
    seed_fn = lambda j, a: derive_seed(99, "flaky", j, a)
    obs, _ = fit_condition(Condition(12.0, 1.5), flaky, 6, seed_fn,
                           state_duration_hours=1.0)
    assert obs.shape == (36,)
    assert np.all(np.isfinite(obs))
    obs2, _ = fit_condition(Condition(12.0, 1.5), flaky, 6, seed_fn,
                            state_duration_hours=1.0)
    np.testing.assert_array_equal(obs, obs2)


def test_fit_condition_gives_up(brittany_sim):
    dead = dataclasses.replace(brittany_sim, fail_prob=0.99)
    seed_fn = lambda j, a: derive_seed(1, "dead", j, a)
    with pytest.raises(SimulatorFailure, match="seed slot"):
        fit_condition(Condition(12.0, 1.5), dead, 1, seed_fn,
                      state_duration_hours=1.0)


# -- history plumbing --------------------------------------------------------


def _record(it, rv50=20.0, rv100=21.0, wall=1.2345):
    return IterationRecord(iteration=it, x_new=Condition(10.5, 1.25),
                           n_seeds=6, rv50=rv50, rv100=rv100,
                           p_f=0.001, wall_s=wall)


def test_iteration_record_orders_return_values():
    with pytest.raises(ValueError, match="rv100"):
        _record(1, rv50=22.0, rv100=21.0)
    rec = _record(1, rv50=21.0, rv100=21.0)
    assert rec.rv50 == rec.rv100


def test_history_append_monotonic():
    h = ExperimentHistory()
    h.append(_record(1))
    h.append(_record(2, rv100=22.0))
    assert h.iterations == [1, 2]
    np.testing.assert_array_equal(h.rv_series("rv100"), [21.0, 22.0])
    np.testing.assert_array_equal(h.rv_series("rv50"), [20.0, 20.0])
    with pytest.raises(ValueError, match="increasing"):
        h.append(_record(2))
    with pytest.raises(ValueError, match="increasing"):
        h.append(_record(1))


def test_history_to_csv_timing_switch(tmp_path):
    h = ExperimentHistory()
    h.append(_record(1))
    h.append(_record(2, rv100=22.0, wall=9.876))
    timed = tmp_path / "timed.csv"
    plain = tmp_path / "plain.csv"
    h.to_csv(timed, timing=True)
    h.to_csv(plain, timing=False)
    rows = timed.read_text().strip().splitlines()
    assert rows[0] == "iter,u_new,sigma_u_new,rv50_mnm,rv100_mnm,pf,wall_s"
    assert rows[1].endswith(",1.234") or rows[1].endswith(",1.235")
    rows = plain.read_text().strip().splitlines()
    assert all(r.endswith(",0.000") for r in rows[1:])
    assert rows[1].split(",")[:6] == timed.read_text().strip().splitlines()[1].split(",")[:6]


def test_checkpoint_roundtrip(tmp_path):
    path = tmp_path / "state.json"
    training = [
        (Condition(8.0, 1.0), np.array([20.0, 2.0]), 0.01 * np.eye(2)),
        (Condition(14.0, 2.0), np.array([25.0, 2.5]), 0.02 * np.eye(2)),
    ]
    records = [_record(1)]
    sequential._checkpoint_dump(path, 123456789, training, records, False)
    master, tr, recs, conv = sequential._checkpoint_load(path)
    assert master == 123456789
    assert conv is False
    assert len(tr) == 2
    assert tr[0][0] == training[0][0]
    np.testing.assert_array_equal(tr[1][1], training[1][1])
    np.testing.assert_array_equal(tr[1][2], training[1][2])
    assert recs == records


# -- the loop ----------------------------------------------------------------

_SEQ_KW = dict(n_seeds=4, init_points=3, years=100, pf_threshold=45.0,
               grid=(48, 48), n_candidates=4000)


@pytest.fixture(scope="module")
def seq_small(brittany_env, brittany_sim):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return run_sequential(brittany_env, brittany_sim, max_iters=2,
                              rng=31, **_SEQ_KW)


def test_run_sequential_validation(brittany_env, brittany_sim):
    with pytest.raises(ValueError, match="init_points"):
        run_sequential(brittany_env, brittany_sim, init_points=2)
    with pytest.raises(ValueError, match="max_iters"):
        run_sequential(brittany_env, brittany_sim, max_iters=0)
    with pytest.raises(ValueError, match="family"):
        run_sequential(brittany_env, brittany_sim, family="normal")


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_run_sequential_smoke(seq_small, brittany_sim):
    h = seq_small
    assert not h.converged          # patience is 5, only 2 iterations ran
    assert h.iterations == [1, 2]
    assert len(h.training) == 3 + 2
    assert h.gp is not None
    assert h.final_run.years == 100
    for rec in h.records:
        assert rec.rv100 >= rec.rv50 > 0
        assert 0.0 <= rec.p_f <= 1.0
        assert rec.wall_s > 0
        assert brittany_sim.cut_in <= rec.x_new.u <= brittany_sim.cut_out
        assert rec.n_seeds == 4


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_run_sequential_deterministic(seq_small, brittany_env, brittany_sim):
    again = run_sequential(brittany_env, brittany_sim, max_iters=2,
                           rng=31, **_SEQ_KW)
    for a, b in zip(seq_small.records, again.records):
        assert a.x_new == b.x_new
        assert a.rv50 == b.rv50
        assert a.rv100 == b.rv100
        assert a.p_f == b.p_f


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_run_sequential_convergence_stops_early(brittany_env, brittany_sim):
    h = run_sequential(brittany_env, brittany_sim, max_iters=5, rng=17,
                       rel_tol=10.0, patience=1, **_SEQ_KW)
    assert h.converged
    assert len(h.records) == 2      # first change measurable at iteration 2


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_run_sequential_checkpoint_resume(tmp_path, brittany_env, brittany_sim):
    path = tmp_path / "ckpt.json"
    full = run_sequential(brittany_env, brittany_sim, max_iters=3, rng=11,
                          **_SEQ_KW)
    part = run_sequential(brittany_env, brittany_sim, max_iters=2, rng=11,
                          checkpoint_path=str(path), **_SEQ_KW)
    assert not part.converged
    resumed = run_sequential(brittany_env, brittany_sim, max_iters=3, rng=11,
                             checkpoint_path=str(path), resume=True, **_SEQ_KW)
    assert resumed.iterations == [1, 2, 3]
    for a, b in zip(full.records, resumed.records):
        assert a.x_new == b.x_new
        assert a.rv50 == b.rv50
        assert a.rv100 == b.rv100
        assert a.p_f == b.p_f
    # resume with nothing left to do returns the stored state untouched
    done = run_sequential(brittany_env, brittany_sim, max_iters=2, rng=11,
                          checkpoint_path=str(path), resume=True, **_SEQ_KW)
    assert done.iterations == [1, 2, 3]
    assert done.gp is not None


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_run_sequential_error_context(monkeypatch, brittany_env, brittany_sim):
    def boom(*args, **kwargs):
        raise DomainError("boom")

    monkeypatch.setattr(sequential, "acquisition_argmax", boom)
    with pytest.raises(DomainError, match="iteration 1: boom"):
        run_sequential(brittany_env, brittany_sim, max_iters=2, rng=3,
                       **_SEQ_KW)


def test_candidate_pool(brittany_env):
    pool = sequential._candidate_pool(brittany_env, 500, substream(2, "cand"),
                                      (3.0, 25.0))
    assert pool.shape == (500, 2)
    assert np.all((pool[:, 0] >= 3.0) & (pool[:, 0] <= 25.0))
    # an environment with no mass in the band must fail loudly
    calm = EnvModel(WeibullMarginal(2.0, 0.1),
                    LognormalConditional([-1.0], [0.5]), 1.0)
    with pytest.raises(DomainError, match="negligible"):
        sequential._candidate_pool(calm, 100, substream(3, "cand"), (3.0, 25.0))
