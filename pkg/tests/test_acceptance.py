"""Acceptance gate: nine end-to-end behavioral guarantees.

Each test prints one PASS/FAIL line so a plain pytest run doubles as a
checklist. Budgeted tests also assert their own wall-clock limits.
"""

import math
import time
import warnings
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

from flowcast.adjacency import gaussian_kernel, merge_availability
from flowcast.baselines import (LinkQueueState, TurningRatioTable, ltm_predict,
                                saf_step)
from flowcast.config import RunConfig, TrainConfig
from flowcast.conformal import calibrate, epoch_quantiles
from flowcast.graph import AvailabilityMatrix
from flowcast.metrics import mae, mpiw, picp, rmse
from flowcast.nn import ForecastModel, mse_loss
from flowcast.scenarios import prepare, run_all, run_scenario
from flowcast.stochastic import ks_test, lognormal_draws
from flowcast.weather import EdgeWeatherCorrelations, fit_weather_weights


@contextmanager
def criterion(number, label, capsys):
    """Print one PASS/FAIL line per criterion, bypassing output capture."""
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        with capsys.disabled():
            print(f"FAIL criterion {number}: {label}")
        raise
    with capsys.disabled():
        print(f"PASS criterion {number}: {label} "
              f"({time.perf_counter() - start:.1f}s)")


def test_criterion_1_travel_time_sampling(capsys):
    with criterion(1, "sampled travel times match requested moments and "
                      "pass a lognormal KS screen", capsys):
        start = time.perf_counter()
        for cv in (0.1, 0.3, 0.5, 0.7, 1.0):
            draws = lognormal_draws(10.0, cv, 10000, seed=123, edge_id=5)
            mean_err = abs(draws.mean() - 10.0) / 10.0
            cv_err = abs(draws.std() / draws.mean() - cv) / cv
            assert mean_err < 0.02, f"cv={cv}: mean off by {mean_err:.4f}"
            assert cv_err < 0.05, f"cv={cv}: dispersion off by {cv_err:.4f}"
            passes = 0
            for i in range(100):
                sample = lognormal_draws(10.0, cv, 1000, seed=1000 + i,
                                         edge_id=3)
                _, p = ks_test(sample, "lognormal")
                passes += p > 0.05
            assert passes >= 95, f"cv={cv}: only {passes}/100 KS passes"
        assert time.perf_counter() - start < 30.0


def test_criterion_2_conformal_coverage(capsys):
    with criterion(2, "conformal intervals hit nominal coverage on "
                      "exchangeable data", capsys):
        start = time.perf_counter()
        split_cov = []
        adaptive_cov = []
        for i in range(100):
            rng = np.random.default_rng(5000 + i)
            cal = np.abs(rng.normal(size=1000))
            test = np.abs(rng.normal(size=1000))
            q10 = calibrate(cal, 0.10).quantile
            q05 = calibrate(cal, 0.05).quantile
            assert q05 >= q10, "wider confidence must not shrink the interval"
            split_cov.append(float((test <= q10).mean()))
            history = [np.abs(rng.normal(size=1000)), cal]
            final = epoch_quantiles(history, 0.10)[-1]
            assert final == q10
            adaptive_cov.append(float((test <= final).mean()))
        assert 0.88 <= np.mean(split_cov) <= 0.93, np.mean(split_cov)
        assert 0.88 <= np.mean(adaptive_cov) <= 0.93, np.mean(adaptive_cov)
        assert time.perf_counter() - start < 120.0


def test_criterion_3_exact_gradients(capsys):
    with criterion(3, "hand-written backward pass matches finite "
                      "differences across every parameter", capsys):
        start = time.perf_counter()
        cfg = TrainConfig(look_back=6, horizon=2, heads=2, head_dim=4,
                          hidden=8, learning_rate=1e-3, batch_size=2,
                          max_epochs=1, patience=2)
        adj = np.zeros((4, 4))
        for i in range(4):
            adj[i, (i + 1) % 4] = 0.8
        adj[0, 2] = 0.5
        model = ForecastModel(adj, n_features=3, config=cfg,
                              rng=np.random.default_rng(21))
        windows = np.random.default_rng(22).standard_normal((2, 6, 4, 3))
        targets = np.random.default_rng(23).standard_normal((2, 4, 2))

        model.zero_grad()
        mse_loss(model.forward(windows), targets).backward()
        analytic = {k: t.grad.copy() for k, t in model.params.items()}

        eps = 1e-5
        worst = 0.0
        checked = 0
        for name, tensor in model.params.items():
            flat = tensor.data.reshape(-1)
            an = analytic[name].reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + eps
                hi = float(mse_loss(model.forward(windows), targets).data)
                flat[k] = orig - eps
                lo = float(mse_loss(model.forward(windows), targets).data)
                flat[k] = orig
                fd = (hi - lo) / (2 * eps)
                rel = abs(fd - an[k]) / max(abs(fd), abs(an[k]), 1e-6)
                worst = max(worst, rel)
                checked += 1
        assert checked > 500, "expected a nontrivial parameter count"
        assert worst <= 1e-4, f"max relative gradient error {worst:.2e}"
        assert time.perf_counter() - start < 60.0


def test_criterion_4_model_beats_baselines(data_dir, tmp_path, capsys):
    with criterion(4, "trained network beats HA, SAF, and LTM on test MAE", capsys):
        start = time.perf_counter()
        config = RunConfig(data_dir=str(data_dir), output_dir=str(tmp_path),
                           cv_levels=(0.5,), samples=5, look_back=24,
                           max_epochs=40, learning_rate=3e-3)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            prepared = prepare(config)
            metrics = run_scenario(prepared, config, 0.5,
                                   tmp_path / "scenario_cv0.5")
        model_mae = metrics["methods"]["model"]["mae"]
        for name in ("ha", "saf", "ltm"):
            rival = metrics["methods"][name]["mae"]
            assert model_mae < rival, \
                f"model mae {model_mae:.6f} not below {name} {rival:.6f}"
        assert time.perf_counter() - start < 600.0


def test_criterion_5_physics_conservation_and_causality(capsys):
    with criterion(5, "link-queue ledger is exact and cumulative "
                      "propagation is causal", capsys):
        start = time.perf_counter()
        half, third = Fraction(1, 2), Fraction(1, 3)
        ratios = np.array([
            [0, half, half, 0, 0],
            [third, 0, 0, 2 * third, 0],
            [0, 0, 0, half, half],
            [half, 0, 0, 0, half],
            [0, 0, 0, 0, 0],          # absorbing sink
        ], dtype=object)
        table = TurningRatioTable(ratios, 1.0, 2)
        caps = np.array([Fraction(7, 2), Fraction(5), Fraction(9, 4),
                         Fraction(11, 3), Fraction(4)], dtype=object)
        state = LinkQueueState.initial(caps, zero=Fraction(0))
        for t in range(500):
            demand = np.array([Fraction((3 * t + 2 * i) % 13, 4)
                               for i in range(5)], dtype=object)
            state, out = saf_step(state, table, demand)
            assert all(o <= c for o, c in zip(out, caps))
            assert all(q >= 0 for q in state.queues)
        ledger = state.queues.sum() + state.exited_total
        assert ledger == state.injected_total, "conservation ledger drifted"

        travel = np.array([[np.nan, 30.0, np.nan],
                           [np.nan, np.nan, 45.0],
                           [np.nan, np.nan, np.nan]])
        chain = TurningRatioTable(
            np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]),
            1.0, 1)
        demand = np.zeros((12, 3))
        demand[:, 0] = np.random.default_rng(9).uniform(0.0, 5.0, size=12)
        out = ltm_predict(demand, travel, chain,
                          np.array([100.0, 100.0, 100.0]))
        assert np.allclose(out[:2, 1], 0.0), "arrival before the 2-step delay"
        assert np.allclose(out[:5, 2], 0.0), "arrival before the 5-step path"
        assert (out >= -1e-12).all()
        assert out[:, 1].sum() <= demand.sum() + 1e-9
        assert time.perf_counter() - start < 10.0


def test_criterion_6_adjacency_invariances(capsys):
    with criterion(6, "kernel weights are scale-invariant, monotone, "
                      "and bounded after availability merge", capsys):
        start = time.perf_counter()
        for trial in range(1000):
            rng = np.random.default_rng(trial)
            n = int(rng.integers(2, 7))
            t = np.full((n, n), np.nan)
            mask = rng.random((n, n)) < 0.6
            np.fill_diagonal(mask, False)
            t[mask] = rng.uniform(1.0, 120.0, size=int(mask.sum()))
            if not np.isfinite(t).any():
                t[0, 1] = 10.0
            k = gaussian_kernel(t, 0.5)
            scale = 10.0 ** rng.uniform(-3.0, 3.0)
            assert np.abs(gaussian_kernel(t * scale, 0.5) - k).max() < 1e-12

            present = np.isfinite(t)
            order = np.argsort(t[present])
            weights = k[present][order]
            assert (np.diff(weights) <= 1e-15).all(), \
                "slower link got a larger weight"

            avail = AvailabilityMatrix(values=rng.uniform(0.0, 1.0, (n, n)))
            merged = merge_availability(k, avail,
                                        [f"s{i}" for i in range(n)]).values
            assert (merged >= 0.0).all()
            assert (merged <= k + 1e-15).all()
            assert (k <= 1.0).all()
        assert time.perf_counter() - start < 10.0


def test_criterion_7_weather_weight_recovery(capsys):
    with criterion(7, "regression recovers planted weather coefficients "
                      "and mixing weights are scale-invariant", capsys):
        start = time.perf_counter()
        rng = np.random.default_rng(77)
        betas = np.array([1.3, -0.7, 0.4])
        intercept = 5.0
        correlations = rng.uniform(-1.0, 1.0, size=(200, 3))
        rows = [(EdgeWeatherCorrelations(*map(float, c)),
                 float(intercept + c @ betas)) for c in correlations]
        exact = fit_weather_weights(rows)
        fitted = np.array([exact.beta_temp, exact.beta_wind,
                           exact.beta_precip])
        assert np.abs(fitted - betas).max() <= 1e-6

        noise = rng.normal(0.0, 0.01, size=200)
        noisy_rows = [(c, y + float(e))
                      for (c, y), e in zip(rows, noise)]
        noisy = fit_weather_weights(noisy_rows)
        noisy_betas = np.array([noisy.beta_temp, noisy.beta_wind,
                                noisy.beta_precip])
        assert (np.abs(noisy_betas - betas) / np.abs(betas)).max() <= 0.05

        scaled_rows = [(c, float(intercept + np.asarray(c.as_array()) @
                                 (3.7 * betas))) for c, _ in rows]
        scaled = fit_weather_weights(scaled_rows)
        assert abs(scaled.alpha_temp - exact.alpha_temp) <= 1e-9
        assert abs(scaled.alpha_wind - exact.alpha_wind) <= 1e-9
        assert abs(scaled.alpha_precip - exact.alpha_precip) <= 1e-9
        assert time.perf_counter() - start < 5.0


def test_criterion_8_metric_fixtures(capsys):
    with criterion(8, "point and interval metrics reproduce hand-computed "
                      "fixtures exactly", capsys):
        assert mae([0.0, 0.0], [3.0, -1.0]) == 2.0
        assert rmse([0.0, 0.0], [3.0, -1.0]) == math.sqrt(5.0)
        y = [1.0, 2.0, 3.0]
        assert mae(y, y) == 0.0 and rmse(y, y) == 0.0
        assert picp([2.0, 5.0, 0.5], [1.0, 2.0, 0.0],
                    [3.0, 4.0, 1.0]) == 2.0 / 3.0
        assert picp([1.0, 3.0], [1.0, 0.0], [2.0, 3.0]) == 1.0
        assert mpiw([1.0, 2.0, 0.0], [3.0, 4.0, 1.0]) == 5.0 / 3.0


def test_criterion_9_run_determinism(data_dir, tmp_path, capsys):
    with criterion(9, "repeated scenario sweeps are byte-identical", capsys):
        config = RunConfig(data_dir=str(data_dir), output_dir=str(tmp_path),
                           cv_levels=(0.3, 0.7), samples=2, look_back=8,
                           hidden=8, heads=2, head_dim=2, max_epochs=2)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            manifest, code = run_all(config)
        assert code == 0
        assert [s["status"] for s in manifest["scenarios"]] == ["ok", "ok"]
        tracked = [tmp_path / "manifest.json"]
        for name in ("scenario_cv0.3", "scenario_cv0.7"):
            for artifact in ("adjacency.csv", "checkpoint.bin",
                             "calibration.json", "predictions.csv",
                             "metrics.json"):
                tracked.append(tmp_path / name / artifact)
        first = {path: path.read_bytes() for path in tracked}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, code = run_all(config)
        assert code == 0
        for path in tracked:
            assert path.read_bytes() == first[path], f"{path.name} changed"
