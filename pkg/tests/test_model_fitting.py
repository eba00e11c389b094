import json
import math

import numpy as np
import pytest

from vvlc.channel_models import (
    BLACK_CAR,
    ORANGE_CAR,
    WHITE_CAR,
    PathLossModel,
    WdgfParams,
    path_loss_db,
    wdgf_eval,
    wdgf_fwhm,
)
from vvlc.measurement_pipeline import Cir
from vvlc.model_fitting import (
    FitReport,
    PathLossDataset,
    extract_tail,
    fit_path_loss,
    fit_path_loss_starts,
    fit_wdgf,
    levenberg_marquardt,
    rmse,
)

TABLE = {"white": WHITE_CAR, "orange": ORANGE_CAR, "black": BLACK_CAR}


def synth_dataset(surface, noise_sigma=0.0, seed=0):
    d = np.arange(2.0, 20.01, 2.0)
    pl = path_loss_db(PathLossModel(surface, 2.0, 0.0), d)
    if noise_sigma:
        pl = pl + np.random.default_rng(seed).normal(0.0, noise_sigma, d.size)
    return PathLossDataset(tuple(d), tuple(pl), 2.0, 0.0)


# --------------------------------------------------------------------------
# rmse

def test_rmse_trivials():
    assert rmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0
    assert rmse([3.0, 5.0], [1.0, 3.0]) == pytest.approx(2.0, rel=1e-15)


def test_rmse_matches_brute_force():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=100), rng.normal(size=100)
    acc = 0.0
    for x, y in zip(a, b):
        acc += (x - y) ** 2
    assert rmse(a, b) == pytest.approx(math.sqrt(acc / 100), rel=1e-12)


def test_rmse_length_mismatch():
    with pytest.raises(ValueError):
        rmse([1.0], [1.0, 2.0])


# --------------------------------------------------------------------------
# Levenberg-Marquardt engine

def test_lm_cost_history_non_increasing():
    rng = np.random.default_rng(1)
    t = np.linspace(0, 1, 40)
    y = 2.0 * np.exp(-3.0 * t) + rng.normal(0, 0.01, t.size)

    def resid(x):
        return x[0] * np.exp(-x[1] * t) - y

    res = levenberg_marquardt(resid, np.array([1.0, 1.0]))
    assert res.converged
    hist = np.array(res.cost_history)
    assert np.all(np.diff(hist) <= 0)
    assert res.x[0] == pytest.approx(2.0, abs=0.05)
    assert res.x[1] == pytest.approx(3.0, abs=0.15)


def test_lm_respects_bounds():
    def resid(x):
        return np.array([x[0] - 5.0])

    res = levenberg_marquardt(resid, np.array([0.5]), lower=np.array([0.0]),
                              upper=np.array([1.0]))
    assert res.x[0] == pytest.approx(1.0, abs=1e-9)


# --------------------------------------------------------------------------
# Path-loss fit

def test_fit_path_loss_noiseless_recovery():
    for surface in TABLE.values():
        report = fit_path_loss(synth_dataset(surface))
        p = report.params
        assert abs(p.alpha - surface.alpha) < 1e-4
        assert abs(p.beta - surface.beta) < 1e-4
        assert abs(p.n - surface.n) < 1e-4
        assert report.converged
        assert report.rmse < 1e-6


def test_fit_path_loss_noisy_rmse_comparable_to_reference():
    report = fit_path_loss(synth_dataset(WHITE_CAR, noise_sigma=0.2, seed=1))
    assert report.rmse <= 0.25


def test_fit_path_loss_underdetermined():
    with pytest.raises(ValueError, match="underdetermined"):
        PathLossDataset((2.0, 4.0, 6.0), (0.0, 5.0, 9.0), 2.0, 0.0)


def test_fit_path_loss_every_converged_start_finds_optimum():
    starts = fit_path_loss_starts(synth_dataset(WHITE_CAR))
    converged = [r for r in starts if r.converged]
    assert converged
    for res in converged:
        assert math.sqrt(res.cost / 10) < 1e-6


def test_fit_path_loss_order_independent():
    data = synth_dataset(ORANGE_CAR, noise_sigma=0.1, seed=4)
    perm = np.random.default_rng(0).permutation(len(data.distances_m))
    shuffled = PathLossDataset(
        tuple(np.asarray(data.distances_m)[perm]),
        tuple(np.asarray(data.pl_db)[perm]),
        data.d0,
        data.pl_ref,
    )
    a = fit_path_loss(data)
    b = fit_path_loss(shuffled)
    assert a.params == b.params
    assert a.rmse == b.rmse


def test_fit_report_serializes_to_json():
    report = fit_path_loss(synth_dataset(BLACK_CAR))
    doc = json.loads(report.to_json())
    assert set(doc) == {"params", "rmse", "iterations", "converged", "residuals"}
    assert doc["params"]["alpha"] == pytest.approx(BLACK_CAR.alpha, abs=1e-4)
    assert len(doc["residuals"]) == 10


# --------------------------------------------------------------------------
# WDGF tail fit

def tail_cir(params, t_res=1e-9, span=6e-6):
    """Sample the generator tail from its own peak onward."""
    fine = np.arange(0.0, span, 0.05e-9)
    vals = wdgf_eval(params, fine)
    t_peak = fine[int(np.argmax(vals))]
    t = np.arange(0.0, span, t_res)
    return Cir(t_res=t_res, samples=wdgf_eval(params, t_peak + t))


def test_fit_wdgf_recovers_fwhm_on_noiseless_tail():
    gen = WdgfParams(1.0, 1.0 / 1000e-9, 0.5, 1.0 / 420e-9, 3e-4, 1e-4)
    w_gen = wdgf_fwhm(gen, t_res=0.1e-9)
    report = fit_wdgf(tail_cir(gen))
    w_fit = wdgf_fwhm(report.params, t_res=0.1e-9)
    assert abs(w_fit - w_gen) <= 2e-9


def test_fit_wdgf_single_exponential_tail():
    gen = WdgfParams(0.8, 1.0 / 900e-9, 0.0, 1e6, 0.0, 0.0)
    cir = tail_cir(gen)
    report = fit_wdgf(cir)
    assert report.rmse < 1e-3 * 0.8
    assert report.converged


def test_fit_wdgf_short_tail_errors():
    samples = np.concatenate([[1.0], np.full(5, 0.5), np.zeros(40)])
    with pytest.raises(ValueError, match="tail too short"):
        fit_wdgf(Cir(t_res=1e-9, samples=samples))


def test_extract_tail_starts_at_peak_and_truncates():
    t = np.arange(0.0, 4e-6, 1e-9)
    gen = WdgfParams(1.0, 1.0 / 500e-9, 0.0, 1e6, 0.02, 0.0)
    samples = wdgf_eval(gen, t)
    cir = Cir(t_res=1e-9, samples=samples)
    dt, tail = extract_tail(cir, tail_floor=0.01)
    assert dt[0] == 0.0
    assert tail[0] == samples.max()
    assert np.all(np.abs(tail) >= 0.01 * samples.max())


def test_fit_wdgf_first_order_optimality_on_noisy_tail():
    gen = WdgfParams(1.0, 1.0 / 900e-9, 0.4, 1.0 / 400e-9, 2e-4, 1e-4)
    cir = tail_cir(gen)
    noisy = np.asarray(cir.samples) + np.random.default_rng(5).normal(0, 5e-4, cir.samples.size)
    report = fit_wdgf(Cir(t_res=cir.t_res, samples=noisy))
    assert report.converged
    p = report.params
    dt, tail = extract_tail(Cir(t_res=cir.t_res, samples=noisy))
    r = wdgf_eval(p, dt) - tail
    x = np.array([p.c1, p.c2, p.c3, p.c4, p.alpha_w, p.beta_w])

    def model(theta):
        q = WdgfParams(*theta)
        return wdgf_eval(q, dt)

    # residuals must be orthogonal to the numerical parameter gradients
    for j in range(6):
        h = 1e-6 * max(abs(x[j]), 1e-3)
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] = max(xm[j] - h, 0.0 if j != 1 and j != 3 else xm[j] - h)
        grad = (model(xp) - model(xm)) / (xp[j] - xm[j])
        cos = abs(r @ grad) / (np.linalg.norm(r) * np.linalg.norm(grad) + 1e-300)
        assert cos < 1e-3  # loose cosine bound; FD and fit tolerances stack
