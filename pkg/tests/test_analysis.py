import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from molqubit.analysis import (
    N_BOUNDS, fit_lineshape, fit_stretched_exp, plateau_onset, sweep_T2, upper_envelope,
)
from molqubit.cce import CoherenceCurve
from molqubit.config import load_config

T = np.linspace(0, 40, 50)


def stretched(t, T2, n, A=1.0):
    return A * np.exp(-((t / T2) ** n))


def test_recovers_gaussian_decay():
    f = fit_stretched_exp(T, stretched(T, 10.6, 2.0))
    assert f.ok
    assert f.T2 == pytest.approx(10.6, rel=0.01)
    assert f.n == pytest.approx(2.0, rel=0.02)


def test_recovers_exponential_decay():
    t = np.linspace(0, 10, 50)
    f = fit_stretched_exp(t, np.exp(-t / 2.0))
    assert f.T2 == pytest.approx(2.0, rel=0.02)
    assert f.n == pytest.approx(1.0, rel=0.02)


def test_accepts_coherence_curve():
    L = stretched(T, 7.0, 1.5) * np.exp(1j * 0.3 * T)
    f = fit_stretched_exp(CoherenceCurve(T, L, "mixed", 0, None, {}))
    assert f.T2 == pytest.approx(7.0, rel=1e-6) and f.n == pytest.approx(1.5, rel=1e-6)


def test_constant_curve_no_decay():
    f = fit_stretched_exp(T, np.ones_like(T))
    assert f.status == "no decay" and not f.ok
    # the bound: any admissible model still above 0.9 at t_max
    assert np.exp(-((T[-1] / f.T2) ** N_BOUNDS[1])) >= 0.9 - 1e-12


def test_invalid_inputs():
    with pytest.raises(ValueError, match="6 points"):
        fit_stretched_exp(T[:5], np.ones(5))
    with pytest.raises(ValueError):
        fit_stretched_exp(T, np.full_like(T, 1.5))


def test_noisy_fit_reasonable(rng):
    y = stretched(T, 12.0, 2.0) + rng.normal(0, 0.01, T.size)
    f = fit_stretched_exp(T, np.clip(y, 0, 1.1))
    assert f.T2 == pytest.approx(12.0, rel=0.03)
    assert f.cov is not None and f.residual == pytest.approx(0.01, rel=0.3)


def test_envelope_bridges_dips():
    y = stretched(T, 10.0, 2.0)
    dipped = y * (1 - 0.4 * (np.arange(T.size) % 7 == 3))
    assert np.all(upper_envelope(dipped) >= dipped)
    assert np.all(np.diff(upper_envelope(dipped)) <= 0)
    assert np.array_equal(upper_envelope(y), y)
    f = fit_stretched_exp(T, dipped, envelope=True)
    # a dip is filled with the next sample, so the envelope sits slightly below the true decay
    assert f.T2 == pytest.approx(fit_stretched_exp(T, upper_envelope(dipped)).T2, rel=1e-12)
    assert f.T2 == pytest.approx(10.0, rel=0.02)
    raw = fit_stretched_exp(T, dipped)
    assert f.residual < raw.residual / 4 and abs(f.amplitude - 1) < abs(raw.amplitude - 1)
    assert fit_stretched_exp(T, y, envelope=True).T2 == pytest.approx(10.0, rel=1e-6)


@given(st.floats(0.5, 50), st.floats(0.6, 3.8), st.floats(0.1, 20))
@settings(max_examples=30)
def test_scale_equivariance(T2, n, c):
    t = np.linspace(0, 4 * T2, 40)
    y = stretched(t, T2, n)
    f1 = fit_stretched_exp(t, y)
    f2 = fit_stretched_exp(c * t, y)
    assert f2.T2 == pytest.approx(c * f1.T2, rel=1e-6)
    assert f2.n == pytest.approx(f1.n, rel=1e-6)


@given(st.floats(0.5, 50), st.floats(0.6, 3.8), st.floats(0.5, 1.0))
@settings(max_examples=30)
def test_fit_idempotence(T2, n, A):
    t = np.linspace(0, 3 * T2, 40)
    f = fit_stretched_exp(t, stretched(t, T2, n, A))
    g = fit_stretched_exp(t, stretched(t, f.T2, f.n, f.amplitude))
    assert g.T2 == pytest.approx(f.T2, rel=1e-6)
    assert g.n == pytest.approx(f.n, rel=1e-6)
    assert N_BOUNDS[0] <= f.n <= N_BOUNDS[1] and f.T2 > 0


# ---------------------------------------------------------------- line shapes


def gaussian(x, c, fwhm):
    return np.exp(-4 * np.log(2) * (x - c) ** 2 / fwhm**2)


def test_gaussian_fwhm_50():
    x = np.linspace(-200, 200, 801)
    fit = fit_lineshape(x, 0.2 + gaussian(x, 7.0, 50.0), model="gaussian")
    assert fit.peaks[0]["fwhm"] == pytest.approx(50.0, rel=0.01)
    assert fit.peaks[0]["center"] == pytest.approx(7.0, abs=1e-6)
    assert fit.baseline == pytest.approx(0.2, abs=1e-8)


def test_lorentzian_fwhm_3():
    x = np.linspace(-20, 20, 401)
    y = 1.5 / (1 + ((x + 1) / 1.5) ** 2)
    fit = fit_lineshape(x, y)
    assert fit.peaks[0]["fwhm"] == pytest.approx(3.0, rel=0.01)
    assert fit.peaks[0]["amplitude"] == pytest.approx(1.5, rel=1e-6)


def test_two_peaks_in_position_order():
    x = np.linspace(-30, 30, 601)
    y = gaussian(x, 10, 4) + 0.5 * gaussian(x, -12, 6)
    fit = fit_lineshape(x, y, model="gaussian", n_peaks=2)
    assert [p["center"] for p in fit.peaks] == pytest.approx([-12, 10], abs=1e-6)


def test_signed_peaks_from_centers():
    x = np.linspace(-20, 20, 401)
    lor = lambda c, w: (w / 2) ** 2 / ((x - c) ** 2 + (w / 2) ** 2)
    y = -1.0 * lor(0, 6) + 0.4 * lor(-4, 6) + 0.4 * lor(4, 6)
    fit = fit_lineshape(x, y, centers=[-4, 0, 4], fwhm0=5.0)
    assert [p["fwhm"] for p in fit.peaks] == pytest.approx([6, 6, 6], rel=1e-6)
    assert fit.peaks[1]["amplitude"] == pytest.approx(-1.0, rel=1e-6)


def test_flat_line_error():
    with pytest.raises(ValueError, match="found 0 local maxima"):
        fit_lineshape(np.linspace(0, 1, 50), np.ones(50))


def test_too_many_peaks_lists_candidates():
    x = np.linspace(-10, 10, 201)
    with pytest.raises(ValueError, match=r"candidates \(x, y\): \[\(0\.0"):
        fit_lineshape(x, gaussian(x, 0, 2), n_peaks=2)


def test_unknown_model():
    with pytest.raises(ValueError):
        fit_lineshape(np.arange(5.0), np.arange(5.0), model="voigt")


# ---------------------------------------------------------------- sweeps


def small_config():
    return load_config(None, ["bath.r_bath=0.7", "cce.n_mc=3", 'cce.tau={"start":0,"stop":20,"num":12}',
                              "cce.auto_extend=0"])


def test_sweep_rows_and_determinism():
    cfg = small_config()
    r1 = sweep_T2(cfg, "E", [0.0, 0.5, 1.85])
    r2 = sweep_T2(cfg, "E", [0.0, 0.5, 1.85])
    text = r1.to_csv()
    assert text == r2.to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "variable,value,T2_us,n,residual,flags"
    assert len(lines) == 4 and all(l.startswith("E,") for l in lines[1:])
    assert np.all(r1.T2 > 0)


def test_sweep_rejects_bad_grid():
    with pytest.raises(ValueError):
        sweep_T2(small_config(), "E", [1.0, 0.5])
    with pytest.raises(ValueError):
        sweep_T2(small_config(), "D", [1.0])


def test_sweep_flags_failed_points():
    # E above D/3 is invalid; the point is flagged and the sweep continues
    r = sweep_T2(small_config(), "E", [0.5, 2.5])
    assert r.points[0].fit.status != "failed"
    assert r.points[1].fit.status == "failed" and "run failed" in r.points[1].flags
    assert "failed" in r.to_csv().split("\n")[2]


def test_plateau_onset():
    onset, change = plateau_onset([1, 2, 3, 4, 5], [5.0, 8.0, 9.5, 9.7, 9.8])
    assert onset == 3 and change == pytest.approx([0.6, 0.1875, 0.2 / 9.5, 0.1 / 9.7])
    assert plateau_onset([1, 2, 3], [1.0, 2.0, 4.0])[0] is None
