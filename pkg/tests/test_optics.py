import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import curve_fit

from molqubit.analysis import fit_lineshape
from molqubit.optics import (
    EnsembleSpec, OpticsModel, Segment, anti_hole_positions, evolve_populations, generator,
    hole_burning_spectrum, lorentzian, mw_transfer, pulse_transient, pulsed_odmr_contrast, steady_state,
    t1_sequence, thermal_populations, wavelength_to_ghz,
)

COMPOUND2 = (-3.7, 0.0, 3.7)


def closed_form_n0(R, g, k):
    # pump |0> only with uniform branching: n_d = n0 (1 + R / (3 g)), n_e = R n0 / k, sum = 1
    return 1.0 / (1 + 2 * (1 + R / (3 * g)) + R / k)


def test_wavelength_conversion():
    assert wavelength_to_ghz(1016.0) == pytest.approx(295071.3, abs=0.1)


def test_model_validation():
    with pytest.raises(ValueError):
        OpticsModel(R0=-1)
    with pytest.raises(ValueError):
        OpticsModel(branching=(0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        OpticsModel(mw_pair=("0", "0"))
    with pytest.raises(ValueError):
        EnsembleSpec(gamma_inh=0)


def test_line_positions_and_antiholes():
    m = OpticsModel(energies=COMPOUND2)
    assert m.line_positions() == pytest.approx([0.0, -3.7, -7.4])
    assert anti_hole_positions(m) == pytest.approx([-7.4, -3.7, -3.7, 3.7, 3.7, 7.4])


# ---------------------------------------------------------------- transients


def test_zero_pump_keeps_populations():
    m = OpticsModel(R0=0.0)
    tr = evolve_populations(m, [Segment(100.0)], dt=0.1)
    assert np.allclose(tr.populations, thermal_populations(), atol=1e-14)


@given(st.floats(0.001, 0.5), st.floats(0.1, 20), st.floats(10, 1e4),
       st.lists(st.floats(0.05, 1), min_size=3, max_size=3))
@settings(max_examples=25)
def test_population_conservation(R0, gamma_h, T1, b):
    b = np.array(b) / np.sum(b)
    m = OpticsModel(energies=COMPOUND2, R0=R0, gamma_h=gamma_h, T1=T1, branching=tuple(b), k_mw=0.1)
    sched = [Segment(30.0), Segment(20.0, (), mw=True), Segment(30.0, (0.0, -3.7))]
    tr = evolve_populations(m, sched, dt=0.05)
    assert np.max(np.abs(tr.populations.sum(axis=1) - 1)) < 1e-9
    assert tr.populations.min() > -1e-9


def test_monotone_pumping_without_relaxation():
    m = OpticsModel(energies=COMPOUND2, gamma_h=0.5, T1=np.inf)
    tr = pulse_transient(m, duration=500.0)
    assert np.all(np.diff(tr.pl) <= 1e-15)
    assert tr.populations[-1, 0] < 0.01


def test_transient_contrast_closed_form():
    R, k, T1 = 0.02, 1.0, 1210.0
    m = OpticsModel(energies=COMPOUND2, R0=R, k_dec=k, T1=T1, gamma_h=1e-3)
    tr = pulse_transient(m, duration=2000.0, dt=0.1)
    n0 = closed_form_n0(R, 1 / (3 * T1), k)
    assert tr.contrast() == pytest.approx(1 - 3 * n0, rel=1e-4)
    assert steady_state(generator(m, [R, 0.0, 0.0]))[0] == pytest.approx(n0, rel=1e-12)
    # the Lorentzian tails of the other lines shift n_0 only slightly
    assert steady_state(generator(m, m.pump_rates((0.0,))))[0] == pytest.approx(n0, rel=1e-5)


def test_step_too_large():
    with pytest.raises(ValueError, match="exceeds"):
        evolve_populations(OpticsModel(R0=1.0), [Segment(10.0)], dt=1.0)


def test_relaxation_rate_is_inverse_T1():
    T1 = 250.0
    m = OpticsModel(T1=T1)
    tr = evolve_populations(m, [Segment(3000.0, ())], dt=0.1, n0=[1.0, 0, 0, 0])
    f = lambda t, a, rate: a * np.exp(-rate * t)
    (a, rate), _ = curve_fit(f, tr.times, tr.populations[:, 0] - 1 / 3, p0=(0.5, 1e-3))
    assert rate == pytest.approx(1 / T1, rel=0.01)
    assert tr.populations[-1, :3] == pytest.approx([1 / 3] * 3, abs=1e-5)


def test_contrast_monotone_in_linewidth():
    c = [pulse_transient(OpticsModel(energies=COMPOUND2, gamma_h=g), 2000.0).contrast() for g in (10.0, 3.0, 1.0)]
    assert c[0] <= c[1] <= c[2]


# ---------------------------------------------------------------- pulsed ODMR


def test_odmr_off_resonance_zero():
    sp = pulsed_odmr_contrast(OpticsModel(energies=COMPOUND2), [20.0, 50.0])
    assert np.all(np.abs(sp.y) < 1e-4)


def test_odmr_peaks_at_level_differences():
    f = np.linspace(0, 10, 201)
    sp = pulsed_odmr_contrast(OpticsModel(energies=COMPOUND2), f)
    peaks = [f[i] for i in range(1, 200) if sp.y[i] > sp.y[i - 1] and sp.y[i] > sp.y[i + 1] and sp.y[i] > 0.1]
    assert peaks == pytest.approx([3.7, 7.4], abs=1e-9)


def test_odmr_contrast_bookkeeping():
    # at 3.7 GHz the (0,-) then (-,+) swaps leave n_0 = n_d; a short read sees n_d/n_0 - 1 = R/(3g)
    R, T1 = 0.02, 1210.0
    m = OpticsModel(energies=COMPOUND2, R0=R, T1=T1, gamma_h=1e-3)
    sp = pulsed_odmr_contrast(m, [3.7], init=20000.0, read=1e-5, mw_linewidth=1e-3)
    assert sp.y[0] == pytest.approx(R / (3 / (3 * T1)), rel=1e-3)


def test_mw_transfer_is_stochastic():
    T = mw_transfer(OpticsModel(energies=COMPOUND2), 3.72, 0.1)
    assert np.allclose(T.sum(axis=0), 1) and np.all(T >= 0)


# ---------------------------------------------------------------- T1 sequence


def test_t1_recovery_1_21_ms():
    m = OpticsModel(energies=COMPOUND2, T1=1210.0)
    res = t1_sequence(m, np.linspace(0, 6000, 31))
    assert res.T1 == pytest.approx(1210.0, rel=0.02)
    assert res.flags == ["1 wait(s) shorter than 10/k_dec left out of the fit"]
    assert res.to_csv().split("\n")[0] == "wait_us,PL,T1_fit_us"


def test_t1_infinite_is_flat():
    res = t1_sequence(OpticsModel(energies=COMPOUND2, T1=np.inf), np.linspace(0, 6000, 11))
    assert np.isinf(res.T1) and "flat recovery: no relaxation observed" in res.flags
    assert np.ptp(res.pl[1:]) <= 1e-9 * res.pl.max()


def test_t1_ordering_and_short_grid_flag():
    waits = np.linspace(0, 2500, 26)
    short = t1_sequence(OpticsModel(energies=COMPOUND2, T1=100.0), waits)
    long = t1_sequence(OpticsModel(energies=COMPOUND2, T1=1000.0), waits)
    assert short.T1 < long.T1
    assert "wait grid shorter than 3 T1" in long.flags
    assert "wait grid shorter than 3 T1" not in short.flags


# ---------------------------------------------------------------- hole burning


def weak_model(gamma_h=3.0):
    return OpticsModel(energies=COMPOUND2, R0=1e-5, gamma_h=gamma_h)


def holeburn(model, df, ensemble=None):
    ens = ensemble or EnsembleSpec()
    return hole_burning_spectrum(model, ens, ens.center, df)


def test_antiholes_positions_and_width():
    df = np.linspace(-20, 20, 401)
    sp = holeburn(weak_model(3.0), df)
    exc = sp.extra["PL_2tone_excess"]
    fit = fit_lineshape(df, exc, centers=[-7.4, -3.7, 0.0, 3.7, 7.4], fwhm0=6.0)
    centers = [p["center"] for p in fit.peaks]
    assert centers == pytest.approx([-7.4, -3.7, 0.0, 3.7, 7.4], abs=0.05)
    amps = [p["amplitude"] for p in fit.peaks]
    assert amps[2] < 0 and all(a > 0 for a in amps[:2] + amps[3:])
    for k in (0, 1, 3, 4):
        assert fit.peaks[k]["fwhm"] == pytest.approx(6.0, rel=0.10)


def test_lorentzian_convolution_oracle():
    # the two-tone overlap of a Lorentzian laser line with a Lorentzian homogeneous line has twice the FWHM
    x = np.linspace(-400, 400, 160001)
    dx = x[1] - x[0]
    conv = np.convolve(lorentzian(x, 3.0), lorentzian(x, 3.0), mode="same") * dx
    sel = np.abs(x) < 30
    fit = fit_lineshape(x[sel], conv[sel], baseline=False)
    assert fit.peaks[0]["fwhm"] == pytest.approx(6.0, rel=1e-3)


def test_far_detuning_at_baseline():
    m = weak_model(1.0)
    df = np.array([-80.0, -60.0, 0.0, 60.0, 80.0])
    exc = holeburn(m, df).extra["PL_2tone_excess"]
    assert np.max(np.abs(exc[[0, 1, 3, 4]])) < 1e-3 * abs(exc[2])


def test_flat_ensemble_symmetry():
    ens = EnsembleSpec(gamma_inh=5000.0, samples=10001, shape="flat")
    df = np.linspace(-10, 10, 11)
    sp = hole_burning_spectrum(weak_model(3.0), ens, ens.center, df)
    for y in (sp.y, sp.extra["PL_2tone_excess"]):
        assert np.max(np.abs(y - y[::-1])) <= 1e-6 * np.max(np.abs(y))


def test_few_samples_warning():
    with pytest.warns(RuntimeWarning, match="ensemble samples"):
        sp = holeburn(weak_model(), np.linspace(-1, 1, 3), EnsembleSpec(samples=50))
    assert "warning" in sp.meta


def test_differential_odmr_columns():
    m = OpticsModel(energies=COMPOUND2, R0=1e-3, k_mw=0.01, mw_pair=("0", "+"), T1=np.inf)
    sp = hole_burning_spectrum(m, EnsembleSpec(samples=201), EnsembleSpec().center,
                               np.linspace(-10, 10, 21), mw=True)
    assert np.allclose(sp.extra["dODMR"], sp.extra["PL_mw"] - sp.y)
    assert sp.to_csv().split("\n")[0] == "df_GHz,PL,PL_2tone_excess,PL_mw,dODMR"


def test_steady_state_needs_relaxation():
    with pytest.raises(ValueError):
        holeburn(OpticsModel(T1=np.inf), [0.0])
