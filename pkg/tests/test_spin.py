import numpy as np
import pytest
import scipy.constants as sc
import scipy.linalg
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from molqubit.spin import (
    LABELS, SpinSystem, build_hamiltonian, clock_figure, diagonalize, levels, spin_matrices,
    track_levels, transition_map, zero_field_levels,
)

# independent oracle for the electron gyromagnetic ratio: e hbar / (2 m_e) / h
MU_B_OVER_H_GHZ_PER_MT = sc.e * sc.hbar / (2 * sc.m_e) / sc.h * 1e-12
GAMMA_E = 2.0023 * MU_B_OVER_H_GHZ_PER_MT

Ds = st.floats(0.5, 10.0)
frac = st.floats(0.0, 1.0)
angles = st.tuples(*[st.floats(-np.pi, np.pi)] * 3)
fields = st.tuples(*[st.floats(-300, 300)] * 3)


def test_gamma_e_constant():
    assert GAMMA_E == pytest.approx(0.0280247, abs=1e-7)
    assert SpinSystem(1.0, 0.0, g=2.0023).gamma_e == pytest.approx(GAMMA_E, rel=1e-9)


def test_spin_matrices_commutators():
    for s in (0.5, 1, 1.5):
        x, y, z = spin_matrices(s)
        assert np.allclose(x @ y - y @ x, 1j * z)
        assert np.allclose(x @ x + y @ y + z @ z, s * (s + 1) * np.eye(int(2 * s + 1)))


def test_compound2_spectrum():
    w = np.linalg.eigvalsh(build_hamiltonian(SpinSystem(5.55, 1.85), [0, 0, 0]))
    assert np.allclose(w, [-3.70, 0.0, 3.70], atol=1e-9)


def test_zero_hamiltonian():
    assert np.all(build_hamiltonian(SpinSystem(0.0, 0.0), [0, 0, 0]) == 0)


def test_zeeman_split_compound1():
    sys_ = SpinSystem(3.63, 0.0, g=2.0023)
    lv = levels(sys_, [0, 0, 100.0])
    split = lv.energy("+") - lv.energy("-")
    assert split == pytest.approx(2 * 100.0 * GAMMA_E, rel=1e-9)
    assert split == pytest.approx(2 * 2.8025, abs=1e-3)


def test_traceless():
    h = build_hamiltonian(SpinSystem(5.55, 1.85, frame=(0.3, 1.1, -0.4)), [3.0, -20.0, 7.0])
    assert abs(np.trace(h)) < 1e-12


def test_invalid_system():
    with pytest.raises(ValueError):
        SpinSystem(3.0, 1.5)
    with pytest.raises(ValueError):
        SpinSystem(3.0, 0.5, g=0.0)
    with pytest.raises(ValueError):
        build_hamiltonian(SpinSystem(3.0, 0.5), [np.nan, 0, 0])


def test_diagonalize_labels_compound2():
    lv = zero_field_levels(SpinSystem(5.55, 1.85))
    assert lv.labels == LABELS
    assert lv.energy("0") == pytest.approx(-3.70, abs=1e-9)
    assert lv.energy("-") == pytest.approx(0.0, abs=1e-9)
    assert lv.energy("+") == pytest.approx(3.70, abs=1e-9)


def test_diagonalize_zero_matrix_canonical():
    lv = diagonalize(np.zeros((3, 3)))
    assert np.allclose(lv.energies, 0)
    assert np.allclose(lv.vectors, np.eye(3))


def test_diagonalize_rejects_non_hermitian():
    h = np.zeros((3, 3), dtype=complex)
    h[0, 1] = 1e-6
    with pytest.raises(ValueError, match="Hermitian"):
        diagonalize(h)


def test_gauge_largest_component_real_nonnegative():
    lv = levels(SpinSystem(5.55, 1.85, frame=(0.2, 0.9, 1.3)), [5.0, 3.0, -8.0])
    for k in range(3):
        v = lv.vectors[:, k]
        j = np.argmax(np.abs(v))
        assert abs(v[j].imag) < 1e-12 and v[j].real > 0


@given(st.integers(0, 2**31 - 1))
def test_random_hermitian_reconstruction(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    h = a + a.conj().T
    lv = diagonalize(h)
    V = lv.vectors
    assert np.max(np.abs(V.conj().T @ V - np.eye(3))) < 1e-12
    assert np.max(np.abs(V @ np.diag(lv.energies) @ V.conj().T - h)) < 1e-10
    assert np.all(np.diff(lv.energies) >= 0)


def test_transition_map_compound2_zero_field():
    tab = transition_map(SpinSystem(5.55, 1.85), [0, 0, 1], [0.0, 0.5, 1.0])
    f = tab.freqs[0]
    assert np.allclose(sorted(f), [3.70, 3.70, 7.40], atol=1e-9)
    assert f[0] == pytest.approx(f[2], abs=1e-9)  # 0->- and ->+ degenerate
    assert np.all(tab.freqs >= 0)


def test_transition_map_linear_zeeman_compound1():
    tab = transition_map(SpinSystem(3.63, 0.0), [0, 0, 1], np.linspace(0, 2, 21))
    assert tab.d1[1, 0] == pytest.approx(-GAMMA_E, abs=1e-6)
    assert tab.d1[1, 1] == pytest.approx(GAMMA_E, abs=1e-6)
    assert abs(tab.d1[1, 0]) == pytest.approx(0.0280, abs=3e-4)


def test_transition_map_clock_slope():
    tab = transition_map(SpinSystem(5.55, 1.85), [0, 0, 1], np.linspace(-2, 2, 41))
    assert np.all(np.abs(tab.d1[20]) < 1e-4)


def test_transition_map_short_grid_flagged():
    tab = transition_map(SpinSystem(5.55, 1.85), [0, 0, 1], [0.0, 1.0])
    assert tab.d1 is None and tab.d2 is None and tab.flags


def test_transition_map_requires_ascending():
    with pytest.raises(ValueError):
        transition_map(SpinSystem(5.55, 1.85), [0, 0, 1], [1.0, 0.0, 2.0])


def test_clock_curvature_matches_perturbation():
    # along z the |-> and |+> pair obeys D/3 -/+ sqrt(E^2 + (gamma B)^2) while |0> stays at -2D/3,
    # so f01 = D - sqrt(E^2 + gamma^2 B^2) and its curvature at B=0 is -gamma^2 / E
    s = SpinSystem(5.55, 1.85, g=2.0023)
    cf = clock_figure(s, [0, 0, 1])
    assert cf.regime == "quadratic" and cf.step == 0.1
    assert cf.values["01"] == pytest.approx(-GAMMA_E**2 / 1.85, rel=1e-4)
    # cross-check with direct diagonalization at +-0.1, +-0.2 mT
    f = [np.ptp(np.linalg.eigvalsh(build_hamiltonian(s, [0, 0, b]))[:2]) for b in (-0.2, -0.1, 0, 0.1, 0.2)]
    stencil = (-f[4] + 16 * f[3] - 30 * f[2] + 16 * f[1] - f[0]) / (12 * 0.1**2)
    assert cf.values["01"] == pytest.approx(stencil, rel=1e-6)


def test_clock_linear_regime_for_e_zero():
    cf = clock_figure(SpinSystem(3.63, 0.0, g=2.0023), [0, 0, 1])
    assert cf.regime == "linear regime"
    assert abs(cf.values["01"]) == pytest.approx(0.0280, abs=3e-4)
    assert abs(cf.values["02"]) == pytest.approx(GAMMA_E, rel=1e-6)


def test_clock_anisotropy():
    s = SpinSystem(5.55, 1.85)
    cz = clock_figure(s, [0, 0, 1]).values
    cx = clock_figure(s, [1, 0, 0]).values
    assert all(np.isfinite(v) for v in list(cz.values()) + list(cx.values()))
    assert not np.allclose(list(cz.values()), list(cx.values()))


# ---------------------------------------------------------------- properties


@given(Ds, frac, angles, fields)
def test_hermiticity(D, f, ang, b):
    h = build_hamiltonian(SpinSystem(D, f * D / 3, frame=ang), b)
    assert np.max(np.abs(h - h.conj().T)) < 1e-14


@given(Ds, frac, angles)
def test_zero_field_analytic_spectrum(D, f, ang):
    E = f * D / 3
    w = np.linalg.eigvalsh(build_hamiltonian(SpinSystem(D, E, frame=ang), [0, 0, 0]))
    assert np.allclose(w, sorted([-2 * D / 3, D / 3 - E, D / 3 + E]), atol=1e-9)


@given(Ds, frac, angles, fields)
def test_zeeman_parity(D, f, ang, b):
    s = SpinSystem(D, f * D / 3, frame=ang)
    w1 = np.linalg.eigvalsh(build_hamiltonian(s, b))
    w2 = np.linalg.eigvalsh(build_hamiltonian(s, -np.asarray(b)))
    assert np.allclose(w1, w2, atol=1e-12)


@given(Ds, frac, angles, fields)
def test_frame_invariance(D, f, ang, b):
    E = f * D / 3
    rot = Rotation.from_euler("ZYZ", ang).as_matrix()
    w_mol = np.linalg.eigvalsh(build_hamiltonian(SpinSystem(D, E), b))
    w_lab = np.linalg.eigvalsh(build_hamiltonian(SpinSystem(D, E, frame=ang), rot @ np.asarray(b)))
    assert np.allclose(w_mol, w_lab, atol=1e-12)


@given(Ds, st.floats(0.1, 1.0), st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda a: np.linalg.norm(a) > 0.1))
def test_label_continuity(D, f, axis):
    s = SpinSystem(D, f * D / 3)
    bs = np.arange(0.0, 31.0, 1.0)
    lvls = track_levels(s, axis, bs[1:], start=zero_field_levels(s, axis))
    lvls = [zero_field_levels(s, axis)] + lvls
    for a, b in zip(lvls[:-1], lvls[1:]):
        gaps = np.min(np.abs(np.subtract.outer(b.energies, b.energies)) + np.eye(3) * 1e9)
        if gaps < 0.05:  # skip near crossings
            continue
        ov = np.abs(np.einsum("ak,ak->k", a.vectors.conj(), b.vectors))
        assert np.all(ov > 0.9)


def test_propagator_convention_larmor():
    # exp(-i 2 pi H t): a superposition of |m=+1> and |m=0> precesses at f = gamma_e B (GHz, t in ns)
    s = SpinSystem(0.0, 0.0, g=2.0023)
    B = 10.0
    h = build_hamiltonian(s, [0, 0, B])
    psi = np.array([1, 1, 0], dtype=complex) / np.sqrt(2)
    t = 0.37  # ns
    out = scipy.linalg.expm(-2j * np.pi * h * t) @ psi
    phase = np.angle(out[1] / out[0])
    expected = np.angle(np.exp(2j * np.pi * GAMMA_E * B * t))
    assert phase == pytest.approx(expected, abs=1e-9)
