"""Rate-equation model of the spin-optical interface.

Three ground sublevels (tags |0>, |->, |+>) and one excited singlet. Laser
tones pump each sublevel with a Lorentzian (homogeneous FWHM ``gamma_h``) in
its own optical detuning; the excited state decays with rate ``k_dec`` and
branching fractions ``branching``; spin-lattice relaxation connects every
sublevel pair with rate 1/(3 T1), so that a population imbalance relaxes at
1/T1. Photoluminescence is the total excitation rate sum_s R_s n_s (unit
radiative yield).

Rates in 1/us, frequencies and detunings in GHz, times in us.
"""

import csv
import io
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from scipy.optimize import curve_fit

from .spin import LABELS

SPEED_OF_LIGHT_NM_GHZ = 299792458.0  # nm * GHz
MIN_ENSEMBLE_SAMPLES = 200
PAIR_ORDER = (("0", "-"), ("0", "+"), ("-", "+"))
ES_WINDOW = 10.0  # excited-state lifetimes excluded from T1 fits


def wavelength_to_ghz(nm):
    return SPEED_OF_LIGHT_NM_GHZ / nm


def lorentzian(x, fwhm):
    """Peak-normalized Lorentzian."""
    hw = fwhm / 2
    return hw**2 / (np.asarray(x) ** 2 + hw**2)


@dataclass(frozen=True)
class OpticsModel:
    """Rate constants of the four-level optical pumping model.

    ``energies`` are ground sublevel energies (GHz) in tag order. Sublevel
    s has its optical line at ``line_offset - (E_s - E_0)`` relative to the
    laser reference. The default rates are order-of-magnitude placeholders.
    """

    energies: tuple = (-3.7, 0.0, 3.7)
    R0: float = 0.02
    gamma_h: float = 3.0
    k_dec: float = 1.0
    branching: tuple = (1 / 3, 1 / 3, 1 / 3)
    T1: float = 1210.0
    k_mw: float = 0.0
    mw_pair: tuple = ("0", "-")
    line_offset: float = 0.0

    def __post_init__(self):
        for name in ("R0", "gamma_h", "k_dec", "T1", "k_mw"):
            v = getattr(self, name)
            if not v >= 0:
                raise ValueError(f"{name} must be non-negative, got {v}")
        if not self.gamma_h > 0:
            raise ValueError("gamma_h must be positive")
        b = np.asarray(self.branching, dtype=float)
        if len(b) != 3 or np.any(b < 0) or abs(b.sum() - 1) > 1e-12:
            raise ValueError(f"branching must be 3 non-negative fractions summing to 1, got {self.branching}")
        if len(self.energies) != 3:
            raise ValueError("energies must hold 3 values")
        a, c = self.mw_pair
        if a == c or a not in LABELS or c not in LABELS:
            raise ValueError(f"mw_pair must be two distinct tags from {LABELS}")
        object.__setattr__(self, "energies", tuple(float(e) for e in self.energies))
        object.__setattr__(self, "branching", tuple(float(x) for x in b))

    @classmethod
    def from_levels(cls, levelset, **kw):
        return cls(energies=tuple(levelset.energies), **kw)

    @property
    def relax_pair_rate(self):
        return 0.0 if np.isinf(self.T1) else 1.0 / (3.0 * self.T1)

    def line_positions(self, delta=0.0):
        """Optical line of each sublevel relative to the laser reference (GHz)."""
        e = np.asarray(self.energies)
        return self.line_offset + np.asarray(delta)[..., None] - (e - e[0])

    def pump_rates(self, tones, delta=0.0):
        """Pump rate of each sublevel for laser tones (GHz detunings); shape (..., 3)."""
        lines = self.line_positions(delta)
        rates = np.zeros(np.shape(lines))
        for f in np.atleast_1d(tones):
            rates = rates + self.R0 * lorentzian(f - lines, self.gamma_h)
        return rates

    def splittings(self):
        e = np.asarray(self.energies)
        idx = {l: i for i, l in enumerate(LABELS)}
        return {p: abs(e[idx[p[1]]] - e[idx[p[0]]]) for p in PAIR_ORDER}


def generator(model, rates, mw=False):
    """Rate matrix M (..., 4, 4) with dn/dt = M n, n = (n_0, n_-, n_+, n_e)."""
    rates = np.asarray(rates, dtype=float)
    shape = rates.shape[:-1]
    M = np.zeros(shape + (4, 4))
    g = model.relax_pair_rate
    for s in range(3):
        M[..., s, s] -= rates[..., s]
        M[..., 3, s] += rates[..., s]
        M[..., s, 3] += model.branching[s] * model.k_dec
        for t in range(3):
            if t != s:
                M[..., s, t] += g
                M[..., s, s] -= g
    M[..., 3, 3] -= model.k_dec
    if mw and model.k_mw > 0:
        a, b = (LABELS.index(x) for x in model.mw_pair)
        for s, t in ((a, b), (b, a)):
            M[..., s, t] += model.k_mw
            M[..., t, t] -= model.k_mw
    return M


def thermal_populations():
    """Equal ground populations: kT at 4 K (~83 GHz) far exceeds the splittings."""
    return np.array([1 / 3, 1 / 3, 1 / 3, 0.0])


@dataclass
class Segment:
    """Constant-drive interval of a schedule: laser tones (GHz detunings) and MW on/off."""

    duration: float
    tones: tuple = (0.0,)
    mw: bool = False


@dataclass
class Trace:
    times: np.ndarray
    populations: np.ndarray  # (T, 4)
    pl: np.ndarray

    def contrast(self):
        """(PL_init - PL_final) / PL_init."""
        return (self.pl[0] - self.pl[-1]) / self.pl[0]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_us", "n_0", "n_minus", "n_plus", "n_e", "PL"])
        for t, n, p in zip(self.times, self.populations, self.pl):
            w.writerow([repr(float(t)), *(repr(float(x)) for x in n), repr(float(p))])
        return buf.getvalue()


def _check(n, where):
    if np.any(n < -1e-9):
        raise FloatingPointError(f"negative population {n.min():.3e} at {where}; step too large")
    if abs(n.sum() - 1) > 1e-9:
        raise FloatingPointError(f"population not conserved ({n.sum() - 1:.3e}) at {where}")


def evolve_populations(model, schedule, dt, n0=None):
    """Population and PL traces over a piecewise-constant schedule.

    Each segment is stepped with the exact propagator expm(M dt). ``dt``
    must not exceed 0.1 / (largest rate). Segment durations are rounded to a
    whole number of steps.
    """
    n = thermal_populations() if n0 is None else np.asarray(n0, dtype=float).copy()
    times, pops, pls = [0.0], [n.copy()], []
    t = 0.0
    first_rates = None
    for seg in schedule:
        rates = model.pump_rates(seg.tones) if seg.tones else np.zeros(3)
        M = generator(model, rates, seg.mw)
        max_rate = np.max(np.abs(np.diag(M)))
        if max_rate > 0 and dt > 0.1 / max_rate * (1 + 1e-12):
            raise ValueError(f"dt={dt} exceeds 0.1/max rate = {0.1 / max_rate:.4g} us")
        if first_rates is None:
            first_rates = rates
            pls.append(float(rates @ n[:3]))
        steps = int(round(seg.duration / dt))
        P = scipy.linalg.expm(M * dt)
        for _ in range(steps):
            n = P @ n
            t += dt
            _check(n, f"t={t:.6g} us")
            times.append(t)
            pops.append(n.copy())
            pls.append(float(rates @ n[:3]))
    if first_rates is None:
        pls.append(0.0)
    return Trace(np.array(times), np.array(pops), np.array(pls))


def pulse_transient(model, duration=2000.0, dt=None, tones=(0.0,)):
    """Single laser pulse from thermal populations (PL-transient contrast)."""
    if dt is None:
        rates = model.pump_rates(tones)
        dt = 0.1 / np.max(np.abs(np.diag(generator(model, rates))))
    return evolve_populations(model, [Segment(duration, tuple(tones))], dt)


def steady_state(M):
    """Stationary populations of rate matrices (..., 4, 4) with sum(n) = 1."""
    A = np.array(M, dtype=float)
    A[..., -1, :] = 1.0
    rhs = np.zeros(A.shape[:-1])
    rhs[..., -1] = 1.0
    return np.linalg.solve(A, rhs[..., None])[..., 0]


def _evolve(M, n, t):
    return scipy.linalg.expm(M * t) @ n


def _integrated(M, n, t):
    """(n(t), integral_0^t n(s) ds) via the augmented-matrix exponential."""
    Z = np.zeros((8, 8))
    Z[:4, :4] = M
    Z[4:, :4] = np.eye(4)
    E = scipy.linalg.expm(Z * t)
    return E[:4, :4] @ n, E[4:, :4] @ n


def mw_transfer(model, f_mw, linewidth):
    """Population transfer of an ideal MW pi pulse at ``f_mw`` (GHz).

    Each pair in the fixed order (0,-), (0,+), (-,+) is partially swapped with
    probability equal to a peak-normalized Lorentzian in the MW detuning.
    """
    T = np.eye(4)
    split = model.splittings()
    for a, b in PAIR_ORDER:
        p = float(lorentzian(f_mw - split[(a, b)], linewidth))
        i, j = LABELS.index(a), LABELS.index(b)
        S = np.eye(4)
        S[i, i] = S[j, j] = 1 - p
        S[i, j] = S[j, i] = p
        T = S @ T
    return T


@dataclass
class Spectrum:
    x: np.ndarray
    y: np.ndarray
    columns: tuple = ("x", "y")
    extra: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(self.columns) + list(self.extra))
        cols = [self.x, self.y] + [np.asarray(v) for v in self.extra.values()]
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def pulsed_odmr_contrast(model, mw_freqs, init=2000.0, read=50.0, mw_linewidth=0.1, tones=(0.0,)):
    """Pulsed ODMR: init pulse, MW pi pulse, integrated readout.

    Contrast = (PL_mw - PL_no_mw) / PL_no_mw of the integrated readout PL.
    """
    rates = model.pump_rates(tones)
    M = generator(model, rates)
    n_init = _evolve(M, thermal_populations(), init)
    _, ref = _integrated(M, n_init, read)
    pl_off = rates @ ref[:3]
    out = []
    for f in np.atleast_1d(mw_freqs):
        n = mw_transfer(model, f, mw_linewidth) @ n_init
        _, integ = _integrated(M, n, read)
        out.append((rates @ integ[:3] - pl_off) / pl_off)
    return Spectrum(np.asarray(mw_freqs, dtype=float), np.array(out), ("f_mw_GHz", "contrast"),
                    meta={"PL_no_mw": float(pl_off), "init_us": init, "read_us": read})


@dataclass
class T1Result:
    waits: np.ndarray
    pl: np.ndarray
    T1: float
    cov: np.ndarray = None
    flags: list = field(default_factory=list)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["wait_us", "PL", "T1_fit_us"])
        for t, p in zip(self.waits, self.pl):
            w.writerow([repr(float(t)), repr(float(p)), repr(float(self.T1))])
        return buf.getvalue()


def _recovery(t, c, b, T1):
    return c - b * np.exp(-t / T1)


def t1_sequence(model, waits, init=2000.0, read=50.0, tones=(0.0,)):
    """All-optical T1: init pulse, dark wait, integrated readout; single-exponential fit."""
    waits = np.asarray(waits, dtype=float)
    rates = model.pump_rates(tones)
    M = generator(model, rates)
    M_dark = generator(model, np.zeros(3))
    n_init = _evolve(M, thermal_populations(), init)
    pl = []
    for T in waits:
        n = _evolve(M_dark, n_init, T)
        _, integ = _integrated(M, n, read)
        pl.append(rates @ integ[:3])
    pl = np.array(pl)
    flags = []
    # waits inside the excited-state decay carry a transient unrelated to T1
    use = waits >= ES_WINDOW / model.k_dec if model.k_dec > 0 else np.ones(len(waits), bool)
    if use.sum() < 3:
        use[:] = True
    elif not use.all():
        flags.append(f"{int((~use).sum())} wait(s) shorter than {ES_WINDOW:g}/k_dec left out of the fit")
    t, y = waits[use], pl[use]
    if np.ptp(y) <= 1e-9 * np.max(np.abs(y)):
        return T1Result(waits, pl, float("inf"), None, flags + ["flat recovery: no relaxation observed"])
    if waits.max() < 3 * model.T1:
        flags.append("wait grid shorter than 3 T1")
    guess = (y[-1], y[-1] - y[0], max(t.max() / 3, 1e-9))
    try:
        p, cov = curve_fit(_recovery, t, y, p0=guess, maxfev=20000)
        T1 = float(p[2])
    except RuntimeError as exc:
        return T1Result(waits, pl, float("nan"), None, flags + [f"fit failed: {exc}"])
    if waits.max() < 3 * T1 and "wait grid shorter than 3 T1" not in flags:
        flags.append("wait grid shorter than 3 T1")
    return T1Result(waits, pl, T1, cov, flags)


@dataclass(frozen=True)
class EnsembleSpec:
    """Inhomogeneous distribution of optical line offsets.

    ``shape`` "gaussian" uses FWHM ``gamma_inh``; "flat" is uniform over a
    full width ``gamma_inh`` (translation-symmetric limit).
    """

    center: float = wavelength_to_ghz(1016.0)
    gamma_inh: float = 50.0
    samples: int = 801
    shape: str = "gaussian"

    def __post_init__(self):
        if not self.gamma_inh > 0:
            raise ValueError("gamma_inh must be positive")
        if self.shape not in ("gaussian", "flat"):
            raise ValueError(f"shape must be 'gaussian' or 'flat', got {self.shape!r}")
        if self.samples < 2:
            raise ValueError("need at least 2 ensemble samples")

    def grid(self):
        """Member offsets (GHz, relative to ``center``) and normalized weights."""
        if self.shape == "gaussian":
            sigma = self.gamma_inh / (2 * np.sqrt(2 * np.log(2)))
            d = np.linspace(-5 * sigma, 5 * sigma, self.samples)
            w = np.exp(-0.5 * (d / sigma) ** 2)
        else:
            d = np.linspace(-self.gamma_inh / 2, self.gamma_inh / 2, self.samples)
            w = np.ones_like(d)
        return d, w / w.sum()


def hole_burning_spectrum(model, ensemble, f_L, df_grid, mw=False):
    """Two-tone steady-state PL over the ensemble versus the second tone's detuning.

    ``f_L`` is the fixed tone (absolute GHz) and ``df_grid`` the detunings
    of the swept tone. Returns a :class:`Spectrum` with PL (MW off) as ``y``
    and ``PL_2tone_excess`` = PL minus the two single-tone PLs, which removes
    the linear inhomogeneous background and leaves the hole (negative, at 0)
    and the anti-holes (positive, at the ground splittings). When ``mw`` is True, the ``PL_mw`` and ``dODMR`` (= PL_mw - PL) columns
    use the model's ``k_mw`` drive on ``mw_pair``.
    """
    if np.isinf(model.T1) and not (mw and model.k_mw > 0):
        raise ValueError("steady state needs finite T1 (or an MW drive)")
    df = np.asarray(df_grid, dtype=float)
    d, w = ensemble.grid()
    meta = {"samples": int(ensemble.samples), "shape": ensemble.shape}
    if ensemble.samples < MIN_ENSEMBLE_SAMPLES:
        meta["warning"] = f"only {ensemble.samples} ensemble samples (< {MIN_ENSEMBLE_SAMPLES})"
        warnings.warn(meta["warning"], RuntimeWarning, stacklevel=2)
    f0 = f_L - ensemble.center
    # rates[j, k, s]: member j, swept detuning k, sublevel s
    lines = model.line_positions(d)[:, None, :]
    tone1 = lorentzian(f0 - lines, model.gamma_h)
    tone2 = lorentzian(f0 + df[None, :, None] - lines, model.gamma_h)
    rates = model.R0 * (tone1 + tone2)

    def pl_for(r, mw_on):
        out = np.zeros(r.shape[1])
        for j in range(len(d)):  # fixed member order
            n = steady_state(generator(model, r[j], mw_on))
            out += w[j] * np.einsum("ks,ks->k", r[j], n[:, :3])
        return out

    pl = pl_for(rates, False)
    single = pl_for(model.R0 * tone1, False)[0] + pl_for(model.R0 * tone2, False)
    extra = {"PL_2tone_excess": pl - single}
    if mw:
        pl_mw = pl_for(rates, True)
        extra.update({"PL_mw": pl_mw, "dODMR": pl_mw - pl})
    return Spectrum(df, pl, ("df_GHz", "PL"), extra, meta)


def anti_hole_positions(model):
    """Expected anti-hole detunings: plus and minus every ground splitting, ascending."""
    s = sorted(model.splittings().values())
    return np.array(sorted([-x for x in s] + s))
