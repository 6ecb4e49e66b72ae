"""T2 extraction, parameter sweeps and spectral line-shape fits."""

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks, peak_widths

N_BOUNDS = (0.5, 4.0)
NO_DECAY_LEVEL = 0.9


@dataclass
class StretchedExpFit:
    """|L| = amplitude * exp[-(t / T2)^n]; T2 is the 1/e time of the model, in us.

    ``status`` is "ok", "no decay" (``T2`` then holds a lower bound) or "failed".
    """

    T2: float
    n: float
    amplitude: float
    residual: float
    cov: np.ndarray = None
    status: str = "ok"
    flags: list = field(default_factory=list)

    @property
    def ok(self):
        return self.status == "ok"


def _model(t, T2, n, A=1.0):
    return A * np.exp(-((t / T2) ** n))


def _one_over_e_time(t, y):
    """Linear interpolation of the first crossing of y(0)/e; falls back to the last time."""
    target = y[0] / np.e if y[0] > 0 else 1 / np.e
    below = np.flatnonzero(y <= target)
    if len(below) == 0:
        # extrapolate from the decay so far
        frac = -np.log(max(y[-1] / max(y[0], 1e-12), 1e-12))
        return t[-1] / max(frac, 1e-3)
    k = below[0]
    if k == 0:
        return max(t[0], t[1] * 0.5)
    t0, t1, y0, y1 = t[k - 1], t[k], y[k - 1], y[k]
    return t0 + (target - y0) * (t1 - t0) / (y1 - y0) if y1 != y0 else t1


def upper_envelope(y):
    """Smallest non-increasing sequence lying on or above ``y`` (running max from the end)."""
    return np.maximum.accumulate(np.asarray(y)[::-1])[::-1]


def fit_stretched_exp(curve, values=None, envelope=False):
    """Fit |L(t)| with a stretched exponential.

    ``curve`` is a :class:`~molqubit.cce.CoherenceCurve` or an array of times
    (then ``values`` holds |L|). Coarse grid over (T2, n) with the amplitude
    solved linearly, then bounded least-squares refinement. With
    ``envelope=True`` the fit targets :func:`upper_envelope` of |L|, which
    bridges echo-envelope modulation dips; monotone curves are unaffected.
    """
    if values is None:
        t = np.asarray(curve.times, dtype=float)
        y = np.abs(np.asarray(curve.L))
    else:
        t = np.asarray(curve, dtype=float)
        y = np.abs(np.asarray(values, dtype=float))
    if envelope:
        y = upper_envelope(y)
    keep = t > 0
    t, y = t[keep], y[keep]
    if len(t) < 6:
        raise ValueError(f"need at least 6 points with t > 0, got {len(t)}")
    if np.any(y > 1.1) or not np.all(np.isfinite(y)):
        raise ValueError("|L| values must be finite and lie in [0, 1.1]")
    if np.all(y >= NO_DECAY_LEVEL):
        # any n in bounds reaching |L| = 0.9 only after t_max implies this bound
        lb = t[-1] / (-np.log(NO_DECAY_LEVEL)) ** (1 / N_BOUNDS[1])
        return StretchedExpFit(lb, float("nan"), float(np.mean(y)), float("nan"), None,
                               "no decay", [f"|L| >= {NO_DECAY_LEVEL} throughout; T2 is a lower bound"])
    te = _one_over_e_time(t, y)
    T2s = np.geomspace(0.1 * te, 10 * te, 40)
    ns = np.linspace(*N_BOUNDS, 15)
    f = np.exp(-((t[None, None, :] / T2s[:, None, None]) ** ns[None, :, None]))
    ff = np.sum(f * f, axis=-1)
    A = np.where(ff > 0, np.sum(f * y, axis=-1) / np.where(ff > 0, ff, 1), 0)
    res = np.sum((A[..., None] * f - y) ** 2, axis=-1)
    i, j = np.unravel_index(np.argmin(res), res.shape)
    x0 = np.array([np.log(T2s[i]), ns[j], A[i, j]])

    def resid(p):
        return _model(t, np.exp(p[0]), p[1], p[2]) - y

    lo = [np.log(T2s[0]) - 5, N_BOUNDS[0], 0.0]
    hi = [np.log(T2s[-1]) + 5, N_BOUNDS[1], 2.0]
    x0 = np.clip(x0, lo, hi)
    try:
        sol = least_squares(resid, x0, bounds=(lo, hi), method="trf", xtol=1e-14, ftol=1e-14,
                            gtol=1e-14, max_nfev=2000)
    except Exception as exc:  # pragma: no cover - scipy failure modes
        return StretchedExpFit(float(np.exp(x0[0])), float(x0[1]), float(x0[2]),
                               float(np.sqrt(res[i, j] / len(t))), None, "failed", [str(exc)])
    p = sol.x if sol.cost <= 0.5 * res[i, j] + 1e-300 else x0
    r = resid(p)
    rms = float(np.sqrt(np.mean(r**2)))
    cov = None
    jac = sol.jac
    dof = max(len(t) - 3, 1)
    try:
        cov = np.linalg.pinv(jac.T @ jac) * (2 * sol.cost / dof)
    except np.linalg.LinAlgError:
        pass
    flags = []
    if p[1] <= N_BOUNDS[0] + 1e-9 or p[1] >= N_BOUNDS[1] - 1e-9:
        flags.append("stretch exponent at bound")
    if np.exp(p[0]) > 3 * t[-1]:
        flags.append("T2 beyond sampled time range")
    return StretchedExpFit(float(np.exp(p[0])), float(p[1]), float(p[2]), rms, cov, "ok", flags)


# ---------------------------------------------------------------- sweeps


@dataclass
class SweepPoint:
    value: float
    fit: StretchedExpFit
    curve: object = None
    flags: list = field(default_factory=list)


@dataclass
class SweepResult:
    variable: str
    points: list

    @property
    def values(self):
        return np.array([p.value for p in self.points])

    @property
    def T2(self):
        return np.array([p.fit.T2 for p in self.points])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variable", "value", "T2_us", "n", "residual", "flags"])
        for p in self.points:
            flags = [p.fit.status] if p.fit.status != "ok" else []
            flags += p.fit.flags + p.flags
            w.writerow([self.variable, repr(float(p.value)), repr(float(p.fit.T2)), repr(float(p.fit.n)),
                        repr(float(p.fit.residual)), ";".join(flags)])
        return buf.getvalue()


SWEEP_VARIABLES = ("E", "B", "r_bath")


def sweep_T2(config, variable, grid, workers=1):
    """One coherence run and stretched-exponential fit per grid point.

    ``variable`` is "E" (GHz), "B" (field magnitude, mT, along the configured
    axis) or "r_bath" (nm). The bath is generated once from the configured
    seed and reused for E and B sweeps; it is regenerated for r_bath sweeps.
    Points whose fit fails are flagged and the sweep continues.
    """
    from . import pipeline

    if variable not in SWEEP_VARIABLES:
        raise ValueError(f"unknown sweep variable {variable!r}; choose from {SWEEP_VARIABLES}")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("sweep grid must be a non-empty ascending sequence")
    bath = None if variable == "r_bath" else pipeline.build_bath(config)

    def run(value):
        cfg = config
        if variable == "E":
            cfg = replace(config, system=replace(config.system, E=float(value)))
        elif variable == "B":
            cfg = replace(config, field=replace(config.field, magnitude=float(value)))
        else:
            cfg = replace(config, bath=replace(config.bath, r_bath=float(value)))
        flags = []
        try:
            res = pipeline.run_coherence(cfg, bath=bath, workers=workers)
        except ValueError as exc:
            fit = StretchedExpFit(float("nan"), float("nan"), float("nan"), float("nan"), None,
                                  "failed", [str(exc)])
            return SweepPoint(float(value), fit, None, ["run failed"])
        flags += res.flags
        return SweepPoint(float(value), res.fit, res.curve, flags)

    return SweepResult(variable, [run(v) for v in grid])


def plateau_onset(values, T2, rel=0.05):
    """First grid value after which every successive T2 change stays below ``rel``."""
    values = np.asarray(values, dtype=float)
    T2 = np.asarray(T2, dtype=float)
    change = np.abs(np.diff(T2)) / np.abs(T2[:-1])
    for k in range(len(change)):
        if np.all(change[k:] < rel):
            return float(values[k]), change
    return None, change


# ---------------------------------------------------------------- line shapes


def _peak(x, center, fwhm, amp, model):
    if model == "gaussian":
        return amp * np.exp(-4 * np.log(2) * (x - center) ** 2 / fwhm**2)
    if model == "lorentzian":
        return amp * (fwhm / 2) ** 2 / ((x - center) ** 2 + (fwhm / 2) ** 2)
    raise ValueError(f"model must be 'gaussian' or 'lorentzian', got {model!r}")


@dataclass
class LineshapeFit:
    model: str
    peaks: list  # dicts with center, fwhm, amplitude
    baseline: float
    residual: float

    def to_dict(self):
        return {"model": self.model, "baseline": self.baseline, "residual": self.residual,
                "peaks": self.peaks}


def fit_lineshape(x, y, model="lorentzian", n_peaks=1, baseline=True, centers=None, fwhm0=None):
    """Least-squares fit of ``n_peaks`` Gaussian or Lorentzian peaks plus optional constant.

    Peaks are initialized from the most prominent local maxima, in order of
    position. Raises ValueError listing the candidates when fewer maxima than
    ``n_peaks`` are found. Passing ``centers`` (and optionally ``fwhm0``)
    replaces detection; amplitudes may then take either sign, which allows
    overlapping holes and peaks to be fitted together.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _peak(0.0, 0.0, 1.0, 1.0, model)  # validate model
    if centers is not None:
        centers = [float(c) for c in centers]
        n_peaks = len(centers)
    if n_peaks < 1:
        raise ValueError("n_peaks must be >= 1")
    span = np.ptp(y)
    p0 = []
    if centers is not None:
        base0 = float(np.median(y)) if baseline else 0.0
        w0 = fwhm0 if fwhm0 is not None else (x[-1] - x[0]) / (4 * n_peaks)
        for c in centers:
            p0 += [c, w0, float(np.interp(c, x, y)) - base0]
    else:
        base0 = float(np.min(y)) if baseline else 0.0
        cand, props = find_peaks(y, prominence=0.02 * span if span > 0 else np.inf)
        if len(cand) < n_peaks:
            found = [(float(x[c]), float(y[c])) for c in cand]
            raise ValueError(f"found {len(cand)} local maxima, need {n_peaks}; candidates (x, y): {found}")
        top = np.sort(cand[np.argsort(props["prominences"])[::-1][:n_peaks]])
        widths = peak_widths(y, top, rel_height=0.5)[0]
        dx = np.gradient(x)[top]
        for c, w, d in zip(top, widths, dx):
            p0 += [x[c], max(w * abs(d), abs(d)), y[c] - base0]
    if baseline:
        p0.append(base0)

    def total(p):
        out = np.full_like(x, p[-1] if baseline else 0.0)
        for k in range(n_peaks):
            out += _peak(x, p[3 * k], abs(p[3 * k + 1]), p[3 * k + 2], model)
        return out

    sol = least_squares(lambda p: total(p) - y, np.array(p0), method="lm", xtol=1e-14,
                        ftol=1e-14, gtol=1e-14, max_nfev=20000)
    p = sol.x
    peaks = [{"center": float(p[3 * k]), "fwhm": float(abs(p[3 * k + 1])), "amplitude": float(p[3 * k + 2])}
             for k in range(n_peaks)]
    rms = float(np.sqrt(np.mean((total(p) - y) ** 2)))
    return LineshapeFit(model, peaks, float(p[-1]) if baseline else 0.0, rms)
