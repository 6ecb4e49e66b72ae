"""Config-driven assembly: system, bath, coherence run with T2 fit."""

from dataclasses import dataclass, field

import numpy as np

from . import bath as bathmod
from .analysis import fit_stretched_exp
from .cce import EchoProtocol, gcce_coherence, resolve_qubit
from .config import crystal_path, overrides_path
from .spin import SpinSystem

EXTEND_FACTOR = 4.0


def build_system(cfg):
    s = cfg.system
    return SpinSystem(D=s.D, E=s.E, g=s.g, frame=tuple(s.frame))


def build_bath(cfg):
    spec = bathmod.load_crystal(crystal_path(cfg))
    b = bathmod.generate_bath(spec, cfg.bath.r_bath, cfg.seed_for("bath"), cfg.bath.r_dipole,
                              cfg.system.g, cfg.bath.max_spins)
    ov = overrides_path(cfg)
    if ov is not None:
        b = bathmod.apply_hyperfine_overrides(b, bathmod.load_overrides(ov))
    return b


@dataclass
class CoherenceResult:
    curve: object
    fit: object
    flags: list = field(default_factory=list)
    extensions: int = 0


def _decayed(curve):
    return np.any(np.abs(curve.L) < 1 / np.e)


def run_coherence(cfg, bath=None, workers=None):
    """gCCE echo + stretched-exponential fit.

    When |L| never drops below 1/e, the tau grid is stretched by 4x and the run
    repeated, at most ``cce.auto_extend`` times.
    """
    system = build_system(cfg)
    if bath is None:
        bath = build_bath(cfg)
    fvec = cfg.field.vector
    qubit = resolve_qubit(system, fvec, tuple(cfg.cce.qubit))
    tau = cfg.cce.tau_grid
    if tau[0] != 0:
        tau = np.concatenate([[0.0], tau])
    w = cfg.cce.workers if workers is None else workers
    flags = []
    ext = 0
    while True:
        curve = gcce_coherence(system, fvec, bath, qubit, EchoProtocol(tau), cfg.cce.max_order,
                               cfg.cce.mode, cfg.cce.n_mc, cfg.seed_for("cce"), cfg.bath.r_dipole,
                               cfg.cce.mf_axis, workers=w)
        if len(bath) == 0 or _decayed(curve) or ext >= cfg.cce.auto_extend:
            break
        tau = tau * EXTEND_FACTOR
        ext += 1
    if ext:
        flags.append(f"tau grid extended x{EXTEND_FACTOR ** ext:g}")
    if curve.provenance.get("skipped_divisors"):
        flags.append(f"{curve.provenance['skipped_divisors']} small divisors skipped")
    masked = curve.provenance.get("masked_samples") or []
    if any(masked):
        flags.append(f"up to {max(masked)} of {curve.n_mc} samples masked per time point")
    try:
        fit = fit_stretched_exp(curve, envelope=cfg.cce.fit == "envelope")
    except ValueError as exc:
        from .analysis import StretchedExpFit

        fit = StretchedExpFit(float("nan"), float("nan"), float("nan"), float("nan"), None,
                              "failed", [str(exc)])
    if fit.status != "ok":
        flags.append(fit.status)
    return CoherenceResult(curve, fit, flags + list(fit.flags), ext)
