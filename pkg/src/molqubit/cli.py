"""Command-line entry point.

    molqubit [--config FILE] [--section.key=value ...] COMMAND [options]

Commands: validate, levels, odmr-map, bath, coherence, sweep,
optics {pulse,odmr,t1,holeburn}. Outputs go to ``output.directory`` (or the
directory named by the MOLQUBIT_OUTPUT_DIR environment variable), each set
with a ``manifest_<command>.json``.
"""

import argparse
import dataclasses
import re
import sys
import time

import numpy as np

from . import __version__
from . import bath as bathmod
from . import optics
from .analysis import fit_lineshape, sweep_T2
from .config import OUTPUT_ENV, SECTIONS, ConfigError, crystal_path, load_config, overrides_path
from .records import OutputSet, csv_text, json_text
from .spin import PAIR_NAMES, levels, transition_map

OVERRIDE_RE = re.compile(r"^--(seed|[a-z_]+\.[A-Za-z0-9_]+)=(.*)$", re.S)


def _override_help():
    lines = ["config overrides (--section.key=value, value parsed as JSON when possible):", "  --seed=INT"]
    for name, cls in SECTIONS.items():
        keys = ", ".join(f.name for f in dataclasses.fields(cls))
        lines.append(f"  --{name}.{{{keys}}}")
    lines.append(f"environment: {OUTPUT_ENV} overrides output.directory")
    return "\n".join(lines)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="JSON config file (defaults apply when omitted)")
    p = argparse.ArgumentParser(prog="molqubit", description=__doc__.split("\n\n")[0],
                                epilog=_override_help(), parents=[common],
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"molqubit {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    kw = dict(parents=[common], epilog=_override_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub.add_parser("validate", help="check the config and print the resolved values", **kw)
    sub.add_parser("levels", help="sublevel energies along field.grid", **kw)
    sub.add_parser("odmr-map", help="transition frequencies and field derivatives along field.grid", **kw)
    sub.add_parser("bath", help="generate the nuclear bath and export it", **kw)
    sub.add_parser("coherence", help="gCCE Hahn-echo coherence and T2 fit", **kw)
    sw = sub.add_parser("sweep", help="T2 versus E, B or r_bath", **kw)
    sw.add_argument("--var", required=True, choices=["E", "B", "r_bath"])
    sw.add_argument("--grid", required=True, help="comma-separated ascending values")
    op = sub.add_parser("optics", help="rate-equation optics simulations", **kw)
    op.add_argument("mode", choices=["pulse", "odmr", "t1", "holeburn"])
    return p


def split_overrides(argv):
    """Separate ``--section.key=value`` / ``--seed=N`` items from ordinary arguments."""
    rest, over = [], []
    for a in argv:
        m = OVERRIDE_RE.match(a)
        if m:
            over.append(f"{m.group(1)}={m.group(2)}")
        else:
            rest.append(a)
    return rest, over


def _say(msg):
    print(msg, flush=True)


def _system(cfg):
    from .pipeline import build_system

    return build_system(cfg)


def cmd_validate(cfg, args, out):
    _say(json_text(cfg.to_dict()).rstrip())
    _say("config OK")
    return 0


def cmd_levels(cfg, args, out):
    tab = transition_map(_system(cfg), cfg.field.unit_axis, cfg.field.b_grid)
    rows = [[b, *e] for b, e in zip(tab.b, tab.energies)]
    out.add("levels.csv", csv_text(["B_mT", "E0_GHz", "Eminus_GHz", "Eplus_GHz"], rows))
    _say(f"wrote levels.csv ({len(rows)} fields)")
    return 0


def cmd_odmr_map(cfg, args, out):
    tab = transition_map(_system(cfg), cfg.field.unit_axis, cfg.field.b_grid)
    header = ["B_mT"] + [f"f{p}_GHz" for p in PAIR_NAMES]
    cols = [tab.b[:, None], tab.freqs]
    if tab.d1 is not None:
        header += [f"df{p}_dB" for p in PAIR_NAMES] + [f"d2f{p}_dB2" for p in PAIR_NAMES]
        cols += [tab.d1, tab.d2]
    rows = np.hstack(cols)
    out.add("odmr_map.csv", csv_text(header, rows))
    for f in tab.flags:
        _say(f"flag: {f}")
    _say(f"wrote odmr_map.csv ({len(rows)} fields)")
    return 0


def cmd_bath(cfg, args, out):
    from .pipeline import build_bath

    t0 = time.perf_counter()
    b = build_bath(cfg)
    out.timings["bath"] = time.perf_counter() - t0
    out.add("bath.csv", bathmod.bath_to_csv(b))
    out.extra["bath"] = {"n_spins": len(b), "n_pairs": int(len(b.pairs)),
                         **{k: v for k, v in b.meta.items() if not k.startswith("_")}}
    _say(f"wrote bath.csv ({len(b)} spins, {len(b.pairs)} pairs within r_dipole)")
    return 0


def _fit_dict(fit):
    return {"T2_us": fit.T2, "n": fit.n, "amplitude": fit.amplitude, "residual": fit.residual,
            "status": fit.status, "flags": fit.flags,
            "cov_logT2_n_A": None if fit.cov is None else np.asarray(fit.cov).tolist()}


def cmd_coherence(cfg, args, out):
    from .pipeline import build_bath, run_coherence

    t0 = time.perf_counter()
    b = build_bath(cfg)
    out.timings["bath"] = time.perf_counter() - t0
    out.add("bath.csv", bathmod.bath_to_csv(b))
    t0 = time.perf_counter()
    res = run_coherence(cfg, bath=b)
    out.timings["coherence"] = time.perf_counter() - t0
    c = res.curve
    rows = [[t, l.real, l.imag, abs(l)] for t, l in zip(c.times, c.L)]
    out.add("coherence.csv", csv_text(["two_tau_us", "Re_L", "Im_L", "abs_L"], rows))
    prov = {k: v for k, v in c.provenance.items() if k != "wall_time_s"}
    meta = {"seed": c.seed, "mode": c.mode, "N_mc": c.n_mc, "r_bath_nm": cfg.bath.r_bath,
            "r_dipole_nm": cfg.bath.r_dipole, **prov, "tau_extensions": res.extensions,
            "flags": res.flags, "fit": _fit_dict(res.fit)}
    out.add("coherence_meta.json", json_text(meta))
    out.add("t2_fit.csv", csv_text(["T2_us", "n", "residual", "status", "flags"],
                                   [[res.fit.T2, res.fit.n, res.fit.residual, res.fit.status,
                                     ";".join(res.flags)]]))
    if res.fit.status == "no decay":
        _say(f"T2: no decay (lower bound {res.fit.T2:.6g} us)")
    else:
        _say(f"T2 = {res.fit.T2:.6g} us, n = {res.fit.n:.4g} ({res.fit.status})")
    for f in res.flags:
        _say(f"flag: {f}")
    return 0


def cmd_sweep(cfg, args, out):
    try:
        grid = [float(x) for x in args.grid.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--grid: expected comma-separated numbers, got {args.grid!r}") from None
    t0 = time.perf_counter()
    res = sweep_T2(cfg, args.var, grid)
    out.timings["sweep"] = time.perf_counter() - t0
    for k, p in enumerate(res.points):
        _say(f"[{k}] {args.var}={p.value:g}: T2={p.fit.T2:.6g} us n={p.fit.n:.4g} {p.fit.status}")
    out.add(f"sweep_{args.var}.csv", res.to_csv())
    return 0


def optics_model(cfg):
    o = cfg.optics
    lv = levels(_system(cfg), cfg.field.vector)
    return optics.OpticsModel(energies=tuple(lv.energies), R0=o.R0, gamma_h=o.gamma_h, k_dec=o.k_dec,
                              branching=tuple(o.branching), T1=o.T1, k_mw=o.k_mw,
                              mw_pair=tuple(o.mw_pair), line_offset=0.0)


def cmd_optics(cfg, args, out):
    from .config import resolve_grid

    o = cfg.optics
    model = optics_model(cfg)
    t0 = time.perf_counter()
    if args.mode == "pulse":
        tr = optics.pulse_transient(model, o.pulse, tones=(o.laser,))
        stride = max(1, (len(tr.times) - 1) // 2000)
        sel = np.r_[0:len(tr.times):stride, len(tr.times) - 1]
        sel = np.unique(sel)
        out.add("pulse.csv", optics.Trace(tr.times[sel], tr.populations[sel], tr.pl[sel]).to_csv())
        _say(f"PL transient contrast = {tr.contrast():.6g}")
        out.extra["pl_contrast"] = tr.contrast()
    elif args.mode == "odmr":
        sp = optics.pulsed_odmr_contrast(model, resolve_grid(o.mw_grid), o.init, o.read, o.mw_linewidth,
                                         tones=(o.laser,))
        out.add("pulsed_odmr.csv", sp.to_csv())
        k = int(np.argmax(np.abs(sp.y)))
        _say(f"max |contrast| = {sp.y[k]:.6g} at {sp.x[k]:.6g} GHz")
    elif args.mode == "t1":
        r = optics.t1_sequence(model, resolve_grid(o.t1_waits), o.init, o.read, tones=(o.laser,))
        out.add("t1.csv", r.to_csv())
        _say(f"T1 fit = {r.T1:.6g} us")
        for f in r.flags:
            _say(f"flag: {f}")
    else:
        ens = optics.EnsembleSpec(optics.wavelength_to_ghz(o.zpl_nm), o.gamma_inh, o.ensemble_samples,
                                  o.ensemble_shape)
        df = resolve_grid(o.df_grid)
        # weak pumping keeps the features free of power broadening
        model = dataclasses.replace(model, R0=o.holeburn_R0)
        sp = optics.hole_burning_spectrum(model, ens, ens.center + o.laser, df, mw=o.k_mw > 0)
        out.add("holeburn.csv", sp.to_csv())
        report = {"meta": sp.meta, "expected_anti_holes_GHz": optics.anti_hole_positions(model).tolist()}
        centers = sorted(set(np.round(np.r_[0.0, optics.anti_hole_positions(model)], 9)))
        centers = [c for c in centers if df.min() <= c <= df.max()]
        y = sp.extra["PL_2tone_excess"]
        scale = np.max(np.abs(y)) or 1.0
        try:
            fit = fit_lineshape(df, y / scale, "lorentzian", centers=centers, fwhm0=2 * o.gamma_h)
            report["features"] = [{"center_GHz": pk["center"], "fwhm_GHz": pk["fwhm"],
                                   "amplitude": pk["amplitude"] * scale,
                                   "kind": "hole" if pk["amplitude"] < 0 else "anti-hole"}
                                  for pk in fit.peaks]
            for f in report["features"]:
                _say(f"{f['kind']}: {f['center_GHz']:+.4f} GHz, FWHM {f['fwhm_GHz']:.4f} GHz")
        except (ValueError, RuntimeError) as exc:
            report["fit_error"] = str(exc)
            _say(f"flag: line-shape fit failed: {exc}")
        out.add("holeburn_fit.json", json_text(report))
        if "warning" in sp.meta:
            _say(f"flag: {sp.meta['warning']}")
    out.timings["optics"] = time.perf_counter() - t0
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "levels": cmd_levels,
    "odmr-map": cmd_odmr_map,
    "bath": cmd_bath,
    "coherence": cmd_coherence,
    "sweep": cmd_sweep,
    "optics": cmd_optics,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    rest, over = split_overrides(argv)
    parser = build_parser()
    args = parser.parse_args(rest)
    try:
        cfg = load_config(args.config, over)
    except ConfigError as exc:
        print(f"molqubit: error: {exc}", file=sys.stderr)
        return 1
    name = args.command + (f" {args.mode}" if args.command == "optics" else "")
    if args.command == "sweep":
        name += f" {args.var}"
    inputs = [args.config]
    if args.command in ("bath", "coherence", "sweep"):
        inputs += [crystal_path(cfg), overrides_path(cfg)]
    out = OutputSet(cfg.output_dir, name, cfg, inputs)
    try:
        code = COMMANDS[args.command](cfg, args, out)
    except (ValueError, FloatingPointError) as exc:
        print(f"molqubit: error: {exc}", file=sys.stderr)
        code = 1
    if args.command != "validate" and out.files:
        out.extra["exit_code"] = code
        out.finish()
    return code


if __name__ == "__main__":
    sys.exit(main())
