"""Command-line front end: ``thbt sweep | trace | codebook dump | fit-gaussian``.

Exit codes: 0 on success, 1 on a configuration error, 2 on a runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .beamgain import hfbg_grid
from .channel import Sounder, assemble_channel, sample_paths, to_surrogate
from .exceptions import InvalidConfig, THBTError
from .refine1 import build_codebook1, extend_region, region_update1
from .refine2 import build_codebook2
from .refine3 import fit_gaussian, gaussian_fit_grid

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _config(args) -> harness.ExperimentConfig:
    conf = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    changes = {}
    for name in ("trials", "seed", "workers"):
        val = getattr(args, name, None)
        if val is not None:
            changes[name] = val
    return conf.with_(**changes) if changes else conf


def _emit(obj, out):
    text = json.dumps(obj, indent=2, default=harness._json_default) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_sweep(args) -> int:
    conf = _config(args)
    out = args.out or conf.output
    results = harness.run_sweep(conf)
    summary = harness.write_outputs(conf, results, out)
    for row in summary["summary"]:
        print(f"{row['method']:>12s} snr={row['snr_db']:6.2f} dB  xi={row['mean_xi']:.4f}  "
              f"se={row['mean_se_bpshz']:.3f}  overhead={row['mean_overhead']:.1f}")
    print(f"wrote {Path(out) / 'trials.csv'}")
    return EXIT_OK


def cmd_trace(args) -> int:
    conf = _config(args)
    cfg = conf.array
    method = args.method
    if method not in ("thbt-ml", "thbt-psp"):
        raise InvalidConfig("trace supports thbt-ml and thbt-psp")
    snr = conf.snr_db[0] if args.snr is None else args.snr
    paths = sample_paths(cfg, np.random.default_rng(harness.trial_rngs(conf.seed, args.trial)),
                         conf.scenario)
    h = assemble_channel(cfg, paths)
    nv = 0.0 if args.noiseless else harness.noise_var_from_snr(snr, conf.snr_reference, cfg.n_t)
    rng = np.random.default_rng(harness._noise_seed(conf.seed, args.trial, method, snr))
    trace: dict = {}
    est = harness.run_thbt(conf, Sounder(cfg, h, nv, rng), method.split("-")[1], trace)
    truth = [dict(gain=[p.gain.real, p.gain.imag], omega=p.omega, range=p.range,
                  b=to_surrogate(p, cfg.wavelength).b) for p in paths]
    _emit(dict(trial=args.trial, method=method, snr_db=snr, noise_var=nv, paths=truth,
               position_error_m=harness.metric_position(paths, est), trace=trace), args.out)
    return EXIT_OK


def cmd_codebook_dump(args) -> int:
    conf = _config(args)
    cfg, r1, r2 = conf.array, conf.refine1, conf.refine2
    cb1 = build_codebook1(cfg, r1, conf.m1_resolved)
    if not -cb1.m1 <= args.m_bar <= cb1.m1:
        raise InvalidConfig(f"--m-bar must lie in [-{cb1.m1}, {cb1.m1}]")
    region = extend_region(cfg, region_update1(cfg, args.m_bar, r1))
    cb2 = build_codebook2(cfg, args.m_bar, r1, r2, region)
    out = dict(
        n_t=cfg.n_t, b_bar=r1.b_bar, k_tilde1=r1.k_tilde1, theta_bar1=r1.theta_bar1(cfg),
        stage1=dict(m1=cb1.m1, m=cb1.m, theta=cb1.theta, k=cb1.k),
        stage2=dict(m_bar=args.m_bar, theta_bar2=cb2.theta_bar2, m2=cb2.m2, k2=cb2.k2,
                    theta=cb2.theta),
    )
    if args.grid > 0:
        omegas = np.linspace(-1.0, 1.0, args.grid)
        bs = np.linspace(0.0, r1.b_bar, args.grid)
        g1 = np.max([np.abs(hfbg_grid(cfg, (t, k), omegas, bs))
                     for t, k in zip(cb1.theta, cb1.k)], axis=0) / cfg.n_t
        g2 = np.max([np.abs(hfbg_grid(cfg, (t, cb2.k2), omegas, bs))
                     for t in cb2.theta], axis=0) / cfg.n_t
        if args.grid_csv:
            rows = [[float(o), float(b), float(g1[i, j]), float(g2[i, j])]
                    for i, o in enumerate(omegas) for j, b in enumerate(bs)]
            harness.write_csv(args.grid_csv, ("omega", "b", "stage1_max_abs", "stage2_max_abs"), rows)
        else:
            out["gain_grid"] = dict(omega=omegas, b=bs, stage1_max_abs=g1, stage2_max_abs=g2)
    _emit(out, args.out)
    return EXIT_OK


def cmd_fit_gaussian(args) -> int:
    conf = _config(args)
    t_n, k_n = conf.neighbor_steps
    fit = fit_gaussian(conf.array, t_n / 2, k_n / 2, conf.ga_grid)
    path = args.out or conf.ga_fit_cache
    if path:
        harness.save_fit(fit, path)
        print(f"wrote {path}")
    if args.residuals:
        omegas, bs, gain = gaussian_fit_grid(conf.array, t_n / 2, k_n / 2, conf.ga_grid)
        model = fit(omegas[:, None], bs[None, :])
        peak = gain.max()
        rows = [[float(o), float(b), float(gain[i, j]), float(model[i, j]),
                 float((model[i, j] - gain[i, j]) / peak)]
                for i, o in enumerate(omegas) for j, b in enumerate(bs)]
        harness.write_csv(args.residuals, ("d_omega", "d_b", "gain", "model", "residual_frac"), rows)
        print(f"wrote {args.residuals}")
    print(f"amplitude={fit.amplitude:.6g} sigma_angle={fit.sigma_angle:.6g} "
          f"sigma_k={fit.sigma_k:.6g} max_residual={fit.max_residual:.3%} "
          f"mean_residual={fit.mean_residual:.3%}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thbt", description="Hybrid-field beam training simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", nargs="?", help="JSON config file (defaults if omitted)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output path")

    sp = sub.add_parser("sweep", help="Monte Carlo sweep over the configured SNRs")
    common(sp)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--workers", type=int)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("trace", help="dump the intermediates of one seeded trial")
    common(sp)
    sp.add_argument("--trial", type=int, default=0)
    sp.add_argument("--snr", type=float)
    sp.add_argument("--method", default="thbt-ml")
    sp.add_argument("--noiseless", action="store_true")
    sp.set_defaults(func=cmd_trace)

    cb = sub.add_parser("codebook", help="codebook utilities")
    cb_sub = cb.add_subparsers(dest="codebook_command", required=True)
    sp = cb_sub.add_parser("dump", help="stage-1/2 codebook parameters and gain grids")
    common(sp)
    sp.add_argument("--m-bar", type=int, default=0)
    sp.add_argument("--grid", type=int, default=0, help="gain grid size (0 to skip)")
    sp.add_argument("--grid-csv", help="write the gain grid as CSV instead of JSON")
    sp.set_defaults(func=cmd_codebook_dump)

    sp = sub.add_parser("fit-gaussian", help="compute and cache the main-lobe Gaussian fit")
    common(sp)
    sp.add_argument("--residuals", help="CSV path for the residual grid")
    sp.set_defaults(func=cmd_fit_gaussian)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvalidConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (THBTError, ArithmeticError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
