"""Batch driver: staircase-lab <command> --config <file> [--out DIR] [--key value ...]

Commands
    staircase     exact + quadrature (+ binomial) staircases over a tau sweep
    collapse      rescaled truncation-error table (tau and/or hopping mode)
    sample-sweep  integrated sampling error across a shot-budget list
    smooth        sampled bias/variance trade-off with window smoothing
    stability     truncation thresholds, flagged intervals, oscillation scores
    model-info    spectrum summary and levels.csv

Each run writes its artifacts plus a manifest.txt echoing the resolved
configuration (itself a valid config file).  Exit codes: 0 ok, 1 config
error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import shutil
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, analysis, itqde, sampling, smoothing
from .config import ConfigError, RunConfig, config_hash, load_config, resolve, write_manifest
from .exact_filter import (
    default_lambda_grid,
    staircase_exact,
    write_staircase_csv,
)
from .model import ModelError, SpectrumModel, build_fermi_hubbard, diagonalize

MAX_WORKERS = 4


class NumericalFailure(RuntimeError):
    pass


def _spectrum_for(rc: RunConfig) -> SpectrumModel:
    if rc.lattice is not None:
        return diagonalize(build_fermi_hubbard(rc.lattice, dim_cap=rc.dim_cap))
    return rc.spectrum()


def _grid_for(rc: RunConfig, spec: SpectrumModel, tau: float) -> np.ndarray:
    if rc.grid_min is not None and rc.grid_max is not None:
        return np.linspace(rc.grid_min, rc.grid_max, rc.grid_points)
    return default_lambda_grid(spec, tau, rc.grid_points)


def _rule_for(rc: RunConfig, spec: SpectrumModel, tau: float,
              mbar: int | None = None,
              lambdas: np.ndarray | None = None) -> itqde.QuadratureRule:
    if rc.quad_m is not None:
        m = rc.quad_m
    else:
        # degree large enough that the rule resolves the worst |E_j - lambda|
        # over the probe grid (the e/2 threshold of the asymptotic bound)
        if lambdas is not None and len(lambdas):
            d_max = max(spec.e_max - float(np.min(lambdas)),
                        float(np.max(lambdas)) - spec.e_min)
        else:
            d_max = spec.e_max - spec.e_min
        s_grid = max(tau * d_max ** 2, 1.0)
        m = min(math.ceil(1.4 * s_grid) + 8, itqde.MAX_DEGREE)
    rule = itqde.gauss_hermite_rule(m, tau=tau)
    if mbar is not None:
        return itqde.truncate_rule(rule, mbar=mbar)
    if rc.quad_epsilon is not None:
        return itqde.truncate_rule(rule, epsilon=rc.quad_epsilon)
    if rc.quad_mbars:
        return itqde.truncate_rule(rule, mbar=rc.quad_mbars[0])
    return rule


def _write_levels_csv(path, spec: SpectrumModel) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["E", "g", "p"])
        for e, g, p in zip(spec.levels, spec.degeneracies, spec.populations):
            wr.writerow([repr(float(e)), int(g), repr(float(p))])


def _write_plateaux_csv(path, plateaux) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["E_estimate", "lambda_lo", "lambda_hi", "width"])
        for p in plateaux:
            wr.writerow([repr(p.energy), repr(p.lambda_lo), repr(p.lambda_hi), repr(p.width)])


def cmd_model_info(rc: RunConfig, outdir: Path) -> None:
    spec = _spectrum_for(rc)
    _write_levels_csv(outdir / "levels.csv", spec)
    lines = [
        f"dim = {spec.dim}",
        f"distinct_levels = {len(spec.levels)}",
        f"e_min = {spec.e_min!r}",
        f"e_max = {spec.e_max!r}",
        f"spectral_norm = {spec.spectral_norm!r}",
        f"mode = {spec.mode}",
    ]
    (outdir / "model_info.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))


def cmd_staircase(rc: RunConfig, outdir: Path) -> None:
    spec = _spectrum_for(rc)
    exact_curves, quad_curves, binom_curves = [], [], []
    for i, tau in enumerate(rc.taus):
        lam = _grid_for(rc, spec, tau)
        exact_curves.append(staircase_exact(spec, tau, lam))
        if tau > 0:
            rule = _rule_for(rc, spec, tau, lambdas=lam)
            ov = itqde.compute_overlaps(spec, rule)
            itqde.write_overlap_csv(outdir / f"overlaps_tau{i}.csv", ov)
            quad_curves.append(itqde.staircase_quadrature(ov, rule, lam))
            if rc.binomial_dtau is not None:
                binom_curves.append(itqde.staircase_binomial(spec, tau, rc.binomial_dtau, lam))
    write_staircase_csv(outdir / "staircase_exact.csv", exact_curves)
    if quad_curves:
        write_staircase_csv(outdir / "staircase_quadrature.csv", quad_curves)
    if binom_curves:
        write_staircase_csv(outdir / "staircase_binomial.csv", binom_curves)
    _write_levels_csv(outdir / "levels.csv", spec)
    plateaux = analysis.extract_plateaux(exact_curves[-1])
    _write_plateaux_csv(outdir / "plateaux.csv", plateaux)


def cmd_collapse(rc: RunConfig, outdir: Path) -> None:
    if rc.lattice is None:
        raise ConfigError("collapse runs need a lattice model")
    modes = ["tau", "hopping"] if rc.collapse_mode == "both" else [rc.collapse_mode]
    tables = []
    for mode in modes:
        tau0 = None
        if mode == "hopping":
            spec0 = diagonalize(build_fermi_hubbard(rc.lattice, dim_cap=rc.dim_cap))
            tau0 = rc.taus[0] if "tau" in rc.raw else \
                float(np.median(rc.collapse_s)) / spec0.spectral_norm ** 2
        tables.append(analysis.scaling_collapse(
            rc.lattice, rc.collapse_s, rc.collapse_mbar_over_s, mode=mode,
            tau0=tau0, kappa=rc.collapse_kappa, dim_cap=rc.dim_cap))
    with open(outdir / "collapse.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["mode", "s", "mbar", "eps", "eps_pow", "mbar_over_s"])
        for tb in tables:
            for r in tb.rows:
                wr.writerow([r.mode, repr(r.s), r.mbar, repr(r.eps),
                             repr(r.eps_pow), repr(r.mbar_over_s)])
    spreads = ", ".join(f"{tb.mode}: {tb.spread:.3f}" for tb in tables)
    (outdir / "collapse_spread.txt").write_text(spreads + "\n", encoding="utf-8")


def _sample_eps_one(spec, rule, exact, lam, e_lo, e_hi, K, seed):
    ov, _ = sampling.sampled_overlaps(spec, rule, K, seed)
    curve = itqde.staircase_from_overlaps(ov, lam)
    return analysis.integrated_error(exact, curve, lo=e_lo, hi=e_hi).value


def cmd_sample_sweep(rc: RunConfig, outdir: Path) -> None:
    if not rc.sample_ks:
        raise ConfigError("sample-sweep needs sampling.k = [..]")
    spec = _spectrum_for(rc)
    if spec.mode != "trace":
        raise ConfigError("sample-sweep operates on trace-mode spectra")
    rows = []
    for ti, tau in enumerate(rc.taus):
        if tau <= 0:
            raise ConfigError("sample-sweep requires tau > 0")
        lam = _grid_for(rc, spec, tau)
        rule = _rule_for(rc, spec, tau, lambdas=lam)
        exact = staircase_exact(spec, tau, lam)
        jobs = [(K, rep) for K in rc.sample_ks for rep in range(rc.repetitions)]

        def run(job):
            K, rep = job
            seed = (rc.seed + 7919 * ti) ^ (K << 20) ^ rep
            return _sample_eps_one(spec, rule, exact, lam, spec.e_min, spec.e_max, K, seed)

        with ThreadPoolExecutor(max_workers=MAX_WORKERS) as pool:
            eps_vals = list(pool.map(run, jobs))
        for (K, rep), eps in zip(jobs, eps_vals):
            rows.append((tau, K, rep, eps))
        # per-lambda diagnostics at the largest K, first repetition
        k_big = max(rc.sample_ks)
        seed = (rc.seed + 7919 * ti) ^ (k_big << 20)
        ov, _ = sampling.sampled_overlaps(spec, rule, k_big, seed)
        curve = itqde.staircase_from_overlaps(ov, lam)
        stats = sampling.ratio_error_prediction(spec, rule, lam, K=k_big)
        sampling.write_stats_csv(outdir / f"stats_tau{ti}.csv", lam, curve.H_vals,
                                 exact.H_vals, stats,
                                 flagged=stats.flagged | curve.flagged)
    with open(outdir / "sampling_reps.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["tau", "K", "rep", "eps"])
        for tau, K, rep, eps in rows:
            wr.writerow([repr(float(tau)), K, rep, repr(float(eps))])
    with open(outdir / "sampling.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["tau", "K", "eps_mean", "eps_std", "reps"])
        for tau in rc.taus:
            for K in rc.sample_ks:
                vals = np.array([e for t, k, _, e in rows if t == tau and k == K])
                wr.writerow([repr(float(tau)), K, repr(float(vals.mean())),
                             repr(float(vals.std(ddof=1) if len(vals) > 1 else 0.0)),
                             len(vals)])


def cmd_smooth(rc: RunConfig, outdir: Path) -> None:
    if len(rc.taus) < 1:
        raise ConfigError("smooth needs at least one tau")
    if not rc.sample_ks:
        raise ConfigError("smooth needs sampling.k (one entry used)")
    spec = _spectrum_for(rc)
    K = rc.sample_ks[0]
    window = smoothing.SmoothingWindow(width=rc.delta_lambda, kind=rc.window_kind)
    # per-overlap measurement-noise model: additive ~1/sqrt(K) floor on each
    # overlap, the regime where smoothing trades resolution for variance
    sigma = spec.total_weight / math.sqrt(K)
    with open(outdir / "bias_variance.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["lambda", "tau", "H_exact", "H_sampled_mean", "H_sampled_std",
                     "H_smoothed_mean", "H_smoothed_std", "tau_eff", "delta_lambda"])
        for ti, tau in enumerate(rc.taus):
            lam = _grid_for(rc, spec, tau)
            rule = _rule_for(rc, spec, tau, lambdas=lam)
            exact = staircase_exact(spec, tau, lam)
            ov0 = itqde.compute_overlaps(spec, rule)
            raw_h, smooth_h = [], []
            for rep in range(rc.repetitions):
                seed = (rc.seed + 104729 * ti) ^ (K << 20) ^ rep
                ov = sampling.with_measurement_noise(
                    ov0, sigma_z=sigma, sigma_n=sigma * spec.spectral_norm, seed=seed)
                curve = itqde.staircase_from_overlaps(ov, lam)
                raw_h.append(curve.H_vals)
                smooth_h.append(smoothing.convolve(curve, window).H_vals)
            raw = np.array(raw_h)
            smo = np.array(smooth_h)
            tau_eff = smoothing.tau_effective(tau, rc.delta_lambda) \
                if rc.window_kind == "gaussian" else math.nan
            for i in range(len(lam)):
                wr.writerow([
                    repr(float(lam[i])), repr(float(tau)), repr(float(exact.H_vals[i])),
                    repr(float(raw[:, i].mean())), repr(float(raw[:, i].std(ddof=1))),
                    repr(float(smo[:, i].mean())), repr(float(smo[:, i].std(ddof=1))),
                    repr(float(tau_eff)), repr(float(rc.delta_lambda)),
                ])


def cmd_stability(rc: RunConfig, outdir: Path) -> None:
    spec = _spectrum_for(rc)
    mbars = rc.quad_mbars or [None]
    quad_curves = []
    stab_rows = []
    osc_rows = []
    for ti, tau in enumerate(rc.taus):
        if tau <= 0:
            raise ConfigError("stability requires tau > 0")
        lam = _grid_for(rc, spec, tau)
        exact = staircase_exact(spec, tau, lam)
        for mbar in mbars:
            rule = _rule_for(rc, spec, tau, mbar=mbar, lambdas=lam)
            ov = itqde.compute_overlaps(spec, rule)
            curve = itqde.staircase_quadrature(ov, rule, lam)
            quad_curves.append(curve)
            rep = analysis.stability_report(spec, rule, r0=rc.stability_r0, lambdas=lam)
            intervals = rep.unstable_intervals or [(math.nan, math.nan)]
            for lo, hi in intervals:
                stab_rows.append([repr(float(tau)), rule.mbar, repr(rep.r0),
                                  repr(rep.z_epsilon), repr(rep.leading_weight),
                                  repr(rep.tau_epsilon), repr(rep.d_epsilon),
                                  repr(rep.delta_epsilon), repr(rep.delta_epsilon_linear),
                                  repr(float(lo)), repr(float(hi))])
            window_pts = max(3, rc.grid_points // 100)
            osc = analysis.oscillation_diagnostic(curve, window_pts)
            for i in range(len(lam)):
                osc_rows.append([repr(float(lam[i])), repr(float(tau)), rule.mbar,
                                 repr(float(osc.scores[i])), int(bool(osc.over_resolved[i]))])
        write_staircase_csv(outdir / f"staircase_exact_tau{ti}.csv", exact)
    write_staircase_csv(outdir / "staircase_quadrature.csv", quad_curves)
    with open(outdir / "stability.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["tau", "mbar", "r0", "Z_epsilon", "leading_weight", "tau_epsilon",
                     "d_epsilon", "delta_epsilon", "delta_epsilon_linear",
                     "interval_lo", "interval_hi"])
        wr.writerows(stab_rows)
    with open(outdir / "oscillation.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["lambda", "tau", "mbar", "score", "over_resolved"])
        wr.writerows(osc_rows)
    _write_levels_csv(outdir / "levels.csv", spec)


COMMANDS = {
    "staircase": cmd_staircase,
    "collapse": cmd_collapse,
    "sample-sweep": cmd_sample_sweep,
    "smooth": cmd_smooth,
    "stability": cmd_stability,
    "model-info": cmd_model_info,
}


# dedicated spellings for the documented smoothing flags
_FLAG_ALIASES = {
    "--delta-lambda": "smoothing.delta_lambda",
    "--window": "smoothing.window",
}


def _parse_overrides(pairs: list[str]) -> dict:
    import json

    if len(pairs) % 2:
        raise ConfigError(f"dangling override {pairs[-1]!r}; overrides are --key value pairs")
    out = {}
    for flag, val in zip(pairs[0::2], pairs[1::2]):
        if not flag.startswith("--"):
            raise ConfigError(f"override key must start with --, got {flag!r}")
        key = _FLAG_ALIASES.get(flag, flag[2:])
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="staircase-lab",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="key-value config file")
    parser.add_argument("--out", default=None, help="output directory (default: runs/<auto>)")
    args, extra = parser.parse_known_args(argv)
    try:
        cfg = load_config(args.config)
        cfg.update(_parse_overrides(extra))
        rc = resolve(args.command, cfg)
    except (ConfigError, ModelError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if args.out:
        outdir = Path(args.out)
    elif rc.out:
        outdir = Path(rc.out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        outdir = Path("runs") / f"{args.command}-{stamp}-{config_hash(rc, __version__)}"
    created = not outdir.exists()
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        COMMANDS[args.command](rc, outdir)
        write_manifest(outdir / "manifest.txt", rc, __version__)
    except (ConfigError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        if created:
            shutil.rmtree(outdir, ignore_errors=True)
        return 1
    except (NumericalFailure, FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if created:
            shutil.rmtree(outdir, ignore_errors=True)
        return 2
    print(f"wrote {outdir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
