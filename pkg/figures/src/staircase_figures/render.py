"""Figure renderers, one per figure id.

Each renderer takes a run directory produced by the staircase-lab CLI and
writes a single image.  Layouts follow the experiment types: staircase
families with eigenvalue dashes and an inset zoom, collapse overlays on a log
scale, filter/partition illustrations, stability-floor shading, K-scaling
with deviation bands, and bias/variance envelopes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .reading import SchemaError, read_table, run_path, split_curves

STAIRCASE_COLUMNS = ("lambda", "N", "Z", "logZ", "H", "provenance", "tau")

# no-date PNG/SVG metadata so identical inputs give identical bytes
_SAVEFIG_KWARGS = {"dpi": 130, "metadata": {"Software": "staircase-figures"}}


def _save(fig, out_path):
    out = Path(out_path)
    kwargs = dict(_SAVEFIG_KWARGS)
    if out.suffix.lower() == ".svg":
        kwargs["metadata"] = {"Date": None}
    elif out.suffix.lower() == ".pdf":
        kwargs["metadata"] = {"CreationDate": None}
    fig.savefig(out, **kwargs)
    plt.close(fig)


def _eigenvalue_dashes(run_dir):
    """Reference energies from plateaux.csv, falling back to levels.csv."""
    plat = run_path(run_dir, "plateaux.csv")
    if plat.exists():
        t = read_table(plat, ("E_estimate",))
        if len(t["E_estimate"]):
            return np.asarray(t["E_estimate"], dtype=float)
    lev = read_table(run_path(run_dir, "levels.csv"), ("E", "g"))
    return np.asarray(lev["E"], dtype=float)


def render_staircase(run_dir, out_path) -> None:
    exact = split_curves(read_table(run_path(run_dir, "staircase_exact.csv"),
                                    STAIRCASE_COLUMNS))
    quad_file = run_path(run_dir, "staircase_quadrature.csv")
    quads = split_curves(read_table(quad_file, STAIRCASE_COLUMNS)) \
        if quad_file.exists() else []
    binom_file = run_path(run_dir, "staircase_binomial.csv")
    binoms = []
    if binom_file.exists():
        try:
            binoms = split_curves(read_table(binom_file, STAIRCASE_COLUMNS))
        except SchemaError:
            binoms = []  # optional series: an empty file is simply skipped
    energies = _eigenvalue_dashes(run_dir)
    fig, ax = plt.subplots(figsize=(7.0, 4.6))
    colors = plt.cm.viridis(np.linspace(0.15, 0.9, max(len(exact), 1)))
    for c, blk in zip(colors, exact):
        ax.plot(blk["lambda"], blk["H"], color=c, lw=1.6,
                label=f"exact, tau={blk['tau'][0]:g}")
    for blk in quads:
        ax.plot(blk["lambda"], blk["H"], ls="--", lw=1.0, alpha=0.8,
                label=f"quadrature, tau={blk['tau'][0]:g}")
    for blk in binoms:
        ax.plot(blk["lambda"], blk["H"], ls=":", lw=1.0, alpha=0.8,
                label=f"binomial, tau={blk['tau'][0]:g}")
    for e in energies:
        ax.axhline(e, color="k", ls=(0, (4, 3)), lw=0.5, alpha=0.5)
    ax.set_xlabel(r"$\lambda$")
    ax.set_ylabel(r"$H_\tau(\lambda)$")
    ax.legend(fontsize=7, loc="upper left")
    # inset: zoom on one transition of the sharpest curve
    if len(energies) >= 2 and exact:
        mids = 0.5 * (energies[:-1] + energies[1:])
        pick = len(mids) // 2
        c0, c1 = energies[pick], energies[pick + 1]
        blk = exact[-1]
        lam = blk["lambda"]
        sel = (lam >= c0 - 0.2 * (c1 - c0)) & (lam <= c1 + 0.2 * (c1 - c0))
        if sel.sum() > 3:
            axins = ax.inset_axes([0.62, 0.08, 0.34, 0.34])
            for c, b in zip(colors, exact):
                axins.plot(b["lambda"][sel], b["H"][sel], color=c, lw=1.2)
            axins.set_xlim(lam[sel][0], lam[sel][-1])
            axins.tick_params(labelsize=6)
            ax.indicate_inset_zoom(axins, edgecolor="gray")
    _save(fig, out_path)


def render_collapse(run_dir, out_path) -> None:
    t = read_table(run_path(run_dir, "collapse.csv"),
                   ("mode", "s", "mbar", "eps", "eps_pow", "mbar_over_s"))
    modes = sorted(set(t["mode"]))
    fig, axes = plt.subplots(1, len(modes), figsize=(4.4 * len(modes), 3.8),
                             squeeze=False)
    for ax, mode in zip(axes[0], modes):
        sel_mode = t["mode"] == mode
        for s in sorted(set(np.asarray(t["s"], dtype=float)[sel_mode])):
            sel = sel_mode & (np.asarray(t["s"], dtype=float) == s)
            order = np.argsort(t["mbar_over_s"][sel])
            ax.semilogy(t["mbar_over_s"][sel][order], t["eps_pow"][sel][order],
                        marker="o", ms=3, lw=1.2, label=f"s = {s:g}")
        ax.set_xlabel(r"$\bar m / s$")
        ax.set_ylabel(r"$\epsilon^{1/s}$")
        ax.set_title(f"{mode} sweep", fontsize=9)
        ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, out_path)


def render_filtering(run_dir, out_path) -> None:
    lev = read_table(run_path(run_dir, "levels.csv"), ("E", "g"))
    exact = split_curves(read_table(run_path(run_dir, "staircase_exact.csv"),
                                    STAIRCASE_COLUMNS))
    fig, (top, bot) = plt.subplots(2, 1, figsize=(6.6, 5.4), sharex=True)
    energies = np.asarray(lev["E"], dtype=float)
    degs = np.asarray(lev["g"], dtype=float)
    top.stem(energies, degs, basefmt="k-", linefmt="C7-", markerfmt="C7o")
    colors = plt.cm.plasma(np.linspace(0.1, 0.8, max(len(exact), 1)))
    lam_ref = exact[0]["lambda"] if exact else np.linspace(-1, 1, 101)
    center = energies[len(energies) // 2]
    for c, blk in zip(colors, exact):
        tau = blk["tau"][0]
        kernel = degs.max() * np.exp(-tau * (lam_ref - center) ** 2)
        top.plot(lam_ref, kernel, color=c, lw=1.0, alpha=0.7,
                 label=f"kernel width {1/np.sqrt(tau):.2f}")
        bot.semilogy(blk["lambda"], np.exp(blk["logZ"]), color=c, lw=1.4,
                     label=f"tau = {tau:g}")
    top.set_ylabel("g(E) / filter")
    top.legend(fontsize=7)
    bot.set_xlabel(r"$\lambda$")
    bot.set_ylabel(r"$Z_\tau(\lambda)$")
    bot.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, out_path)


def render_floor(run_dir, out_path) -> None:
    stab = read_table(run_path(run_dir, "stability.csv"),
                      ("tau", "mbar", "r0", "Z_epsilon", "interval_lo", "interval_hi"))
    lev = read_table(run_path(run_dir, "levels.csv"), ("E", "g"))
    exact_path = run_path(run_dir, "staircase_exact_tau0.csv")
    if not exact_path.exists():
        exact_path = run_path(run_dir, "staircase_exact.csv")
    exact = split_curves(read_table(exact_path, STAIRCASE_COLUMNS))[0]
    fig, (top, bot) = plt.subplots(2, 1, figsize=(6.6, 5.4), sharex=True)
    top.stem(np.asarray(lev["E"], dtype=float), np.asarray(lev["g"], dtype=float),
             basefmt="k-", linefmt="C0-", markerfmt="C0o")
    top.set_ylabel("g(E)")
    bot.semilogy(exact["lambda"], np.exp(exact["logZ"]), "C0-", lw=1.4,
                 label=rf"$Z_\tau$, tau = {exact['tau'][0]:g}")
    z_eps = float(np.asarray(stab["Z_epsilon"], dtype=float)[0])
    r0 = float(np.asarray(stab["r0"], dtype=float)[0])
    if z_eps > 0:
        bot.axhline(z_eps / r0, color="k", ls="--", lw=1.0,
                    label=r"$Z_\varepsilon / r_0$")
    for lo, hi in zip(np.atleast_1d(stab["interval_lo"]),
                      np.atleast_1d(stab["interval_hi"])):
        lo, hi = float(lo), float(hi)
        if np.isfinite(lo) and np.isfinite(hi):
            for ax in (top, bot):
                ax.axvspan(lo, hi, color="red", alpha=0.18, lw=0)
    bot.set_xlabel(r"$\lambda$")
    bot.set_ylabel(r"$Z_\tau(\lambda)$")
    bot.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, out_path)


def render_sampling(run_dir, out_path) -> None:
    t = read_table(run_path(run_dir, "sampling.csv"),
                   ("tau", "K", "eps_mean", "eps_std", "reps"))
    fig, ax = plt.subplots(figsize=(5.6, 4.2))
    taus = sorted(set(np.asarray(t["tau"], dtype=float)))
    for tau in taus:
        sel = np.asarray(t["tau"], dtype=float) == tau
        k = np.asarray(t["K"], dtype=float)[sel]
        order = np.argsort(k)
        k = k[order]
        mean = t["eps_mean"][sel][order]
        std = t["eps_std"][sel][order]
        line, = ax.loglog(k, mean, marker="o", ms=3.5, lw=1.3, label=f"tau = {tau:g}")
        ax.fill_between(k, np.maximum(mean - std, 1e-300), mean + std,
                        color=line.get_color(), alpha=0.25, lw=0)
    kk = np.array(sorted(set(np.asarray(t["K"], dtype=float))))
    anchor = float(np.max(t["eps_mean"]))
    ax.loglog(kk, anchor * np.sqrt(kk[0] / kk), "k--", lw=0.8,
              label=r"$K^{-1/2}$")
    ax.set_xlabel("shot budget K")
    ax.set_ylabel(r"integrated error $\epsilon$")
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, out_path)


def render_bias(run_dir, out_path) -> None:
    t = read_table(run_path(run_dir, "bias_variance.csv"),
                   ("lambda", "tau", "H_exact", "H_sampled_mean", "H_sampled_std",
                    "H_smoothed_mean", "H_smoothed_std", "tau_eff", "delta_lambda"))
    taus = sorted(set(np.asarray(t["tau"], dtype=float)))
    fig, axes = plt.subplots(1, len(taus), figsize=(4.6 * len(taus), 3.9),
                             squeeze=False, sharey=True)
    for ax, tau in zip(axes[0], taus):
        sel = np.asarray(t["tau"], dtype=float) == tau
        lam = t["lambda"][sel]
        ax.plot(lam, t["H_exact"][sel], "k-", lw=1.1, label="exact")
        ax.plot(lam, t["H_sampled_mean"][sel], "C0-", lw=0.9, label="sampled")
        ax.fill_between(lam, t["H_sampled_mean"][sel] - t["H_sampled_std"][sel],
                        t["H_sampled_mean"][sel] + t["H_sampled_std"][sel],
                        color="C0", alpha=0.2, lw=0)
        ax.plot(lam, t["H_smoothed_mean"][sel], "C3-", lw=1.1, label="smoothed")
        ax.fill_between(lam, t["H_smoothed_mean"][sel] - t["H_smoothed_std"][sel],
                        t["H_smoothed_mean"][sel] + t["H_smoothed_std"][sel],
                        color="C3", alpha=0.25, lw=0)
        dl = float(np.asarray(t["delta_lambda"], dtype=float)[sel][0])
        ax.set_title(rf"$\tau$ = {tau:g}, $\delta\lambda$ = {dl:g}", fontsize=9)
        ax.set_xlabel(r"$\lambda$")
        ax.legend(fontsize=7)
    axes[0][0].set_ylabel(r"$H(\lambda)$")
    fig.tight_layout()
    _save(fig, out_path)


RENDERERS = {
    "staircase": render_staircase,
    "collapse": render_collapse,
    "filtering": render_filtering,
    "floor": render_floor,
    "sampling": render_sampling,
    "bias": render_bias,
}


def render(figure_id: str, run_dir, out_path) -> None:
    try:
        fn = RENDERERS[figure_id]
    except KeyError:
        raise SchemaError(f"unknown figure id {figure_id!r}; "
                          f"choose from {sorted(RENDERERS)}") from None
    fn(run_dir, out_path)
