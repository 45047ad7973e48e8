#!/usr/bin/env python3
"""Run the six figure configurations end to end.

Each config in configs/ maps to one CLI command; run directories land under
runs/.  When the companion ``figures`` package is installed, the matching
renderers are invoked on the fresh run directories.

    python scripts/reproduce_figures.py [--skip-slow] [--out runs]
"""

from __future__ import annotations

import argparse
import shutil
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]

JOBS = [
    # (figure id, command, config, slow)
    ("staircase", "staircase", "fig1_staircase.cfg", False),
    ("collapse", "collapse", "fig2_collapse.cfg", False),
    ("filtering", "staircase", "fig3_filtering.cfg", False),
    ("floor", "stability", "fig4_floor.cfg", False),
    ("sampling", "sample-sweep", "fig5_sampling.cfg", True),
    ("bias", "smooth", "fig6_bias.cfg", False),
]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(ROOT / "runs"))
    ap.add_argument("--skip-slow", action="store_true",
                    help="skip the sampling sweep (the longest run)")
    args = ap.parse_args()
    out_root = Path(args.out)
    have_figures = shutil.which("figures") is not None
    for fig_id, command, cfg, slow in JOBS:
        if slow and args.skip_slow:
            print(f"-- skipping {fig_id} ({cfg})")
            continue
        run_dir = out_root / fig_id
        cmd = ["staircase-lab", command, "--config", str(ROOT / "configs" / cfg),
               "--out", str(run_dir)]
        print("::", " ".join(cmd), flush=True)
        rc = subprocess.run(cmd).returncode
        if rc != 0:
            print(f"{fig_id} failed with exit code {rc}", file=sys.stderr)
            return rc
        if have_figures:
            img = run_dir / f"{fig_id}.png"
            rc = subprocess.run(["figures", fig_id, "--run", str(run_dir),
                                 "--out", str(img)]).returncode
            if rc != 0:
                print(f"rendering {fig_id} failed with exit code {rc}", file=sys.stderr)
                return rc
            print(f"   rendered {img}")
    if not have_figures:
        print("note: `figures` CLI not found; run `pip install -e figures/` to render plots")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
