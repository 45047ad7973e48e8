"""Key-value run configuration: parsing, defaults, manifest round-trip.

Config files are flat ``key = value`` text; values are JSON where they parse
(numbers, lists, booleans) and raw strings otherwise.  Lattice models use the
``lattice.*`` keys, synthetic spectra ``synthetic.levels = [[E, g], ...]``.
A manifest written by a run is itself a valid config reproducing the run.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .model import LatticeSpec, SpectrumModel, build_synthetic_spectrum


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


def parse_config_text(text: str) -> dict:
    out: dict[str, object] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if not key:
            raise ConfigError(f"line {ln}: empty key")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def load_config(path) -> dict:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def _as_list(value, kind=float) -> list:
    if isinstance(value, (int, float)):
        return [kind(value)]
    if isinstance(value, list):
        return [kind(v) for v in value]
    raise ConfigError(f"expected number or list, got {value!r}")


@dataclass
class RunConfig:
    """Fully resolved run parameters (the manifest echoes exactly this)."""

    command: str
    raw: dict = field(default_factory=dict)

    # model
    lattice: LatticeSpec | None = None
    synthetic_levels: list | None = None

    taus: list = field(default_factory=lambda: [1.0])
    quad_m: int | None = None
    quad_mbars: list | None = None
    quad_epsilon: float | None = None
    binomial_dtau: float | None = None

    sample_ks: list = field(default_factory=list)
    seed: int = 1234
    repetitions: int = 8

    window_kind: str = "gaussian"
    delta_lambda: float = 0.0

    grid_min: float | None = None
    grid_max: float | None = None
    grid_points: int = 2001

    collapse_mode: str = "both"
    collapse_s: list = field(default_factory=lambda: [8.0, 12.0, 16.0])
    collapse_mbar_over_s: list = field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0])
    collapse_kappa: float = 6.0

    stability_r0: float = 0.1
    dim_cap: int = 4096
    out: str | None = None

    def model_keys(self) -> dict:
        out: dict[str, object] = {}
        if self.lattice is not None:
            lat = self.lattice
            out.update({
                "lattice.lx": lat.lx, "lattice.ly": lat.ly, "lattice.t": lat.t_hop,
                "lattice.u": lat.u, "lattice.mu": lat.mu,
                "lattice.n_up": lat.n_up, "lattice.n_down": lat.n_down,
                "lattice.periodic_x": lat.periodic_x, "lattice.periodic_y": lat.periodic_y,
            })
        if self.synthetic_levels is not None:
            out["synthetic.levels"] = self.synthetic_levels
        return out

    def spectrum(self) -> SpectrumModel | None:
        if self.synthetic_levels is not None:
            return build_synthetic_spectrum(self.synthetic_levels)
        return None


def resolve(command: str, cfg: dict) -> RunConfig:
    rc = RunConfig(command=command, raw=dict(cfg))
    known = set()

    def take(key, default=None):
        known.add(key)
        return cfg.get(key, default)

    has_lattice = any(k.startswith("lattice.") for k in cfg)
    has_synth = "synthetic.levels" in cfg
    if has_lattice and has_synth:
        raise ConfigError("give either lattice.* keys or synthetic.levels, not both")
    if not has_lattice and not has_synth:
        raise ConfigError("config must define a model (lattice.* or synthetic.levels)")
    if has_lattice:
        try:
            rc.lattice = LatticeSpec(
                lx=int(take("lattice.lx")),
                ly=int(take("lattice.ly")),
                n_up=int(take("lattice.n_up")),
                n_down=int(take("lattice.n_down")),
                t_hop=float(take("lattice.t", 1.0)),
                u=float(take("lattice.u", 0.0)),
                mu=float(take("lattice.mu", 0.0)),
                periodic_x=bool(take("lattice.periodic_x", False)),
                periodic_y=bool(take("lattice.periodic_y", False)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad lattice spec: {exc}") from exc
    else:
        levels = take("synthetic.levels")
        if not isinstance(levels, list) or not levels:
            raise ConfigError("synthetic.levels must be a non-empty [[E, g], ...] list")
        rc.synthetic_levels = [[float(e), int(g)] for e, g in levels]

    if "tau" in cfg:
        rc.taus = _as_list(take("tau"))
        if any(t < 0 for t in rc.taus):
            raise ConfigError("tau values must be >= 0")
    if "quadrature.m" in cfg:
        rc.quad_m = int(take("quadrature.m"))
    if "quadrature.mbar" in cfg:
        rc.quad_mbars = [int(v) for v in _as_list(take("quadrature.mbar"), int)]
    if "quadrature.epsilon" in cfg:
        rc.quad_epsilon = float(take("quadrature.epsilon"))
    if "binomial.dtau" in cfg:
        rc.binomial_dtau = float(take("binomial.dtau"))
    if "sampling.k" in cfg:
        rc.sample_ks = [int(v) for v in _as_list(take("sampling.k"), int)]
    rc.seed = int(take("sampling.seed", 1234))
    rc.repetitions = int(take("sampling.repetitions", 8))
    rc.window_kind = str(take("smoothing.window", "gaussian"))
    if rc.window_kind not in ("gaussian", "boxcar"):
        raise ConfigError(f"unknown smoothing window {rc.window_kind!r}")
    rc.delta_lambda = float(take("smoothing.delta_lambda", 0.0))
    if "grid.min" in cfg:
        rc.grid_min = float(take("grid.min"))
    if "grid.max" in cfg:
        rc.grid_max = float(take("grid.max"))
    rc.grid_points = int(take("grid.points", 2001))
    rc.collapse_mode = str(take("collapse.mode", "both"))
    if rc.collapse_mode not in ("tau", "hopping", "both"):
        raise ConfigError("collapse.mode must be tau, hopping, or both")
    if "collapse.s" in cfg:
        rc.collapse_s = _as_list(take("collapse.s"))
    if "collapse.mbar_over_s" in cfg:
        rc.collapse_mbar_over_s = _as_list(take("collapse.mbar_over_s"))
    rc.collapse_kappa = float(take("collapse.kappa", 6.0))
    rc.stability_r0 = float(take("stability.r0", 0.1))
    rc.dim_cap = int(take("dim_cap", 4096))
    if "out" in cfg:
        rc.out = str(take("out"))
    known.add("command")
    known.add("version")  # manifests echo these; round-trips must parse
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return rc


def manifest_entries(rc: RunConfig, version: str) -> list[tuple[str, object]]:
    """Flat key/value echo of the resolved config; parseable as a config."""
    entries: list[tuple[str, object]] = [("command", rc.command), ("version", version)]
    entries.extend(sorted(rc.model_keys().items()))
    entries.append(("tau", rc.taus))
    if rc.quad_m is not None:
        entries.append(("quadrature.m", rc.quad_m))
    if rc.quad_mbars is not None:
        entries.append(("quadrature.mbar", rc.quad_mbars))
    if rc.quad_epsilon is not None:
        entries.append(("quadrature.epsilon", rc.quad_epsilon))
    if rc.binomial_dtau is not None:
        entries.append(("binomial.dtau", rc.binomial_dtau))
    if rc.sample_ks:
        entries.append(("sampling.k", rc.sample_ks))
    entries.append(("sampling.seed", rc.seed))
    entries.append(("sampling.repetitions", rc.repetitions))
    entries.append(("smoothing.window", rc.window_kind))
    entries.append(("smoothing.delta_lambda", rc.delta_lambda))
    if rc.grid_min is not None:
        entries.append(("grid.min", rc.grid_min))
    if rc.grid_max is not None:
        entries.append(("grid.max", rc.grid_max))
    entries.append(("grid.points", rc.grid_points))
    if rc.command == "collapse":
        entries.append(("collapse.mode", rc.collapse_mode))
        entries.append(("collapse.s", rc.collapse_s))
        entries.append(("collapse.mbar_over_s", rc.collapse_mbar_over_s))
        entries.append(("collapse.kappa", rc.collapse_kappa))
    if rc.command == "stability":
        entries.append(("stability.r0", rc.stability_r0))
    entries.append(("dim_cap", rc.dim_cap))
    return entries


def write_manifest(path, rc: RunConfig, version: str) -> None:
    lines = []
    for key, val in manifest_entries(rc, version):
        lines.append(f"{key} = {json.dumps(val)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def config_hash(rc: RunConfig, version: str) -> str:
    blob = json.dumps(manifest_entries(rc, version), sort_keys=False).encode()
    return hashlib.sha256(blob).hexdigest()[:8]
