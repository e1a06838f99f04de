"""Config-driven pipeline: model -> BO -> propagate -> factorize -> residuals
-> trajectories -> plots, with a checksummed JSON manifest.

The config is JSON with a versioned schema; every omitted entry takes the
package default and every derived quantity (dt, step counts, realized render
times) is written back into the resolved config, so a manifest plus the
package version fully determines every artifact byte.  A stage failure
aborts the run with the stage name; artifacts written so far are kept and
the manifest is emitted with status "incomplete".
"""

import copy
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from . import io as cio
from . import plotting
from .errors import ChronoflowError, MissingArtifactError, StageError
from .factorization import (
    DISPLAY_THRESHOLD,
    RHO_FLOOR_DEFAULT,
    factorize,
)
from .grids import trapezoid_weights
from .hydrofields import (
    cdce_residual,
    cdhje_residual,
    cdse_residual,
    tdqhd_residuals,
)
from .model import (
    ModelParams,
    bo_solve,
    initial_state,
    potential_on_grid,
)
from .propagator import PropagationSchedule, SplitOperator, default_dt, run
from .trajectories import (
    bohmian_trajectories,
    clock_trajectories,
    conditional_following_fraction,
    sample_initial,
    significant_seeds,
)

SCHEMA_VERSION = 1

STAGE_ORDER = (
    "model", "bo", "initial_state", "propagate", "factorize",
    "residuals", "trajectories", "plots",
)

DEFAULT_CONFIG = {
    "schema_version": SCHEMA_VERSION,
    "output_dir": "out",
    "model": {},  # ModelParams defaults unless overridden
    "grid": {},  # n_R, n_r, R_min, R_max, r_min, r_max
    "propagation": {
        "dt": None,  # null -> kinetic-phase-limited default
        "t_max": 1500.0,
        "n_steps": None,  # null -> derived from t_max and dt
        "snapshot_stride": None,  # null -> about `target_snapshots` stored
        "target_snapshots": 120,
        "stop_mean_R": -1.0,  # null disables the early-stop criterion
    },
    "factorization": {
        "rho_floor": RHO_FLOOR_DEFAULT,
        "display_threshold": DISPLAY_THRESHOLD,
    },
    "residuals": {
        "equations": ["tdhje", "tdce", "cdse", "cdhje", "cdce"],
        "times": None,  # null -> the realized render times
    },
    "trajectories": {
        "n_bohmian": 200,
        "n_clock": 20,
        "modes": ["bohmian", "clock_full", "clock_simplified"],
        "rng_seed": 1234,
        "clock_seeding_threshold": 0.1,
        "substeps": 2,
        "clamp_factor": 10.0,
    },
    "render_times": None,  # null -> 4 evenly spaced snapshot times
}

GRID_KEYS = ("R_min", "R_max", "n_R", "r_min", "r_max", "n_r")


def _deep_merge(base, extra):
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_override(text):
    """Parse a dotted ``key.path=value`` override; values are JSON when
    possible, bare strings otherwise."""
    if "=" not in text:
        raise ChronoflowError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = value
    for part in reversed(key.strip().split(".")):
        node = {part: node}
    return node


def load_config(path=None, overrides=(), output_dir=None):
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as f:
            user = json.load(f)
        version = user.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ChronoflowError(
                f"config schema version {version} not supported "
                f"(expected {SCHEMA_VERSION})"
            )
        config = _deep_merge(config, user)
    for text in overrides:
        config = _deep_merge(config, parse_override(text))
    if output_dir is not None:
        config["output_dir"] = str(output_dir)
    return config


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return "sha256:" + digest.hexdigest()


class _Run:
    """Mutable state threaded through the pipeline stages."""

    def __init__(self, config, out_dir):
        self.config = config
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "snapshots").mkdir(exist_ok=True)
        self.artifacts = []
        self.diagnostics = {}
        self.params = None
        self.potential = None
        self.bo = None
        self.state0 = None
        self.propagator = None
        self.store = None
        self.render_indices = []
        self.facts = []
        self.reports = []
        self.ensembles = {}

    def add_artifact(self, path):
        self.artifacts.append(str(Path(path).relative_to(self.out)))

    def masses(self):
        return (self.params.M, self.params.m)


def _stage_model(rn):
    merged = dict(rn.config["model"])
    for key in GRID_KEYS:
        if key in rn.config["grid"]:
            merged[key] = rn.config["grid"][key]
    rn.params = ModelParams(**merged)
    rn.potential = potential_on_grid(rn.params.grid(), rn.params)
    resolved_model = {
        key: getattr(rn.params, key)
        for key in ("L", "R_c", "R_r", "R_l", "mu", "R0", "sigma", "V_cap")
    }
    rn.config["model"] = resolved_model
    rn.config["grid"] = {key: getattr(rn.params, key) for key in GRID_KEYS}


def _stage_bo(rn):
    rn.bo = bo_solve(rn.params, n_states=2)
    path = rn.out / "bo_surfaces.csv"
    cio.write_bo_csv(path, rn.bo)
    rn.add_artifact(path)
    rn.diagnostics["bo_min_gap"] = rn.bo.min_gap()


def _stage_initial_state(rn):
    rn.state0 = initial_state(rn.params, rn.bo)


def _resolve_schedule(rn):
    block = rn.config["propagation"]
    grid = rn.params.grid()
    dt = block["dt"] or default_dt(grid, rn.masses())
    if block["n_steps"] is not None:
        n_raw = int(block["n_steps"])
    else:
        n_raw = int(math.ceil(block["t_max"] / dt))
    if n_raw == 0:
        stride = 1
    else:
        stride = block["snapshot_stride"] or max(
            1, n_raw // int(block["target_snapshots"])
        )
        n_raw = int(math.ceil(n_raw / stride) * stride)
    block.update({"dt": dt, "n_steps": n_raw, "snapshot_stride": int(stride)})
    return PropagationSchedule(dt=dt, n_steps=n_raw, snapshot_stride=int(stride))


def _stage_propagate(rn):
    schedule = _resolve_schedule(rn)
    rn.propagator = SplitOperator(rn.params.grid(), rn.potential, rn.masses())
    stop_R = rn.config["propagation"]["stop_mean_R"]
    stop = None
    if stop_R is not None:
        cell = rn.params.grid().grid_R.spacing * rn.params.grid().grid_r.spacing
        Rpts = rn.params.grid().grid_R.points[:, None]

        def stop(state, Rpts=Rpts, cell=cell, stop_R=stop_R):
            dens = np.abs(state.psi.values) ** 2
            return float(np.sum(Rpts * dens) * cell) < stop_R

    rn.store = run(rn.state0, schedule, rn.propagator, stop=stop)
    rn.config["propagation"]["t_final"] = rn.store.times[-1]

    path = rn.out / "observables.csv"
    cio.write_observables_csv(path, rn.store)
    rn.add_artifact(path)
    norms = np.array([obs["norm"] for obs in rn.store.observables])
    rn.diagnostics["max_norm_drift"] = float(np.max(np.abs(norms - 1.0)))
    rn.diagnostics["final_mean_R"] = rn.store.observables[-1]["mean_R"]

    times = np.asarray(rn.store.times)
    wanted = rn.config["render_times"]
    if wanted is None:
        idx = np.unique(
            np.round(np.linspace(0, len(times) - 1, min(4, len(times))))
        ).astype(int)
    else:
        idx = np.unique([int(np.argmin(np.abs(times - t))) for t in wanted])
    rn.render_indices = [int(i) for i in idx]
    rn.config["render_times"] = [float(times[i]) for i in rn.render_indices]
    for i in rn.render_indices:
        path = rn.out / "snapshots" / f"psi_{i:05d}.bin"
        cio.write_wavefunction(path, rn.store.grid, times[i], rn.store.psis[i])
        rn.add_artifact(path)


def _stage_factorize(rn):
    block = rn.config["factorization"]
    w_r = trapezoid_weights(rn.store.grid.grid_r)
    bo_dens = np.abs(rn.bo.phi_bo[0]) ** 2
    sup_l1 = 0.0
    rn.facts = []
    for i in range(len(rn.store)):
        fact = factorize(
            rn.store.state(i), masses=rn.masses(), potential=rn.potential,
            rho_floor=block["rho_floor"],
        )
        rn.facts.append(fact)
        # adiabaticity: L1 distance between the conditional density and the
        # ground Born-Oppenheimer density, over the reported clock region
        region = fact.region(block["display_threshold"])
        if np.any(region):
            diff = np.abs(np.abs(fact.phi) ** 2 - bo_dens) @ w_r
            sup_l1 = max(sup_l1, float(np.nanmax(diff[region])))
    rn.diagnostics["adiabaticity_sup_l1"] = sup_l1
    for i in rn.render_indices:
        path = rn.out / "snapshots" / f"fact_{i:05d}.bin"
        cio.write_factorized(path, rn.facts[i])
        rn.add_artifact(path)


def _stage_residuals(rn):
    block = rn.config["residuals"]
    times = block["times"]
    if times is None:
        times = rn.config["render_times"]
        block["times"] = list(times)
    equations = set(block["equations"])
    threshold = rn.config["factorization"]["display_threshold"]
    V = rn.potential.values
    rn.reports = []
    snap_times = np.asarray(rn.store.times)
    for t in times:
        i = int(np.argmin(np.abs(snap_times - t)))
        state, fact = rn.store.state(i), rn.facts[i]
        if equations & {"tdhje", "tdce"}:
            hje, ce = tdqhd_residuals(
                state, V, rn.masses(), apply_h=rn.propagator.apply_hamiltonian
            )[0]
            if "tdhje" in equations:
                rn.reports.append(hje)
            if "tdce" in equations:
                rn.reports.append(ce)
        if "cdse" in equations:
            rn.reports.append(cdse_residual(fact, V, threshold=threshold))
        if "cdhje" in equations:
            rn.reports.append(cdhje_residual(fact, V, threshold=threshold))
        if "cdce" in equations:
            rn.reports.append(cdce_residual(fact, threshold=threshold))
    path = rn.out / "residuals.csv"
    cio.write_residual_csv(path, rn.reports)
    rn.add_artifact(path)


def _stage_trajectories(rn):
    if len(rn.store) < 2:
        rn.diagnostics["trajectories"] = "skipped: fewer than two snapshots"
        return
    block = rn.config["trajectories"]
    rn.ensembles = {}
    if "bohmian" in block["modes"] and block["n_bohmian"] > 0:
        seeds = sample_initial(
            rn.state0, block["n_bohmian"], rng_seed=block["rng_seed"]
        )
        rn.ensembles["bohmian"] = bohmian_trajectories(
            rn.store, seeds, masses=rn.masses(),
            potential_values=rn.potential.values,
            substeps=block["substeps"], clamp_factor=block["clamp_factor"],
        )
    clock_modes = [m for m in block["modes"] if m.startswith("clock_")]
    if clock_modes and block["n_clock"] > 0:
        seeds = significant_seeds(
            rn.state0, block["n_clock"],
            threshold=block["clock_seeding_threshold"],
        )
        for mode in clock_modes:
            rn.ensembles[mode] = clock_trajectories(
                rn.store, rn.facts, seeds, masses=rn.masses(),
                mode=mode.removeprefix("clock_"),
                substeps=block["substeps"],
                clamp_factor=block["clamp_factor"],
            )
    for mode, ens in rn.ensembles.items():
        path = rn.out / f"trajectories_{mode}.csv"
        cio.write_trajectory_csv(path, ens)
        rn.add_artifact(path)
    if "clock_full" in rn.ensembles:
        ens = rn.ensembles["clock_full"]
        rn.diagnostics["clock_following_fraction"] = float(
            conditional_following_fraction(ens, rn.facts, rn.store.times)
        )
        rn.diagnostics["clock_mean_R_start"] = float(np.mean(ens.R[0]))
        rn.diagnostics["clock_mean_R_end"] = float(np.mean(ens.R[-1]))
    if {"clock_full", "clock_simplified"} <= set(rn.ensembles):
        full = rn.ensembles["clock_full"]
        simp = rn.ensembles["clock_simplified"]
        rn.diagnostics["clock_full_vs_simplified_endpoint"] = float(
            np.max(np.abs(full.R[-1] - simp.R[-1]))
        )


def _stage_plots(rn):
    manifest = _manifest_dict(rn, status="in-progress")
    for path in emit_plots(manifest, out_dir=rn.out):
        rn.add_artifact(path)


_STAGES = {
    "model": _stage_model,
    "bo": _stage_bo,
    "initial_state": _stage_initial_state,
    "propagate": _stage_propagate,
    "factorize": _stage_factorize,
    "residuals": _stage_residuals,
    "trajectories": _stage_trajectories,
    "plots": _stage_plots,
}


def _manifest_dict(rn, status):
    return {
        "schema_version": SCHEMA_VERSION,
        "status": status,
        "config": rn.config,
        "diagnostics": rn.diagnostics,
        "artifacts": {
            rel: _sha256(rn.out / rel) for rel in sorted(set(rn.artifacts))
        },
    }


def _write_manifest(rn, status):
    manifest = _manifest_dict(rn, status)
    path = rn.out / "manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def run_pipeline(config, out_dir=None, until="plots", skip=()):
    """Run the pipeline stages in order up to `until`; returns the manifest.

    On a stage failure the manifest is written with status "incomplete" and
    a StageError naming the stage is raised; prior artifacts are retained.
    """
    if until not in STAGE_ORDER:
        raise ChronoflowError(f"unknown stage {until!r}")
    config = copy.deepcopy(config)
    rn = _Run(config, out_dir or config["output_dir"])
    last = STAGE_ORDER.index(until)
    for name in STAGE_ORDER[: last + 1]:
        if name in skip:
            continue
        try:
            _STAGES[name](rn)
        except Exception as exc:
            rn.diagnostics["failed_stage"] = name
            _write_manifest(rn, status="incomplete")
            raise StageError(name, exc) from exc
    return _write_manifest(rn, status="complete")


def load_manifest(out_dir):
    path = Path(out_dir) / "manifest.json"
    if not path.exists():
        raise MissingArtifactError(str(path))
    with open(path) as f:
        return json.load(f)


def _require(out_dir, rel):
    path = Path(out_dir) / rel
    if not path.exists():
        raise MissingArtifactError(str(path))
    return path


def emit_plots(manifest, which=("potentials", "snapshots", "trajectories",
                                "residuals"), out_dir=None):
    """Render SVG plots from a manifest's persisted artifacts.

    Returns the list of files written; an empty `which` writes nothing and
    succeeds.  Missing source artifacts raise MissingArtifactError.
    """
    out = Path(out_dir or manifest["config"]["output_dir"])
    config = manifest["config"]
    written = []
    if not which:
        return written
    render_times = config.get("render_times") or []
    params = ModelParams(**{**config["model"], **config["grid"]})
    if "potentials" in which:
        rows = cio.read_csv(_require(out, "bo_surfaces.csv"))
        bo = _bo_from_rows(rows, params)
        fact0 = _render_fact(out, config, render_times, index=0)
        written.append(
            plotting.plot_potentials(
                bo, np.abs(fact0.chi) ** 2, out / "potentials.svg"
            )
        )
    if "snapshots" in which:
        V = potential_on_grid(params.grid(), params)
        overlay = _load_overlay(out, config)
        for k, t in enumerate(render_times):
            state, fact = _render_state(out, config, render_times, k)
            written.append(
                plotting.plot_snapshot_panel(
                    state, V.values, fact, out / f"snapshot_{k}.svg",
                    ensemble=overlay,
                    threshold=config["factorization"]["display_threshold"],
                )
            )
    if "trajectories" in which:
        ensembles = [
            cio.read_trajectory_ensemble(out / f"trajectories_{mode}.csv")
            for mode in config["trajectories"]["modes"]
            if (out / f"trajectories_{mode}.csv").exists()
        ]
        if ensembles:
            written.append(
                plotting.plot_trajectories(ensembles, out / "trajectories.svg")
            )
    if "residuals" in which:
        rows = cio.read_csv(_require(out, "residuals.csv"))
        reports = [_ReportRow(row) for row in rows]
        if reports:
            written.append(
                plotting.plot_residuals(reports, out / "residuals.svg")
            )
    return written


class _ReportRow:
    """Adapter giving CSV residual rows the attributes the plotter reads."""

    def __init__(self, row):
        self.equation = row["equation"]
        self.t = float(row["t"])
        self.rms = float(row["rms"])
        self.relative_rms = float(row["relative_rms"])


class _BOView:
    def __init__(self, grid, epsilon):
        self.grid = grid
        self.epsilon = epsilon
        self.n_states = epsilon.shape[0]


def _bo_from_rows(rows, params):
    n_states = sum(1 for key in rows[0] if key.startswith("epsilon_"))
    eps = np.array(
        [[float(row[f"epsilon_{n}"]) for row in rows] for n in range(n_states)]
    )
    return _BOView(params.grid(), eps)


def _snapshot_index(out, config, render_times, k):
    # artifact names carry the snapshot index; recover it from the stored files
    stride = config["propagation"]["snapshot_stride"]
    dt = config["propagation"]["dt"]
    return int(round(render_times[k] / (dt * stride))) if dt else 0


def _render_fact(out, config, render_times, index):
    i = _snapshot_index(out, config, render_times, index)
    params = ModelParams(**{**config["model"], **config["grid"]})
    return cio.read_factorized(
        _require(out, f"snapshots/fact_{i:05d}.bin"),
        masses=(params.M, params.m),
        rho_floor=config["factorization"]["rho_floor"],
    )


def _render_state(out, config, render_times, k):
    from .grids import ComplexField
    from .model import JointState

    i = _snapshot_index(out, config, render_times, k)
    grid, t, psi = cio.read_wavefunction(
        _require(out, f"snapshots/psi_{i:05d}.bin")
    )
    state = JointState(psi=ComplexField(grid, psi), t=t)
    return state, _render_fact(out, config, render_times, k)


def _load_overlay(out, config):
    for mode in ("clock_full", "bohmian"):
        path = out / f"trajectories_{mode}.csv"
        if path.exists():
            return cio.read_trajectory_ensemble(path)
    return None
