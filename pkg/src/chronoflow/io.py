"""Binary snapshot container and CSV tables.

A snapshot file is little-endian throughout: the magic string, the grid
dimensions (64-bit unsigned) and extents (64-bit floats), the time t, and a
sequence of named blocks.  Complex blocks are stored as interleaved
real/imaginary 64-bit floats in row-major order (R outer); boolean
availability masks as single bytes.  Undefined entries of real and complex
blocks are NaN.  All physical quantities are in atomic units.
"""

import csv
import struct

import numpy as np

from .errors import DimensionError
from .factorization import FactorizedState
from .grids import Grid1D, ProductGrid2D

MAGIC = b"CHRONOFLOW1"

_KIND_F64 = 0
_KIND_C128 = 1
_KIND_BOOL = 2

ATOMIC_UNITS_NOTE = "atomic units: lengths in bohr, energies in hartree"


def _write_u64(f, *values):
    f.write(struct.pack("<" + "Q" * len(values), *values))


def _write_f64(f, *values):
    f.write(struct.pack("<" + "d" * len(values), *values))


def _read_u64(f, count=1):
    vals = struct.unpack("<" + "Q" * count, f.read(8 * count))
    return vals[0] if count == 1 else vals


def _read_f64(f, count=1):
    vals = struct.unpack("<" + "d" * count, f.read(8 * count))
    return vals[0] if count == 1 else vals


def write_snapshot(path, grid: ProductGrid2D, t, blocks):
    """Write named arrays into one snapshot container file."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        _write_u64(f, grid.grid_R.n, grid.grid_r.n)
        _write_f64(
            f, grid.grid_R.min, grid.grid_R.max, grid.grid_r.min,
            grid.grid_r.max, float(t),
        )
        _write_u64(f, len(blocks))
        for name, arr in blocks.items():
            arr = np.ascontiguousarray(arr)
            if arr.dtype == np.complex128:
                kind, payload = _KIND_C128, arr.view(np.float64)
            elif arr.dtype == np.bool_:
                kind, payload = _KIND_BOOL, arr.astype(np.uint8)
            else:
                kind, payload = _KIND_F64, arr.astype(np.float64)
            raw = name.encode("utf-8")
            _write_u64(f, len(raw))
            f.write(raw)
            _write_u64(f, kind, arr.ndim, *arr.shape)
            f.write(payload.astype(payload.dtype.newbyteorder("<")).tobytes())


def read_snapshot(path):
    """Read a container file; returns (grid, t, blocks dict)."""
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise DimensionError(f"{path}: not a snapshot container")
        n_R, n_r = _read_u64(f, 2)
        R_min, R_max, r_min, r_max, t = _read_f64(f, 5)
        grid = ProductGrid2D(
            Grid1D(R_min, R_max, int(n_R)), Grid1D(r_min, r_max, int(n_r))
        )
        blocks = {}
        for _ in range(_read_u64(f)):
            name = f.read(_read_u64(f)).decode("utf-8")
            kind, ndim = _read_u64(f, 2)
            shape = tuple(int(s) for s in np.atleast_1d(_read_u64(f, ndim)))
            count = int(np.prod(shape))
            if kind == _KIND_C128:
                flat = np.frombuffer(f.read(16 * count), dtype="<f8")
                arr = flat.view(np.complex128).reshape(shape)
            elif kind == _KIND_BOOL:
                arr = np.frombuffer(f.read(count), dtype=np.uint8)
                arr = arr.astype(bool).reshape(shape)
            elif kind == _KIND_F64:
                arr = np.frombuffer(f.read(8 * count), dtype="<f8")
                arr = arr.reshape(shape)
            else:
                raise DimensionError(f"{path}: unknown block kind {kind}")
            blocks[name] = np.array(arr)
    return grid, t, blocks


def write_wavefunction(path, grid, t, psi_values):
    write_snapshot(path, grid, t, {"psi": np.asarray(psi_values)})


def read_wavefunction(path):
    grid, t, blocks = read_snapshot(path)
    if "psi" not in blocks:
        raise DimensionError(f"{path}: no wavefunction block")
    return grid, t, blocks["psi"]


def write_factorized(path, fact: FactorizedState):
    write_snapshot(
        path, fact.grid, fact.t,
        {
            "chi": fact.chi,
            "phi": fact.phi,
            "A": fact.A,
            "epsilon": fact.epsilon,
            "epsilon_imag": fact.epsilon_imag,
            "theta": fact.theta,
            "mask": fact.mask,
        },
    )


def read_factorized(path, masses, rho_floor=None):
    from .factorization import RHO_FLOOR_DEFAULT

    grid, t, blocks = read_snapshot(path)
    needed = {"chi", "phi", "A", "epsilon", "epsilon_imag", "theta", "mask"}
    missing = needed - set(blocks)
    if missing:
        raise DimensionError(f"{path}: missing blocks {sorted(missing)}")
    return FactorizedState(
        grid=grid,
        chi=blocks["chi"],
        phi=blocks["phi"],
        theta=blocks["theta"],
        A=blocks["A"],
        epsilon=blocks["epsilon"],
        epsilon_imag=blocks["epsilon_imag"],
        mask=blocks["mask"],
        rho_floor=RHO_FLOOR_DEFAULT if rho_floor is None else rho_floor,
        masses=tuple(masses),
        t=t,
    )


def _write_csv(path, fieldnames, rows, unit_note=ATOMIC_UNITS_NOTE):
    with open(path, "w", newline="") as f:
        f.write(f"# {unit_note}\n")
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format(row.get(k)) for k in fieldnames})


def _format(value):
    if isinstance(value, float):
        return repr(value)  # shortest round-trip decimal
    return value


def read_csv(path):
    """Rows of a CSV table written by this module (strings, comments dropped)."""
    with open(path, newline="") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_residual_csv(path, reports):
    """One row per residual report: time, equation id, region size, RMS
    statistics (atomic units)."""
    fields = ["t", "equation", "region_points", "rms", "max_abs",
              "relative_rms"]
    _write_csv(path, fields, (rep.row() for rep in reports))


def write_trajectory_csv(path, ensembles):
    """Concatenated samples of one or more trajectory ensembles."""
    fields = ["trajectory", "mode", "tau", "R", "r", "S", "clamped",
              "terminated"]
    if not isinstance(ensembles, (list, tuple)):
        ensembles = [ensembles]

    def rows():
        offset = 0
        for ens in ensembles:
            for row in ens.rows():
                row["trajectory"] += offset
                yield row
            offset += ens.n_seeds

    _write_csv(path, fields, rows())


def read_trajectory_ensemble(path):
    """Rebuild a TrajectoryEnsemble from a trajectory CSV (uniform weights)."""
    from .trajectories import TrajectoryEnsemble

    rows = read_csv(path)
    if not rows:
        raise DimensionError(f"{path}: empty trajectory table")
    ids = sorted({int(row["trajectory"]) for row in rows})
    taus = sorted({float(row["tau"]) for row in rows})
    index = {(int(r["trajectory"]), float(r["tau"])): r for r in rows}
    n, nt = len(ids), len(taus)
    R = np.empty((nt, n))
    r = np.empty((nt, n))
    S = np.empty((nt, n))
    clamped = np.zeros((nt, n), dtype=bool)
    terminated = np.zeros((nt, n), dtype=bool)
    for j, tid in enumerate(ids):
        for k, tau in enumerate(taus):
            row = index[(tid, tau)]
            R[k, j] = float(row["R"])
            r[k, j] = float(row["r"])
            S[k, j] = float(row["S"])
            clamped[k, j] = row["clamped"] == "1"
            terminated[k, j] = row["terminated"] == "1"
    return TrajectoryEnsemble(
        mode=rows[0]["mode"],
        times=np.asarray(taus),
        R=R,
        r=r,
        S=S,
        clamped=clamped,
        terminated=terminated,
        weights=np.full(n, 1.0 / n),
    )


def write_observables_csv(path, store):
    fields = ["t", "norm", "energy", "mean_R", "mean_r"]
    _write_csv(path, fields, (dict(obs) for obs in store.observables))


def write_bo_csv(path, bo):
    """Born-Oppenheimer surfaces per clock position."""
    fields = ["R"] + [f"epsilon_{n}" for n in range(bo.n_states)]
    rows = (
        {"R": float(R), **{
            f"epsilon_{n}": float(bo.epsilon[n, i])
            for n in range(bo.n_states)
        }}
        for i, R in enumerate(bo.grid.grid_R.points)
    )
    _write_csv(path, fields, rows)
