"""Strang split-operator propagation of the joint wavefunction.

Kinetic factors are applied in Fourier space (periodic boundaries), potential
factors pointwise; every factor is unitary so the norm is preserved to
roundoff.  The domain must be sized so that populated density never reaches
the edges; an edge-density monitor warns when that assumption breaks.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import DimensionError, NumericalError
from .grids import ComplexField, ProductGrid2D, ScalarField
from .model import HBAR, JointState

EDGE_DENSITY_WARN = 1e-10
NORM_DRIFT_ABORT = 1e-6


@dataclass(frozen=True)
class PropagationSchedule:
    dt: float
    n_steps: int
    snapshot_stride: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise DimensionError(f"dt must be positive, got {self.dt}")
        if self.snapshot_stride < 1 or (
            self.n_steps % self.snapshot_stride != 0
        ):
            raise DimensionError(
                f"snapshot_stride {self.snapshot_stride} must divide "
                f"n_steps {self.n_steps}"
            )


def default_dt(grid: ProductGrid2D, masses, max_phase=np.pi / 4.0):
    """Largest dt keeping the single-step kinetic phase at Nyquist <= max_phase."""
    M, m = masses
    k_R = np.pi / grid.grid_R.spacing
    k_r = np.pi / grid.grid_r.spacing
    return max_phase / (HBAR * (k_R**2 / (2 * M) + k_r**2 / (2 * m)))


class SplitOperator:
    """exp(-iV dt/2) exp(-iT dt) exp(-iV dt/2) stepper on a 2D product grid."""

    def __init__(self, grid: ProductGrid2D, potential: ScalarField, masses):
        if potential.grid.shape != grid.shape:
            raise DimensionError("potential grid does not match propagation grid")
        self.grid = grid
        self.V = potential.values
        self.masses = tuple(masses)
        M, m = self.masses
        spanR = grid.grid_R.spacing * grid.grid_R.n
        spanr = grid.grid_r.spacing * grid.grid_r.n
        kR = 2 * np.pi * sfft.fftfreq(grid.grid_R.n, d=grid.grid_R.spacing)
        kr = 2 * np.pi * sfft.fftfreq(grid.grid_r.n, d=grid.grid_r.spacing)
        self.kinetic = (
            HBAR**2 * kR[:, None] ** 2 / (2 * M)
            + HBAR**2 * kr[None, :] ** 2 / (2 * m)
        )
        self._span = (spanR, spanr)
        self._phase_cache = {}

    def _phases(self, dt):
        key = float(dt)
        if key not in self._phase_cache:
            self._phase_cache[key] = (
                np.exp(-0.5j * dt * self.V / HBAR),  # half potential
                np.exp(-1.0j * dt * self.V / HBAR),  # full potential
                np.exp(-1.0j * dt * self.kinetic / HBAR),
            )
        return self._phase_cache[key]

    def apply_hamiltonian(self, psi_values):
        """H psi with the spectral kinetic operator (used for observables)."""
        f = sfft.fftn(psi_values)
        kin = sfft.ifftn(self.kinetic * f)
        return kin + self.V * psi_values

    def step_values(self, psi, dt):
        half, _, kin = self._phases(dt)
        out = half * psi
        out = sfft.ifftn(kin * sfft.fftn(out, overwrite_x=True), overwrite_x=True)
        out *= half
        return out

    def step(self, state: JointState, dt) -> JointState:
        out = self.step_values(state.psi.values, dt)
        return JointState(
            psi=ComplexField(self.grid, out), t=state.t + dt
        )

    def advance_segment(self, psi, dt, n_steps):
        """n_steps Strang steps with the interior half-potential factors fused."""
        half, full, kin = self._phases(dt)
        psi = half * psi
        for k in range(n_steps):
            psi = sfft.ifftn(kin * sfft.fftn(psi, overwrite_x=True), overwrite_x=True)
            if k + 1 < n_steps:
                np.multiply(psi, full, out=psi)
        np.multiply(psi, half, out=psi)
        return psi

    def observables(self, psi_values, t=None):
        grid = self.grid
        dens = np.abs(psi_values) ** 2
        cell = grid.grid_R.spacing * grid.grid_r.spacing
        # cell-sum norm: exactly conserved by the unitary spectral steps
        norm = float(np.sum(dens) * cell)
        f = sfft.fftn(psi_values)
        e_kin = float(
            np.sum(self.kinetic * np.abs(f) ** 2)
            / (grid.grid_R.n * grid.grid_r.n)
            * cell
        )
        e_pot = float(np.sum(self.V * dens) * cell)
        mean_R = np.sum(grid.grid_R.points[:, None] * dens) * cell / norm
        mean_r = np.sum(grid.grid_r.points[None, :] * dens) * cell / norm
        rec = {
            "norm": float(norm),
            "energy": e_kin + e_pot,
            "mean_R": float(mean_R),
            "mean_r": float(mean_r),
        }
        if t is not None:
            rec["t"] = float(t)
        return rec


class SnapshotStore:
    """Ordered, append-only collection of propagation snapshots."""

    def __init__(self, grid: ProductGrid2D, meta=None):
        self.grid = grid
        self.meta = dict(meta or {})
        self.times = []
        self.psis = []
        self.observables = []

    def append(self, t, psi_values, obs=None):
        if self.times and t <= self.times[-1]:
            raise DimensionError("snapshot times must be strictly increasing")
        self.times.append(float(t))
        arr = np.array(psi_values, dtype=np.complex128)
        arr.flags.writeable = False
        self.psis.append(arr)
        self.observables.append(obs or {})

    def __len__(self):
        return len(self.times)

    def state(self, i) -> JointState:
        return JointState(psi=ComplexField(self.grid, self.psis[i]), t=self.times[i])

    def bracket(self, t):
        """Indices (i, i+1) of the snapshots bracketing time t."""
        times = np.asarray(self.times)
        if not (times[0] - 1e-12 <= t <= times[-1] + 1e-12):
            raise DimensionError(f"time {t} outside stored range")
        i = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
        return i, i + 1


def _edge_density(psi):
    dens = np.abs(psi) ** 2
    return max(dens[0].max(), dens[-1].max(), dens[:, 0].max(), dens[:, -1].max())


def run(state0: JointState, schedule: PropagationSchedule, propagator: SplitOperator,
        stop=None, meta=None) -> SnapshotStore:
    """Propagate, storing a snapshot every `snapshot_stride` steps.

    `stop`, if given, is called with each new JointState; a truthy return ends
    the run early (after recording that snapshot).  Aborts when the norm
    drifts by more than 1e-6.
    """
    store = SnapshotStore(propagator.grid, meta=meta)
    psi = state0.psi.values
    t = state0.t
    store.append(t, psi, propagator.observables(psi, t))
    n_segments = schedule.n_steps // schedule.snapshot_stride
    for _ in range(n_segments):
        psi = propagator.advance_segment(psi, schedule.dt, schedule.snapshot_stride)
        t += schedule.dt * schedule.snapshot_stride
        obs = propagator.observables(psi, t)
        if abs(obs["norm"] - 1.0) > NORM_DRIFT_ABORT:
            raise NumericalError(
                f"norm drifted to {obs['norm']} at t={t}; aborting run"
            )
        if _edge_density(psi) > EDGE_DENSITY_WARN:
            # static message so the default warning filter reports it once
            warnings.warn(f"edge density exceeds {EDGE_DENSITY_WARN}")
        store.append(t, psi, obs)
        if stop is not None and stop(store.state(len(store) - 1)):
            break
    return store
