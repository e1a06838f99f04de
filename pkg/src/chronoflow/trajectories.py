"""Trajectory integration along hydrodynamic momentum fields.

Bohmian trajectories integrate the joint configuration (R, r) along the
classical momentum field of psi with masses (M, m); clock trajectories treat R
as the clock: each step first advances R along the (gauge-invariant) momentum
field of psi -- or of the marginal chi in simplified mode -- and then advances
r along the conditional momentum field at the new clock position.  Fields are
interpolated cubically in space and linearly in time between snapshots; the
ratio formulas amplify noise where the density vanishes, so velocities are
clamped at a multiple of their RMS over the high-density region and clamped
samples are flagged.  Trajectories leaving the domain are frozen and flagged
terminated.  The accumulated action uses S = hbar * s.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, EmptyFieldError
from .factorization import to_density_gauge
from .grids import interp_values_1d, interp_values_2d
from .hydrofields import momentum_fields, quantum_potential_from_pi
from .model import JointState

CLAMP_FACTOR_DEFAULT = 10.0
HIGH_DENSITY_REL = 1e-2  # region over which the RMS field velocity is taken
SIGNIFICANCE_DEFAULT = 0.1

MODES = ("bohmian", "clock_full", "clock_simplified")


@dataclass(frozen=True)
class TrajectorySeed:
    R0: float
    r0: float
    weight: float
    rng_seed: int

    def __post_init__(self):
        if self.weight < 0:
            raise DimensionError("seed weight must be non-negative")


def sample_initial(state0: JointState, n, rng_seed=0):
    """Inverse-CDF sampling of n seeds from the discrete density |psi0|^2.

    Each draw picks a grid cell with probability rho * dR * dr and jitters
    the position uniformly within the cell.  Deterministic for a fixed
    rng_seed; weights are equal and sum to one.
    """
    if n == 0:
        return []
    grid = state0.grid
    rho = np.abs(state0.psi.values) ** 2
    h_R, h_r = grid.grid_R.spacing, grid.grid_r.spacing
    p = (rho * h_R * h_r).ravel()
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    rng = np.random.default_rng(rng_seed)
    cells = np.searchsorted(cdf, rng.random(n), side="right")
    iR, ir = np.unravel_index(cells, grid.shape)
    R0 = grid.grid_R.points[iR] + (rng.random(n) - 0.5) * h_R
    r0 = grid.grid_r.points[ir] + (rng.random(n) - 0.5) * h_r
    R0 = np.clip(R0, grid.grid_R.min, grid.grid_R.max)
    r0 = np.clip(r0, grid.grid_r.min, grid.grid_r.max)
    sub = rng.integers(0, 2**31 - 1, size=n)
    return [
        TrajectorySeed(R0=float(a), r0=float(b), weight=1.0 / n, rng_seed=int(s))
        for a, b, s in zip(R0, r0, sub)
    ]


def significant_seeds(state0: JointState, n, threshold=SIGNIFICANCE_DEFAULT):
    """n seeds placed (deterministically, evenly) on grid nodes where the
    joint density is at least `threshold` of its maximum."""
    grid = state0.grid
    rho = np.abs(state0.psi.values) ** 2
    iR, ir = np.nonzero(rho >= threshold * rho.max())
    if iR.size == 0:
        raise EmptyFieldError("no grid nodes above the significance threshold")
    take = np.unique(np.linspace(0, iR.size - 1, num=min(n, iR.size)).astype(int))
    return [
        TrajectorySeed(
            R0=float(grid.grid_R.points[i]),
            r0=float(grid.grid_r.points[j]),
            weight=1.0 / take.size,
            rng_seed=0,
        )
        for i, j in zip(iR[take], ir[take])
    ]


@dataclass
class TrajectoryEnsemble:
    """Recorded trajectory samples, one column per seed."""

    mode: str
    times: np.ndarray  # (n_times,)
    R: np.ndarray  # (n_times, n_seeds)
    r: np.ndarray
    S: np.ndarray  # (n_times, n_seeds); NaN when the action is not tracked
    clamped: np.ndarray  # bool: velocity clamp engaged on the step ending here
    terminated: np.ndarray  # bool: position frozen after leaving the domain
    weights: np.ndarray  # (n_seeds,)

    @property
    def n_seeds(self):
        return self.weights.size

    def positions_at(self, t):
        """(R, r) arrays linearly interpolated to time t."""
        times = self.times
        if not times[0] - 1e-12 <= t <= times[-1] + 1e-12:
            raise DimensionError(f"time {t} outside trajectory range")
        i = int(np.clip(np.searchsorted(times, t) - 1, 0, len(times) - 2))
        w = (t - times[i]) / (times[i + 1] - times[i])
        w = float(np.clip(w, 0.0, 1.0))
        return (
            (1 - w) * self.R[i] + w * self.R[i + 1],
            (1 - w) * self.r[i] + w * self.r[i + 1],
        )

    def rows(self):
        """Iterate CSV-ready records (id, mode, tau, R, r, S, flags)."""
        for j in range(self.n_seeds):
            for k in range(self.times.size):
                yield {
                    "trajectory": j,
                    "mode": self.mode,
                    "tau": float(self.times[k]),
                    "R": float(self.R[k, j]),
                    "r": float(self.r[k, j]),
                    "S": float(self.S[k, j]),
                    "clamped": int(self.clamped[k, j]),
                    "terminated": int(self.terminated[k, j]),
                }


class _SnapshotFields:
    """Per-snapshot velocity (and action-rate) fields with NaN scrubbed."""

    def __init__(self, grid, masses, psi_values, potential_values=None,
                 A_values=None):
        M, m = masses
        flds = momentum_fields(psi_values, grid, masses)
        self.vR = np.nan_to_num(flds.P_cl) / M
        self.vr = np.nan_to_num(flds.p_cl) / m
        rho = np.abs(psi_values) ** 2
        self.high = rho > HIGH_DENSITY_REL * rho.max()
        if A_values is not None:
            self.vA = np.nan_to_num(A_values) / M
        else:
            self.vA = None
        if potential_values is not None:
            u_R = quantum_potential_from_pi(
                np.nan_to_num(flds.Pi_q), grid.grid_R.spacing, M, axis=0
            )
            u_r = quantum_potential_from_pi(
                np.nan_to_num(flds.pi_q), grid.grid_r.spacing, m, axis=1
            )
            kin = 0.5 * M * self.vR**2 + 0.5 * m * self.vr**2
            self.action_rate = np.nan_to_num(
                kin - potential_values - u_R - u_r
            )
        else:
            self.action_rate = None

    def vmax(self, clamp_factor):
        vmag = np.sqrt(self.vR**2 + self.vr**2)[self.high]
        rms = float(np.sqrt(np.mean(vmag**2)))
        return clamp_factor * max(rms, 1e-30)


def _prepare(snapshots, masses, potential_values, facts):
    if len(snapshots) < 2:
        raise DimensionError("trajectory integration needs >= 2 snapshots")
    grid = snapshots.grid
    if facts is not None:
        if len(facts) != len(snapshots):
            raise DimensionError("factorized series misaligned with snapshots")
        facts = [to_density_gauge(f) for f in facts]
    fields = []
    for k in range(len(snapshots)):
        fields.append(
            _SnapshotFields(
                grid, masses, snapshots.psis[k], potential_values,
                facts[k].A if facts is not None else None,
            )
        )
    return grid, fields


def _interp2(grid, arr_a, arr_b, w, R, r):
    Rc = np.clip(R, grid.grid_R.min, grid.grid_R.max)
    rc = np.clip(r, grid.grid_r.min, grid.grid_r.max)
    va = interp_values_2d(grid, arr_a, Rc, rc)
    vb = interp_values_2d(grid, arr_b, Rc, rc)
    return (1.0 - w) * va + w * vb


def _interp1(grid, arr_a, arr_b, w, R):
    Rc = np.clip(R, grid.grid_R.min, grid.grid_R.max)
    va = interp_values_1d(grid.grid_R, arr_a, Rc, axis_name="R")
    vb = interp_values_1d(grid.grid_R, arr_b, Rc, axis_name="R")
    return (1.0 - w) * va + w * vb


def _rk4(f, x, tau, h):
    k1 = f(x, tau)
    k2 = f(x + 0.5 * h * k1, tau + 0.5 * h)
    k3 = f(x + 0.5 * h * k2, tau + 0.5 * h)
    k4 = f(x + h * k3, tau + h)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _integrate(snapshots, seeds, mode, masses, potential_values=None,
               facts=None, substeps=2, clamp_factor=CLAMP_FACTOR_DEFAULT):
    grid, fields = _prepare(snapshots, masses, potential_values, facts)
    times = np.asarray(snapshots.times)
    n = len(seeds)
    R = np.array([s.R0 for s in seeds], dtype=float)
    r = np.array([s.r0 for s in seeds], dtype=float)
    S = np.zeros(n) if potential_values is not None and mode == "bohmian" \
        else np.full(n, np.nan)
    weights = np.array([s.weight for s in seeds], dtype=float)
    active = np.ones(n, dtype=bool)

    rec_t = [times[0]]
    rec_R, rec_r, rec_S = [R.copy()], [r.copy()], [S.copy()]
    rec_clamp = [np.zeros(n, dtype=bool)]
    rec_term = [~active]

    for k in range(len(times) - 1):
        t_a, t_b = times[k], times[k + 1]
        f_a, f_b = fields[k], fields[k + 1]
        vmax = max(f_a.vmax(clamp_factor), f_b.vmax(clamp_factor))
        h = (t_b - t_a) / substeps
        step_clamped = np.zeros(n, dtype=bool)

        def frac(tau):
            return (tau - t_a) / (t_b - t_a)

        def clamp(v):
            over = np.abs(v) > vmax
            step_clamped[active] |= over[active]
            return np.clip(v, -vmax, vmax)

        for s in range(substeps):
            tau = t_a + s * h

            if mode == "bohmian":
                def vel(x, tt):
                    vR = clamp(_interp2(grid, f_a.vR, f_b.vR, frac(tt), x[0], x[1]))
                    vr = clamp(_interp2(grid, f_a.vr, f_b.vr, frac(tt), x[0], x[1]))
                    if potential_values is not None:
                        ls = _interp2(
                            grid, f_a.action_rate, f_b.action_rate, frac(tt),
                            x[0], x[1],
                        )
                    else:
                        ls = np.zeros_like(vR)
                    return np.stack([vR, vr, ls])

                new = _rk4(vel, np.stack([R, r, S]), tau, h)
                R_new, r_new, S_new = new[0], new[1], new[2]
            else:
                # clock step: advance the clock first, then the system at the
                # new clock position
                if mode == "clock_simplified":
                    def velR(x, tt):
                        return clamp(_interp1(grid, f_a.vA, f_b.vA, frac(tt), x))

                    R_new = _rk4(velR, R, tau, h)
                else:
                    def velR(x, tt):
                        return clamp(
                            _interp2(grid, f_a.vR, f_b.vR, frac(tt), x, r)
                        )

                    R_new = _rk4(velR, R, tau, h)

                def velr(x, tt):
                    return clamp(
                        _interp2(grid, f_a.vr, f_b.vr, frac(tt), R_new, x)
                    )

                r_new = _rk4(velr, r, tau, h)
                S_new = S

            exited = (
                (R_new < grid.grid_R.min) | (R_new > grid.grid_R.max)
                | (r_new < grid.grid_r.min) | (r_new > grid.grid_r.max)
            )
            move = active & ~exited
            R[move] = R_new[move]
            r[move] = r_new[move]
            S[move] = S_new[move]
            active &= ~exited

        rec_t.append(t_b)
        rec_R.append(R.copy())
        rec_r.append(r.copy())
        rec_S.append(S.copy())
        rec_clamp.append(step_clamped)
        rec_term.append(~active)

    return TrajectoryEnsemble(
        mode=mode,
        times=np.asarray(rec_t),
        R=np.asarray(rec_R),
        r=np.asarray(rec_r),
        S=np.asarray(rec_S),
        clamped=np.asarray(rec_clamp),
        terminated=np.asarray(rec_term),
        weights=weights,
    )


def bohmian_trajectories(snapshots, seeds, masses, potential_values=None,
                         substeps=2, clamp_factor=CLAMP_FACTOR_DEFAULT):
    """Joint Bohmian trajectories d(R,r)/dt = (P[psi]/M, p[psi]/m).

    The action S is accumulated along each trajectory (kinetic energy minus
    classical and quantum potentials) when `potential_values` is given.
    """
    return _integrate(
        snapshots, seeds, "bohmian", masses, potential_values=potential_values,
        substeps=substeps, clamp_factor=clamp_factor,
    )


def clock_trajectories(snapshots, factorized_series, seeds, masses,
                       mode="full", substeps=2,
                       clamp_factor=CLAMP_FACTOR_DEFAULT):
    """Clock-dependent trajectories with tau identified with external time.

    mode "full": dR/dtau = P[psi]/M evaluated from psi (gauge-invariant);
    mode "simplified": dR/dtau = P[chi, A]/M, a function of R alone.  Either
    way dr/dtau = p[phi](r|R)/m at the already-advanced clock position (the
    conditional and joint classical r-momenta coincide since chi carries no
    r dependence).
    """
    if mode not in ("full", "simplified"):
        raise DimensionError(f"unknown clock trajectory mode {mode!r}")
    return _integrate(
        snapshots, seeds, f"clock_{mode}", masses, facts=factorized_series,
        substeps=substeps, clamp_factor=clamp_factor,
    )


def ensemble_density(ensemble: TrajectoryEnsemble, grid, at_time):
    """Weighted position histogram on the grid cells, per unit cell volume."""
    R, r = ensemble.positions_at(at_time)
    keep = np.isfinite(R) & np.isfinite(r)
    if not np.any(keep):
        raise EmptyFieldError(f"no trajectory samples at t={at_time}")
    h_R, h_r = grid.grid_R.spacing, grid.grid_r.spacing
    edges_R = np.concatenate(
        [grid.grid_R.points - h_R / 2, [grid.grid_R.points[-1] + h_R / 2]]
    )
    edges_r = np.concatenate(
        [grid.grid_r.points - h_r / 2, [grid.grid_r.points[-1] + h_r / 2]]
    )
    hist, _, _ = np.histogram2d(
        R[keep], r[keep], bins=[edges_R, edges_r],
        weights=ensemble.weights[keep],
    )
    return hist / (h_R * h_r)


def conditional_following_fraction(ensemble: TrajectoryEnsemble,
                                   factorized_series, times,
                                   threshold=SIGNIFICANCE_DEFAULT):
    """Fraction of non-terminated trajectory steps whose conditional density
    rho(r_t | R_t) is at least `threshold` of max_r rho(r | R_t)."""
    times = np.asarray(times)
    grid = factorized_series[0].grid
    total = satisfied = 0
    for k, tau in enumerate(ensemble.times):
        i = int(np.clip(np.searchsorted(times, tau) - 1, 0, len(times) - 2))
        w = float(np.clip((tau - times[i]) / (times[i + 1] - times[i]), 0, 1))
        cond_a = np.nan_to_num(np.abs(factorized_series[i].phi) ** 2)
        cond_b = np.nan_to_num(np.abs(factorized_series[i + 1].phi) ** 2)
        live = ~ensemble.terminated[k]
        if not np.any(live):
            continue
        R, r = ensemble.R[k][live], ensemble.r[k][live]
        dens = _interp2(grid, cond_a, cond_b, w, R, r)
        ridge_a = cond_a.max(axis=1)
        ridge_b = cond_b.max(axis=1)
        ridge = _interp1(grid, ridge_a, ridge_b, w, R)
        total += R.size
        satisfied += int(np.sum(dens >= threshold * ridge))
    if total == 0:
        raise EmptyFieldError("no live trajectory steps to evaluate")
    return satisfied / total
