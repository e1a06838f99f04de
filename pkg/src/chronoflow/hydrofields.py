"""Hydrodynamic momentum fields, quantum potentials, and equation residuals.

Every phase-like quantity is obtained from Im/Re ratio formulas applied to the
complex fields themselves (no phase unwrapping): the classical momentum field
is hbar Im(conj(f) grad f)/|f|^2 (+ vector potential) and the quantum momentum
field is hbar Re(conj(f) grad f)/|f|^2.  The residual evaluators check the
time-dependent Hamilton-Jacobi and continuity equations on the joint
wavefunction, and the clock-dependent Schroedinger / Hamilton-Jacobi /
continuity equations on a factorized state.  Residuals are reported relative
to the RMS of their largest constituent term over the region where the
marginal density is above threshold.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .factorization import (
    DISPLAY_THRESHOLD,
    FactorizedState,
    _d_R,
    apply_c_operator,
    apply_u_operator,
    scalar_epsilon,
    to_density_gauge,
)
from .grids import derivative_matrix, derivative_values, trapezoid_weights
from .model import HBAR

COND_FLOOR_REL = 1e-6  # conditional-density cut relative to its maximum


# ---------------------------------------------------------------------------
# momentum fields and quantum potentials


def _ratio_fields(values, dvalues, floor=0.0):
    """(classical, quantum) momentum fields from f and its gradient."""
    rho = np.abs(values) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        prod = np.conj(values) * dvalues
        ok = rho > floor
        p = np.where(ok, HBAR * prod.imag / rho, np.nan)
        pi = np.where(ok, HBAR * prod.real / rho, np.nan)
    return p, pi


@dataclass(frozen=True)
class MomentumFieldSet:
    """Classical/quantum momentum fields and flux densities of a 2D field."""

    P_cl: np.ndarray  # w.r.t. R, with the requested A sign applied
    Pi_q: np.ndarray  # w.r.t. R
    p_cl: np.ndarray  # w.r.t. r
    pi_q: np.ndarray  # w.r.t. r
    J: np.ndarray  # (1/M) rho P_cl
    j: np.ndarray  # (1/m) rho p_cl
    mask: np.ndarray

    def __iter__(self):  # convenient unpacking
        return iter((self.P_cl, self.Pi_q, self.p_cl, self.pi_q))


def momentum_fields(values, grid, masses, A=None, A_sign=1.0,
                    mask=None, floor=0.0) -> MomentumFieldSet:
    """All four momentum fields plus flux densities for a 2D complex field.

    `A`, if given, is added to the classical R-momentum with sign `A_sign`
    (+1 for the marginal convention, -1 for the conditional one).  Points
    where |f|^2 <= floor are masked to NaN.
    """
    values = np.asarray(values)
    if values.shape != grid.shape:
        raise DimensionError("field shape does not match grid")
    M, m = masses
    if mask is None:
        mask = np.ones(grid.grid_R.n, dtype=bool)
    dR = _d_R(values, grid.grid_R, mask)
    dr = derivative_values(values, grid.grid_r.spacing, order=1, axis=1)
    P, Pi = _ratio_fields(values, dR, floor)
    p, pi = _ratio_fields(values, dr, floor)
    if A is not None:
        P = P + A_sign * np.asarray(A)[:, None]
    rho = np.abs(values) ** 2
    ok = rho > floor
    return MomentumFieldSet(
        P_cl=P, Pi_q=Pi, p_cl=p, pi_q=pi,
        J=np.where(ok, rho * P / M, np.nan),
        j=np.where(ok, rho * p / m, np.nan),
        mask=ok & mask[:, None],
    )


def quantum_potential_from_pi(pi, spacing, mass, axis):
    """u = -(1/2m) (hbar d.pi + pi^2) along one axis."""
    dpi = derivative_values(pi, spacing, order=1, axis=axis)
    return -(HBAR * dpi + pi**2) / (2.0 * mass)


def quantum_potential_amplitude_form(values, spacing, mass, axis):
    """Cross-check form -(hbar^2/2m) (d2|f|) / |f|."""
    amp = np.abs(values)
    d2 = derivative_values(amp, spacing, order=2, axis=axis)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(amp > 0, -(HBAR**2) / (2 * mass) * d2 / amp, np.nan)


def quantum_potential(values, grid, axis, mass, mask=None):
    """Quantum potential of a field w.r.t. one axis of a 2D product grid."""
    idx = grid.axis_index(axis)
    g1 = grid.axis_grid(axis)
    if mask is None:
        mask = np.ones(grid.grid_R.n, dtype=bool)
    if idx == 0:
        dv = _d_R(values, grid.grid_R, mask)
        _, pi = _ratio_fields(values, dv)
        dpi = _d_R(pi, grid.grid_R, mask)
    else:
        dv = derivative_values(values, g1.spacing, order=1, axis=1)
        _, pi = _ratio_fields(values, dv)
        dpi = derivative_values(pi, g1.spacing, order=1, axis=1)
    return -(HBAR * dpi + pi**2) / (2.0 * mass)


# ---------------------------------------------------------------------------
# residual reports


@dataclass(frozen=True)
class ResidualReport:
    """Residual field of one equation plus region-restricted statistics."""

    equation: str
    residual: np.ndarray
    region: np.ndarray
    rms: float
    max_abs: float
    term_rms: dict
    largest_term_rms: float
    relative_rms: float
    spacings: tuple
    t: float = 0.0
    extra: dict = field(default_factory=dict)

    def row(self):
        """CSV row (time, equation, region size, rms, max, relative rms)."""
        return {
            "t": self.t,
            "equation": self.equation,
            "region_points": int(np.sum(self.region)),
            "rms": self.rms,
            "max_abs": self.max_abs,
            "relative_rms": self.relative_rms,
        }


def _region_rms(values, region):
    vals = np.abs(np.asarray(values)[region])
    vals = vals[np.isfinite(vals)]
    return float(np.sqrt(np.mean(vals**2))) if vals.size else float("nan")


def make_report(equation, residual, region, terms, grid, t=0.0, extra=None):
    term_rms = {name: _region_rms(vals, region) for name, vals in terms.items()}
    largest = max(term_rms.values()) if term_rms else float("nan")
    rms = _region_rms(residual, region)
    finite = np.abs(np.asarray(residual)[region])
    finite = finite[np.isfinite(finite)]
    return ResidualReport(
        equation=equation,
        residual=np.asarray(residual),
        region=region,
        rms=rms,
        max_abs=float(np.max(finite)) if finite.size else float("nan"),
        term_rms=term_rms,
        largest_term_rms=largest,
        relative_rms=rms / largest if largest else float("nan"),
        spacings=(grid.grid_R.spacing, grid.grid_r.spacing),
        t=t,
        extra=extra or {},
    )


# ---------------------------------------------------------------------------
# time-dependent quantum hydrodynamics on the joint wavefunction


def fd_hamiltonian(grid, potential_values, masses):
    """H applied with the 4th-order stencils (non-periodic safe)."""
    M, m = masses
    D2R = derivative_matrix(grid.grid_R.n, grid.grid_R.spacing, 2)
    D2r = derivative_matrix(grid.grid_r.n, grid.grid_r.spacing, 2)
    V = np.asarray(potential_values)

    def apply(psi):
        return (
            -(HBAR**2) / (2 * M) * (D2R @ psi)
            - (HBAR**2) / (2 * m) * (psi @ D2r.T)
            + V * psi
        )

    return apply


def tdqhd_residuals(snapshots, potential_values, masses, apply_h=None,
                    region_rel=1e-8):
    """Residuals of the time-dependent Hamilton-Jacobi and continuity
    equations, treating (R, r) jointly as the configuration.

    `snapshots` is a SnapshotStore (or any object with `times`, `psis`, and
    `grid`); one (hamilton_jacobi_report, continuity_report) pair is returned
    per snapshot.  The time derivative is analytic, d_t psi = -(i/hbar) H psi,
    with H applied by `apply_h` (defaults to the 4th-order finite-difference
    Hamiltonian).  Pass apply_h="snapshots" to fall back to centered
    differences between stored snapshots, for externally ingested data whose
    Hamiltonian is not available.
    """
    grid = snapshots.grid
    if hasattr(snapshots, "psi"):  # a single joint state
        times, psis = [snapshots.t], [snapshots.psi.values]
    else:
        times, psis = list(snapshots.times), list(snapshots.psis)
    if apply_h == "snapshots":
        if len(psis) < 2:
            raise DimensionError("snapshot time differences need >= 2 snapshots")
        dpsis = []
        for i in range(len(psis)):
            lo, hi = max(i - 1, 0), min(i + 1, len(psis) - 1)
            dpsis.append((psis[hi] - psis[lo]) / (times[hi] - times[lo]))
    else:
        if apply_h is None:
            apply_h = fd_hamiltonian(grid, potential_values, masses)
        dpsis = [-1j / HBAR * apply_h(psi) for psi in psis]
    return [
        _tdqhd_pair(grid, psi, dpsi, potential_values, masses, region_rel, t)
        for psi, dpsi, t in zip(psis, dpsis, times)
    ]


def _tdqhd_pair(grid, psi, dpsi_dt, potential_values, masses, region_rel, t):
    M, m = masses
    rho = np.abs(psi) ** 2
    region = rho > region_rel * rho.max()

    # hbar d_t s = hbar Im(conj(psi) d_t psi)/rho ;
    # d_t rho = 2 Re(conj(psi) d_t psi)
    with np.errstate(invalid="ignore", divide="ignore"):
        prod = np.conj(psi) * dpsi_dt
        hdts = HBAR * prod.imag / rho
        drho_dt = 2.0 * prod.real

    flds = momentum_fields(psi, grid, masses)
    kin = flds.P_cl**2 / (2 * M) + flds.p_cl**2 / (2 * m)
    # zero-fill the quantum momenta before differentiating: where the density
    # underflows to exact zero the fields are NaN, and a dense derivative
    # stencil would smear that NaN across the whole axis
    u_R = quantum_potential_from_pi(
        np.nan_to_num(flds.Pi_q), grid.grid_R.spacing, M, axis=0
    )
    u_r = quantum_potential_from_pi(
        np.nan_to_num(flds.pi_q), grid.grid_r.spacing, m, axis=1
    )
    hje = hdts + kin + potential_values + u_R + u_r
    hje_report = make_report(
        "tdhje", hje, region,
        {
            "hbar_dt_s": hdts,
            "kinetic": kin,
            "potential": potential_values * np.ones_like(rho),
            "quantum_potential": u_R + u_r,
        },
        grid, t,
    )

    JR = np.nan_to_num(flds.J)
    jr = np.nan_to_num(flds.j)
    div_j = (
        derivative_values(JR, grid.grid_R.spacing, axis=0)
        + derivative_values(jr, grid.grid_r.spacing, axis=1)
    )
    ce = drho_dt + div_j
    # momentum-field (w-based) form of the same equation
    with np.errstate(invalid="ignore", divide="ignore"):
        h2_dt_w = HBAR**2 * drho_dt / (2.0 * rho)
    ce1 = (
        h2_dt_w
        + (flds.pi_q * flds.p_cl
           + HBAR * derivative_values(
               np.nan_to_num(flds.p_cl), grid.grid_r.spacing, axis=1) / 2) / m
        + (flds.Pi_q * flds.P_cl
           + HBAR * derivative_values(
               np.nan_to_num(flds.P_cl), grid.grid_R.spacing, axis=0) / 2) / M
    )
    ce_report = make_report(
        "tdce", ce, region,
        {"dt_rho": drho_dt, "div_flux": div_j},
        grid, t,
        extra={
            "tdce1_rms": _region_rms(ce1, region),
            "tdce1_relative_rms": _region_rms(ce1, region)
            / max(_region_rms(h2_dt_w, region), 1e-300),
        },
    )
    return hje_report, ce_report


# ---------------------------------------------------------------------------
# clock-dependent equations on a factorized state


def _conditional_region(fact: FactorizedState, threshold=DISPLAY_THRESHOLD,
                        cond_floor_rel=COND_FLOOR_REL):
    """2D evaluation region: marginal above threshold, conditional density
    above a relative floor (ratio formulas amplify noise in the tails)."""
    cond = np.abs(fact.phi) ** 2
    with np.errstate(invalid="ignore"):
        region = fact.region(threshold)[:, None] & (
            cond > cond_floor_rel * np.nanmax(cond)
        )
    return region


def _factorized_fields(fact: FactorizedState):
    grid = fact.grid
    M, m = fact.masses
    chi, phi, A, mask = fact.chi, fact.phi, fact.A, fact.mask
    dchi = _d_R(chi, grid.grid_R, mask)
    P_chi, Pi_chi = _ratio_fields(chi, dchi)
    P_chi = P_chi + A  # P[chi, A]
    dphi_R = _d_R(phi, grid.grid_R, mask)
    dphi_r = derivative_values(
        np.nan_to_num(phi), grid.grid_r.spacing, axis=1
    )
    dphi_r[~mask] = np.nan
    P_phi, Pi_phi = _ratio_fields(phi, dphi_R)
    P_phi = P_phi - A[:, None]  # P[phi, -A]
    p_phi, pi_phi = _ratio_fields(phi, dphi_r)
    return P_chi, Pi_chi, P_phi, Pi_phi, p_phi, pi_phi


def _epsilon_of(fact: FactorizedState, potential_values):
    if np.any(np.isfinite(fact.epsilon)):
        return fact.epsilon
    if potential_values is None:
        raise DimensionError("epsilon unavailable; pass the potential")
    eps, _ = scalar_epsilon(
        fact.grid, fact.chi, fact.phi, fact.A, fact.mask, potential_values,
        fact.masses,
    )
    return eps


def cdse_residual(fact: FactorizedState, potential_values,
                  threshold=DISPLAY_THRESHOLD, cond_floor_rel=COND_FLOOR_REL):
    """Residual of the conditional (clock-dependent Schroedinger) equation:
    C phi - (p^2/2m + V + U - epsilon) phi."""
    fact = to_density_gauge(fact)
    grid = fact.grid
    M, m = fact.masses
    eps = _epsilon_of(fact, potential_values)
    D2r = derivative_matrix(grid.grid_r.n, grid.grid_r.spacing, 2)
    kin = -(HBAR**2) / (2 * m) * (np.nan_to_num(fact.phi) @ D2r.T)
    kin[~fact.mask] = np.nan
    vterm = potential_values * fact.phi
    uterm = apply_u_operator(grid, fact.phi, fact.A, fact.mask, M)
    cterm = apply_c_operator(grid, fact.chi, fact.phi, fact.A, fact.mask, M)
    epsterm = eps[:, None] * fact.phi
    residual = cterm - (kin + vterm + uterm - epsterm)
    region = _conditional_region(fact, threshold, cond_floor_rel)
    return make_report(
        "cdse", residual, region,
        {
            "coupling": cterm,
            "kinetic_r": kin,
            "potential": vterm,
            "u_operator": uterm,
            "epsilon": epsterm,
        },
        grid, fact.t,
    )


def cdhje_residual(fact: FactorizedState, potential_values,
                   threshold=DISPLAY_THRESHOLD, cond_floor_rel=COND_FLOOR_REL):
    """Residual of the clock-dependent Hamilton-Jacobi equation:
    0 = (1/M)(P[chi,A] P[phi,-A] - Pi[chi] Pi[phi]) - eps + H_S + H_SC."""
    fact = to_density_gauge(fact)
    grid = fact.grid
    M, m = fact.masses
    P_chi, Pi_chi, P_phi, Pi_phi, p_phi, pi_phi = _factorized_fields(fact)
    eps = _epsilon_of(fact, potential_values)
    u = quantum_potential_from_pi(
        np.nan_to_num(pi_phi), grid.grid_r.spacing, m, axis=1
    )
    U = -(HBAR * _d_R(Pi_phi, grid.grid_R, fact.mask) + Pi_phi**2) / (2.0 * M)
    H_S = p_phi**2 / (2 * m) + u + potential_values
    H_SC = P_phi**2 / (2 * M) + U
    coupling = (P_chi[:, None] * P_phi - Pi_chi[:, None] * Pi_phi) / M
    residual = coupling - eps[:, None] + H_S + H_SC
    region = _conditional_region(fact, threshold, cond_floor_rel)
    return make_report(
        "cdhje", residual, region,
        {
            "clock_coupling": coupling,
            "epsilon": eps[:, None] * np.ones_like(residual),
            "H_S": H_S,
            "H_SC": H_SC,
        },
        grid, fact.t,
    )


def cdce_residual(fact: FactorizedState, threshold=DISPLAY_THRESHOLD,
                  cond_floor_rel=COND_FLOOR_REL):
    """Residual of the clock-dependent continuity equation in its pure
    momentum-field form; the flux-density form is assembled in `extra` for
    comparison (its mixed-unit term is reported, not asserted)."""
    fact = to_density_gauge(fact)
    grid = fact.grid
    M, m = fact.masses
    P_chi, Pi_chi, P_phi, Pi_phi, p_phi, pi_phi = _factorized_fields(fact)
    h_R, h_r = grid.grid_R.spacing, grid.grid_r.spacing
    div_p = derivative_values(np.nan_to_num(p_phi), h_r, axis=1)
    div_P = _d_R(P_phi, grid.grid_R, fact.mask)
    term_clock = (P_chi[:, None] * Pi_phi + Pi_chi[:, None] * P_phi) / M
    term_sys = (pi_phi * p_phi + HBAR * div_p / 2.0) / m
    term_cross = (Pi_phi * P_phi + HBAR * div_P / 2.0) / M
    residual = term_clock + term_sys + term_cross
    region = _conditional_region(fact, threshold, cond_floor_rel)

    # assembled flux-density form (secondary)
    rho = np.abs(fact.phi) ** 2
    drho_R = _d_R(rho.astype(float), grid.grid_R, fact.mask)
    J_C = rho * P_phi / M
    j_C = rho * p_phi / m
    flux_terms = {
        "advection": P_chi[:, None] * drho_R / M,
        "div_j": derivative_values(np.nan_to_num(j_C), h_r, axis=1),
        "div_J": _d_R(J_C, grid.grid_R, fact.mask),
        "quantum_flux": 2.0 / HBAR * Pi_chi[:, None] * J_C,
    }
    assembled = sum(flux_terms.values())
    return make_report(
        "cdce1", residual, region,
        {"clock": term_clock, "system": term_sys, "cross": term_cross},
        grid, fact.t,
        extra={
            "cdce_flux_form_rms": _region_rms(assembled, region),
            "cdce_flux_term_rms": {
                k: _region_rms(v, region) for k, v in flux_terms.items()
            },
            "note": (
                "flux form uses a real 2/hbar coefficient in place of the "
                "published 2i/hbar and is reported for comparison only"
            ),
        },
    )


def convergence_order(spacings, errors):
    """Least-squares slope of log(error) vs log(spacing)."""
    s = np.log(np.asarray(spacings, dtype=float))
    e = np.log(np.asarray(errors, dtype=float))
    return float(np.polyfit(s, e, 1)[0])
