"""Exact Factorization of a joint snapshot into clock and system parts.

The joint wavefunction is split as psi(R, r) = chi(R) phi(r|R) with
|chi|^2 the marginal density and phi partially normalized per R.  The default
gauge makes chi real and non-negative; `gauge_transform` moves an arbitrary
R-dependent phase between the two factors.  Where the marginal density drops
below the floor, the conditional quantities are undefined and stored as NaN
with an explicit availability mask (never zero-filled).
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateStateError, DimensionError
from .grids import ProductGrid2D, derivative_matrix, trapezoid_weights
from .model import HBAR, JointState

RHO_FLOOR_DEFAULT = 1e-14
DISPLAY_THRESHOLD = 1e-8  # marginal-density cut used for reported regions


def contiguous_blocks(mask, min_len=1):
    """Index slices of maximal True runs in a boolean mask."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.concatenate(([False], mask, [False]))
    edges = np.flatnonzero(np.diff(padded.astype(int)))
    starts, stops = edges[::2], edges[1::2]
    return [slice(a, b) for a, b in zip(starts, stops) if b - a >= min_len]


@dataclass(frozen=True)
class FactorizedState:
    """chi, phi, gauge phase, vector and scalar potentials on the clock grid."""

    grid: ProductGrid2D
    chi: np.ndarray  # complex (n_R,)
    phi: np.ndarray  # complex (n_R, n_r); NaN where undefined
    theta: np.ndarray  # accumulated gauge phase (n_R,)
    A: np.ndarray  # real (n_R,); NaN where unavailable
    epsilon: np.ndarray  # real (n_R,); NaN where unavailable
    epsilon_imag: np.ndarray  # sanity diagnostic, same layout as epsilon
    mask: np.ndarray  # bool (n_R,): marginal density above floor
    rho_floor: float
    masses: tuple
    t: float

    def marginal_density(self):
        return np.abs(self.chi) ** 2

    def defined_blocks(self, min_len=1):
        return contiguous_blocks(self.mask, min_len)

    def region(self, threshold=DISPLAY_THRESHOLD):
        """Reporting mask: marginal density above the display threshold."""
        return self.marginal_density() > threshold

    def reconstruct(self):
        """chi(R) phi(r|R); NaN outside the defined region."""
        return self.chi[:, None] * self.phi


def _d_R(values, grid_R, mask, order=1):
    """Derivative along R restricted to contiguous defined blocks.

    One-sided stencils are used at block edges; blocks shorter than the
    stencil cannot be differentiated and stay NaN.
    """
    min_len = 8  # the 4th-order boundary stencils need 8 rows
    out = np.full_like(np.asarray(values, dtype=np.complex128), np.nan + 0j)
    for blk in contiguous_blocks(mask, min_len):
        D = derivative_matrix(blk.stop - blk.start, grid_R.spacing, order)
        out[blk] = np.tensordot(D, values[blk], axes=([1], [0]))
    return out.real if np.isrealobj(values) else out


def vector_potential(grid, phi, mask):
    """A(R) = hbar Im <phi | d_R phi>_r on the defined region (NaN elsewhere)."""
    dphi = _d_R(phi, grid.grid_R, mask)
    w = trapezoid_weights(grid.grid_r)
    with np.errstate(invalid="ignore"):
        A = HBAR * np.imag(np.einsum("j,ij,ij->i", w, np.conj(phi), dphi))
    A[~mask] = np.nan
    return A


def coupling_coefficient(grid, chi, A, mask):
    """c(R) = ((P + A) chi) / chi entering the coupling operator."""
    dchi = _d_R(chi, grid.grid_R, mask)
    with np.errstate(invalid="ignore"):
        return -1j * HBAR * dchi / chi + A


def apply_u_operator(grid, phi, A, mask, M):
    """U phi = (P - A)^2 phi / (2M) on the defined region."""
    g = -1j * HBAR * _d_R(phi, grid.grid_R, mask) - A[:, None] * phi
    return (-1j * HBAR * _d_R(g, grid.grid_R, mask) - A[:, None] * g) / (2.0 * M)


def apply_c_operator(grid, chi, phi, A, mask, M):
    """C phi = -(1/M) ((P + A) chi / chi) (P - A) phi."""
    c = coupling_coefficient(grid, chi, A, mask)
    pm = -1j * HBAR * _d_R(phi, grid.grid_R, mask) - A[:, None] * phi
    return -(c[:, None] * pm) / M


def scalar_epsilon(grid, chi, phi, A, mask, potential_values, masses):
    """epsilon(R) = <phi| p^2/2m + V + U - C |phi>; imag part is a diagnostic."""
    M, m = masses
    h_r = grid.grid_r.spacing
    D2r = derivative_matrix(grid.grid_r.n, h_r, 2)
    kin = -(HBAR**2) / (2.0 * m) * (phi @ D2r.T)
    core = kin + potential_values * phi
    core = core + apply_u_operator(grid, phi, A, mask, M)
    core = core - apply_c_operator(grid, chi, phi, A, mask, M)
    w = trapezoid_weights(grid.grid_r)
    with np.errstate(invalid="ignore"):
        val = np.einsum("j,ij,ij->i", w, np.conj(phi), core)
    eps = np.where(mask, val.real, np.nan)
    eps_im = np.where(mask, val.imag, np.nan)
    return eps, eps_im


def factorize(state: JointState, masses, potential=None,
              rho_floor=RHO_FLOOR_DEFAULT) -> FactorizedState:
    """Density-gauge factorization: chi real non-negative, theta = 0.

    phi is defined where the marginal density exceeds `rho_floor`; A is
    computed on every contiguous defined block, epsilon additionally needs
    `potential` (a ScalarField on the same grid) and is NaN otherwise.
    """
    grid = state.grid
    psi = state.psi.values
    w_r = trapezoid_weights(grid.grid_r)
    marginal = np.abs(psi) ** 2 @ w_r
    if np.max(marginal) <= 0.0:
        raise DegenerateStateError("all-zero marginal density")
    mask = marginal > rho_floor
    chi = np.sqrt(marginal).astype(np.complex128)
    phi = np.full(grid.shape, np.nan + 0j, dtype=np.complex128)
    phi[mask] = psi[mask] / chi[mask, None].real
    A = vector_potential(grid, phi, mask)
    if potential is not None:
        if potential.grid.shape != grid.shape:
            raise DimensionError("potential grid does not match state grid")
        eps, eps_im = scalar_epsilon(
            grid, chi, phi, A, mask, potential.values, masses
        )
    else:
        eps = np.full(grid.grid_R.n, np.nan)
        eps_im = np.full(grid.grid_R.n, np.nan)
    return FactorizedState(
        grid=grid, chi=chi, phi=phi, theta=np.zeros(grid.grid_R.n),
        A=A, epsilon=eps, epsilon_imag=eps_im, mask=mask,
        rho_floor=rho_floor, masses=tuple(masses), t=state.t,
    )


def to_density_gauge(fact: FactorizedState) -> FactorizedState:
    """Pointwise reduction to the density gauge (chi real, non-negative).

    The phase of chi is transported onto phi by plain multiplication -- no
    differentiation is involved -- and A is recomputed from the transported
    phi.  Two factorizations of the same state that differ only by a gauge
    therefore reduce to identical data up to roundoff, which makes every
    downstream residual exactly gauge-invariant.  epsilon is gauge-invariant
    and kept unchanged.
    """
    grid = fact.grid
    amp = np.abs(fact.chi)
    with np.errstate(invalid="ignore", divide="ignore"):
        phase = np.where(amp > 0, fact.chi / amp, 1.0 + 0j)
    phi = fact.phi * phase[:, None]
    A = vector_potential(grid, phi, fact.mask)
    return replace(
        fact, chi=amp.astype(np.complex128), phi=phi,
        theta=np.zeros(grid.grid_R.n), A=A,
    )


def gauge_transform(fact: FactorizedState, theta) -> FactorizedState:
    """Move phase theta(R) from chi to phi: chi' = chi e^{-i theta},
    phi' = phi e^{i theta}, A' = A + hbar grad theta.

    The reconstruction chi' phi' and every gauge-invariant quantity are
    unchanged to roundoff; epsilon is gauge-invariant and kept as is.
    """
    grid = fact.grid
    theta = theta(grid.grid_R.points) if callable(theta) else np.asarray(theta, float)
    if theta.shape != (grid.grid_R.n,):
        raise DimensionError("gauge phase must be sampled on the R grid")
    dtheta = _d_R(theta.astype(np.complex128), grid.grid_R, fact.mask).real
    phase = np.exp(1j * theta)
    return replace(
        fact,
        chi=fact.chi * np.conj(phase),
        phi=fact.phi * phase[:, None],
        theta=fact.theta + theta,
        A=fact.A + HBAR * dtheta,
    )
