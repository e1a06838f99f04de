"""Proton-coupled electron-transfer model in atomic units.

A heavy positive charge moves along R, a light negative charge along r, and
two positive charges are clamped at +/- L/2 on both axes.  The interaction is
a sum of two bare Coulomb repulsions (in R) and three error-function-softened
attractions (in r).  This module also provides the Born-Oppenheimer surfaces
of the light particle and the Gaussian-times-ground-state initial wavepacket.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import erf

from .errors import DimensionError, NumericalError
from .grids import (
    ComplexField,
    Grid1D,
    ProductGrid2D,
    ScalarField,
    integrate,
    trapezoid_weights,
)

HBAR = 1.0


@dataclass(frozen=True)
class ModelParams:
    """Model parameters; defaults follow the published parameterization."""

    L: float = 19.0
    R_c: float = 4.0
    R_r: float = 3.5
    R_l: float = 3.5
    mu: float = 1.0 / 900.0
    R0: float = 5.0
    sigma: float = 0.183
    V_cap: float = 10.0
    R_min: float = -9.0
    R_max: float = 9.0
    n_R: int = 192
    r_min: float = -18.0
    r_max: float = 18.0
    n_r: int = 384
    m: float = field(default=1.0, init=False)
    hbar: float = field(default=HBAR, init=False)

    def __post_init__(self):
        if self.L <= 0 or min(self.R_c, self.R_r, self.R_l) <= 0:
            raise DimensionError("L and all softening lengths must be positive")
        if not 0.0 < self.mu < 1.0:
            raise DimensionError(f"mass ratio mu must be in (0, 1), got {self.mu}")
        if self.V_cap <= 0:
            raise DimensionError("V_cap must be positive")
        if not (-self.L / 2 < self.R_min and self.R_max < self.L / 2):
            raise DimensionError(
                "R grid must lie strictly inside (-L/2, L/2) to avoid the bare "
                "Coulomb singularities"
            )

    @property
    def M(self):
        return 1.0 / self.mu

    def grid(self):
        return ProductGrid2D(
            Grid1D(self.R_min, self.R_max, self.n_R),
            Grid1D(self.r_min, self.r_max, self.n_r),
        )


def _softened_coulomb(x, a):
    """erf(|x|/a)/|x| with the two-term series inside |x| < 1e-4 * a."""
    x = np.abs(np.asarray(x, dtype=float))
    small = x < 1e-4 * a
    safe = np.where(small, 1.0, x)
    series = 2.0 / (np.sqrt(np.pi) * a) * (1.0 - x**2 / (3.0 * a**2))
    return np.where(small, series, erf(safe / a) / safe)


def potential_value(R, r, params: ModelParams):
    """Five-term interaction potential V(R, r), clamped at V_cap."""
    R = np.asarray(R, dtype=float)
    r = np.asarray(r, dtype=float)
    half = params.L / 2.0
    with np.errstate(divide="ignore"):
        v = (
            1.0 / np.abs(R - half)
            + 1.0 / np.abs(R + half)
            - _softened_coulomb(r - R, params.R_c)
            - _softened_coulomb(r - half, params.R_r)
            - _softened_coulomb(r + half, params.R_l)
        )
    return np.minimum(v, params.V_cap)


def potential_on_grid(grid: ProductGrid2D, params: ModelParams) -> ScalarField:
    R, r = grid.meshgrid()
    return ScalarField(grid, potential_value(R, r, params))


@dataclass(frozen=True)
class BOSurface:
    """Lowest Born-Oppenheimer eigenpairs of the light particle, per R."""

    grid: ProductGrid2D
    epsilon: np.ndarray  # (n_states, n_R)
    phi_bo: np.ndarray  # (n_states, n_R, n_r), sign-aligned along R

    @property
    def n_states(self):
        return self.epsilon.shape[0]

    def min_gap(self):
        if self.n_states < 2:
            raise DimensionError("need at least two states for a gap")
        return float(np.min(self.epsilon[1] - self.epsilon[0]))


def dirichlet_spectrum(grid: Grid1D, v_values, mass, n_states):
    """Lowest eigenpairs of -(1/2 mass) d2/dx2 + v with Dirichlet ends.

    Second-order tridiagonal discretization on the interior points; the
    returned eigenfunctions are zero on the two boundary nodes and normalized
    under trapezoid quadrature.
    """
    if not 1 <= n_states <= grid.n - 2:
        raise DimensionError(
            f"n_states must be in [1, {grid.n - 2}], got {n_states}"
        )
    h = grid.spacing
    kin = HBAR**2 / (2.0 * mass * h**2)
    diag = 2.0 * kin + np.asarray(v_values)[1:-1]
    off = -kin * np.ones(grid.n - 3)
    try:
        vals, vecs = eigh_tridiagonal(
            diag, off, select="i", select_range=(0, n_states - 1)
        )
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise NumericalError(f"tridiagonal eigensolver failed: {exc}") from exc
    funcs = np.zeros((n_states, grid.n))
    funcs[:, 1:-1] = vecs.T
    w = trapezoid_weights(grid)
    norms = np.sqrt(np.einsum("j,ij->i", w, funcs**2))
    funcs /= norms[:, None]
    return vals, funcs


def bo_solve(params: ModelParams, n_states=2, grid=None) -> BOSurface:
    """Diagonalize -(1/2) d2/dr2 + V(R, .) at every R grid point."""
    grid = grid or params.grid()
    n_R = grid.grid_R.n
    eps = np.zeros((n_states, n_R))
    phi = np.zeros((n_states, n_R, grid.grid_r.n))
    rpts = grid.grid_r.points
    for i, R in enumerate(grid.grid_R.points):
        try:
            vals, funcs = dirichlet_spectrum(
                grid.grid_r, potential_value(R, rpts, params), params.m, n_states
            )
        except NumericalError as exc:  # pragma: no cover
            raise NumericalError(f"BO eigensolve failed at R index {i}") from exc
        eps[:, i] = vals
        phi[:, i, :] = funcs
    # smooth global sign: successive overlaps along R stay positive
    w = trapezoid_weights(grid.grid_r)
    for n in range(n_states):
        for i in range(1, n_R):
            if np.einsum("j,j,j->", w, phi[n, i - 1], phi[n, i]) < 0.0:
                phi[n, i] *= -1.0
    return BOSurface(grid=grid, epsilon=eps, phi_bo=phi)


def grid_norm(grid: ProductGrid2D, values):
    """Cell-sum squared-norm integral of a 2D field."""
    cell = grid.grid_R.spacing * grid.grid_r.spacing
    return float(np.sum(np.abs(values) ** 2) * cell)


@dataclass(frozen=True)
class JointState:
    """Normalized joint wavefunction on the product grid at external time t."""

    psi: ComplexField
    t: float

    def __post_init__(self):
        # grid (cell-sum) norm: the inner product the spectral propagator
        # preserves exactly; trapezoid quadrature differs only by edge rows
        norm = grid_norm(self.psi.grid, self.psi.values)
        if abs(norm - 1.0) > 1e-9:
            raise DimensionError(f"joint state norm {norm} deviates from 1")

    @property
    def grid(self):
        return self.psi.grid

    def density(self) -> ScalarField:
        return ScalarField(self.grid, np.abs(self.psi.values) ** 2)

    def marginal_density(self) -> ScalarField:
        return integrate(self.density(), axis="r")


def initial_gaussian(grid: Grid1D, center, sigma):
    """Normalized real Gaussian exp(-(x - center)^2 / (4 sigma^2))."""
    g = np.exp(-((grid.points - center) ** 2) / (4.0 * sigma**2))
    norm = np.sqrt(trapezoid_weights(grid) @ g**2)
    return g / norm


def initial_state(params: ModelParams, bo: BOSurface) -> JointState:
    """psi0 = chi0(R) * phi0_BO(r|R), normalized, at t = 0."""
    grid = bo.grid
    if grid.shape != params.grid().shape or grid.grid_R.n != params.n_R:
        raise DimensionError("BO surface grid does not match the model grids")
    chi0 = initial_gaussian(grid.grid_R, params.R0, params.sigma)
    psi = chi0[:, None] * bo.phi_bo[0]
    psi = psi / np.sqrt(grid_norm(grid, psi))
    if np.max(np.abs(psi[[0, -1], :]) ** 2) > 1e-10 or np.max(
        np.abs(psi[:, [0, -1]]) ** 2
    ) > 1e-10:
        warnings.warn("initial state has non-negligible density at the grid edge")
    return JointState(psi=ComplexField(grid, psi.astype(np.complex128)), t=0.0)
