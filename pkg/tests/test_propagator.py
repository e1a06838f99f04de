import numpy as np
import pytest

from chronoflow.errors import DimensionError
from chronoflow.grids import ComplexField, Grid1D, ProductGrid2D, ScalarField
from chronoflow.model import JointState
from chronoflow.propagator import (
    PropagationSchedule,
    SplitOperator,
    default_dt,
    run,
)


def square_grid(half=12.0, n=96):
    g = Grid1D(-half, half, n)
    return ProductGrid2D(g, g)


def gaussian_state(grid, centers=(0.0, 0.0), sigmas=(1.0, 1.0), kicks=(0.0, 0.0)):
    R, r = grid.meshgrid()
    psi = np.exp(
        -((R - centers[0]) ** 2) / (4 * sigmas[0] ** 2)
        - ((r - centers[1]) ** 2) / (4 * sigmas[1] ** 2)
        + 1j * (kicks[0] * R + kicks[1] * r)
    )
    cell = grid.grid_R.spacing * grid.grid_r.spacing
    psi /= np.sqrt(np.sum(np.abs(psi) ** 2) * cell)
    return JointState(psi=ComplexField(grid, psi), t=0.0)


def zero_potential(grid):
    return ScalarField(grid, np.zeros(grid.shape))


def harmonic_potential(grid):
    R, r = grid.meshgrid()
    return ScalarField(grid, 0.5 * (R**2 + r**2))


def width_R(grid, psi):
    dens = np.abs(psi) ** 2
    cell = grid.grid_R.spacing * grid.grid_r.spacing
    R, _ = grid.meshgrid()
    norm = dens.sum() * cell
    mean = (R * dens).sum() * cell / norm
    return np.sqrt(((R - mean) ** 2 * dens).sum() * cell / norm)


def test_schedule_validation():
    with pytest.raises(DimensionError):
        PropagationSchedule(dt=-0.1, n_steps=10)
    with pytest.raises(DimensionError):
        PropagationSchedule(dt=0.1, n_steps=10, snapshot_stride=3)


def test_norm_preserved_per_step():
    grid = square_grid()
    prop = SplitOperator(grid, harmonic_potential(grid), masses=(1.0, 1.0))
    state = gaussian_state(grid, centers=(1.0, -0.5))
    cell = grid.grid_R.spacing * grid.grid_r.spacing
    psi = state.psi.values
    for _ in range(20):
        psi = prop.step_values(psi, 0.05)
        assert abs(np.sum(np.abs(psi) ** 2) * cell - 1.0) <= 1e-12


def test_free_gaussian_spreading():
    grid = square_grid(half=24.0, n=192)
    prop = SplitOperator(grid, zero_potential(grid), masses=(1.0, 1.0))
    sigma0 = 1.0
    state = gaussian_state(grid, sigmas=(sigma0, sigma0))
    # time at which the width has doubled: sigma(t) = sigma0 sqrt(1 + (t/(2 m sigma0^2))^2)
    t_double = 2 * sigma0**2 * np.sqrt(3.0)
    dt = t_double / 400
    psi = state.psi.values
    for _ in range(400):
        psi = prop.step_values(psi, dt)
    expected = sigma0 * np.sqrt(1 + (t_double / (2 * sigma0**2)) ** 2)
    assert width_R(grid, psi) == pytest.approx(expected, rel=1e-6)


def test_coherent_state_center():
    grid = square_grid(half=12.0, n=128)
    prop = SplitOperator(grid, harmonic_potential(grid), masses=(1.0, 1.0))
    x0 = 1.5
    state = gaussian_state(grid, centers=(x0, 0.0), sigmas=(np.sqrt(0.5), np.sqrt(0.5)))
    dt = 2 * np.pi / 2000
    psi = state.psi.values
    for k in range(2000):
        psi = prop.step_values(psi, dt)
        if (k + 1) % 500 == 0:
            t = (k + 1) * dt
            obs = prop.observables(psi)
            assert obs["mean_R"] == pytest.approx(x0 * np.cos(t), abs=1e-5)


def test_stationary_state_phase():
    grid = square_grid(half=10.0, n=96)
    prop = SplitOperator(grid, harmonic_potential(grid), masses=(1.0, 1.0))
    state = gaussian_state(grid, sigmas=(np.sqrt(0.5), np.sqrt(0.5)))  # E = 1
    schedule = PropagationSchedule(dt=0.01, n_steps=200, snapshot_stride=200)
    store = run(state, schedule, prop)
    final = store.psis[-1]
    np.testing.assert_allclose(
        np.abs(final) ** 2, np.abs(state.psi.values) ** 2, atol=1e-5
    )
    np.testing.assert_allclose(
        final * np.exp(1j * 1.0 * store.times[-1]), state.psi.values, atol=1e-4
    )


def test_strang_dt_convergence():
    grid = square_grid(half=12.0, n=96)
    prop = SplitOperator(grid, harmonic_potential(grid), masses=(1.0, 1.0))
    state = gaussian_state(grid, centers=(1.0, 0.0), sigmas=(np.sqrt(0.5), np.sqrt(0.5)))
    T = 1.0

    def final(nsteps):
        psi = state.psi.values
        for _ in range(nsteps):
            psi = prop.step_values(psi, T / nsteps)
        return psi

    ref = final(640)
    err_coarse = np.max(np.abs(final(40) - ref))
    err_fine = np.max(np.abs(final(80) - ref))
    assert 3.5 <= err_coarse / err_fine <= 4.5


def test_time_reversal():
    grid = square_grid(half=12.0, n=96)
    prop = SplitOperator(grid, harmonic_potential(grid), masses=(1.0, 1.0))
    state = gaussian_state(grid, centers=(1.0, -1.0))
    psi = state.psi.values
    for _ in range(50):
        psi = prop.step_values(psi, 0.02)
    for _ in range(50):
        psi = prop.step_values(psi, -0.02)
    np.testing.assert_allclose(psi, state.psi.values, atol=1e-8)


def test_run_zero_steps():
    grid = square_grid(n=64, half=8.0)
    prop = SplitOperator(grid, zero_potential(grid), masses=(1.0, 1.0))
    state = gaussian_state(grid)
    store = run(state, PropagationSchedule(dt=0.1, n_steps=0), prop)
    assert len(store) == 1
    np.testing.assert_array_equal(store.psis[0], state.psi.values)


def test_run_records_observables_and_energy_conservation():
    grid = square_grid(half=12.0, n=96)
    prop = SplitOperator(grid, harmonic_potential(grid), masses=(1.0, 1.0))
    state = gaussian_state(grid, centers=(1.0, 0.0), sigmas=(np.sqrt(0.5), np.sqrt(0.5)))
    store = run(state, PropagationSchedule(0.005, 400, 100), prop)
    energies = [o["energy"] for o in store.observables]
    assert np.max(np.abs(np.diff(energies))) / abs(energies[0]) < 1e-6
    norms = [o["norm"] for o in store.observables]
    assert np.max(np.abs(np.array(norms) - 1.0)) < 1e-9


def test_harmonic_ground_state_energy():
    grid = square_grid(half=10.0, n=128)
    prop = SplitOperator(grid, harmonic_potential(grid), masses=(1.0, 1.0))
    state = gaussian_state(grid, sigmas=(np.sqrt(0.5), np.sqrt(0.5)))
    obs = prop.observables(state.psi.values)
    assert obs["energy"] == pytest.approx(1.0, abs=1e-8)  # 0.5 per axis
    assert obs["mean_R"] == pytest.approx(0.0, abs=1e-10)


def test_run_stop_criterion():
    grid = square_grid(half=16.0, n=96)
    prop = SplitOperator(grid, zero_potential(grid), masses=(1.0, 1.0))
    state = gaussian_state(grid, kicks=(2.0, 0.0))
    store = run(
        state,
        PropagationSchedule(0.01, 10000, 100),
        prop,
        stop=lambda s: (lambda o: o["mean_R"] > 1.0)(prop.observables(s.psi.values)),
    )
    assert store.observables[-1]["mean_R"] > 1.0
    assert len(store) < 101


def test_default_dt_rule():
    grid = ProductGrid2D(Grid1D(-9, 9, 192), Grid1D(-18, 18, 384))
    dt = default_dt(grid, masses=(900.0, 1.0))
    kr = np.pi / grid.grid_r.spacing
    kR = np.pi / grid.grid_R.spacing
    phase = (kR**2 / 1800 + kr**2 / 2) * dt
    assert phase == pytest.approx(np.pi / 4)
