"""Backward solvers: regression and nested quadrature engines."""

import json

import numpy as np
import pytest

from pathfk import (BudgetError, Model, Path, RegressionBasis, SolverError,
                    difference_quotient, evaluate_u, frozen_noise_increments,
                    get_entry, get_model, make_grid, sample_drivers,
                    simulate_forward, solve_nested, solve_regression)
from pathfk.simulation import BrownianPair


T = 1.0


def linear_terminal_model():
    from dataclasses import replace
    m = get_model("heat")
    return replace(
        m,
        Phi=lambda p: p.endpoint[:1].copy(),
        phi_batch=lambda vals, dt: vals[:, -1, :1].copy(),
        name="linear",
    )


def ensemble(model, N=16, n=4000, seed=0, x0=0.0, t_index=0):
    grid = make_grid(T, N)
    vals = np.full((t_index + 1, 1), x0)
    init = Path(grid, vals)
    drv = sample_drivers(grid, n, seed, d=model.dims[0], l=model.dims[2])
    return simulate_forward(model, init, drv)


# -- regression engine oracles -------------------------------------------


def test_martingale_terminal_recovers_identity_field():
    # Phi = endpoint: the field is u(path) = endpoint, z = 1 at every step
    m = linear_terminal_model()
    ens = ensemble(m, N=8, n=4000, seed=1, x0=0.7)
    sol = solve_regression(m, ens)
    assert sol.u_estimate[0] == pytest.approx(0.7, abs=3 * sol.u_stderr[0] + 1e-9)
    z = sol.z[:, :, 0, 0]
    rms = np.sqrt(np.mean((z - 1.0) ** 2))
    assert rms < 0.05


def test_square_terminal_field_value():
    entry = get_entry("heat")
    ens = ensemble(entry.model, N=16, n=10_000, seed=2, x0=1.0)
    sol = solve_regression(entry.model, ens)
    # closed form: 1^2 + 1 = 2
    assert abs(sol.u_estimate[0] - 2.0) / 3.0 < 0.02
    assert abs(sol.u_estimate[0] - 2.0) < 3.0 * sol.u_stderr[0]


def test_integral_terminal_field_value():
    entry = get_entry("asian")
    basis = RegressionBasis(feature_set="endpoint+runmax+runint")
    ens = ensemble(entry.model, N=16, n=10_000, seed=3, x0=1.0)
    sol = solve_regression(entry.model, ens, basis=basis)
    # closed form from a unit start: 0 + 1 * (T - 0) = 1
    assert abs(sol.u_estimate[0] - 1.0) / 2.0 < 0.02
    assert abs(sol.u_estimate[0] - 1.0) < 3.0 * sol.u_stderr[0]


def test_terminal_row_is_phi_bit_exact():
    m = get_model("heat")
    ens = ensemble(m, N=8, n=500, seed=4)
    sol = solve_regression(m, ens)
    phi = m.phi_batch(ens.x_values, ens.initial.dt)
    assert np.array_equal(sol.y[:, -1], phi)


def test_second_driver_ignored_when_g_is_zero():
    # with g identically zero, replacing the B sub-stream must leave the
    # solution numerically unchanged
    m = get_model("heat")
    grid = make_grid(T, 8)
    init = Path(grid, np.zeros((1, 1)))
    drv = sample_drivers(grid, 2000, 5)
    other = sample_drivers(grid, 2000, 999)
    swapped = BrownianPair(grid, drv.dW, other.dB, drv.seed)
    sol_a = solve_regression(m, simulate_forward(m, init, drv))
    sol_b = solve_regression(m, simulate_forward(m, init, swapped))
    assert np.max(np.abs(sol_a.y - sol_b.y)) <= 1e-12
    assert np.max(np.abs(sol_a.u_estimate - sol_b.u_estimate)) <= 1e-12


def test_future_noise_features_enabled_only_with_g():
    m_plain = get_model("heat")
    m_g = get_model("linear-g")
    sol_plain = solve_regression(m_plain, ensemble(m_plain, N=4, n=600, seed=6))
    sol_g = solve_regression(m_g, ensemble(m_g, N=4, n=600, seed=6))
    assert sol_plain.scheme_params["future_noise_features"] is False
    assert sol_g.scheme_params["future_noise_features"] is True


def test_feature_budget_guard():
    m = get_model("asian")
    basis = RegressionBasis(feature_set="endpoint+runmax+runint")
    ens = ensemble(m, N=4, n=300, seed=7)
    with pytest.raises(BudgetError):
        solve_regression(m, ens, basis=basis)


def test_picard_validation_and_divergence():
    with pytest.raises(ValueError):
        solve_regression(get_model("heat"), ensemble(get_model("heat"), n=500),
                         picard_iters=0)
    # f = c*y with c*dt > 1 makes the pass-to-pass fixed-point map expansive
    runaway = Model(
        b=lambda p: np.zeros(1),
        sigma=lambda p: np.eye(1),
        b_batch=lambda v: np.zeros((v.shape[0], 1)),
        sigma_batch=lambda v: np.broadcast_to(np.eye(1), (v.shape[0], 1, 1)),
        Phi=lambda p: p.endpoint[:1].copy(),
        phi_batch=lambda v, dt: v[:, -1, :1].copy(),
        f=lambda p, y, z: 20.0 * np.atleast_1d(y),
        f_batch=lambda v, y, z, dt: 20.0 * y,
        g=lambda p, y, z: np.zeros((1, 1)),
        g_is_zero=True,
        lip_C=20.0, growth_m=0.0, alpha=0.5, name="runaway",
    )
    ens = ensemble(runaway, N=4, n=500, seed=8)
    with pytest.raises(SolverError):
        solve_regression(runaway, ens, picard_iters=8)


def test_solution_time_accessors():
    m = get_model("heat")
    grid = make_grid(T, 8)
    init = Path(grid, np.array([[0.0], [0.2]]))  # starts at t = 0.125
    drv = sample_drivers(grid, 500, 9)
    sol = solve_regression(m, simulate_forward(m, init, drv))
    assert np.array_equal(sol.Y(0.0), sol.Y(0.125))
    assert np.array_equal(sol.Z(0.0), np.zeros_like(sol.Z(0.125)))
    with pytest.raises(ValueError):
        sol.Z(1.0)
    with pytest.raises(ValueError):
        sol.Y(0.3)


# -- nested engine -------------------------------------------------------


def test_nested_exact_for_linear_terminal():
    # quadrature is exact for polynomials: a linear terminal gives the
    # martingale field with no sampling error at all
    m = linear_terminal_model()
    init = Path(make_grid(T, 4), np.array([[0.9]]))
    sol = solve_nested(m, init, n_outer=4, seed=0, branching=4)
    assert abs(sol.u_estimate[0] - 0.9) < 1e-10


def test_nested_exact_for_square_terminal():
    m = get_model("heat")
    init = Path(make_grid(T, 4), np.array([[1.0]]))
    sol = solve_nested(m, init, n_outer=4, seed=0, branching=8)
    assert abs(sol.u_estimate[0] - 2.0) < 1e-3


def test_nested_z_matches_gradient():
    m = get_model("heat")
    init = Path(make_grid(T, 4), np.array([[0.8]]))
    sol = solve_nested(m, init, n_outer=1, seed=0, branching=8)
    # z at the root equals sigma * gradient = 2 * x
    assert sol.z[0, 0, 0, 0] == pytest.approx(2.0 * 0.8, abs=1e-6)


def test_nested_budget_guards():
    m = get_model("heat")
    deep = Path(make_grid(T, 16), np.array([[0.0]]))
    with pytest.raises(BudgetError):
        solve_nested(m, deep, n_outer=1, seed=0, branching=2)
    wide = Path(make_grid(T, 8), np.array([[0.0]]))
    with pytest.raises(BudgetError):
        solve_nested(m, wide, n_outer=1, seed=0, branching=8)


def test_nested_frozen_noise_reproducibility():
    m = get_model("linear-g")
    init = Path(make_grid(T, 4), np.array([[0.5]]))
    dB = frozen_noise_increments(init.grid_times, 0, 1, seed=3, n_outer=5)
    sol_one = solve_nested(m, init, n_outer=1, seed=0, frozen_B=dB[2])
    assert np.all(sol_one.u_stderr == 0.0)
    sol_all = solve_nested(m, init, n_outer=5, seed=3)
    # the conditional value for outer sample 2 must match the frozen solve
    assert sol_all.y[2, 0, 0] == pytest.approx(sol_one.u_estimate[0], abs=1e-12)


def test_frozen_noise_regenerates_bit_identical():
    grid = make_grid(T, 4)
    a = frozen_noise_increments(grid, 0, 1, seed=11, n_outer=3)
    b = frozen_noise_increments(grid, 0, 1, seed=11, n_outer=8)
    assert np.array_equal(a, b[:3])


# -- engine-level field evaluation ---------------------------------------


def test_evaluate_u_engine_validation():
    m = get_model("heat")
    init = Path(make_grid(T, 4), np.array([[0.0]]))
    with pytest.raises(ValueError):
        evaluate_u(m, init, engine="magic")
    with pytest.raises(ValueError):
        evaluate_u(m, init, engine="regression", frozen_B=np.zeros((4, 1)))


def test_difference_quotient_of_closed_forms():
    m = get_model("heat")
    init = Path(make_grid(T, 4), np.array([[1.0]]))
    # d/dx (x^2 + T) = 2x
    dq = difference_quotient(m, init, direction=0, h=0.5, engine="nested",
                             n_scenarios=1, branching=8)
    assert dq[0] == pytest.approx(2.0, abs=1e-6)
    asian = get_model("asian")
    init4 = Path(make_grid(T, 4), np.array([[1.0]]))
    dq2 = difference_quotient(asian, init4, direction=0, h=0.5, engine="nested",
                              n_scenarios=1, branching=4)
    # d/dx (runint + x (T - t)) = T - t = 1 at t = 0
    assert dq2[0] == pytest.approx(1.0, abs=1e-6)


def test_difference_quotient_zero_for_constant_terminal():
    from dataclasses import replace
    m = replace(get_model("heat"),
                Phi=lambda p: np.array([5.0]),
                phi_batch=lambda v, dt: np.full((v.shape[0], 1), 5.0))
    init = Path(make_grid(T, 4), np.array([[0.3]]))
    dq = difference_quotient(m, init, direction=0, h=0.25, engine="nested",
                             n_scenarios=1, branching=4)
    assert abs(dq[0]) < 1e-12


# -- solution export -----------------------------------------------------


def test_summary_json_schema():
    m = get_model("heat")
    sol = solve_regression(m, ensemble(m, N=4, n=500, seed=10))
    payload = json.loads(sol.summary_json())
    assert set(payload) == {"u", "stderr", "engine", "params", "seed"}
    assert payload["engine"] == "regression"
    assert payload["seed"] == 10


def test_csv_export_layout():
    m = get_model("heat")
    sol = solve_regression(m, ensemble(m, N=4, n=500, seed=11))
    lines = sol.to_csv(max_scenarios=2).strip().splitlines()
    assert lines[0] == "scenario,step,t,y_1,z_11"
    assert len(lines) == 1 + 2 * 5
    # the z column is empty at the horizon, where it is undefined
    assert lines[5].endswith(",")


def test_basis_validation():
    with pytest.raises(ValueError):
        RegressionBasis(feature_set="fourier")
    with pytest.raises(ValueError):
        RegressionBasis(degree=3)
