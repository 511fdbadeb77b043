"""Coefficient bundles, assumption probes, and the reference registry."""

import numpy as np
import pytest

from pathfk import (Model, Path, get_entry, get_model, make_grid, registry,
                    running_integral, running_max, shifted_model, validate)


# -- helpers -------------------------------------------------------------


def test_running_integral_left_endpoint():
    p = Path(make_grid(1.0, 4), np.array([[1.0], [2.0], [3.0]]))
    # left-endpoint rule over [0, 0.5]: (1 + 2) * 0.25
    assert running_integral(p)[0] == pytest.approx(0.75)
    single = Path(make_grid(1.0, 4), np.array([[5.0]]))
    assert running_integral(single)[0] == 0.0


def test_running_max_componentwise():
    p = Path(make_grid(1.0, 4), np.array([[1.0, -3.0], [0.5, 2.0]]))
    assert np.allclose(running_max(p), [1.0, 2.0])


# -- model construction --------------------------------------------------


def test_contraction_constant_must_be_interior():
    base = get_model("heat")
    from dataclasses import replace
    with pytest.raises(ValueError):
        replace(base, alpha=1.0)
    with pytest.raises(ValueError):
        replace(base, alpha=0.0)
    with pytest.raises(ValueError):
        replace(base, lip_C=-1.0)


def test_registry_contents():
    names = [e.name for e in registry()]
    assert names == ["heat", "asian", "linear-g", "nonlinear-f", "z-in-g",
                     "path-f"]
    assert get_entry("heat").closed_form_u is not None
    assert get_entry("asian").closed_form_Z is not None
    assert get_entry("linear-g").closed_form_u is None
    with pytest.raises(KeyError):
        get_model("nope")


def test_registry_flags():
    assert get_model("heat").markovian_flag
    assert not get_model("asian").markovian_flag
    assert not get_model("path-f").markovian_flag
    assert get_model("heat").f_is_zero and get_model("heat").g_is_zero
    assert not get_model("linear-g").g_is_zero
    assert not get_model("nonlinear-f").f_is_zero


# -- closed forms --------------------------------------------------------


def test_heat_closed_form_consistency():
    entry = get_entry("heat")
    grid = make_grid(1.0, 8)
    p = Path(grid, np.array([[0.0], [1.5]]))  # t = 0.125, endpoint 1.5
    assert entry.closed_form_u(p)[0] == pytest.approx(1.5 ** 2 + 0.875)
    assert entry.closed_form_Z(p)[0, 0] == pytest.approx(3.0)
    # at the horizon the field reduces to the terminal functional
    full = Path(grid, np.ones((9, 1)) * 2.0)
    assert entry.closed_form_u(full)[0] == pytest.approx(
        entry.model.Phi(full)[0])


def test_asian_closed_form_consistency():
    entry = get_entry("asian")
    grid = make_grid(1.0, 8)
    vals = np.array([[1.0], [2.0], [3.0]])  # t = 0.25
    p = Path(grid, vals)
    expected = (1.0 + 2.0) * 0.125 + 3.0 * 0.75
    assert entry.closed_form_u(p)[0] == pytest.approx(expected)
    assert entry.closed_form_Z(p)[0, 0] == pytest.approx(0.75)
    full = Path(grid, np.ones((9, 1)))
    assert entry.closed_form_u(full)[0] == pytest.approx(
        entry.model.Phi(full)[0])


def test_batch_variants_agree_with_scalar():
    grid = make_grid(1.0, 8)
    rng = np.random.default_rng(0)
    vals = rng.normal(size=(6, 9, 1))
    dt = 0.125
    for entry in registry():
        m = entry.model
        if m.phi_batch is not None:
            batch = m.phi_batch(vals, dt)
            scalar = np.array([m.Phi(Path(grid, v)) for v in vals])
            assert np.allclose(batch, scalar), m.name
        y = rng.normal(size=(6, 1))
        z = rng.normal(size=(6, 1, 1))
        if m.f_batch is not None:
            batch = m.f_batch(vals[:, :5], y, z, dt)
            scalar = np.array([m.f(Path(grid, v), y[s], z[s])
                               for s, v in enumerate(vals[:, :5])])
            assert np.allclose(batch, scalar), m.name
        if m.g_batch is not None:
            batch = m.g_batch(vals[:, :5], y, z, dt)
            scalar = np.array([m.g(Path(grid, v), y[s], z[s])
                               for s, v in enumerate(vals[:, :5])])
            assert np.allclose(batch, scalar), m.name


# -- assumption probes ---------------------------------------------------


def test_validate_passes_on_registry():
    for entry in registry():
        rep = validate(entry.model, n_probes=50, seed=0)
        assert rep.all_passed, (entry.name, [p.assumption for p in rep.failures()])


def test_validate_finds_contraction_violation():
    # a backward driver with unit z-slope but alpha declared 0.5: the
    # contraction probe must witness it
    bad = Model(
        b=lambda p: np.zeros(1),
        sigma=lambda p: np.eye(1),
        Phi=lambda p: p.endpoint[:1],
        f=lambda p, y, z: np.zeros(1),
        g=lambda p, y, z: 1.0 * np.atleast_2d(z)[:, :1],
        lip_C=1.0, growth_m=0.0, alpha=0.5, name="bad",
    )
    rep = validate(bad, n_probes=100, seed=0)
    failed = {p.assumption for p in rep.failures()}
    assert "g_lipschitz_contraction" in failed or "gg_transpose_bound" in failed


def test_validate_finds_lipschitz_violation():
    bad = Model(
        b=lambda p: np.zeros(1),
        sigma=lambda p: np.eye(1),
        Phi=lambda p: p.endpoint[:1],
        f=lambda p, y, z: np.atleast_1d(y) ** 3,   # not globally Lipschitz
        g=lambda p, y, z: np.zeros((1, 1)),
        lip_C=1.0, growth_m=0.0, alpha=0.5, name="bad-f",
    )
    rep = validate(bad, n_probes=200, seed=0)
    assert not rep.all_passed


def test_validate_input_checks():
    with pytest.raises(ValueError):
        validate(get_model("heat"), n_probes=0)


# -- ordering constructions ----------------------------------------------


def test_shifted_model_dominates():
    grid = make_grid(1.0, 8)
    rng = np.random.default_rng(1)
    base = get_model("heat")
    up = shifted_model(base, shift_phi=1.0, shift_f=0.5)
    for _ in range(10):
        p = Path(grid, rng.normal(size=(5, 1)))
        y = rng.normal(size=1)
        z = rng.normal(size=(1, 1))
        assert up.Phi(p)[0] == pytest.approx(base.Phi(p)[0] + 1.0)
        assert up.f(p, y, z)[0] == pytest.approx(base.f(p, y, z)[0] + 0.5)
        assert np.array_equal(up.g(p, y, z), base.g(p, y, z))
    assert not up.f_is_zero
    vals = rng.normal(size=(4, 9, 1))
    y = rng.normal(size=(4, 1))
    z = rng.normal(size=(4, 1, 1))
    assert np.allclose(up.phi_batch(vals, 0.125),
                       base.phi_batch(vals, 0.125) + 1.0)
    assert np.allclose(up.f_batch(vals, y, z, 0.125), 0.5)
