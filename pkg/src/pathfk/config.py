"""Experiment configuration: a small JSON schema naming a model (from the
registry or from a restricted inline grammar), the grid, the sampling
budget, the engine, the initial path, and the checks to run.

Inline model grammar (all optional, defaults are zero drift / unit
diffusion / zero drivers):

    "model": {
      "name":  "custom",
      "b":     {"const": v} | {"affine": {"intercept": a, "slope": c}},
      "sigma": {"const": v} | {"affine": {"intercept": a, "slope": c}},
      "Phi":   {"kind": "endpoint" | "endpoint_square" | "endpoint_sin"
                        | "running_integral", "shift": s},
      "f":     {"kind": "zero" | "linear" | "cos_y_plus_half_z"
                        | "runmax_minus_y",
                "coef_y": a, "coef_z": b, "const": c, "shift": s},
      "g":     {"kind": "zero" | "linear_y" | "linear_z", "coef": c},
      "lip_C": C, "growth_m": m, "alpha": a
    }

Affine coefficients read the current endpoint, so the grammar stays within
Lipschitz territory by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .models import Model, get_entry, running_integral, running_max
from .paths import Path, from_csv, make_grid
from .solver import RegressionBasis

_ENGINES = ("regression", "nested")
_KNOWN_CHECKS = (
    "closed_form", "z_representation", "z_growth", "flow", "field_equation",
    "comparison", "discretization", "regularity", "moments",
)


class ConfigError(ValueError):
    pass


def _affine_coeff(spec, default_const):
    if spec is None:
        return float(default_const), 0.0
    if "const" in spec:
        return float(spec["const"]), 0.0
    if "affine" in spec:
        return (float(spec["affine"].get("intercept", 0.0)),
                float(spec["affine"].get("slope", 0.0)))
    raise ConfigError(f"coefficient spec must be 'const' or 'affine', got {spec}")


def _build_inline_model(spec: dict) -> Model:
    name = spec.get("name", "custom")
    b0, b1 = _affine_coeff(spec.get("b"), 0.0)
    s0, s1 = _affine_coeff(spec.get("sigma"), 1.0)

    phi_spec = spec.get("Phi", {"kind": "endpoint"})
    phi_kind = phi_spec.get("kind", "endpoint")
    shift = float(phi_spec.get("shift", 0.0))
    if phi_kind == "endpoint":
        Phi = lambda p: p.endpoint[:1] + shift
        phi_batch = lambda v, dt: v[:, -1, :1] + shift
    elif phi_kind == "endpoint_square":
        Phi = lambda p: p.endpoint[:1] ** 2 + shift
        phi_batch = lambda v, dt: v[:, -1, :1] ** 2 + shift
    elif phi_kind == "endpoint_sin":
        Phi = lambda p: np.sin(p.endpoint[:1]) + shift
        phi_batch = lambda v, dt: np.sin(v[:, -1, :1]) + shift
    elif phi_kind == "running_integral":
        Phi = lambda p: running_integral(p)[:1] + shift
        phi_batch = lambda v, dt: v[:, :-1, :1].sum(axis=1) * dt + shift
    else:
        raise ConfigError(f"unknown terminal kind {phi_kind!r}")

    f_spec = spec.get("f", {"kind": "zero"})
    f_kind = f_spec.get("kind", "zero")
    f_is_zero = f_kind == "zero"
    if f_kind == "zero":
        f = lambda p, y, z: np.zeros(1)
        f_batch = None
    elif f_kind == "linear":
        ay = float(f_spec.get("coef_y", 0.0))
        az = float(f_spec.get("coef_z", 0.0))
        c0 = float(f_spec.get("const", 0.0))
        f = lambda p, y, z: c0 + ay * np.atleast_1d(y) + az * np.atleast_2d(z)[:, 0]
        f_batch = lambda v, y, z, dt: c0 + ay * y + az * z[:, :, 0]
    elif f_kind == "cos_y_plus_half_z":
        fs = float(f_spec.get("shift", 0.0))
        f = lambda p, y, z: fs + np.cos(np.atleast_1d(y)) + np.atleast_2d(z)[:, 0] / 2.0
        f_batch = lambda v, y, z, dt: fs + np.cos(y) + z[:, :, 0] / 2.0
    elif f_kind == "runmax_minus_y":
        fs = float(f_spec.get("shift", 0.0))
        f = lambda p, y, z: fs + running_max(p)[:1] - np.atleast_1d(y)
        f_batch = lambda v, y, z, dt: fs + v[:, :, :1].max(axis=1) - y
    else:
        raise ConfigError(f"unknown time-driver kind {f_kind!r}")

    g_spec = spec.get("g", {"kind": "zero"})
    g_kind = g_spec.get("kind", "zero")
    g_is_zero = g_kind == "zero"
    coef = float(g_spec.get("coef", 0.0))
    if g_kind == "zero":
        g = lambda p, y, z: np.zeros((1, 1))
        g_batch = None
    elif g_kind == "linear_y":
        g = lambda p, y, z: coef * np.atleast_1d(y)[:, None]
        g_batch = lambda v, y, z, dt: coef * y[:, :, None]
    elif g_kind == "linear_z":
        if not abs(coef) < 1.0:
            raise ConfigError(
                f"a z-linear backward driver needs |coef| < 1, got {coef}"
            )
        g = lambda p, y, z: coef * np.atleast_2d(z)[:, :1]
        g_batch = lambda v, y, z, dt: coef * z[:, :, :1]
    else:
        raise ConfigError(f"unknown backward-driver kind {g_kind!r}")

    return Model(
        b=lambda p: np.array([b0 + b1 * p.endpoint[0]]),
        sigma=lambda p: np.array([[s0 + s1 * p.endpoint[0]]]),
        b_batch=lambda v: b0 + b1 * v[:, -1, :],
        sigma_batch=lambda v: (s0 + s1 * v[:, -1, :1])[:, :, None],
        Phi=Phi, phi_batch=phi_batch,
        f=f, f_batch=f_batch, g=g, g_batch=g_batch,
        lip_C=float(spec.get("lip_C", max(2.0, abs(b1) + abs(s1)))),
        growth_m=float(spec.get("growth_m", 1.0)),
        alpha=float(spec.get("alpha", max(abs(coef), 0.5) if g_kind == "linear_z" else 0.5)),
        dims=(1, 1, 1),
        name=name,
        f_is_zero=f_is_zero,
        g_is_zero=g_is_zero,
        markovian_flag=f_kind != "runmax_minus_y" and phi_kind != "running_integral",
    )


@dataclass
class ExperimentConfig:
    model_name: str
    model: Model
    closed_form_u: Optional[callable]
    closed_form_Z: Optional[callable]
    T: float
    N: int
    n_scenarios: int
    seed: int
    engine: str
    engine_options: dict
    initial: Path
    basis: Optional[RegressionBasis]
    checks: dict
    output_dir: str
    raw: dict

    @property
    def grid_times(self) -> np.ndarray:
        return self.initial.grid_times


def load_config(source, seed_override: Optional[int] = None) -> ExperimentConfig:
    """Parse and validate a configuration from a JSON string, dict, or file
    path; seed_override (e.g. from the environment) replaces the configured
    seed."""
    if isinstance(source, dict):
        raw = source
    else:
        text = source
        if "\n" not in str(source) and str(source).endswith(".json"):
            with open(source) as fh:
                text = fh.read()
        raw = json.loads(text)

    grid_spec = raw.get("grid")
    if not grid_spec or "T" not in grid_spec or "N" not in grid_spec:
        raise ConfigError("config needs grid.T and grid.N")
    T = float(grid_spec["T"])
    N = int(grid_spec["N"])
    if N < 2:
        raise ConfigError(f"grid.N must be at least 2, got {N}")
    if T <= 0:
        raise ConfigError(f"grid.T must be positive, got {T}")

    model_spec = raw.get("model")
    closed_u = closed_Z = None
    if isinstance(model_spec, str):
        entry = get_entry(model_spec)
        model, model_name = entry.model, entry.name
        closed_u, closed_Z = entry.closed_form_u, entry.closed_form_Z
    elif isinstance(model_spec, dict):
        model = _build_inline_model(model_spec)
        model_name = model.name
    else:
        raise ConfigError("config needs a model name or an inline model spec")

    mc = raw.get("mc", {})
    if "seed" not in mc:
        raise ConfigError("mc.seed is required for reproducibility")
    seed = int(mc["seed"]) if seed_override is None else int(seed_override)
    engine = raw.get("engine", "regression")
    if engine not in _ENGINES:
        raise ConfigError(f"engine must be one of {_ENGINES}, got {engine!r}")
    n_scenarios = int(mc.get("n_scenarios", 10_000 if engine == "regression" else 32))
    if engine == "regression" and n_scenarios < 100:
        raise ConfigError(
            f"the regression engine needs at least 100 scenarios, got {n_scenarios}"
        )

    grid = make_grid(T, N)
    init_spec = raw.get("initial_path")
    if init_spec is None:
        initial = Path(grid, np.zeros((1, model.dims[0])))
    elif "file" in init_spec:
        with open(init_spec["file"]) as fh:
            initial = from_csv(fh.read(), horizon=T, dt=T / N)
    else:
        vals = np.asarray(init_spec["values"], dtype=np.float64)
        initial = Path(grid, vals)

    basis_spec = raw.get("basis")
    basis = None
    if basis_spec is not None:
        basis = RegressionBasis(
            feature_set=basis_spec.get("feature_set", "endpoint"),
            degree=int(basis_spec.get("degree", 2)),
            include_future_noise=basis_spec.get("include_future_noise"),
        )
    elif not model.markovian_flag:
        basis = RegressionBasis(feature_set="endpoint+runmax+runint")

    checks = raw.get("checks", {})
    for cname in checks:
        if cname not in _KNOWN_CHECKS:
            raise ConfigError(
                f"unknown check {cname!r}; known checks: {_KNOWN_CHECKS}"
            )
    if "closed_form" in checks and closed_u is None:
        raise ConfigError(f"model {model_name!r} has no closed form to check against")

    return ExperimentConfig(
        model_name=model_name,
        model=model,
        closed_form_u=closed_u,
        closed_form_Z=closed_Z,
        T=T, N=N,
        n_scenarios=n_scenarios,
        seed=seed,
        engine=engine,
        engine_options=dict(raw.get("engine_options", {})),
        initial=initial,
        basis=basis,
        checks=checks,
        output_dir=raw.get("output_dir", "pathfk-out"),
        raw=raw,
    )
