"""Coefficient bundles with growth/contraction metadata, structural probes,
and the registry of reference instances used as oracles.

A model carries the forward drift b and diffusion sigma, the terminal
functional Phi, and the two drivers f (time integral) and g (backward
integral), all as path functionals.  Optional *_batch variants evaluate
whole scenario blocks on raw value arrays; solvers use them when present,
falling back to the per-path callables, which remain the contract.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .paths import Path, sup_norm, path_dist
from .simulation import random_initial_path


def running_integral(path: Path) -> np.ndarray:
    """Left-endpoint integral of the path over [0, t] (exact for the
    piecewise-constant representation)."""
    if path.t_index == 0:
        return np.zeros(path.dimension)
    return path.values[:-1].sum(axis=0) * path.dt


def running_max(path: Path) -> np.ndarray:
    """Componentwise running maximum over [0, t]."""
    return path.values.max(axis=0)


@dataclass
class Model:
    b: Callable[[Path], np.ndarray]                       # -> (d,)
    sigma: Callable[[Path], np.ndarray]                   # -> (d, d)
    Phi: Callable[[Path], np.ndarray]                     # on full paths -> (k,)
    f: Callable[[Path, np.ndarray, np.ndarray], np.ndarray]   # -> (k,)
    g: Callable[[Path, np.ndarray, np.ndarray], np.ndarray]   # -> (k, l)
    lip_C: float
    growth_m: float
    alpha: float
    dims: tuple = (1, 1, 1)   # (d, k, l)
    markovian_flag: bool = True
    name: str = ""
    f_is_zero: bool = False
    g_is_zero: bool = False
    # optional vectorized variants over scenario blocks
    b_batch: Optional[Callable] = None        # (values[n,m,d]) -> (n, d)
    sigma_batch: Optional[Callable] = None    # (values[n,m,d]) -> (n, d, d)
    phi_batch: Optional[Callable] = None      # (values[n,N+1,d], dt) -> (n, k)
    f_batch: Optional[Callable] = None        # (values, y[n,k], z[n,k,d], dt) -> (n, k)
    g_batch: Optional[Callable] = None        # (values, y, z, dt) -> (n, k, l)

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"contraction constant must be in (0,1), got {self.alpha}")
        if self.lip_C < 0 or self.growth_m < 0:
            raise ValueError("lip_C and growth_m must be nonnegative")


@dataclass
class ModelRegistryEntry:
    name: str
    model: Model
    closed_form_u: Optional[Callable[[Path], np.ndarray]] = None
    closed_form_Z: Optional[Callable[[Path], np.ndarray]] = None
    notes: str = ""


@dataclass
class AssumptionProbe:
    assumption: str
    passed: bool
    witness: str = ""


@dataclass
class ValidationReport:
    probes: list

    @property
    def all_passed(self) -> bool:
        return all(p.passed for p in self.probes)

    def failures(self):
        return [p for p in self.probes if not p.passed]


def _lip_bound(C, m, pa, pb):
    return C * (1.0 + sup_norm(pa) ** m + sup_norm(pb) ** m) * path_dist(pa, pb).sup_component


def validate(model: Model, n_probes: int = 100, seed: int = 0,
             grid_steps: int = 8, horizon: float = 1.0) -> ValidationReport:
    """Sampled falsification of the structural assumptions.

    Probes are randomized, not exhaustive; a pass means no witness was found,
    a fail carries the witnessing inputs.
    """
    if n_probes < 1:
        raise ValueError("need at least one probe")
    d, k, l = model.dims
    rng = np.random.default_rng(seed)
    from .paths import make_grid
    grid = make_grid(horizon, grid_steps)
    probes = []

    alpha_ok = 0.0 < model.alpha < 1.0
    probes.append(AssumptionProbe("alpha_in_(0,1)", alpha_ok, f"alpha={model.alpha}"))

    C, m, a = model.lip_C, model.growth_m, model.alpha
    slack = 1e-9
    bad_f = bad_g = bad_bs = bad_gg = None
    for _ in range(n_probes):
        ti = int(rng.integers(1, grid_steps + 1))
        pa = random_initial_path(grid, ti, d, rng)
        pb = random_initial_path(grid, ti, d, rng)
        y1, y2 = rng.normal(size=(2, k))
        z1, z2 = rng.normal(size=(2, k, d))
        base = _lip_bound(C, m, pa, pb)
        lhs_f = np.linalg.norm(model.f(pa, y1, z1) - model.f(pb, y2, z2))
        rhs_f = base + C * (np.linalg.norm(y1 - y2) + np.linalg.norm(z1 - z2))
        if lhs_f > rhs_f + slack and bad_f is None:
            bad_f = f"|df|={lhs_f:.4g} > bound {rhs_f:.4g} at t_index={ti}"
        lhs_g = np.linalg.norm(model.g(pa, y1, z1) - model.g(pb, y2, z2))
        rhs_g = base + C * np.linalg.norm(y1 - y2) + a * np.linalg.norm(z1 - z2)
        if lhs_g > rhs_g + slack and bad_g is None:
            bad_g = f"|dg|={lhs_g:.4g} > bound {rhs_g:.4g} at t_index={ti}"
        lhs_bs = (np.linalg.norm(model.b(pa) - model.b(pb))
                  + np.linalg.norm(model.sigma(pa) - model.sigma(pb)))
        if lhs_bs > base + slack and bad_bs is None:
            bad_bs = f"|db|+|dsigma|={lhs_bs:.4g} > bound {base:.4g}"
        # gg^T <= alpha zz^T + C (|g(.,0,0)|^2 + |y|^2) I, as symmetric matrices
        gv = model.g(pa, y1, z1)
        g00 = model.g(pa, np.zeros(k), np.zeros((k, d)))
        mat = (gv @ gv.T - a * (z1 @ z1.T)
               - C * (np.sum(g00 ** 2) + np.sum(y1 ** 2)) * np.eye(k))
        if np.max(np.linalg.eigvalsh(mat)) > slack and bad_gg is None:
            bad_gg = f"gg^T bound violated by {np.max(np.linalg.eigvalsh(mat)):.4g}"

    probes.append(AssumptionProbe("f_lipschitz", bad_f is None, bad_f or ""))
    probes.append(AssumptionProbe("g_lipschitz_contraction", bad_g is None, bad_g or ""))
    probes.append(AssumptionProbe("b_sigma_lipschitz", bad_bs is None, bad_bs or ""))
    probes.append(AssumptionProbe("gg_transpose_bound", bad_gg is None, bad_gg or ""))
    return ValidationReport(probes)


# -- registry ------------------------------------------------------------

def _zero_f(path, y, z):
    return np.zeros_like(np.atleast_1d(y))


def _zero_g(path, y, z, l=1):
    return np.zeros((len(np.atleast_1d(y)), l))


def _scalar_base(name, Phi, phi_batch, f=None, g=None, **kw):
    d = k = l = 1
    defaults = dict(
        b=lambda p: np.zeros(1),
        sigma=lambda p: np.eye(1),
        b_batch=lambda vals: np.zeros((vals.shape[0], 1)),
        sigma_batch=lambda vals: np.broadcast_to(np.eye(1), (vals.shape[0], 1, 1)),
        Phi=Phi,
        phi_batch=phi_batch,
        f=f or _zero_f,
        g=g or (lambda p, y, z: _zero_g(p, y, z, l)),
        f_is_zero=f is None,
        g_is_zero=g is None,
        lip_C=2.0,
        growth_m=1.0,
        alpha=0.5,
        dims=(d, k, l),
        name=name,
    )
    defaults.update(kw)
    return Model(**defaults)


def registry() -> list[ModelRegistryEntry]:
    """Reference models; closed forms, where present, are exact oracles.

    The closed forms were re-derived by hand from the Gaussian transition
    law of the driverless forward state (zero drift, unit diffusion):
    conditionally on the path up to t, X(s) = gamma(t) + (W(s) - W(t)).
    """
    entries = []

    # heat: terminal square of the endpoint.
    # u(gamma_t) = E[(gamma(t) + W_{T-t})^2] = gamma(t)^2 + (T - t).
    m1 = _scalar_base(
        "heat",
        Phi=lambda p: np.array([p.endpoint[0] ** 2]),
        phi_batch=lambda vals, dt: vals[:, -1, :1] ** 2,
        f_is_zero=True, g_is_zero=True,
    )
    entries.append(ModelRegistryEntry(
        "heat", m1,
        closed_form_u=lambda p: np.array([p.endpoint[0] ** 2 + (p.horizon - p.current_time)]),
        closed_form_Z=lambda p: np.array([[2.0 * p.endpoint[0]]]),
        notes="second moment of a shifted Brownian endpoint",
    ))

    # asian: integral of the path over the full horizon.
    # u(gamma_t) = int_0^t gamma + gamma(t) (T - t) since E[X(s)] = gamma(t),
    # exact for the left-endpoint integral convention.
    def _phi_asian(p):
        return np.array([running_integral(p)[0]])

    m2 = _scalar_base(
        "asian",
        Phi=_phi_asian,
        phi_batch=lambda vals, dt: vals[:, :-1, :1].sum(axis=1) * dt,
        markovian_flag=False,
        f_is_zero=True, g_is_zero=True,
        lip_C=2.0, growth_m=0.0,
    )

    def _u_asian(p):
        return np.array([running_integral(p)[0] + p.endpoint[0] * (p.horizon - p.current_time)])

    entries.append(ModelRegistryEntry(
        "asian", m2,
        closed_form_u=_u_asian,
        closed_form_Z=lambda p: np.array([[p.horizon - p.current_time]]),
        notes="conditional expectation of integrated Brownian motion",
    ))

    # linear-g: backward-integral driver proportional to y.
    beta = 0.3
    m3 = _scalar_base(
        "linear-g",
        Phi=lambda p: p.endpoint[:1].copy(),
        phi_batch=lambda vals, dt: vals[:, -1, :1].copy(),
        g=lambda p, y, z: beta * np.atleast_1d(y)[:, None],
        g_batch=lambda vals, y, z, dt: beta * y[:, :, None],
        lip_C=1.0, growth_m=0.0, alpha=0.5,
    )
    entries.append(ModelRegistryEntry("linear-g", m3, notes="oracle: nested engine"))

    # nonlinear-f: classical-BSDE reduction.
    m4 = _scalar_base(
        "nonlinear-f",
        Phi=lambda p: np.sin(p.endpoint[:1]),
        phi_batch=lambda vals, dt: np.sin(vals[:, -1, :1]),
        f=lambda p, y, z: np.cos(np.atleast_1d(y)) + np.atleast_2d(z)[:, 0] / 2.0,
        f_batch=lambda vals, y, z, dt: np.cos(y) + z[:, :, 0] / 2.0,
        g_is_zero=True,
        lip_C=1.0, growth_m=0.0,
    )
    entries.append(ModelRegistryEntry("nonlinear-f", m4, notes="oracle: nested engine"))

    # z-in-g: exercises the z-contraction channel of the backward driver.
    alpha0 = 0.5
    m5 = _scalar_base(
        "z-in-g",
        Phi=lambda p: p.endpoint[:1].copy(),
        phi_batch=lambda vals, dt: vals[:, -1, :1].copy(),
        g=lambda p, y, z: alpha0 * np.atleast_2d(z)[:, :1],
        g_batch=lambda vals, y, z, dt: alpha0 * z[:, :, :1],
        lip_C=1.0, growth_m=0.0, alpha=0.5,
    )
    entries.append(ModelRegistryEntry("z-in-g", m5, notes="oracle: nested engine"))

    # path-f: genuinely non-Markovian time driver via the running maximum.
    m6 = _scalar_base(
        "path-f",
        Phi=lambda p: p.endpoint[:1].copy(),
        phi_batch=lambda vals, dt: vals[:, -1, :1].copy(),
        f=lambda p, y, z: running_max(p)[:1] - np.atleast_1d(y),
        f_batch=lambda vals, y, z, dt: vals[:, :, :1].max(axis=1) - y,
        g_is_zero=True,
        markovian_flag=False,
        lip_C=1.0, growth_m=0.0,
    )
    entries.append(ModelRegistryEntry("path-f", m6, notes="oracle: nested engine"))
    return entries


def shifted_model(model: Model, shift_phi: float = 0.0, shift_f: float = 0.0) -> Model:
    """The same model with constants added to the terminal functional and the
    time driver; with nonnegative shifts the result dominates the original."""
    return replace(
        model,
        name=f"{model.name}+shift",
        Phi=lambda p: model.Phi(p) + shift_phi,
        phi_batch=(lambda v, dt: model.phi_batch(v, dt) + shift_phi)
        if model.phi_batch else None,
        f=lambda p, y, z: model.f(p, y, z) + shift_f,
        f_batch=(lambda v, y, z, dt: model.f_batch(v, y, z, dt) + shift_f)
        if model.f_batch else (
            (lambda v, y, z, dt: np.full_like(y, shift_f)) if model.f_is_zero else None
        ),
        f_is_zero=model.f_is_zero and shift_f == 0.0,
    )


def get_entry(name: str) -> ModelRegistryEntry:
    for e in registry():
        if e.name == name:
            return e
    raise KeyError(f"unknown model {name!r}; known: {[e.name for e in registry()]}")


def get_model(name: str) -> Model:
    return get_entry(name).model
