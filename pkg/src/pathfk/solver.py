"""Backward solvers for the coupled two-driver system.

Two engines estimate the same discrete backward scheme:

* a regression Monte Carlo engine, projecting conditional expectations onto
  polynomial features of the forward history (plus the remaining increments
  of the second driver when the backward-integral driver is active), and
* a nested quadrature engine, expanding a non-recombining Gauss-Hermite tree
  over the first driver while the second driver's increments are frozen per
  outer sample.

Both engines share one discretization: time and backward integrands are
evaluated at the right endpoint of each step (with the terminal z taken as
zero), and optional refinement passes move the y/z arguments of the drivers
from the right endpoint to the current step, iterating toward the implicit
scheme.  The refinement is a fixed-point iteration whose contraction rests
on the driver's z-coefficient being strictly below one.
"""

from __future__ import annotations

import io
import itertools
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BudgetError, SolverError
from .models import Model, running_integral, running_max
from .paths import Path, make_grid
from .simulation import (BrownianPair, ScenarioEnsemble, sample_drivers,
                         simulate_forward, _keyed_normals)

_MAX_TREE_NODES = 1_000_000
_MAX_TREE_DEPTH = 8
_TAG_FROZEN_B = 3
_MIN_SCENARIOS_PER_FEATURE = 50


# -- regression features -------------------------------------------------


@dataclass
class RegressionBasis:
    """Polynomial features of the forward history used by the projections.

    feature_set names the raw coordinates extracted from the history at the
    projection time: "endpoint" uses the current state only;
    "endpoint+runmax+runint" adds the running maximum and the running
    integral, for path-dependent problems.  All monomials in the raw
    coordinates up to the given total degree are used.  include_future_noise
    adds the remaining-horizon increment sum of the second driver as extra
    degree-one features; left unset, it switches on exactly when the model
    has a nonzero backward driver.
    """

    feature_set: str = "endpoint"
    degree: int = 2
    include_future_noise: Optional[bool] = None

    _SETS = ("endpoint", "endpoint+runmax+runint")

    def __post_init__(self):
        if self.feature_set not in self._SETS:
            raise ValueError(
                f"unknown feature set {self.feature_set!r}; choose from {self._SETS}"
            )
        if not (1 <= self.degree <= 2):
            raise ValueError(f"degree must be 1 or 2, got {self.degree}")

    def _raw(self, X: np.ndarray, i: int, dt: float) -> np.ndarray:
        cols = [X[:, i, :]]
        if self.feature_set == "endpoint+runmax+runint":
            cols.append(X[:, : i + 1, :].max(axis=1))
            if i == 0:
                cols.append(np.zeros_like(X[:, 0, :]))
            else:
                cols.append(X[:, :i, :].sum(axis=1) * dt)
        return np.concatenate(cols, axis=1)

    def matrix(self, X: np.ndarray, i: int, dt: float,
               dB: Optional[np.ndarray] = None) -> np.ndarray:
        """Design matrix at step i: constant, monomials, optional noise sums."""
        raw = self._raw(X, i, dt)
        n, r = raw.shape
        cols = [np.ones((n, 1))]
        for deg in range(1, self.degree + 1):
            for combo in itertools.combinations_with_replacement(range(r), deg):
                prod = np.ones(n)
                for c in combo:
                    prod = prod * raw[:, c]
                cols.append(prod[:, None])
        if dB is not None and i < dB.shape[1]:
            cols.append(dB[:, i:, :].sum(axis=1))
        return np.concatenate(cols, axis=1)


def _project(A: np.ndarray, targets: np.ndarray, with_se: bool = False,
             se_targets: Optional[np.ndarray] = None):
    """Least-squares fitted values, with a small ridge as the fallback when
    the normal equations are rank deficient.  With with_se, also returns the
    pointwise standard error of each fitted value; the residual variance
    comes from se_targets when given (the step target understates the noise
    carried by a backward-recursed fit, so callers pass the accumulated
    value-to-go there)."""
    coef, _, rank, _ = np.linalg.lstsq(A, targets, rcond=None)
    G = A.T @ A
    if rank < A.shape[1] or not np.all(np.isfinite(coef)):
        lam = 1e-8 * np.trace(G) / G.shape[0]
        G = G + lam * np.eye(G.shape[0])
        coef = np.linalg.solve(G, A.T @ targets)
    fitted = A @ coef
    if not with_se:
        return fitted
    n, p = A.shape
    ref = targets if se_targets is None else se_targets
    ref_fit = fitted if se_targets is None else _project(A, se_targets)
    resid_var = np.sum((ref - ref_fit) ** 2, axis=0) / max(n - p, 1)
    leverage = np.einsum("ni,ij,nj->n", A, np.linalg.pinv(G), A)
    se = np.sqrt(np.clip(leverage, 0.0, None)[:, None] * resid_var[None, :])
    return fitted, se


# -- solutions -----------------------------------------------------------


@dataclass
class BackwardSolution:
    """Sampled backward pair on the grid, plus the field value at the
    initial time.

    y has shape (n, N+1, k) and z has shape (n, N, k, d); entries before the
    initial time index repeat the initial-time value (y) or are zero (z).
    For the nested engine n counts outer frozen-noise samples and the rows
    hold quadrature means over the tree.
    """

    grid_times: np.ndarray
    t_index: int
    y: np.ndarray
    z: np.ndarray
    u_estimate: np.ndarray       # (k,)
    u_stderr: np.ndarray         # (k,)
    engine_tag: str
    scheme_params: dict = field(default_factory=dict)
    rollout: Optional[np.ndarray] = field(default=None, repr=False)   # (n, k)
    fit_se: Optional[np.ndarray] = field(default=None, repr=False)    # (n, N+1, k)

    @property
    def n_samples(self) -> int:
        return self.y.shape[0]

    def _index(self, s: float) -> int:
        dt = float(self.grid_times[1] - self.grid_times[0])
        idx = int(round(s / dt))
        if idx < 0 or idx >= len(self.grid_times) or abs(self.grid_times[idx] - s) > 1e-9:
            raise ValueError(f"time {s} is not on the grid")
        return idx

    def Y(self, s: float) -> np.ndarray:
        """Per-sample y at time s; times before the initial time return the
        initial-time value."""
        return self.y[:, max(self._index(s), self.t_index)]

    def Z(self, s: float) -> np.ndarray:
        idx = self._index(s)
        if idx >= self.z.shape[1]:
            raise ValueError(f"z is defined on steps, not at the horizon {s}")
        if idx < self.t_index:
            return np.zeros_like(self.z[:, self.t_index])
        return self.z[:, idx]

    def summary_json(self) -> str:
        return json.dumps(
            {
                "u": self.u_estimate.tolist(),
                "stderr": self.u_stderr.tolist(),
                "engine": self.engine_tag,
                "params": self.scheme_params,
                "seed": self.scheme_params.get("seed"),
            },
            sort_keys=True,
        )

    def to_csv(self, max_scenarios: Optional[int] = None) -> str:
        """Long-format dump: scenario,step,t,y_1..y_k,z_11..z_kd (z omitted
        at the horizon step, where it is undefined)."""
        n, Np1, k = self.y.shape
        d = self.z.shape[3]
        if max_scenarios is not None:
            n = min(n, max_scenarios)
        buf = io.StringIO()
        head = ["scenario", "step", "t"]
        head += [f"y_{j+1}" for j in range(k)]
        head += [f"z_{j+1}{m+1}" for j in range(k) for m in range(d)]
        buf.write(",".join(head) + "\n")
        for s in range(n):
            for i in range(Np1):
                row = [str(s), str(i), repr(float(self.grid_times[i]))]
                row += [repr(float(v)) for v in self.y[s, i]]
                if i < Np1 - 1:
                    row += [repr(float(v)) for v in self.z[s, i].ravel()]
                else:
                    row += [""] * (k * d)
                buf.write(",".join(row) + "\n")
        return buf.getvalue()


# -- shared driver evaluation -------------------------------------------


def _eval_f(model: Model, grid, X, i_path, y, z, dt):
    if model.f_is_zero:
        return np.zeros_like(y)
    if model.f_batch is not None:
        return model.f_batch(X[:, : i_path + 1], y, z, dt)
    out = np.empty_like(y)
    for s in range(X.shape[0]):
        out[s] = model.f(Path(grid, X[s, : i_path + 1]), y[s], z[s])
    return out


def _eval_g(model: Model, grid, X, i_path, y, z, dt):
    d, k, l = model.dims
    if model.g_is_zero:
        return np.zeros((X.shape[0], k, l))
    if model.g_batch is not None:
        return model.g_batch(X[:, : i_path + 1], y, z, dt)
    out = np.empty((X.shape[0], k, l))
    for s in range(X.shape[0]):
        out[s] = model.g(Path(grid, X[s, : i_path + 1]), y[s], z[s])
    return out


def _terminal(model: Model, grid, X, dt):
    if model.phi_batch is not None:
        return np.asarray(model.phi_batch(X, dt), dtype=np.float64)
    k = model.dims[1]
    out = np.empty((X.shape[0], k))
    for s in range(X.shape[0]):
        out[s] = model.Phi(Path(grid, X[s]))
    return out


# -- regression engine ---------------------------------------------------


def solve_regression(model: Model, ensemble: ScenarioEnsemble,
                     basis: Optional[RegressionBasis] = None,
                     picard_iters: int = 2,
                     record_fit_se: bool = False) -> BackwardSolution:
    """Backward regression sweep over a simulated ensemble.

    Pass 0 is the explicit scheme (drivers read the right-endpoint y/z);
    each further pass re-evaluates the drivers at the previous pass's
    current-step y/z.  If the pass-to-pass update norm grows on two
    consecutive passes the fixed point is diverging and a SolverError is
    raised.
    """
    if picard_iters < 1:
        raise ValueError(f"need at least one pass, got picard_iters={picard_iters}")
    basis = basis or RegressionBasis()
    d, k, l = model.dims
    X = ensemble.x_values[ensemble.valid_mask]
    drivers = ensemble.drivers
    dW = drivers.dW[ensemble.valid_mask]
    dB = drivers.dB[ensemble.valid_mask]
    n, Np1, _ = X.shape
    N = Np1 - 1
    i_t = ensemble.initial.t_index
    dt = ensemble.initial.dt
    grid = ensemble.initial.grid_times

    use_noise = basis.include_future_noise
    if use_noise is None:
        use_noise = not model.g_is_zero
    dB_feat = dB if use_noise else None

    # budget: every projection must stay overdetermined by a wide margin
    probe_cols = basis.matrix(X[:2], i_t, dt, dB_feat[:2] if use_noise else None).shape[1]
    if probe_cols * _MIN_SCENARIOS_PER_FEATURE > n:
        raise BudgetError(
            f"{probe_cols} features need at least "
            f"{probe_cols * _MIN_SCENARIOS_PER_FEATURE} scenarios, got {n}"
        )

    features = {i: basis.matrix(X, i, dt, dB_feat) for i in range(i_t, N)}
    phi = _terminal(model, grid, X, dt)

    Y = np.zeros((n, N + 1, k))
    Z = np.zeros((n, N + 1, k, d))
    Y[:, N] = phi
    Y_prev = Z_prev = None
    update_norms = []
    rollout = None
    fit_se = np.zeros((n, N + 1, k)) if record_fit_se else None

    for p in range(picard_iters):
        Y_new = np.zeros_like(Y)
        Z_new = np.zeros_like(Z)
        Y_new[:, N] = phi
        # pathwise accumulation of the drivers; its mean equals the field
        # estimate and its spread carries the full sampling error
        rollout = phi.copy()
        for i in range(N - 1, i_t - 1, -1):
            if p == 0:
                fy, fz = Y_new[:, i + 1], Z_new[:, i + 1]
            else:
                fy, fz = Y[:, i], Z[:, i]
            fv = _eval_f(model, grid, X, i + 1, fy, fz, dt)
            gv = _eval_g(model, grid, X, i + 1, fy, fz, dt)
            gdB = np.einsum("nkl,nl->nk", gv, dB[:, i])
            A = features[i]
            # center the z-target with the fitted continuation value; the
            # centering term is a function of the features, so it leaves the
            # conditional expectation unchanged while removing the dominant
            # 1/dt variance of the raw product
            cont = Y_new[:, i + 1] + gdB
            center = _project(A, cont)
            z_target = (cont - center)[:, :, None] * dW[:, i][:, None, :] / dt
            Z_new[:, i] = _project(A, z_target.reshape(n, k * d)).reshape(n, k, d)
            y_target = Y_new[:, i + 1] + fv * dt + gdB
            rollout = rollout + fv * dt + gdB
            if record_fit_se and p == picard_iters - 1:
                Y_new[:, i], fit_se[:, i] = _project(A, y_target,
                                                     with_se=True,
                                                     se_targets=rollout)
            else:
                Y_new[:, i] = _project(A, y_target)
        if Y_prev is not None:
            diff = (np.sqrt(np.mean((Y_new - Y) ** 2))
                    + np.sqrt(np.mean((Z_new - Z) ** 2)))
            update_norms.append(diff)
            if len(update_norms) >= 3 and update_norms[-1] > update_norms[-2] > update_norms[-3]:
                raise SolverError(
                    "refinement passes are diverging (update norms "
                    f"{update_norms}); the scheme's fixed point requires the "
                    f"backward driver's z-coefficient {model.alpha} to act as "
                    "a contraction at this step size"
                )
        Y_prev, Z_prev = Y, Z
        Y, Z = Y_new, Z_new

    Y[:, :i_t] = Y[:, i_t][:, None]
    u_estimate = Y[:, i_t].mean(axis=0)
    u_stderr = rollout.std(axis=0, ddof=1) / np.sqrt(n)
    return BackwardSolution(
        grid_times=grid,
        t_index=i_t,
        y=Y,
        z=Z[:, :N],
        u_estimate=u_estimate,
        u_stderr=u_stderr,
        engine_tag="regression",
        scheme_params={
            "picard_iters": picard_iters,
            "feature_set": basis.feature_set,
            "degree": basis.degree,
            "future_noise_features": bool(use_noise),
            "n_scenarios": int(n),
            "seed": int(drivers.seed),
            "update_norms": [float(v) for v in update_norms],
        },
        rollout=rollout,
        fit_se=fit_se,
    )


# -- nested quadrature engine -------------------------------------------


def _gauss_hermite(branching: int):
    nodes, weights = np.polynomial.hermite_e.hermegauss(branching)
    return nodes, weights / weights.sum()


def _tree_forward(model: Model, initial: Path, branching: int):
    """Expand the non-recombining quadrature tree of forward histories.

    Returns (levels, dw_nodes, w_nodes, level_w): per-level history arrays,
    the per-step increment abscissae and weights, and cumulative per-level
    weights.  The expansion is independent of the frozen second driver, so
    one tree serves every outer sample.
    """
    d, k, l = model.dims
    grid = initial.grid_times
    dt = initial.dt
    i_t = initial.t_index
    N = len(grid) - 1
    n_rem = N - i_t
    if n_rem > _MAX_TREE_DEPTH:
        raise BudgetError(
            f"{n_rem} remaining steps exceed the tree depth limit {_MAX_TREE_DEPTH}"
        )
    per_step = branching ** d
    if per_step ** max(n_rem, 1) > _MAX_TREE_NODES:
        raise BudgetError(
            f"tree would hold {per_step ** n_rem} leaves, over the "
            f"{_MAX_TREE_NODES} budget; lower the branching or the depth"
        )
    nodes1, weights1 = _gauss_hermite(branching)
    if d == 1:
        dw_nodes = nodes1[:, None] * np.sqrt(dt)       # (per_step, d)
        w_nodes = weights1
    else:
        combos = list(itertools.product(range(branching), repeat=d))
        dw_nodes = np.array([[nodes1[c] for c in combo] for combo in combos]) * np.sqrt(dt)
        w_nodes = np.array([np.prod([weights1[c] for c in combo]) for combo in combos])

    # forward expansion, level j holds per_step**j full histories
    levels = [np.repeat(initial.values[None], 1, axis=0)]   # (1, i_t+1, d)
    for j in range(n_rem):
        X = levels[-1]
        m = X.shape[0]
        if model.b_batch is not None and model.sigma_batch is not None:
            bv = model.b_batch(X)
            sv = model.sigma_batch(X)
        else:
            bv = np.empty((m, d))
            sv = np.empty((m, d, d))
            for s in range(m):
                p = Path(grid, X[s])
                bv[s] = model.b(p)
                sv[s] = model.sigma(p)
        step = bv[:, None, :] * dt + np.einsum("mij,qj->mqi", sv, dw_nodes)
        new_end = (X[:, -1][:, None, :] + step).reshape(m * per_step, d)
        hist = np.repeat(X, per_step, axis=0)
        levels.append(np.concatenate([hist, new_end[:, None, :]], axis=1))

    # level weights for quadrature means
    level_w = [np.ones(1)]
    for j in range(n_rem):
        level_w.append((level_w[-1][:, None] * w_nodes[None, :]).ravel())
    return levels, dw_nodes, w_nodes, level_w


def _tree_backward(model: Model, initial: Path, tree, dB: np.ndarray,
                   picard_iters: int):
    """Backward sweep on an expanded tree for one frozen second driver.

    Returns (y_root (k,), z_root (k,d), y_means (N_rem+1, k),
    z_means (N_rem, k, d)) where the means are quadrature-weighted averages
    over each tree level.
    """
    levels, dw_nodes, w_nodes, level_w = tree
    d, k, l = model.dims
    grid = initial.grid_times
    dt = initial.dt
    i_t = initial.t_index
    n_rem = len(levels) - 1
    per_step = dw_nodes.shape[0]

    phi = _terminal(model, grid, levels[-1], dt)          # (leaves, k)
    y_levels = [None] * (n_rem + 1)
    z_levels = [None] * (n_rem + 1)
    y_levels[n_rem] = phi
    z_levels[n_rem] = np.zeros((phi.shape[0], k, d))
    prev_y = prev_z = None

    for p in range(picard_iters):
        new_y = [None] * (n_rem + 1)
        new_z = [None] * (n_rem + 1)
        new_y[n_rem] = phi
        new_z[n_rem] = z_levels[n_rem]
        for j in range(n_rem - 1, -1, -1):
            m = levels[j].shape[0]
            yc = new_y[j + 1].reshape(m, per_step, k)
            zc = new_z[j + 1].reshape(m, per_step, k, d)
            if p == 0:
                fy = new_y[j + 1]
                fz = new_z[j + 1]
            else:
                fy = np.repeat(y_levels[j], per_step, axis=0)
                fz = np.repeat(z_levels[j], per_step, axis=0)
            fv = _eval_f(model, grid, levels[j + 1], i_t + j + 1, fy, fz, dt)
            gv = _eval_g(model, grid, levels[j + 1], i_t + j + 1, fy, fz, dt)
            gdB = np.einsum("nkl,l->nk", gv, dB[j]).reshape(m, per_step, k)
            fv = fv.reshape(m, per_step, k)
            integ = yc + gdB
            new_z[j] = np.einsum("q,mqk,qd->mkd", w_nodes, integ, dw_nodes) / dt
            new_y[j] = np.einsum("q,mqk->mk", w_nodes, integ + fv * dt)
        y_levels, z_levels = new_y, new_z

    y_means = np.array([
        np.einsum("m,mk->k", level_w[j], y_levels[j]) for j in range(n_rem + 1)
    ])
    z_means = np.array([
        np.einsum("m,mkd->kd", level_w[j], z_levels[j]) for j in range(n_rem)
    ]) if n_rem else np.zeros((0, k, d))
    return y_levels[0][0], z_levels[0][0], y_means, z_means


def frozen_noise_increments(grid_times: np.ndarray, t_index: int, l: int,
                            seed: int, n_outer: int) -> np.ndarray:
    """Remaining-horizon increments of the second driver, (n_outer, N-t, l),
    reproducible from (seed, outer index) alone."""
    N = len(grid_times) - 1
    dt = float(grid_times[1] - grid_times[0])
    z = _keyed_normals(seed, _TAG_FROZEN_B, (n_outer, N - t_index, l))
    return z * np.sqrt(dt)


def solve_nested(model: Model, initial: Path, n_outer: int, seed: int,
                 branching: int = 8, picard_iters: int = 2,
                 frozen_B: Optional[np.ndarray] = None) -> BackwardSolution:
    """Nested quadrature estimate averaged over outer frozen-noise samples.

    frozen_B, when given, must be the (N - t_index, l) increment array of the
    second driver; the solve then uses that single outer sample and reports a
    zero spread.
    """
    d, k, l = model.dims
    grid = initial.grid_times
    N = len(grid) - 1
    i_t = initial.t_index
    n_rem = N - i_t
    if frozen_B is not None:
        frozen_B = np.asarray(frozen_B, dtype=np.float64).reshape(n_rem, l)
        all_dB = frozen_B[None]
    else:
        if n_outer < 1:
            raise ValueError(f"need at least one outer sample, got {n_outer}")
        all_dB = frozen_noise_increments(grid, i_t, l, seed, n_outer)
    n_used = all_dB.shape[0]

    tree = _tree_forward(model, initial, branching)
    y = np.zeros((n_used, N + 1, k))
    z = np.zeros((n_used, N, k, d))
    roots = np.zeros((n_used, k))
    for o in range(n_used):
        y_root, z_root, y_means, z_means = _tree_backward(
            model, initial, tree, all_dB[o], picard_iters
        )
        roots[o] = y_root
        y[o, i_t:] = y_means
        y[o, :i_t] = y_means[0]
        if n_rem:
            z[o, i_t:] = z_means
    u_estimate = roots.mean(axis=0)
    if n_used > 1:
        u_stderr = roots.std(axis=0, ddof=1) / np.sqrt(n_used)
    else:
        u_stderr = np.zeros(k)
    return BackwardSolution(
        grid_times=grid,
        t_index=i_t,
        y=y,
        z=z,
        u_estimate=u_estimate,
        u_stderr=u_stderr,
        engine_tag="nested",
        scheme_params={
            "picard_iters": picard_iters,
            "branching": int(branching),
            "n_outer": int(n_used),
            "seed": int(seed),
            "frozen_noise_supplied": frozen_B is not None,
        },
    )


# -- field evaluation ----------------------------------------------------


def evaluate_u(model: Model, initial: Path, engine: str = "regression",
               n_scenarios: int = 4000, seed: int = 0,
               basis: Optional[RegressionBasis] = None,
               branching: int = 8, picard_iters: int = 2,
               frozen_B: Optional[np.ndarray] = None):
    """Field value at the tip of the given path: (estimate (k,), stderr (k,)).

    frozen_B conditions on a fixed remaining second driver and is only
    meaningful for the nested engine.
    """
    if engine == "regression":
        if frozen_B is not None:
            raise ValueError(
                "conditioning on a frozen second driver needs the nested engine"
            )
        d, k, l = model.dims
        drivers = sample_drivers(initial.grid_times, n_scenarios, seed, d=d, l=l)
        ens = simulate_forward(model, initial, drivers)
        sol = solve_regression(model, ens, basis=basis, picard_iters=picard_iters)
    elif engine == "nested":
        sol = solve_nested(model, initial, n_scenarios, seed, branching=branching,
                           picard_iters=picard_iters, frozen_B=frozen_B)
    else:
        raise ValueError(f"unknown engine {engine!r}; use 'regression' or 'nested'")
    return sol.u_estimate, sol.u_stderr


def difference_quotient(model: Model, initial: Path, direction: int, h: float,
                        engine: str = "regression", **kwargs) -> np.ndarray:
    """Central difference of the field under an endpoint bump, shape (k,).

    Both bumped evaluations reuse the same seed, so the driver samples are
    common and the sampling noise largely cancels in the quotient.
    """
    from .paths import vertical_bump
    if h <= 0:
        raise ValueError(f"bump size must be positive, got {h}")
    e = np.zeros(initial.dimension)
    e[direction] = h
    up, _ = evaluate_u(model, vertical_bump(initial, e), engine=engine, **kwargs)
    dn, _ = evaluate_u(model, vertical_bump(initial, -e), engine=engine, **kwargs)
    return (up - dn) / (2.0 * h)
