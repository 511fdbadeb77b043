"""Statistical verification of the structural identities tying the backward
pair to the path field: the representation of z through the field gradient,
the discrete field equation along simulated paths, the flow (tower)
consistency, comparison monotonicity, stability under coefficient
discretization, and moment / regularity envelopes.

Every check returns a CheckReport whose statistic is normalized so that the
pass threshold is 1.0 unless stated otherwise.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .calculus import (DerivativeEstimate, PathFunctional, vertical_derivative,
                       vertical_hessian, horizontal_derivative)
from .errors import PreconditionError
from .models import Model, ModelRegistryEntry
from .paths import (Path, discretize, make_grid, path_dist, restrict,
                    sup_norm, vertical_bump)
from .reports import CheckReport
from .simulation import (ScenarioEnsemble, random_initial_path, sample_drivers,
                         simulate_forward)
from .solver import (BackwardSolution, RegressionBasis, evaluate_u,
                     difference_quotient, solve_nested, solve_regression)

_EPS = 1e-12


# -- field functionals ---------------------------------------------------


def field_from_closed_form(entry: ModelRegistryEntry) -> PathFunctional:
    """Wrap a registry closed form as a path functional; the gradient is
    derived from the closed-form z when present (identity diffusion)."""
    if entry.closed_form_u is None:
        raise ValueError(f"model {entry.name!r} has no closed form")
    d_x = None
    if entry.closed_form_Z is not None:
        d_x = lambda p: np.asarray(entry.closed_form_Z(p), dtype=np.float64)
    k = entry.model.dims[1]
    return PathFunctional(eval=entry.closed_form_u, output_shape=(k,),
                          regularity_tag="C12", d_x=d_x)


def field_from_engine(model: Model, engine: str = "nested",
                      **engine_kwargs) -> PathFunctional:
    """The solver-defined field as a path functional (estimates only)."""
    k = model.dims[1]

    def _eval(p: Path) -> np.ndarray:
        u, _ = evaluate_u(model, p, engine=engine, **engine_kwargs)
        return u

    return PathFunctional(eval=_eval, output_shape=(k,), regularity_tag="C12")


# -- field equation residual --------------------------------------------


def spde_residual(u: PathFunctional, model: Model,
                  ensemble: ScenarioEnsemble) -> np.ndarray:
    """Per-scenario residual of the discrete field equation along the
    simulated paths.

    The time-derivative term is eliminated through the pathwise chain rule,
    so each step contributes
        -(L u + f) dt - g dB + D_x u . dX + 0.5 tr(D_xx u dX dX^T),
    where L is the forward generator; the residual is the gap between that
    telescoped sum and the terminal value.  Scalar fields only.
    """
    if model.dims[1] != 1:
        raise ValueError("residual check supports scalar fields only")
    grid = ensemble.initial.grid_times
    dt = ensemble.initial.dt
    i_t = ensemble.initial.t_index
    N = len(grid) - 1
    X = ensemble.x_values[ensemble.valid_mask]
    dB = ensemble.drivers.dB[ensemble.valid_mask]
    n = X.shape[0]
    res = np.zeros(n)
    for s in range(n):
        path = Path(grid, X[s])
        total = u(restrict(path, grid[i_t]))[0] - u(path)[0]
        z_next = None
        for i in range(N - 1, i_t - 1, -1):
            pi = restrict(path, grid[i])
            p_next = restrict(path, grid[i + 1]) if i + 1 < N else path
            dx = (u.d_x(pi) if u.d_x is not None
                  else vertical_derivative(u, pi).value).reshape(-1)
            dxx = (u.d_xx(pi) if u.d_xx is not None
                   else vertical_hessian(u, pi).value).reshape(path.dimension,
                                                               path.dimension)
            sig = model.sigma(pi)
            y_i = u(pi)
            z_i = (sig.T @ dx)[None, :]
            gen = float(model.b(pi) @ dx) + 0.5 * np.trace(sig @ sig.T @ dxx)
            fv = 0.0 if model.f_is_zero else float(model.f(pi, y_i, z_i)[0])
            if model.g_is_zero:
                g_term = 0.0
            else:
                y_next = u(p_next)
                if z_next is None:
                    dx_n = (u.d_x(p_next) if u.d_x is not None
                            else vertical_derivative(u, p_next).value).reshape(-1)
                    z_next = (model.sigma(p_next).T @ dx_n)[None, :]
                g_term = float(model.g(p_next, y_next, z_next)[0] @ dB[s, i])
            dX = X[s, i + 1] - X[s, i]
            total += (-(gen + fv) * dt - g_term + dx @ dX
                      + 0.5 * float(dX @ dxx @ dX))
            z_next = z_i
        res[s] = total
    return res


def spde_residual_check(u: PathFunctional, model: Model,
                        ensemble: ScenarioEnsemble, tol: float,
                        name: str = "field_equation_residual") -> CheckReport:
    res = spde_residual(u, model, ensemble)
    rms = float(np.sqrt(np.mean(res ** 2)))
    scale = 1.0 + float(np.abs(ensemble.x_values).max())
    return CheckReport.make(
        name, rms / scale, tol, len(res),
        details=[f"rms residual {rms:.3g} over {len(res)} paths, scale {scale:.3g}"],
        samples=[(f"path_{s}", r) for s, r in enumerate(res[:50])],
    )


# -- z representation ----------------------------------------------------


def z_representation_check(model: Model, solution: BackwardSolution,
                           ensemble: ScenarioEnsemble,
                           z_reference: Optional[Callable[[Path], np.ndarray]] = None,
                           u: Optional[PathFunctional] = None,
                           n_sub: int = 100, tol: float = 0.05,
                           name: str = "z_representation") -> CheckReport:
    """RMS relative gap, over a scenario-times-steps subsample, between the
    solver's z and the diffusion-weighted field gradient along each path.

    The gradient side comes from the closed form when supplied, otherwise
    from finite differences of the given field functional; samples whose
    derivative estimate is flagged unreliable are excluded and the exclusion
    rate is reported.
    """
    if z_reference is None and u is None:
        raise ValueError("need either a closed-form z or a field functional")
    grid = ensemble.initial.grid_times
    i_t = solution.t_index
    N = len(grid) - 1
    X = ensemble.x_values[ensemble.valid_mask]
    n_sub = min(n_sub, X.shape[0])
    rels = []
    excluded = 0
    for s in range(n_sub):
        for i in range(i_t, N):
            pi = Path(grid, X[s, : i + 1])
            if z_reference is not None:
                z_ref = np.asarray(z_reference(pi), dtype=np.float64)
            else:
                est = vertical_derivative(u, pi)
                if not est.is_reliable(0.05 * (1.0 + float(np.abs(est.value).max()))):
                    excluded += 1
                    continue
                z_ref = est.value.reshape(model.dims[1], model.dims[0]) @ model.sigma(pi)
            z_est = solution.z[s, i]
            rels.append(np.linalg.norm(z_est - z_ref)
                        / (1.0 + np.linalg.norm(z_ref)))
    rms = float(np.sqrt(np.mean(np.square(rels))))
    return CheckReport.make(
        name, rms, tol, len(rels),
        details=[f"{len(rels)} scenario-step samples, {excluded} excluded "
                 "for unreliable derivatives"],
        samples=[("rms", rms), ("max", float(np.max(rels))),
                 ("excluded", float(excluded))],
    )


def z_growth_check(solution: BackwardSolution, ensemble: ScenarioEnsemble,
                   q: float = 1.0, quantile: float = 0.99,
                   outlier_factor: float = 5.0,
                   name: str = "z_growth_envelope") -> CheckReport:
    """Fit the envelope constant for |z| against 1 + sup|X|^q at the bulk
    quantile and flag samples exceeding a multiple of it."""
    i_t = solution.t_index
    X = ensemble.x_values[ensemble.valid_mask]
    z = solution.z[:, i_t:]
    sup = 1.0 + np.max(np.linalg.norm(X, axis=2), axis=1) ** q
    znorm = np.sqrt(np.sum(z ** 2, axis=(1, 2, 3)) / max(z.shape[1], 1))
    ratios = znorm / sup
    C = float(np.quantile(ratios, quantile)) + _EPS
    frac_out = float(np.mean(ratios > outlier_factor * C))
    return CheckReport.make(
        name, frac_out, 0.0, len(ratios),
        details=[f"envelope constant {C:.4g} at quantile {quantile}",
                 f"outlier fraction beyond {outlier_factor}x: {frac_out:.4g}"],
        samples=[("envelope_constant", C), ("max_ratio", float(ratios.max()))],
    )


# -- field identity in both directions ----------------------------------


def feynman_kac_forward_check(model: Model, u: PathFunctional,
                              initials: Sequence[Path], tol_rel: float,
                              n_scenarios: int = 10_000, seed: int = 0,
                              basis: Optional[RegressionBasis] = None,
                              name: str = "field_identity_forward") -> CheckReport:
    """Solver estimate of the field against a candidate field over probe
    paths: each probe must sit within tol_rel relative error and within
    three standard errors."""
    if len(initials) < 1:
        raise ValueError("need at least one probe path")
    stats = []
    details = []
    for j, p in enumerate(initials):
        drv = sample_drivers(p.grid_times, n_scenarios, seed + j,
                             d=model.dims[0], l=model.dims[2])
        ens = simulate_forward(model, p, drv)
        sol = solve_regression(model, ens, basis=basis)
        target = u(p)
        err = np.abs(sol.u_estimate - target)
        rel = float(np.max(err / (1.0 + np.abs(target))))
        zscore = float(np.max(err / (3.0 * sol.u_stderr + _EPS)))
        stats.append(max(rel / tol_rel, zscore))
        details.append(
            f"probe {j}: estimate {sol.u_estimate.tolist()} vs {target.tolist()}"
            f" (rel {rel:.4g}, z/3 {zscore:.3g})"
        )
    return CheckReport.make(name, max(stats), 1.0, len(initials),
                            details=details,
                            samples=[(f"probe_{j}", s) for j, s in enumerate(stats)])


def feynman_kac_reverse_check(model: Model, initial: Path, tol: float,
                              n_check_paths: int = 10, seed: int = 0,
                              engine_kwargs: Optional[dict] = None,
                              name: str = "field_identity_reverse") -> CheckReport:
    """The solver-defined field, differentiated numerically, must satisfy the
    discrete field equation; the tolerance inflates with the reported
    derivative error estimates."""
    engine_kwargs = engine_kwargs or {}
    u = field_from_engine(model, engine="nested", **engine_kwargs)
    drv = sample_drivers(initial.grid_times, n_check_paths, seed,
                         d=model.dims[0], l=model.dims[2])
    ens = simulate_forward(model, initial, drv)
    # derivative reliability probe at the initial path
    d1 = vertical_derivative(u, initial)
    d2 = vertical_hessian(u, initial)
    inflation = 1.0 + 10.0 * (d1.est_error + d2.est_error)
    rep = spde_residual_check(u, model, ens, tol * inflation, name=name)
    rep.details.append(
        f"tolerance inflated by derivative error estimates: x{inflation:.3g}"
    )
    return rep


# -- flow (tower) consistency -------------------------------------------


def flow_check(model: Model, initial: Path, s: float,
               n_scenarios: int = 10_000, n_resolve: int = 20,
               n_resolve_scenarios: int = 2_000, seed: int = 0,
               basis: Optional[RegressionBasis] = None,
               name: str = "flow_consistency") -> CheckReport:
    """Restart consistency at an intermediate time: the solve-from-t
    estimate of the value at time s along a scenario must agree with a
    fresh solve restarted from that scenario's realized prefix.

    Each of n_resolve scenarios is re-solved with fresh drivers; agreement
    is demanded within three combined standard errors (restart stderr plus
    the fitted-value standard error of the original solve).
    """
    grid = initial.grid_times
    i_t = initial.t_index
    s_idx = initial.time_to_index(s)
    if s_idx <= i_t or s_idx >= len(grid) - 1:
        raise ValueError(
            f"intermediate time {s} must lie strictly between the initial "
            "time and the horizon")
    drv = sample_drivers(grid, n_scenarios, seed,
                         d=model.dims[0], l=model.dims[2])
    ens = simulate_forward(model, initial, drv)
    sol = solve_regression(model, ens, basis=basis, record_fit_se=True)
    X = ens.x_values[ens.valid_mask]

    stats = []
    samples = []
    for j in range(min(n_resolve, X.shape[0])):
        prefix = Path(grid, X[j, : s_idx + 1])
        drv_j = sample_drivers(grid, n_resolve_scenarios, seed + 1000 + j,
                               d=model.dims[0], l=model.dims[2])
        ens_j = simulate_forward(model, prefix, drv_j)
        sol_j = solve_regression(model, ens_j, basis=basis)
        direct = sol.y[j, s_idx]
        se_direct = sol.fit_se[j, s_idx]
        combined = np.sqrt(se_direct ** 2 + sol_j.u_stderr ** 2) + _EPS
        zstat = float(np.max(np.abs(direct - sol_j.u_estimate)
                             / (3.0 * combined)))
        stats.append(zstat)
        samples.append((f"scenario_{j}", zstat))
    stat = float(np.max(stats))
    return CheckReport.make(
        name, stat, 1.0, len(stats),
        details=[f"restart at s={s} over {len(stats)} scenarios; worst "
                 f"|direct-restart| at {stat:.3g} of its 3-stderr budget"],
        samples=samples,
    )


# -- comparison ----------------------------------------------------------


def _precondition_probes(m1: Model, m2: Model, grid, n_probes, seed):
    rng = np.random.default_rng(seed)
    d, k, l = m1.dims
    N = len(grid) - 1
    for _ in range(n_probes):
        ti = int(rng.integers(0, N + 1))
        p = random_initial_path(grid, ti, d, rng)
        y = rng.normal(size=k)
        z = rng.normal(size=(k, d))
        if ti == N:
            if np.any(m1.Phi(p) < m2.Phi(p) - _EPS):
                raise PreconditionError(
                    f"terminal ordering fails at a probe path: "
                    f"{m1.Phi(p)} < {m2.Phi(p)}"
                )
        if np.any(m1.f(p, y, z) < m2.f(p, y, z) - _EPS):
            raise PreconditionError("time-driver ordering fails at a probe")
        if np.any(np.abs(m1.g(p, y, z) - m2.g(p, y, z)) > _EPS):
            raise PreconditionError(
                "comparison requires identical backward drivers"
            )


def comparison_check(m1: Model, m2: Model, initial: Path,
                     n_scenarios: int = 10_000, seed: int = 0,
                     n_probes: int = 50, n_initials: int = 20,
                     n_initial_scenarios: int = 2_000,
                     basis: Optional[RegressionBasis] = None,
                     name: str = "comparison") -> CheckReport:
    """Ordered data must give ordered solutions.

    Scenario-wise: on the given initial path, with one shared driver sample,
    the pointwise backward values must satisfy the ordering at every grid
    time within a noise margin.  Expectation-level: over n_initials random
    initial paths the field estimates must be ordered within three combined
    standard errors.
    """
    if m1.dims[1] != 1:
        raise ValueError("comparison requires a scalar backward component")
    _precondition_probes(m1, m2, initial.grid_times, n_probes, seed)
    drv = sample_drivers(initial.grid_times, n_scenarios, seed,
                         d=m1.dims[0], l=m1.dims[2])
    ens1 = simulate_forward(m1, initial, drv)
    ens2 = simulate_forward(m2, initial, drv)
    s1 = solve_regression(m1, ens1, basis=basis)
    s2 = solve_regression(m2, ens2, basis=basis)
    i_t = initial.t_index
    margin = 3.0 * float(np.max(s1.u_stderr + s2.u_stderr)) + 1e-9
    worst = float((s2.y[:, i_t:] - s1.y[:, i_t:]).max())

    rng = np.random.default_rng(seed + 1)
    mean_stats = []
    for j in range(n_initials):
        p = random_initial_path(initial.grid_times, i_t, m1.dims[0], rng)
        drv_j = sample_drivers(initial.grid_times, n_initial_scenarios,
                               seed + 2000 + j, d=m1.dims[0], l=m1.dims[2])
        e1 = simulate_forward(m1, p, drv_j)
        e2 = simulate_forward(m2, p, drv_j)
        r1 = solve_regression(m1, e1, basis=basis)
        r2 = solve_regression(m2, e2, basis=basis)
        comb = 3.0 * float(np.max(r1.u_stderr + r2.u_stderr)) + 1e-9
        mean_stats.append(float((r2.u_estimate - r1.u_estimate).max()) / comb)
    stat = max(worst / margin, max(mean_stats))
    return CheckReport.make(
        name, stat, 1.0, n_scenarios,
        details=[f"worst scenario-wise violation {worst:.4g} "
                 f"(margin {margin:.4g})",
                 f"worst expectation-level statistic {max(mean_stats):.4g} "
                 f"over {n_initials} initial paths"],
        samples=[("worst_violation", worst), ("margin", margin)]
        + [(f"initial_{j}", v) for j, v in enumerate(mean_stats)],
    )


# -- coefficient discretization -----------------------------------------


def discretize_values(vals: np.ndarray, anchor_idx: int, stride: int) -> np.ndarray:
    """Vectorized node-freezing of history arrays (n, m, d): indices from the
    anchor up to the second-to-last are held at the most recent node; the
    final entry is kept."""
    m = vals.shape[1]
    if m - 1 <= anchor_idx:
        return vals
    out = vals.copy()
    idx = np.arange(anchor_idx, m - 1)
    node = anchor_idx + ((idx - anchor_idx) // stride) * stride
    out[:, idx] = vals[:, node]
    return out


def discretized_model(model: Model, n_nodes: int, anchor_t: float,
                      grid_times: np.ndarray) -> Model:
    """The same model with every path argument frozen at n_nodes equally
    spaced nodes between the anchor time and the horizon."""
    from dataclasses import replace
    N = len(grid_times) - 1
    dt = float(grid_times[1] - grid_times[0])
    anchor_idx = int(round(anchor_t / dt))
    total = N - anchor_idx
    if total % n_nodes != 0:
        from .errors import GridAlignmentError
        raise GridAlignmentError(
            f"{n_nodes} nodes do not divide the {total} remaining grid steps"
        )
    stride = total // n_nodes

    def dz(p: Path) -> Path:
        return discretize(p, n_nodes, anchor_t)

    def dzv(vals):
        return discretize_values(vals, anchor_idx, stride)

    return replace(
        model,
        name=f"{model.name}@{n_nodes}nodes",
        b=lambda p: model.b(dz(p)),
        sigma=lambda p: model.sigma(dz(p)),
        Phi=lambda p: model.Phi(dz(p)),
        f=lambda p, y, z: model.f(dz(p), y, z),
        g=lambda p, y, z: model.g(dz(p), y, z),
        b_batch=(lambda v: model.b_batch(dzv(v))) if model.b_batch else None,
        sigma_batch=(lambda v: model.sigma_batch(dzv(v))) if model.sigma_batch else None,
        phi_batch=(lambda v, h: model.phi_batch(dzv(v), h)) if model.phi_batch else None,
        f_batch=(lambda v, y, z, h: model.f_batch(dzv(v), y, z, h)) if model.f_batch else None,
        g_batch=(lambda v, y, z, h: model.g_batch(dzv(v), y, z, h)) if model.g_batch else None,
    )


def discretization_convergence_check(model: Model, initial: Path,
                                     node_counts: Sequence[int] = (2, 4, 8, 16),
                                     n_scenarios: int = 10_000, seed: int = 0,
                                     basis: Optional[RegressionBasis] = None,
                                     noise_only: bool = False,
                                     name: str = "discretization_convergence"
                                     ) -> CheckReport:
    """Field estimates under node-frozen coefficients must approach the
    unfrozen estimate as the node count grows; all solves share one driver
    sample so the gaps are not dominated by sampling noise.

    With noise_only, the coefficients are insensitive to the freezing and
    the gaps must sit at the numerical noise floor instead.
    """
    grid = initial.grid_times
    drv = sample_drivers(grid, n_scenarios, seed,
                         d=model.dims[0], l=model.dims[2])
    ens_full = simulate_forward(model, initial, drv)
    sol_full = solve_regression(model, ens_full, basis=basis)
    errors, gap_ses = [], []
    for n_nodes in node_counts:
        dm = discretized_model(model, n_nodes, initial.current_time, grid)
        ens = simulate_forward(dm, initial, drv)
        sol = solve_regression(dm, ens, basis=basis)
        errors.append(float(np.max(np.abs(sol.u_estimate - sol_full.u_estimate))))
        # shared drivers: the gap's own stderr comes from the paired rollouts
        diff = sol.rollout - sol_full.rollout
        gap_ses.append(float(np.max(diff.std(axis=0, ddof=1)))
                       / np.sqrt(diff.shape[0]))
    details = [f"{n} nodes: gap {e:.4g} (se {s:.2g})"
               for n, e, s in zip(node_counts, errors, gap_ses)]
    samples = [(f"nodes_{n}", e) for n, e in zip(node_counts, errors)]
    if noise_only:
        stat = max(e / (3.0 * s + _EPS) for e, s in zip(errors, gap_ses))
        details.append("coefficients are node-insensitive; gaps must be noise")
        return CheckReport.make(name, stat, 1.0, n_scenarios,
                                details=details, samples=samples)
    # non-increasing within two standard errors of each paired gap
    stat = max(
        (errors[j + 1] - errors[j])
        / (2.0 * (gap_ses[j] + gap_ses[j + 1]) + _EPS)
        for j in range(len(errors) - 1)
    )
    details.append("gap sequence must be non-increasing within 2 stderr")
    return CheckReport.make(name, max(stat, 0.0), 1.0, n_scenarios,
                            details=details, samples=samples)


# -- regularity envelopes ------------------------------------------------


def regularity_check(u: Callable[[Path], np.ndarray], grid_times: np.ndarray,
                     dim: int, growth_q: float, n_probes: int = 100,
                     seed: int = 0, noise_floor: float = 0.0,
                     headroom: float = 3.0,
                     name: str = "regularity_envelope") -> CheckReport:
    """Lipschitz-type envelope for the field over randomized probe
    quadruples (path, comparison path, bump, comparison bump).

    Two estimates are probed with the growth-weighted shape
    (1+sup-norms^q)(path distance): the raw field difference, and the
    stability of endpoint difference quotients in the bump size.  The
    envelope constant is fitted on the even-indexed probes; the odd-indexed
    probes must stay below the fitted constant times a fixed headroom, after
    subtracting the evaluation noise floor.  The statistic is the number of
    violations.
    """
    if n_probes < 10:
        raise ValueError("need at least 10 probe quadruples")
    rng = np.random.default_rng(seed)
    N = len(grid_times) - 1
    ratios_diff, ratios_quot = [], []
    for idx in range(n_probes):
        ti = int(rng.integers(0, N))
        p1 = random_initial_path(grid_times, ti, dim, rng)
        if rng.random() < 0.5:
            eps = 10.0 ** rng.uniform(-3, -0.5)
            vals = p1.values.copy()
            vals[-1] = vals[-1] + eps * rng.standard_normal(dim)
            p2 = Path(grid_times, vals)
        else:
            p2 = random_initial_path(grid_times, int(rng.integers(0, N)),
                                     dim, rng)
        h1, h2 = 10.0 ** rng.uniform(-2, -0.5, size=2)
        dist = path_dist(p1, p2).total
        if dist < 1e-9:
            continue
        weight = 1.0 + sup_norm(p1) ** growth_q + sup_norm(p2) ** growth_q
        du = float(np.max(np.abs(np.asarray(u(p1)) - np.asarray(u(p2)))))
        ratios_diff.append(max(du - noise_floor, 0.0) / (weight * dist))
        e = np.zeros(dim)
        e[0] = 1.0
        q1 = (np.asarray(u(vertical_bump(p1, h1 * e)))
              - np.asarray(u(p1))) / h1
        q2 = (np.asarray(u(vertical_bump(p2, h2 * e)))
              - np.asarray(u(p2))) / h2
        dq = float(np.max(np.abs(q1 - q2)))
        shape_q = weight * (abs(h1 - h2) + dist)
        ratios_quot.append(max(dq - 2.0 * noise_floor / min(h1, h2), 0.0)
                           / shape_q)
    violations = 0
    fitted = {}
    for label, ratios in (("difference", ratios_diff),
                          ("quotient", ratios_quot)):
        r = np.asarray(ratios)
        C_fit = float(np.max(r[0::2])) + _EPS
        violations += int(np.sum(r[1::2] > headroom * C_fit))
        fitted[label] = C_fit
    return CheckReport.make(
        name, float(violations), 0.0, len(ratios_diff),
        details=[f"fitted constants {fitted}",
                 f"{violations} probes beyond {headroom}x the fitted envelope"],
        samples=[("difference_constant", fitted["difference"]),
                 ("quotient_constant", fitted["quotient"]),
                 ("violations", float(violations))],
    )


def moment_envelope_check(model: Model, grid_times: np.ndarray, p: float,
                          n_probes: int = 100, n_scenarios: int = 500,
                          seed: int = 0, headroom: float = 3.0,
                          basis: Optional[RegressionBasis] = None,
                          name: Optional[str] = None) -> CheckReport:
    """Growth envelope for the backward pair: over random initial paths the
    p-th moment of sup |y| plus the p/2 moment of the integrated squared z
    must follow a power law in (1 + sup-norm of the initial path).

    The constant and growth exponent are fitted in log-log on the
    even-indexed probes; odd-indexed probes must stay below the fitted
    envelope times the headroom plus three probe standard errors.
    """
    if name is None:
        name = f"moment_envelope_p{int(p)}"
    if p < 2:
        raise ValueError(f"moment order must be >= 2, got {p}")
    rng = np.random.default_rng(seed)
    N = len(grid_times) - 1
    dt = float(grid_times[1] - grid_times[0])
    d, k, l = model.dims
    moments, ses, shapes = [], [], []
    for j in range(n_probes):
        ti = int(rng.integers(0, N))
        init = random_initial_path(grid_times, ti, d, rng,
                                   scale=float(rng.uniform(0.3, 3.0)))
        drv = sample_drivers(grid_times, n_scenarios, seed + 31 * j + 1,
                             d=d, l=l)
        ens = simulate_forward(model, init, drv)
        sol = solve_regression(model, ens, basis=basis)
        sup_y = np.max(np.abs(sol.y[:, ti:]), axis=(1, 2))
        int_z2 = np.sum(sol.z[:, ti:] ** 2, axis=(1, 2, 3)) * dt
        vals = sup_y ** p + int_z2 ** (p / 2.0)
        moments.append(float(vals.mean()))
        ses.append(float(vals.std(ddof=1)) / np.sqrt(len(vals)))
        shapes.append(1.0 + sup_norm(init))
    logm = np.log(np.asarray(moments))
    logs = np.log(np.asarray(shapes))
    A = np.stack([np.ones_like(logs[0::2]), logs[0::2]], axis=1)
    coef, *_ = np.linalg.lstsq(A, logm[0::2], rcond=None)
    q_fit = float(coef[1])
    # envelope constant: smallest C covering every fitting probe at the
    # fitted exponent (a mean-fit intercept would leave half of them above)
    C_fit = float(np.exp(np.max(logm[0::2] - q_fit * logs[0::2])))
    envelope = headroom * C_fit * np.asarray(shapes)[1::2] ** q_fit
    test_m = np.asarray(moments)[1::2]
    test_se = np.asarray(ses)[1::2]
    violations = int(np.sum(test_m > envelope + 3.0 * test_se))
    return CheckReport.make(
        name, float(violations), 0.0, n_probes,
        details=[f"fitted envelope constant {C_fit:.4g}, exponent {q_fit:.3g}",
                 f"{violations} probes beyond {headroom}x envelope + 3 stderr"],
        samples=[("constant", C_fit), ("exponent", q_fit),
                 ("violations", float(violations))],
    )
