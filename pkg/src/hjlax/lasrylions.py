"""Intrinsic regularization of discounted stationary solutions.

The regularized field at scale t is the sup-convolution of u with the
discounted kernel, sup_y { u(y) - A_{0,t}(x, y) } for the lifted running
cost e^{lam s} L; it is delegated to the forward Lax-Oleinik operator.
Small-time sweeps record uniform convergence back to u, per-point gradient
sequences with Aitken extrapolation of their limits, and the comparison of
those limits against the Hamiltonian minimizer over the superdifferential.
Maximizer traces started at a singular point track how the singularity
propagates: membership of every maximizer in the detected singular set,
cone localization, trace continuity, and the one-sided derivative at 0+.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discounted import DiscountedSolution, solve_discounted
from .errors import (ConeViolation, ConfigError, NotSingular)
from .gridfn import GridFunction
from .lagrangian import (Hamiltonian, TonelliLagrangian, discount_lift,
                         hamiltonian_for)
from .laxoleinik import (MaximizerRecord, estimate_kappa0, lax_plus,
                         require_unique_maximizer)
from .action import action_values_batch, probe_convexity
from .regularity import (SingularSet, min_H_over_superdiff,
                         semiconcavity_constant, singular_set,
                         superdifferential)

Array = np.ndarray


def _finite_or_none(v: float) -> float | None:
    return float(v) if np.isfinite(v) else None


# ---------------------------------------------------------------------------
# one regularization scale


@dataclass(frozen=True)
class RegularizedField:
    """Sup-convolution of u at one scale t, with probe diagnostics."""

    t: float
    lam: float
    field: GridFunction
    gradient_field: Array         # u.values.shape + (dim,)
    sup_error: float              # ||field - u||_inf
    c11_bound: float              # max difference quotient of the gradient
    probe_points: Array           # (m, n) node-snapped probe locations
    probe_gradients: Array        # (m, n)
    probe_velocities: Array       # (m, n): (y* - x)/t
    probe_records: list[MaximizerRecord]

    def as_dict(self) -> dict:
        return {
            "t": self.t,
            "lam": self.lam,
            "sup_error": self.sup_error,
            "c11_bound": _finite_or_none(self.c11_bound),
            "probe_points": self.probe_points.tolist(),
            "probe_gradients": self.probe_gradients.tolist(),
            "probe_velocities": self.probe_velocities.tolist(),
        }


def _gradient_quotient_bound(u: GridFunction, grad: Array) -> float:
    """Worst adjacent-node difference quotient of the gradient field."""
    best = 0.0
    for a in range(u.dim):
        h = float(u.spacing[a])
        diff = np.diff(grad, axis=a)
        if diff.size:
            best = max(best, float(np.linalg.norm(diff, axis=-1).max()) / h)
    return best


def intrinsic_regularize(sol: DiscountedSolution, L: TonelliLagrangian,
                         t: float, probe_points: Array | None = None,
                         **op_kwargs) -> RegularizedField:
    """Apply the scale-t sup-convolution to sol.u on the whole grid.

    Probe points are snapped to their nearest nodes; each probe's record
    must hold a unique maximizer (NonUniqueMaximizer otherwise: shrink t
    below the strict-concavity window).  The gradient at a probe equals
    the lifted running cost's velocity gradient along the optimal arc at
    its start, which the operator records at every node.
    """
    if not t > 0.0:
        raise ConfigError(f"regularization scale must be positive, got {t}")
    lifted = discount_lift(L, sol.lam, horizon=max(t, sol.dt))
    res = lax_plus(lifted, sol.u, 0.0, t, **op_kwargs)
    sup_error = float(np.abs(res.grid.values - sol.u.values).max())
    c11 = _gradient_quotient_bound(sol.u, res.gradient)

    if probe_points is None:
        probe_points = np.empty((0, sol.u.dim))
    pts = np.atleast_2d(np.asarray(probe_points, dtype=float))
    snapped = []
    grads = []
    vels = []
    records = []
    for p in pts:
        idx = sol.u.nearest_node(p)
        x = sol.u.node_point(idx)
        rec = res.records[int(np.ravel_multi_index(idx, sol.u.values.shape))]
        require_unique_maximizer(rec)
        snapped.append(x)
        grads.append(rec.gradient)
        vels.append((rec.y_star - x) / t)
        records.append(rec)
    m = len(snapped)
    return RegularizedField(
        t=float(t), lam=sol.lam, field=res.grid, gradient_field=res.gradient,
        sup_error=sup_error, c11_bound=c11,
        probe_points=np.array(snapped).reshape(m, sol.u.dim),
        probe_gradients=np.array(grads).reshape(m, sol.u.dim),
        probe_velocities=np.array(vels).reshape(m, sol.u.dim),
        probe_records=records,
    )


def diagonal_action(sol: DiscountedSolution, L: TonelliLagrangian,
                    t: float) -> Array:
    """A_{0,t}(x, x) at every node: the feasibility gap in the pointwise
    dominance bound field >= u - diagonal_action."""
    lifted = discount_lift(L, sol.lam, horizon=max(t, sol.dt))
    vals = [action_values_batch(lifted, 0.0, t, x, x[None, :])[0]
            for x in sol.u.nodes()]
    return np.array(vals).reshape(sol.u.values.shape)


# ---------------------------------------------------------------------------
# sweeps toward t -> 0+


def aitken_extrapolants(seq: Array) -> Array:
    """Aitken delta-squared acceleration along axis 0; entry k accelerates
    (k, k+1, k+2).  Degenerate denominators fall back to the raw last term."""
    seq = np.asarray(seq, dtype=float)
    if len(seq) < 3:
        return seq[-1:].copy()
    d1 = seq[1:] - seq[:-1]
    den = d1[1:] - d1[:-1]
    num = d1[1:] ** 2
    scale = np.maximum(np.abs(seq[2:]), 1.0)
    safe = np.abs(den) > 1e-14 * scale
    out = seq[2:].copy()
    out[safe] -= num[safe] / den[safe]
    return out


def default_probe_points(sol: DiscountedSolution, n_smooth: int = 8,
                         seed: int = 0) -> Array:
    """All detected singular nodes plus n_smooth seeded smooth nodes.

    Smooth candidates keep a margin of 6 spacings from every detected
    singular node (inside that halo the ball-based superdifferential sees
    gradients from both sides of the kink) and of 10% of the box width
    from a non-periodic rim (where domain truncation distorts u).
    """
    sing = singular_set(sol.u)
    u = sol.u
    h = float(u.spacing.max())
    interior = []
    for flat in range(u.values.size):
        idx = np.unravel_index(flat, u.values.shape)
        p = u.node_point(idx)
        if u.boundary != "periodic":
            margins = 0.1 * (u.box[:, 1] - u.box[:, 0])
            if np.any(p - u.box[:, 0] < margins) or np.any(
                    u.box[:, 1] - p < margins):
                continue
        if len(sing.points) and np.min(
                np.linalg.norm(sing.points - p[None, :], axis=1)) < 6.0 * h:
            continue
        interior.append(idx)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(interior), size=min(n_smooth, len(interior)),
                        replace=False)
    pts = [sing.points[k] for k in range(len(sing.points))]
    pts += [u.node_point(interior[int(k)]) for k in sorted(chosen)]
    return np.array(pts).reshape(len(pts), u.dim)


@dataclass(frozen=True)
class RegularizationSweep:
    """Regularized fields along a t-grid decreasing toward 0."""

    lam: float
    t_grid: Array                     # (K,), decreasing
    sup_errors: Array                 # (K,)
    c11_bounds: Array                 # (K,)
    probe_points: Array               # (m, n)
    probe_gradients: Array            # (K, m, n)
    probe_velocities: Array           # (K, m, n)
    gradient_limits: Array            # (m, n) last Aitken extrapolant
    velocity_limits: Array            # (m, n)
    cauchy_ok: Array                  # (m,) bool
    base: GridFunction                # the u the sweep regularizes
    fields: list[RegularizedField] = field(repr=False, default_factory=list)
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "lam": self.lam,
            "t_grid": self.t_grid.tolist(),
            "sup_errors": self.sup_errors.tolist(),
            "c11_bounds": [_finite_or_none(b) for b in self.c11_bounds],
            "probe_points": self.probe_points.tolist(),
            "probe_gradients": self.probe_gradients.tolist(),
            "probe_velocities": self.probe_velocities.tolist(),
            "gradient_limits": self.gradient_limits.tolist(),
            "velocity_limits": self.velocity_limits.tolist(),
            "cauchy_ok": [bool(b) for b in self.cauchy_ok],
            "meta": self.meta,
        }

    def errors_to_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("t,sup_error,c11_bound\n")
            for t, e, c in zip(self.t_grid, self.sup_errors, self.c11_bounds):
                fh.write(f"{t:.17g},{e:.17g},{c:.17g}\n")

    def probes_to_csv(self, path: str) -> None:
        n = self.probe_points.shape[1]
        cols = (["t", "probe"] + [f"x{k+1}" for k in range(n)]
                + [f"g{k+1}" for k in range(n)] + [f"v{k+1}" for k in range(n)])
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for i, t in enumerate(self.t_grid):
                for j in range(len(self.probe_points)):
                    row = ([f"{t:.17g}", str(j)]
                           + [f"{c:.17g}" for c in self.probe_points[j]]
                           + [f"{c:.17g}" for c in self.probe_gradients[i, j]]
                           + [f"{c:.17g}" for c in self.probe_velocities[i, j]])
                    fh.write(",".join(row) + "\n")


def convergence_sweep(sol: DiscountedSolution, L: TonelliLagrangian,
                      t_grid: Array | None = None,
                      probe_points: Array | None = None,
                      seed: int = 0, cauchy_tol: float = 1e-3,
                      **op_kwargs) -> RegularizationSweep:
    """Regularize along a geometric t-grid and extrapolate the gradients.

    Per probe point the gradient and velocity sequences are accelerated by
    Aitken's delta-squared; the sweep declares the limit trustworthy when
    the last three extrapolants agree to cauchy_tol.
    """
    if t_grid is None:
        t_grid = 0.2 * 2.0 ** (-np.arange(6, dtype=float))
    t_grid = np.asarray(t_grid, dtype=float)
    if len(t_grid) < 2 or not np.all(np.diff(t_grid) < 0.0):
        raise ConfigError("t_grid must decrease toward 0")
    if probe_points is None:
        probe_points = default_probe_points(sol, seed=seed)

    fields = [intrinsic_regularize(sol, L, float(t), probe_points, **op_kwargs)
              for t in t_grid]
    pts = fields[0].probe_points
    grads = np.stack([f.probe_gradients for f in fields])
    vels = np.stack([f.probe_velocities for f in fields])

    m, n = pts.shape
    glimits = np.empty((m, n))
    vlimits = np.empty((m, n))
    cauchy = np.zeros(m, dtype=bool)
    for j in range(m):
        ext = aitken_extrapolants(grads[:, j, :])
        glimits[j] = ext[-1]
        vlimits[j] = aitken_extrapolants(vels[:, j, :])[-1]
        if len(ext) >= 3:
            tail = ext[-3:]
            gaps = np.linalg.norm(tail - tail[-1][None, :], axis=1)
            cauchy[j] = bool(gaps.max() <= cauchy_tol)
    return RegularizationSweep(
        lam=sol.lam, t_grid=t_grid,
        sup_errors=np.array([f.sup_error for f in fields]),
        c11_bounds=np.array([f.c11_bound for f in fields]),
        probe_points=pts, probe_gradients=grads, probe_velocities=vels,
        gradient_limits=glimits, velocity_limits=vlimits, cauchy_ok=cauchy,
        base=sol.u, fields=fields,
        meta={"cauchy_tol": cauchy_tol, "seed": seed},
    )


@dataclass(frozen=True)
class GradientComparison:
    """Extrapolated regularization gradient vs the Hamiltonian minimizer
    over the superdifferential at one probe point."""

    x: Array
    gradient_limit: Array
    q: Array
    H_value: float
    distance: float
    hull_diameter: float

    def as_dict(self) -> dict:
        return {
            "x": self.x.tolist(),
            "gradient_limit": self.gradient_limit.tolist(),
            "q": self.q.tolist(),
            "H_value": self.H_value,
            "distance": self.distance,
            "hull_diameter": self.hull_diameter,
        }


def gradient_limit_vs_qx(sweep: RegularizationSweep, H: Hamiltonian,
                         x: Array) -> GradientComparison:
    """Compare the sweep's extrapolated gradient limit at probe x with the
    minimizer of H over the superdifferential of the base field there."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    gaps = np.linalg.norm(sweep.probe_points - x[None, :], axis=1)
    j = int(np.argmin(gaps))
    if gaps[j] > 0.51 * float(sweep.base.spacing.max()):
        raise ConfigError(f"{x.tolist()} is not a probe point of this sweep")
    xp = sweep.probe_points[j]
    S = superdifferential(sweep.base, xp)
    q, val = min_H_over_superdiff(H, 0.0, xp, S)
    g = sweep.gradient_limits[j]
    return GradientComparison(
        x=xp.copy(), gradient_limit=g.copy(), q=q, H_value=val,
        distance=float(np.linalg.norm(g - q)), hull_diameter=S.diameter,
    )


# ---------------------------------------------------------------------------
# singularity propagation


@dataclass(frozen=True)
class SingularTrace:
    """Maximizer trace t -> y_{t,x0} started at a singular point."""

    x0: Array
    lam: float
    t_grid: Array                 # (K,), decreasing
    maximizers: Array             # (K, n)
    singular_flags: Array         # (K,) bool
    distance_ratios: Array        # (K,): |y - x0| / t
    kappa0: float
    max_jump: float               # worst consecutive |y_{t_k} - y_{t_{k+1}}|
    right_derivative: Array       # (n,), extrapolated (y - x0)/t at 0+
    q_lambda: Array               # (n,)
    v0: Array                     # (n,): H_p(x0, q_lambda)
    t1: float                     # uniqueness window along the trace
    t2: float                     # strict-concavity window
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "x0": self.x0.tolist(),
            "lam": self.lam,
            "t_grid": self.t_grid.tolist(),
            "maximizers": self.maximizers.tolist(),
            "singular_flags": [bool(b) for b in self.singular_flags],
            "distance_ratios": self.distance_ratios.tolist(),
            "kappa0": self.kappa0,
            "max_jump": self.max_jump,
            "right_derivative": self.right_derivative.tolist(),
            "q_lambda": self.q_lambda.tolist(),
            "v0": self.v0.tolist(),
            "t1": self.t1,
            "t2": self.t2,
            "meta": self.meta,
        }

    def to_csv(self, path: str) -> None:
        n = len(self.x0)
        cols = (["t"] + [f"y{k+1}" for k in range(n)]
                + ["singular", "distance_ratio"])
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for t, y, s, r in zip(self.t_grid, self.maximizers,
                                  self.singular_flags, self.distance_ratios):
                row = ([f"{t:.17g}"] + [f"{c:.17g}" for c in y]
                       + ["1" if s else "0", f"{r:.17g}"])
                fh.write(",".join(row) + "\n")


def trace_singularity(sol: DiscountedSolution, L: TonelliLagrangian,
                      x0: Array, t_grid: Array | None = None,
                      strict: bool = True, sing: SingularSet | None = None,
                      window: tuple[float, float] | None = None,
                      window_samples: int = 64,
                      **op_kwargs) -> SingularTrace:
    """Track the maximizer y_{t,x0} of u(y) - A_{0,t}(x0, y) as t -> 0+.

    The start point must belong to the detected singular set.  With strict
    on, a maximizer leaving the singular set raises NotSingular and one
    leaving the cone |y - x0| <= kappa0*t raises ConeViolation; both are
    always recorded in the flags either way.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if sing is None:
        sing = singular_set(sol.u)
    if not sing.contains(x0):
        raise NotSingular(
            f"{x0.tolist()} is not in the detected singular set")
    idx = sol.u.nearest_node(x0)
    x0 = sol.u.node_point(idx)

    if t_grid is None:
        t_grid = 0.2 * 2.0 ** (-np.arange(6, dtype=float))
    t_grid = np.asarray(t_grid, dtype=float)
    if len(t_grid) < 2 or not np.all(np.diff(t_grid) < 0.0):
        raise ConfigError("t_grid must decrease toward 0")

    lifted = discount_lift(L, sol.lam, horizon=float(t_grid.max()) + sol.dt)
    est = estimate_kappa0(lifted, sol.u.lipschitz(), 0.0,
                          float(t_grid.max()),
                          sol.u.nodes()[:: max(1, sol.u.values.size // 64)])
    kappa0 = est["kappa0"]

    ys = []
    ratios = []
    flags = []
    uniques = []
    for t in t_grid:
        res = lax_plus(lifted, sol.u, 0.0, float(t),
                       points=x0[None, :], kappa0=kappa0, **op_kwargs)
        rec = res.records[0]
        y = rec.y_star
        ys.append(y)
        ratios.append(rec.distance_ratio)
        is_sing = sing.contains(y)
        flags.append(is_sing)
        uniques.append(rec.multiplicity <= 1)
        if strict and not is_sing:
            raise NotSingular(
                f"maximizer {y.tolist()} at t={t} left the singular set")
        if strict and rec.distance_ratio > kappa0 * (1.0 + 1e-6):
            raise ConeViolation(
                f"|y - x0|/t = {rec.distance_ratio:.4g} exceeds "
                f"kappa0 = {kappa0:.4g} at t={t}")
    ys = np.array(ys).reshape(len(t_grid), len(x0))
    jumps = np.linalg.norm(np.diff(ys, axis=0), axis=1)
    max_jump = float(jumps.max()) if len(jumps) else 0.0

    vel_seq = (ys - x0[None, :]) / t_grid[:, None]
    right = aitken_extrapolants(vel_seq)[-1]

    S = superdifferential(sol.u, x0)
    H = hamiltonian_for(L)
    q, _ = min_H_over_superdiff(H, 0.0, x0, S)
    v0 = np.atleast_1d(np.asarray(H.grad_p(0.0, x0, q), dtype=float))

    # uniqueness window: largest t below which every traced t is unique
    order = np.argsort(t_grid)
    t1 = 0.0
    for k in order:
        if not uniques[k]:
            break
        t1 = float(t_grid[k])
    if window is None:
        _, t2 = strict_concavity_window(sol, L, x0, t_probe=t_grid,
                                        n_samples=window_samples,
                                        uniques=(t_grid, uniques))
    else:
        _, t2 = window
    return SingularTrace(
        x0=x0, lam=sol.lam, t_grid=t_grid, maximizers=ys,
        singular_flags=np.array(flags, dtype=bool),
        distance_ratios=np.array(ratios), kappa0=float(kappa0),
        max_jump=max_jump, right_derivative=right, q_lambda=q, v0=v0,
        t1=t1, t2=float(t2),
        meta={"ball_radius": est["ball_radius"]},
    )


def strict_concavity_window(sol: DiscountedSolution, L: TonelliLagrangian,
                            x0: Array, t_probe: Array | None = None,
                            n_samples: int = 64, seed: int = 0,
                            uniques: tuple[Array, list] | None = None,
                            **op_kwargs) -> tuple[float, float]:
    """(t1, t2) around x0.

    t2 is the largest probe t whose empirical in-space convexity constant
    of the kernel beats the local curvature of u: C'''(t)/t > C2 makes
    u(y) - A_{0,t}(x, y) strictly concave near the diagonal.  t1 is the
    largest probe t below which the maximizer at x0 stays unique.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if t_probe is None:
        t_probe = 0.2 * 2.0 ** (-np.arange(6, dtype=float))
    t_probe = np.asarray(t_probe, dtype=float)

    h = float(sol.u.spacing.max())
    lo = np.maximum(x0 - 8.0 * h, sol.u.box[:, 0])
    hi = np.minimum(x0 + 8.0 * h, sol.u.box[:, 1])
    c2 = semiconcavity_constant(sol.u, region=np.stack([lo, hi], axis=1))

    # convexity probes perturb the arrival time up to 1.5x the largest T
    lifted = discount_lift(L, sol.lam,
                           horizon=1.5 * float(t_probe.max()) + sol.dt)
    report = probe_convexity(lifted, x0, 0.0,
                             T_grid=tuple(float(t) for t in t_probe),
                             n_samples=n_samples, seed=seed)
    c3 = dict(zip(report.constants["T_grid"],
                  report.constants["C_tripleprime_table"]))
    qualifying = [t for t in t_probe if c3[float(t)] / t > c2]
    t2 = float(max(qualifying)) if qualifying else 0.0

    if uniques is None:
        flags = []
        for t in t_probe:
            res = lax_plus(lifted, sol.u, 0.0, float(t), points=x0[None, :],
                           **op_kwargs)
            flags.append(res.records[0].multiplicity <= 1)
        uniques = (t_probe, flags)
    ts, flags = uniques
    t1 = 0.0
    for k in np.argsort(np.asarray(ts)):
        if not flags[k]:
            break
        t1 = float(np.asarray(ts)[k])
    return t1, t2


# ---------------------------------------------------------------------------
# exploratory lambda sweep


def lambda_sweep_problem_probe(L: TonelliLagrangian, lam_grid: Array,
                               x_points: Array, grid, dt: float = 0.05,
                               analytic_qx: Array | None = None,
                               solve_kwargs: dict | None = None) -> dict:
    """Tabulate q^lambda at the given points across discount rates.

    Exploratory: no pass/fail contract.  When the analytic stationary
    minimizer is supplied (constant-potential case), deviations from it
    are reported alongside.
    """
    lam_grid = np.asarray(lam_grid, dtype=float)
    if len(lam_grid) >= 2 and not np.all(np.diff(lam_grid) < 0.0):
        raise ConfigError("lam_grid must decrease")
    pts = np.atleast_2d(np.asarray(x_points, dtype=float))
    H = hamiltonian_for(L)
    kw = solve_kwargs or {}

    table = []
    for lam in lam_grid:
        sol = solve_discounted(L, float(lam), grid, dt, **kw)
        row = []
        for x in pts:
            xn = sol.u.node_point(sol.u.nearest_node(x))
            S = superdifferential(sol.u, xn)
            q, _ = min_H_over_superdiff(H, 0.0, xn, S)
            row.append(q.tolist())
        table.append(row)
    out = {
        "lambda_grid": lam_grid.tolist(),
        "points": pts.tolist(),
        "q_table": table,
    }
    if analytic_qx is not None:
        ref = np.atleast_2d(np.asarray(analytic_qx, dtype=float))
        devs = [float(np.abs(np.asarray(row) - ref).max()) for row in table]
        out["analytic_qx"] = ref.tolist()
        out["max_deviation_per_lambda"] = devs
    return out
