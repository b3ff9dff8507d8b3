"""Tonelli Lagrangians with certified growth bounds and Legendre duality.

The running costs handled here are C^2 maps L(t, x, v) that are strongly
convex in v (L_vv positive definite) and superlinear:

    theta(|v|) - c0  <=  L(t, x, v)  <=  theta_bar(|v|),

with superlinear profiles theta, theta_bar stored next to the Lagrangian as a
GrowthRecord, together with a time-derivative constant c certifying
|L_t| <= c (1 + L) on the certified time window.  Stationary discounted
problems enter through the rescaling

    L^lam(t, x, v) = e^{lam t} L(x, v),

which keeps all three conditions on a finite horizon [0, T] (the rescaled
certificates are recomputed by `discount_lift`).

Conventions.  All callables are vectorised: t broadcasts against the leading
axes of x and v, which carry the space dimension in their last axis.  eval
returns shape (...), gradients return (..., dim), hess_vv returns
(..., dim, dim).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

from .errors import ConfigError, InvalidHorizon, NonConvergence, OutOfWindow
from .report import ProbeReport

Array = np.ndarray


@dataclass(frozen=True)
class GrowthRecord:
    """Superlinearity certificates: theta(|v|) - c0 <= L <= theta_bar(|v|).

    theta and theta_bar are vectorised maps [0, inf) -> [0, inf); c is the
    constant in |L_t| <= c (1 + L) on the certified window.
    """

    theta: Callable[[Array], Array]
    theta_bar: Callable[[Array], Array]
    c0: float
    c: float


@dataclass(frozen=True)
class AnalyticKernel:
    """Closed-form fundamental solution attached to a catalog Lagrangian.

    value(s, t, x, y) accepts y of shape (..., dim) and returns (...);
    grad_x / grad_y match; curve(s, t, x, y, taus) returns the minimizing
    arc sampled at taus as (positions, velocities).
    """

    value: Callable[..., Array]
    grad_x: Callable[..., Array]
    grad_y: Callable[..., Array]
    curve: Callable[..., tuple[Array, Array]]


@dataclass(frozen=True)
class TonelliLagrangian:
    """A Tonelli running cost with certified growth and time window.

    Operations reject times outside time_window: the certificates (and, for
    discounted lifts, boundedness of e^{lam t}) only hold there.
    """

    dim: int
    eval: Callable[..., Array]
    grad_t: Callable[..., Array]
    grad_x: Callable[..., Array]
    grad_v: Callable[..., Array]
    hess_vv: Callable[..., Array]
    growth: GrowthRecord
    time_window: tuple[float, float]
    time_dependent: bool = False
    key: str = "custom"
    params: dict[str, Any] = field(default_factory=dict)
    kernel: AnalyticKernel | None = None

    def check_window(self, *times: float) -> None:
        a, b = self.time_window
        for t in times:
            if not (a <= t <= b):
                raise OutOfWindow(
                    f"time {t} outside certified window [{a}, {b}] of {self.key}"
                )


def _leading(t: Any, x: Array) -> Array:
    """Broadcast t against the leading shape of x (which is (..., dim))."""
    t = np.asarray(t, dtype=float)
    shape = np.broadcast_shapes(t.shape, np.asarray(x).shape[:-1])
    return np.broadcast_to(t, shape)


# ---------------------------------------------------------------------------
# catalog potentials


def _cos_shape(xi: Array) -> tuple[Array, Array, Array]:
    return np.cos(xi), -np.sin(xi), -np.cos(xi)


def _smoothstep(w: Array) -> tuple[Array, Array, Array]:
    # quintic smoothstep: C^2 with flat ends
    s = w**3 * (10.0 - 15.0 * w + 6.0 * w**2)
    ds = 30.0 * w**2 * (1.0 - 2.0 * w + w**2)
    dds = 60.0 * w * (1.0 - 3.0 * w + 2.0 * w**2)
    return s, ds, dds


def _double_well_shape(
    xi: Array, cut_lo: float, cut_hi: float
) -> tuple[Array, Array, Array]:
    """xi^4/4 - xi^2/2, blended C^2-continuously to a plateau past |xi|=cut_hi."""
    r = np.abs(xi)
    sgn = np.sign(xi)
    raw = r**4 / 4.0 - r**2 / 2.0
    draw = r**3 - r
    ddraw = 3.0 * r**2 - 1.0
    plateau = cut_hi**4 / 4.0 - cut_hi**2 / 2.0

    w = np.clip((r - cut_lo) / (cut_hi - cut_lo), 0.0, 1.0)
    s, ds, dds = _smoothstep(w)
    ds = ds / (cut_hi - cut_lo)
    dds = dds / (cut_hi - cut_lo) ** 2

    f = (1.0 - s) * raw + s * plateau
    df = (1.0 - s) * draw + ds * (plateau - raw)
    ddf = (1.0 - s) * ddraw - 2.0 * ds * draw + dds * (plateau - raw)

    inner = r <= cut_lo
    f = np.where(inner, raw, f)
    df = np.where(inner, draw, df)
    ddf = np.where(inner, ddraw, ddf)
    outer = r >= cut_hi
    f = np.where(outer, plateau, f)
    df = np.where(outer, 0.0, df)
    ddf = np.where(outer, 0.0, ddf)
    return f, sgn * df, ddf


_SHAPES: dict[str, Callable[..., tuple[Array, Array, Array]]] = {
    "cos": lambda xi, cut_lo, cut_hi: _cos_shape(xi),
    "double_well": _double_well_shape,
}


def _shape_range(potential: str, cut_lo: float, cut_hi: float) -> tuple[float, float]:
    # dense sample is exact enough for certificates (shapes are 1D and tame)
    xi = np.linspace(-cut_hi - 1.0, cut_hi + 1.0, 20001)
    f, _, _ = _SHAPES[potential](xi, cut_lo, cut_hi)
    return float(f.min()), float(f.max())


# ---------------------------------------------------------------------------
# catalog Lagrangians


def _identity_hess(t: Any, x: Array, v: Array) -> Array:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape + (v.shape[-1],))
    idx = np.arange(v.shape[-1])
    out[..., idx, idx] = 1.0
    return out


def _free_kernel() -> AnalyticKernel:
    def value(s, t, x, y):
        d = np.asarray(y, float) - np.asarray(x, float)
        return np.sum(d * d, axis=-1) / (2.0 * (t - s))

    def grad_y(s, t, x, y):
        return (np.asarray(y, float) - np.asarray(x, float)) / (t - s)

    def grad_x(s, t, x, y):
        return -(np.asarray(y, float) - np.asarray(x, float)) / (t - s)

    def curve(s, t, x, y, taus):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        frac = (np.asarray(taus, float) - s) / (t - s)
        pos = x[None, :] + frac[:, None] * (y - x)[None, :]
        vel = np.broadcast_to((y - x) / (t - s), pos.shape).copy()
        return pos, vel

    return AnalyticKernel(value=value, grad_x=grad_x, grad_y=grad_y, curve=curve)


def free_lagrangian(dim: int = 1, window: tuple[float, float] = (-100.0, 100.0)) -> TonelliLagrangian:
    """L(x, v) = |v|^2 / 2."""

    def ev(t, x, v):
        v = np.asarray(v, float)
        return np.sum(v * v, axis=-1) / 2.0

    def gt(t, x, v):
        return np.zeros(np.asarray(v, float).shape[:-1])

    def gx(t, x, v):
        return np.zeros_like(np.asarray(v, float))

    def gv(t, x, v):
        return np.asarray(v, float).copy()

    growth = GrowthRecord(
        theta=lambda r: np.asarray(r, float) ** 2 / 2.0,
        theta_bar=lambda r: np.asarray(r, float) ** 2 / 2.0,
        c0=0.0,
        c=0.0,
    )
    return TonelliLagrangian(
        dim=dim, eval=ev, grad_t=gt, grad_x=gx, grad_v=gv, hess_vv=_identity_hess,
        growth=growth, time_window=window, key="free", params={"dim": dim},
        kernel=_free_kernel(),
    )


def mechanical_lagrangian(
    dim: int = 1,
    potential: str = "cos",
    coeff: float = 1.0,
    shift: float = 0.0,
    cutoff: tuple[float, float] = (2.5, 3.5),
    window: tuple[float, float] = (-100.0, 100.0),
) -> TonelliLagrangian:
    """L(x, v) = |v|^2 / 2 - V(x) with V(x) = coeff * sum_k phi(x_k) + shift.

    phi is "cos" or "double_well" (the latter blended to a plateau outside
    |x_k| = cutoff so the upper growth profile stays global).  The classical
    sign convention keeps V a mechanical potential; pass coeff = -1.0 to add
    phi as a running cost instead.
    """
    if potential not in _SHAPES:
        raise ConfigError(f"unknown potential {potential!r}")
    cut_lo, cut_hi = cutoff
    shape = _SHAPES[potential]

    def V(x):
        f, _, _ = shape(np.asarray(x, float), cut_lo, cut_hi)
        return coeff * np.sum(f, axis=-1) + shift

    def ev(t, x, v):
        v = np.asarray(v, float)
        return np.sum(v * v, axis=-1) / 2.0 - V(x)

    def gt(t, x, v):
        return np.zeros(np.asarray(v, float).shape[:-1])

    def gx(t, x, v):
        _, df, _ = shape(np.asarray(x, float), cut_lo, cut_hi)
        return -coeff * df

    def gv(t, x, v):
        return np.asarray(v, float).copy()

    lo, hi = _shape_range(potential, cut_lo, cut_hi)
    v_lo = min(coeff * lo, coeff * hi) * dim + shift
    v_hi = max(coeff * lo, coeff * hi) * dim + shift
    growth = GrowthRecord(
        theta=lambda r: np.asarray(r, float) ** 2 / 2.0,
        theta_bar=lambda r, b=max(0.0, -v_lo): np.asarray(r, float) ** 2 / 2.0 + b,
        c0=max(0.0, v_hi),
        c=0.0,
    )
    return TonelliLagrangian(
        dim=dim, eval=ev, grad_t=gt, grad_x=gx, grad_v=gv, hess_vv=_identity_hess,
        growth=growth, time_window=window, key="mechanical",
        params={"dim": dim, "potential": potential, "coeff": coeff, "shift": shift,
                "cutoff": list(cutoff)},
    )


def anisotropic_lagrangian(
    dim: int = 2,
    m0: float = 1.0,
    m1: float = 0.3,
    window: tuple[float, float] = (-100.0, 100.0),
) -> TonelliLagrangian:
    """L(x, v) = <M(x) v, v> / 2 with M(x) = diag(m0 + m1 cos x_k).

    Requires m0 > |m1| so M stays uniformly positive definite.
    """
    if not m0 > abs(m1):
        raise ConfigError("anisotropic metric needs m0 > |m1|")

    def mass(x):
        return m0 + m1 * np.cos(np.asarray(x, float))

    def ev(t, x, v):
        v = np.asarray(v, float)
        return np.sum(mass(x) * v * v, axis=-1) / 2.0

    def gt(t, x, v):
        return np.zeros(np.asarray(v, float).shape[:-1])

    def gx(t, x, v):
        v = np.asarray(v, float)
        return -0.5 * m1 * np.sin(np.asarray(x, float)) * v * v

    def gv(t, x, v):
        return mass(x) * np.asarray(v, float)

    def hvv(t, x, v):
        m = np.broadcast_to(mass(x), np.asarray(v, float).shape)
        out = np.zeros(m.shape + (m.shape[-1],))
        idx = np.arange(m.shape[-1])
        out[..., idx, idx] = m
        return out

    growth = GrowthRecord(
        theta=lambda r: (m0 - abs(m1)) * np.asarray(r, float) ** 2 / 2.0,
        theta_bar=lambda r: (m0 + abs(m1)) * np.asarray(r, float) ** 2 / 2.0,
        c0=0.0,
        c=0.0,
    )
    return TonelliLagrangian(
        dim=dim, eval=ev, grad_t=gt, grad_x=gx, grad_v=gv, hess_vv=hvv,
        growth=growth, time_window=window, key="anisotropic",
        params={"dim": dim, "m0": m0, "m1": m1},
    )


_CATALOG: dict[str, Callable[..., TonelliLagrangian]] = {
    "free": free_lagrangian,
    "mechanical": mechanical_lagrangian,
    "anisotropic": anisotropic_lagrangian,
}


def catalog(key: str, **params: Any) -> TonelliLagrangian:
    """Build a catalog Lagrangian by key with keyword parameters."""
    if key not in _CATALOG:
        raise ConfigError(f"unknown Lagrangian key {key!r}; have {sorted(_CATALOG)}")
    params = dict(params)
    if "cutoff" in params and params["cutoff"] is not None:
        params["cutoff"] = tuple(params["cutoff"])
    return _CATALOG[key](**params)


# ---------------------------------------------------------------------------
# discounted lift


def _lifted_free_kernel(lam: float) -> AnalyticKernel:
    # EL for e^{lam tau}|v|^2/2 forces xidot = c e^{-lam tau}; integrating:
    #   A_{s,t}(x,y) = lam |y-x|^2 / (2 (e^{-lam s} - e^{-lam t}))
    def denom(s, t):
        return (np.exp(-lam * s) - np.exp(-lam * t)) / lam

    def value(s, t, x, y):
        d = np.asarray(y, float) - np.asarray(x, float)
        return np.sum(d * d, axis=-1) / (2.0 * denom(s, t))

    def grad_y(s, t, x, y):
        return (np.asarray(y, float) - np.asarray(x, float)) / denom(s, t)

    def grad_x(s, t, x, y):
        return -(np.asarray(y, float) - np.asarray(x, float)) / denom(s, t)

    def curve(s, t, x, y, taus):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        taus = np.asarray(taus, float)
        span = np.exp(-lam * s) - np.exp(-lam * t)
        frac = (np.exp(-lam * s) - np.exp(-lam * taus)) / span
        pos = x[None, :] + frac[:, None] * (y - x)[None, :]
        vel = (lam * np.exp(-lam * taus) / span)[:, None] * (y - x)[None, :]
        return pos, vel

    return AnalyticKernel(value=value, grad_x=grad_x, grad_y=grad_y, curve=curve)


def discount_lift(L: TonelliLagrangian, lam: float, horizon: float) -> TonelliLagrangian:
    """L^lam(t, x, v) = e^{lam t} L(x, v) on the certified window [0, horizon].

    Growth certificates are rescaled by e^{lam T}; the time-derivative
    constant is set to c = lam (1 + c0 e^{lam T}).  Only stationary inputs
    are accepted: the lift is where the time dependence comes from.
    """
    if not (lam > 0.0 and np.isfinite(lam)):
        raise ConfigError(f"discount rate must be positive, got {lam}")
    if not (horizon > 0.0 and np.isfinite(horizon)):
        raise InvalidHorizon(f"horizon must be positive and finite, got {horizon}")
    if L.time_dependent:
        raise ConfigError("discount_lift expects a time-independent Lagrangian")

    amp = float(np.exp(lam * horizon))

    def w(t, x):
        return np.exp(lam * _leading(t, np.asarray(x, float)))

    def ev(t, x, v):
        return w(t, x) * L.eval(t, x, v)

    def gt(t, x, v):
        return lam * w(t, x) * L.eval(t, x, v)

    def gx(t, x, v):
        return w(t, x)[..., None] * L.grad_x(t, x, v)

    def gv(t, x, v):
        return w(t, x)[..., None] * L.grad_v(t, x, v)

    def hvv(t, x, v):
        return w(t, x)[..., None, None] * L.hess_vv(t, x, v)

    base = L.growth
    growth = GrowthRecord(
        theta=base.theta,
        theta_bar=lambda r: amp * base.theta_bar(r),
        c0=base.c0 * amp,
        c=lam * (1.0 + base.c0 * amp),
    )
    kernel = _lifted_free_kernel(lam) if (L.kernel is not None and L.key == "free") else None
    return TonelliLagrangian(
        dim=L.dim, eval=ev, grad_t=gt, grad_x=gx, grad_v=gv, hess_vv=hvv,
        growth=growth, time_window=(0.0, horizon), time_dependent=True,
        key=f"discounted({L.key})",
        params={"base": L.key, "base_params": dict(L.params), "lam": lam,
                "horizon": horizon},
        kernel=kernel,
    )


# ---------------------------------------------------------------------------
# Legendre transform and Hamiltonians


@dataclass(frozen=True)
class LegendreResult:
    value: float
    argmax: Array
    iterations: int
    residual: float


def legendre_transform(
    L: TonelliLagrangian,
    t: float,
    x: Array,
    p: Array,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> LegendreResult:
    """H(t, x, p) = sup_v { <p, v> - L(t, x, v) } by damped Newton on L_v = p.

    Starts from v = 0; each step is backtracked until the residual norm
    decreases (strong convexity makes the full step correct away from
    pathologies).  Raises NonConvergence past max_iter.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    v = np.zeros_like(p)
    scale = 1.0 + float(np.linalg.norm(p))
    res = L.grad_v(t, x, v) - p
    rnorm = float(np.linalg.norm(res))
    it = 0
    while rnorm > tol * scale:
        if it >= max_iter:
            raise NonConvergence(
                f"legendre transform: residual {rnorm:.3e} after {max_iter} iterations"
            )
        step = np.linalg.solve(L.hess_vv(t, x, v), -res)
        alpha = 1.0
        for _ in range(50):
            v_new = v + alpha * step
            res_new = L.grad_v(t, x, v_new) - p
            rn = float(np.linalg.norm(res_new))
            if rn < rnorm:
                break
            alpha *= 0.5
        else:
            raise NonConvergence("legendre transform: damping stalled")
        v, res, rnorm = v_new, res_new, rn
        it += 1
    value = float(np.dot(p, v) - L.eval(t, x, v))
    return LegendreResult(value=value, argmax=v, iterations=it, residual=rnorm)


@dataclass(frozen=True)
class Hamiltonian:
    """Convex dual H(t, x, p) with its p-gradient and a provenance tag."""

    dim: int
    eval: Callable[..., Array]
    grad_p: Callable[..., Array]
    provenance: str
    time_dependent: bool = False


def hamiltonian_for(L: TonelliLagrangian) -> Hamiltonian:
    """Closed-form dual for catalog entries, Newton-backed dual otherwise."""
    if L.key == "free":
        return Hamiltonian(
            dim=L.dim,
            eval=lambda t, x, p: np.sum(np.asarray(p, float) ** 2, axis=-1) / 2.0,
            grad_p=lambda t, x, p: np.asarray(p, float).copy(),
            provenance="closed-form",
        )
    if L.key == "mechanical":
        coeff = L.params["coeff"]
        shift = L.params["shift"]
        cut_lo, cut_hi = L.params["cutoff"]
        shape = _SHAPES[L.params["potential"]]

        def ev(t, x, p):
            f, _, _ = shape(np.asarray(x, float), cut_lo, cut_hi)
            V = coeff * np.sum(f, axis=-1) + shift
            return np.sum(np.asarray(p, float) ** 2, axis=-1) / 2.0 + V

        return Hamiltonian(
            dim=L.dim, eval=ev,
            grad_p=lambda t, x, p: np.asarray(p, float).copy(),
            provenance="closed-form",
        )
    if L.key == "anisotropic":
        m0, m1 = L.params["m0"], L.params["m1"]

        def ev(t, x, p):
            m = m0 + m1 * np.cos(np.asarray(x, float))
            return np.sum(np.asarray(p, float) ** 2 / m, axis=-1) / 2.0

        def gp(t, x, p):
            m = m0 + m1 * np.cos(np.asarray(x, float))
            return np.asarray(p, float) / m

        return Hamiltonian(dim=L.dim, eval=ev, grad_p=gp, provenance="closed-form")

    def ev(t, x, p):
        x = np.asarray(x, float)
        p = np.asarray(p, float)
        flat_x = x.reshape(-1, x.shape[-1])
        flat_p = p.reshape(-1, p.shape[-1])
        out = np.empty(flat_p.shape[0])
        for i in range(flat_p.shape[0]):
            out[i] = legendre_transform(L, t, flat_x[i], flat_p[i]).value
        return out.reshape(p.shape[:-1])

    def gp(t, x, p):
        x = np.asarray(x, float)
        p = np.asarray(p, float)
        flat_x = x.reshape(-1, x.shape[-1])
        flat_p = p.reshape(-1, p.shape[-1])
        out = np.empty_like(flat_p)
        for i in range(flat_p.shape[0]):
            out[i] = legendre_transform(L, t, flat_x[i], flat_p[i]).argmax
        return out.reshape(p.shape)

    return Hamiltonian(dim=L.dim, eval=ev, grad_p=gp,
                       provenance="legendre-of-L", time_dependent=L.time_dependent)


def hamiltonian_lift(H: Hamiltonian, lam: float) -> Hamiltonian:
    """H^lam(t, x, p) = e^{lam t} H(x, e^{-lam t} p), dual to the running-cost lift."""
    if not lam > 0.0:
        raise InvalidHorizon(f"discount rate must be positive, got {lam}")

    def ev(t, x, p):
        p = np.asarray(p, float)
        w = np.exp(lam * _leading(t, p))
        return w * H.eval(t, x, p / w[..., None])

    def gp(t, x, p):
        p = np.asarray(p, float)
        w = np.exp(lam * _leading(t, p))
        return H.grad_p(t, x, p / w[..., None])

    return Hamiltonian(dim=H.dim, eval=ev, grad_p=gp,
                       provenance=f"lift({H.provenance})", time_dependent=True)


# ---------------------------------------------------------------------------
# certificate verification


@dataclass(frozen=True)
class SampleSpec:
    """Sampling box for verify_tonelli; None t_range means the certified window
    clipped to [-1, 1]."""

    count: int = 10000
    t_range: tuple[float, float] | None = None
    x_low: float = -3.0
    x_high: float = 3.0
    v_low: float = -3.0
    v_high: float = 3.0
    seed: int = 0


def verify_tonelli(L: TonelliLagrangian, sample_spec: SampleSpec | None = None) -> ProbeReport:
    """Sample (t, x, v) and check (L1)-(L3) against the stored certificates.

    The report lists the minimal eigenvalue of L_vv, the worst growth-bound
    slacks, and the worst finite (L3) ratio |L_t| / (1 + L); samples where
    1 + L <= 0 while |L_t| > 0 are genuine (L3) violations and recorded.
    """
    spec = sample_spec or SampleSpec()
    a, b = L.time_window
    if spec.t_range is not None:
        ta, tb = spec.t_range
    else:
        ta, tb = max(a, -1.0), min(b, 1.0)
        if not ta < tb:
            ta, tb = a, b
    rng = np.random.default_rng(spec.seed)
    t = rng.uniform(ta, tb, spec.count)
    x = rng.uniform(spec.x_low, spec.x_high, (spec.count, L.dim))
    v = rng.uniform(spec.v_low, spec.v_high, (spec.count, L.dim))

    vals = L.eval(t, x, v)
    hess = L.hess_vv(t, x, v)
    eigs = np.linalg.eigvalsh(hess)
    min_eig = float(eigs.min())

    speed = np.linalg.norm(v, axis=-1)
    slack_lo = vals - (L.growth.theta(speed) - L.growth.c0)
    slack_hi = L.growth.theta_bar(speed) - vals

    lt = np.abs(L.grad_t(t, x, v))
    den = 1.0 + vals
    c = L.growth.c
    l3_slack = c * den - lt
    pos = den > 1e-12
    worst_ratio = float(np.max(lt[pos] / den[pos])) if pos.any() else 0.0

    report = ProbeReport(name=f"verify_tonelli({L.key})", samples=spec.count)
    report.constants = {
        "min_eig_hess_vv": min_eig,
        "worst_growth_slack_lower": float(slack_lo.min()),
        "worst_growth_slack_upper": float(slack_hi.min()),
        "worst_L3_ratio": worst_ratio,
        "L3_constant": c,
    }
    tol = 1e-9
    report.record_slack(min_eig, tol=0.0, check="hess_vv_positive")
    report.record_slack(float(slack_lo.min()), tol=tol, check="growth_lower")
    report.record_slack(float(slack_hi.min()), tol=tol, check="growth_upper")
    bad = l3_slack < -tol * (1.0 + np.abs(vals))
    report.constants["L3_violation_count"] = int(bad.sum())
    if bad.any():
        idx = np.flatnonzero(bad)[:10]
        for i in idx:
            report.violations.append({
                "check": "L3",
                "t": float(t[i]),
                "x": x[i].tolist(),
                "v": v[i].tolist(),
                "slack": float(l3_slack[i]),
            })
        report.worst_slack = min(report.worst_slack, float(l3_slack.min()))
    else:
        report.record_slack(float(l3_slack.min()), tol=tol, check="L3")
    return report
