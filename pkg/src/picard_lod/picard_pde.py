"""Picard iteration machinery for smooth normal Cauchy problems.

The problem  d_t^d y = F[t, x, (d_x^alpha d_t^gamma y)]  with data
d_t^j y(t0, .) = y_{0j} is attacked through the integral operator
P(y) = i0 + (d-fold nested time integral of the composed right-hand side),
certified by a Weissinger sum over contraction constants with loss of
derivatives L (the highest spatial order on the right-hand side).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np
from numpy.polynomial import chebyshev as cheb
from numpy.polynomial import polynomial as npoly

from . import funcspace as fs
from .expr import (
    Arity,
    Binary,
    Const,
    Expr,
    Placeholder,
    Unary,
    eval_expr,
    free_variables,
    is_affine_in_placeholders,
    placeholder_key,
    placeholders_in,
    total_x_derivative,
)
from .funcspace import (
    Domain,
    Radii,
    SepFunc,
    ball_check,
    graded_norm,
    graded_norms_upto,
    interpolate,
    iterated_time_integral,
    partial_derivative,
)
from .graded_core import (
    CONVERGED,
    DIVERGING,
    LodCertificate,
    WeissingerRow,
    series_verdict,
)

__all__ = [
    "CauchyProblem",
    "CollocationConfig",
    "LipschitzFactors",
    "LinearStructure",
    "SolveConfig",
    "SolveReport",
    "ResidualReport",
    "BallInvarianceReport",
    "PicardError",
    "CertifiedDivergence",
    "BallEscape",
    "initial_polynomial",
    "eval_G",
    "apply_P",
    "residual",
    "extract_linear_structure",
    "estimate_lipschitz",
    "lambda_recursion",
    "lambda_bar",
    "paper_lambda_bar_log",
    "constant_bounds",
    "check_ball_invariance",
    "certify_weissinger",
    "solve",
    "EPS_FLOOR",
]

EPS_FLOOR = 1e-300


class PicardError(Exception):
    pass


class CertifiedDivergence(PicardError):
    def __init__(self, certificate: LodCertificate):
        super().__init__("Weissinger certificate is diverging")
        self.certificate = certificate


class BallEscape(PicardError):
    def __init__(self, n: int, k: int, distance: float, radius: float):
        super().__init__(
            f"iterate {n} left the ball at k={k}: distance {distance:.6e} > "
            f"radius {radius:.6e}"
        )
        self.n = n
        self.k = k


# ---------------------------------------------------------------------------
# Problem data
# ---------------------------------------------------------------------------


def _count_alphas(L: int, s: int) -> int:
    return math.comb(L + s, s)


@dataclass(frozen=True)
class CauchyProblem:
    """Normal Cauchy problem data.

    ``rhs`` holds one expression per component with placeholders restricted
    to |alpha| <= L and gamma <= p; ``initial`` is the d-by-m table of
    initial-condition expressions in the spatial variables only.
    """

    domain: Domain
    m: int
    d: int
    p: int
    L: int
    rhs: tuple[Expr, ...]
    initial: tuple[tuple[Expr, ...], ...]

    def __post_init__(self) -> None:
        if self.d < 1:
            raise PicardError("time order d must be >= 1")
        if not 0 <= self.p < self.d:
            raise PicardError("the standing assumption p < d is violated")
        if self.L < 0:
            raise PicardError("spatial order L must be >= 0")
        rhs = tuple(self.rhs) if isinstance(self.rhs, (list, tuple)) else (self.rhs,)
        object.__setattr__(self, "rhs", rhs)
        if len(rhs) != self.m:
            raise PicardError(f"need {self.m} right-hand sides, got {len(rhs)}")
        init = tuple(
            tuple(row) if isinstance(row, (list, tuple)) else (row,)
            for row in self.initial
        )
        object.__setattr__(self, "initial", init)
        if len(init) != self.d or any(len(row) != self.m for row in init):
            raise PicardError("initial data must be a d-by-m table of expressions")
        x_names = {f"x{i}" for i in range(1, self.domain.s + 1)}
        for h, e in enumerate(rhs, start=1):
            for ph in placeholders_in(e):
                if ph.order > self.L or ph.gamma > self.p or not 1 <= ph.comp <= self.m:
                    raise PicardError(
                        f"placeholder {placeholder_key(ph)} in component {h} "
                        f"violates (L={self.L}, p={self.p}, m={self.m})"
                    )
                if len(ph.alpha) != self.domain.s:
                    raise PicardError("placeholder dimension mismatch")
            if not free_variables(e) <= {"t"} | x_names:
                raise PicardError("right-hand side uses undeclared variables")
        for row in init:
            for e in row:
                if placeholders_in(e):
                    raise PicardError("initial data must not contain placeholders")
                if not free_variables(e) <= x_names:
                    raise PicardError("initial data must depend on x only")

    @property
    def Lhat(self) -> int:
        return _count_alphas(self.L, self.domain.s) * (self.p + 1)

    @property
    def arity(self) -> Arity:
        return Arity(self.domain.s, self.m, self.L, self.p)

    def placeholders(self) -> list[Placeholder]:
        seen: set[Placeholder] = set()
        for e in self.rhs:
            seen |= placeholders_in(e)
        return sorted(seen, key=lambda ph: (ph.gamma, ph.alpha, ph.comp))


@dataclass(frozen=True)
class CollocationConfig:
    """Degree policy for re-interpolating the composed right-hand side."""

    t_margin: int = 12
    min_x_degree: int = 8
    nonlinear_x_factor: int = 2
    degree_cap: int = fs.DEGREE_CAP
    trim_eps: float = 1e-14


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


def _tpoly_cheb(domain: Domain, j: int) -> np.ndarray:
    """Chebyshev coefficients on T of (t - t0)^j / j!."""
    lo, hi = domain.t_interval
    mid, w = (lo + hi) / 2.0, (hi - lo) / 2.0
    lin = np.array([mid - domain.t0, w]) if j > 0 else np.array([1.0])
    c = npoly.polypow(lin, j) if j > 0 else lin
    return cheb.poly2cheb(c) / math.factorial(j)


def initial_polynomial(
    problem: CauchyProblem,
    x_degrees: Sequence[int] | None = None,
) -> SepFunc:
    """The Picard starting point: sum_j y_{0j}(x) (t-t0)^j / j!."""
    s = problem.domain.s
    x_degrees = tuple(x_degrees) if x_degrees is not None else (24,) * s
    shape_x = tuple(dx + 1 for dx in x_degrees)
    coeffs = np.zeros((problem.m, problem.d, *shape_x))
    for j, row in enumerate(problem.initial):
        xf = interpolate(list(row), problem.domain, (0, *x_degrees),
                         m=problem.m, p=problem.p)
        tc = _tpoly_cheb(problem.domain, j)
        block = xf.coeffs[:, 0]
        pad = [(0, t - c) for t, c in zip(shape_x, block.shape[1:])]
        block = np.pad(block, [(0, 0), *pad])
        tcol = tc.reshape((1, len(tc)) + (1,) * s)
        coeffs[:, : len(tc)] += tcol * block[:, None]
    out = SepFunc(problem.domain, problem.m, problem.p, coeffs)
    return out.trim()


def _grid_bindings(
    problem: CauchyProblem,
    y: SepFunc,
    t_pts: np.ndarray,
    x_pts: Sequence[np.ndarray],
) -> dict[str, np.ndarray]:
    """Bind t, x and every placeholder of the right-hand side on a grid."""
    shape = (len(t_pts), *[len(g) for g in x_pts])
    grids = np.meshgrid(t_pts, *x_pts, indexing="ij")
    bindings: dict[str, np.ndarray] = {"t": grids[0]}
    for i, g in enumerate(grids[1:], start=1):
        bindings[f"x{i}"] = g
    for ph in problem.placeholders():
        df = partial_derivative(y, (ph.gamma, *ph.alpha))
        vals = df.eval_grid(t_pts, x_pts)
        bindings[placeholder_key(ph)] = np.broadcast_to(vals[ph.comp - 1], shape)
    return bindings


def _g_degrees(problem: CauchyProblem, y: SepFunc, colloc: CollocationConfig) -> tuple[int, ...]:
    cap = colloc.degree_cap
    dt = min(cap, y.deg_t + colloc.t_margin)
    affine = all(is_affine_in_placeholders(e) for e in problem.rhs)
    fac = 1 if affine else colloc.nonlinear_x_factor
    dx = tuple(
        min(cap, max(colloc.min_x_degree, fac * d)) for d in y.degrees[1:]
    )
    return (dt, *dx)


def eval_G(
    problem: CauchyProblem,
    y: SepFunc,
    colloc: CollocationConfig = CollocationConfig(),
    out_degrees: Sequence[int] | None = None,
) -> SepFunc:
    """The composed right-hand side G(t, x, y) as a new interpolant."""
    degrees = tuple(out_degrees) if out_degrees is not None else _g_degrees(problem, y, colloc)
    nodes = fs.chebyshev_nodes(problem.domain, degrees)
    bindings = _grid_bindings(problem, y, nodes[0], nodes[1:])
    shape = tuple(len(g) for g in nodes)
    vals = np.stack([
        np.broadcast_to(np.asarray(eval_expr(e, bindings), dtype=float), shape)
        for e in problem.rhs
    ])
    out = fs.from_values(vals, problem.domain, problem.m, problem.p)
    out = out.trim(colloc.trim_eps)
    # tail magnitude of the representation, as a truncation indicator
    tail = 0.0
    arr = np.asarray(out.coeffs)
    scale = float(np.max(np.abs(arr))) or 1.0
    for axis in range(1, arr.ndim):
        if arr.shape[axis] - 1 >= degrees[axis - 1]:
            tail = max(tail, float(np.max(np.abs(np.take(arr, [-1], axis=axis)))) / scale)
    return replace(out, truncation=tail)


def apply_P(
    problem: CauchyProblem,
    y: SepFunc,
    i0: SepFunc | None = None,
    colloc: CollocationConfig = CollocationConfig(),
) -> SepFunc:
    """One Picard step: i0 plus the d-fold nested time integral of G."""
    if i0 is None:
        i0 = initial_polynomial(problem, [max(8, d) for d in y.degrees[1:]])
    g = eval_G(problem, y, colloc)
    out = i0 + iterated_time_integral(g, problem.d)
    return replace(out.trim(colloc.trim_eps), truncation=g.truncation)


@dataclass(frozen=True)
class ResidualReport:
    pde_residual: float
    ic_residuals: tuple[float, ...]

    def to_json_dict(self) -> dict:
        return {
            "pde_residual": self.pde_residual,
            "ic_residuals": list(self.ic_residuals),
        }


def residual(
    problem: CauchyProblem,
    y: SepFunc,
    *,
    grid_factor: int = 4,
    min_points: int = 128,
) -> ResidualReport:
    """Max-grid defect of the PDE and of each initial condition."""
    pts = []
    for deg, iv in zip(y.degrees, problem.domain.intervals()):
        n = max(min_points, grid_factor * deg + 1)
        pts.append(np.linspace(iv[0], iv[1], n))
    lhs = partial_derivative(y, (problem.d, *([0] * problem.domain.s)))
    lhs_vals = lhs.eval_grid(pts[0], pts[1:])
    bindings = _grid_bindings(problem, y, pts[0], pts[1:])
    shape = tuple(len(g) for g in pts)
    rhs_vals = np.stack([
        np.broadcast_to(np.asarray(eval_expr(e, bindings), dtype=float), shape)
        for e in problem.rhs
    ])
    pde_res = float(np.max(np.abs(lhs_vals - rhs_vals)))

    x_pts = pts[1:]
    t0 = np.array([problem.domain.t0])
    ics = []
    x_shape = tuple(len(g) for g in x_pts)
    xg = np.meshgrid(*x_pts, indexing="ij") if x_pts else []
    xbind = {f"x{i}": g for i, g in enumerate(xg, start=1)}
    for j, row in enumerate(problem.initial):
        dj = partial_derivative(y, (j, *([0] * problem.domain.s)))
        got = dj.eval_grid(t0, x_pts)[:, 0]
        want = np.stack([
            np.broadcast_to(np.asarray(eval_expr(e, xbind), dtype=float), x_shape)
            for e in row
        ])
        ics.append(float(np.max(np.abs(got - want))) if got.size else 0.0)
    return ResidualReport(pde_res, tuple(ics))


# ---------------------------------------------------------------------------
# Linear structure extraction (class p(t) d_x^mu d_t^gamma y + q)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearStructure:
    mu: tuple[int, ...]
    gamma: int
    p: tuple[tuple[Expr, ...], ...]  # m x m coefficient expressions in t
    q: tuple[Expr, ...]


def _additive_terms(e: Expr, sign: int = 1) -> list[tuple[int, Expr]]:
    if isinstance(e, Binary) and e.op == "+":
        return _additive_terms(e.lhs, sign) + _additive_terms(e.rhs, sign)
    if isinstance(e, Binary) and e.op == "-":
        return _additive_terms(e.lhs, sign) + _additive_terms(e.rhs, -sign)
    if isinstance(e, Unary) and e.op == "neg":
        return _additive_terms(e.arg, -sign)
    return [(sign, e)]


def _factor_out(term: Expr, ph: Placeholder) -> Expr | None:
    """Coefficient c with term == c * ph, or None when not linear in ph."""
    if term == ph:
        return Const(1.0)
    if isinstance(term, Unary) and term.op == "neg":
        inner = _factor_out(term.arg, ph)
        return None if inner is None else Unary("neg", inner)
    if isinstance(term, Binary) and term.op == "*":
        in_l = ph in placeholders_in(term.lhs)
        in_r = ph in placeholders_in(term.rhs)
        if in_l and not in_r and not placeholders_in(term.rhs):
            inner = _factor_out(term.lhs, ph)
            return None if inner is None else Binary("*", inner, term.rhs)
        if in_r and not in_l and not placeholders_in(term.lhs):
            inner = _factor_out(term.rhs, ph)
            return None if inner is None else Binary("*", term.lhs, inner)
        return None
    if isinstance(term, Binary) and term.op == "/":
        if placeholders_in(term.rhs):
            return None
        inner = _factor_out(term.lhs, ph)
        if inner is None:
            return None
        return Binary("/", inner, term.rhs, term.nonvanishing)
    return None


def extract_linear_structure(problem: CauchyProblem) -> LinearStructure | None:
    """Match the right-hand side against p(t) . d_x^mu d_t^gamma y + q(t, x)."""
    mu_gamma: tuple[tuple[int, ...], int] | None = None
    coef: dict[tuple[int, int], Expr] = {}
    q_parts: list[list[Expr]] = [[] for _ in range(problem.m)]
    for h, e in enumerate(problem.rhs):
        for sign, term in _additive_terms(e):
            phs = placeholders_in(term)
            if not phs:
                q_parts[h].append(
                    term if sign > 0 else Unary("neg", term)
                )
                continue
            if len(phs) != 1:
                return None
            ph = next(iter(phs))
            if mu_gamma is None:
                mu_gamma = (ph.alpha, ph.gamma)
            elif mu_gamma != (ph.alpha, ph.gamma):
                return None
            c = _factor_out(term, ph)
            if c is None:
                return None
            if not free_variables(c) <= {"t"}:
                return None
            if sign < 0:
                c = Unary("neg", c)
            key = (h, ph.comp - 1)
            if key in coef:
                coef[key] = Binary("+", coef[key], c)
            else:
                coef[key] = c
    if mu_gamma is None:
        return None
    mu, gamma = mu_gamma
    p = tuple(
        tuple(coef.get((h, l), Const(0.0)) for l in range(problem.m))
        for h in range(problem.m)
    )
    q = tuple(
        _sum_exprs(parts) for parts in q_parts
    )
    return LinearStructure(mu, gamma, p, q)


def _sum_exprs(parts: Sequence[Expr]) -> Expr:
    if not parts:
        return Const(0.0)
    out = parts[0]
    for e in parts[1:]:
        out = Binary("+", out, e)
    return out


# ---------------------------------------------------------------------------
# Lipschitz factors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LipschitzFactors:
    """Per-k Lipschitz factors of the composed right-hand side.

    Constant mode stores a nondecreasing table extended by its rule; function
    mode stores per-k space-time factor fields.
    """

    mode: str  # "constant" | "function"
    table: tuple[float, ...] = ()
    rule: Callable[[int], float] | None = field(default=None, compare=False)
    funcs: tuple[SepFunc, ...] = ()
    is_zero: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def at(self, k: int) -> float:
        """Scalar factor at index k (sup over the domain in function mode)."""
        if self.mode == "function":
            f = self.funcs[min(k, len(self.funcs) - 1)]
            return graded_norm(f, 0)
        if self.rule is not None:
            v = float(self.rule(k))
        elif k < len(self.table):
            v = self.table[k]
        else:
            v = self.table[-1]
        return max(v, EPS_FLOOR)

    def func_at(self, k: int) -> SepFunc | None:
        if self.mode != "function":
            return None
        return self.funcs[min(k, len(self.funcs) - 1)]

    @classmethod
    def constant(cls, value: float, meta: dict | None = None) -> "LipschitzFactors":
        v = float(value)
        return cls(
            "constant",
            table=(max(v, EPS_FLOOR),),
            is_zero=(v == 0.0),
            meta=meta or {},
        )

    @classmethod
    def from_table(cls, values: Sequence[float], meta: dict | None = None) -> "LipschitzFactors":
        vals, run = [], EPS_FLOOR
        for v in values:
            run = max(run, float(v))
            vals.append(run)
        return cls("constant", table=tuple(vals), meta=meta or {})


def _matrix_sup_norm(
    p_exprs: tuple[tuple[Expr, ...], ...], domain: Domain, n_pts: int = 257
) -> float:
    """sup_T of the max-row-sum norm of the t-coefficient matrix."""
    lo, hi = domain.t_interval
    ts = np.linspace(lo, hi, n_pts)
    rows = []
    for row in p_exprs:
        acc = np.zeros_like(ts)
        for e in row:
            acc = acc + np.abs(np.asarray(eval_expr(e, {"t": ts}), dtype=float))
        rows.append(acc)
    return float(np.max(np.stack(rows)))


def estimate_lipschitz(
    problem: CauchyProblem,
    radii: Radii,
    method: str = "auto",
    *,
    k_max: int = 8,
    n_pairs: int = 64,
    seed: int = 0,
    inflation: float = 1.25,
    x_degrees: Sequence[int] | None = None,
    grid_points: int = 17,
) -> LipschitzFactors:
    """Exact factors for the linear class, or a sampled non-certified estimate.

    The sampled estimator draws random pairs inside the ball around i0,
    measures the pointwise ratio of the composed right-hand side's spatial
    derivatives against the shifted difference norm, and inflates the max by
    a safety factor.  Sampling metadata is recorded on the result.
    """
    if not any(placeholders_in(e) for e in problem.rhs):
        # the composed right-hand side does not depend on the unknown at all
        return LipschitzFactors.constant(0.0, {"method": method})
    structure = extract_linear_structure(problem)
    if method == "auto":
        method = "linear_exact" if structure is not None else "sampled"
    if method == "linear_exact":
        if structure is None:
            raise PicardError("right-hand side is not of the linear class")
        norm_p = _matrix_sup_norm(structure.p, problem.domain)
        return LipschitzFactors.constant(
            norm_p, {"method": "linear_exact", "matrix_norm": "max-row-sum"}
        )
    if method != "sampled":
        raise PicardError(f"unknown Lipschitz method {method!r}")

    probe_k = k_max + problem.L + problem.p
    r_hi = radii.value(probe_k)
    if math.isinf(r_hi):
        raise PicardError("sampled Lipschitz estimation needs finite radii")

    s = problem.domain.s
    x_degrees = tuple(x_degrees) if x_degrees is not None else (12,) * s
    i0 = initial_polynomial(problem, x_degrees)
    rng = np.random.default_rng(seed)
    pts = []
    for iv in problem.domain.intervals():
        pts.append(np.linspace(iv[0], iv[1], grid_points))
    shape = tuple(len(g) for g in pts)

    def random_member() -> SepFunc:
        deg = (problem.d, *[dx for dx in x_degrees])
        shape_c = (problem.m, *[dd + 1 for dd in deg])
        idx = np.indices(shape_c[1:]).sum(axis=0)
        raw = rng.standard_normal(shape_c) * (0.5 ** idx)
        pert = SepFunc(problem.domain, problem.m, problem.p, raw)
        norms = graded_norms_upto(pert, probe_k)
        scale = min(
            radii.value(k) / norms[k] for k in range(probe_k + 1) if norms[k] > 0
        )
        return i0 + pert * (0.9 * min(1.0, scale) if math.isfinite(scale) else 0.0)

    best = np.zeros(k_max + 1)
    denom_orders = [
        (g, a)
        for g in range(problem.p + 1)
        for a in fs._multi_indices(k_max + problem.L, s)
    ]
    for _ in range(n_pairs):
        u, v = random_member(), random_member()
        gu = eval_G(problem, u)
        gv = eval_G(problem, v)
        gd = gu - gv
        ud = u - v
        den_by_order: dict[int, np.ndarray] = {}
        for g, a in denom_orders:
            order = g + sum(a)
            vals = np.max(
                np.abs(partial_derivative(ud, (g, *a)).eval_grid(pts[0], pts[1:])),
                axis=0,
            )
            vals = np.broadcast_to(vals, shape)
            cur = den_by_order.get(order)
            den_by_order[order] = vals if cur is None else np.maximum(cur, vals)
        for k in range(k_max + 1):
            den = np.zeros(shape)
            for order in range(k + problem.L + 1):
                if order in den_by_order:
                    den = np.maximum(den, den_by_order[order])
            num = np.zeros(shape)
            for a in fs._multi_indices(k, s):
                vals = np.max(
                    np.abs(partial_derivative(gd, (0, *a)).eval_grid(pts[0], pts[1:])),
                    axis=0,
                )
                num = np.maximum(num, np.broadcast_to(vals, shape))
            mask = den > 1e-13
            if np.any(mask):
                best[k] = max(best[k], float(np.max(num[mask] / den[mask])))
    return LipschitzFactors.from_table(
        tuple(best * inflation),
        {
            "method": "sampled",
            "n_pairs": n_pairs,
            "seed": seed,
            "inflation": inflation,
            "certified": False,
        },
    )


# ---------------------------------------------------------------------------
# Contraction-constant recursion
# ---------------------------------------------------------------------------


class _ConstantRecursion:
    """Literal nested-integral recursion with constant factors.

    Branch profiles are Chebyshev series in tau = |t - t0| on [0, Tbar];
    when one branch dominates the level maximum uniformly the step is exact
    polynomial arithmetic.
    """

    def __init__(self, lam: Callable[[int], float], d: int, L: int, tbar: float):
        self.lam = lam
        self.d = d
        self.L = L
        self.tbar = tbar
        self._memo: dict[tuple[int, int], list[np.ndarray]] = {}

    def _u(self, tau: np.ndarray) -> np.ndarray:
        return 2.0 * np.asarray(tau) / self.tbar - 1.0

    def branches(self, k: int, n: int) -> list[np.ndarray]:
        if n == 0:
            return [np.array([1.0])] * self.d
        key = (k, n)
        if key in self._memo:
            return self._memo[key]
        prev = self.branches(k + self.L, n - 1)
        maxdeg = max(len(c) for c in prev) - 1
        nodes_u = cheb.chebpts2(2 * (maxdeg + 1) + 9)
        vals = np.stack([cheb.chebval(nodes_u, c) for c in prev])
        hit = np.argmax(vals, axis=0)
        if np.all(hit == hit[0]):
            env = prev[hit[0]]
        else:
            env_vals = np.max(vals, axis=0)
            V = cheb.chebvander(nodes_u, len(nodes_u) - 1)
            env = np.linalg.solve(V, env_vals)
        integrand = self.lam(k) * env
        out = [
            cheb.chebint(integrand, m=j, lbnd=-1.0, scl=self.tbar / 2.0)
            for j in range(1, self.d + 1)
        ]
        self._memo[key] = out
        return out

    def profile(self, k: int, n: int, tau: np.ndarray) -> np.ndarray:
        """Values of each branch j = 1..d at the given tau points."""
        return np.stack([
            cheb.chebval(self._u(tau), c) for c in self.branches(k, n)
        ])

    def bar(self, k: int, n: int) -> float:
        if n == 0:
            return 1.0
        return float(np.max(self.profile(k, n, np.array([self.tbar]))))


def _trim_rows(coef: np.ndarray, rel_eps: float = 1e-15) -> np.ndarray:
    """Drop trailing coefficient rows that are negligible relative to the max."""
    scale = np.max(np.abs(coef))
    if scale == 0:
        return coef[:1]
    n = coef.shape[0]
    while n > 1 and np.max(np.abs(coef[n - 1])) < rel_eps * scale:
        n -= 1
    return coef[:n]


class _FunctionRecursion:
    """Recursion with space-time factor fields, pointwise in x.

    The recursion treats x as a parameter, so it runs per x-grid point on a
    Chebyshev grid in tau = |t - t0| over [0, Tbar].  The factor field is
    folded to tau by taking the larger of the two time branches inside T.
    Branch profiles are chebyshev coefficient columns, one per x point.
    """

    def __init__(self, factors: LipschitzFactors, d: int, L: int, domain: Domain,
                 tau_degree: int = 48, x_points: int = 33):
        self.factors = factors
        self.d = d
        self.L = L
        self.domain = domain
        self.tbar = domain.tbar
        self.tau_degree = tau_degree
        self.x_grids = [np.linspace(lo, hi, x_points) for lo, hi in domain.S]
        shape = tuple(len(g) for g in self.x_grids)
        self.nx = int(np.prod(shape)) if shape else 1
        self._memo: dict[tuple[int, int], list[np.ndarray]] = {}
        self._rho: dict[int, np.ndarray] = {}

    def _tau_nodes(self, deg: int) -> np.ndarray:
        return (cheb.chebpts2(deg + 1) + 1.0) * (self.tbar / 2.0)

    def rho_values(self, k: int, taus: np.ndarray) -> np.ndarray:
        """Factor values on (tau, x-grid) as an (n_tau, nx) array."""
        f = self.factors.func_at(k)
        dom = self.domain
        t_plus = np.where(taus <= dom.b, dom.t0 + taus, dom.t0 - taus)
        t_minus = np.where(taus <= dom.a, dom.t0 - taus, dom.t0 + taus)
        vplus = np.abs(f.eval_grid(t_plus, self.x_grids))
        vminus = np.abs(f.eval_grid(t_minus, self.x_grids))
        vals = np.maximum(vplus, vminus)[0]
        return vals.reshape(len(taus), -1)

    def branches(self, k: int, n: int) -> list[np.ndarray]:
        """Per j = 1..d, coefficient arrays (n_coef, nx) in tau on [0, Tbar]."""
        if n == 0:
            return [np.ones((1, self.nx))] * self.d
        key = (k, n)
        if key in self._memo:
            return self._memo[key]
        prev = self.branches(k + self.L, n - 1)
        deg = max(c.shape[0] for c in prev) - 1 + self.tau_degree
        deg = min(deg, fs.DEGREE_CAP)
        u = cheb.chebpts2(deg + 1)
        taus = self._tau_nodes(deg)
        V = cheb.chebvander(u, deg)
        prev_vals = np.stack([
            np.abs(V[:, : c.shape[0]] @ c[: deg + 1]) for c in prev
        ])
        mvals = np.max(prev_vals, axis=0)
        integrand_vals = self.rho_values(k, taus) * mvals
        coef = _trim_rows(np.linalg.solve(V, integrand_vals))
        out = [
            _trim_rows(cheb.chebint(coef, m=j, lbnd=-1.0, scl=self.tbar / 2.0, axis=0))
            for j in range(1, self.d + 1)
        ]
        self._memo[key] = out
        return out

    def bar(self, k: int, n: int) -> float:
        if n == 0:
            return 1.0
        return float(max(
            np.max(np.abs(cheb.chebval(1.0, c))) for c in self.branches(k, n)
        ))


@dataclass(frozen=True)
class LambdaRecursionResult:
    j_values: tuple[float, ...]  # branch values at |t - t0| = Tbar (j = 1..d)
    bar: float


def _make_recursion(
    factors: LipschitzFactors, d: int, L: int, domain: Domain
):
    if factors.mode == "function":
        return _FunctionRecursion(factors, d, L, domain)
    return _ConstantRecursion(factors.at, d, L, domain.tbar)


def lambda_recursion(
    factors: LipschitzFactors,
    d: int,
    L: int,
    domain: Domain,
    k: int,
    n: int,
) -> LambdaRecursionResult:
    """Literal recursion for the n-fold contraction profile and its bound."""
    rec = _make_recursion(factors, d, L, domain)
    if isinstance(rec, _ConstantRecursion):
        prof = rec.profile(k, n, np.array([domain.tbar]))[:, 0] if n > 0 else np.ones(d)
        return LambdaRecursionResult(tuple(float(v) for v in prof), rec.bar(k, n))
    tbar = np.array([rec.rdom.tbar])
    xg = [np.linspace(lo, hi, 33) for lo, hi in rec.rdom.S]
    if n == 0:
        return LambdaRecursionResult(tuple(1.0 for _ in range(d)), 1.0)
    vals = tuple(
        float(np.max(np.abs(f.eval_grid(tbar, xg)))) for f in rec.branches(k, n)
    )
    return LambdaRecursionResult(vals, max(vals))


def paper_lambda_bar_log(
    factors: LipschitzFactors, d: int, L: int, tbar: float, k: int, n: int
) -> float:
    """log of the constant-factor closed form Tbar^{nd}/(nd)! prod Lambda_{k+jL}."""
    if n == 0:
        return 0.0
    if factors.is_zero:
        return -math.inf
    acc = n * d * math.log(tbar) - math.lgamma(n * d + 1)
    for j in range(n):
        acc += math.log(factors.at(k + j * L))
    return acc


def lambda_bar(
    factors: LipschitzFactors,
    d: int,
    L: int,
    domain: Domain,
    k: int,
    n: int,
    mode: str = "recursion",
) -> float:
    if factors.is_zero and n > 0:
        return 0.0
    if mode == "paper":
        return math.exp(paper_lambda_bar_log(factors, d, L, domain.tbar, k, n))
    if mode != "recursion":
        raise PicardError(f"unknown lambda mode {mode!r}")
    return _make_recursion(factors, d, L, domain).bar(k, n)


# ---------------------------------------------------------------------------
# Constant upper bounds M_k and ball invariance
# ---------------------------------------------------------------------------


def constant_bounds(
    problem: CauchyProblem,
    radii: Radii,
    k: int,
    *,
    i0: SepFunc | None = None,
    z_samples: int = 5,
    grid_points: int = 25,
    combo_budget: int = 4096,
    seed: int = 0,
) -> float:
    """Grid maximum of |d_x^nu G| over the compact slab around the data.

    Derivatives of the composed right-hand side are expanded symbolically
    (placeholders chain upward), then every placeholder ranges over the
    interval hull of the matching derivative of i0 widened by r_{k+L+p}.
    """
    r = radii.value(k + problem.L + problem.p)
    if math.isinf(r):
        raise PicardError("constant bounds need a finite radius r_{k+L+p}")
    if i0 is None:
        i0 = initial_polynomial(problem)
    s = problem.domain.s

    exprs: list[Expr] = []
    for e in problem.rhs:
        by_nu: dict[tuple[int, ...], Expr] = {(0,) * s: e}
        for total in range(1, k + 1):
            for nu in fs._multi_indices(total, s):
                if sum(nu) != total or nu in by_nu:
                    continue
                dim = next(i for i, v in enumerate(nu, start=1) if v > 0)
                prev = tuple(
                    v - (1 if i == dim - 1 else 0) for i, v in enumerate(nu)
                )
                by_nu[nu] = total_x_derivative(by_nu[prev], dim)
        exprs.extend(by_nu.values())

    phs = sorted(
        {ph for e in exprs for ph in placeholders_in(e)},
        key=lambda ph: (ph.gamma, ph.alpha, ph.comp),
    )
    pts = []
    for iv in problem.domain.intervals():
        pts.append(np.linspace(iv[0], iv[1], grid_points))
    grids = np.meshgrid(*pts, indexing="ij")
    base: dict[str, np.ndarray] = {"t": grids[0]} if grids else {}
    for i, g in enumerate(grids[1:], start=1):
        base[f"x{i}"] = g

    ranges = []
    for ph in phs:
        df = partial_derivative(i0, (ph.gamma, *ph.alpha))
        vals = df.eval_grid(pts[0], pts[1:])[ph.comp - 1]
        ranges.append((float(np.min(vals)) - r, float(np.max(vals)) + r))

    n_combo = z_samples ** len(phs) if phs else 1
    rng = np.random.default_rng(seed)
    best = 0.0
    shape = tuple(len(g) for g in pts)

    def eval_all(zvals: Sequence[float]) -> float:
        b = dict(base)
        for ph, z in zip(phs, zvals):
            b[placeholder_key(ph)] = float(z)
        worst = 0.0
        for e in exprs:
            v = np.asarray(eval_expr(e, b), dtype=float)
            v = np.broadcast_to(v, shape) if shape else v
            worst = max(worst, float(np.max(np.abs(v))))
        return worst

    if n_combo <= combo_budget:
        axes = [np.linspace(lo, hi, z_samples) for lo, hi in ranges]
        for combo in np.ndindex(*[z_samples] * len(phs)):
            best = max(best, eval_all([axes[i][c] for i, c in enumerate(combo)]))
    else:
        for _ in range(combo_budget):
            zs = [rng.uniform(lo, hi) for lo, hi in ranges]
            best = max(best, eval_all(zs))
        for corner in ([lo for lo, _ in ranges], [hi for _, hi in ranges]):
            best = max(best, eval_all(corner))
    return best


@dataclass(frozen=True)
class BallInvarianceRow:
    k: int
    M: float
    r: float
    bound: float  # max_j Tbar^j / j! * M_k
    ok: bool


@dataclass(frozen=True)
class BallInvarianceReport:
    rows: tuple[BallInvarianceRow, ...]
    admissible_tbar: float
    trend: str  # "stable" | "decreasing"
    all_ok: bool

    def to_json_dict(self) -> dict:
        return {
            "rows": [
                {"k": r.k, "M": r.M, "r": r.r, "bound": r.bound, "ok": r.ok}
                for r in self.rows
            ],
            "admissible_tbar": self.admissible_tbar,
            "trend": self.trend,
            "all_ok": self.all_ok,
        }


def check_ball_invariance(
    radii: Radii,
    M: Callable[[int], float],
    tbar: float,
    k_max: int,
    d: int,
) -> BallInvarianceReport:
    """Per-k test max_j Tbar^j/j! M_k <= r_k, and the implied admissible Tbar."""
    factor = max(tbar ** j / math.factorial(j) for j in range(1, d + 1))
    rows = []
    ratios = []
    for k in range(k_max + 1):
        mk = float(M(k))
        rk = radii.value(k)
        bound = factor * mk
        # slack matches the grid-norm tolerance: the bound can saturate r_k
        ok = math.isinf(rk) or bound <= rk * (1 + 1e-9) + 1e-12
        rows.append(BallInvarianceRow(k, mk, rk, bound, ok))
        if not math.isinf(rk):
            ratios.append(rk / mk if mk > 0 else math.inf)
    admissible = min(ratios) if ratios else math.inf
    trend = "stable"
    if len(ratios) >= 3 and ratios[-3] > ratios[-2] > ratios[-1]:
        trend = "decreasing"
    return BallInvarianceReport(
        tuple(rows), admissible, trend, all(r.ok for r in rows)
    )


# ---------------------------------------------------------------------------
# Certification
# ---------------------------------------------------------------------------


def certify_weissinger(
    problem: CauchyProblem,
    factors: LipschitzFactors,
    radii: Radii,
    k_list: Sequence[int],
    n_max: int,
    *,
    norm_source: str = "auto",
    mode: str | None = None,
    growth: Sequence[Any] | None = None,
    k_cap: int = 8,
    x_degrees: Sequence[int] | None = None,
    colloc: CollocationConfig = CollocationConfig(),
    window: int = 10,
    margin: float = 0.05,
) -> LodCertificate:
    """Weissinger certificate: terms LambdaBar_{k,n} ||P(i0) - i0||_{k+nL}.

    Numeric increments are limited to indices <= k_cap (spectral norms of
    higher order are numerically meaningless); beyond that a growth model of
    the initial data must supply the increments.  The contraction constants
    come from the literal recursion by default, or from the constant-factor
    closed form in "paper" mode (growth-model certificates default to paper
    mode, which is the form the growth analysis is stated in).
    """
    if norm_source == "auto":
        norm_source = "growth_model" if growth is not None else "numeric"
    if mode is None:
        mode = "paper" if norm_source == "growth_model" else "recursion"
    L = problem.L
    tbar = problem.domain.tbar
    rec = None if mode == "paper" else _make_recursion(
        factors, problem.d, L, problem.domain
    )

    def log_bar(k: int, n: int) -> float:
        if factors.is_zero and n > 0:
            return -math.inf
        if mode == "paper":
            return paper_lambda_bar_log(factors, problem.d, L, tbar, k, n)
        v = rec.bar(k, n)
        return math.log(v) if v > 0 else -math.inf

    rows = []
    meta = {
        "mode": mode,
        "norm_source": norm_source,
        "k_cap": k_cap,
        "n_max": n_max,
        "lambda_meta": factors.meta,
        "norm_grid": {"factor": fs.NORM_GRID_FACTOR, "min_points": fs.NORM_GRID_MIN},
    }
    if norm_source == "numeric":
        i0 = initial_polynomial(problem, x_degrees)
        inc = (apply_P(problem, i0, i0, colloc) - i0).trim()
        n_hi_of = {
            k: (n_max if L == 0 else min(n_max, (k_cap - k) // L)) for k in k_list
        }
        if any(v < 0 for v in n_hi_of.values()):
            raise PicardError(f"some k in {k_list} exceeds the numeric norm cap {k_cap}")
        norms = graded_norms_upto(inc, max(k + n_hi_of[k] * L for k in k_list))
        for k in k_list:
            n_hi = n_hi_of[k]
            terms = [
                math.exp(log_bar(k, n)) * float(norms[k + n * L])
                if not math.isinf(log_bar(k, n))
                else 0.0
                for n in range(n_hi + 1)
            ]
            verdict, ratio = series_verdict(terms, window=window, margin=margin)
            rows.append(WeissingerRow(
                k, tuple(terms), verdict, ratio, window, margin,
                meta={"truncated_at_n": n_hi if n_hi < n_max else None},
            ))
    elif norm_source == "growth_model":
        from . import linear_series as ls

        lp = ls.LinearProblem.from_cauchy(problem)
        growth = tuple(growth or ())
        for k in k_list:
            terms = []
            for n in range(n_max + 1):
                lt = log_bar(k, n) + ls.increment_bound_log(lp, growth, k, n)
                terms.append(math.exp(lt) if lt < 700 else math.inf)
            verdict, ratio = series_verdict(terms, window=window, margin=margin)
            rows.append(WeissingerRow(
                k, tuple(terms), verdict, ratio, window, margin,
                meta={"growth": [getattr(g, "kind", "?") for g in growth]},
            ))
    else:
        raise PicardError(f"unknown norm source {norm_source!r}")
    return LodCertificate.from_rows(rows, meta)


# ---------------------------------------------------------------------------
# End-to-end solve
# ---------------------------------------------------------------------------


@dataclass
class SolveConfig:
    radii: Radii = field(default_factory=Radii.infinite)
    k_check: tuple[int, ...] = (0,)
    tol: float = 1e-10
    n_max: int = 10
    certify_first: bool = False
    certify_k: tuple[int, ...] = (0,)
    certify_n_max: int = 25
    norm_source: str = "auto"
    lambda_mode: str | None = None
    residual_tol: float = 1e-7
    x_degrees: tuple[int, ...] | None = None
    colloc: CollocationConfig = field(default_factory=CollocationConfig)
    growth: tuple[Any, ...] | None = None
    seed: int = 0
    store_iterates: bool = False
    k_ball: int | None = None  # ball membership checked for k <= this


@dataclass
class SolveReport:
    status: str
    n_steps: int
    increments: dict[int, list[float]]
    candidate: SepFunc
    certificate: LodCertificate | None
    certificate_note: str | None
    bounds: dict[int, list[float]] | None
    bounds_are_estimates: bool
    residuals: ResidualReport | None
    residual_ok: bool | None
    ball_log: list[dict]
    membership: str
    truncation: list[float]
    iterates: list[SepFunc] | None
    config: SolveConfig
    wall_clock: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def to_json_dict(self, include_timings: bool = False) -> dict:
        out = {
            "status": self.status,
            "n_steps": self.n_steps,
            "increments": {str(k): v for k, v in self.increments.items()},
            "certificate": self.certificate.to_json_dict() if self.certificate else None,
            "certificate_note": self.certificate_note,
            "bounds": {str(k): v for k, v in self.bounds.items()} if self.bounds else None,
            "bounds_are_estimates": self.bounds_are_estimates,
            "residuals": self.residuals.to_json_dict() if self.residuals else None,
            "residual_ok": self.residual_ok,
            "ball_log": self.ball_log,
            "membership": self.membership,
            "truncation": self.truncation,
            "candidate": self.candidate.to_json_dict(),
            "iterates": [f.to_json_dict() for f in self.iterates] if self.iterates else None,
        }
        if include_timings:
            out["wall_clock"] = self.wall_clock
        return out


def solve(problem: CauchyProblem, config: SolveConfig | None = None) -> SolveReport:
    """Run Picard iteration from i0 with ball logging, then validate.

    Raises CertifiedDivergence when certify-first is on and the Weissinger
    certificate is diverging, and BallEscape when an iterate leaves the ball
    of the configured radii.
    """
    cfg = config or SolveConfig()
    t_start = time.perf_counter()
    s = problem.domain.s
    x_degrees = cfg.x_degrees or (24,) * s
    i0 = initial_polynomial(problem, x_degrees)

    certificate = None
    note = None
    try:
        factors = estimate_lipschitz(
            problem, cfg.radii, "auto", seed=cfg.seed, x_degrees=x_degrees
        )
        certificate = certify_weissinger(
            problem, factors, cfg.radii, cfg.certify_k, cfg.certify_n_max,
            norm_source=cfg.norm_source, mode=cfg.lambda_mode,
            growth=cfg.growth, x_degrees=x_degrees, colloc=cfg.colloc,
        )
    except PicardError as exc:
        note = f"certificate unavailable: {exc}"
    if cfg.certify_first:
        if certificate is None:
            raise PicardError(note or "certificate unavailable")
        if certificate.verdict == DIVERGING:
            raise CertifiedDivergence(certificate)

    k_ball = cfg.k_ball if cfg.k_ball is not None else max(cfg.k_check)
    k_top = max(cfg.k_check)
    increments: dict[int, list[float]] = {k: [] for k in cfg.k_check}
    ball_log: list[dict] = []
    truncation: list[float] = []
    iterates = [i0] if cfg.store_iterates else None

    y = i0
    status = "inconclusive"
    n_done = 0
    for n in range(cfg.n_max):
        y_next = apply_P(problem, y, i0, cfg.colloc)
        truncation.append(y_next.truncation or 0.0)
        report = ball_check(y_next, i0, cfg.radii, k_ball)
        ball_log.append({"n": n + 1, **report.to_json_dict()})
        if not report.member:
            bad = next(r for r in report.rows if not r.within)
            raise BallEscape(n + 1, bad.k, bad.distance, bad.radius)
        norms = graded_norms_upto((y_next - y).trim(), k_top)
        for k in cfg.k_check:
            increments[k].append(float(norms[k]))
        if cfg.store_iterates:
            iterates.append(y_next)
        y = y_next
        n_done = n + 1
        if max(float(norms[k]) for k in cfg.k_check) < cfg.tol:
            status = CONVERGED
            break

    residuals = None
    residual_ok = None
    if status == CONVERGED:
        residuals = residual(problem, y)
        residual_ok = bool(
            residuals.pde_residual <= cfg.residual_tol
            and all(r <= cfg.residual_tol for r in residuals.ic_residuals)
        )

    bounds = None
    estimates = False
    if certificate is not None:
        bounds = {}
        for k in cfg.k_check:
            try:
                row = certificate.row(k)
            except Exception:
                continue
            if row.verdict != CONVERGED:
                continue
            tails = [row.tail_bound(n) for n in range(n_done + 1)]
            bounds[k] = [t.value for t in tails]
            estimates = estimates or any(t.is_estimate for t in tails)
        if not bounds:
            bounds = None

    return SolveReport(
        status=status,
        n_steps=n_done,
        increments=increments,
        candidate=y,
        certificate=certificate,
        certificate_note=note,
        bounds=bounds,
        bounds_are_estimates=estimates,
        residuals=residuals,
        residual_ok=residual_ok,
        ball_log=ball_log,
        membership="checked" if not cfg.radii.is_infinite() else "vacuous (infinite radii)",
        truncation=truncation,
        iterates=iterates,
        config=cfg,
        wall_clock=time.perf_counter() - t_start,
    )
