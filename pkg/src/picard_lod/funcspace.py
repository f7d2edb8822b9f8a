"""Separately regular functions on a time-space box as Chebyshev coefficient tensors.

A SepFunc stores, per component, a tensor of Chebyshev-series coefficients
over the time interval and each spatial interval (all affinely mapped to
[-1, 1]).  Differentiation and nested time integration act exactly on
coefficients; the graded seminorms take the sup of partial derivatives on a
dense sampling grid (the grid density is part of every reported norm).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from numpy.polynomial import chebyshev as cheb

from .expr import Expr, eval_expr, free_variables

__all__ = [
    "Domain",
    "SepFunc",
    "Radii",
    "BallRow",
    "BallReport",
    "FuncSpaceError",
    "interpolate",
    "partial_derivative",
    "iterated_time_integral",
    "graded_norm",
    "graded_norms_upto",
    "joint_norm",
    "ball_check",
    "DEGREE_CAP",
]

DEGREE_CAP = 128
NORM_GRID_FACTOR = 4
NORM_GRID_MIN = 64


class FuncSpaceError(Exception):
    pass


@dataclass(frozen=True)
class Domain:
    """Time interval [t0-a, t0+b] times a box in R^s."""

    t0: float
    a: float
    b: float
    S: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        if not (self.a > 0 and self.b > 0):
            raise FuncSpaceError("time half-widths a, b must be positive")
        S = tuple((float(lo), float(hi)) for lo, hi in self.S)
        object.__setattr__(self, "S", S)
        for lo, hi in S:
            if not lo < hi:
                raise FuncSpaceError(f"empty spatial interval [{lo}, {hi}]")

    @property
    def s(self) -> int:
        return len(self.S)

    @property
    def tbar(self) -> float:
        return max(self.a, self.b)

    @property
    def t_interval(self) -> tuple[float, float]:
        return (self.t0 - self.a, self.t0 + self.b)

    def intervals(self) -> list[tuple[float, float]]:
        return [self.t_interval, *self.S]


def _to_unit(pts: np.ndarray, interval: tuple[float, float]) -> np.ndarray:
    lo, hi = interval
    return (2.0 * np.asarray(pts) - lo - hi) / (hi - lo)


def _halfwidth(interval: tuple[float, float]) -> float:
    lo, hi = interval
    return (hi - lo) / 2.0


def _nodes(deg: int) -> np.ndarray:
    if deg == 0:
        return np.array([0.0])
    return cheb.chebpts2(deg + 1)


@lru_cache(maxsize=256)
def _vander(npts_key: tuple, deg: int) -> np.ndarray:
    kind, n = npts_key
    if kind == "cheb":
        u = _nodes(n - 1)
    else:
        u = np.linspace(-1.0, 1.0, n)
    return cheb.chebvander(u, deg)


def _values_to_coeffs(vals: np.ndarray, axis: int) -> np.ndarray:
    """Invert chebvander sampling at Chebyshev extrema along one axis."""
    n = vals.shape[axis]
    V = _vander(("cheb", n), n - 1)
    moved = np.moveaxis(vals, axis, 0)
    flat = moved.reshape(n, -1)
    coef = np.linalg.solve(V, flat).reshape(moved.shape)
    return np.moveaxis(coef, 0, axis)


def _eval_axis(coeffs: np.ndarray, axis: int, u: np.ndarray) -> np.ndarray:
    V = cheb.chebvander(np.asarray(u, dtype=float), coeffs.shape[axis] - 1)
    out = np.tensordot(V, np.moveaxis(coeffs, axis, 0), axes=(1, 0))
    return np.moveaxis(out, 0, axis)


# ---------------------------------------------------------------------------
# SepFunc
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SepFunc:
    """Element of C^p_t C^inf_x(T x S, R^m) as a coefficient tensor.

    ``coeffs`` has shape (m, deg_t+1, deg_x1+1, ..., deg_xs+1).
    """

    domain: Domain
    m: int
    p: int
    coeffs: np.ndarray = field(compare=False)
    interp_error: float | None = field(default=None, compare=False)
    truncation: float | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        arr = np.asarray(self.coeffs, dtype=float)
        if arr.ndim != 2 + self.domain.s:
            raise FuncSpaceError(
                f"coefficient tensor rank {arr.ndim} does not match "
                f"1 (component) + 1 (time) + {self.domain.s} (space)"
            )
        if arr.shape[0] != self.m:
            raise FuncSpaceError("leading axis must equal component count m")
        if not np.all(np.isfinite(arr)):
            raise FuncSpaceError("non-finite coefficients")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    # -- shape helpers ----------------------------------------------------

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(n - 1 for n in self.coeffs.shape[1:])

    @property
    def deg_t(self) -> int:
        return self.coeffs.shape[1] - 1

    @classmethod
    def zeros(cls, domain: Domain, m: int, p: int, degrees: Sequence[int]) -> "SepFunc":
        shape = (m, *[d + 1 for d in degrees])
        return cls(domain, m, p, np.zeros(shape))

    def _padded(self, shape: tuple[int, ...]) -> np.ndarray:
        pad = [(0, s - c) for s, c in zip(shape, self.coeffs.shape)]
        return np.pad(self.coeffs, pad)

    def _check_compatible(self, other: "SepFunc") -> None:
        if self.domain != other.domain or self.m != other.m or self.p != other.p:
            raise FuncSpaceError("mismatched domains or shapes")

    # -- algebra ------------------------------------------------------------

    def __add__(self, other: "SepFunc") -> "SepFunc":
        self._check_compatible(other)
        shape = tuple(
            max(a, b) for a, b in zip(self.coeffs.shape, other.coeffs.shape)
        )
        return SepFunc(self.domain, self.m, self.p,
                       self._padded(shape) + other._padded(shape))

    def __sub__(self, other: "SepFunc") -> "SepFunc":
        self._check_compatible(other)
        shape = tuple(
            max(a, b) for a, b in zip(self.coeffs.shape, other.coeffs.shape)
        )
        return SepFunc(self.domain, self.m, self.p,
                       self._padded(shape) - other._padded(shape))

    def __mul__(self, scalar: float) -> "SepFunc":
        return SepFunc(self.domain, self.m, self.p, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "SepFunc":
        return SepFunc(self.domain, self.m, self.p, -self.coeffs)

    # -- evaluation -----------------------------------------------------------

    def eval_grid(self, t_pts: np.ndarray, x_grids: Sequence[np.ndarray] = ()) -> np.ndarray:
        """Values on the tensor grid; result shape (m, len(t), len(x1), ...)."""
        if len(x_grids) != self.domain.s:
            raise FuncSpaceError("grid rank does not match spatial dimension")
        out = self.coeffs
        intervals = self.domain.intervals()
        for axis, (pts, iv) in enumerate(zip([t_pts, *x_grids], intervals), start=1):
            out = _eval_axis(out, axis, _to_unit(pts, iv))
        return out

    def trim(self, rel_eps: float = 1e-14) -> "SepFunc":
        """Zero out relatively negligible coefficients and drop trailing slices."""
        arr = np.array(self.coeffs)
        scale = np.max(np.abs(arr))
        if scale == 0:
            out = arr[(slice(None), *([slice(0, 1)] * (arr.ndim - 1)))]
            return replace(self, coeffs=out)
        arr[np.abs(arr) < rel_eps * scale] = 0.0
        for axis in range(1, arr.ndim):
            mov = np.moveaxis(arr, axis, 0)
            n = mov.shape[0]
            while n > 1 and not np.any(mov[n - 1]):
                n -= 1
            arr = np.moveaxis(mov[:n], 0, axis)
        return replace(self, coeffs=arr)

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "schema": "sepfunc/1",
            "domain": {
                "t0": self.domain.t0,
                "a": self.domain.a,
                "b": self.domain.b,
                "S": [list(iv) for iv in self.domain.S],
            },
            "m": self.m,
            "p": self.p,
            "degrees": list(self.degrees),
            "coeffs": np.asarray(self.coeffs).ravel(order="C").tolist(),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "SepFunc":
        if data.get("schema") != "sepfunc/1":
            raise FuncSpaceError("unknown sepfunc schema")
        dom = Domain(
            data["domain"]["t0"],
            data["domain"]["a"],
            data["domain"]["b"],
            tuple(tuple(iv) for iv in data["domain"]["S"]),
        )
        shape = (data["m"], *[d + 1 for d in data["degrees"]])
        coeffs = np.array(data["coeffs"], dtype=float).reshape(shape, order="C")
        return cls(dom, data["m"], data["p"], coeffs)

    def dumps(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "SepFunc":
        return cls.from_json_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Radii
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Radii:
    """Per-index ball radii r_k > 0, +inf as an explicit sentinel."""

    values: tuple[float, ...] | None = None
    rule: Callable[[int], float] | None = field(default=None, compare=False)
    extend: str = "hold"  # how to continue past an explicit list

    def __post_init__(self) -> None:
        if self.values is not None:
            vals = tuple(float(v) for v in self.values)
            if not vals:
                raise FuncSpaceError("empty radii list")
            for v in vals:
                if not (v > 0 or math.isinf(v)):
                    raise FuncSpaceError("radii must be positive (or +inf)")
            object.__setattr__(self, "values", vals)
        elif self.rule is None:
            raise FuncSpaceError("radii need values or a rule")
        if self.extend not in ("hold", "strict"):
            raise FuncSpaceError("extend must be 'hold' or 'strict'")

    @classmethod
    def constant(cls, r: float) -> "Radii":
        return cls(values=(r,), extend="hold")

    @classmethod
    def infinite(cls) -> "Radii":
        return cls(values=(math.inf,), extend="hold")

    @classmethod
    def from_list(cls, values: Iterable[float], extend: str = "hold") -> "Radii":
        return cls(values=tuple(values), extend=extend)

    @classmethod
    def from_function(cls, fn: Callable[[int], float]) -> "Radii":
        return cls(values=None, rule=fn)

    def value(self, k: int) -> float:
        if self.values is None:
            v = float(self.rule(k))
            if not (v > 0 or math.isinf(v)):
                raise FuncSpaceError(f"radii rule returned nonpositive r_{k}={v}")
            return v
        if k < len(self.values):
            return self.values[k]
        if self.extend == "hold":
            return self.values[-1]
        raise FuncSpaceError(f"radius r_{k} not provided (strict list)")

    def is_infinite(self) -> bool:
        return self.values is not None and all(math.isinf(v) for v in self.values)


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def interpolate(
    exprs: Expr | Sequence[Expr],
    dom: Domain,
    degrees: Sequence[int],
    m: int = 1,
    p: int = 0,
    *,
    t_constant: bool = False,
) -> SepFunc:
    """Chebyshev interpolant of closed-form expressions on the domain.

    ``degrees`` has one entry per axis (t first); with ``t_constant`` the
    expressions may not mention ``t`` and degree 0 is forced on the t axis.
    The max error sampled on a 3x finer grid is attached as ``interp_error``.
    """
    if isinstance(exprs, (list, tuple)):
        elist = list(exprs)
    else:
        elist = [exprs]
    if len(elist) != m:
        raise FuncSpaceError(f"expected {m} component expressions, got {len(elist)}")
    degrees = list(degrees)
    if len(degrees) != 1 + dom.s:
        raise FuncSpaceError("degrees must cover the t axis plus each x axis")
    if any(d > DEGREE_CAP for d in degrees):
        raise FuncSpaceError(f"degree cap {DEGREE_CAP} exceeded: {degrees}")
    allowed = {"t", *[f"x{i}" for i in range(1, dom.s + 1)]}
    for e in elist:
        fv = free_variables(e)
        if not fv <= allowed:
            raise FuncSpaceError(f"expression uses undeclared variables {fv - allowed}")

    def sample(n_per_axis: list[np.ndarray]) -> np.ndarray:
        grids = np.meshgrid(*n_per_axis, indexing="ij") if n_per_axis else []
        bindings = {}
        names = ["t", *[f"x{i}" for i in range(1, dom.s + 1)]]
        for name, g in zip(names, grids):
            bindings[name] = g
        vals = []
        for e in elist:
            v = eval_expr(e, bindings)
            v = np.broadcast_to(np.asarray(v, dtype=float),
                                tuple(len(a) for a in n_per_axis))
            vals.append(v)
        return np.stack(vals)

    intervals = dom.intervals()
    node_pts = []
    for deg, iv in zip(degrees, intervals):
        u = _nodes(deg)
        lo, hi = iv
        node_pts.append((lo + hi) / 2 + (hi - lo) / 2 * u)
    vals = sample(node_pts)
    if not np.all(np.isfinite(vals)):
        raise FuncSpaceError("non-finite sample value during interpolation")
    coef = vals
    for axis in range(1, vals.ndim):
        coef = _values_to_coeffs(coef, axis)

    # error sampled on a 3x finer grid
    fine_pts = []
    for deg, iv in zip(degrees, intervals):
        lo, hi = iv
        fine_pts.append(np.linspace(lo, hi, 3 * (deg + 1) + 1))
    fine_vals = sample(fine_pts)
    approx = coef
    for axis, (pts, iv) in enumerate(zip(fine_pts, intervals), start=1):
        approx = _eval_axis(approx, axis, _to_unit(pts, iv))
    err = float(np.max(np.abs(fine_vals - approx))) if fine_vals.size else 0.0

    return SepFunc(dom, m, p, coef, interp_error=err)


def from_values(
    vals: np.ndarray, dom: Domain, m: int, p: int
) -> SepFunc:
    """Build a SepFunc from values sampled at Chebyshev-extrema tensor nodes."""
    coef = np.asarray(vals, dtype=float)
    if not np.all(np.isfinite(coef)):
        raise FuncSpaceError("non-finite sample value")
    for axis in range(1, coef.ndim):
        coef = _values_to_coeffs(coef, axis)
    return SepFunc(dom, m, p, coef)


def chebyshev_nodes(dom: Domain, degrees: Sequence[int]) -> list[np.ndarray]:
    """Physical tensor-product interpolation nodes for the given degrees."""
    pts = []
    for deg, iv in zip(degrees, dom.intervals()):
        u = _nodes(deg)
        lo, hi = iv
        pts.append((lo + hi) / 2 + (hi - lo) / 2 * u)
    return pts


# ---------------------------------------------------------------------------
# Calculus
# ---------------------------------------------------------------------------


def partial_derivative(f: SepFunc, beta: Sequence[int]) -> SepFunc:
    """Exact partial derivative; orders beyond the degree give the zero function."""
    beta = tuple(int(b) for b in beta)
    if len(beta) != 1 + f.domain.s:
        raise FuncSpaceError("multi-index rank mismatch")
    if any(b < 0 for b in beta):
        raise FuncSpaceError("negative derivative order")
    coef = np.asarray(f.coeffs)
    intervals = f.domain.intervals()
    for axis, (order, iv) in enumerate(zip(beta, intervals), start=1):
        if order == 0:
            continue
        if order > coef.shape[axis] - 1:
            return SepFunc.zeros(f.domain, f.m, f.p, [0] * (1 + f.domain.s))
        coef = cheb.chebder(coef, m=order, scl=1.0 / _halfwidth(iv), axis=axis)
    return SepFunc(f.domain, f.m, f.p, coef)


def iterated_time_integral(f: SepFunc, j: int) -> SepFunc:
    """The j-fold nested antiderivative from t0, exact on coefficients."""
    if j < 1:
        raise FuncSpaceError("fold count must be >= 1")
    if f.deg_t + j > DEGREE_CAP:
        raise FuncSpaceError(
            f"degree cap {DEGREE_CAP} exceeded by {j}-fold time integral"
        )
    iv = f.domain.t_interval
    u0 = float(_to_unit(np.array(f.domain.t0), iv))
    coef = cheb.chebint(np.asarray(f.coeffs), m=j, lbnd=u0,
                        scl=_halfwidth(iv), axis=1)
    return SepFunc(f.domain, f.m, f.p, coef)


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------


def _norm_grid(f: SepFunc, grid_factor: int, min_points: int) -> list[np.ndarray]:
    pts = []
    for deg, iv in zip(f.degrees, f.domain.intervals()):
        n = max(min_points, grid_factor * deg + 1)
        pts.append(np.linspace(iv[0], iv[1], n))
    return pts


def _multi_indices(total_max: int, dims: int) -> Iterator[tuple[int, ...]]:
    if dims == 0:
        yield ()
        return
    for head in range(total_max + 1):
        for rest in _multi_indices(total_max - head, dims - 1):
            yield (head, *rest)


def _sup_on_grid(f: SepFunc, grid: list[np.ndarray]) -> float:
    vals = f.eval_grid(grid[0], grid[1:])
    if not np.all(np.isfinite(vals)):
        raise FuncSpaceError("non-finite derivative values on norm grid")
    return float(np.max(np.abs(vals)))


def graded_norms_upto(
    f: SepFunc,
    k_max: int,
    *,
    p: int | None = None,
    grid_factor: int = NORM_GRID_FACTOR,
    min_points: int = NORM_GRID_MIN,
) -> np.ndarray:
    """Vector of graded norms for k = 0..k_max in one sweep."""
    p_eff = f.p if p is None else p
    grid = _norm_grid(f, grid_factor, min_points)
    best = np.zeros(k_max + 1)
    for beta in _multi_indices(k_max, 1 + f.domain.s):
        if beta[0] > p_eff:
            continue
        df = partial_derivative(f, beta)
        sup = _sup_on_grid(df, grid)
        k_from = sum(beta)
        best[k_from:] = np.maximum(best[k_from:], sup)
    return best


def graded_norm(
    f: SepFunc,
    k: int,
    *,
    p: int | None = None,
    grid_factor: int = NORM_GRID_FACTOR,
    min_points: int = NORM_GRID_MIN,
) -> float:
    """Graded seminorm: sup over derivatives with |beta| <= k, beta_t <= p."""
    if k < 0:
        raise FuncSpaceError("norm index must be nonnegative")
    return float(
        graded_norms_upto(f, k, p=p, grid_factor=grid_factor, min_points=min_points)[k]
    )


def joint_norm(
    f: SepFunc,
    k: int,
    *,
    grid_factor: int = NORM_GRID_FACTOR,
    min_points: int = NORM_GRID_MIN,
) -> float:
    """Jointly graded norm: no restriction on the time order (contrast norm)."""
    if k < 0:
        raise FuncSpaceError("norm index must be nonnegative")
    return float(
        graded_norms_upto(
            f, k, p=k, grid_factor=grid_factor, min_points=min_points
        )[k]
    )


# ---------------------------------------------------------------------------
# Ball membership
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BallRow:
    k: int
    distance: float
    radius: float
    within: bool


@dataclass(frozen=True)
class BallReport:
    rows: tuple[BallRow, ...]
    member: bool

    def to_json_dict(self) -> dict:
        return {
            "member": self.member,
            "rows": [
                {"k": r.k, "distance": r.distance, "radius": r.radius,
                 "within": r.within}
                for r in self.rows
            ],
        }


def ball_check(
    f: SepFunc,
    center: SepFunc,
    radii: Radii,
    k_max: int,
    *,
    grid_factor: int = NORM_GRID_FACTOR,
    min_points: int = NORM_GRID_MIN,
) -> BallReport:
    """Distances ||f - center||_k against r_k for k = 0..k_max."""
    f._check_compatible(center)
    diff = f - center
    norms = graded_norms_upto(
        diff, k_max, grid_factor=grid_factor, min_points=min_points
    )
    rows = []
    for k in range(k_max + 1):
        r = radii.value(k)
        dist = float(norms[k])
        rows.append(BallRow(k, dist, r, bool(dist <= r)))
    return BallReport(tuple(rows), all(r.within for r in rows))
