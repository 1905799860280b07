"""Convex envelopes for the polar-form terms of the power flow equations.

Each builder returns the constraints of one envelope over caller-named variables,
so the same code serves the QC models, the valid-inequality generators and the
sampling tests.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from .expr import RSOC, Affine, AffineCutSet, Linear, lin, square_le

_HALF_PI = math.pi / 2


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError(f"interval bounds must be finite: [{self.lo}, {self.hi}]")
        if self.lo > self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def degenerate(self) -> bool:
        return self.lo == self.hi

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= x <= self.hi + tol

    def __iter__(self):
        yield self.lo
        yield self.hi


def _bounds(x: str, b: Interval, tag: str) -> list[Linear]:
    return [Linear(lin((1, x), const=-b.lo), ">=", tag), Linear(lin((1, x), const=-b.hi), "<=", tag)]


def square_envelope(x: str, bounds: Interval, hat: str | None = None,
                    with_bounds: bool = True) -> AffineCutSet:
    """``hat >= x**2`` and the secant ``hat <= (u + l) x - u l``."""
    hat = hat or f"{x}^2"
    lo, hi = bounds
    out = AffineCutSet(declared={x, hat})
    out.add(square_le(Affine.of(x), Affine.of(hat), "sq-lower"))
    out.add(Linear(lin((1, hat), (-(hi + lo), x), const=hi * lo), "<=", "sq-upper"))
    if with_bounds:
        out.extend(_bounds(x, bounds, "box"))
    return out


def mccormick_bilinear(x: str, y: str, bx: Interval, by: Interval, hat: str | None = None,
                       with_bounds: bool = True) -> AffineCutSet:
    """The four McCormick inequalities for ``hat = x * y`` over a box."""
    hat = hat or f"{x}*{y}"
    xl, xu = bx
    yl, yu = by
    out = AffineCutSet(declared={x, y, hat})
    out.add(Linear(lin((1, hat), (-xl, y), (-yl, x), const=xl * yl), ">=", "mc"))
    out.add(Linear(lin((1, hat), (-xu, y), (-yu, x), const=xu * yu), ">=", "mc"))
    out.add(Linear(lin((1, hat), (-xl, y), (-yu, x), const=xl * yu), "<=", "mc"))
    out.add(Linear(lin((1, hat), (-xu, y), (-yl, x), const=xu * yl), "<=", "mc"))
    if with_bounds:
        out.extend(_bounds(x, bx, "box"))
        out.extend(_bounds(y, by, "box"))
    return out


def _check_angle(bounds: Interval) -> None:
    if bounds.lo < -_HALF_PI - 1e-12 or bounds.hi > _HALF_PI + 1e-12:
        raise ValueError(f"angle bounds must lie in [-pi/2, pi/2], got [{bounds.lo}, {bounds.hi}]")


def cos_curvature(bounds: Interval) -> float:
    tm = max(abs(bounds.lo), abs(bounds.hi))
    if tm < 1e-8:
        return 0.5
    return (1 - math.cos(tm)) / tm**2


def _secant(f, lo: float, hi: float, df) -> tuple[float, float]:
    """Slope and intercept of the chord of ``f`` over ``[lo, hi]`` (tangent if degenerate)."""
    if hi - lo < 1e-12:
        slope = df(lo)
    else:
        slope = (f(hi) - f(lo)) / (hi - lo)
    return slope, f(lo) - slope * lo


def trig_envelopes(theta: str, bounds: Interval, cos_hat: str | None = None,
                   sin_hat: str | None = None) -> tuple[AffineCutSet, AffineCutSet]:
    """Cosine and sine envelopes over ``theta`` in ``bounds`` (within +-pi/2)."""
    _check_angle(bounds)
    cos_hat = cos_hat or f"cos({theta})"
    sin_hat = sin_hat or f"sin({theta})"
    lo, hi = bounds
    tm = max(abs(lo), abs(hi))

    cos_set = AffineCutSet(declared={theta, cos_hat})
    k = cos_curvature(bounds)
    cos_set.add(square_le(lin((math.sqrt(k), theta)), lin((-1, cos_hat), const=1.0), "cos-upper"))
    slope, icpt = _secant(math.cos, lo, hi, lambda t: -math.sin(t))
    cos_set.add(Linear(lin((1, cos_hat), (-slope, theta), const=-icpt), ">=", "cos-secant"))
    cos_set.extend(_bounds(theta, bounds, "box"))

    sin_set = AffineCutSet(declared={theta, sin_hat})
    c2, s2 = math.cos(tm / 2), math.sin(tm / 2)
    sin_set.add(Linear(lin((1, sin_hat), (-c2, theta), const=c2 * tm / 2 - s2), "<=", "sin-tangent"))
    sin_set.add(Linear(lin((1, sin_hat), (-c2, theta), const=-c2 * tm / 2 + s2), ">=", "sin-tangent"))
    slope, icpt = _secant(math.sin, lo, hi, math.cos)
    secant = lin((1, sin_hat), (-slope, theta), const=-icpt)
    if lo >= 0:
        sin_set.add(Linear(secant, ">=", "sin-secant"))
    if hi <= 0:
        sin_set.add(Linear(secant.copy(), "<=", "sin-secant"))
    sin_set.extend(_bounds(theta, bounds, "box"))
    return cos_set, sin_set


def cos_range(bounds: Interval) -> Interval:
    """Range of cos over an angle interval inside [-pi/2, pi/2]."""
    a, b = math.cos(bounds.lo), math.cos(bounds.hi)
    top = 1.0 if bounds.lo <= 0 <= bounds.hi else max(a, b)
    return Interval(min(a, b), top)


def sin_range(bounds: Interval) -> Interval:
    return Interval(math.sin(bounds.lo), math.sin(bounds.hi))


# --------------------------------------------------------------------------
# extreme-point (lambda) envelope of a trilinear monomial


def extreme_points(b1: Interval, b2: Interval, b3: Interval) -> list[tuple[float, float, float]]:
    """Box corners with the first coordinate slowest and the third fastest."""
    return [tuple(p) for p in itertools.product((b1.lo, b1.hi), (b2.lo, b2.hi), (b3.lo, b3.hi))]


@dataclass
class LambdaEnvelope:
    coords: tuple[str, str, str]
    boxes: tuple[Interval, Interval, Interval]
    hat: str
    weights: list[str]
    points: list[tuple[float, float, float]]
    cuts: AffineCutSet = field(default_factory=AffineCutSet)

    def products(self) -> list[float]:
        return [p[0] * p[1] * p[2] for p in self.points]


def trilinear_lambda_envelope(x1: str, x2: str, x3: str, b1: Interval, b2: Interval,
                              b3: Interval, hat: str | None = None,
                              prefix: str | None = None) -> LambdaEnvelope:
    """Convex hull of ``x1*x2*x3`` written as a convex combination of the 8 box corners."""
    hat = hat or f"{x1}*{x2}*{x3}"
    prefix = prefix or f"lam[{hat}]"
    points = extreme_points(b1, b2, b3)
    weights = [f"{prefix}_{k + 1}" for k in range(8)]
    env = LambdaEnvelope((x1, x2, x3), (b1, b2, b3), hat, weights, points)
    cuts = env.cuts
    cuts.declared = {x1, x2, x3, hat, *weights}
    cuts.add(Linear(Affine({w: p[0] * p[1] * p[2] for w, p in zip(weights, points)}) - hat,
                    "==", "lambda-value"))
    for i, x in enumerate((x1, x2, x3)):
        expr = Affine()
        for w, p in zip(weights, points):
            expr.terms[w] = expr.terms.get(w, 0.0) + p[i]
        cuts.add(Linear(expr - x, "==", "lambda-coord"))
    cuts.add(Linear(Affine({w: 1.0 for w in weights}, -1.0), "==", "lambda-sum"))
    for w in weights:
        cuts.add(Linear(Affine.of(w), ">=", "lambda-nonneg"))
    return env


def linking_constraints(env_c: LambdaEnvelope, env_s: LambdaEnvelope, bi: Interval,
                        bj: Interval) -> AffineCutSet:
    """Tie the (v_i, v_j) marginals of the cosine and sine lambda envelopes."""
    for env in (env_c, env_s):
        if env.boxes[0] != bi or env.boxes[1] != bj:
            raise ValueError("lambda envelopes are not built on the given (v_i, v_j) grid")
    prods = [bi.lo * bj.lo, bi.lo * bj.hi, bi.hi * bj.lo, bi.hi * bj.hi]
    expr = Affine()
    for pair, coef in enumerate(prods):
        for k in (2 * pair, 2 * pair + 1):
            expr.terms[env_c.weights[k]] = expr.terms.get(env_c.weights[k], 0.0) + coef
            expr.terms[env_s.weights[k]] = expr.terms.get(env_s.weights[k], 0.0) - coef
    out = AffineCutSet(declared=set(env_c.weights) | set(env_s.weights))
    out.add(Linear(expr, "==", "lambda-link"))
    return out


def soc_minor_cut(w_ii: str, w_jj: str, w_re: str, w_im: str) -> RSOC:
    """``Re(W_ij)**2 + Im(W_ij)**2 <= W_ii * W_jj``."""
    return RSOC(Affine({w_ii: 0.5}), Affine.of(w_jj), [Affine.of(w_re), Affine.of(w_im)], "soc-minor")
