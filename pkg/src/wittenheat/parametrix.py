"""Exact heat-kernel parametrix for the deformed de Rham Laplacian on flat R^n.

The approximate kernel at order k is

    K^k(t,x,y) = E0(t,x,y) * exp(-t T^2 h(x,y)) * sum_{j=0..k} t^j Theta_j(x,y;T)

with E0 the Euclidean heat kernel and h(x,y) the average of V = |grad f|^2
over the straight segment from x to y.  The endomorphism-valued coefficients
Theta_j are produced by a transport ODE along rays from x,

    Theta_{j+1}(x,y) = -Int_0^1 u^j [ lap Theta_j + T L_f Theta_j
                        - lap(h_T) Theta_{j-1} + 2 grad(h_T).grad Theta_{j-1}
                        - |grad h_T|^2 Theta_{j-2} ](x, x+u(y-x)) du,

where lap = -sum d^2/dy_i^2 (geometer's sign), h_T = T^2 h, all derivatives
act on the y slot before the segment restriction, and L_f is the Hessian
bracket endomorphism of :func:`wittenheat.exterior.lf_endo`.  The sign of the
L_f term is pinned by composing (d + T df) with its formal adjoint on R^1;
with that convention (partial_t + Laplacian + T L_f + T^2 V) K^k = t^k R_k
holds exactly, which `pde_defect_check` verifies numerically.

Everything symbolic is exact over Fractions: polynomial rings are laid out as
(x_1..x_n, y_1..y_n, T) with one extra integration variable u appended while
segment integrals are taken.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import exterior
from .poly_core import Fraction as _F  # noqa: F401  (re-export convenience)
from .poly_core import MultiPoly, grad, hessian, parse_poly, potential_v

__all__ = [
    "EndoPoly", "ThetaTable", "h_poly", "e0_eval", "e1_eval",
    "theta_recursion", "t_grading", "GradingReport", "parametrix_eval",
    "remainder_eval", "pde_defect_check", "diagonal_expansion",
    "index_density_candidate", "theta_bound_probe", "vexpv_probe",
    "table_to_json", "table_from_json",
]


# ----------------------------------------------------------------------
# Endomorphism-valued polynomials
# ----------------------------------------------------------------------

class EndoPoly:
    """2^n x 2^n matrix with MultiPoly entries (sparse dict of (row, col))."""

    __slots__ = ("n", "nv", "entries", "_evals")

    def __init__(self, n: int, nv: int, entries=None):
        self.n = n
        self.nv = nv
        self.entries = {}
        for key, p in (entries or {}).items():
            if not p.is_zero():
                self.entries[key] = p
        self._evals = None

    @property
    def dim(self) -> int:
        return 1 << self.n

    @staticmethod
    def identity(n: int, nv: int) -> "EndoPoly":
        one = MultiPoly.const(nv, 1)
        return EndoPoly(n, nv, {(m, m): one for m in range(1 << n)})

    @staticmethod
    def zero(n: int, nv: int) -> "EndoPoly":
        return EndoPoly(n, nv, {})

    def is_zero(self) -> bool:
        return not self.entries

    def __add__(self, other: "EndoPoly") -> "EndoPoly":
        out = dict(self.entries)
        for k, p in other.entries.items():
            s = out.get(k)
            out[k] = p if s is None else s + p
        return EndoPoly(self.n, self.nv, out)

    def __sub__(self, other: "EndoPoly") -> "EndoPoly":
        return self + other.scale(-1)

    def scale(self, s) -> "EndoPoly":
        """Multiply every entry by a scalar or a MultiPoly of the same ring."""
        return EndoPoly(self.n, self.nv,
                        {k: p * s for k, p in self.entries.items()})

    def __matmul__(self, other: "EndoPoly") -> "EndoPoly":
        out = {}
        cols = {}
        for (r, c), p in other.entries.items():
            cols.setdefault(r, []).append((c, p))
        for (r, c), p in self.entries.items():
            for c2, q in cols.get(c, ()):
                key = (r, c2)
                prod = p * q
                s = out.get(key)
                out[key] = prod if s is None else s + prod
        return EndoPoly(self.n, self.nv, out)

    def map_entries(self, fn, nv: int | None = None) -> "EndoPoly":
        return EndoPoly(self.n, nv if nv is not None else self.nv,
                        {k: fn(p) for k, p in self.entries.items()})

    def __eq__(self, other):
        return (isinstance(other, EndoPoly) and self.n == other.n
                and self.nv == other.nv and self.entries == other.entries)

    def supertrace_poly(self) -> MultiPoly:
        out = MultiPoly.zero(self.nv)
        for m in range(self.dim):
            p = self.entries.get((m, m))
            if p is not None:
                sign = -1 if bin(m).count("1") & 1 else 1
                out = out + p * sign
        return out

    def evaluate(self, pts) -> np.ndarray:
        """Evaluate at points of shape (..., nv) -> (..., 2^n, 2^n)."""
        if self._evals is None:
            self._evals = {k: p.evaluator() for k, p in self.entries.items()}
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.zeros(pts.shape[:-1] + (self.dim, self.dim))
        for (r, c), ev in self._evals.items():
            out[..., r, c] = ev(pts)
        return out

    def max_t_degree(self) -> int:
        """Maximal exponent of T (the last ring variable)."""
        ti = self.nv - 1
        return max((p.degree_in(ti) for p in self.entries.values()), default=0)

    def t_component(self, l: int, drop: bool = False) -> "EndoPoly":
        """Coefficient of T^l; with drop=True the T variable is removed."""
        ti = self.nv - 1
        out = {}
        for k, p in self.entries.items():
            terms = {}
            for e, c in p.terms.items():
                if e[ti] == l:
                    ne = e[:ti] if drop else e[:ti] + (0,)
                    terms[ne] = c
            if terms:
                out[k] = MultiPoly(self.nv - 1 if drop else self.nv, terms)
        return EndoPoly(self.n, self.nv - 1 if drop else self.nv, out)


def _integrate_u01(P: MultiPoly, j: int) -> MultiPoly:
    """Integral over u in [0,1] of u^j * P, where u is P's last variable."""
    ui = P.nvars - 1
    terms = {}
    for e, c in P.terms.items():
        ne = e[:ui]
        w = c * Fraction(1, e[ui] + j + 1)
        s = terms.get(ne, 0) + w
        if s:
            terms[ne] = s
        else:
            terms.pop(ne, None)
    return MultiPoly(P.nvars - 1, terms)


def _segment_mapping(n: int) -> list[MultiPoly]:
    """Substitution (x,y,T) -> (x, x+u(y-x), T) into the ring with u appended."""
    nv, nvu = 2 * n + 1, 2 * n + 2
    u = MultiPoly.variable(nvu, nvu - 1)
    mapping = []
    for i in range(n):
        mapping.append(MultiPoly.variable(nvu, i))
    for i in range(n):
        xi = MultiPoly.variable(nvu, i)
        yi = MultiPoly.variable(nvu, n + i)
        mapping.append(xi + u * (yi - xi))
    mapping.append(MultiPoly.variable(nvu, 2 * n))
    assert len(mapping) == nv
    return mapping


def h_poly(f: MultiPoly) -> MultiPoly:
    """Segment average of V = |grad f|^2: h(x,y) = Int_0^1 V(x+u(y-x)) du.

    Exact polynomial in 2n variables (x_1..x_n, y_1..y_n); h(x,x) = V(x).
    """
    if f.is_complex():
        raise ValueError("h_poly expects a real polynomial")
    n = f.nvars
    V = potential_v(f)
    nvu = 2 * n + 1  # (x, y, u)
    u = MultiPoly.variable(nvu, nvu - 1)
    mapping = []
    for i in range(n):
        xi = MultiPoly.variable(nvu, i)
        yi = MultiPoly.variable(nvu, n + i)
        mapping.append(xi + u * (yi - xi))
    return _integrate_u01(V.compose(mapping), 0)


def e0_eval(t: float, x, y) -> float:
    """Euclidean heat kernel (4 pi t)^{-n/2} exp(-|x-y|^2 / 4t)."""
    if t <= 0:
        raise ValueError("t must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[-1] if x.ndim else 1
    r2 = np.sum((x - y) ** 2, axis=-1)
    return (4 * math.pi * t) ** (-n / 2) * np.exp(-r2 / (4 * t))


def e1_eval(t: float, T: float, x, y, h: MultiPoly) -> float:
    """Potential-average damping exp(-t T^2 h(x,y))."""
    if t <= 0:
        raise ValueError("t must be positive")
    pt = np.concatenate([np.atleast_1d(np.asarray(x, float)),
                         np.atleast_1d(np.asarray(y, float))])
    hv = h.evaluator()(pt[None, :])[0]
    return math.exp(-t * T * T * hv)


# ----------------------------------------------------------------------
# ThetaTable and the recursion
# ----------------------------------------------------------------------

class ThetaTable:
    """Potential f with its parametrix data: h and Theta_0..Theta_order."""

    def __init__(self, f: MultiPoly, order: int, V: MultiPoly, h: MultiPoly,
                 thetas: list[EndoPoly]):
        self.f = f
        self.n = f.nvars
        self.order = order
        self.V = V          # n variables
        self.h = h          # 2n variables (x, y)
        self.thetas = thetas
        self._cache: dict = {}

    # -- lazy symbolic helpers ------------------------------------------
    def _aux(self):
        if "aux" not in self._cache:
            self._cache["aux"] = _recursion_aux(self.f, self.V, self.h)
        return self._cache["aux"]

    def _brackets(self):
        """Remainder brackets (A, B, C): R_k = E0 E1 (A + B t + C t^2)."""
        if "brackets" not in self._cache:
            aux = self._aux()
            k = self.order
            th = self.thetas
            zero = EndoPoly.zero(self.n, 2 * self.n + 1)
            tm1 = th[k - 1] if k >= 1 else zero
            tm2 = th[k - 2] if k >= 2 else zero
            A = _source(aux, th[k], tm1, tm2)
            B = (th[k].scale(aux["lap_hT"]).scale(-1)
                 + _dirderiv(aux, th[k]).scale(2)
                 - tm1.scale(aux["g2_hT"]))
            C = th[k].scale(aux["g2_hT"]).scale(-1)
            self._cache["brackets"] = (A, B, C)
        return self._cache["brackets"]

    def _h_derivs(self):
        """Evaluators for h and its y-derivatives (2n-variable polynomials)."""
        if "hder" not in self._cache:
            n = self.n
            dh = [self.h.diff(n + i) for i in range(n)]
            d2h = [dh[i].diff(n + i) for i in range(n)]
            self._cache["hder"] = {
                "h": self.h.evaluator(),
                "dh": [p.evaluator() for p in dh],
                "d2h": [p.evaluator() for p in d2h],
            }
        return self._cache["hder"]

    def _theta_derivs(self):
        if "thder" not in self._cache:
            n = self.n
            d1 = [[th.map_entries(lambda p, i=i: p.diff(n + i))
                   for th in self.thetas] for i in range(n)]
            d2 = [[th.map_entries(lambda p, i=i: p.diff(n + i).diff(n + i))
                   for th in self.thetas] for i in range(n)]
            self._cache["thder"] = (d1, d2)
        return self._cache["thder"]

    def _hess_evals(self):
        if "hess" not in self._cache:
            H = hessian(self.f)
            self._cache["hess"] = [[H[i][j].evaluator() for j in range(self.n)]
                                   for i in range(self.n)]
        return self._cache["hess"]

    def _v_eval(self):
        if "vev" not in self._cache:
            self._cache["vev"] = self.V.evaluator()
        return self._cache["vev"]

    def diagonal_groups(self) -> dict:
        """Supertraced diagonal coefficients grouped by exponent j - l/2.

        Returns {Fraction k: MultiPoly in x (n variables)}.
        """
        if "groups" not in self._cache:
            n, nv = self.n, 2 * self.n + 1
            mapping = [MultiPoly.variable(n + 1, i) for i in range(n)]
            mapping += [MultiPoly.variable(n + 1, i) for i in range(n)]
            mapping.append(MultiPoly.variable(n + 1, n))
            groups: dict = {}
            for j, th in enumerate(self.thetas):
                diag = th.map_entries(lambda p: p.compose(mapping), nv=n + 1)
                for l in range(diag.max_t_degree() + 1):
                    comp = diag.t_component(l, drop=True)
                    if comp.is_zero():
                        continue
                    strp = comp.supertrace_poly()
                    if strp.is_zero():
                        continue
                    key = Fraction(2 * j - l, 2)
                    groups[key] = groups.get(key, MultiPoly.zero(n)) + strp
            self._cache["groups"] = {k: v for k, v in groups.items()
                                     if not v.is_zero()}
        return self._cache["groups"]


def _recursion_aux(f: MultiPoly, V: MultiPoly, h: MultiPoly) -> dict:
    """Lifted ingredients of the recursion in the (x, y, T) ring."""
    n = f.nvars
    nv = 2 * n + 1
    t_sq = MultiPoly(nv, {(0,) * (nv - 1) + (2,): Fraction(1)})
    hT = h.lift(nv) * t_sq
    dh = [hT.diff(n + i) for i in range(n)]
    lap_hT = MultiPoly.zero(nv)
    for i in range(n):
        lap_hT = lap_hT - hT.diff(n + i).diff(n + i)
    g2_hT = sum((d * d for d in dh), MultiPoly.zero(nv))
    H = hessian(f)
    lf = EndoPoly.zero(n, nv)
    for i in range(n):
        for j in range(n):
            if H[i][j].is_zero():
                continue
            hij = H[i][j].lift(nv, shift=n)  # evaluated at y
            w = exterior.wedge_op(n, i + 1)
            ct = exterior.contract_op(n, j + 1)
            bracket = w @ ct - ct @ w
            ent = {}
            for r in range(1 << n):
                for c in range(1 << n):
                    if bracket[r, c]:
                        ent[(r, c)] = hij * int(bracket[r, c])
            lf = lf + EndoPoly(n, nv, ent)
    t_mono = MultiPoly(nv, {(0,) * (nv - 1) + (1,): Fraction(1)})
    return {"n": n, "nv": nv, "hT": hT, "dh": dh, "lap_hT": lap_hT,
            "g2_hT": g2_hT, "lf": lf, "t_mono": t_mono}


def _lap_endo(aux, th: EndoPoly) -> EndoPoly:
    n = aux["n"]

    def lap(p: MultiPoly) -> MultiPoly:
        out = MultiPoly.zero(p.nvars)
        for i in range(n):
            out = out - p.diff(n + i).diff(n + i)
        return out
    return th.map_entries(lap)


def _dirderiv(aux, th: EndoPoly) -> EndoPoly:
    n, nv = aux["n"], aux["nv"]
    out = EndoPoly.zero(n, nv)
    for i in range(n):
        di = th.map_entries(lambda p, i=i: p.diff(n + i))
        out = out + di.scale(aux["dh"][i])
    return out


def _source(aux, tj: EndoPoly, tjm1: EndoPoly, tjm2: EndoPoly) -> EndoPoly:
    """Transport source lap(Tj) + T Lf Tj - lap(hT) Tjm1 + 2 grad hT . grad Tjm1
    - |grad hT|^2 Tjm2."""
    S = _lap_endo(aux, tj)
    S = S + (aux["lf"] @ tj).scale(aux["t_mono"])
    S = S - tjm1.scale(aux["lap_hT"])
    S = S + _dirderiv(aux, tjm1).scale(2)
    S = S - tjm2.scale(aux["g2_hT"])
    return S


def _segment_integral(n: int, S: EndoPoly, j: int) -> EndoPoly:
    mapping = _segment_mapping(n)

    def seg(p: MultiPoly) -> MultiPoly:
        return _integrate_u01(p.compose(mapping), j)
    return S.map_entries(seg)


def theta_recursion(f: MultiPoly, k: int) -> ThetaTable:
    """Build Theta_0..Theta_k for a real polynomial potential f."""
    if f.is_complex():
        raise ValueError("theta_recursion expects a real polynomial")
    if k < 0:
        raise ValueError("order must be >= 0")
    n = f.nvars
    nv = 2 * n + 1
    V = potential_v(f)
    h = h_poly(f)
    aux = _recursion_aux(f, V, h)
    thetas = [EndoPoly.identity(n, nv)]
    zero = EndoPoly.zero(n, nv)
    for j in range(k):
        tj = thetas[j]
        tjm1 = thetas[j - 1] if j >= 1 else zero
        tjm2 = thetas[j - 2] if j >= 2 else zero
        S = _source(aux, tj, tjm1, tjm2)
        thetas.append(_segment_integral(n, S, j).scale(-1))
    tab = ThetaTable(f, k, V, h, thetas)
    tab._cache["aux"] = aux
    return tab


# ----------------------------------------------------------------------
# Grading
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class GradingReport:
    order: int
    max_l: tuple[int, ...]       # observed maximal T-degree per j
    bound: tuple[int, ...]       # allowed bound j + [j/3]
    violations: tuple[tuple[int, int], ...]
    ok: bool


def t_grading(tab: ThetaTable) -> GradingReport:
    """Exact T-degree decomposition check: Theta_j has T-degree <= j + [j/3]."""
    max_l, bound, bad = [], [], []
    for j, th in enumerate(tab.thetas):
        b = j + j // 3
        m = th.max_t_degree()
        max_l.append(m)
        bound.append(b)
        for l in range(b + 1, m + 1):
            if not th.t_component(l).is_zero():
                bad.append((j, l))
    return GradingReport(order=tab.order, max_l=tuple(max_l),
                         bound=tuple(bound), violations=tuple(bad),
                         ok=not bad)


# ----------------------------------------------------------------------
# Numeric evaluation
# ----------------------------------------------------------------------

def _point(tab: ThetaTable, x, y, T: float) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return np.concatenate([x, y, [float(T)]])[None, :]


def _theta_sum(tab: ThetaTable, thetas, t: float, pt) -> np.ndarray:
    dim = 1 << tab.n
    out = np.zeros((dim, dim))
    for j, th in enumerate(thetas):
        if th.is_zero():
            continue
        out += t ** j * th.evaluate(pt)[0]
    return out


def parametrix_eval(tab: ThetaTable, t: float, T: float, x, y) -> np.ndarray:
    """K^k(t,x,y) as a 2^n x 2^n matrix."""
    if t <= 0:
        raise ValueError("t must be positive")
    pt = _point(tab, x, y, T)
    e0 = float(e0_eval(t, np.atleast_1d(x), np.atleast_1d(y)))
    hv = tab._h_derivs()["h"](pt[:, :2 * tab.n])[0]
    e1 = math.exp(-t * T * T * hv)
    return e0 * e1 * _theta_sum(tab, tab.thetas, t, pt)


def remainder_eval(tab: ThetaTable, t: float, T: float, x, y) -> np.ndarray:
    """R_k(t,x,y) = E0 E1 (A + B t + C t^2) with the order-k brackets."""
    if t <= 0:
        raise ValueError("t must be positive")
    A, B, C = tab._brackets()
    pt = _point(tab, x, y, T)
    e0 = float(e0_eval(t, np.atleast_1d(x), np.atleast_1d(y)))
    hv = tab._h_derivs()["h"](pt[:, :2 * tab.n])[0]
    e1 = math.exp(-t * T * T * hv)
    val = A.evaluate(pt)[0] + t * B.evaluate(pt)[0] + t * t * C.evaluate(pt)[0]
    return e0 * e1 * val


def _box_kernel(tab: ThetaTable, t: float, T: float, x, y) -> np.ndarray:
    """Witten Laplacian (y slot) applied to K^k, assembled from symbolic
    y-derivatives of the Theta's and the closed-form derivatives of E0 E1."""
    n = tab.n
    pt = _point(tab, x, y, T)
    pxy = pt[:, :2 * n]
    x = np.atleast_1d(np.asarray(x, float))
    y = np.atleast_1d(np.asarray(y, float))
    hd = tab._h_derivs()
    hv = hd["h"](pxy)[0]
    e0 = float(e0_eval(t, x, y))
    phi = e0 * math.exp(-t * T * T * hv)
    d1, d2 = tab._theta_derivs()
    S = _theta_sum(tab, tab.thetas, t, pt)
    lap = np.zeros_like(S)
    for i in range(n):
        gi = -(y[i] - x[i]) / (2 * t) - t * T * T * hd["dh"][i](pxy)[0]
        dgi = -1.0 / (2 * t) - t * T * T * hd["d2h"][i](pxy)[0]
        dSi = _theta_sum(tab, d1[i], t, pt)
        d2Si = _theta_sum(tab, d2[i], t, pt)
        lap -= (gi * gi + dgi) * S + 2 * gi * dSi + d2Si
    Hy = np.array([[tab._hess_evals()[i][j](y[None, :])[0]
                    for j in range(n)] for i in range(n)])
    Vy = tab._v_eval()(y[None, :])[0]
    op = lap + T * exterior.lf_endo(Hy) @ S + T * T * Vy * S
    return phi * op


def _dt_kernel(tab: ThetaTable, t: float, T: float, x, y,
               steps: int, rel_step: float) -> np.ndarray:
    """d/dt of K^k: 5-point central differences in log t, Richardson-refined.

    The stencil differences the constructed factor G = exp(-t T^2 h) sum t^j
    Theta_j (the part the recursion is responsible for); the Euclidean factor
    E0 contributes its textbook derivative in closed form.  Differencing the
    full product instead would bury the t^k remainder under the t-derivative
    of the Gaussian, which is ~1e8 times larger at moderate |x-y|^2/4t.
    """
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    ya = np.atleast_1d(np.asarray(y, dtype=float))
    pt = _point(tab, xa, ya, T)
    hv = tab._h_derivs()["h"](pt[:, :2 * tab.n])[0]
    n = tab.n
    r2 = float(np.sum((xa - ya) ** 2))

    def G(tt: float) -> np.ndarray:
        return math.exp(-tt * T * T * hv) * _theta_sum(tab, tab.thetas, tt, pt)

    tau = math.log(t)
    levels = []
    for s in range(steps + 1):
        d = rel_step / (2 ** s)
        vals = [G(math.exp(tau + m * d)) for m in (-2, -1, 1, 2)]
        D = (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * d)
        levels.append(D / t)
    order = 4
    while len(levels) > 1:
        fac = 2 ** order
        levels = [(fac * levels[i + 1] - levels[i]) / (fac - 1)
                  for i in range(len(levels) - 1)]
        order += 2
    e0 = float(e0_eval(t, xa, ya))
    de0 = e0 * (-n / (2 * t) + r2 / (4 * t * t))
    return e0 * levels[0] + de0 * G(t)


def pde_defect_check(tab: ThetaTable, t: float, T: float, x, y,
                     steps: int = 2, rel_step: float = 1e-3,
                     return_parts: bool = False):
    """Relative residual of (d/dt + Box_{Tf}) K^k = t^k R_k.

    The time derivative is finite-differenced (steps Richardson levels on a
    5-point stencil in log t); the spatial operator is applied symbolically
    on the y slot.  Returns ||residual|| / (||t^k R_k|| + eps); with
    return_parts=True a dict carrying the raw norms as well (useful when the
    remainder vanishes identically and the ratio loses meaning).
    """
    if t <= 0:
        raise ValueError("t must be positive")
    dt = _dt_kernel(tab, t, T, x, y, steps, rel_step)
    box = _box_kernel(tab, t, T, x, y)
    rhs = t ** tab.order * remainder_eval(tab, t, T, x, y)
    num = float(np.linalg.norm(dt + box - rhs))
    scale = float(np.linalg.norm(dt) + np.linalg.norm(box))
    eps = 1e-10 * scale + 1e-300
    defect = num / (float(np.linalg.norm(rhs)) + eps)
    if return_parts:
        return {"defect": defect, "residual_norm": num,
                "rhs_norm": float(np.linalg.norm(rhs)), "scale": scale}
    return float(defect)


# ----------------------------------------------------------------------
# Diagonal expansion
# ----------------------------------------------------------------------

def diagonal_expansion(tab: ThetaTable, x, max_exponent=None):
    """Supertraced diagonal coefficients grouped by exponent k = j - l/2.

    Returns a sorted list of (Fraction exponent, value at x).  Groups with
    exponent k are complete once the table order reaches 3k; requesting more
    raises ValueError.
    """
    if max_exponent is not None and tab.order < int(3 * max_exponent):
        raise ValueError(
            f"table order {tab.order} too small for exponent {max_exponent}"
            f" (need {int(3 * max_exponent)})")
    x = np.atleast_1d(np.asarray(x, dtype=float))[None, :]
    out = []
    for k, p in sorted(tab.diagonal_groups().items()):
        if max_exponent is not None and k > max_exponent:
            continue
        out.append((k, float(p.evaluator()(x)[0])))
    return out


def index_density_candidate(tab: ThetaTable, x) -> float:
    """(4 pi)^{-n/2} e^{-V(x)} times the supertraced k = n/2 diagonal group."""
    n = tab.n
    k = Fraction(n, 2)
    if tab.order < int(3 * k):
        raise ValueError(f"table order >= {int(3 * k)} required")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    group = tab.diagonal_groups().get(k)
    gv = float(group.evaluator()(x[None, :])[0]) if group is not None else 0.0
    Vv = float(tab._v_eval()(x[None, :])[0])
    return (4 * math.pi) ** (-n / 2) * math.exp(-Vv) * gv


# ----------------------------------------------------------------------
# Diagnostic probes
# ----------------------------------------------------------------------

def theta_bound_probe(tab: ThetaTable, T: float, points, kappa: float = 0.0,
                      seg_samples: int = 33) -> dict:
    """Empirical constants in |Theta_j(x,y)| <= C Vbar^{kappa' j} T^{j+[j/3]}.

    points: iterable of (x, y) pairs.  Reports the per-j sup of the ratio;
    finite by construction, the value is the diagnostic.
    """
    kp = (kappa + 2.0) / 3.0
    vev = tab._v_eval()
    us = np.linspace(0.0, 1.0, seg_samples)
    const = []
    for j, th in enumerate(tab.thetas):
        best = 0.0
        for x, y in points:
            x = np.atleast_1d(np.asarray(x, float))
            y = np.atleast_1d(np.asarray(y, float))
            seg = x[None, :] + us[:, None] * (y - x)[None, :]
            vbar = float(np.max(vev(seg)))
            pt = _point(tab, x, y, T)
            norm = np.linalg.norm(th.evaluate(pt)[0])
            denom = max(vbar, 1e-12) ** (kp * j) * T ** (j + j // 3)
            best = max(best, norm / denom)
        const.append(best)
    return {"kappa_prime": kp, "constants": const,
            "finite": all(math.isfinite(c) for c in const)}


def vexpv_probe(tab: ThetaTable, samples, a_values=(0.5, 0.9),
                l_values=(1, 2), seg_samples: int = 33) -> dict:
    """Empirical sup of Vbar^l e^{-(1-a)(d^2/4t + t T^2 h)} t^l T^{2l}.

    samples: iterable of (t, T, x, y).  Returns {(a, l): sup}; boundedness of
    the sup over refining grids is the diagnostic.
    """
    vev = tab._v_eval()
    hev = tab._h_derivs()["h"]
    us = np.linspace(0.0, 1.0, seg_samples)
    out = {}
    for a in a_values:
        for l in l_values:
            sup = 0.0
            for (t, T, x, y) in samples:
                x = np.atleast_1d(np.asarray(x, float))
                y = np.atleast_1d(np.asarray(y, float))
                seg = x[None, :] + us[:, None] * (y - x)[None, :]
                vbar = float(np.max(vev(seg)))
                hv = float(hev(np.concatenate([x, y])[None, :])[0])
                d2 = float(np.sum((x - y) ** 2))
                expo = math.exp(-(1 - a) * (d2 / (4 * t) + t * T * T * hv))
                sup = max(sup, vbar ** l * expo * t ** l * T ** (2 * l))
            out[(a, l)] = sup
    return out


# ----------------------------------------------------------------------
# Serialization
# ----------------------------------------------------------------------

def _poly_to_obj(p: MultiPoly):
    return {"nvars": p.nvars,
            "terms": [[list(e), str(p.terms[e])] for e in sorted(p.terms)]}

def _poly_from_obj(o) -> MultiPoly:
    return MultiPoly(o["nvars"],
                     {tuple(e): Fraction(c) for e, c in o["terms"]})


def table_to_json(tab: ThetaTable, potential_src: str | None = None) -> str:
    """JSON document: potential string, order, per-(j, l) polynomial matrices."""
    thetas = []
    for th in tab.thetas:
        by_l = {}
        for l in range(th.max_t_degree() + 1):
            comp = th.t_component(l, drop=True)
            if comp.is_zero():
                continue
            by_l[str(l)] = {f"{r},{c}": _poly_to_obj(p)
                            for (r, c), p in sorted(comp.entries.items())}
        thetas.append(by_l)
    doc = {
        "potential": potential_src if potential_src is not None else str(tab.f),
        "nvars": tab.n,
        "order": tab.order,
        "h": _poly_to_obj(tab.h),
        "thetas": thetas,
    }
    return json.dumps(doc, sort_keys=True)


def table_from_json(src: str) -> ThetaTable:
    doc = json.loads(src)
    f = parse_poly(doc["potential"], doc["nvars"], "real")
    n = doc["nvars"]
    nv = 2 * n + 1
    thetas = []
    for by_l in doc["thetas"]:
        entries: dict = {}
        for l_str, mat in by_l.items():
            l = int(l_str)
            for key, obj in mat.items():
                r, c = (int(v) for v in key.split(","))
                p2n = _poly_from_obj(obj)
                terms = {e[:2 * n] + (l,): cc for e, cc in p2n.terms.items()}
                p = MultiPoly(nv, terms)
                cur = entries.get((r, c))
                entries[(r, c)] = p if cur is None else cur + p
        thetas.append(EndoPoly(n, nv, entries))
    return ThetaTable(f, doc["order"], potential_v(f), _poly_from_obj(doc["h"]),
                      thetas)
