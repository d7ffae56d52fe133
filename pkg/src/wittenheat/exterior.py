"""Exterior-algebra engine on Lambda^* R^n and the double algebra Lambda^* (x) Lambda^*.

Basis elements of Lambda^* R^n are indexed by subset bitmasks I of {1..n}
(bit i-1 set  <=>  e^i present, factors ordered by ascending index), so
endomorphisms are 2^n x 2^n matrices.  The double algebra carries pairs
(I, J) for e^I ehat^J with the Koszul sign rule; its Berezin integral
extracts the ehat^{1..n} component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .poly_core import MultiPoly, grad, hessian, potential_v

__all__ = [
    "wedge_op", "contract_op", "c_op", "chat_op", "cliff_product",
    "lf_endo", "supertrace", "DoubleForm", "berezin", "exp_doubleform",
    "index_density",
]


def _popcount(mask: int) -> int:
    return bin(mask).count("1")


def _sign_below(mask: int, i: int) -> int:
    """(-1)^{#{j in mask : j < i}} for 1-based index i."""
    below = mask & ((1 << (i - 1)) - 1)
    return -1 if _popcount(below) & 1 else 1


def wedge_op(n: int, i: int) -> np.ndarray:
    """Matrix of e^i wedge on Lambda^* R^n."""
    if not 1 <= i <= n:
        raise IndexError(f"index {i} out of range 1..{n}")
    dim = 1 << n
    bit = 1 << (i - 1)
    m = np.zeros((dim, dim), dtype=np.int64)
    for I in range(dim):
        if not I & bit:
            m[I | bit, I] = _sign_below(I, i)
    return m


def contract_op(n: int, i: int) -> np.ndarray:
    """Matrix of the interior product iota_{e_i}."""
    if not 1 <= i <= n:
        raise IndexError(f"index {i} out of range 1..{n}")
    dim = 1 << n
    bit = 1 << (i - 1)
    m = np.zeros((dim, dim), dtype=np.int64)
    for I in range(dim):
        if I & bit:
            m[I & ~bit, I] = _sign_below(I, i)
    return m


def c_op(n: int, i: int) -> np.ndarray:
    """c(e_i) = e^i wedge - iota_{e_i}; squares to -Id."""
    return wedge_op(n, i) - contract_op(n, i)


def chat_op(n: int, i: int) -> np.ndarray:
    """chat(e_i) = e^i wedge + iota_{e_i}; squares to +Id."""
    return wedge_op(n, i) + contract_op(n, i)


def cliff_product(n: int, mask: int, op) -> np.ndarray:
    """op(e_{i1}) @ ... @ op(e_{ik}) for the ascending indices in mask."""
    m = np.eye(1 << n, dtype=np.int64)
    for i in range(1, n + 1):
        if mask & (1 << (i - 1)):
            m = m @ op(n, i)
    return m


def lf_endo(H) -> np.ndarray:
    """Endomorphism sum_ij H_ij [e^i wedge, iota_{e_j}] for symmetric H.

    On Lambda^0 this acts as -tr(H); combined as
    Delta + T * lf_endo(hess f) + T^2 |grad f|^2 it reproduces the Witten
    Laplacian (on R^1: -d^2 + T^2 f'^2 - T f'' on functions,  +T f'' on
    1-forms), which pins the sign convention used throughout.
    """
    H = np.asarray(H, dtype=float)
    n = H.shape[0]
    out = np.zeros((1 << n, 1 << n))
    for i in range(1, n + 1):
        w = wedge_op(n, i)
        for j in range(1, n + 1):
            if H[i - 1, j - 1] == 0:
                continue
            ct = contract_op(n, j)
            out += H[i - 1, j - 1] * (w @ ct - ct @ w)
    return out


def supertrace(A: np.ndarray):
    """Alternating trace sum_I (-1)^{|I|} A[I, I]."""
    dim = A.shape[0]
    n = dim.bit_length() - 1
    if 1 << n != dim:
        raise ValueError("matrix is not 2^n x 2^n")
    signs = np.array([(-1) ** _popcount(I) for I in range(dim)])
    return (signs * np.diagonal(A)).sum()


# ----------------------------------------------------------------------
# Double exterior algebra
# ----------------------------------------------------------------------

def _merge_sign(a: int, b: int) -> int:
    """Koszul sign for concatenating sorted index sets a, b (disjoint).

    Counts inversions by sorted merge: (-1)^{#{(i,j) in a x b : i > j}}.
    """
    sign = 1
    bb = b
    while bb:
        low = bb & -bb
        above = a >> low.bit_length()
        if _popcount(above) & 1:
            sign = -sign
        bb ^= low
    return sign


@dataclass
class DoubleForm:
    """Element of Lambda^* R^n (x) Lambdahat^* R^n with float coefficients."""

    n: int
    coeffs: dict = field(default_factory=dict)

    @staticmethod
    def zero(n: int) -> "DoubleForm":
        return DoubleForm(n, {})

    @staticmethod
    def scalar(n: int, value: float) -> "DoubleForm":
        return DoubleForm(n, {(0, 0): float(value)} if value else {})

    @staticmethod
    def basis(n: int, I: int, J: int, value: float = 1.0) -> "DoubleForm":
        return DoubleForm(n, {(I, J): float(value)} if value else {})

    def degree_of(self, key) -> int:
        I, J = key
        return _popcount(I) + _popcount(J)

    def is_even(self) -> bool:
        return all(self.degree_of(k) % 2 == 0 for k in self.coeffs)

    def __add__(self, other: "DoubleForm") -> "DoubleForm":
        out = dict(self.coeffs)
        for k, v in other.coeffs.items():
            s = out.get(k, 0.0) + v
            if s:
                out[k] = s
            else:
                out.pop(k, None)
        return DoubleForm(self.n, out)

    def __neg__(self) -> "DoubleForm":
        return DoubleForm(self.n, {k: -v for k, v in self.coeffs.items()})

    def __sub__(self, other: "DoubleForm") -> "DoubleForm":
        return self + (-other)

    def scale(self, s: float) -> "DoubleForm":
        if not s:
            return DoubleForm.zero(self.n)
        return DoubleForm(self.n, {k: s * v for k, v in self.coeffs.items()})

    def __mul__(self, other: "DoubleForm") -> "DoubleForm":
        """Graded product; ehat factors anticommute with e factors."""
        out = {}
        for (I1, J1), v1 in self.coeffs.items():
            for (I2, J2), v2 in other.coeffs.items():
                if I1 & I2 or J1 & J2:
                    continue
                sign = _merge_sign(I1, I2) * _merge_sign(J1, J2)
                if (_popcount(J1) * _popcount(I2)) & 1:
                    sign = -sign
                key = (I1 | I2, J1 | J2)
                s = out.get(key, 0.0) + sign * v1 * v2
                if s:
                    out[key] = s
                else:
                    out.pop(key, None)
        return DoubleForm(self.n, out)


def berezin(omega: DoubleForm) -> dict:
    """Extract the ehat^{1..n} component: a coefficient map I -> float."""
    full = (1 << omega.n) - 1
    return {I: v for (I, J), v in omega.coeffs.items() if J == full}


def exp_doubleform(omega: DoubleForm) -> DoubleForm:
    """exp of a nilpotent even element, as the finite sum of powers.

    Rejects a nonzero degree-0 part; split the scalar off first.
    """
    if (0, 0) in omega.coeffs:
        raise ValueError("degree-0 part must be zero (split off the scalar)")
    if not omega.is_even():
        raise ValueError("exponent must be an even-degree element")
    n = omega.n
    out = DoubleForm.scalar(n, 1.0)
    power = DoubleForm.scalar(n, 1.0)
    for k in range(1, 2 * n + 1):
        power = power * omega
        if not power.coeffs:
            break
        out = out + power.scale(1.0 / math.factorial(k))
    return out


def index_density(f: MultiPoly, x, rtilde: DoubleForm | None = None,
                  t0: float = 1.0) -> float:
    """Pointwise index density of the deformed Laplacian for real f.

    (-1)^{[(n+1)/2]} pi^{-n/2} e^{-t0 V(x)} * [top Berezin component of
    exp(-rtilde/2 - sqrt(t0) * hess f(x) e^i ehat^j)].  For rtilde = 0 this
    equals (-1)^{[(n+1)/2]} pi^{-n/2} e^{-t0 V} (-1)^{[n/2]} det(-sqrt(t0) hess f).
    The coupling knob t0 rescales f -> sqrt(t0) f; the integral over R^n is
    t0-independent.
    """
    if f.is_complex():
        raise ValueError("index_density expects a real polynomial")
    n = f.nvars
    x = np.asarray(x, dtype=float)
    Hv = np.array([[hessian(f)[i][j].evaluator()(x[None, :])[0]
                    for j in range(n)] for i in range(n)])
    Vv = float(potential_v(f).evaluator()(x[None, :])[0])
    sqrt_t0 = math.sqrt(t0)
    omega = DoubleForm.zero(n)
    for i in range(n):
        for j in range(n):
            if Hv[i, j]:
                omega = omega + DoubleForm.basis(n, 1 << i, 1 << j,
                                                 -sqrt_t0 * Hv[i, j])
    if rtilde is not None:
        omega = omega + rtilde.scale(-0.5)
    top = exp_doubleform(omega)
    coeff = berezin(top).get((1 << n) - 1, 0.0)
    sign = (-1) ** ((n + 1) // 2)
    return sign * math.pi ** (-n / 2) * math.exp(-t0 * Vv) * coeff
