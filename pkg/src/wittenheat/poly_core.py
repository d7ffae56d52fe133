"""Exact multivariate polynomial arithmetic and quasi-homogeneous weight calculus.

Polynomials are stored sparsely as a map from exponent multi-indices to
coefficients, e.g. ``{(2, 0): Fraction(1, 2), (1, 1): Fraction(3)}`` for
``x1^2/2 + 3*x1*x2``.  Coefficients are either ``fractions.Fraction`` (real
polynomials, variables ``x1..xN``) or :class:`GaussRat` (complex rational
coefficients, variables ``z1..zN``).  All identity-level manipulation
(differentiation, composition, weight solving, grading checks) is exact;
floating point enters only through the evaluation helpers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "GaussRat",
    "MultiPoly",
    "PolyParseError",
    "NotQuasiHomogeneous",
    "WeightsNotUnique",
    "WeightData",
    "NondegeneracyReport",
    "parse_poly",
    "grad",
    "hessian",
    "potential_v",
    "realify",
    "quasi_weights",
    "nondegeneracy_screen",
    "segment_restrict",
]


def as_fraction(x) -> Fraction:
    """Coerce ints, Fractions, floats (exactly) and 'p/q' strings."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    raise TypeError(f"cannot coerce {type(x).__name__} to Fraction")


class GaussRat:
    """Gaussian rational a + b*i with exact Fraction components."""

    __slots__ = ("re", "im")

    def __init__(self, re=0, im=0):
        object.__setattr__(self, "re", as_fraction(re))
        object.__setattr__(self, "im", as_fraction(im))

    def __setattr__(self, *a):  # immutable
        raise AttributeError("GaussRat is immutable")

    @staticmethod
    def coerce(x) -> "GaussRat":
        if isinstance(x, GaussRat):
            return x
        return GaussRat(as_fraction(x))

    def __add__(self, other):
        o = GaussRat.coerce(other)
        return GaussRat(self.re + o.re, self.im + o.im)

    __radd__ = __add__

    def __sub__(self, other):
        o = GaussRat.coerce(other)
        return GaussRat(self.re - o.re, self.im - o.im)

    def __rsub__(self, other):
        return GaussRat.coerce(other) - self

    def __mul__(self, other):
        o = GaussRat.coerce(other)
        return GaussRat(self.re * o.re - self.im * o.im,
                        self.re * o.im + self.im * o.re)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = GaussRat.coerce(other)
        d = o.re * o.re + o.im * o.im
        if d == 0:
            raise ZeroDivisionError("division by zero GaussRat")
        return GaussRat((self.re * o.re + self.im * o.im) / d,
                        (self.im * o.re - self.re * o.im) / d)

    def __rtruediv__(self, other):
        return GaussRat.coerce(other) / self

    def __neg__(self):
        return GaussRat(-self.re, -self.im)

    def __pow__(self, k: int):
        out, base = GaussRat(1), self
        while k:
            if k & 1:
                out = out * base
            base, k = base * base, k >> 1
        return out

    def conj(self):
        return GaussRat(self.re, -self.im)

    def abs2(self) -> Fraction:
        return self.re * self.re + self.im * self.im

    def __bool__(self):
        return bool(self.re) or bool(self.im)

    def __eq__(self, other):
        try:
            o = GaussRat.coerce(other)
        except TypeError:
            return NotImplemented
        return self.re == o.re and self.im == o.im

    def __hash__(self):
        return hash((self.re, self.im))

    def __complex__(self):
        return complex(float(self.re), float(self.im))

    def __repr__(self):
        return f"GaussRat({self.re!r}, {self.im!r})"


def _coeff_str(c) -> str:
    if isinstance(c, GaussRat):
        if c.im == 0:
            return str(c.re)
        if c.re == 0:
            return f"({c.im}*i)"
        sign = "+" if c.im > 0 else "-"
        return f"({c.re}{sign}{abs(c.im)}*i)"
    return str(c)


class MultiPoly:
    """Sparse polynomial in ``nvars`` variables over Fraction or GaussRat."""

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms=None):
        if nvars < 1:
            raise ValueError("nvars must be >= 1")
        self.nvars = nvars
        clean = {}
        for exps, c in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != nvars:
                raise ValueError("exponent length mismatch")
            if any(e < 0 for e in exps):
                raise ValueError("negative exponent")
            if c:
                clean[exps] = c
        self.terms = clean

    # -- constructors -------------------------------------------------
    @staticmethod
    def zero(nvars: int) -> "MultiPoly":
        return MultiPoly(nvars, {})

    @staticmethod
    def const(nvars: int, c) -> "MultiPoly":
        if not isinstance(c, GaussRat):
            c = as_fraction(c)
        return MultiPoly(nvars, {(0,) * nvars: c})

    @staticmethod
    def variable(nvars: int, i: int) -> "MultiPoly":
        e = [0] * nvars
        e[i] = 1
        return MultiPoly(nvars, {tuple(e): Fraction(1)})

    # -- predicates ---------------------------------------------------
    def is_zero(self) -> bool:
        return not self.terms

    def is_constant(self) -> bool:
        return all(all(e == 0 for e in exps) for exps in self.terms)

    def constant_value(self):
        z = (0,) * self.nvars
        extra = [e for e in self.terms if e != z]
        if extra:
            raise ValueError("polynomial is not constant")
        return self.terms.get(z, Fraction(0))

    def is_complex(self) -> bool:
        return any(isinstance(c, GaussRat) for c in self.terms.values())

    def total_degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def degree_in(self, i: int) -> int:
        return max((e[i] for e in self.terms), default=0)

    # -- ring operations ----------------------------------------------
    def _check(self, other: "MultiPoly"):
        if self.nvars != other.nvars:
            raise ValueError("variable count mismatch")

    def __add__(self, other):
        if not isinstance(other, MultiPoly):
            other = MultiPoly.const(self.nvars, other)
        self._check(other)
        terms = dict(self.terms)
        for e, c in other.terms.items():
            s = terms.get(e, 0) + c
            if s:
                terms[e] = s
            else:
                terms.pop(e, None)
        return MultiPoly(self.nvars, terms)

    __radd__ = __add__

    def __neg__(self):
        return MultiPoly(self.nvars, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        if not isinstance(other, MultiPoly):
            other = MultiPoly.const(self.nvars, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, MultiPoly):
            c = other if isinstance(other, GaussRat) else as_fraction(other)
            if not c:
                return MultiPoly.zero(self.nvars)
            return MultiPoly(self.nvars,
                             {e: cc * c for e, cc in self.terms.items()})
        self._check(other)
        terms = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                s = terms.get(e, 0) + c1 * c2
                if s:
                    terms[e] = s
                else:
                    terms.pop(e, None)
        return MultiPoly(self.nvars, terms)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0:
            raise ValueError("negative power")
        out = MultiPoly.const(self.nvars, 1)
        base = self
        while k:
            if k & 1:
                out = out * base
            k >>= 1
            if k:
                base = base * base
        return out

    def __eq__(self, other):
        return (isinstance(other, MultiPoly) and self.nvars == other.nvars
                and self.terms == other.terms)

    def __hash__(self):
        return hash((self.nvars, frozenset(self.terms.items())))

    # -- calculus -----------------------------------------------------
    def diff(self, i: int) -> "MultiPoly":
        terms = {}
        for e, c in self.terms.items():
            if e[i] == 0:
                continue
            ne = list(e)
            ne[i] -= 1
            terms[tuple(ne)] = c * e[i]
        return MultiPoly(self.nvars, terms)

    def compose(self, mapping: list["MultiPoly"]) -> "MultiPoly":
        """Substitute variable i -> mapping[i]; result lives in the mapping ring."""
        if len(mapping) != self.nvars:
            raise ValueError("mapping length mismatch")
        m = mapping[0].nvars
        caches = [{0: MultiPoly.const(m, 1)} for _ in range(self.nvars)]

        def power(i, k):
            cache = caches[i]
            if k not in cache:
                top = max(cache)
                p = cache[top]
                for j in range(top + 1, k + 1):
                    p = p * mapping[i]
                    cache[j] = p
            return cache[k]

        out = MultiPoly.zero(m)
        for e, c in self.terms.items():
            t = MultiPoly.const(m, c)
            for i, k in enumerate(e):
                if k:
                    t = t * power(i, k)
            out = out + t
        return out

    def lift(self, nvars_new: int, shift: int = 0) -> "MultiPoly":
        """Reinterpret in a larger ring, variable i -> i + shift."""
        if shift + self.nvars > nvars_new:
            raise ValueError("lift does not fit")
        terms = {}
        for e, c in self.terms.items():
            ne = [0] * nvars_new
            for i, k in enumerate(e):
                ne[shift + i] = k
            terms[tuple(ne)] = c
        return MultiPoly(nvars_new, terms)

    # -- evaluation ---------------------------------------------------
    def eval_exact(self, point):
        """Evaluate at exact rational (or GaussRat) coordinates."""
        if len(point) != self.nvars:
            raise ValueError("point dimension mismatch")
        pt = [p if isinstance(p, GaussRat) else as_fraction(p) for p in point]
        total = GaussRat(0) if self.is_complex() else Fraction(0)
        for e, c in self.terms.items():
            v = c
            for x, k in zip(pt, e):
                if k:
                    v = v * x ** k
            total = total + v
        return total

    def evaluator(self):
        """Vectorized numpy evaluator: pts of shape (..., nvars) -> values."""
        if not self.terms:
            nv = self.nvars

            def zf(pts):
                pts = np.asarray(pts)
                return np.zeros(pts.shape[:-1])
            return zf
        exps = np.array(sorted(self.terms), dtype=np.int64)
        cplx = self.is_complex()
        coeffs = np.array([complex(GaussRat.coerce(self.terms[tuple(e)]))
                           if cplx else float(self.terms[tuple(e)])
                           for e in exps])

        def f(pts):
            pts = np.asarray(pts, dtype=complex if cplx else float)
            mono = np.prod(pts[..., None, :] ** exps, axis=-1)
            return mono @ coeffs
        return f

    def __call__(self, *coords):
        if len(coords) == 1 and hasattr(coords[0], "__len__"):
            coords = tuple(coords[0])
        v = self.eval_exact(coords)
        return complex(v) if isinstance(v, GaussRat) else v

    # -- printing -----------------------------------------------------
    def __str__(self):
        if not self.terms:
            return "0"
        letter = "z" if self.is_complex() else "x"
        parts = []
        for e in sorted(self.terms, key=lambda t: (-sum(t), tuple(-k for k in t))):
            c = self.terms[e]
            mono = "*".join(
                f"{letter}{i + 1}" if k == 1 else f"{letter}{i + 1}^{k}"
                for i, k in enumerate(e) if k)
            if isinstance(c, GaussRat) and c.im != 0:
                piece = _coeff_str(c) + (f"*{mono}" if mono else "")
                parts.append(("+", piece))
                continue
            cr = c.re if isinstance(c, GaussRat) else c
            sign = "-" if cr < 0 else "+"
            cr = abs(cr)
            if not mono:
                piece = str(cr)
            elif cr == 1:
                piece = mono
            else:
                piece = f"{cr}*{mono}"
            parts.append((sign, piece))
        sign0, piece0 = parts[0]
        out = ("-" if sign0 == "-" else "") + piece0
        for sign, piece in parts[1:]:
            out += f" {sign} {piece}"
        return out

    __repr__ = __str__


# ----------------------------------------------------------------------
# Expression parser
# ----------------------------------------------------------------------

class PolyParseError(ValueError):
    """Parse failure; ``pos`` is the 0-based character offset."""

    def __init__(self, msg: str, pos: int):
        super().__init__(f"{msg} (at position {pos})")
        self.pos = pos


_TOKEN_RE = re.compile(r"\s*(?:(\d+)|([A-Za-z_][A-Za-z0-9_]*)|([()+\-*/^]))")


def _tokenize(src: str):
    tokens, pos = [], 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if not m or m.end() == m.start():
            raise PolyParseError("unexpected character", pos)
        if m.group(1) is not None:
            tokens.append(("num", m.group(1), m.start(1)))
        elif m.group(2) is not None:
            tokens.append(("name", m.group(2), m.start(2)))
        else:
            tokens.append(("op", m.group(3), m.start(3)))
        pos = m.end()
        # skip trailing whitespace so an all-space tail terminates cleanly
        while pos < len(src) and src[pos].isspace():
            pos += 1
    return tokens


class _Parser:
    def __init__(self, src: str, nvars: int, field: str):
        self.src = src
        self.tokens = _tokenize(src)
        self.k = 0
        self.nvars = nvars
        self.field = field
        self.letter = "z" if field == "complex" else "x"

    def _peek(self):
        return self.tokens[self.k] if self.k < len(self.tokens) else None

    def _next(self):
        tok = self._peek()
        if tok is None:
            raise PolyParseError("unexpected end of input", len(self.src))
        self.k += 1
        return tok

    def _expect_op(self, op):
        tok = self._next()
        if tok[0] != "op" or tok[1] != op:
            raise PolyParseError(f"expected '{op}'", tok[2])

    def parse(self) -> MultiPoly:
        p = self.expr()
        tok = self._peek()
        if tok is not None:
            raise PolyParseError("unexpected token", tok[2])
        return p

    def expr(self) -> MultiPoly:
        p = self.term()
        while True:
            tok = self._peek()
            if tok and tok[0] == "op" and tok[1] in "+-":
                self.k += 1
                q = self.term()
                p = p + q if tok[1] == "+" else p - q
            else:
                return p

    def term(self) -> MultiPoly:
        p = self.factor()
        while True:
            tok = self._peek()
            if tok and tok[0] == "op" and tok[1] in "*/":
                self.k += 1
                q = self.factor()
                if tok[1] == "*":
                    p = p * q
                else:
                    if not q.is_constant():
                        raise PolyParseError("divisor must be constant", tok[2])
                    c = q.constant_value()
                    if not c:
                        raise PolyParseError("division by zero", tok[2])
                    inv = 1 / c if isinstance(c, GaussRat) else Fraction(1) / c
                    p = p * inv
            else:
                return p

    def factor(self) -> MultiPoly:
        tok = self._peek()
        if tok and tok[0] == "op" and tok[1] in "+-":
            self.k += 1
            p = self.factor()
            return p if tok[1] == "+" else -p
        p = self.atom()
        tok = self._peek()
        if tok and tok[0] == "op" and tok[1] == "^":
            self.k += 1
            etok = self._peek()
            if etok is None:
                raise PolyParseError("missing exponent", len(self.src))
            if etok[0] != "num":
                raise PolyParseError("exponent must be a nonnegative integer literal",
                                     etok[2])
            self.k += 1
            p = p ** int(etok[1])
        return p

    def atom(self) -> MultiPoly:
        tok = self._next()
        kind, text, pos = tok
        if kind == "num":
            c = Fraction(int(text))
            if self.field == "complex":
                return MultiPoly.const(self.nvars, GaussRat(c))
            return MultiPoly.const(self.nvars, c)
        if kind == "name":
            if text == "i":
                if self.field != "complex":
                    raise PolyParseError("imaginary unit in real mode", pos)
                return MultiPoly.const(self.nvars, GaussRat(0, 1))
            m = re.fullmatch(rf"{self.letter}(\d+)", text)
            if not m:
                raise PolyParseError(f"unknown variable '{text}'", pos)
            idx = int(m.group(1))
            if not 1 <= idx <= self.nvars:
                raise PolyParseError(f"unknown variable '{text}'", pos)
            v = MultiPoly.variable(self.nvars, idx - 1)
            if self.field == "complex":
                v = v * GaussRat(1)
            return v
        if text == "(":
            p = self.expr()
            self._expect_op(")")
            return p
        raise PolyParseError("unexpected token", pos)


def parse_poly(src: str, nvars: int, field: str = "real") -> MultiPoly:
    """Parse an expression over ``x1..xN`` (real) or ``z1..zN`` (complex).

    Grammar: integer literals, rationals via '/', ``+ - * ^``, parentheses,
    and ``i`` in complex mode.  ``^`` takes a nonnegative integer literal.
    Raises :class:`PolyParseError` with a character position on bad input.
    """
    if field not in ("real", "complex"):
        raise ValueError("field must be 'real' or 'complex'")
    return _Parser(src, nvars, field).parse()


# ----------------------------------------------------------------------
# Differential helpers
# ----------------------------------------------------------------------

def grad(f: MultiPoly) -> list[MultiPoly]:
    """Componentwise partials (flat metric)."""
    return [f.diff(i) for i in range(f.nvars)]


def hessian(f: MultiPoly) -> list[list[MultiPoly]]:
    g = grad(f)
    return [[g[i].diff(j) for j in range(f.nvars)] for i in range(f.nvars)]


def realify(f: MultiPoly) -> tuple[MultiPoly, MultiPoly]:
    """Split a complex polynomial into (Re, Im) over 2n real variables.

    Convention: z_j = x_{2j-1} + i*x_{2j} (1-based), i.e. real coordinates
    interleave as (Re z1, Im z1, Re z2, Im z2, ...).
    """
    n = f.nvars
    mapping = []
    for j in range(n):
        zr = MultiPoly.variable(2 * n, 2 * j) * GaussRat(1)
        zi = MultiPoly.variable(2 * n, 2 * j + 1) * GaussRat(0, 1)
        mapping.append(zr + zi)
    fc = f.compose(mapping)
    re_terms, im_terms = {}, {}
    for e, c in fc.terms.items():
        c = GaussRat.coerce(c)
        if c.re:
            re_terms[e] = c.re
        if c.im:
            im_terms[e] = c.im
    return MultiPoly(2 * n, re_terms), MultiPoly(2 * n, im_terms)


def potential_v(f: MultiPoly) -> MultiPoly:
    """|grad f|^2.  For complex f, sum_j |df/dz_j|^2 as a real polynomial
    in the 2n realified coordinates (see :func:`realify` for the layout)."""
    if not f.is_complex():
        return sum((g * g for g in grad(f)), MultiPoly.zero(f.nvars))
    out = MultiPoly.zero(2 * f.nvars)
    for g in grad(f):
        gre, gim = realify(g)
        out = out + gre * gre + gim * gim
    return out


# ----------------------------------------------------------------------
# Quasi-homogeneous weights
# ----------------------------------------------------------------------

class NotQuasiHomogeneous(ValueError):
    pass


class WeightsNotUnique(ValueError):
    pass


@dataclass(frozen=True)
class WeightData:
    """Weights q_i with the derived exponents.

    kappa = max(0, 1 - 4 min q), gamma_i = q_i / min_j(1 - q_j),
    delta = 1 / (2 min_j(1 - q_j)), milnor = prod(1/q_i - 1) when that
    product is nonnegative (None otherwise).
    """
    weights: tuple[Fraction, ...]
    kappa: Fraction
    gammas: tuple[Fraction, ...]
    delta: Fraction
    milnor: Fraction | None

    @property
    def milnor_int(self) -> int | None:
        if self.milnor is not None and self.milnor.denominator == 1:
            return int(self.milnor)
        return None


def _solve_exact(rows: list[tuple[int, ...]], n: int):
    """Solve sum_i a_i q_i = 1 for each support row; exact over Fraction.

    Returns the unique solution vector, or raises NotQuasiHomogeneous /
    WeightsNotUnique.
    """
    aug = [[Fraction(a) for a in row] + [Fraction(1)] for row in rows]
    pivots = []
    r = 0
    for col in range(n):
        pivot = next((i for i in range(r, len(aug)) if aug[i][col]), None)
        if pivot is None:
            continue
        aug[r], aug[pivot] = aug[pivot], aug[r]
        pv = aug[r][col]
        aug[r] = [v / pv for v in aug[r]]
        for i in range(len(aug)):
            if i != r and aug[i][col]:
                fac = aug[i][col]
                aug[i] = [v - fac * w for v, w in zip(aug[i], aug[r])]
        pivots.append(col)
        r += 1
        if r == len(aug):
            break
    for i in range(r, len(aug)):
        if aug[i][n]:
            raise NotQuasiHomogeneous("support equations are inconsistent")
    if len(pivots) < n:
        raise WeightsNotUnique("support does not determine the weights")
    q = [Fraction(0)] * n
    for row, col in enumerate(pivots):
        q[col] = aug[row][n]
    return q


def quasi_weights(f: MultiPoly) -> WeightData:
    """Solve f(l^{q_1} x_1, ..., l^{q_n} x_n) = l * f for positive rational q.

    Raises NotQuasiHomogeneous when the support equations are inconsistent
    or force a nonpositive weight, WeightsNotUnique when underdetermined.
    """
    if f.is_zero() or f.is_constant():
        raise ValueError("quasi_weights requires a nonconstant polynomial")
    support = sorted(f.terms)
    q = _solve_exact(support, f.nvars)
    if any(qi <= 0 for qi in q):
        raise NotQuasiHomogeneous("weights are not all positive")
    qmin = min(q)
    one_minus = min(1 - qi for qi in q)
    kappa = max(Fraction(0), 1 - 4 * qmin)
    gammas = tuple(qi / one_minus for qi in q)
    delta = Fraction(1, 2) / one_minus
    mil = Fraction(1)
    for qi in q:
        mil *= (1 / qi - 1)
    return WeightData(
        weights=tuple(q),
        kappa=kappa,
        gammas=gammas,
        delta=delta,
        milnor=mil if mil >= 0 else None,
    )


@dataclass(frozen=True)
class NondegeneracyReport:
    no_cross_quadratic: bool
    weights_at_most_half: bool
    sphere_min_gradsq: float
    critical_screen_pass: bool
    samples: int
    seed: int


def nondegeneracy_screen(f: MultiPoly, w: WeightData, samples: int = 4096,
                         seed: int = 0, threshold: float = 1e-8) -> NondegeneracyReport:
    """Heuristic nondegeneracy screen (advisory, never a certificate).

    Checks exactly for cross-quadratic monomials and q_i <= 1/2, then samples
    the unit sphere for min |grad f|^2; a positive minimum there is necessary
    for 0 being the only critical point of a quasi-homogeneous f.
    """
    n = f.nvars
    cross = any(sum(e) == 2 and max(e) == 1 for e in f.terms)
    wok = all(qi <= Fraction(1, 2) for qi in w.weights)
    V = potential_v(f)
    rng = np.random.default_rng(seed)
    dim = V.nvars
    pts = rng.standard_normal((samples, dim))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    vmin = float(np.min(V.evaluator()(pts)))
    return NondegeneracyReport(
        no_cross_quadratic=not cross,
        weights_at_most_half=wok,
        sphere_min_gradsq=vmin,
        critical_screen_pass=vmin > threshold,
        samples=samples,
        seed=seed,
    )


def segment_restrict(P: MultiPoly, x0, x1) -> MultiPoly:
    """Restrict a real polynomial to the segment c(u) = x0 + u*(x1 - x0).

    Returns the exact univariate polynomial in u (coordinates are coerced
    to Fractions, so float endpoints stay exact in binary).
    """
    if P.is_complex():
        raise ValueError("segment_restrict expects a real polynomial")
    if len(x0) != P.nvars or len(x1) != P.nvars:
        raise ValueError("endpoint dimension mismatch")
    u = MultiPoly.variable(1, 0)
    mapping = []
    for a, b in zip(x0, x1):
        a, b = as_fraction(a), as_fraction(b)
        mapping.append(MultiPoly.const(1, a) + u * (b - a))
    return P.compose(mapping)
