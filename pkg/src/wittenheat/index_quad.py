"""Quadrature pipeline for index integrals, Milnor numbers and tameness probes.

Real potentials integrate  (-1)^n pi^{-n/2} e^{-|grad f|^2} det(-hess f)
over R^n; holomorphic ones integrate  pi^{-n} e^{-|df|^2} |det d^2 f|^2
over C^n, whose value is the Milnor number of a nondegenerate
quasi-homogeneous polynomial (the signed Euler characteristic is (-1)^n
times it).  Two integrators are provided behind the same result type:
adaptive tensor quadrature (scipy, dimensions 1 and 2) on a truncated box
whose discarded tail is bounded empirically, and an importance-sampled
Monte-Carlo estimator with a weight-scaled product-Gaussian proposal,
chunked so fixed seeds reproduce bit-for-bit at any thread count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np
from scipy.integrate import dblquad, quad

from .errors import ToleranceError
from .exterior import index_density
from .poly_core import (MultiPoly, NotQuasiHomogeneous, WeightData,
                        WeightsNotUnique, grad, hessian, potential_v,
                        quasi_weights)

__all__ = [
    "QuadConfig", "IndexResult", "index_real", "index_complex",
    "index_density_integral", "alpha_probe", "vol_sublevel",
    "gaussian_moment", "fjr_probe", "homogeneous_exponents",
]


@dataclass(frozen=True)
class QuadConfig:
    method: str = "adaptive-tensor"   # or "monte-carlo"
    radius: float = 8.0               # truncation radius for adaptive panels
    tol: float = 1e-9                 # adaptive tolerance target
    samples: int = 400_000            # Monte-Carlo sample count
    seed: int = 0
    mc_sigma: float = 0.45            # base proposal width
    threads: int = 1

    def __post_init__(self):
        if self.method not in ("adaptive-tensor", "adaptive", "monte-carlo"):
            raise ValueError("method must be 'adaptive-tensor' or 'monte-carlo'")


@dataclass(frozen=True)
class IndexResult:
    value: float
    error_estimate: float
    rounded: int | None
    residual: float

    @staticmethod
    def from_value(value: float, error: float) -> "IndexResult":
        nearest = round(value)
        residual = abs(value - nearest)
        return IndexResult(value=float(value), error_estimate=float(error),
                           rounded=int(nearest) if residual < 0.1 else None,
                           residual=float(residual))


def _threads(cfg: QuadConfig) -> int:
    env = os.environ.get("WHL_THREADS")
    if env:
        return max(1, min(cfg.threads if cfg.threads > 1 else 64, int(env)))
    return max(1, cfg.threads)


def _boundary_tail(Vev, dim: int, R: float, tol: float, seed: int = 0,
                   samples: int = 2048) -> float:
    """Empirical tail bound e^{-min V on the sphere of radius R} * (2R)^dim.

    The tameness conditions make V grow, so the minimum over a dense sphere
    sample controls the discarded mass; raises when the bound misses tol.
    """
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((samples, dim))
    pts *= R / np.linalg.norm(pts, axis=1, keepdims=True)
    vmin = float(np.min(Vev(pts)))
    bound = math.exp(-min(vmin, 700.0)) * (2 * R) ** dim
    if bound >= tol:
        raise ToleranceError(
            f"truncation tail bound {bound:.2e} at radius {R} exceeds {tol:.1e}")
    return bound


def _adaptive(fun_vec, dim: int, R: float, tol: float):
    """Tensor adaptive quadrature on [-R, R]^dim for a vectorized integrand."""
    if dim == 1:
        val, err = quad(lambda x: float(fun_vec(np.array([[x]]))[0]),
                        -R, R, epsabs=tol, epsrel=tol, limit=400)
        return val, err
    if dim == 2:
        val, err = dblquad(
            lambda y, x: float(fun_vec(np.array([[x, y]]))[0]),
            -R, R, -R, R, epsabs=tol, epsrel=tol)
        return val, err
    raise ValueError("adaptive-tensor supports dimensions 1 and 2; "
                     "use method='monte-carlo'")


def _mc(fun_vec, dim: int, cfg: QuadConfig, sigmas: np.ndarray):
    """Importance-sampled MC with a product-Gaussian proposal.

    Chunked with spawned seeds and reduced in chunk order, so the result is
    reproducible bit-for-bit for a fixed seed at any thread count.
    """
    chunk = 1 << 17
    nchunks = max(1, math.ceil(cfg.samples / chunk))
    seeds = np.random.SeedSequence(cfg.seed).spawn(nchunks)
    norm = np.prod(sigmas) * (2 * math.pi) ** (dim / 2)

    def one(i: int) -> tuple[float, float]:
        rng = np.random.default_rng(seeds[i])
        pts = rng.standard_normal((chunk, dim)) * sigmas[None, :]
        w = fun_vec(pts) * norm * np.exp(
            0.5 * np.sum((pts / sigmas[None, :]) ** 2, axis=1))
        return float(np.mean(w)), float(np.mean(w * w))

    nthreads = _threads(cfg)
    if nthreads > 1:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            stats = list(pool.map(one, range(nchunks)))
    else:
        stats = [one(i) for i in range(nchunks)]
    means = np.array([s[0] for s in stats])
    value = float(np.mean(means))
    if nchunks > 1:
        err = float(np.std(means, ddof=1) / math.sqrt(nchunks))
    else:
        m2 = stats[0][1]
        err = math.sqrt(max(m2 - value * value, 0.0) / chunk)
    return value, err


def _real_integrand(f: MultiPoly, t0: float = 1.0):
    n = f.nvars
    Vev = potential_v(f).evaluator()
    H = hessian(f)
    Hev = [[H[i][j].evaluator() for j in range(n)] for i in range(n)]
    s = math.sqrt(t0)

    def fun(pts):
        pts = np.asarray(pts, dtype=float)
        Hm = np.empty(pts.shape[:-1] + (n, n))
        for i in range(n):
            for j in range(n):
                Hm[..., i, j] = Hev[i][j](pts)
        det = np.linalg.det(-s * Hm)
        return np.exp(-t0 * np.clip(Vev(pts), None, 700.0)) * det
    return fun, Vev


def index_real(f: MultiPoly, cfg: QuadConfig | None = None,
               t0: float = 1.0) -> IndexResult:
    """(-1)^n pi^{-n/2} Int e^{-t0 V} det(-sqrt(t0) hess f) over R^n.

    The caller asserts polynomial tameness (quasi_weights certifies it in
    the quasi-homogeneous case); the coupling knob t0 rescales f -> sqrt(t0) f
    and leaves the value invariant.
    """
    if f.is_complex():
        raise ValueError("index_real expects a real polynomial")
    cfg = cfg or QuadConfig()
    n = f.nvars
    fun, Vev = _real_integrand(f, t0)
    _boundary_tail(Vev, n, cfg.radius, max(cfg.tol, 1e-12), cfg.seed)
    sign = (-1) ** n * math.pi ** (-n / 2)
    if cfg.method.startswith("adaptive"):
        val, err = _adaptive(fun, n, cfg.radius, cfg.tol)
    else:
        sigmas = _proposal_sigmas(f, n, cfg)
        val, err = _mc(fun, n, cfg, sigmas)
    return IndexResult.from_value(sign * val, abs(sign) * err)


def index_density_integral(f: MultiPoly, cfg: QuadConfig | None = None) -> IndexResult:
    """Same index through the other code path: quadrature of the pointwise
    Berezin density (cross-check for :func:`index_real`)."""
    if f.is_complex():
        raise ValueError("expects a real polynomial")
    cfg = cfg or QuadConfig()
    n = f.nvars

    def fun(pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.array([index_density(f, p) for p in pts])

    _boundary_tail(potential_v(f).evaluator(), n, cfg.radius,
                   max(cfg.tol, 1e-12), cfg.seed)
    if cfg.method.startswith("adaptive"):
        val, err = _adaptive(fun, n, cfg.radius, max(cfg.tol, 1e-10))
    else:
        sigmas = _proposal_sigmas(f, n, cfg)
        val, err = _mc(fun, n, cfg, sigmas)
    return IndexResult.from_value(val, err)


def _proposal_sigmas(W: MultiPoly, dim: int, cfg: QuadConfig) -> np.ndarray:
    """Weight-anisotropic proposal widths: coordinates with larger weight
    (lower potential growth) get proportionally heavier tails."""
    try:
        wd = quasi_weights(W)
        gam = np.array([float(Fraction(g)) for g in wd.gammas])
        if W.is_complex():
            gam = np.repeat(gam, 2)
    except (NotQuasiHomogeneous, WeightsNotUnique, ValueError):
        gam = np.ones(dim)
    return cfg.mc_sigma * 2.0 ** gam


def index_complex(W: MultiPoly, cfg: QuadConfig | None = None) -> IndexResult:
    """Milnor-number integral pi^{-n} Int_{C^n} e^{-|dW|^2} |det d^2 W|^2.

    For a nondegenerate quasi-homogeneous W this equals the Milnor number
    mu = prod(1/q_i - 1); the signed Euler characteristic of the deformed
    Dolbeault complex is (-1)^n times the returned value.
    """
    if not W.is_complex():
        raise ValueError("index_complex expects a complex polynomial")
    cfg = cfg or QuadConfig()
    n = W.nvars
    G = grad(W)
    Gev = [g.evaluator() for g in G]
    H = hessian(W)
    Hev = [[H[i][j].evaluator() for j in range(n)] for i in range(n)]

    def fun(pts):
        pts = np.asarray(pts, dtype=float)
        z = pts[..., 0::2] + 1j * pts[..., 1::2]
        v = np.zeros(z.shape[:-1])
        for g in Gev:
            v += np.abs(g(z)) ** 2
        Hm = np.empty(z.shape[:-1] + (n, n), dtype=complex)
        for i in range(n):
            for j in range(n):
                Hm[..., i, j] = Hev[i][j](z)
        det2 = np.abs(np.linalg.det(Hm)) ** 2
        return np.exp(-np.clip(v, None, 700.0)) * det2

    Vreal = potential_v(W).evaluator()
    _boundary_tail(Vreal, 2 * n, cfg.radius, max(cfg.tol, 1e-12), cfg.seed)
    if cfg.method.startswith("adaptive"):
        val, err = _adaptive(fun, 2 * n, cfg.radius, cfg.tol)
    else:
        sigmas = _proposal_sigmas(W, 2 * n, cfg)
        val, err = _mc(fun, 2 * n, cfg, sigmas)
    scale = math.pi ** (-n)
    return IndexResult.from_value(scale * val, scale * err)


# ----------------------------------------------------------------------
# Tameness probes
# ----------------------------------------------------------------------

def vol_sublevel(f: MultiPoly, lam: float, cfg: QuadConfig | None = None) -> float:
    """Monte-Carlo volume of the sublevel set {V <= lam} inside the box."""
    cfg = cfg or QuadConfig()
    Vev = potential_v(f).evaluator()
    dim = potential_v(f).nvars
    R = cfg.radius

    def fun(pts):
        return (Vev(pts) <= lam).astype(float)

    rng = np.random.default_rng(cfg.seed)
    pts = rng.uniform(-R, R, size=(cfg.samples, dim))
    return float((2 * R) ** dim * np.mean(fun(pts)))


def alpha_probe(f: MultiPoly, lam_list, cfg: QuadConfig | None = None) -> dict:
    """Fit of I(lam) = Int_{V<=lam} (lam - V)^{n/2} against C lam^alpha.

    Uniform Monte-Carlo over the box [-R, R]^dim (the box must contain each
    sublevel set: V is checked to exceed max(lam) on the boundary sphere).
    Also reports the sublevel volumes and their growth exponent.
    """
    cfg = cfg or QuadConfig()
    lam_list = sorted(float(l) for l in lam_list)
    if len(lam_list) < 3:
        raise ValueError("need at least 3 lambda values")
    V = potential_v(f)
    dim = V.nvars
    Vev = V.evaluator()
    R = cfg.radius
    rng = np.random.default_rng(cfg.seed)
    sph = rng.standard_normal((2048, dim))
    sph *= R / np.linalg.norm(sph, axis=1, keepdims=True)
    vmin_boundary = float(np.min(Vev(sph)))
    if vmin_boundary <= max(lam_list):
        raise ToleranceError(
            f"sublevel set may leak from the box: min V on |x|={R} is "
            f"{vmin_boundary:.3g} <= {max(lam_list):.3g}")
    pts = rng.uniform(-R, R, size=(cfg.samples, dim))
    v = Vev(pts)
    box = (2 * R) ** dim
    I, vol = [], []
    for lam in lam_list:
        excess = np.maximum(lam - v, 0.0)
        I.append(box * float(np.mean(excess ** (dim / 2))))
        vol.append(box * float(np.mean(v <= lam)))
    lo = np.log(lam_list)
    alpha_hat = float(np.polyfit(lo, np.log(I), 1)[0])
    vol_exp = float(np.polyfit(lo, np.log(np.maximum(vol, 1e-300)), 1)[0])
    return {
        "lambdas": lam_list, "I": I, "vol": vol,
        "alpha_hat": alpha_hat, "vol_exponent": vol_exp,
        "alpha_ok": alpha_hat >= dim / 2 - 0.1,
        "boundary_vmin": vmin_boundary,
    }


def gaussian_moment(f: MultiPoly, k: float, cfg: QuadConfig | None = None) -> IndexResult:
    """Int e^{-V} V^{k/2} over the (realified) domain of f."""
    if k < 0:
        raise ValueError("k must be >= 0")
    cfg = cfg or QuadConfig()
    V = potential_v(f)
    dim = V.nvars
    Vev = V.evaluator()

    def fun(pts):
        v = np.maximum(Vev(pts), 0.0)
        return np.exp(-np.clip(v, None, 700.0)) * v ** (k / 2)

    _boundary_tail(Vev, dim, cfg.radius, max(cfg.tol, 1e-12), cfg.seed)
    if cfg.method.startswith("adaptive") and dim <= 2:
        val, err = _adaptive(fun, dim, cfg.radius, cfg.tol)
    else:
        sigmas = _proposal_sigmas(f, dim, cfg)
        val, err = _mc(fun, dim, cfg, sigmas)
    return IndexResult.from_value(val, err)


def fjr_probe(W: MultiPoly, cfg: QuadConfig | None = None,
              radii=None, dirs: int = 256) -> dict:
    """Empirical boundedness of |u_i| / (sum_j |dW/dz_j(u)| + 1)^{gamma_i}.

    Samples log-spaced radii times random directions; the sup must stay
    within a small factor of its unit-sphere value (asserted at 10x).
    """
    if not W.is_complex():
        raise ValueError("fjr_probe expects a complex polynomial")
    cfg = cfg or QuadConfig()
    wd = quasi_weights(W)
    n = W.nvars
    gammas = [float(Fraction(g)) for g in wd.gammas]
    Gev = [g.evaluator() for g in grad(W)]
    rng = np.random.default_rng(cfg.seed)
    u = rng.standard_normal((dirs, 2 * n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    radii = np.geomspace(0.25, cfg.radius, 24) if radii is None else np.asarray(radii)
    pts = (radii[:, None, None] * u[None, :, :]).reshape(-1, 2 * n)
    z = pts[:, 0::2] + 1j * pts[:, 1::2]
    gsum = np.zeros(len(z))
    for g in Gev:
        gsum += np.abs(g(z))
    sup, sphere_sup, ok = [], [], []
    zs = u[:, 0::2] + 1j * u[:, 1::2]
    gs = np.zeros(len(zs))
    for g in Gev:
        gs += np.abs(g(zs))
    for i in range(n):
        ratio = np.abs(z[:, i]) / (gsum + 1.0) ** gammas[i]
        ratio_s = np.abs(zs[:, i]) / (gs + 1.0) ** gammas[i]
        sup.append(float(np.max(ratio)))
        sphere_sup.append(float(np.max(ratio_s)))
        ok.append(sup[-1] <= 10.0 * sphere_sup[-1])
    return {"sup": sup, "sphere_sup": sphere_sup, "bounded_ok": all(ok),
            "gammas": gammas}


def homogeneous_exponents(W: MultiPoly, j_max: int) -> dict:
    """Predicted heat-trace exponent lattice for an equal-weight potential.

    Entries are t^{j + delta q s - delta l - N delta q} relative to the
    (4 pi t)^{-N/2} prefactor, for j <= j_max, l <= j derivative factors of
    total order l <= s <= 2j; N counts real dimensions (2n for complex W).
    The leading entry is -N delta q at (j, l, s) = (0, 0, 0).
    """
    wd = quasi_weights(W)
    if len(set(wd.weights)) != 1:
        raise ValueError("homogeneous_exponents requires equal weights")
    q = wd.weights[0]
    delta = wd.delta
    N = 2 * W.nvars if W.is_complex() else W.nvars
    entries = []
    for j in range(j_max + 1):
        for l in range(j + 1):
            smin = l if l > 0 else 0
            for s in range(smin, 2 * j + 1):
                if l == 0 and s > 0:
                    continue
                expo = j + delta * q * s - delta * l - N * delta * q
                entries.append({"j": j, "l": l, "s": s,
                                "exponent": Fraction(expo)})
    lead = -N * delta * q
    return {
        "weights_q": q, "delta": delta, "ndim_real": N,
        "entries": entries,
        "leading_exponent": Fraction(lead),
        "leading_trace_power": Fraction(lead) - Fraction(N, 2),
    }
