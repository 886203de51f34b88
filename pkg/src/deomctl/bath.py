"""Brownian-oscillator baths, FDT correlations and their exponential expansion.

Units follow hbar = k_B = 1.  Every channel ``J_{mm'}`` shares one response
shape scaled by the coupling-strength matrix ``Lambda``, so the expansion
uses one common exponent set across channels.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import (
    ExpansionAccuracyError,
    NonpositiveMomentError,
    QuadratureError,
)

__all__ = [
    "BrownianOscillatorBath",
    "BathExpansion",
    "BathModeGeometry",
    "ExpansionReport",
    "pet_lambda_matrix",
    "evaluate_spectral_density",
    "correlation_fdt_quadrature",
    "reorganization_energy",
    "characteristic_frequency",
    "pade_bose_poles",
    "matsubara_bose_poles",
    "decompose_exponentials",
    "verify_expansion",
    "mode_geometry",
]

_SMALL_OMEGA = 1e-7


@dataclass(frozen=True)
class BrownianOscillatorBath:
    """Multi-mode Brownian-oscillator bath.

    ``J_{mm'}(w) = Im[2 Lambda_{mm'} Omega^2 / (Omega^2 - w^2 - i w zeta(w))]``
    with friction resolution ``zeta(w) = eta Gamma / (Gamma - i w)``.
    """

    lambda_matrix: np.ndarray
    omega: float
    eta: float
    gamma: float
    beta: float

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.lambda_matrix, dtype=float))
        object.__setattr__(self, "lambda_matrix", lam)
        if lam.shape[0] != lam.shape[1]:
            raise ValueError("lambda_matrix must be square")
        if not np.allclose(lam, lam.T, atol=1e-12):
            raise ValueError("lambda_matrix must be symmetric")
        if np.linalg.eigvalsh(lam).min() < -1e-10 * max(1.0, np.abs(lam).max()):
            raise ValueError("lambda_matrix must be positive semidefinite")
        if self.omega <= 0 or self.gamma <= 0 or self.beta <= 0:
            raise ValueError("omega, gamma and beta must be positive")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")

    @property
    def n_modes(self) -> int:
        return self.lambda_matrix.shape[0]

    def _key(self):
        return (self.omega, self.eta, self.gamma)

    def response(self, w):
        """Unit-strength response ``chi(w)``; ``J = Lambda * Im chi`` on the real axis."""
        w = np.asarray(w, dtype=complex)
        zeta = self.eta * self.gamma / (self.gamma - 1j * w)
        return 2.0 * self.omega**2 / (self.omega**2 - w * w - 1j * w * zeta)

    def unit_density(self, w):
        """``J(w) / Lambda`` continued off the real axis as a rational function."""
        return (self.response(w) - self.response(-np.asarray(w, dtype=complex))) / 2j

    def unit_slope_at_zero(self) -> float:
        return 2.0 * self.eta / self.omega**2

    def response_poles(self):
        """Simple poles ``w_p`` of ``chi`` and their residues.

        chi = 2 Omega^2 (Gamma - i w) / P(w) with the cubic
        P(w) = i w^3 - Gamma w^2 - i (Omega^2 + eta Gamma) w + Omega^2 Gamma.
        """
        om2, g = self.omega**2, self.gamma
        den = np.array([1j, -g, -1j * (om2 + self.eta * g), om2 * g])
        num = np.array([-2j * om2, 2.0 * om2 * g])
        poles = np.roots(den)
        dden = np.polyder(den)
        if np.min(np.abs(poles[:, None] - poles[None, :]) + np.eye(3) * 1e9) < 1e-8:
            raise ValueError("degenerate response poles (critical damping) are unsupported")
        residues = np.polyval(num, poles) / np.polyval(dden, poles)
        return poles, residues

    def breakpoints(self):
        """Positive frequencies around spectral peaks, used to split quadrature panels."""
        poles, _ = self.response_poles()
        pts = set()
        for p in poles:
            for c in (0.0, 1.0, 10.0):
                for s in (-1, 1):
                    y = abs(p.real) + s * c * abs(p.imag)
                    if y > 0:
                        pts.add(round(y, 14))
        return sorted(pts)


def pet_lambda_matrix(lambda1: float, lambda_u: float, delta) -> np.ndarray:
    """Coupling-strength matrix for the donor mode F1 and acceptor mode F2.

    ``delta`` may be a number or the string ``"fully_correlated"`` (which
    selects ``sqrt(lambda1 * lambda_u)``).
    """
    if isinstance(delta, str):
        if delta == "fully_correlated":
            delta = math.sqrt(lambda1 * lambda_u)
        elif delta == "uncorrelated":
            delta = 0.0
        else:
            raise ValueError(f"unknown correlation keyword {delta!r}")
    off = lambda1 + delta
    return np.array([[lambda1, off], [off, lambda1 + lambda_u + 2.0 * delta]])


def evaluate_spectral_density(bath: BrownianOscillatorBath, m: int, mp: int, w: float) -> float:
    """``J_{mm'}(w)`` from the closed form."""
    lam = bath.lambda_matrix[m, mp]
    if lam == 0.0:
        return 0.0
    return float(lam * np.imag(bath.response(float(w))))


def _bose(x):
    if x < -700.0:
        return -math.exp(x)
    return -1.0 / math.expm1(-x)


def _fdt_integrand(bath, w):
    """Unit ``J(w) / (1 - exp(-beta w))`` with the removable point at 0 filled in."""
    if abs(bath.beta * w) < _SMALL_OMEGA:
        return bath.unit_slope_at_zero() / bath.beta
    jw = float(np.imag(bath.response(w)))
    return jw * float(_bose(bath.beta * w))


@lru_cache(maxsize=4096)
def _unit_correlation(key, beta, t, epsabs):
    omega, eta, gamma = key
    bath = BrownianOscillatorBath(np.eye(1), omega, eta, gamma, beta)
    f = lambda w: _fdt_integrand(bath, w)
    fm = lambda w: _fdt_integrand(bath, -w)
    split = 2.0 * max(bath.breakpoints() + [1.0])
    pts = [p for p in bath.breakpoints() if p < split]
    err_total = 0.0
    if t == 0.0:
        even = lambda w: f(w) + fm(w)
        a, e1 = integrate.quad(even, 0.0, split, points=pts or None, limit=500, epsabs=epsabs, epsrel=1e-12)
        b, e2 = integrate.quad(even, split, np.inf, limit=500, epsabs=epsabs, epsrel=1e-12)
        err_total = e1 + e2
        value = complex(a + b)
    else:
        tt = abs(t)
        even = lambda w: f(w) + fm(w)
        odd = lambda w: f(w) - fm(w)
        re1, e1 = integrate.quad(even, 0.0, split, weight="cos", wvar=tt, limit=500, epsabs=epsabs, epsrel=1e-12)
        re2, e2 = integrate.quad(even, split, np.inf, weight="cos", wvar=tt, limlst=200, epsabs=epsabs, epsrel=1e-12)
        im1, e3 = integrate.quad(odd, 0.0, split, weight="sin", wvar=tt, limit=500, epsabs=epsabs, epsrel=1e-12)
        im2, e4 = integrate.quad(odd, split, np.inf, weight="sin", wvar=tt, limlst=200, epsabs=epsabs, epsrel=1e-12)
        err_total = e1 + e2 + e3 + e4
        value = complex(re1 + re2, -math.copysign(1.0, t) * (im1 + im2))
    return value / math.pi, err_total / math.pi


def correlation_fdt_quadrature(bath, m, mp, t, tol=1e-9):
    """``<F_m(t) F_m'(0)>`` by adaptive quadrature of the FDT integral.

    Raises QuadratureError when the estimated error exceeds ``tol``.
    """
    lam = bath.lambda_matrix[m, mp]
    if lam == 0.0:
        return 0j
    value, err = _unit_correlation(bath._key(), bath.beta, float(t), tol * 1e-2)
    if err > tol:
        raise QuadratureError(f"FDT quadrature error {err:.2e} exceeds {tol:.1e} at t={t}")
    return lam * value


def _moment(bath, power, tol):
    # (1/pi) int_0^inf w^power J_unit(w) dw ; the J/w integrand is regular at 0
    def f(w):
        if power < 0 and w < _SMALL_OMEGA:
            return bath.unit_slope_at_zero()
        return w**power * float(np.imag(bath.response(w)))

    split = 2.0 * max(bath.breakpoints() + [1.0])
    pts = [p for p in bath.breakpoints() if p < split]
    a, e1 = integrate.quad(f, 0.0, split, points=pts or None, limit=1000, epsabs=tol * 1e-2, epsrel=1e-12)
    b, e2 = integrate.quad(f, split, np.inf, limit=1000, epsabs=tol * 1e-2, epsrel=1e-12)
    if e1 + e2 > tol:
        raise QuadratureError(f"spectral moment quadrature error {e1 + e2:.2e}")
    return (a + b) / math.pi


def reorganization_energy(bath, m, tol=1e-9) -> float:
    """``(1/2pi) int dw J_mm(w)/w`` over the whole real line."""
    lam = bath.lambda_matrix[m, m]
    if lam == 0.0:
        return 0.0
    return float(lam * _moment(bath, -1, tol))


def characteristic_frequency(bath, m, lambda_m, tol=1e-9) -> float:
    """Characteristic frequency from ``lambda_m Omega_m^2 = (1/2pi) int w J_mm``."""
    lam = bath.lambda_matrix[m, m]
    if lambda_m <= 0.0 or lam == 0.0:
        raise NonpositiveMomentError(f"mode {m} has no reorganization energy")
    first = lam * _moment(bath, 1, tol)
    if first <= 0.0:
        raise NonpositiveMomentError(f"first spectral moment of mode {m} is {first}")
    return math.sqrt(first / lambda_m)


def matsubara_bose_poles(n):
    """Matsubara poles ``zeta_j = 2 pi j`` with unit weights."""
    return 2.0 * np.pi * np.arange(1, n + 1, dtype=float), np.ones(n)


def pade_bose_poles(n):
    """[N-1/N] Pade poles and weights of the Bose function.

    ``1/(1 - e^{-x}) ~ 1/x + 1/2 + sum_j 2 xi_j x / (x^2 + zeta_j^2)``.
    """
    if n == 0:
        return np.zeros(0), np.zeros(0)

    def top_eigs(size, offset):
        a = np.zeros((size, size))
        for i in range(size - 1):
            a[i, i + 1] = a[i + 1, i] = 1.0 / math.sqrt((2 * i + offset) * (2 * i + offset + 2))
        return np.sort(np.linalg.eigvalsh(a))[::-1]

    zeta = 2.0 / top_eigs(2 * n, 3)[:n]
    aux = 2.0 / top_eigs(2 * n - 1, 5)[: n - 1] if n > 1 else np.zeros(0)
    xi = np.empty(n)
    for j in range(n):
        num = np.prod(aux**2 - zeta[j] ** 2)
        den = np.prod([zeta[k] ** 2 - zeta[j] ** 2 for k in range(n) if k != j])
        xi[j] = 0.5 * n * (2 * n + 3) * num / den
    return zeta, xi


@dataclass
class BathExpansion:
    """Exponential series ``C_{mm'}(t) ~ sum_k etas[m, m', k] exp(-gammas[k] t)``."""

    gammas: np.ndarray
    etas: np.ndarray
    conj_map: np.ndarray
    scheme: str = "pade"
    n_thermal: int = 0

    def __post_init__(self):
        self.gammas = np.asarray(self.gammas, dtype=complex)
        self.etas = np.asarray(self.etas, dtype=complex)
        self.conj_map = np.asarray(self.conj_map, dtype=int)

    @property
    def n_terms(self) -> int:
        return len(self.gammas)

    @property
    def n_modes(self) -> int:
        return self.etas.shape[0]

    def correlation(self, m, mp, t):
        t = np.asarray(t, dtype=float)
        return np.sum(self.etas[m, mp, :] * np.exp(-np.multiply.outer(t, self.gammas)), axis=-1)

    def reversed_correlation(self, m, mp, t):
        """``<F_m'(0) F_m(t)>`` from the conjugate-paired coefficients."""
        t = np.asarray(t, dtype=float)
        coef = np.conj(self.etas[m, mp, self.conj_map])
        return np.sum(coef * np.exp(-np.multiply.outer(t, self.gammas)), axis=-1)

    def scaled(self, factor):
        return BathExpansion(self.gammas.copy(), self.etas * factor, self.conj_map.copy(),
                             self.scheme, self.n_thermal)

    def dumps(self) -> str:
        out = io.StringIO()
        out.write("# k  Re_gamma  Im_gamma  m  m'  Re_eta  Im_eta  kbar\n")
        for k in range(self.n_terms):
            g = self.gammas[k]
            for m in range(self.n_modes):
                for mp in range(self.n_modes):
                    e = self.etas[m, mp, k]
                    out.write(f"{k} {g.real:.17g} {g.imag:.17g} {m} {mp} "
                              f"{e.real:.17g} {e.imag:.17g} {self.conj_map[k]}\n")
        return out.getvalue()

    @classmethod
    def loads(cls, text: str) -> "BathExpansion":
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        n_terms = 1 + max(int(r[0]) for r in rows)
        n_modes = 1 + max(int(r[3]) for r in rows)
        gammas = np.zeros(n_terms, complex)
        etas = np.zeros((n_modes, n_modes, n_terms), complex)
        conj = np.zeros(n_terms, int)
        for r in rows:
            k, m, mp = int(r[0]), int(r[3]), int(r[4])
            gammas[k] = complex(float(r[1]), float(r[2]))
            etas[m, mp, k] = complex(float(r[5]), float(r[6]))
            conj[k] = int(r[7])
        return cls(gammas, etas, conj)


def _pair_conjugates(gammas, tol=1e-9):
    gammas = gammas.copy()
    conj = -np.ones(len(gammas), dtype=int)
    for k, g in enumerate(gammas):
        if conj[k] >= 0:
            continue
        scale = max(1.0, abs(g))
        if abs(g.imag) <= tol * scale:
            gammas[k] = g.real
            conj[k] = k
            continue
        for j in range(k + 1, len(gammas)):
            if conj[j] < 0 and abs(gammas[j] - np.conj(g)) <= tol * scale:
                gammas[j] = np.conj(g)
                conj[k], conj[j] = j, k
                break
        else:
            raise ValueError(f"exponent {g} has no conjugate partner")
    return gammas, conj


def _unit_expansion(bath, scheme, n_thermal):
    """Exponents and unit-strength coefficients from the lower-half-plane poles."""
    if scheme == "pade":
        zeta, xi = pade_bose_poles(n_thermal)
    elif scheme == "matsubara":
        zeta, xi = matsubara_bose_poles(n_thermal)
    else:
        raise ValueError(f"unknown decomposition scheme {scheme!r}")
    beta = bath.beta

    def bose(w):
        x = beta * w
        if scheme == "matsubara":
            return -1.0 / np.expm1(-x)
        return 1.0 / x + 0.5 + np.sum(2.0 * xi * x / (x * x + zeta**2))

    poles, residues = bath.response_poles()
    gam, coef = [], []
    # J = (chi(w) - chi(-w)) / 2i; closing below picks poles of either piece with Im w < 0
    for p, r in zip(poles, residues):
        if p.imag < 0:
            gam.append(1j * p)
            coef.append(-2j * (r / 2j) * bose(p))
        q = -p
        if q.imag < 0:
            gam.append(1j * q)
            coef.append(-2j * (r / 2j) * bose(q))
    for z, x in zip(zeta, xi):
        w = -1j * z / beta
        gam.append(z / beta + 0j)
        # real for a real odd J; drop the rounding residue
        coef.append(complex((-2j * bath.unit_density(w) * x / beta).real))
    gam, conj = _pair_conjugates(np.array(gam, dtype=complex))
    return gam, np.array(coef, dtype=complex), conj


@dataclass
class ExpansionReport:
    """Per-channel residuals of an expansion against the quadrature oracle."""

    max_abs: np.ndarray
    max_rel: np.ndarray
    reversal_rel: np.ndarray
    tolerance: float

    @property
    def worst(self) -> float:
        return float(max(self.max_rel.max(), self.reversal_rel.max()))

    def flagged(self):
        """Channels whose forward or reversed residual exceeds the tolerance."""
        bad = (self.max_rel > self.tolerance) | (self.reversal_rel > self.tolerance)
        return [tuple(int(i) for i in ij) for ij in zip(*np.nonzero(bad))]

    @property
    def ok(self) -> bool:
        return not self.flagged()


def verify_expansion(expansion: BathExpansion, bath: BrownianOscillatorBath, t_grid,
                     tolerance=1e-3) -> ExpansionReport:
    """Compare every channel with direct quadrature, forward and time-reversed."""
    t_grid = np.asarray(t_grid, dtype=float)
    n = bath.n_modes
    max_abs = np.zeros((n, n))
    max_rel = np.zeros((n, n))
    rev_rel = np.zeros((n, n))
    diag_scale = max([abs(correlation_fdt_quadrature(bath, m, m, 0.0)) for m in range(n)] + [0.0])
    for m in range(n):
        for mp in range(n):
            ref = np.array([correlation_fdt_quadrature(bath, m, mp, t) for t in t_grid])
            got = expansion.correlation(m, mp, t_grid)
            # <F_m'(0) F_m(t)> = <F_m'(-t) F_m(0)>
            ref_rev = np.array([correlation_fdt_quadrature(bath, mp, m, -t) for t in t_grid])
            got_rev = expansion.reversed_correlation(m, mp, t_grid)
            scale = abs(ref[0]) if abs(ref[0]) > 0 else diag_scale
            diff = np.abs(got - ref)
            max_abs[m, mp] = diff.max()
            if scale > 0:
                max_rel[m, mp] = diff.max() / scale
                rev_rel[m, mp] = np.abs(got_rev - ref_rev).max() / scale
            else:
                max_rel[m, mp] = 0.0 if diff.max() == 0 else np.inf
                rev_rel[m, mp] = 0.0 if np.abs(got_rev - ref_rev).max() == 0 else np.inf
    return ExpansionReport(max_abs, max_rel, rev_rel, tolerance)


def decompose_exponentials(bath: BrownianOscillatorBath, scheme="pade", n_thermal=None,
                           tolerance=1e-3, t_window=10.0, n_check=41, max_thermal=12):
    """Sum-over-poles expansion of every channel on a shared exponent set.

    With ``n_thermal=None`` the thermal-pole count grows until the windowed
    relative residual drops below ``tolerance``.
    """
    lam = bath.lambda_matrix
    if not np.any(lam):
        gam, unit, conj = _unit_expansion(bath, scheme, 0 if n_thermal is None else n_thermal)
        return BathExpansion(gam, np.zeros((bath.n_modes, bath.n_modes, len(gam))), conj,
                             scheme, 0 if n_thermal is None else n_thermal)
    t_grid = np.linspace(0.0, t_window, n_check)
    counts = [n_thermal] if n_thermal is not None else range(0, max_thermal + 1)
    best = np.inf
    for nt in counts:
        gam, unit, conj = _unit_expansion(bath, scheme, nt)
        etas = lam[:, :, None] * unit[None, None, :]
        exp = BathExpansion(gam, etas, conj, scheme, nt)
        report = verify_expansion(exp, bath, t_grid, tolerance)
        best = min(best, report.worst)
        if report.ok:
            return exp
    raise ExpansionAccuracyError(
        f"{scheme} expansion reached residual {best:.3e} > {tolerance:.1e}", best)


@dataclass(frozen=True)
class BathModeGeometry:
    """Phase-space scales of each hybridized bath mode.

    ``vtilde[m] = v[m] / sqrt(2 lambda_m Omega_m)`` converts the Herzberg-Teller
    coefficient of ``X_m`` into a coefficient of ``F_m``.
    """

    lambdas: np.ndarray
    omegas: np.ndarray
    displacements: np.ndarray
    vtilde: np.ndarray
    v: np.ndarray = field(default=None)


def mode_geometry(bath: BrownianOscillatorBath, v) -> BathModeGeometry:
    v = np.asarray(v, dtype=float)
    n = bath.n_modes
    lambdas = np.zeros(n)
    omegas = np.full(n, np.nan)
    disp = np.zeros(n)
    vt = np.zeros(n)
    for m in range(n):
        lambdas[m] = reorganization_energy(bath, m)
        if lambdas[m] > 0:
            omegas[m] = characteristic_frequency(bath, m, lambdas[m])
            disp[m] = math.sqrt(2.0 * lambdas[m] / omegas[m])
            vt[m] = v[m] / math.sqrt(2.0 * lambdas[m] * omegas[m])
        elif v[m] != 0:
            raise NonpositiveMomentError(f"mode {m} carries a dipole coefficient but no coupling")
    return BathModeGeometry(lambdas, omegas, disp, vt, v)
