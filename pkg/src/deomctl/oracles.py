"""Independent references used by the test suite and the ``validate`` command.

Each reference is cross-checked against a second
route (matrix exponential, nested quadrature, truncated Fock space or an
iterative eigen solver) in the tests.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate, linalg

from .bath import BathExpansion, BrownianOscillatorBath, correlation_fdt_quadrature


def rabi_reference(delta_eps, coupling, t):
    """Two-level populations ``(P0, P1)`` from ``|0>`` under ``H = [[0, -g], [-g, de]]``.

    ``coupling`` is the off-diagonal magnitude ``g`` (a static ``V`` or ``u * eps0``).
    """
    t = np.asarray(t, dtype=float)
    g = float(coupling)
    omega_r = math.sqrt(delta_eps ** 2 + 4.0 * g * g)
    if omega_r == 0.0:
        p1 = np.zeros_like(t)
    else:
        p1 = (4.0 * g * g / omega_r ** 2) * np.sin(0.5 * omega_r * t) ** 2
    return 1.0 - p1, p1


def rabi_expm(delta_eps, coupling, t):
    """Same populations by dense matrix exponential."""
    H = np.array([[0.0, -coupling], [-coupling, delta_eps]])
    out = []
    for tt in np.atleast_1d(t):
        psi = linalg.expm(-1j * H * tt) @ np.array([1.0, 0.0])
        out.append(np.abs(psi) ** 2)
    out = np.array(out)
    return out[:, 0], out[:, 1]


def _lineshape(gammas, etas, t):
    t = np.asarray(t, dtype=float)
    g = np.asarray(gammas, dtype=complex)
    e = np.asarray(etas, dtype=complex)
    gt = np.multiply.outer(t, g)
    small = np.abs(gt) < 1e-4
    safe = np.where(small, 1.0, g)
    val = (np.exp(-gt) - 1.0 + gt) / safe ** 2
    series = np.multiply.outer(t, np.ones_like(g)) ** 2 * (0.5 - gt / 6.0 + gt ** 2 / 24.0)
    val = np.where(small, series, val)
    return np.sum(e * val, axis=-1)


def dephasing_reference(expansion: BathExpansion, t, m=0, energy=0.0):
    """Coherence factor ``<1|rho(t)|0> / <1|rho(0)|0>`` for a single coupled state.

    The coupled state carries ``Q = |1><1|`` on mode ``m`` and sits at
    ``energy``; the cumulant is exact for commuting coupling.
    """
    t = np.asarray(t, dtype=float)
    g = _lineshape(expansion.gammas, expansion.etas[m, m], t)
    return np.exp(-1j * energy * t - g)


def dephasing_quadrature(bath: BrownianOscillatorBath, t, m=0, energy=0.0, tol=1e-10):
    """Same factor with ``int_0^t (t - s) C(s) ds`` done by nested quadrature on the FDT integral."""
    t = float(t)

    def part(fn):
        val, _ = integrate.quad(lambda s: (t - s) * fn(correlation_fdt_quadrature(bath, m, m, s)),
                                0.0, t, epsabs=tol, epsrel=1e-10, limit=200)
        return val
    g = part(np.real) + 1j * part(np.imag)
    return complex(np.exp(-1j * energy * t - g))


def mode_covariance(expansion: BathExpansion, lambda1, omega1, m=0):
    """Symmetrized equilibrium covariance of ``(X_m, P_m)`` implied by the expansion."""
    eta = expansion.etas[m, m]
    g = expansion.gammas
    sxx = np.real(np.sum(eta)) / (2.0 * lambda1 * omega1)
    spp = -np.real(np.sum(eta * g ** 2)) / (2.0 * lambda1 * omega1 ** 3)
    sxp = -np.real(np.sum(eta * g)) / (2.0 * lambda1 * omega1 ** 2)
    return np.array([[sxx, sxp], [sxp, spp]])


def gaussian_target_reference(beta_tilde, omega1, displacement, covariance):
    """``tr[rho_target rho_eq]`` for the displaced thermal target and a Gaussian bath state.

    The target is the thermal state of ``(Omega/2)[P^2 + (X + D)^2]`` at
    inverse temperature ``beta_tilde``.  Both Wigner functions are Gaussian,
    so the overlap is ``exp(-d^T S^-1 d / 2) / sqrt(det S)`` with ``S`` the sum
    of the covariances and ``d = (-D, 0)`` the separation of the centres.
    """
    s_th = 0.5 / math.tanh(0.5 * beta_tilde * omega1)
    S = np.asarray(covariance, dtype=float) + s_th * np.eye(2)
    d = np.array([displacement, 0.0])
    return float(math.exp(-0.5 * d @ np.linalg.solve(S, d)) / math.sqrt(np.linalg.det(S)))


def gaussian_target_fock(beta_tilde, omega1, displacement, covariance, n_fock=120):
    """Truncated-Fock evaluation of the same overlap (squeezed thermal bath state)."""
    a = np.diag(np.sqrt(np.arange(1, n_fock)), 1)
    X = (a + a.T) / math.sqrt(2.0)
    P = (a - a.T) / (1j * math.sqrt(2.0))
    cov = np.asarray(covariance, dtype=float)
    # thermal state of K = x^T (nu S^-1) x / 2 at parameter theta has covariance S
    nu = math.sqrt(np.linalg.det(cov))
    if nu <= 0.5:
        raise ValueError("covariance violates the uncertainty bound")
    Hmat = np.linalg.inv(cov) * nu
    theta = 2.0 * math.atanh(0.5 / nu)
    K = 0.5 * (Hmat[0, 0] * X @ X + Hmat[1, 1] * P @ P + Hmat[0, 1] * (X @ P + P @ X))
    rho = linalg.expm(-theta * K)
    rho /= np.trace(rho)
    Ht = 0.5 * omega1 * (P @ P + (X + displacement * np.eye(n_fock)) @ (X + displacement * np.eye(n_fock)))
    tgt = linalg.expm(-beta_tilde * Ht)
    tgt *= 2.0 * math.sinh(0.5 * beta_tilde * omega1)
    return float(np.real(np.trace(tgt @ rho)))


def power_iteration_eigs(A, n=None, tol=1e-14, max_iter=200000, seed=0):
    """Eigenpairs of a symmetric matrix by shifted power iteration with deflation.

    Each vector is polished with a few Rayleigh-quotient iterations.  Returns
    eigenvalues in descending order and the matching unit eigenvectors.
    """
    A = np.array(A, dtype=float)
    size = A.shape[0]
    n = size if n is None else n
    rng = np.random.default_rng(seed)
    shift = np.abs(A).sum(axis=1).max()
    B = A + shift * np.eye(size)  # positive definite, order preserved
    vals, vecs = [], []
    for _ in range(n):
        x = rng.standard_normal(size)
        for v in vecs:
            x -= (v @ x) * v
        x /= np.linalg.norm(x)
        lam = 0.0
        for _ in range(max_iter):
            y = B @ x
            for v in vecs:
                y -= (v @ y) * v
            lam_new = x @ y
            y /= np.linalg.norm(y)
            done = abs(lam_new - lam) < tol * max(1.0, abs(lam_new)) and np.linalg.norm(y - x) < 1e-6
            x, lam = y, lam_new
            if done:
                break
        for _ in range(3):
            mu = x @ A @ x
            try:
                y = np.linalg.solve(A - mu * np.eye(size), x)
            except np.linalg.LinAlgError:
                break
            for v in vecs:
                y -= (v @ y) * v
            nrm = np.linalg.norm(y)
            if not np.isfinite(nrm) or nrm == 0:
                break
            x = y / nrm
        vals.append(float(x @ A @ x))
        vecs.append(x)
    order = np.argsort(vals)[::-1]
    return np.array(vals)[order], np.array(vecs).T[:, order]


def gaussian_pulse(center, sigma, area):
    norm = area / (sigma * math.sqrt(2.0 * math.pi))

    def fn(t):
        x = (t - center) / sigma
        return norm * math.exp(-0.5 * x * x) if abs(x) < 12.0 else 0.0
    return fn


def two_pulse_kernel_entry(dyn, functional, tau_late, tau_early, tf, area=1e-3, sigma=0.01, dt=0.001):
    """``M(tau_late, tau_early)`` from full driven runs with two narrow pulses.

    Four runs with pulse areas ``(+-a, +-a)`` isolate the mixed second-order
    coefficient; odd orders cancel and the fourth-order mixed terms are
    ``O(a^2)`` relative.  The state is stationary before the first pulse, so
    propagation starts just before it.
    """
    from .deom import initial_state_pet, propagate

    if not tau_late > tau_early:
        raise ValueError("tau_late must exceed tau_early")
    rho0 = initial_state_pet(dyn.space, dyn.system)
    start = max(0.0, tau_early - 10.0 * sigma)
    values = {}
    for s1 in (1, -1):
        for s2 in (1, -1):
            p1 = gaussian_pulse(tau_early, sigma, s1 * area)
            p2 = gaussian_pulse(tau_late, sigma, s2 * area)
            state = propagate(rho0, dyn, lambda t: p1(t) + p2(t), (start, tf), dt)
            values[(s1, s2)] = functional(state)
    mixed = (values[(1, 1)] - values[(1, -1)] - values[(-1, 1)] + values[(-1, -1)]) / (4.0 * area * area)
    return mixed
