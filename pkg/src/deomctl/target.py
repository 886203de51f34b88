"""Environment-targeted objective: imaginary-time flow under the displaced donor mode.

The target is ``A = rho_target |1><1|`` with ``rho_target`` the normalized
thermal state of ``H1 = (Omega/2)[P^2 + (X + D)^2]`` at ``beta_tilde``.
``H1`` acts on bath labels only, so its action on a DDO set is an index
operator ``B`` and ``theta(beta_tilde) = exp(-beta_tilde B) theta(0)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .bath import BathExpansion, BathModeGeometry
from .deom import _apply_index_op, f_operator, step_count
from .errors import PropagationError
from .hierarchy import DDOSet, HierarchySpace, build_space


@dataclass(frozen=True)
class TargetSpec:
    beta_tilde: float
    omega1: float
    lambda1: float
    D1: float
    dbeta: float | None = None
    headroom: int = 2
    mode: int = 0
    state: int = 1

    def __post_init__(self):
        if not self.beta_tilde > 0:
            raise ValueError("beta_tilde must be positive")
        if self.headroom < 0:
            raise ValueError("headroom must be nonnegative")

    @classmethod
    def from_geometry(cls, geometry: BathModeGeometry, beta_tilde, dbeta=None, headroom=2,
                      mode=0, state=1):
        return cls(float(beta_tilde), float(geometry.omegas[mode]), float(geometry.lambdas[mode]),
                   float(geometry.displacements[mode]), dbeta, headroom, mode, state)

    @property
    def step(self) -> float:
        return self.dbeta if self.dbeta else self.beta_tilde / 200.0

    @property
    def prefactor(self) -> float:
        return 2.0 * math.sinh(0.5 * self.beta_tilde * self.omega1)


def theta_space(space: HierarchySpace, spec: TargetSpec) -> HierarchySpace:
    """Space for the imaginary-time solve: ``headroom`` extra tiers, raised on the target mode only.

    ``H1`` never raises labels of the other modes, so capping their total
    occupation at the real-time cap loses nothing.
    """
    others = {m for m, _ in space.labels if m != spec.mode}
    caps = {m: space.cap for m in others}
    return build_space(space.labels, space.cap + spec.headroom, mode_caps=caps)


def h1_operator(space: HierarchySpace, spec: TargetSpec, expansion: BathExpansion) -> sp.csr_matrix:
    """Index operator of the forward action of ``H1`` (quadratic part + lambda_1 + F_1)."""
    N = len(space)
    occ = space.indices
    g = expansion.gammas
    etas = expansion.etas
    t = spec.mode
    W2 = spec.omega1 ** 2
    pref = 1.0 / (4.0 * spec.lambda1)
    own = [(a, k) for a, (m, k) in enumerate(space.labels) if m == t]
    lab = list(enumerate(space.labels))
    eye = np.eye(space.n_labels, dtype=np.int64)
    rows_all, cols_all, vals_all = [], [], []

    def add(target_occ, coef):
        coef = np.broadcast_to(np.asarray(coef, dtype=complex), (N,))
        cols = space.lookup_many(target_occ)
        keep = (cols != space.sentinel) & (coef != 0)
        rows_all.append(np.nonzero(keep)[0])
        cols_all.append(cols[keep])
        vals_all.append(coef[keep])

    for a, k in own:
        for b, kp in own:
            plus = 1.0 + g[k] * g[kp] / W2
            minus = 1.0 - g[k] * g[kp] / W2
            # double raise
            add(occ + eye[a] + eye[b], pref * plus)
            # raise (t, k') and lower (m, k): (2 n_mk + delta) eta_{m t k}
            for c, (m, kk) in lab:
                if kk != k:
                    continue
                delta = 1 if (m == t and k == kp) else 0
                coef = pref * minus * (2 * occ[:, c] + delta) * etas[m, t, k]
                add(occ + eye[b] - eye[c], coef)
            # double lower: n_mk eta_{m t k} (n_m'k' - delta) eta_{m' t k'}
            for c, (m, kk) in lab:
                if kk != k:
                    continue
                for e, (mp, kk2) in lab:
                    if kk2 != kp:
                        continue
                    delta = 1 if c == e else 0
                    coef = pref * plus * occ[:, c] * etas[m, t, k] * (occ[:, e] - delta) * etas[mp, t, kp]
                    add(occ - eye[c] - eye[e], coef)
    quad = sp.csr_matrix((np.concatenate(vals_all) if vals_all else np.zeros(0),
                          (np.concatenate(rows_all) if rows_all else np.zeros(0, int),
                           np.concatenate(cols_all) if cols_all else np.zeros(0, int))), shape=(N, N))
    quad.sum_duplicates()
    F = sum((f_operator(space, expansion, t, k, "forward") for k in range(expansion.n_terms)),
            sp.csr_matrix((N, N), dtype=complex))
    op = quad + spec.lambda1 * sp.identity(N, format="csr", dtype=complex) + F
    return sp.csr_matrix(op)


def apply_H1_forward(state: DDOSet, spec: TargetSpec, expansion: BathExpansion) -> DDOSet:
    """``theta(H1^>)`` on the state's own space; tiers above the cap are dropped."""
    return _apply_index_op(h1_operator(state.space, spec, expansion), state)


def _rk4_linear(A, x, h, nsteps):
    for _ in range(nsteps):
        k1 = A @ x
        k2 = A @ (x + 0.5 * h * k1)
        k3 = A @ (x + 0.5 * h * k2)
        k4 = A @ (x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.isfinite(x).all():
        raise PropagationError("imaginary-time solve diverged; reduce dbeta")
    return x


def _n_steps(spec: TargetSpec) -> int:
    return step_count(spec.beta_tilde, spec.step)


def solve_theta(boundary: DDOSet, spec: TargetSpec, expansion: BathExpansion, space=None,
                beta_tilde=None) -> DDOSet:
    """RK4 for ``d theta / d beta = -theta(H1^>)`` from 0 to ``beta_tilde``.

    The boundary is embedded into ``space`` (default: ``theta_space`` of its
    own space).  ``beta_tilde`` overrides the spec value, with zero returning
    the embedded boundary.
    """
    if space is None:
        space = boundary.space if boundary.space.mode_caps else theta_space(boundary.space, spec)
    theta0 = boundary if boundary.space is space else boundary.embed(space)
    bt = spec.beta_tilde if beta_tilde is None else float(beta_tilde)
    if bt == 0.0:
        return DDOSet(space, theta0.data.copy(), 0.0)
    B = h1_operator(space, spec, expansion)
    N, d = len(space), boundary.dim
    nsteps = step_count(bt, spec.step)
    x = _rk4_linear(-B, theta0.data.reshape(N, d * d), bt / nsteps, nsteps)
    return DDOSet(space, np.asarray(x).reshape(N, d, d), bt)


def target_expectation(theta: DDOSet, spec: TargetSpec, with_imag=False):
    """``2 sinh(beta_tilde Omega_1 / 2) Re <1|theta_0|1>``."""
    val = spec.prefactor * theta.tier0[spec.state, spec.state]
    if with_imag:
        return float(val.real), float(val.imag)
    return float(val.real)


class TargetFunctional:
    """The target as a linear functional on real-time DDO sets.

    Row 0 of the RK4 propagator ``P^n`` is obtained once by propagating
    ``e_0`` with the transposed generator; afterwards each evaluation is a
    dot product with the ``<1|rho_n|1>`` entries.
    """

    def __init__(self, space: HierarchySpace, spec: TargetSpec, expansion: BathExpansion):
        self.space = space
        self.spec = spec
        tspace = theta_space(space, spec)
        B = h1_operator(tspace, spec, expansion)
        nsteps = _n_steps(spec)
        e0 = np.zeros(len(tspace), complex)
        e0[0] = 1.0
        w = _rk4_linear(sp.csr_matrix(-B.T), e0, spec.beta_tilde / nsteps, nsteps)
        rows = tspace.lookup_many(space.indices)
        self.weights = w[rows]
        self.theta_space = tspace

    def complex_value(self, state: DDOSet) -> complex:
        s = self.spec.state
        return complex(self.spec.prefactor * (self.weights @ state.data[:, s, s]))

    def __call__(self, state: DDOSet) -> float:
        return self.complex_value(state).real

    def on_vectors(self, diag_entries) -> np.ndarray:
        """Evaluate on a stack of ``<1|rho_n|1>`` columns (shape ``(N, ...)``)."""
        return np.real(self.spec.prefactor * np.tensordot(self.weights, diag_entries, axes=(0, 0)))
