"""Field-dressed dissipaton equation of motion on a dense hierarchy space.

The DDO stack is flattened row-major, ``vec[n*d*d + i*d + j] = rho_n[i, j]``.
With that layout a left product ``A @ O`` on every block is ``I_N (x) A (x) I_d``
and a right product ``O @ B`` is ``I_N (x) I_d (x) B^T``.  The generator is
affine in the field, ``G(eps) = G0 + eps * G1``, and ``G1`` is ``1j`` times the
non-Condon dipole superoperator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .bath import BathExpansion, BathModeGeometry
from .errors import DimensionError, PropagationError
from .hierarchy import DEFAULT_MAX_INDICES, DDOSet, HierarchySpace, build_space


@dataclass(frozen=True)
class SystemModel:
    H_S: np.ndarray
    Q: tuple
    mu_S: np.ndarray
    labels: tuple = ()
    u: float = 1.0

    def __post_init__(self):
        H = np.asarray(self.H_S, dtype=complex)
        d = H.shape[0]
        mats = [H, np.asarray(self.mu_S, dtype=complex)] + [np.asarray(q, dtype=complex) for q in self.Q]
        for a in mats:
            if a.shape != (d, d):
                raise DimensionError(f"operator of shape {a.shape} in a {d}-level system")
            if np.abs(a - a.conj().T).max(initial=0.0) > 1e-12:
                raise ValueError("system operators must be Hermitian")
        object.__setattr__(self, "H_S", H)
        object.__setattr__(self, "mu_S", mats[1])
        object.__setattr__(self, "Q", tuple(mats[2:]))

    @property
    def dim(self) -> int:
        return self.H_S.shape[0]


def pet_system(lambdas, delta_eps=(1.0, 1.0), V=0.25, u=1.0) -> SystemModel:
    """Ground/donor/acceptor model with ``Q_m = |m><m|`` for m = 1, 2."""
    H = np.zeros((3, 3))
    H[1, 1] = delta_eps[0] + lambdas[0]
    H[2, 2] = delta_eps[1] + lambdas[1]
    H[1, 2] = H[2, 1] = V
    Q = []
    for m in (1, 2):
        q = np.zeros((3, 3))
        q[m, m] = 1.0
        Q.append(q)
    mu = np.zeros((3, 3))
    mu[0, 1] = mu[1, 0] = u
    return SystemModel(H, tuple(Q), mu, ("ground", "donor", "acceptor"), u)


def active_labels(expansion: BathExpansion, n_system_modes=None, tol=0.0):
    """``(m, k)`` labels that carry a nonzero coefficient; the rest never get populated."""
    etas = expansion.etas
    cmap = expansion.conj_map
    M = etas.shape[0] if n_system_modes is None else n_system_modes
    out = []
    for m in range(M):
        for k in range(expansion.n_terms):
            if np.abs(etas[m, :, k]).max() > tol or np.abs(etas[m, :, cmap[k]]).max() > tol:
                out.append((m, k))
    return out


def _lift(space: HierarchySpace, idx_mat, left=None, right=None, d=None):
    """``idx_mat (x) superop`` where superop is left-multiplication and/or right-multiplication."""
    eye = sp.identity(d, format="csr", dtype=complex)
    parts = []
    if left is not None:
        parts.append(sp.kron(sp.csr_matrix(left), eye))
    if right is not None:
        parts.append(sp.kron(eye, sp.csr_matrix(np.asarray(right).T)))
    sup = parts[0] if len(parts) == 1 else parts[0] + parts[1]
    return sp.kron(idx_mat, sup, format="csr")


def raise_matrix(space: HierarchySpace, a: int) -> sp.csr_matrix:
    """Index operator reading the raised neighbour ``n+_a`` into row ``n``."""
    N = len(space)
    cols = space.raise_table[:, a]
    ok = cols != space.sentinel
    rows = np.nonzero(ok)[0]
    return sp.csr_matrix((np.ones(len(rows), complex), (rows, cols[ok])), shape=(N, N))


def lower_matrix(space: HierarchySpace, a: int) -> sp.csr_matrix:
    """Index operator ``n_a * rho(n-_a)`` into row ``n``."""
    N = len(space)
    cols = space.lower_table[:, a]
    ok = cols != space.sentinel
    rows = np.nonzero(ok)[0]
    vals = space.indices[rows, a].astype(complex)
    return sp.csr_matrix((vals, (rows, cols[ok])), shape=(N, N))


@dataclass(eq=False)
class DEOMDynamics:
    """Everything needed to evaluate the generator on one hierarchy space."""

    system: SystemModel
    expansion: BathExpansion
    geometry: BathModeGeometry
    space: HierarchySpace
    G0: sp.csr_matrix = field(repr=False)
    D: sp.csr_matrix = field(repr=False)

    @property
    def dim(self) -> int:
        return self.system.dim

    @property
    def G1(self):
        return 1j * self.D

    @property
    def size(self) -> int:
        return len(self.space) * self.dim ** 2

    def rhs_vector(self, vec, eps=0.0):
        out = self.G0 @ vec
        if eps:
            out += (1j * eps) * (self.D @ vec)
        return out

    def zeros(self, time=None) -> DDOSet:
        return DDOSet.zeros(self.space, self.dim, time)


def build_dynamics(system: SystemModel, expansion: BathExpansion, geometry: BathModeGeometry,
                   L: int, max_indices=DEFAULT_MAX_INDICES, space=None) -> DEOMDynamics:
    M = len(system.Q)
    if expansion.n_modes != M:
        raise DimensionError(f"expansion has {expansion.n_modes} modes, system couples {M}")
    if space is None:
        space = build_space(active_labels(expansion, M), L, max_indices=max_indices)
    d = system.dim
    N = len(space)
    etas, cmap = expansion.etas, expansion.conj_map
    gam = expansion.gammas
    vt = np.asarray(geometry.vtilde, dtype=float)
    H, mu = system.H_S, system.mu_S
    I_N = sp.identity(N, format="csr", dtype=complex)

    label_gam = np.array([gam[k] for _, k in space.labels], dtype=complex)
    damp = space.indices @ label_gam if space.n_labels else np.zeros(N, complex)
    G0 = -1j * _lift(space, I_N, left=H, right=-H, d=d)
    G0 = G0 - sp.kron(sp.diags(damp), sp.identity(d * d), format="csr")
    D = _lift(space, I_N, left=mu, right=-mu, d=d)
    for a, (m, k) in enumerate(space.labels):
        R = raise_matrix(space, a)
        Lo = lower_matrix(space, a)
        Qm = system.Q[m]
        G0 = G0 - 1j * _lift(space, R, left=Qm, right=-Qm, d=d)
        # C_{mk} O = sum_m' [eta_{mm'k} Q_m' O - conj(eta_{mm'kbar}) O Q_m']
        left = sum(etas[m, mp, k] * system.Q[mp] for mp in range(M))
        right = sum(-np.conj(etas[m, mp, cmap[k]]) * system.Q[mp] for mp in range(M))
        G0 = G0 - 1j * _lift(space, Lo, left=left, right=right, d=d)
        if vt[m] != 0:
            D = D + vt[m] * _lift(space, R, left=mu, right=-mu, d=d)
        cl = sum(vt[mp] * etas[m, mp, k] for mp in range(M))
        cr = sum(-vt[mp] * np.conj(etas[m, mp, cmap[k]]) for mp in range(M))
        if cl != 0 or cr != 0:
            D = D + _lift(space, Lo, left=cl * mu, right=cr * mu, d=d)
    G0 = sp.csr_matrix(G0)
    G0.sum_duplicates()
    D = sp.csr_matrix(D)
    D.sum_duplicates()
    return DEOMDynamics(system, expansion, geometry, space, G0, D)


def _check_state(state: DDOSet, dyn: DEOMDynamics):
    if state.space is not dyn.space and (state.space.labels != dyn.space.labels
                                         or len(state.space) != len(dyn.space)):
        raise DimensionError("state and dynamics use different hierarchy spaces")
    if state.dim != dyn.dim:
        raise DimensionError(f"state dimension {state.dim} != system dimension {dyn.dim}")


def deom_rhs(state: DDOSet, dyn: DEOMDynamics, eps=0.0) -> DDOSet:
    _check_state(state, dyn)
    out = dyn.rhs_vector(state.vector(), eps)
    return DDOSet.from_vector(dyn.space, out, dyn.dim, state.time)


def _as_field(field_fn):
    if field_fn is None:
        return None
    if callable(field_fn):
        return field_fn
    value = float(field_fn)
    return lambda t: value


def _rk4_segment(dyn, vec, t, t_end, nsteps, field_fn, check_every=25):
    h = (t_end - t) / nsteps
    G0, D = dyn.G0, dyn.D
    for step in range(nsteps):
        t0 = t + step * h
        if field_fn is None:
            k1 = G0 @ vec
            k2 = G0 @ (vec + 0.5 * h * k1)
            k3 = G0 @ (vec + 0.5 * h * k2)
            k4 = G0 @ (vec + h * k3)
        else:
            e1, e2, e4 = field_fn(t0), field_fn(t0 + 0.5 * h), field_fn(t0 + h)
            k1 = dyn.rhs_vector(vec, e1)
            k2 = dyn.rhs_vector(vec + 0.5 * h * k1, e2)
            k3 = dyn.rhs_vector(vec + 0.5 * h * k2, e2)
            k4 = dyn.rhs_vector(vec + h * k3, e4)
        vec = vec + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if (step + 1) % check_every == 0 or step == nsteps - 1:
            if not np.isfinite(vec).all():
                raise PropagationError(f"non-finite DDOs near t={t0 + h:.6g}; reduce dt or raise L")
    return vec


def step_count(span, dt):
    """Smallest number of equal steps no longer than ``dt`` covering ``span``."""
    return max(1, int(math.ceil(abs(span) / dt - 1e-9)))


def propagate(state: DDOSet, dyn: DEOMDynamics, field_fn=None, t_span=(0.0, 1.0), dt=0.005,
              snapshots=None, sink=None) -> DDOSet:
    """Fixed-step RK4 from ``t_span[0]`` to ``t_span[1]``.

    ``t_span`` may run backwards.  Every snapshot time becomes a segment
    boundary, so snapshots are hit exactly; each segment uses the smallest
    number of equal steps not exceeding ``dt``.  Snapshots go to
    ``sink(t, DDOSet)`` when a sink is given; otherwise the call returns
    ``(final, snapshots)`` whenever snapshot times were requested.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    _check_state(state, dyn)
    t0, t1 = float(t_span[0]), float(t_span[1])
    field_fn = _as_field(field_fn)
    sgn = 1.0 if t1 >= t0 else -1.0
    marks = []
    if snapshots is not None:
        for s in np.atleast_1d(snapshots):
            s = float(s)
            if (s - t0) * sgn < -1e-12 or (t1 - s) * sgn < -1e-12:
                raise ValueError(f"snapshot time {s} outside the propagation span")
            marks.append(s)
    collected = []

    def emit(t, vec):
        snap = DDOSet.from_vector(dyn.space, vec.copy(), dyn.dim, t)
        if sink is not None:
            sink(t, snap)
        else:
            collected.append(snap)

    vec = state.vector().astype(complex, copy=True)
    t = t0
    order = sorted(marks, key=lambda s: (s - t0) * sgn)
    for s in order:
        if abs(s - t) > 1e-12:
            vec = _rk4_segment(dyn, vec, t, s, step_count(s - t, dt), field_fn)
            t = s
        emit(s, vec)
    if abs(t1 - t) > 1e-12:
        vec = _rk4_segment(dyn, vec, t, t1, step_count(t1 - t, dt), field_fn)
    out = DDOSet.from_vector(dyn.space, vec, dyn.dim, t1)
    if snapshots is not None and sink is None:
        return out, collected
    return out


def initial_state_pet(space: HierarchySpace, system: SystemModel) -> DDOSet:
    """Thermalized ground state: ``rho_0 = |0><0|``, all higher tiers zero."""
    st = DDOSet.zeros(space, system.dim, 0.0)
    st.data[0, 0, 0] = 1.0
    return st


def stationarity_residual(state: DDOSet, dyn: DEOMDynamics) -> float:
    return float(np.abs(dyn.G0 @ state.vector()).max(initial=0.0))


# dissipaton algebra ---------------------------------------------------------

def _label_index(space, m, k):
    return space.label_position(m, k)


def f_operator(space: HierarchySpace, expansion: BathExpansion, m, k, side="forward"):
    """Index operator of the single-dissipaton action on ``(m, k)``."""
    N = len(space)
    op = sp.csr_matrix((N, N), dtype=complex)
    a = _label_index(space, m, k)
    if a is not None:
        op = op + raise_matrix(space, a)
    cmap = expansion.conj_map
    for mp in range(expansion.n_modes):
        b = _label_index(space, mp, k)
        if b is None:
            continue
        coef = expansion.etas[mp, m, k] if side == "forward" else np.conj(expansion.etas[mp, m, cmap[k]])
        if coef != 0:
            op = op + coef * lower_matrix(space, b)
    return sp.csr_matrix(op)


def phi_operator(space, expansion, m, k, side="forward"):
    """Momentum-type partner: same lowering, negated raising."""
    N = len(space)
    op = sp.csr_matrix((N, N), dtype=complex)
    a = _label_index(space, m, k)
    if a is not None:
        op = op - raise_matrix(space, a)
    cmap = expansion.conj_map
    for mp in range(expansion.n_modes):
        b = _label_index(space, mp, k)
        if b is None:
            continue
        coef = expansion.etas[mp, m, k] if side == "forward" else np.conj(expansion.etas[mp, m, cmap[k]])
        if coef != 0:
            op = op + coef * lower_matrix(space, b)
    return sp.csr_matrix(op)


def coordinate_operator(space, expansion, geometry, m, side="forward"):
    scale = 1.0 / math.sqrt(2.0 * geometry.lambdas[m] * geometry.omegas[m])
    ops = [f_operator(space, expansion, m, k, side) for k in range(expansion.n_terms)]
    return sp.csr_matrix(scale * sum(ops))


def momentum_operator(space, expansion, geometry, m, side="forward"):
    scale = 1.0 / math.sqrt(2.0 * geometry.lambdas[m] * geometry.omegas[m] ** 3)
    ops = [expansion.gammas[k] * phi_operator(space, expansion, m, k, side) for k in range(expansion.n_terms)]
    return sp.csr_matrix(scale * sum(ops))


def _apply_index_op(op, state: DDOSet) -> DDOSet:
    N, d = len(state.space), state.dim
    out = op @ state.data.reshape(N, d * d)
    return DDOSet(state.space, np.asarray(out).reshape(N, d, d), state.time)


def _side(side):
    if side not in ("forward", "backward", ">", "<"):
        raise ValueError(f"side must be forward or backward, got {side!r}")
    return "forward" if side in ("forward", ">") else "backward"


def apply_f(state: DDOSet, expansion: BathExpansion, m, k, side="forward") -> DDOSet:
    return _apply_index_op(f_operator(state.space, expansion, m, k, _side(side)), state)


def apply_coordinate(state, expansion, geometry, m, side="forward") -> DDOSet:
    return _apply_index_op(coordinate_operator(state.space, expansion, geometry, m, _side(side)), state)


def apply_momentum(state, expansion, geometry, m, side="forward") -> DDOSet:
    return _apply_index_op(momentum_operator(state.space, expansion, geometry, m, _side(side)), state)
