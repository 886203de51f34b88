"""Weak-field response kernel, its eigen problem, and the constrained optimal field."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .deom import DEOMDynamics, initial_state_pet, propagate, stationarity_residual
from .dipole import apply_D
from .errors import ConvergenceError, DegenerateConstraintError, DegenerateTargetError, StationarityError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    tf: float
    N: int

    def __post_init__(self):
        if not self.tf > self.t0:
            raise ValueError("control window needs t0 < tf")
        if self.N < 8:
            raise ValueError("the control grid needs at least 8 points")

    @property
    def h(self) -> float:
        return (self.tf - self.t0) / (self.N - 1)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.N)

    @property
    def weights(self) -> np.ndarray:
        w = np.full(self.N, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def integrate_sq(self, values) -> float:
        v = np.asarray(values, dtype=float)
        return float(np.sum(self.weights * v * v))


@dataclass
class ResponseMatrix:
    matrix: np.ndarray
    grid: TimeGrid
    asymmetry: float = float("nan")
    samples: list = field(default_factory=list)
    label: str = ""

    @property
    def N(self):
        return self.matrix.shape[0]


def _diag_stack(snaps, state_index):
    return np.stack([s.data[:, state_index, state_index] for s in snaps], axis=1)


def build_response_matrix(grid: TimeGrid, dyn: DEOMDynamics, functionals, dt=0.005, threads=1,
                          sample_fraction=0.1, seed=0, initial=None, stationarity_tol=1e-8):
    """Kernel ``M(tau_i, tau_j) = -<A>_{tf}`` of ``G(tf - tau_i) D G(tau_i - tau_j) D rho0``.

    ``functionals`` is one target functional or a list of them; all share the
    same propagations.  The lower triangle is computed from one first leg and
    one second leg per lag; a random sample of upper-triangle entries is
    computed explicitly (backward field-free propagation for the negative
    lag) and compared against the mirrored value.
    """
    single = not isinstance(functionals, (list, tuple))
    funcs = [functionals] if single else list(functionals)
    rho0 = initial if initial is not None else initial_state_pet(dyn.space, dyn.system)
    res = stationarity_residual(rho0, dyn)
    if res > stationarity_tol:
        raise StationarityError(f"initial DDOs are not stationary (residual {res:.2e})")
    N, h = grid.N, grid.h
    span = grid.tf - grid.t0
    sidx = funcs[0].spec.state
    phi0 = apply_D(rho0, dyn)
    _, first = propagate(phi0, dyn, None, (0.0, span), dt, snapshots=h * np.arange(N))

    def second_leg(j):
        psi = apply_D(first[j], dyn)
        n_out = N - j
        _, snaps = propagate(psi, dyn, None, (0.0, h * (n_out - 1)), dt, snapshots=h * np.arange(n_out))
        stack = _diag_stack(snaps, sidx)
        return j, [f.on_vectors(stack) for f in funcs]

    mats = [np.zeros((N, N)) for _ in funcs]
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(second_leg, range(N)))
    else:
        results = [second_leg(j) for j in range(N)]
    for j, vals in results:
        q = np.arange(N - j)
        p = N - 1 - q
        for M, v in zip(mats, vals):
            M[p, p - j] = -v
            M[p - j, p] = -v

    # explicit upper-triangle sample
    rng = np.random.default_rng(seed)
    upper = [(i, j) for i in range(N) for j in range(i + 1, N)]
    n_sample = int(round(sample_fraction * len(upper)))
    picks = sorted(upper[k] for k in rng.choice(len(upper), size=n_sample, replace=False)) if n_sample else []
    by_lag = {}
    for i, j in picks:
        by_lag.setdefault(j - i, []).append(i)
    samples = [[] for _ in funcs]
    for lag, rows in sorted(by_lag.items()):
        back = propagate(phi0, dyn, None, (0.0, -lag * h), dt)
        psi = apply_D(back, dyn)
        durations = sorted({(N - 1 - i) for i in rows})
        _, snaps = propagate(psi, dyn, None, (0.0, h * durations[-1]), dt, snapshots=h * np.array(durations))
        stack = _diag_stack(snaps, sidx)
        for f_i, f in enumerate(funcs):
            vals = -f.on_vectors(stack)
            for d_pos, dur in enumerate(durations):
                i = N - 1 - dur
                samples[f_i].append((i, i + lag, float(vals[d_pos]), float(mats[f_i][i + lag, i])))
    out = []
    for f, M, smp in zip(funcs, mats, samples):
        scale = np.abs(M).max()
        asym = max((abs(a - b) for _, _, a, b in smp), default=0.0) / scale if scale > 0 else 0.0
        out.append(ResponseMatrix(M, grid, asym, smp, f"beta_tilde={f.spec.beta_tilde:g}"))
    return out[0] if single else out


def jacobi_eigh(S, tol=1e-15, max_sweeps=100):
    """Cyclic Jacobi rotations for a real symmetric matrix; returns ``(values, vectors)`` unsorted."""
    A = np.array(S, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    scale = np.linalg.norm(A)
    if scale == 0.0:
        return np.zeros(n), V
    for _ in range(max_sweeps):
        off = np.linalg.norm(A[~np.eye(n, dtype=bool)])
        if off <= tol * scale:
            return np.diag(A).copy(), V
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                V[:, p] = c * vp - s * V[:, q]
                V[:, q] = s * vp + c * V[:, q]
    raise ConvergenceError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")


def eigen_solve(M, grid: TimeGrid, tol=1e-15, max_sweeps=100):
    """Eigenpairs of ``(M W) v = Lambda v`` sorted by descending Lambda; ``v^T W v = 1``."""
    mat = M.matrix if isinstance(M, ResponseMatrix) else np.asarray(M, dtype=float)
    mat = 0.5 * (mat + mat.T)
    r = np.sqrt(grid.weights)
    vals, U = jacobi_eigh(r[:, None] * mat * r[None, :], tol, max_sweeps)
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = U[:, order] / r[:, None]
    return vals, vecs


@dataclass
class OptimalField:
    times: np.ndarray
    values: np.ndarray
    Lambda: float
    strength: float
    coeffs: np.ndarray
    fallback: bool = False

    def __call__(self, t):
        return float(np.interp(t, self.times, self.values))

    def periodic(self):
        t0, period = self.times[0], self.times[-1] - self.times[0]
        times, values = self.times, self.values

        def fn(t):
            return float(np.interp(t0 + (t - t0) % period, times, values))
        return fn


def _null_combination(vecs):
    C = np.vstack([vecs[0, :], vecs[-1, :]])
    _, s, vh = np.linalg.svd(C)
    rank = int(np.sum(s > 1e-12 * max(1.0, s.max(initial=0.0))))
    null = vh[rank:].T
    return null, rank


def assemble_field(vals, vecs, grid: TimeGrid, strength, M=None, n_vectors=3) -> OptimalField:
    """Endpoint-free combination of the top eigenvectors, scaled to ``int eps^2 dt = strength``.

    Three vectors with two endpoint constraints leave a one-dimensional null
    space.  If the constraints are rank deficient on those three, four vectors
    are used and the combination with the largest Rayleigh quotient is taken
    (``fallback`` set).
    """
    vals = np.asarray(vals, dtype=float)
    vecs = np.asarray(vecs, dtype=float)
    if vals.size == 0 or np.abs(vals).max() == 0.0:
        raise DegenerateTargetError("response kernel vanishes: degenerate target")
    if vecs.shape[1] < n_vectors:
        raise DegenerateConstraintError(f"need {n_vectors} eigenvectors, have {vecs.shape[1]}")
    fallback = False
    use = n_vectors
    null, rank = _null_combination(vecs[:, :use])
    if rank < 2 or null.shape[1] != use - 2:
        if vecs.shape[1] < use + 1:
            raise DegenerateConstraintError("endpoint constraints are rank deficient and no spare eigenvector")
        fallback = True
        use += 1
        null, rank = _null_combination(vecs[:, :use])
        log.warning("endpoint constraints rank deficient; using %d eigenvectors", use)
    if null.shape[1] == 1:
        c = null[:, 0]
    else:
        # maximize sum lambda_i c_i^2 on the unit sphere of the null space
        lam = vals[:use]
        red = null.T @ np.diag(lam) @ null
        w, z = np.linalg.eigh(red)
        c = null @ z[:, -1]
    eps = vecs[:, :use] @ c
    eps[0] = 0.0
    eps[-1] = 0.0
    norm = grid.integrate_sq(eps)
    if norm == 0.0:
        raise DegenerateConstraintError("endpoint-free combination is identically zero")
    scale = math.sqrt(strength / norm)
    eps = eps * scale
    c = c * scale
    if eps[np.argmax(np.abs(eps))] < 0:
        eps, c = -eps, -c
    w = grid.weights
    if M is not None:
        mat = M.matrix if isinstance(M, ResponseMatrix) else np.asarray(M)
        we = w * eps
        lam_eff = float(we @ mat @ we) / float(we @ eps) if strength > 0 else 0.0
    else:
        lam_eff = float(np.sum(vals[:use] * c * c) / np.sum(c * c))
    return OptimalField(grid.times.copy(), eps, lam_eff, float(strength), c, fallback)


def predicted_yield(field_: OptimalField) -> float:
    """Second-order prediction ``Lambda * I / 2`` of the target at ``tf``."""
    return field_.Lambda * field_.strength / 2.0
