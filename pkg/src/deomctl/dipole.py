"""Non-Condon dipole commutator acting on a whole DDO set."""
from __future__ import annotations

from .deom import DEOMDynamics, _check_state
from .hierarchy import DDOSet


def apply_D(state: DDOSet, dyn: DEOMDynamics) -> DDOSet:
    """DDO set of ``[mu_T, rho_T]`` where ``mu_T = mu_S (1 + sum_m v_m X_m)``.

    Tier ``n`` receives the system commutator of ``rho_n``, the commutator of
    every raised neighbour weighted by ``vtilde_m``, and the lowered terms
    ``vtilde_m n_{m'k} (eta_{m'mk} mu rho - conj(eta_{m'm kbar}) rho mu)``.
    Raised neighbours above the tier cap are dropped.
    """
    _check_state(state, dyn)
    vec = dyn.D @ state.vector()
    return DDOSet.from_vector(dyn.space, vec, dyn.dim, state.time)
