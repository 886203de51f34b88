import numpy as np
import pytest

from deomctl.bath import BathExpansion, BrownianOscillatorBath, decompose_exponentials, mode_geometry
from deomctl.deom import (apply_coordinate, apply_f, build_dynamics, deom_rhs, initial_state_pet, propagate,
                          stationarity_residual, step_count)
from deomctl.errors import DimensionError, PropagationError
from deomctl.hierarchy import DDOSet, build_space, ddo_conjugate
from deomctl.oracles import rabi_reference

from conftest import two_level


def loop_generator(state, dyn):
    """Row-by-row evaluation of the hierarchy equations (independent of the sparse assembly)."""
    sp_, sysm, exp = dyn.space, dyn.system, dyn.expansion
    H = sysm.H_S
    out = np.zeros_like(state.data)
    for row, occ in enumerate(sp_.indices):
        rho = state.data[row]
        acc = -1j * (H @ rho - rho @ H)
        for a, (m, k) in enumerate(sp_.labels):
            acc -= occ[a] * exp.gammas[k] * rho
            up = occ.copy()
            up[a] += 1
            r = sp_.position(up)
            if r is not None:
                Q = sysm.Q[m]
                acc -= 1j * (Q @ state.data[r] - state.data[r] @ Q)
            if occ[a] > 0:
                dn = occ.copy()
                dn[a] -= 1
                low = state.data[sp_.position(dn)]
                kb = exp.conj_map[k]
                for mp, Qp in enumerate(sysm.Q):
                    acc -= 1j * occ[a] * (exp.etas[m, mp, k] * Qp @ low - np.conj(exp.etas[m, mp, kb]) * low @ Qp)
        out[row] = acc
    return out


def random_state(space, d, seed=0):
    rng = np.random.default_rng(seed)
    return DDOSet(space, rng.standard_normal((len(space), d, d)) + 1j * rng.standard_normal((len(space), d, d)))


def test_generator_matches_loop_oracle(ref_small):
    dyn = ref_small.dyn
    st = random_state(dyn.space, 3)
    assert np.allclose(deom_rhs(st, dyn).data, loop_generator(st, dyn), atol=1e-12)


def test_single_label_chain_dense():
    # one exponential, one mode: the hierarchy is a chain that can be written out by hand
    g, eta = 0.7, 0.3 - 0.2j
    exp = BathExpansion(np.array([g]), np.array([[[eta]]]), np.array([0]))
    bath = BrownianOscillatorBath(np.array([[0.2]]), 0.4, 0.8, 3.0, 1.0)
    geo = mode_geometry(bath, (0.0,))
    sysm = two_level(1.0)
    L = 3
    dyn = build_dynamics(sysm, exp, geo, L)
    d = 2
    I = np.eye(d)
    H, Q = sysm.H_S, sysm.Q[0]
    comm = lambda A: np.kron(A, I) - np.kron(I, A.T)
    blocks = [[np.zeros((4, 4), complex) for _ in range(L + 1)] for _ in range(L + 1)]
    for n in range(L + 1):
        blocks[n][n] = -1j * comm(H) - n * g * np.eye(4)
        if n < L:
            blocks[n][n + 1] = -1j * comm(Q)
        if n > 0:
            blocks[n][n - 1] = -1j * n * (eta * np.kron(Q, I) - np.conj(eta) * np.kron(I, Q.T))
    dense = np.block(blocks)
    assert np.allclose(dyn.G0.toarray(), dense, atol=1e-14)


def test_trace_and_hermiticity_preserved_by_generator(ref_small):
    dyn = ref_small.dyn
    st = random_state(dyn.space, 3, seed=3)
    st = (st + ddo_conjugate(st, dyn.expansion.conj_map)) * 0.5
    out = deom_rhs(st, dyn, eps=0.7)
    assert abs(np.trace(out.tier0)) < 1e-12
    back = ddo_conjugate(out, dyn.expansion.conj_map)
    assert np.allclose(back.data, out.data, atol=1e-12)


def test_field_term_is_dipole(ref_small):
    dyn = ref_small.dyn
    st = random_state(dyn.space, 3, seed=4)
    diff = deom_rhs(st, dyn, 0.5).vector() - deom_rhs(st, dyn, 0.0).vector()
    assert np.allclose(diff, 0.5j * (dyn.D @ st.vector()))


def test_initial_state_is_stationary(ref):
    rho = initial_state_pet(ref.dyn.space, ref.system)
    assert stationarity_residual(rho, ref.dyn) == 0.0
    out = propagate(rho, ref.dyn, None, (0.0, 2.0), 0.05)
    assert np.allclose(out.data, rho.data)


def test_rabi_closed_system():
    bath = BrownianOscillatorBath(np.zeros((1, 1)), 0.4, 0.8, 3.0, 1.0)
    dyn = build_dynamics(two_level(1.0), decompose_exponentials(bath), mode_geometry(bath, (0.0,)), 2)
    rho = dyn.zeros()
    rho.data[0, 0, 0] = 1.0
    ts = np.linspace(0.5, 5.0, 10)
    _, snaps = propagate(rho, dyn, 0.3, (0.0, 5.0), 0.005, snapshots=ts)
    _, p1 = rabi_reference(1.0, 0.3, ts)
    assert max(abs(s.tier0[1, 1].real - p) for s, p in zip(snaps, p1)) < 1e-8
    assert [s.time for s in snaps] == list(ts)


def test_backward_propagation_inverts_forward(ref_small):
    dyn = ref_small.dyn
    rho = initial_state_pet(dyn.space, dyn.system)
    fwd = propagate(rho, dyn, 0.4, (0.0, 0.3), 0.001)
    back = propagate(fwd, dyn, 0.4, (0.3, 0.0), 0.001)
    assert np.abs(back.data - rho.data).max() < 1e-10


def test_sink_and_errors(ref_small):
    dyn = ref_small.dyn
    rho = initial_state_pet(dyn.space, dyn.system)
    seen = []
    propagate(rho, dyn, None, (0.0, 0.1), 0.01, snapshots=[0.05, 0.1], sink=lambda t, s: seen.append(t))
    assert seen == [0.05, 0.1]
    with pytest.raises(ValueError):
        propagate(rho, dyn, None, (0.0, 0.1), 0.01, snapshots=[0.2])
    with pytest.raises(PropagationError), np.errstate(all="ignore"):
        propagate(rho, dyn, 1e6, (0.0, 2000.0), 20.0)
    with pytest.raises(DimensionError):
        propagate(DDOSet.zeros(build_space([(0, 0)], 1), 3), dyn, None, (0, 1), 0.1)
    assert step_count(1.0, 0.3) == 4 and step_count(-0.6, 0.3) == 2


def test_f_action_on_tier_zero(ref_small):
    dyn, exp = ref_small.dyn, ref_small.expansion
    rho = initial_state_pet(dyn.space, dyn.system)
    out = apply_f(rho, exp, 0, 2, "forward")
    # tier 0 reads the raised neighbour (empty); tier 1 gets the lowering term n * eta * rho0
    assert np.allclose(out.tier0, 0.0)
    for m in (0, 1):
        row = dyn.space.position(dyn.space.occupation([(m, 2)]))
        assert np.allclose(out.data[row], exp.etas[m, 0, 2] * rho.tier0)
    bwd = apply_f(rho, exp, 0, 2, "backward")
    row = dyn.space.position(dyn.space.occupation([(1, 2)]))
    assert np.allclose(bwd.data[row], np.conj(exp.etas[1, 0, 2]) * rho.tier0)


def test_coordinate_scale(ref_small):
    dyn, exp, geo = ref_small.dyn, ref_small.expansion, ref_small.geometry
    rho = initial_state_pet(dyn.space, dyn.system)
    x = apply_coordinate(rho, exp, geo, 0)
    f = sum((apply_f(rho, exp, 0, k) for k in range(exp.n_terms)), rho * 0.0)
    assert np.allclose(x.data * np.sqrt(2 * 0.2 * 0.4), f.data)
    # <X^2> in equilibrium is the Gaussian covariance
    xx = apply_coordinate(x, exp, geo, 0)
    assert np.trace(xx.tier0).real == pytest.approx(2.532315408118, rel=1e-9)
