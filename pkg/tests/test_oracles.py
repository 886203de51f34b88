import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from deomctl.bath import BrownianOscillatorBath, decompose_exponentials
from deomctl.oracles import (dephasing_quadrature, dephasing_reference, gaussian_pulse, gaussian_target_fock,
                             gaussian_target_reference, mode_covariance, rabi_expm, rabi_reference)

from conftest import reference_bath


def test_rabi_limits_and_expm():
    # resonant: full inversion at half the Rabi period
    g = 0.25
    t = math.pi / (2 * g)
    _, p1 = rabi_reference(0.0, g, np.array([t]))
    assert p1[0] == pytest.approx(1.0)
    _, p1 = rabi_reference(1.0, 0.0, np.linspace(0, 5, 6))
    assert np.allclose(p1, 0.0)
    ts = np.linspace(0, 8, 17)
    a0, a1 = rabi_reference(1.0, 0.3, ts)
    b0, b1 = rabi_expm(1.0, 0.3, ts)
    assert np.allclose(a0, b0, atol=1e-12) and np.allclose(a1, b1, atol=1e-12)


def single_mode():
    return BrownianOscillatorBath(np.array([[0.2]]), 0.4, 0.8, 3.0, 1.0)


def test_dephasing_trivial_and_frozen():
    exp = decompose_exponentials(single_mode())
    assert dephasing_reference(exp, 0.0) == pytest.approx(1.0)
    assert dephasing_reference(exp.scaled(0.0), 3.0, energy=0.0) == pytest.approx(1.0)
    val = dephasing_reference(exp, 2.0, energy=1.0)
    assert val == pytest.approx(-0.17834412994041174 - 0.42646631449960654j, rel=1e-10)


def test_dephasing_closed_form_vs_quadrature():
    bath = single_mode()
    exp = decompose_exponentials(bath)
    ref = dephasing_quadrature(bath, 2.0, energy=1.0)
    assert abs(dephasing_reference(exp, 2.0, energy=1.0) - ref) < 1e-5


def test_gaussian_overlap_limits():
    cov = np.diag([0.5, 0.5])
    # no displacement, matched zero-temperature statistics: ratio of partition functions
    val = gaussian_target_reference(1.0, 1.0, 0.0, cov)
    s = 0.5 / math.tanh(0.5)
    assert val == pytest.approx(1.0 / math.sqrt((0.5 + s) ** 2))
    # small beta_tilde: the overlap tends to beta_tilde * Omega
    small = gaussian_target_reference(1e-4, 0.4, 1.0, np.diag([2.5, 2.9]))
    assert small / (1e-4 * 0.4) == pytest.approx(1.0, rel=1e-3)


def test_gaussian_overlap_frozen_and_fock():
    exp = decompose_exponentials(reference_bath())
    cov = mode_covariance(exp, 0.2, 0.4)
    assert np.allclose(np.diag(cov), [2.532315408118, 2.881721955844])
    frozen = {0.125: 0.04306631233452813, 1.0: 0.17298999802954834, 8.0: 0.2619322171463311}
    for bt, v in frozen.items():
        ref = gaussian_target_reference(bt, 0.4, 1.0, cov)
        assert ref == pytest.approx(v, rel=1e-12)
        assert gaussian_target_fock(bt, 0.4, 1.0, cov) == pytest.approx(ref, rel=1e-8)


def test_pulse_area():
    p = gaussian_pulse(0.5, 0.01, 2e-3)
    t = np.linspace(0.4, 0.6, 4001)
    assert trapezoid([p(x) for x in t], t) == pytest.approx(2e-3, rel=1e-9)
