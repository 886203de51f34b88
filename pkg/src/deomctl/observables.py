"""Physical readouts from a DDO set: populations, mode means and variances.

Mode ``m`` here is the zero-based hybridized mode index (0 is the donor
mode ``F1``, 1 the acceptor mode ``F2``).  Every quantity is a real part; the
imaginary residue is available through ``with_imag`` and a residue above
``RESIDUE_WARN`` is logged, since it signals a truncation problem.
"""
from __future__ import annotations

import logging

import numpy as np

from .bath import BathExpansion
from .hierarchy import DDOSet

log = logging.getLogger(__name__)

RESIDUE_WARN = 1e-6

CSV_COLUMNS = ("t", "P0", "P1", "P2", "meanF1", "varF1", "varU")


def _real(val: complex, name: str, with_imag: bool):
    if abs(val.imag) > RESIDUE_WARN:
        log.warning("%s carries an imaginary residue %.2e", name, abs(val.imag))
    if with_imag:
        return float(val.real), float(val.imag)
    return float(val.real)


def _trace_at(state: DDOSet, entries) -> complex:
    space = state.space
    # pruned labels carry no DDOs
    if any(space.label_position(m, k) is None for m, k in entries):
        return 0j
    pos = space.position(space.occupation(entries))
    if pos is None:
        return 0j
    return complex(np.trace(state.data[pos]))


def population(state: DDOSet, m: int) -> float:
    return float(state.tier0[m, m].real)


def _first_moment(state: DDOSet, m: int, n_terms: int) -> complex:
    return sum((_trace_at(state, [(m, k)]) for k in range(n_terms)), 0j)


def _second_moment(state: DDOSet, expansion: BathExpansion, m: int, n: int) -> complex:
    K = expansion.n_terms
    total = complex(np.sum(expansion.etas[m, n]))
    for k in range(K):
        for kp in range(K):
            total += _trace_at(state, [(m, k), (n, kp)])
    return total


def mean_F(state: DDOSet, m: int, expansion: BathExpansion | None = None, with_imag=False):
    """``Re sum_k tr rho_{0 + mk}``."""
    K = expansion.n_terms if expansion is not None else _n_terms(state)
    return _real(_first_moment(state, m, K), f"mean F{m + 1}", with_imag)


def _n_terms(state: DDOSet) -> int:
    return 1 + max(k for _, k in state.space.labels) if state.space.labels else 0


def variance_F1(state: DDOSet, expansion: BathExpansion, m: int = 0, with_imag=False):
    """``sum_k eta_mmk + sum_kk' tr rho_{0++} - (sum_k tr rho_{0+})^2``."""
    mean = _first_moment(state, m, expansion.n_terms)
    val = _second_moment(state, expansion, m, m) - mean * mean
    return _real(val, f"var F{m + 1}", with_imag)


def variance_U(state: DDOSet, expansion: BathExpansion, with_imag=False):
    """Variance of ``U = F2 - F1``."""
    K = expansion.n_terms
    val = 0j
    for m in (0, 1):
        for n in (0, 1):
            val += (-1) ** (m + n) * _second_moment(state, expansion, m, n)
    diff = _first_moment(state, 1, K) - _first_moment(state, 0, K)
    return _real(val - diff * diff, "var U", with_imag)


def observable_row(state: DDOSet, expansion: BathExpansion):
    """One CSV row ``(t, P0, P1, P2, meanF1, varF1, varU)``."""
    t = state.time if state.time is not None else float("nan")
    return (float(t), population(state, 0), population(state, 1), population(state, 2),
            mean_F(state, 0, expansion), variance_F1(state, expansion), variance_U(state, expansion))
