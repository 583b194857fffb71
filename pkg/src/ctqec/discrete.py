"""Discrete-time correction baseline.

Left alone, the depolarizing master equation keeps the state a mixture of
Pauli conjugations of the initial state, with a weight that depends only on
the Pauli weight.  A single round of syndrome measurement and recovery at
time t then undoes every weight-0 and weight-1 error.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from math import comb

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply

from .codes import CodeSpec
from .pauli import PauliString, realize


@dataclass(frozen=True)
class AnsatzCoefficients:
    """``per_string[e]``: weight of each single weight-e conjugation ``P rho P``.

    ``class_weights[e] = C(n, e) 3**e per_string[e]`` is the total probability of
    a weight-e error.
    """

    t: float
    per_string: np.ndarray
    class_weights: np.ndarray

    @property
    def n(self) -> int:
        return len(self.per_string) - 1


def weight_rate_matrix(gamma: float, n: int = 5) -> np.ndarray:
    """Generator of the class weights ``w_e`` under single-qubit depolarizing.

    A rate-gamma Pauli on an idle qubit raises the weight (3 letters, n - e
    qubits); the matching letter on a busy qubit lowers it (e qubits); the two
    other letters keep it.
    """
    m = np.zeros((n + 1, n + 1))
    for e in range(n + 1):
        up = 3 * gamma * (n - e)
        down = gamma * e
        if e < n:
            m[e + 1, e] += up
        if e > 0:
            m[e - 1, e] += down
        m[e, e] -= up + down
    return m


def ansatz_coefficients(t: float, gamma: float, n: int = 5) -> AnsatzCoefficients:
    if t < 0:
        raise ValueError("t must be non-negative")
    w0 = np.zeros(n + 1)
    w0[0] = 1.0
    w = expm(weight_rate_matrix(gamma, n) * t) @ w0
    w = np.clip(w, 0.0, None)
    counts = np.array([comb(n, e) * 3 ** e for e in range(n + 1)], dtype=float)
    return AnsatzCoefficients(float(t), w / counts, w)


def discrete_codeword_fidelity(t, gamma: float):
    """Closed-form weight-0 plus weight-1 probability for five qubits."""
    x = gamma * np.asarray(t, dtype=float)
    # (1/256) e^{-20x} (3 + e^{4x})^4 (4 e^{4x} - 3), rewritten in E = e^{-4x}
    # so that large x does not overflow
    e = np.exp(-4 * x)
    out = (1 + 3 * e) ** 4 * (4 - 3 * e) / 256
    return float(out) if np.ndim(out) == 0 else out


def _all_syndrome_projectors(code: CodeSpec):
    d = 2 ** code.n
    gens = [realize(g) for g in code.generators]
    out = []
    for mask in range(2 ** code.l):
        proj = np.eye(d, dtype=complex)
        outcome = []
        for i, g in enumerate(gens):
            sign = -1 if mask >> i & 1 else 1
            outcome.append(sign)
            proj = proj @ (np.eye(d) + sign * g) / 2
        out.append((tuple(outcome), proj))
    return out


def apply_discrete_correction(rho, code: CodeSpec) -> np.ndarray:
    """Measure every generator, then apply the recovery for the observed syndrome.

    Outcomes that the error set never produces get no recovery.
    """
    rho = np.asarray(rho)
    out = np.zeros_like(rho, dtype=complex)
    for outcome, proj in _all_syndrome_projectors(code):
        r = code.recovery.get(outcome, PauliString.identity(code.n))
        rm = realize(r)
        out += rm @ proj @ rho @ proj @ rm.conj().T
    return out


def depolarizing_superoperator(code: CodeSpec, gamma: float):
    """Sparse ``L`` with ``vec(d rho/dt) = L vec(rho)`` for ``gamma sum D[sigma]`` (row-major vec)."""
    d = 2 ** code.n
    ident = sp.identity(d, format="csr", dtype=complex)
    total = sp.csr_matrix((d * d, d * d), dtype=complex)
    for e in code.error_set:
        m = sp.csr_matrix(realize(e))
        # vec(A rho B) = (A kron B^T) vec(rho) for row-major vec
        total = total + sp.kron(m, m.T, format="csr") - sp.kron(ident, ident, format="csr")
    return gamma * total


def depolarize_dense(rho, code: CodeSpec, gamma: float, t: float) -> np.ndarray:
    """Integrate the depolarizing master equation on the full density matrix."""
    rho = np.asarray(rho, dtype=complex)
    gen = depolarizing_superoperator(code, gamma)
    out = expm_multiply(gen * t, rho.ravel())
    return out.reshape(rho.shape)


def ansatz_state(rho0, code: CodeSpec, coeffs: AnsatzCoefficients) -> np.ndarray:
    """``sum_P a_{wt(P)} P rho0 P`` over all ``4**n`` Pauli strings."""
    rho0 = np.asarray(rho0, dtype=complex)
    out = np.zeros_like(rho0)
    for letters in product(range(4), repeat=code.n):
        p = PauliString(0, letters)
        m = realize(p)
        out += coeffs.per_string[p.weight] * (m @ rho0 @ m)
    return out


def corrected_fidelity_dense(rho0, code: CodeSpec, gamma: float, t: float) -> float:
    """``Tr[rho0 R(rho(t))]`` with ``rho(t)`` from dense integration and ``R`` the recovery map."""
    rho_t = depolarize_dense(rho0, code, gamma, t)
    return float(np.trace(np.asarray(rho0) @ apply_discrete_correction(rho_t, code)).real)
