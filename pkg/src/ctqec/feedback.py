"""Bang-bang feedback law.

Each channel sigma gets strength ``lambda_max * sgn(Tr[-i[Pi_0, sigma] rho])``.
The observable is the rate at which a unit rotation about sigma moves
population into the codespace, so the law pushes toward Pi_0 at full strength.
"""

from __future__ import annotations

import numpy as np

from .codes import CodeSpec, codespace_projector
from .pauli import realize


def sgn_policy(values, lambda_max: float, tie: int = 0, deadband: float = 0.0) -> np.ndarray:
    """``lambda_max * sgn(values)`` with ``|v| <= deadband`` mapped to ``tie``.

    ``tie`` is the value taken by sgn(0): 0 (no actuation), +1 or -1.
    """
    if tie not in (-1, 0, 1):
        raise ValueError("tie must be -1, 0 or +1")
    values = np.asarray(values, dtype=float)
    s = np.sign(values)
    s[np.abs(values) <= deadband] = tie
    return lambda_max * s


def feedback_observables(code: CodeSpec, channels=None, p0=None) -> np.ndarray:
    """Stacked Hermitian matrices ``-i[Pi_0, sigma]``, one per control channel."""
    channels = code.error_set if channels is None else channels
    p0 = codespace_projector(code) if p0 is None else p0
    out = []
    for s in channels:
        m = realize(s)
        out.append(-1j * (p0 @ m - m @ p0))
    return np.array(out)


class FullPolicy:
    """Feedback law evaluated on a full density matrix."""

    def __init__(self, code: CodeSpec, lambda_max: float, tie: int = 0, deadband: float = 0.0,
                 channels=None, p0=None):
        self.lambda_max = lambda_max
        self.tie = tie
        self.deadband = deadband
        obs = feedback_observables(code, channels, p0)
        # Tr[A rho] = vdot(A, rho) for Hermitian A
        self._rows = obs.reshape(len(obs), -1).conj()

    def values(self, rho) -> np.ndarray:
        return (self._rows @ np.asarray(rho).ravel()).real

    def __call__(self, rho) -> np.ndarray:
        return sgn_policy(self.values(rho), self.lambda_max, self.tie, self.deadband)


def policy_from_full(rho, code: CodeSpec, lambda_max: float, tie: int = 0,
                     deadband: float = 0.0) -> np.ndarray:
    return FullPolicy(code, lambda_max, tie, deadband)(rho)


def policy_from_truncated(p, basis, lambda_max: float, tie: int = 0,
                          deadband: float = 0.0) -> np.ndarray:
    """Feedback law read off the reduced state through ``basis.control_index``."""
    return ReducedPolicy(basis, lambda_max, tie, deadband)(p)


class ReducedPolicy:
    """Feedback law on a reduced coordinate vector.

    ``basis.control_index[c]`` is ``(coordinate, coefficient)`` such that the
    channel-c observable equals ``coefficient * p[coordinate]``.
    """

    def __init__(self, basis, lambda_max: float, tie: int = 0, deadband: float = 0.0):
        n_ch = len(basis.channels)
        missing = [basis.channels[c].label() for c in range(n_ch) if c not in basis.control_index]
        if missing:
            raise KeyError(f"basis has no coordinate for control channels {missing}")
        self.lambda_max = lambda_max
        self.tie = tie
        self.deadband = deadband
        self._idx = np.array([basis.control_index[c][0] for c in range(n_ch)], dtype=np.intp)
        self._coef = np.array([basis.control_index[c][1] for c in range(n_ch)], dtype=float)

        if tie not in (-1, 0, 1):
            raise ValueError("tie must be -1, 0 or +1")

    def values(self, p) -> np.ndarray:
        return self._coef * np.asarray(p)[self._idx]

    def __call__(self, p) -> np.ndarray:
        # inline sgn_policy: this runs once per step of a cheap filter
        v = self._coef * p[self._idx]
        s = np.sign(v)
        s[np.abs(v) <= self.deadband] = self.tie
        s *= self.lambda_max
        return s
