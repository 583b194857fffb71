"""The full 2^n x 2^n stochastic quantum filter.

The same object plays two roles: the simulated plant (it generates the
measurement record from its own state) and the reference controller model
(it is driven by a record supplied from outside).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sde
from .codes import CodeSpec, build_syndrome_space, encoded_zero
from .pauli import realize, signed_permutation


@dataclass(frozen=True)
class ModelParams:
    """Rates in units of the error rate; ``dt`` in units of ``1/gamma``."""

    gamma: float = 1.0
    kappa: float = 100.0
    lambda_max: float = 200.0
    dt: float = 1e-5

    def __post_init__(self):
        for name in ("gamma", "kappa", "lambda_max"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")


def dissipator(sigma: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """``sigma rho sigma - rho`` for a Hermitian unitary ``sigma``."""
    if sigma.shape != rho.shape:
        raise ValueError(f"dimension mismatch {sigma.shape} vs {rho.shape}")
    return sigma @ rho @ sigma - rho


def h_superop(g: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """``g rho + rho g - 2 Tr[g rho] rho``."""
    if g.shape != rho.shape:
        raise ValueError(f"dimension mismatch {g.shape} vs {rho.shape}")
    return g @ rho + rho @ g - 2 * np.trace(g @ rho) * rho


def renormalize(rho: np.ndarray) -> np.ndarray:
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho).real
    if not np.isfinite(tr) or tr <= 0:
        raise sde.IntegrationError(f"density matrix trace became {tr}")
    return rho / tr


class FullFilter:
    """Integrates the full quantum filter for one code and parameter set.

    Pauli operators are applied as signed permutations, so a superoperator
    evaluation costs a few gathers over the ``4**n`` matrix entries.
    """

    def __init__(self, code: CodeSpec, params: ModelParams, scheme="predictor_corrector",
                 space=None, channels=None):
        self.code = code
        self.params = params
        self.scheme = scheme
        self.space = space if space is not None else build_syndrome_space(code)
        self.channels = tuple(code.error_set if channels is None else channels)
        d = 2 ** code.n
        self.dim = d
        self.dt = params.dt
        self.n_channels = code.l
        self.n_controls = len(self.channels)
        self._sqk = np.sqrt(params.kappa)

        # sum_k rate_k sigma_k rho sigma_k as flat gathers, one per distinct
        # permutation: out[i, j] = ph[i] conj(ph[j]) rho[perm i, perm j]
        groups = {}
        for rate, ops in ((params.gamma, code.error_set), (params.kappa, code.generators)):
            for p in ops:
                perm, ph = signed_permutation(p)
                key = perm.tobytes()
                flat = (perm[:, None] * d + perm[None, :]).ravel()
                coef = rate * np.outer(ph, ph.conj()).ravel()
                if key in groups:
                    groups[key][1] += coef
                else:
                    groups[key] = [flat, coef]
        identity = np.arange(d).tobytes()
        loss = params.gamma * len(code.error_set) + params.kappa * code.l
        self._diag_coef = (groups.pop(identity)[1] if identity in groups else 0) - loss
        self._diag_coef = np.broadcast_to(self._diag_coef, (d * d,)).reshape(d, d).copy()
        self._sandwich_idx = np.array([g[0] for g in groups.values()]).reshape(-1, d * d)
        self._sandwich_coef = np.array([g[1] for g in groups.values()]).reshape(-1, d * d)

        gp = [signed_permutation(g) for g in code.generators]
        self._g_perm = np.array([p for p, _ in gp])
        self._g_ph = np.array([ph for _, ph in gp])
        self._rows = np.arange(d)
        self._fb_stack = np.array([realize(s) for s in self.channels]) if self.channels else None

        self._p0 = self.space.projectors[0]
        self._rho0 = encoded_zero(code) if code.k == 1 else self._p0 / np.trace(self._p0).real

    def initial_state(self) -> np.ndarray:
        return self._rho0.copy()

    def expectations(self, rho: np.ndarray) -> np.ndarray:
        """``Tr[g_i rho]`` for every stabilizer generator."""
        # Tr[g rho] = sum_i ph[i] rho[perm i, i]
        return (self._g_ph * rho[self._g_perm, self._rows]).sum(axis=1).real

    def hamiltonian(self, controls):
        """Dense feedback Hamiltonian, or None when every strength is zero."""
        if controls is None or not np.any(controls):
            return None
        d = self.dim
        return (np.asarray(controls, dtype=float) @ self._fb_stack.reshape(len(controls), -1)).reshape(d, d)

    def drift(self, rho: np.ndarray, controls=None, h=None) -> np.ndarray:
        """Deterministic part of the filter for a Hermitian ``rho``.

        Pass a precomputed Hamiltonian ``h`` to skip rebuilding it from ``controls``.
        """
        flat = rho.ravel()
        out = (flat[self._sandwich_idx] * self._sandwich_coef).sum(axis=0).reshape(rho.shape)
        out += self._diag_coef * rho
        if h is None:
            h = self.hamiltonian(controls)
        if h is not None:
            # rho h = (h rho)^dagger for Hermitian rho and h
            hr = h @ rho
            out += -1j * (hr - hr.conj().T)
        return out

    def diffusion(self, rho: np.ndarray) -> np.ndarray:
        left = self._g_ph[:, :, None] * rho[self._g_perm]
        # rho g = (g rho)^dagger holds exactly for the Hermitian pre-step state
        right = left.conj().transpose(0, 2, 1)
        tr = np.trace(left, axis1=1, axis2=2)
        return self._sqk * (left + right - 2 * tr[:, None, None] * rho[None])

    def controller_step(self, rho, dq, controls) -> np.ndarray:
        """Advance one step driven by the measurement increments ``dq``."""
        innov = dq - 2 * self._sqk * self.expectations(rho) * self.dt
        h = self.hamiltonian(controls)
        new = sde.step(rho, lambda r: self.drift(r, h=h), self.diffusion, innov, self.dt,
                       self.scheme)
        if not np.isfinite(new.sum()):
            raise sde.IntegrationError("non-finite entries in full filter state")
        return renormalize(new)

    def plant_step(self, rho, controls, dw):
        """Emit ``dQ`` from the pre-step state, then advance with that record."""
        dq = 2 * self._sqk * self.expectations(rho) * self.dt + dw
        return self.controller_step(rho, dq, controls), dq

    def syndrome_probabilities(self, rho) -> np.ndarray:
        return np.einsum("aij,ji->a", self.space.projectors, rho).real

    def fidelities(self, rho) -> tuple[float, float]:
        """Codespace fidelity ``Tr[Pi_0 rho]`` and codeword fidelity ``Tr[rho_0 rho]``."""
        return (float(np.einsum("ij,ji->", self._p0, rho).real),
                float(np.einsum("ij,ji->", self._rho0, rho).real))

    def min_eigenvalue(self, rho) -> float:
        return float(np.linalg.eigvalsh(rho)[0])


class FullController:
    """A second copy of the full filter used as the feedback controller's model."""

    tracks_leakage = False

    def __init__(self, filt: FullFilter, policy):
        self.filter = filt
        self.policy_fn = policy
        self.n_controls = filt.n_controls

    def initial_state(self):
        return self.filter.initial_state()

    def policy(self, rho):
        return self.policy_fn(rho)

    def step(self, rho, dq, controls):
        return self.filter.controller_step(rho, dq, controls)
