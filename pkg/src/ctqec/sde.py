"""Seeded Wiener increments, Euler-Maruyama / predictor-corrector steppers and
the plant-controller co-integration loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

SCHEMES = ("euler", "predictor_corrector")


class IntegrationError(RuntimeError):
    """A trajectory produced non-finite values or lost normalization."""

    def __init__(self, message, step=None, seed=None):
        super().__init__(message)
        self.step = step
        self.seed = seed


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str = "predictor_corrector"
    dt: float = 1e-5
    t_final: float = 0.25

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_final >= self.dt:
            raise ValueError("t_final must be at least one step")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


def trajectory_seed(base_seed: int, index: int) -> int:
    """64-bit seed of trajectory ``index``, independent of scheduling order."""
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class NoiseStream:
    """Independent Gaussian increments with variance ``dt`` on ``channels`` channels."""

    def __init__(self, seed: int, channels: int, dt: float):
        self.seed = int(seed)
        self.channels = channels
        self.dt = dt
        self._rng = np.random.default_rng(self.seed)

    def increments(self, n_steps: int) -> np.ndarray:
        return self._rng.normal(0.0, np.sqrt(self.dt), size=(n_steps, self.channels))


def step(x, drift, diffusion, increments, dt, scheme="predictor_corrector", noise_term=None):
    """Advance ``x`` one step of ``dx = a(x) dt + sum_k b_k(x) dW_k``.

    ``diffusion(x)`` returns the stacked ``b_k(x)`` along a new leading axis.
    A caller that can form ``sum_k b_k(x) dW_k`` more cheaply may pass it as
    ``noise_term(x, increments)`` instead (``diffusion`` is then unused).
    The predictor-corrector variant averages the drift over the start point and
    an Euler predictor; the diffusion stays at the start point.
    """
    a = drift(x)
    if noise_term is not None:
        noise = noise_term(x, increments)
    else:
        b = diffusion(x)
        noise = (increments @ b.reshape(len(b), -1)).reshape(x.shape)
    if scheme == "euler":
        return x + a * dt + noise
    if scheme != "predictor_corrector":
        raise ValueError(f"unknown scheme {scheme!r}")
    predicted = x + a * dt + noise
    return x + 0.5 * (a + drift(predicted)) * dt + noise


@dataclass
class TrajectoryRecord:
    """Sampled output of one closed-loop trajectory."""

    seed: int
    times: np.ndarray
    codespace_fidelity: np.ndarray
    codeword_fidelity: np.ndarray
    controls: np.ndarray
    controller: str = ""
    wall_time: float = 0.0
    controller_time: float = 0.0
    min_eigenvalue: float = 0.0
    leakage: np.ndarray | None = field(default=None, repr=False)
    clip_events: int = 0


def co_integrate(plant, controller, n_steps, seed, stride=100, label=""):
    """Run ``plant`` in closed loop with ``controller``.

    Each step: controls from the controller's current state, the plant emits
    its measurement increments and advances, then the controller consumes
    those increments.  Samples are taken every ``stride`` steps and at the
    final step.
    """
    noise = NoiseStream(seed, plant.n_channels, plant.dt).increments(n_steps)
    rho = plant.initial_state()
    state = controller.initial_state()
    n_samples = n_steps // stride + 1
    times = np.zeros(n_samples)
    codespace = np.zeros(n_samples)
    codeword = np.zeros(n_samples)
    controls_out = np.zeros((n_samples, controller.n_controls))
    leak = np.zeros(n_samples) if getattr(controller, "tracks_leakage", False) else None
    min_eig = 0.0

    def sample(i, k, u):
        nonlocal min_eig
        times[i] = k * plant.dt
        codespace[i], codeword[i] = plant.fidelities(rho)
        controls_out[i] = u
        min_eig = min(min_eig, plant.min_eigenvalue(rho))
        if leak is not None:
            leak[i] = controller.leakage(state)

    t0 = time.perf_counter()
    ctrl_time = 0.0
    u = controller.policy(state)
    sample(0, 0, u)
    for k in range(n_steps):
        c0 = time.perf_counter()
        u = controller.policy(state)
        ctrl_time += time.perf_counter() - c0
        try:
            rho, dq = plant.plant_step(rho, u, noise[k])
            c0 = time.perf_counter()
            state = controller.step(state, dq, u)
            ctrl_time += time.perf_counter() - c0
        except IntegrationError as err:
            err.step, err.seed = k, seed
            raise
        if (k + 1) % stride == 0:
            sample((k + 1) // stride, k + 1, u)
    if n_steps % stride:
        times = np.append(times, n_steps * plant.dt)
        cs, cw = plant.fidelities(rho)
        codespace = np.append(codespace, cs)
        codeword = np.append(codeword, cw)
        controls_out = np.vstack([controls_out, u])
        if leak is not None:
            leak = np.append(leak, controller.leakage(state))
    if min_eig < -1e-6:
        log.warning("trajectory %d: plant state min eigenvalue %.3g", seed, min_eig)
    return TrajectoryRecord(
        seed=seed,
        times=times,
        codespace_fidelity=codespace,
        codeword_fidelity=codeword,
        controls=controls_out,
        controller=label,
        wall_time=time.perf_counter() - t0,
        controller_time=ctrl_time,
        min_eigenvalue=min_eig,
        leakage=leak,
        clip_events=getattr(controller, "clip_events", 0),
    )
