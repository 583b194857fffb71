import numpy as np
import pytest

from ctqec import sde
from ctqec.codes import five_qubit_code
from ctqec.full_filter import FullFilter, ModelParams
from ctqec.harness import RunConfig, make_controller, make_plant
from ctqec.reduced_filter import NullController
from helpers import GBM_MU, GBM_T, gbm_weak_error, ratio_bounds


def test_zero_dynamics_is_identity():
    x = np.array([1.0, -2.0, 3.5])
    for scheme in sde.SCHEMES:
        out = sde.step(x, lambda v: 0 * v, lambda v: np.zeros((2, 3)), np.array([0.3, -0.1]), 0.1, scheme)
        np.testing.assert_array_equal(out, x)


def test_deterministic_limits():
    a, h = -3.0, 0.01
    x = np.array([2.0])
    euler = sde.step(x, lambda v: a * v, lambda v: np.zeros((1, 1)), np.zeros(1), h, "euler")
    heun = sde.step(x, lambda v: a * v, lambda v: np.zeros((1, 1)), np.zeros(1), h)
    assert euler[0] == pytest.approx(2.0 * (1 + a * h), rel=1e-15)
    assert heun[0] == pytest.approx(2.0 * (1 + a * h + (a * h) ** 2 / 2), rel=1e-15)


def test_noise_term_hook_matches_diffusion():
    rng = np.random.default_rng(0)
    x = rng.normal(size=6)
    mats = rng.normal(size=(3, 6, 6))
    inc = rng.normal(size=3)
    diff = lambda v: np.stack([m @ v for m in mats])
    ref = sde.step(x, lambda v: -v, diff, inc, 0.01)
    hooked = sde.step(x, lambda v: -v, None, inc, 0.01,
                      noise_term=lambda v, dw: np.einsum("k,kij,j->i", dw, mats, v))
    np.testing.assert_allclose(hooked, ref, rtol=1e-14)


def test_unknown_scheme():
    with pytest.raises(ValueError):
        sde.step(np.ones(1), lambda v: v, lambda v: v[None], np.zeros(1), 0.1, "rk4")
    with pytest.raises(ValueError):
        sde.SchemeConfig("rk4")
    with pytest.raises(ValueError):
        sde.SchemeConfig(dt=0)
    assert sde.SchemeConfig(dt=1e-5, t_final=0.25).n_steps == 25_000


def test_gbm_euler_weak_order_one():
    errs = [gbm_weak_error(n, "euler") for n in (8, 16, 32)]
    for coarse, fine in zip(errs, errs[1:]):
        lo, hi = ratio_bounds(coarse, fine)
        # weak order one: halving dt halves the mean error
        assert lo <= 2.0 * 1.15 and hi >= 2.0 / 1.15
    # the bias of Euler on this linear SDE is known exactly
    exact_bias = (1 + GBM_MU / 32) ** 32 - np.exp(GBM_MU * GBM_T)
    assert abs(errs[-1][0] - exact_bias) < 3 * errs[-1][1] + 1e-3


def test_gbm_predictor_corrector_at_least_halves():
    errs = [gbm_weak_error(n, "predictor_corrector") for n in (2, 4, 8)]
    assert abs(errs[0][0]) > 10 * errs[0][1]
    for (mc, sc), (mf, sf) in zip(errs, errs[1:]):
        # |coarse| >= 2 |fine| up to 3 combined standard errors
        assert abs(mc) - 2 * abs(mf) >= -3 * np.hypot(sc, 2 * sf)


def test_seeds_are_stable_and_distinct():
    assert sde.trajectory_seed(0, 3) == sde.trajectory_seed(0, 3)
    seeds = {sde.trajectory_seed(0, i) for i in range(100)}
    assert len(seeds) == 100
    a = sde.NoiseStream(sde.trajectory_seed(5, 1), 4, 1e-5).increments(1000)
    b = sde.NoiseStream(sde.trajectory_seed(5, 1), 4, 1e-5).increments(1000)
    assert np.array_equal(a, b)
    assert a.std() == pytest.approx(np.sqrt(1e-5), rel=0.05)


def test_deterministic_replay():
    cfg = RunConfig(controller="truncated_136", t_final=0.01, stride=50)
    recs = []
    for _ in range(2):
        plant = make_plant(cfg)
        recs.append(sde.co_integrate(plant, make_controller(cfg, plant=plant), cfg.n_steps, 11, cfg.stride))
    a, b = recs
    for name in ("times", "codespace_fidelity", "codeword_fidelity", "controls", "leakage"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name
    assert a.seed == b.seed == 11


def test_noiseless_codespace_is_pinned():
    code = five_qubit_code()
    plant = FullFilter(code, ModelParams(gamma=0.0))
    rec = sde.co_integrate(plant, NullController(15), 500, seed=3, stride=100)
    np.testing.assert_allclose(rec.codespace_fidelity, 1.0, atol=1e-12)
    np.testing.assert_allclose(rec.codeword_fidelity, 1.0, atol=1e-12)


def test_record_sampling_includes_final_step():
    code = five_qubit_code()
    plant = FullFilter(code, ModelParams(gamma=0.0))
    rec = sde.co_integrate(plant, NullController(15), 250, seed=3, stride=100)
    np.testing.assert_allclose(rec.times, [0, 1e-3, 2e-3, 2.5e-3])
    assert rec.controls.shape == (4, 15)


def test_abort_carries_step_and_seed():
    class Exploding(NullController):
        def step(self, state, dq, controls):
            raise sde.IntegrationError("boom")

    code = five_qubit_code()
    plant = FullFilter(code, ModelParams())
    with pytest.raises(sde.IntegrationError) as info:
        sde.co_integrate(plant, Exploding(15), 10, seed=42)
    assert info.value.step == 0 and info.value.seed == 42
