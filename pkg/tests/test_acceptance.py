"""Acceptance suite: one verdict line per criterion, tolerances pinned below.

Ensemble sizes can be raised with CTQEC_ACCEPTANCE_TRAJECTORIES (default 200).
The full run takes roughly an hour on one core; ``-m "not slow"`` skips the
ensemble criteria.
"""

import os

import numpy as np
import pytest

from ctqec import sde
from ctqec.codes import build_syndrome_space, encoded_zero, five_qubit_code
from ctqec.discrete import corrected_fidelity_dense, discrete_codeword_fidelity
from ctqec.full_filter import FullFilter, ModelParams, renormalize
from ctqec.harness import (
    RunConfig,
    benchmark_filters,
    controller_agreement,
    run_ensemble,
    run_trajectory,
    wonham_comparison,
)
from ctqec.pauli import multiply, realize
from ctqec.reduced_filter import (
    ReducedFilter,
    WonhamFilter,
    build_closure,
    truncate_first_level,
    truncate_minimal,
    untruncated_basis,
    wonham_generator,
)
from helpers import gbm_weak_error, random_state, ratio_bounds

WONHAM_TOL = 1e-6
AGREEMENT_RUNS = 3
TRUNC_PER_TRAJ_TOL = 0.02
TRUNC_MEAN_TOL = 0.01
TRUNC_RUNS = 10
N_SIGMA = 3.0
T_DEGRADE = 0.25
T_FEEDBACK = 0.2
DISCRETE_LIMIT_TOL = 1e-6
DISCRETE_ORACLE_TOL = 1e-4
DISCRETE_TIMES = (0.05, 0.1, 0.2, 0.5)
SPEEDUP = 5.0
BENCH_RUNS = 5
GBM_RATIO_SLACK = 1.15
TRACE_TOL = 1e-8
HERMITIAN_TOL = 1e-9
N_TRAJ = int(os.environ.get("CTQEC_ACCEPTANCE_TRAJECTORIES", "200"))

BASE = RunConfig()


def time_average(times, values):
    return np.trapezoid(values, times) / (times[-1] - times[0])


@pytest.fixture(scope="module")
def five():
    return five_qubit_code()


@pytest.fixture(scope="module")
def closure(five):
    return build_closure(five)


@pytest.fixture(scope="module")
def closure1(five):
    return build_closure(five, max_level=1)


@pytest.fixture(scope="module")
def ensemble_136():
    return run_ensemble(BASE.with_(controller="truncated_136", trajectories=N_TRAJ), write=False)


@pytest.fixture(scope="module")
def ensemble_31():
    return run_ensemble(BASE.with_(controller="minimal_31", trajectories=N_TRAJ), write=False)


def ensemble_note(s):
    clips = [r.clip_events for r in s.records]
    return f"{s.n} completed, {len(s.failures)} aborted, clip events per trajectory median {np.median(clips):.0f}"


# --------------------------------------------------------------------------


def test_c01_dimension_counts(verdict, closure, closure1):
    counts = (len(closure), len(truncate_first_level(closure1)), len(truncate_minimal(closure1)),
              closure1.raw_first_level)
    ok = counts == (1024, 136, 31, 480)
    assert verdict(1, "dimension counts", ok,
                   f"closure {counts[0]}, first-level {counts[1]}, minimal {counts[2]}, "
                   f"pre-combining {counts[3]} (want 1024, 136, 31, 480)")


def test_c02_wonham_generator(verdict, five, closure1):
    gamma = 1.0
    want = gamma * (np.ones((16, 16)) - 16 * np.eye(16))
    lam = wonham_generator(five, gamma)
    params = ModelParams(gamma=gamma)
    # syndrome-block drift of the Wonham filter and of the 136 filter, column by column
    wonham = WonhamFilter(five, params)
    w_block = np.column_stack([wonham.drift(e) for e in np.eye(16)])
    f136 = ReducedFilter(truncate_first_level(closure1), params)
    r_block = np.column_stack([f136.drift(e)[:16] for e in np.eye(136)[:16]])
    err = max(np.abs(m - want).max() for m in (lam, w_block, r_block))
    col = np.abs(lam.sum(axis=0)).max()
    ok = err == 0.0 and col == 0.0
    assert verdict(2, "Wonham generator", ok,
                   f"max |block - gamma(1 - 16 delta)| = {err:.1e} over three routes, "
                   f"max |column sum| = {col:.1e} (exact)")


def test_c03_exact_without_feedback(verdict):
    res = wonham_comparison(BASE, 0)
    worst = float(res["max_deviation_per_step"].max())
    ok = len(res["max_deviation_per_step"]) == 25_000 and worst <= WONHAM_TOL
    assert verdict(3, "exactness without feedback", ok,
                   f"max per-step |Tr[P_a rho] - p_a| = {worst:.2e} over "
                   f"{len(res['max_deviation_per_step'])} steps (tol {WONHAM_TOL:g})")


@pytest.mark.slow
def test_c04_untruncated_equivalence(verdict):
    results = [controller_agreement(BASE, i) for i in range(AGREEMENT_RUNS)]
    mism = [r["mismatched_steps"] for r in results]
    acted = [r["steps_with_feedback"] for r in results]
    ok = all(m == 0 for m in mism) and all(r["steps"] == 25_000 for r in results)
    assert verdict(4, "untruncated reduced filter = full filter", ok,
                   f"mismatched control steps {mism} over {AGREEMENT_RUNS} x 25000 steps, "
                   f"steps with feedback {acted} (want all 0 mismatches)")


@pytest.mark.slow
def test_c05_truncation_fidelity(verdict, ensemble_136):
    full = run_ensemble(BASE.with_(controller="full"), range(TRUNC_RUNS), write=False)
    by_seed = {r.seed: r for r in ensemble_136.records}
    pairs = [(r, by_seed[r.seed]) for r in full.records if r.seed in by_seed]
    t = full.times
    per_traj = [time_average(t, np.abs(a.codespace_fidelity - b.codespace_fidelity)) for a, b in pairs]
    mean_full = np.mean([a.codespace_fidelity for a, _ in pairs], axis=0)
    mean_136 = np.mean([b.codespace_fidelity for _, b in pairs], axis=0)
    curve = time_average(t, np.abs(mean_full - mean_136))
    ok = len(pairs) == TRUNC_RUNS and np.mean(per_traj) <= TRUNC_PER_TRAJ_TOL and curve <= TRUNC_MEAN_TOL
    clips = [b.clip_events for _, b in pairs]
    assert verdict(5, "truncation fidelity", ok,
                   f"{len(pairs)} shared seeds, mean time-averaged |dF| = {np.mean(per_traj):.4f} "
                   f"(tol {TRUNC_PER_TRAJ_TOL}), worst {np.max(per_traj):.4f}, mean-curve gap "
                   f"{curve:.4f} (tol {TRUNC_MEAN_TOL}); 136 clip events {clips}")


@pytest.mark.slow
def test_c06_over_truncation(verdict, ensemble_136, ensemble_31):
    a, b = ensemble_136, ensemble_31
    i, j = a.at(T_DEGRADE), b.at(T_DEGRADE)
    gap = a.mean_codespace[i] - b.mean_codespace[j]
    se = float(np.hypot(a.sem_codespace[i], b.sem_codespace[j]))
    ok = min(a.n, b.n) >= 200 and gap > N_SIGMA * se
    assert verdict(6, "over-truncation degrades", ok,
                   f"F_cs(136) - F_cs(31) at gamma t = {T_DEGRADE}: {a.mean_codespace[i]:.4f} - "
                   f"{b.mean_codespace[j]:.4f} = {gap:.4f}, {gap / se:.1f} SE (need > {N_SIGMA:g}); "
                   f"136: {ensemble_note(a)}; 31: {ensemble_note(b)}")


def test_c07_discrete_baseline(verdict, five):
    at_zero = float(discrete_codeword_fidelity(0.0, 1.0))
    late = np.linspace(1.0, 10.0, 91)
    limit_err = float(np.abs(discrete_codeword_fidelity(late, 1.0) - 1 / 64).max())
    rho0 = encoded_zero(five)
    oracle = [corrected_fidelity_dense(rho0, five, 1.0, t) for t in DISCRETE_TIMES]
    closed = [float(discrete_codeword_fidelity(t, 1.0)) for t in DISCRETE_TIMES]
    oracle_err = max(abs(o - c) for o, c in zip(oracle, closed))
    parts = (at_zero == 1.0, limit_err <= DISCRETE_LIMIT_TOL, oracle_err <= DISCRETE_ORACLE_TOL)
    pairs = ", ".join(f"{t}: {c:.4f} vs {o:.4f}" for t, c, o in zip(DISCRETE_TIMES, closed, oracle))
    assert verdict(7, "discrete baseline", all(parts),
                   f"F(0) = {at_zero} [{'ok' if parts[0] else 'fail'}]; max |F - 1/64| for gamma t >= 1 "
                   f"= {limit_err:.2e} (tol {DISCRETE_LIMIT_TOL:g}) [{'ok' if parts[1] else 'fail'}]; "
                   f"closed form vs dense oracle {pairs}, max gap {oracle_err:.3f} "
                   f"(tol {DISCRETE_ORACLE_TOL:g}) [{'ok' if parts[2] else 'fail'}]")


@pytest.mark.slow
def test_c08_feedback_beats_discrete(verdict, ensemble_136):
    s = ensemble_136
    i = s.at(T_FEEDBACK)
    disc = float(discrete_codeword_fidelity(s.times[i], 1.0))
    gap = s.mean_codeword[i] - disc
    ok = s.n >= 200 and gap > N_SIGMA * s.sem_codeword[i]
    assert verdict(8, "feedback beats discrete", ok,
                   f"F_cw(feedback) = {s.mean_codeword[i]:.4f} +- {s.sem_codeword[i]:.4f} vs discrete "
                   f"{disc:.4f} at gamma t = {s.times[i]:.2f}, {gap / s.sem_codeword[i]:.1f} SE "
                   f"(need > {N_SIGMA:g}); {ensemble_note(s)}")


@pytest.mark.slow
def test_c09_speedup(verdict):
    rep = benchmark_filters(BASE, ("full", "truncated_136"), trajectories=BENCH_RUNS)
    ratio = rep["ratio_full_over"]["truncated_136"]
    ok = ratio >= SPEEDUP
    secs = rep["mean_seconds"]
    assert verdict(9, "truncated controller speedup", ok,
                   f"mean controller wall time per {rep['steps']}-step trajectory: full {secs['full']:.2f} s, "
                   f"136 {secs['truncated_136']:.2f} s, ratio {ratio:.2f} (need >= {SPEEDUP:g}) "
                   f"over {rep['trajectories']} replayed records")


def test_c10_sde_engine(verdict):
    errs = [gbm_weak_error(n, "euler") for n in (8, 16, 32)]
    bounds = [ratio_bounds(c, f) for c, f in zip(errs, errs[1:])]
    halves = all(lo <= 2.0 * GBM_RATIO_SLACK and hi >= 2.0 / GBM_RATIO_SLACK for lo, hi in bounds)
    cfg = BASE.with_(controller="truncated_136", t_final=0.02)
    a, b = run_trajectory(cfg, 3), run_trajectory(cfg, 3)
    fields = ("times", "codespace_fidelity", "codeword_fidelity", "controls", "leakage")
    identical = a.seed == b.seed and all(np.array_equal(getattr(a, k), getattr(b, k)) for k in fields)
    ratios = ", ".join(f"{c[0] / f[0]:.2f}" for c, f in zip(errs, errs[1:]))
    assert verdict(10, "SDE engine", halves and identical,
                   f"GBM Euler weak error ratios at dt halving {ratios} (want 2 within x{GBM_RATIO_SLACK} "
                   f"after 3 SE) [{'ok' if halves else 'fail'}]; replay bit-identical "
                   f"[{'ok' if identical else 'fail'}]")


def test_c11_structural(verdict, five, closure):
    space = build_syndrome_space(five)
    proj = np.array(space.projectors)
    gram = np.einsum("aij,bji->ab", proj, proj).real
    ortho = np.abs(proj[:, None] @ proj[None] - (np.eye(16)[:, :, None, None] * proj[:, None])).max()
    complete = np.abs(proj.sum(axis=0) - np.eye(32)).max()
    dims_ok = np.allclose(np.diag(gram), 2)

    rho0 = encoded_zero(five)
    rng = np.random.default_rng(0)
    recovered = 0
    for e in five.error_set:
        net = realize(multiply(five.recover(five.syndrome(e)), e))
        # net acts on the codespace as a stabilizer element: +-P0 up to phase
        back = net @ rho0 @ net.conj().T
        recovered += abs(np.trace(rho0 @ back).real - 1) < 1e-12 and \
            np.allclose(net @ proj[0] @ net.conj().T, proj[0], atol=1e-12)

    basis = untruncated_basis(five, closure)
    rho = random_state(32, rng)
    y = basis.project(rho)
    noise = [realize(e) for e in five.error_set]
    gens = [realize(g) for g in five.generators]
    chans = [realize(c) for c in basis.channels]
    checks = [(sum(s @ rho @ s - rho for s in noise), basis.noise @ y),
              (sum(g @ rho @ g - rho for g in gens), basis.meas_drift @ y)]
    checks += [(g @ rho + rho @ g, m @ y) for g, m in zip(gens, basis.meas)]
    checks += [(-1j * (c @ rho - rho @ c), f @ y) for c, f in zip(chans, basis.fb)]
    gen_err = max(np.abs(basis.project(dense) - sym).max() for dense, sym in checks)

    f = FullFilter(five, ModelParams())
    state = f.initial_state()
    worst_tr = worst_h = 0.0
    for _ in range(300):
        u = rng.choice([-200.0, 200.0], 15)
        h = f.hamiltonian(u)
        raw = sde.step(state, lambda r: f.drift(r, h=h), f.diffusion, rng.normal(0, np.sqrt(f.dt), 4), f.dt)
        worst_tr = max(worst_tr, abs(np.trace(raw) - 1))
        worst_h = max(worst_h, np.abs(raw - raw.conj().T).max())
        state = renormalize(raw)

    ok = (ortho < 1e-12 and complete < 1e-12 and dims_ok and recovered == 15 and gen_err < 1e-12
          and worst_tr <= TRACE_TOL and worst_h <= HERMITIAN_TOL)
    assert verdict(11, "structural properties", ok,
                   f"projector orthogonality {ortho:.1e}, completeness {complete:.1e}, rank-2 {dims_ok}; "
                   f"recoveries correct {recovered}/15; symbolic vs dense generators {gen_err:.1e} "
                   f"({len(checks)} maps); per-step |Tr - 1| {worst_tr:.1e} (tol {TRACE_TOL:g}), "
                   f"Hermiticity {worst_h:.1e} (tol {HERMITIAN_TOL:g})")
