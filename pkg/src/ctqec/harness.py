"""Run configurations, trajectory ensembles, comparisons and timing."""

from __future__ import annotations

import csv
import dataclasses
import functools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import sde
from .codes import CodeSpec, build_syndrome_space, five_qubit_code, load_code
from .discrete import discrete_codeword_fidelity
from .feedback import FullPolicy, ReducedPolicy
from .full_filter import FullController, FullFilter, ModelParams
from .reduced_filter import (
    NullController,
    ReducedController,
    ReducedFilter,
    WonhamController,
    WonhamFilter,
    build_closure,
    truncate_first_level,
    truncate_minimal,
    untruncated_basis,
)

log = logging.getLogger(__name__)

CONTROLLERS = ("full", "truncated_136", "untruncated_1024", "minimal_31", "wonham_no_feedback", "none")
FIVE_QUBIT_ONLY = ("minimal_31",)
TRUNCATED = ("truncated_136", "minimal_31")
POSITIVITY = ("clip", "none")


class EnsembleError(RuntimeError):
    """Some trajectories aborted."""

    def __init__(self, failures):
        seeds = ", ".join(str(f["seed"]) for f in failures)
        super().__init__(f"{len(failures)} trajectories aborted (seeds: {seeds})")
        self.failures = failures


@dataclass(frozen=True)
class RunConfig:
    code: str = "five-qubit"
    controller: str = "truncated_136"
    gamma: float = 1.0
    kappa: float = 100.0
    lambda_max: float = 200.0
    dt: float = 1e-5
    t_final: float = 0.25
    trajectories: int = 10
    seed: int = 0
    stride: int = 100
    out: str | None = None
    workers: int = 1
    scheme: str = "predictor_corrector"
    tie: int = 1
    deadband: float = 1e-12
    positivity: str = "clip"
    allow_partial: bool = False

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller!r}; choose from {CONTROLLERS}")
        for name in ("gamma", "kappa", "lambda_max", "deadband"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("dt", "t_final"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("trajectories", "stride", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.tie not in (-1, 0, 1):
            raise ValueError("tie must be -1, 0 or +1")
        if self.positivity not in POSITIVITY:
            raise ValueError(f"positivity must be one of {POSITIVITY}")
        sde.SchemeConfig(self.scheme, self.dt, self.t_final)

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.gamma, self.kappa, self.lambda_max, self.dt)

    @property
    def n_steps(self) -> int:
        return sde.SchemeConfig(self.scheme, self.dt, self.t_final).n_steps

    def with_(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def parse_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def _coerce(key, value: str):
    kind = _FIELD_TYPES[key]
    if "bool" in kind:
        return value.lower() in ("1", "true", "yes", "on")
    if "int" in kind:
        return int(value)
    if "float" in kind:
        return float(value)
    return value


def check_compatible(config: RunConfig, code: CodeSpec) -> None:
    if config.controller in FIVE_QUBIT_ONLY:
        ref = five_qubit_code()
        if code.generators != ref.generators:
            raise ValueError(f"controller {config.controller} needs the five-qubit code")


# --------------------------------------------------------------------------
# building plants and controllers (cached per process)


@functools.lru_cache(maxsize=8)
def _load(code_name: str) -> CodeSpec:
    return load_code(code_name)


@functools.lru_cache(maxsize=8)
def _space(code_name: str):
    return build_syndrome_space(_load(code_name))


@functools.lru_cache(maxsize=8)
def _basis(code_name: str, kind: str):
    code = _load(code_name)
    if kind == "untruncated_1024":
        return untruncated_basis(code, build_closure(code, space=_space(code_name)))
    cl = build_closure(code, max_level=1, space=_space(code_name))
    if kind == "truncated_136":
        return truncate_first_level(cl)
    if kind == "minimal_31":
        return truncate_minimal(cl)
    raise ValueError(kind)


def make_plant(config: RunConfig) -> FullFilter:
    return FullFilter(_load(config.code), config.params, config.scheme, space=_space(config.code))


def make_controller(config: RunConfig, kind: str | None = None, plant: FullFilter | None = None):
    kind = config.controller if kind is None else kind
    code = _load(config.code)
    check_compatible(config.with_(controller=kind), code)
    params = config.params
    if kind == "full":
        filt = plant if plant is not None else make_plant(config)
        policy = FullPolicy(code, params.lambda_max, config.tie, config.deadband, p0=filt.space.projectors[0])
        return FullController(FullFilter(code, params, config.scheme, space=filt.space), policy)
    if kind in ("truncated_136", "untruncated_1024", "minimal_31"):
        basis = _basis(config.code, kind)
        policy = ReducedPolicy(basis, params.lambda_max, config.tie, config.deadband)
        # the untruncated basis is exact, so it never needs the simplex guard
        clip = kind in TRUNCATED and config.positivity == "clip"
        return ReducedController(ReducedFilter(basis, params, config.scheme, clip), policy)
    n_controls = len(code.error_set)
    if kind == "wonham_no_feedback":
        return WonhamController(WonhamFilter(code, params, config.scheme, _space(config.code)), n_controls)
    return NullController(n_controls)


def run_trajectory(config: RunConfig, index: int) -> sde.TrajectoryRecord:
    plant = make_plant(config)
    ctrl = make_controller(config, plant=plant)
    seed = sde.trajectory_seed(config.seed, index)
    return sde.co_integrate(plant, ctrl, config.n_steps, seed, config.stride, label=config.controller)


def _run_one(args):
    config, index = args
    try:
        return index, run_trajectory(config, index), None
    except sde.IntegrationError as err:
        return index, None, {"index": index, "seed": err.seed, "step": err.step, "error": str(err)}


# --------------------------------------------------------------------------
# ensembles


@dataclass
class EnsembleSummary:
    config: RunConfig
    times: np.ndarray
    mean_codespace: np.ndarray
    sem_codespace: np.ndarray
    mean_codeword: np.ndarray
    sem_codeword: np.ndarray
    seeds: list
    wall_times: np.ndarray
    controller_times: np.ndarray
    records: list = field(default_factory=list, repr=False)
    failures: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.records)

    def at(self, t: float) -> int:
        """Index of the sample time closest to ``t``."""
        return int(np.argmin(np.abs(self.times - t)))

    def raise_for_failures(self):
        if self.failures:
            raise EnsembleError(self.failures)


def _mean_sem(stack: np.ndarray):
    mean = stack.mean(axis=0)
    if len(stack) < 2:
        return mean, np.zeros_like(mean)
    return mean, stack.std(axis=0, ddof=1) / np.sqrt(len(stack))


def summarize(config: RunConfig, records, failures=()) -> EnsembleSummary:
    if not records:
        raise EnsembleError(list(failures) or [{"seed": "-", "error": "no trajectories"}])
    cs = np.array([r.codespace_fidelity for r in records])
    cw = np.array([r.codeword_fidelity for r in records])
    mcs, scs = _mean_sem(cs)
    mcw, scw = _mean_sem(cw)
    return EnsembleSummary(
        config=config,
        times=records[0].times,
        mean_codespace=mcs,
        sem_codespace=scs,
        mean_codeword=mcw,
        sem_codeword=scw,
        seeds=[r.seed for r in records],
        wall_times=np.array([r.wall_time for r in records]),
        controller_times=np.array([r.controller_time for r in records]),
        records=list(records),
        failures=list(failures),
    )


def run_ensemble(config: RunConfig, indices=None, write=True) -> EnsembleSummary:
    """Run trajectories ``indices`` (default ``range(config.trajectories)``).

    Results are reduced in index order whatever order workers finish in.
    """
    indices = list(range(config.trajectories)) if indices is None else list(indices)
    check_compatible(config, _load(config.code))
    jobs = [(config, i) for i in indices]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    records = [r for _, r, _ in results if r is not None]
    failures = [f for _, _, f in results if f is not None]
    for f in failures:
        log.error("trajectory %d (seed %s) aborted at step %s: %s",
                  f["index"], f["seed"], f["step"], f["error"])
    summary = summarize(config, records, failures)
    if write and config.out:
        write_ensemble(summary, config.out)
    return summary


AGGREGATE_COLUMNS = ("time", "mean_codespace_fidelity", "sem_codespace_fidelity",
                     "mean_codeword_fidelity", "sem_codeword_fidelity")
TRAJECTORY_COLUMNS = ("trajectory", "seed", "time", "codespace_fidelity", "codeword_fidelity")


def write_ensemble(summary: EnsembleSummary, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(AGGREGATE_COLUMNS)
        for row in zip(summary.times, summary.mean_codespace, summary.sem_codespace,
                       summary.mean_codeword, summary.sem_codeword):
            w.writerow([repr(float(v)) for v in row])
    with open(out / "trajectories.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for i, rec in enumerate(summary.records):
            for t, cs, cw in zip(rec.times, rec.codespace_fidelity, rec.codeword_fidelity):
                w.writerow([i, rec.seed, repr(float(t)), repr(float(cs)), repr(float(cw))])
    meta = {
        "config": summary.config.to_dict(),
        "seeds": [str(s) for s in summary.seeds],
        "wall_time_per_trajectory": summary.wall_times.tolist(),
        "controller_time_per_trajectory": summary.controller_times.tolist(),
        "clip_events_per_trajectory": [r.clip_events for r in summary.records],
        "min_plant_eigenvalue_per_trajectory": [r.min_eigenvalue for r in summary.records],
        "failures": summary.failures,
    }
    (out / "summary.json").write_text(json.dumps(meta, indent=2) + "\n")
    return out


def read_aggregate(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {name: np.array([float(r[i]) for r in body]) for i, name in enumerate(header)}


# --------------------------------------------------------------------------
# experiment recipes


def run_comparison(config: RunConfig, summary: EnsembleSummary | None = None) -> dict:
    """Mean feedback codeword fidelity next to the discrete-correction baseline."""
    if _load(config.code).n != 5:
        raise ValueError("the discrete baseline is defined for the five-qubit code")
    if summary is None:
        summary = run_ensemble(config, write=False)
    table = {
        "time": summary.times,
        "mean_codeword_fidelity_feedback": summary.mean_codeword,
        "sem_codeword_fidelity_feedback": summary.sem_codeword,
        "codeword_fidelity_discrete": discrete_codeword_fidelity(summary.times, config.gamma),
    }
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_table(out / "comparison.csv", table)
    return table


def _write_table(path, table: dict):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(table))
        for row in zip(*table.values()):
            w.writerow([repr(float(v)) for v in row])


def record_measurements(config: RunConfig, index: int, kind: str = "truncated_136"):
    """Closed-loop run that keeps every ``dQ`` increment for later replay."""
    plant = make_plant(config)
    ctrl = make_controller(config, kind, plant=plant)
    seed = sde.trajectory_seed(config.seed, index)
    noise = sde.NoiseStream(seed, plant.n_channels, plant.dt).increments(config.n_steps)
    rho, state = plant.initial_state(), ctrl.initial_state()
    dqs = np.empty_like(noise)
    for k in range(config.n_steps):
        u = ctrl.policy(state)
        rho, dqs[k] = plant.plant_step(rho, u, noise[k])
        state = ctrl.step(state, dqs[k], u)
    return dqs


def replay_controller(ctrl, dqs) -> float:
    """Wall time of a controller alone (policy plus filter step) over a recorded stream."""
    state = ctrl.initial_state()
    t0 = time.perf_counter()
    for dq in dqs:
        u = ctrl.policy(state)
        state = ctrl.step(state, dq, u)
    return time.perf_counter() - t0


def benchmark_filters(config: RunConfig, kinds=("full", "truncated_136"), trajectories: int | None = None,
                      source: str = "truncated_136") -> dict:
    """Mean wall time per trajectory of each controller kind replayed on shared records."""
    n = max(5, config.trajectories if trajectories is None else trajectories)
    times = {k: [] for k in kinds}
    for i in range(n):
        dqs = record_measurements(config, i, source)
        for k in kinds:
            ctrl = make_controller(config, k)
            times[k].append(replay_controller(ctrl, dqs))
    report = {
        "trajectories": n,
        "steps": config.n_steps,
        "mean_seconds": {k: float(np.mean(v)) for k, v in times.items()},
        "seconds": {k: [float(x) for x in v] for k, v in times.items()},
    }
    if "full" in kinds:
        for k in kinds:
            if k != "full":
                report.setdefault("ratio_full_over", {})[k] = \
                    report["mean_seconds"]["full"] / report["mean_seconds"][k]
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


def wonham_comparison(config: RunConfig, index: int = 0) -> dict:
    """Open-loop plant with a Wonham filter on the same ``dQ``; per-step deviation."""
    plant = make_plant(config)
    wf = WonhamFilter(_load(config.code), config.params, config.scheme, plant.space)
    seed = sde.trajectory_seed(config.seed, index)
    noise = sde.NoiseStream(seed, plant.n_channels, plant.dt).increments(config.n_steps)
    rho, p = plant.initial_state(), wf.initial_state()
    zero = np.zeros(plant.n_controls)
    worst = np.zeros(config.n_steps)
    samples = {"time": [0.0], "wonham_codespace": [p[0]], "full_codespace": [1.0]}
    for k in range(config.n_steps):
        rho, dq = plant.plant_step(rho, zero, noise[k])
        p = wf.step(p, dq)
        worst[k] = np.abs(plant.syndrome_probabilities(rho) - p).max()
        if (k + 1) % config.stride == 0:
            samples["time"].append((k + 1) * config.dt)
            samples["wonham_codespace"].append(p[0])
            samples["full_codespace"].append(plant.syndrome_probabilities(rho)[0])
    out = {"seed": seed, "max_deviation_per_step": worst, **{k: np.array(v) for k, v in samples.items()}}
    if config.out:
        path = Path(config.out)
        path.mkdir(parents=True, exist_ok=True)
        _write_table(path / "wonham.csv", {k: out[k] for k in ("time", "wonham_codespace", "full_codespace")})
    return out


def controller_agreement(config: RunConfig, index: int, reference: str = "full",
                         shadow: str = "untruncated_1024") -> dict:
    """Close the loop with ``reference`` while ``shadow`` runs on the same ``dQ``.

    Counts steps where the two policies differ.  When they never differ, the
    closed loop under ``shadow`` is the same trajectory.
    """
    plant = make_plant(config)
    ref = make_controller(config, reference, plant=plant)
    sh = make_controller(config, shadow, plant=plant)
    seed = sde.trajectory_seed(config.seed, index)
    noise = sde.NoiseStream(seed, plant.n_channels, plant.dt).increments(config.n_steps)
    rho, a, b = plant.initial_state(), ref.initial_state(), sh.initial_state()
    mismatched_steps = 0
    active = 0
    for k in range(config.n_steps):
        u = ref.policy(a)
        v = sh.policy(b)
        if not np.array_equal(u, v):
            mismatched_steps += 1
        active += bool(np.any(u))
        rho, dq = plant.plant_step(rho, u, noise[k])
        a = ref.step(a, dq, u)
        b = sh.step(b, dq, u)
    return {"seed": seed, "steps": config.n_steps, "mismatched_steps": mismatched_steps,
            "steps_with_feedback": active}
