"""Run configuration, deterministic closed-loop runs, parameter sweeps."""
from __future__ import annotations

import configparser
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .attack import AttackSupport, GeneratorConfig, MovingHorizonAttacker, dump_record
from .baselines import (EigenvalueAttacker, generalized_stealth_attack, range_space_attack,
                        static_t1_attack)
from .errors import ConfigError
from .estimators import BddDetector, MheEstimator
from .grid import build_grid_plant, default_ieee14, read_topology
from .plant import NoiseModel, PlantModel, build_horizon
from .trace import SimTrace, export
from .vehicle import PATHS, VehicleParams, VehicleRunConfig, run_vehicle_scenario

log = logging.getLogger(__name__)

SCENARIOS = ("grid", "synthetic", "vehicle")
ATTACKS = ("mh", "eig", "range", "gstealth", "static", "none")
SWEEP_PARAMS = ("M", "support_size", "lambda0", "T")
GRID_SUPPORT = (1, 2, 9, 11, 12, 16, 17)


@dataclass
class RunConfig:
    scenario: str = "grid"
    attack: str = "mh"
    seed: int = 0
    duration: float | None = None
    attack_start: float | None = None
    Ts: float = 0.01
    T: int = 20
    epsilon_i: float = 0.03176
    epsilon_v: float = 0.0
    noise: str = "none"
    lambda0: float = 1e-4
    M: int = 2000
    tau: float = 1e-6
    budget: str = "quadrature"
    early_stop: bool = True
    support: tuple = GRID_SUPPORT
    bias: tuple = ()
    topology: str = ""
    n: int = 4
    m: int = 6
    path: str = "line"
    speed: float = 0.3
    epsilon: float = 1.0
    out: str = "results"
    format: str = "csv"
    gzip: bool = False
    dump: bool = False

    def __post_init__(self):
        self.support = tuple(int(c) for c in self.support)
        self.bias = tuple(float(b) for b in self.bias)
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.attack not in ATTACKS:
            raise ConfigError(f"unknown attack {self.attack!r}; choose from {ATTACKS}")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if self.Ts <= 0 or self.T < 1:
            raise ConfigError("need Ts > 0 and T >= 1")
        if self.scenario == "vehicle":
            if self.path not in PATHS:
                raise ConfigError(f"unknown path {self.path!r}")
            return
        if self.attack_start is None:
            self.attack_start = 1.8
        if self.duration is None:
            self.duration = 10.0
        if not self.duration > self.attack_start >= self.T * self.Ts - 1e-12:
            raise ConfigError("need duration > attack_start >= T * Ts")
        if self.epsilon_i <= 0:
            raise ConfigError("epsilon_i must be positive")

    @property
    def delta(self) -> float:
        """Window detector threshold ``T * epsilon_i``."""
        return self.T * self.epsilon_i

    @property
    def steps(self) -> int:
        return int(math.ceil(self.duration / self.Ts - 1e-9))

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(epsilon=self.delta, epsilon_v=self.epsilon_v, lambda0=self.lambda0, M=self.M,
                               tau=self.tau, early_stop=self.early_stop, budget=self.budget)

    def to_meta(self) -> dict:
        d = asdict(self)
        for k in ("out", "format", "gzip", "dump"):
            d.pop(k)
        return d


# INI layout: section -> keys it may hold. Unknown keys are rejected.
_SECTIONS = {
    "run": ("scenario", "attack", "seed", "duration", "attack_start", "out", "format", "gzip", "dump"),
    "model": ("Ts", "T", "epsilon_i", "epsilon_v", "noise", "topology", "n", "m"),
    "attack": ("lambda0", "M", "tau", "budget", "early_stop", "support", "bias"),
    "vehicle": ("path", "speed", "epsilon"),
}


def _coerce(name: str, raw: str):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind in ("float", "float | None"):
            return float(raw)
        if kind == "tuple":
            return tuple(t for t in (s.strip() for s in raw.split(",")) if t)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read an INI run file (sections run/model/attack/vehicle); ``overrides`` win."""
    values: dict = {}
    if path is not None:
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        cp.optionxform = str
        try:
            if not cp.read(path):
                raise ConfigError(f"cannot read config file {path}")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for sec in cp.sections():
            if sec not in _SECTIONS:
                raise ConfigError(f"{path}: unknown section [{sec}]")
            for key, raw in cp[sec].items():
                if key not in _SECTIONS[sec]:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{sec}]")
                values[key] = _coerce(key, raw)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in {f.name for f in fields(RunConfig)}:
            raise ConfigError(f"unknown setting {key!r}")
        values[key] = _coerce(key, val) if isinstance(val, str) else val
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------
# scenario construction
# --------------------------------------------------------------------------

def synthetic_plant(n: int, m: int, seed: int) -> PlantModel:
    """Rotation scaled to spectral radius 0.95 with a Gaussian output map."""
    if not 1 <= n <= m:
        raise ConfigError("synthetic plant needs 1 <= n <= m")
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    Q = Q * np.sign(np.diag(R))
    return PlantModel(A=0.95 * Q, C=rng.standard_normal((m, n)), require_stable=True)


def build_plant(cfg: RunConfig) -> PlantModel:
    if cfg.scenario == "grid":
        topo = read_topology(cfg.topology) if cfg.topology else default_ieee14()
        return build_grid_plant(topo, Ts=cfg.Ts, epsilon_v=cfg.epsilon_v).plant
    if cfg.scenario == "synthetic":
        return synthetic_plant(cfg.n, cfg.m, cfg.seed)
    raise ConfigError(f"{cfg.scenario} has no LTI plant")


def _bias(cfg: RunConfig, n: int) -> np.ndarray:
    if cfg.bias:
        if len(cfg.bias) != n:
            raise ConfigError(f"bias needs {n} entries")
        return np.array(cfg.bias)
    return np.ones(n) / math.sqrt(n)


# --------------------------------------------------------------------------
# the LTI closed loop (grid and synthetic scenarios)
# --------------------------------------------------------------------------

def lti_columns(n: int, m: int) -> tuple[str, ...]:
    return (("t",) + tuple(f"x{i + 1}" for i in range(n)) + tuple(f"xhat{i + 1}" for i in range(n))
            + tuple(f"e{i + 1}" for i in range(m))
            + ("alpha_design", "alpha_measured", "residual", "alarm", "feasible"))


def run_lti(cfg: RunConfig, dump_sink: list | None = None) -> SimTrace:
    plant = build_plant(cfg)
    n, m, T = plant.n, plant.m, cfg.T
    horizon = build_horizon(plant, T)
    est = MheEstimator(horizon)
    det = BddDetector(horizon, cfg.delta)
    support = AttackSupport(cfg.support, m)
    rng = np.random.default_rng(cfg.seed)
    x = 0.1 * rng.standard_normal(n)
    noise = NoiseModel(cfg.noise if cfg.epsilon_v > 0 else "none", cfg.epsilon_v, seed=cfg.seed + 1)

    gen = cfg.generator_config() if cfg.attack in ("mh", "eig", "static") else None
    attacker = None
    static_e = None
    if cfg.attack == "mh":
        attacker = MovingHorizonAttacker(horizon, support, gen)
    elif cfg.attack == "eig":
        attacker = EigenvalueAttacker(horizon, support, gen.eps_tilde)
    elif cfg.attack == "static":
        res = static_t1_attack(plant, support, cfg.epsilon_i,
                               replace(gen, epsilon=cfg.epsilon_i, epsilon_v=cfg.epsilon_v / math.sqrt(T)))
        static_e = res.e_i
    elif cfg.attack == "range":
        static_e = range_space_attack(plant.C, _bias(cfg, n))
    elif cfg.attack == "gstealth":
        static_e = generalized_stealth_attack(plant.C, cfg.delta / T, _bias(cfg, n))

    k_attack = int(round(cfg.attack_start / cfg.Ts))
    y_clean: list[np.ndarray] = []
    e_hist: list[np.ndarray] = []
    trace = SimTrace(lti_columns(n, m), meta={**cfg.to_meta(), "delta": cfg.delta, "n": n, "m": m})
    nan_n = [float("nan")] * n
    for k in range(cfg.steps):
        t = k * cfg.Ts
        yc = plant.measure(x) + noise.sample_step(m, T)
        e = np.zeros(m)
        alpha_d = 0.0
        feasible = 1.0
        if k >= k_attack and cfg.attack != "none":
            if attacker is not None:
                r = attacker.step()
                e, alpha_d, feasible = r.e_i, r.alpha, float(r.feasible)
                if dump_sink is not None and cfg.attack == "mh":
                    dump_sink.append({"step": k, **dump_record(attacker.last_workspace, r)})
            else:
                e = static_e
        y_clean.append(yc)
        e_hist.append(e)
        if len(y_clean) > T:
            y_clean.pop(0)
            e_hist.pop(0)
        if len(y_clean) == T:
            yI = np.concatenate(y_clean)
            eI = np.concatenate(e_hist)
            xh_clean = est.estimate(yI)
            xh = est.estimate(yI + eI)
            alpha_m = float(np.linalg.norm(xh - xh_clean))
            residual, alarm = det.check(yI + eI)
            if attacker is None:
                alpha_d = alpha_m
            row_est = list(xh)
        else:
            row_est, alpha_m, residual, alarm = nan_n, float("nan"), float("nan"), False
        trace.append([t, *x, *row_est, *e, alpha_d, alpha_m, residual, float(alarm), feasible])
        x = plant.step(x)
    return trace


def run(cfg: RunConfig, write: bool = False) -> SimTrace:
    """Run one scenario; optionally write ``<out>/trace.<fmt>`` (plus ``dump.jsonl``)."""
    dump_sink: list | None = [] if cfg.dump else None
    if cfg.scenario == "vehicle":
        if cfg.attack not in ("mh", "eig", "none"):
            raise ConfigError("vehicle scenario supports attacks mh, eig, none")
        vcfg = VehicleRunConfig(
            path=cfg.path, attack=cfg.attack, attack_start=cfg.attack_start,
            duration=cfg.duration, epsilon=cfg.epsilon, lambda0=cfg.lambda0, M=cfg.M, speed=cfg.speed, seed=cfg.seed,
            epsilon_v=cfg.epsilon_v if cfg.epsilon_v > 0 else 0.5, params=VehicleParams(Ts=cfg.Ts))
        trace = run_vehicle_scenario(vcfg)
    else:
        trace = run_lti(cfg, dump_sink)
    if write:
        out = Path(cfg.out)
        export(trace, out / f"trace.{cfg.format}", cfg.format, cfg.gzip)
        if dump_sink:
            with open(out / "dump.jsonl", "w") as fh:
                for rec in dump_sink:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return trace


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple
    reps: int = 20
    support_size: int | None = None

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise ConfigError(f"cannot sweep {self.param!r}; choose from {SWEEP_PARAMS}")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if not self.values:
            raise ConfigError("sweep needs at least one value")


SUMMARY_COLUMNS = ("value", "reps", "eff_mean", "eff_min", "eff_q25", "eff_median", "eff_q75", "eff_max",
                   "stealth_mean", "stealth_max", "alarms", "infeasible_windows")


@dataclass(frozen=True)
class RepOutcome:
    effectiveness: float
    stealthiness: float
    alarms: int
    infeasible: int


def random_support(m: int, k: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Uniform over the m-choose-k subsets."""
    if not 1 <= k <= m:
        raise ConfigError(f"support size must lie in 1..{m}")
    return tuple(sorted(int(c) + 1 for c in rng.choice(m, size=k, replace=False)))


def rep_config(base: RunConfig, spec: SweepSpec, value, rep: int) -> RunConfig:
    """Configuration of one repetition; the support draw depends only on ``(base.seed, rep)``."""
    rng = np.random.default_rng([base.seed, rep])
    m = build_plant(base).m
    size = spec.support_size or len(base.support)
    changes = {"seed": base.seed + rep}
    if spec.param == "support_size":
        # one draw per (rep, size): reseed with the size so cells are independent
        rng = np.random.default_rng([base.seed, rep, int(value)])
        changes["support"] = random_support(m, int(value), rng)
    else:
        changes["support"] = random_support(m, size, rng)
        changes[spec.param] = type(getattr(base, spec.param))(value)
    return replace(base, **changes)


def evaluate_rep(cfg: RunConfig) -> RepOutcome:
    """Per-rep metrics over the attack interval: mean measured effectiveness, max residual."""
    tr = run(cfg)
    t = tr.column("t")
    on = t >= cfg.attack_start - 1e-12
    alpha = tr.column("alpha_measured")[on]
    res = tr.column("residual")[on]
    return RepOutcome(float(np.mean(alpha)), float(np.max(res)), int(np.sum(tr.column("alarm")[on])),
                      int(np.sum(tr.column("feasible")[on] == 0)))


def worker_count() -> int:
    raw = os.environ.get("MHFDIA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"MHFDIA_THREADS must be an integer, got {raw!r}") from None


def sweep(spec: SweepSpec, base: RunConfig, workers: int | None = None) -> tuple[SimTrace, dict]:
    """Aggregate repetitions per swept value; returns (summary table, raw outcomes)."""
    if base.scenario == "vehicle":
        raise ConfigError("sweeps run on the grid or synthetic scenarios")
    jobs = [(v, r, rep_config(base, spec, v, r)) for v in spec.values for r in range(spec.reps)]
    workers = worker_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(evaluate_rep, [j[2] for j in jobs]))
    else:
        outcomes = [evaluate_rep(j[2]) for j in jobs]
    raw: dict = {}
    for (v, _, _), o in zip(jobs, outcomes):
        raw.setdefault(v, []).append(o)
    table = SimTrace(SUMMARY_COLUMNS, meta={"param": spec.param, "reps": spec.reps, **base.to_meta()})
    for v in spec.values:
        eff = np.array([o.effectiveness for o in raw[v]])
        st = np.array([o.stealthiness for o in raw[v]])
        q25, med, q75 = np.quantile(eff, [0.25, 0.5, 0.75])
        table.append([float(v), len(eff), eff.mean(), eff.min(), q25, med, q75, eff.max(), st.mean(), st.max(),
                      sum(o.alarms for o in raw[v]), sum(o.infeasible for o in raw[v])])
    return table, raw
