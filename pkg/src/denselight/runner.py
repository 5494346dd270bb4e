"""Run orchestration: configuration, baseline/training/evaluation runs and report export.

Every run directory gets a ``run_metadata.json`` holding the resolved
configuration, seeds, package version and SHA-256 digests of the input
files. No wall-clock values are written, so repeated runs with the same
inputs produce byte-identical outputs.
"""
from __future__ import annotations

import csv
import hashlib
import json
import shutil
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .controllers import CONTROLLERS, Controller
from .env import TrafficEnv, run_controller_episode
from .flows import FlowSynthesisSpec, arrival_stats, synthesize_flow
from .learner import PPOConfig, evaluate_agent, load_agent, play_episode, train
from .network import RoadNetwork, load_network
from .neural.checkpoint import write_matrix_csv
from .rewards import SERIES, read_ledger_csv, reward_correlation_report, write_correlation_csv
from .simulator import FlowSchedule, SimConfig, UndefinedMetricError

LEARNER = "denselight"


class ConfigError(ValueError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


@dataclass
class RunConfig:
    network: str
    out: str
    flow: str | None = None
    flow_spec: dict | None = None
    controller: str | None = None
    learner: dict | None = None  # PPO settings; selecting the learner
    sim: dict = field(default_factory=dict)
    seed: int = 0
    episodes: int = 1

    def validate(self) -> None:
        if (self.controller is None) == (self.learner is None):
            raise ConfigError("select exactly one of a controller or the learner")
        if self.controller is not None and self.controller not in CONTROLLERS:
            raise ConfigError(f"unknown controller {self.controller!r}; choose from {CONTROLLERS}")
        if not Path(self.network).is_file():
            raise ConfigError(f"network file {self.network} does not exist")
        if (self.flow is None) == (self.flow_spec is None):
            raise ConfigError("give exactly one of a flow file or a flow synthesis spec")
        if self.flow is not None and not Path(self.flow).is_file():
            raise ConfigError(f"flow file {self.flow} does not exist")
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        unknown = set(self.sim) - set(SimConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown simulator settings {sorted(unknown)}")
        if self.learner is not None:
            try:
                PPOConfig.from_dict({**self.learner, "seed": self.seed})
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc)) from exc
        if self.flow_spec is not None:
            try:
                FlowSynthesisSpec(**self.flow_spec)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad flow spec: {exc}") from exc

    @classmethod
    def from_json(cls, path: str | Path, **overrides) -> "RunConfig":
        data = json.loads(Path(path).read_text())
        data.update({k: v for k, v in overrides.items() if v is not None})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown run settings {sorted(unknown)}")
        return cls(**data)

    def sim_config(self) -> SimConfig:
        return SimConfig(**{"seed": self.seed, **self.sim})

    def ppo_config(self) -> PPOConfig:
        return PPOConfig.from_dict({**(self.learner or {}), "seed": self.seed})


@dataclass
class Inputs:
    network: RoadNetwork
    schedule: FlowSchedule
    sim: SimConfig
    meta: dict


def load_inputs(cfg: RunConfig, episode: int = 0) -> Inputs:
    cfg.validate()
    network = load_network(cfg.network)
    meta = {"network_file": str(cfg.network), "network_sha256": _sha256(Path(cfg.network))}
    if cfg.flow is not None:
        schedule = FlowSchedule.read_csv(cfg.flow)
        meta.update(flow_file=str(cfg.flow), flow_sha256=_sha256(Path(cfg.flow)))
    else:
        spec = FlowSynthesisSpec(**{**cfg.flow_spec, "seed": cfg.flow_spec.get("seed", cfg.seed) + episode})
        schedule, stats = synthesize_flow(network, spec)
        meta.update(flow_spec=asdict(spec), flow_stats=stats["flow"])
    schedule.validate(network)
    return Inputs(network, schedule, cfg.sim_config(), meta)


def base_metadata(cfg: RunConfig, kind: str) -> dict:
    return {"kind": kind, "version": __version__, "config": asdict(cfg), "seed": cfg.seed}


# -- flow synthesis ------------------------------------------------------------------

def generate_flow(network_path: str | Path, spec: FlowSynthesisSpec, out: str | Path) -> dict:
    """Write the schedule CSV plus ``<stem>.stats.json`` and ``<stem>.stats.csv``."""
    network = load_network(network_path)
    schedule, stats = synthesize_flow(network, spec)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    schedule.write_csv(out)
    stats = {**stats, "network_sha256": _sha256(Path(network_path)), "version": __version__}
    _dump_json(out.with_suffix(".stats.json"), stats)
    reread = arrival_stats(FlowSchedule.read_csv(out), spec.horizon_s)
    with open(out.with_suffix(".stats.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["flow", "Mean", "Std.", "Max", "Min"])
        for name, st in (("base", stats["base"]), ("fluctuated", asdict(reread))):
            w.writerow([name, repr(round(st["mean"], 6)), repr(round(st["std"], 6)), st["max"], st["min"]])
    return stats


# -- baselines ------------------------------------------------------------------------

def _episode_metrics(env: TrafficEnv) -> dict:
    s = env.summary()
    try:
        att = s.average_travel_time
    except UndefinedMetricError:
        att = None
    return {
        "average_travel_time": att,
        "travel_time_defined": att is not None,
        "throughput": s.departed,
        "inserted": s.inserted,
        "active": s.active,
        "unserved": s.unserved,
        "reward_sums": {name: env.ledger.series(name).sum(axis=0).tolist() for name in SERIES},
    }


def _mean_std(values: list[float | None]) -> tuple[float | None, float | None]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def run_baseline(cfg: RunConfig) -> dict:
    """One episode per seed offset with a classical controller; writes JSON + CSV reports."""
    if cfg.controller is None:
        raise ConfigError("baseline runs need a controller")
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    controller = Controller(cfg.controller)
    episodes, meta_inputs = [], []
    for e in range(cfg.episodes):
        inputs = load_inputs(cfg, e)
        env = run_controller_episode(inputs.network, inputs.schedule, controller, inputs.sim)
        episodes.append(_episode_metrics(env))
        meta_inputs.append(inputs.meta)
        if e == 0:
            env.ledger.to_csv(out / "rewards.csv")
    mean, std = _mean_std([m["average_travel_time"] for m in episodes])
    report = {
        "method": cfg.controller,
        "controller": controller.metadata,
        "episodes": episodes,
        "average_travel_time_mean": mean,
        "average_travel_time_std": std,
    }
    _dump_json(out / "metrics.json", report)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "average_travel_time", "throughput", "inserted", "unserved"])
        for e, m in enumerate(episodes):
            att = m["average_travel_time"]
            w.writerow([e, "undefined" if att is None else repr(att), m["throughput"], m["inserted"], m["unserved"]])
    with open(out / "intersection_rewards.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["intersection", *SERIES])
        sums = episodes[0]["reward_sums"]
        for i in range(len(sums[SERIES[0]])):
            w.writerow([i, *(repr(sums[name][i]) for name in SERIES)])
    _dump_json(out / "run_metadata.json", {**base_metadata(cfg, "baseline"), "inputs": meta_inputs,
                                           "controller": controller.metadata})
    return report


# -- training / evaluation ------------------------------------------------------------

def run_training(cfg: RunConfig, resume: bool = False):
    if cfg.learner is None:
        raise ConfigError("training runs need learner settings")
    inputs = load_inputs(cfg)
    ppo = cfg.ppo_config()
    meta = {**base_metadata(cfg, "train"), "inputs": inputs.meta}
    result = train(inputs.network, inputs.schedule, inputs.sim, ppo, cfg.out, resume=resume, extra_meta=meta)
    # ledger of one final greedy episode feeds the reward-correlation report
    env = TrafficEnv(inputs.network, inputs.schedule, inputs.sim, first_step=ppo.first_step)
    play_episode(result.agent, env, None, True, ppo.reward, ppo.reward_scale)
    env.ledger.to_csv(Path(cfg.out) / "rewards.csv")
    return result


def evaluate_methods(cfg: RunConfig, methods: list[str], checkpoint: str | Path | None = None,
                     sampled: bool = False) -> dict:
    """Head-to-head table: mean and std of average travel time per method over ``cfg.episodes``."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, meta_inputs = [], []
    per_method: dict[str, list[float | None]] = {m: [] for m in methods}
    agent = None
    for e in range(cfg.episodes):
        inputs = _load_for_eval(cfg, e)
        meta_inputs.append(inputs.meta)
        for m in methods:
            if m == LEARNER:
                if checkpoint is None:
                    raise ConfigError("evaluating the learner needs --checkpoint")
                if agent is None:
                    agent = load_agent(inputs.network, checkpoint)
                rng = np.random.default_rng([cfg.seed, e]) if sampled else None
                env = TrafficEnv(inputs.network, inputs.schedule, inputs.sim, first_step=agent.config.first_step)
                res = evaluate_agent(agent, env, rng, greedy=not sampled)
                att = res.travel_time
            else:
                env = run_controller_episode(inputs.network, inputs.schedule, Controller(m), inputs.sim)
                att = _episode_metrics(env)["average_travel_time"]
            per_method[m].append(att)
            rows.append({"episode": e, "method": m, "average_travel_time": att})
    table = []
    for m in methods:
        mean, std = _mean_std(per_method[m])
        table.append({"method": m, "mean": mean, "std": std, "episodes": len(per_method[m])})
    report = {"table": table, "episodes": rows, "greedy": not sampled,
              "checkpoint": None if checkpoint is None else str(checkpoint)}
    _dump_json(out / "eval.json", report)
    with open(out / "eval_table.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "mean_travel_time", "std_travel_time", "episodes"])
        for r in table:
            w.writerow([r["method"], "undefined" if r["mean"] is None else repr(r["mean"]),
                        "undefined" if r["std"] is None else repr(r["std"]), r["episodes"]])
    _dump_json(out / "run_metadata.json", {**base_metadata(cfg, "eval"), "inputs": meta_inputs,
                                           "methods": methods})
    return report


def _load_for_eval(cfg: RunConfig, episode: int) -> Inputs:
    # evaluation does not require a single method selection; check inputs only
    probe = replace(cfg, controller=CONTROLLERS[0], learner=None)
    return load_inputs(probe, episode)


# -- reports ---------------------------------------------------------------------------

def export_reports(run_dir: str | Path, out: str | Path | None = None) -> list[Path]:
    """Correlation table, value-error curve and DCL mixing matrices of a finished run."""
    run_dir = Path(run_dir)
    out = Path(out) if out is not None else run_dir / "reports"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    ledger_path = run_dir / "rewards.csv"
    if ledger_path.exists():
        table = reward_correlation_report(read_ledger_csv(ledger_path))
        p = out / "reward_correlation.csv"
        write_correlation_csv(table, p)
        written.append(p)
    ve = run_dir / "value_error.csv"
    if ve.exists():
        p = out / "value_error.csv"
        shutil.copyfile(ve, p)
        written.append(p)
    meta_path = run_dir / "run_metadata.json"
    if (run_dir / "checkpoints").is_dir() and meta_path.exists():
        meta = json.loads(meta_path.read_text())
        network = load_network(meta["config"]["network"])
        agent = load_agent(network, run_dir)
        for r in range(agent.policy.config.rounds):
            for head, net in (("policy", agent.policy), ("value", agent.value)):
                p = out / f"W_{head}_round{r}.csv"
                write_matrix_csv(p, net.mixing_matrix(r))
                written.append(p)
    return written
