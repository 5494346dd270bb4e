"""PPO-Clip over the traffic environment with one shared policy and one shared value network.

Every intersection is an agent with its own advantage stream; all of them
share the parameters of the policy network (theta) and of the value
network (phi). A joint decision sample is the (72, n) augmented
observation of the whole grid at one decision step.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .env import TrafficEnv
from .features import RAW_DIM
from .network import N_MOVEMENTS, N_PHASES
from .network import RoadNetwork
from .neural import autograd as ag
from .neural.checkpoint import load_checkpoint, save_checkpoint
from .neural.nltsc import NLTSC, NetConfig, build_fixed_hop_weights
from .neural.optim import Adam, linear_decay
from .rewards import SERIES
from .simulator import FlowSchedule, SimConfig

log = logging.getLogger(__name__)

MIXING_CHOICES = ("learned", "softmax", "hop1", "hop2", "none")
CURVE_HEADER = ["iteration", "policy_loss", "value_loss", "clip_frac", "entropy", "eval_travel_time"]
VALUE_ERROR_HEADER = ["iteration", "value_error"]


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class PPOConfig:
    clip_eps: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    episodes_per_iter: int = 2
    minibatch: int = 64
    epochs: int = 10
    iterations: int = 200
    lr: float = 3e-4
    lr_decay: bool = True
    entropy_coef: float = 0.0
    normalize_adv: bool = True
    reward: str = "r_ifdg"
    reward_scale: float = 1e-4
    obs_scale: float = 0.1  # applied to the pressure / running-count features
    hidden: int = 64
    mixing: str = "learned"
    m: int | None = None
    first_step: str = "zeros"
    eval_every: int = 10
    final_evals: int = 10
    greedy_eval: bool = True
    checkpoint_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must be in (0, 1)")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must be in [0, 1)")
        if not 0 <= self.lam <= 1:
            raise ValueError("lam must be in [0, 1]")
        if self.episodes_per_iter < 1 or self.minibatch < 1 or self.epochs < 1 or self.iterations < 0:
            raise ValueError("episodes_per_iter, minibatch, epochs must be >= 1 and iterations >= 0")
        if self.reward not in SERIES:
            raise ValueError(f"reward must be one of {SERIES}")
        if self.mixing not in MIXING_CHOICES:
            raise ValueError(f"mixing must be one of {MIXING_CHOICES}")
        if self.eval_every < 1 or self.final_evals < 1:
            raise ValueError("eval_every and final_evals must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "PPOConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown PPO settings: {sorted(unknown)}")
        return cls(**d)


# -- pure pieces ---------------------------------------------------------------

def clip_advantage(adv, eps: float = 0.2):
    """``(1 + eps) * A`` where ``A >= 0``, else ``(1 - eps) * A``."""
    adv = np.asarray(adv, dtype=np.float64)
    return np.where(adv >= 0, (1.0 + eps) * adv, (1.0 - eps) * adv)


def compute_gae(rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float
                ) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and returns for arrays shaped (..., D, n); the value after step D-1 is 0."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ValueError(f"rewards {rewards.shape} and values {values.shape} differ")
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[:-2] + rewards.shape[-1:])
    n_steps = rewards.shape[-2]
    for d in range(n_steps - 1, -1, -1):
        next_v = values[..., d + 1, :] if d + 1 < n_steps else 0.0
        delta = rewards[..., d, :] + gamma * next_v - values[..., d, :]
        last = delta + gamma * lam * last
        adv[..., d, :] = last
    returns = adv + values
    return adv, returns


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Monte-Carlo discounted return per step along axis -2 (zero after the last step)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.zeros_like(rewards)
    acc = np.zeros(rewards.shape[:-2] + rewards.shape[-1:])
    for d in range(rewards.shape[-2] - 1, -1, -1):
        acc = rewards[..., d, :] + gamma * acc
        out[..., d, :] = acc
    return out


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    centered = adv - adv.mean()
    std = centered.std()
    return centered / std if std > 1e-12 else centered


def scale_observation(obs: np.ndarray, scale: float) -> np.ndarray:
    """Scale the count-valued slots (pressures and running counts) of current and previous raw parts."""
    if scale == 1.0:
        return obs
    obs = np.array(obs, dtype=np.float64)
    for base in (0, RAW_DIM):
        obs[..., base + N_PHASES:base + N_PHASES + 2 * N_MOVEMENTS] *= scale
    return obs


def sample_actions(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent categorical draw per intersection from (4, n) logits."""
    z = logits - logits.max(axis=0, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=0, keepdims=True)
    u = rng.random(p.shape[1])
    cdf = np.cumsum(p, axis=0)
    return np.minimum((cdf < u).sum(axis=0), p.shape[0] - 1)


def log_probs(logits: np.ndarray, actions: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-2, keepdims=True)
    lp = z - np.log(np.exp(z).sum(axis=-2, keepdims=True))
    return np.take_along_axis(lp, actions[..., None, :], axis=-2)[..., 0, :]


def surrogate_loss(policy: NLTSC, obs, actions: np.ndarray, old_logp: np.ndarray, adv: np.ndarray,
                   eps: float, entropy_coef: float = 0.0) -> tuple[ag.Tensor, dict]:
    """Negative clipped surrogate ``-mean(min(ratio * A, B_eps(A)))`` over (batch, intersection)."""
    logits = policy(obs)  # (B, 4, n)
    logp_all = ag.log_softmax(logits, axis=-2)
    onehot = np.zeros(logits.shape)
    np.put_along_axis(onehot, actions[..., None, :], 1.0, axis=-2)
    logp = ag.tsum(ag.mul(logp_all, onehot), axis=-2)  # (B, n)
    ratio = ag.exp(ag.sub(logp, old_logp))
    unclipped = ag.mul(ratio, adv)
    bound = clip_advantage(adv, eps)
    surr = ag.minimum(unclipped, bound)
    loss = ag.mul(ag.mean(surr), -1.0)
    p = np.exp(logp_all.data)
    ent = -(p * logp_all.data).sum(axis=-2)
    if entropy_coef:
        ent_t = ag.mul(ag.tsum(ag.mul(ag.exp(logp_all), logp_all), axis=-2), -1.0)
        loss = ag.sub(loss, ag.mul(ag.mean(ent_t), entropy_coef))
    diag = {
        "clip_frac": float(np.mean(unclipped.data > bound)),
        "entropy": float(ent.mean()),
        "approx_kl": float(np.mean(old_logp - logp.data)),
    }
    return loss, diag


def value_loss(value_net: NLTSC, obs, targets: np.ndarray) -> ag.Tensor:
    v = ag.tsum(value_net(obs), axis=-2)  # (B, n)
    return ag.mean(ag.square(ag.sub(v, targets)))


# -- agent -------------------------------------------------------------------------

class Agent:
    """Policy and value networks plus their optimizers."""

    def __init__(self, network: RoadNetwork, config: PPOConfig, init_seeds: tuple[int, int] | None = None):
        self.config = config
        n = network.n_intersections
        mixing, fixed_w = config.mixing, None
        if mixing in ("hop1", "hop2"):
            fixed_w = build_fixed_hop_weights(network, int(mixing[-1]))
            mixing = "fixed"
        seeds = init_seeds or tuple(np.random.SeedSequence(config.seed).generate_state(2))
        self.policy = NLTSC(NetConfig(n, hidden=config.hidden, out_dim=N_PHASES, m=config.m,
                                      mixing=mixing, final_gain=0.01), int(seeds[0]), fixed_w)
        self.value = NLTSC(NetConfig(n, hidden=config.hidden, out_dim=1, m=config.m,
                                     mixing=mixing, final_gain=1.0), int(seeds[1]), fixed_w)
        self.opt_pi = Adam(self.policy.params)
        self.opt_v = Adam(self.value.params)

    def prepare(self, obs: np.ndarray) -> np.ndarray:
        """(n, 72) env observation -> (72, n) scaled network input."""
        return scale_observation(np.asarray(obs), self.config.obs_scale).T

    def evaluate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        with ag.no_grad():
            return self.policy(x).data, self.value(x).data[..., 0, :]

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, net in (("policy", self.policy), ("value", self.value)):
            for k, v in net.state_dict().items():
                out[f"{prefix}/{k}"] = v
        for prefix, opt in (("opt_policy", self.opt_pi), ("opt_value", self.opt_v)):
            for k, v in opt.state_dict().items():
                out[f"{prefix}/{k}"] = v
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for prefix, net in (("policy", self.policy), ("value", self.value)):
            net.load_state_dict({k[len(prefix) + 1:]: v for k, v in arrays.items() if k.startswith(prefix + "/")})
        for prefix, opt in (("opt_policy", self.opt_pi), ("opt_value", self.opt_v)):
            sub = {k[len(prefix) + 1:]: v for k, v in arrays.items() if k.startswith(prefix + "/")}
            if sub:
                opt.load_state_dict(sub)

    def expected_shapes(self) -> dict[str, list[int]]:
        return {k: list(v.shape) for k, v in self.state_arrays().items()}


@dataclass
class RolloutBuffer:
    obs: np.ndarray  # (E, D, 72, n) network inputs
    actions: np.ndarray  # (E, D, n)
    logp: np.ndarray  # (E, D, n)
    rewards: np.ndarray  # (E, D, n), already scaled
    values: np.ndarray  # (E, D, n)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    travel_times: list[float] = field(default_factory=list)

    @property
    def n_episodes(self) -> int:
        return self.obs.shape[0]

    @property
    def n_decisions(self) -> int:
        return self.obs.shape[1]

    def finish(self, gamma: float, lam: float) -> None:
        self.advantages, self.returns = compute_gae(self.rewards, self.values, gamma, lam)
        if not np.all(np.isfinite(self.advantages)):
            raise TrainingDiverged("non-finite advantages", {"rewards_finite": bool(np.isfinite(self.rewards).all())})
        # regression targets are exactly A + V by construction
        assert np.allclose(self.returns - self.advantages, self.values, rtol=0, atol=1e-9)

    def flat(self) -> dict[str, np.ndarray]:
        e, d = self.obs.shape[:2]
        out = {"obs": self.obs.reshape(e * d, *self.obs.shape[2:])}
        for k in ("actions", "logp", "rewards", "values", "advantages", "returns"):
            arr = getattr(self, k)
            if arr is not None:
                out[k] = arr.reshape(e * d, -1)
        return out


def play_episode(agent: Agent, env: TrafficEnv, rng: np.random.Generator | None, greedy: bool = False,
                 reward: str = "r_ifdg", reward_scale: float = 1.0):
    """Run one episode; returns per-step arrays and the finished env."""
    obs = env.reset()
    xs, acts, lps, rews, vals = [], [], [], [], []
    k = SERIES.index(reward)
    done = False
    while not done:
        x = agent.prepare(obs)
        logits, v = agent.evaluate(x)
        a = np.argmax(logits, axis=0) if greedy else sample_actions(logits, rng)
        res = env.step(a)
        xs.append(x)
        acts.append(a)
        lps.append(log_probs(logits, a))
        rews.append(res.rewards[k] * reward_scale)
        vals.append(v)
        obs, done = res.obs, res.done
    return (np.array(xs), np.array(acts, dtype=np.int64), np.array(lps), np.array(rews), np.array(vals)), env


def collect_rollout(agent: Agent, env_factory, n_episodes: int, rng: np.random.Generator) -> RolloutBuffer:
    cfg = agent.config
    parts, tts = [], []
    for e in range(n_episodes):
        try:
            arrays, env = play_episode(agent, env_factory(), rng, False, cfg.reward, cfg.reward_scale)
        except Exception as exc:
            raise RuntimeError(f"rollout episode {e} failed: {exc}") from exc
        parts.append(arrays)
        tts.append(env.summary().average_travel_time)
    stacked = [np.stack([p[k] for p in parts]) for k in range(5)]
    return RolloutBuffer(*stacked, travel_times=tts)


def ppo_update(agent: Agent, buffer: RolloutBuffer, lr: float, rng: np.random.Generator) -> dict:
    """Epochs of minibatch updates on theta (clipped surrogate) and phi (squared error)."""
    cfg = agent.config
    if buffer.advantages is None:
        buffer.finish(cfg.gamma, cfg.lam)
    data = buffer.flat()
    n = len(data["obs"])
    stats = {"policy_loss": [], "value_loss": [], "clip_frac": [], "entropy": []}
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            obs = data["obs"][idx]
            adv = data["advantages"][idx]
            if cfg.normalize_adv:
                adv = normalize_advantages(adv)
            agent.policy.zero_grad()
            loss_pi, diag = surrogate_loss(agent.policy, obs, data["actions"][idx], data["logp"][idx],
                                           adv, cfg.clip_eps, cfg.entropy_coef)
            agent.value.zero_grad()
            loss_v = value_loss(agent.value, obs, data["returns"][idx])
            if not (np.isfinite(loss_pi.item()) and np.isfinite(loss_v.item())):
                raise TrainingDiverged("non-finite loss", {"policy_loss": loss_pi.item(),
                                                           "value_loss": loss_v.item(), **diag})
            loss_pi.backward()
            loss_v.backward()
            agent.opt_pi.step(lr)
            agent.opt_v.step(lr)
            stats["policy_loss"].append(loss_pi.item())
            stats["value_loss"].append(loss_v.item())
            stats["clip_frac"].append(diag["clip_frac"])
            stats["entropy"].append(diag["entropy"])
    return {k: float(np.mean(v)) for k, v in stats.items()}


@dataclass
class EvalResult:
    travel_time: float
    value_error: float
    summary: dict


def evaluate_agent(agent: Agent, env: TrafficEnv, rng: np.random.Generator | None = None,
                   greedy: bool = True) -> EvalResult:
    """One evaluation episode; value error is mean (V - discounted return)^2 over (d, i)."""
    cfg = agent.config
    (_, _, _, rews, vals), env = play_episode(agent, env, rng, greedy, cfg.reward, cfg.reward_scale)
    target = discounted_returns(rews, cfg.gamma)
    summ = env.summary()
    return EvalResult(summ.average_travel_time, float(np.mean((vals - target) ** 2)), summ.as_dict())


# -- training loop -------------------------------------------------------------------

def eval_points(iterations: int, eval_every: int, final_evals: int) -> list[int]:
    """Iterations (0 = untrained) after which a greedy evaluation episode runs."""
    pts = {0, iterations}
    pts.update(range(eval_every, iterations + 1, eval_every))
    pts.update(range(max(1, iterations - final_evals + 1), iterations + 1))
    return sorted(pts)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def curves_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for r in rows:
        w.writerow([r["iteration"], *(_fmt(r.get(k)) for k in CURVE_HEADER[1:])])
    return buf.getvalue()


def value_error_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(VALUE_ERROR_HEADER)
    for r in rows:
        if r.get("value_error") is not None:
            w.writerow([r["iteration"], _fmt(r["value_error"])])
    return buf.getvalue()


@dataclass
class TrainResult:
    final_travel_time: float
    rows: list[dict]
    agent: Agent

    @property
    def eval_rows(self) -> list[dict]:
        return [r for r in self.rows if r.get("eval_travel_time") is not None]

    @property
    def final_value_error(self) -> float:
        return self.eval_rows[-1]["value_error"]


def _latest_checkpoint(ckpt_dir: Path) -> Path | None:
    found = sorted(ckpt_dir.glob("iter_*.json"))
    return found[-1].with_suffix("") if found else None


def train(network: RoadNetwork, schedule: FlowSchedule, sim_config: SimConfig | None = None,
          config: PPOConfig | None = None, out_dir: str | Path | None = None, resume: bool = False,
          extra_meta: dict | None = None) -> TrainResult:
    """K iterations of collect -> GAE -> update with periodic greedy evaluation.

    Final metric: mean travel time over the last ``final_evals`` evaluation episodes.
    """
    config = config or PPOConfig()
    sim_config = sim_config or SimConfig()
    seq = np.random.SeedSequence(config.seed)
    s_pi, s_v, s_train, s_eval = seq.spawn(4)
    agent = Agent(network, config, (int(s_pi.generate_state(1)[0]), int(s_v.generate_state(1)[0])))
    rng = np.random.default_rng(s_train)
    eval_rng = np.random.default_rng(s_eval)

    def make_env():
        return TrafficEnv(network, schedule, sim_config, first_step=config.first_step)

    out = Path(out_dir) if out_dir is not None else None
    rows: list[dict] = []
    start = 1
    meta = {
        "version": __version__,
        "ppo": asdict(config),
        "sim": asdict(sim_config),
        "network": {"rows": network.rows, "cols": network.cols, "lane_length_m": network.lane_length_m},
        "n_vehicles": len(schedule),
        **(extra_meta or {}),
    }
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "checkpoints").mkdir(exist_ok=True)
        (out / "run_metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        if resume and (ck := _latest_checkpoint(out / "checkpoints")) is not None:
            arrays, manifest = load_checkpoint(ck, agent.expected_shapes())
            agent.load_arrays(arrays)
            saved = manifest["meta"]
            rng.bit_generator.state = saved["rng_train"]
            eval_rng.bit_generator.state = saved["rng_eval"]
            rows = saved["rows"]
            start = saved["iteration"] + 1
            log.info("resumed from %s at iteration %d", ck, start)

    points = set(eval_points(config.iterations, config.eval_every, config.final_evals))

    def checkpoint(k: int) -> None:
        if out is None:
            return
        save_checkpoint(out / "checkpoints" / f"iter_{k:05d}", agent.state_arrays(), {
            "iteration": k, "rng_train": rng.bit_generator.state, "rng_eval": eval_rng.bit_generator.state,
            "rows": rows, "ppo": asdict(config),
        })

    def write_curves() -> None:
        if out is None:
            return
        (out / "curves.csv").write_text(curves_csv(rows))
        (out / "value_error.csv").write_text(value_error_csv(rows))

    def run_eval(row: dict) -> None:
        res = evaluate_agent(agent, make_env(), eval_rng, config.greedy_eval)
        row["eval_travel_time"] = res.travel_time
        row["value_error"] = res.value_error
        log.info("iter %d eval travel time %.2f value error %.4f", row["iteration"], res.travel_time, res.value_error)

    if start == 1 and not rows:
        row0 = {"iteration": 0}
        run_eval(row0)
        rows.append(row0)
        write_curves()

    for k in range(start, config.iterations + 1):
        lr = linear_decay(config.lr, k - 1, config.iterations) if config.lr_decay else config.lr
        buffer = collect_rollout(agent, make_env, config.episodes_per_iter, rng)
        try:
            stats = ppo_update(agent, buffer, lr, rng)
        except TrainingDiverged as exc:
            if out is not None:
                (out / "diverged.json").write_text(json.dumps({"iteration": k, **exc.diagnostics}, indent=2))
            raise
        row = {"iteration": k, **stats, "train_travel_time": float(np.mean(buffer.travel_times))}
        if k in points:
            run_eval(row)
        rows.append(row)
        write_curves()
        if k % config.checkpoint_every == 0 or k == config.iterations:
            checkpoint(k)

    if out is not None and config.iterations == 0:
        checkpoint(0)
    evals = [r["eval_travel_time"] for r in rows if r.get("eval_travel_time") is not None]
    final = float(np.mean(evals[-config.final_evals:]))
    if out is not None:
        (out / "result.json").write_text(json.dumps(
            {"final_travel_time": final, "final_value_error": rows[-1].get("value_error"),
             "eval_iterations": [r["iteration"] for r in rows if r.get("eval_travel_time") is not None]},
            indent=2, sort_keys=True))
    return TrainResult(final, rows, agent)


def load_agent(network: RoadNetwork, path: str | Path, config: PPOConfig | None = None) -> Agent:
    """Rebuild an agent from a checkpoint (its stored PPO settings win unless ``config`` is given)."""
    path = Path(path)
    if path.is_dir():
        ck = _latest_checkpoint(path / "checkpoints" if (path / "checkpoints").is_dir() else path)
        if ck is None:
            raise FileNotFoundError(f"no checkpoint under {path}")
        path = ck
    manifest = json.loads(path.with_suffix(".json").read_text()) if path.with_suffix(".json").exists() else None
    if config is None:
        if manifest is None:
            raise FileNotFoundError(f"checkpoint manifest {path.with_suffix('.json')} not found")
        config = PPOConfig.from_dict(manifest["meta"]["ppo"])
    agent = Agent(network, config, (0, 0))
    arrays, _ = load_checkpoint(path, agent.expected_shapes())
    agent.load_arrays(arrays)
    return agent
