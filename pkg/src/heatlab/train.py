"""Sequential on-policy training with full instrumentation.

The workflow is deliberately rigid, because its rigidity is the object of
study: each cycle visits morphologies one at a time IN ORDER, collects
fresh on-policy trajectories, averages that morphology's episode
gradients, and applies exactly one update before moving on.  Stored
trajectories from an older parameter version may never be fed back into
an update (StaleTrajectoryError); the staleness probe quantifies why, by
replaying stored observation sequences under new parameters and measuring
how far hidden states and action log-probs drift.

Instrumentation per (cycle, morphology): wall nanoseconds for the rollout
phase and the gradient+update phase, parameter count, and the unrolled
hidden-state footprint (episode_len * hidden_dim * 8 bytes).

mean_return is the mean DISCOUNTED episode return, so learned performance
can be compared directly against dp_optimal_value at the same horizon.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .env import (FamilyManifest, N_OUTCOMES, TabularMdp, compile_family,
                  outcome_of_state)
from .errors import ContractViolation, DomainError, StaleTrajectoryError
from .policy import (ENTROPY_COEF, BasePolicy, episode_gradient, init_policy,
                     mask_slots_from_bitcode, replay_trajectory,
                     save_checkpoint)

SCENARIOS = ("single_nomem", "single_mem", "multi_mem", "multi_mem_modular")
SCENARIO_ARCH = {
    "single_nomem": "feedforward",
    "single_mem": "recurrent",
    "multi_mem": "recurrent",
    "multi_mem_modular": "modular",
}
SCALING_NS = (1, 2, 4, 8)

BENCH_HEADER = ("scenario,cycle,morphology_id,episodes,mean_return,"
                "t_generate_ns,t_optimize_ns,param_count,hidden_mem_bytes,"
                "theta_version")
CURVES_HEADER = "scenario,cycle,morphology_id,mean_return"


@dataclass
class Trajectory:
    """One fixed-length episode as collected, including the memory trace.

    morphology_id is ground-truth metadata (never an input to the policy).
    theta_version pins the parameters that generated the episode; updates
    bump the policy's counter, which is what makes old episodes stale.
    """

    morphology_id: int
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    hidden_snapshots: np.ndarray
    logprobs: np.ndarray
    theta_version: int
    arch: str
    gamma: float

    def __post_init__(self):
        T = len(self.actions)
        if not (len(self.observations) == len(self.rewards)
                == len(self.logprobs) == self.hidden_snapshots.shape[0] == T):
            raise ContractViolation("trajectory sequences must share one length")

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class RunConfig:
    scenario: str
    cycles: int
    steps_per_cycle: int = 5000
    learning_rate: float = 0.01
    seed: int = 0
    family: FamilyManifest | None = None
    hidden_width: int = 16
    per_slot_memory_width: int = 8
    message_width: int = 8
    entropy: bool = False  # adds the 0.01-weight entropy bonus to the loss

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ContractViolation(f"unknown scenario {self.scenario!r}")
        if self.cycles < 1 or self.steps_per_cycle < 1:
            raise ContractViolation("cycles and steps_per_cycle must be positive")
        if self.learning_rate <= 0:
            raise ContractViolation("learning_rate must be positive")

    def to_dict(self) -> dict:
        d = {
            "scenario": self.scenario,
            "cycles": self.cycles,
            "steps_per_cycle": self.steps_per_cycle,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "hidden_width": self.hidden_width,
            "per_slot_memory_width": self.per_slot_memory_width,
            "message_width": self.message_width,
            "entropy": self.entropy,
        }
        if self.family is not None:
            d["family"] = self.family.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        fam = d.get("family")
        return cls(scenario=d["scenario"], cycles=d["cycles"],
                   steps_per_cycle=d.get("steps_per_cycle", 5000),
                   learning_rate=d.get("learning_rate", 0.01),
                   seed=d.get("seed", 0),
                   family=FamilyManifest.from_dict(fam) if fam else None,
                   hidden_width=d.get("hidden_width", 16),
                   per_slot_memory_width=d.get("per_slot_memory_width", 8),
                   message_width=d.get("message_width", 8),
                   entropy=bool(d.get("entropy", False)))


@dataclass
class BenchRecord:
    scenario: str
    cycle: int
    morphology_id: int
    episodes: int
    mean_return: float
    t_generate_ns: int
    t_optimize_ns: int
    param_count: int
    hidden_mem_bytes: int
    theta_version: int

    def __post_init__(self):
        if self.episodes < 1:
            raise ContractViolation("episodes must be >= 1")
        if self.t_generate_ns < 0 or self.t_optimize_ns < 0:
            raise ContractViolation("phase times must be nonnegative")

    def csv_row(self) -> list:
        return [self.scenario, self.cycle, self.morphology_id, self.episodes,
                repr(self.mean_return), self.t_generate_ns, self.t_optimize_ns,
                self.param_count, self.hidden_mem_bytes, self.theta_version]


@dataclass
class DriftReport:
    logprob_drift: float
    hidden_drift: float
    param_delta: float


def rollout(mdp: TabularMdp, policy: BasePolicy, steps: int,
            rng: np.random.Generator, *, episode_len: int = 100,
            obs_fn=outcome_of_state) -> tuple[list[Trajectory], int]:
    """Run floor(steps / episode_len) fixed-length on-policy episodes.

    The policy observes obs_fn(state) each step (by default the outcome
    symbol, which never reveals the cursor or the mask).  Returns the
    trajectories and the wall nanoseconds spent inside the episode loop.
    """
    if steps < episode_len:
        raise ContractViolation("steps must be at least one episode long")
    if policy.arch == "modular":
        policy.set_active_slots(
            mask_slots_from_bitcode(mdp.morphology_id, policy.kmax))
    n_episodes = steps // episode_len
    cum = mdp.transition.cumsum(axis=2)
    trajectories = []
    t0 = time.perf_counter_ns()
    for _ in range(n_episodes):
        obs = np.zeros(episode_len, dtype=np.int64)
        acts = np.zeros(episode_len, dtype=np.int64)
        rews = np.zeros(episode_len)
        hiddens = np.zeros((episode_len, policy.hidden_dim))
        logps = np.zeros(episode_len)
        s = mdp.initial_state
        h = policy.initial_hidden()
        for t in range(episode_len):
            o = obs_fn(s)
            out = policy.step(o, h)
            a = int(np.searchsorted(out.action_dist.cumsum(), rng.random()))
            a = min(a, mdp.n_actions - 1)
            obs[t] = o
            acts[t] = a
            rews[t] = mdp.reward[s, a]
            logps[t] = np.log(out.action_dist[a])
            h = out.next_hidden
            hiddens[t] = h
            s = int(np.searchsorted(cum[s, a], rng.random()))
            s = min(s, mdp.n_states - 1)
        trajectories.append(Trajectory(
            morphology_id=mdp.morphology_id, observations=obs, actions=acts,
            rewards=rews, hidden_snapshots=hiddens, logprobs=logps,
            theta_version=policy.theta_version, arch=policy.arch,
            gamma=mdp.gamma))
    t_generate = time.perf_counter_ns() - t0
    return trajectories, t_generate


def mean_discounted_return(trajectories: list[Trajectory]) -> float:
    totals = []
    for traj in trajectories:
        disc = traj.gamma ** np.arange(len(traj))
        totals.append(float(traj.rewards @ disc))
    return float(np.mean(totals)) if totals else 0.0


def apply_gradient_update(policy: BasePolicy, trajectories: list[Trajectory],
                          learning_rate: float,
                          entropy_coef: float = 0.0) -> None:
    """Average the episode gradients and apply one descent step.  Refuses
    trajectories whose parameters are not the policy's current version."""
    if not trajectories:
        raise ContractViolation("update needs at least one trajectory")
    grad = np.zeros_like(policy.theta)
    for traj in trajectories:
        if traj.theta_version != policy.theta_version:
            raise StaleTrajectoryError(
                f"trajectory from version {traj.theta_version} cannot train "
                f"version {policy.theta_version}")
        grad += episode_gradient(policy, traj, entropy_coef=entropy_coef)
    grad /= len(trajectories)
    policy.apply_update(-learning_rate * grad)


def train_cycle(policy: BasePolicy, morphologies: list[TabularMdp],
                config: RunConfig, rng: np.random.SeedSequence,
                cycle_index: int = 0) -> tuple[BasePolicy, list[BenchRecord]]:
    """One training cycle: per morphology IN ORDER, rollout then exactly one
    averaged-gradient update.  Gradients never batch across morphologies and
    never touch trajectories from an older parameter version."""
    if not morphologies:
        raise ContractViolation("train_cycle needs at least one morphology")
    episode_len = (config.family.params.episode_len
                   if config.family is not None else 100)
    streams = rng.spawn(len(morphologies))
    records = []
    for mdp, stream in zip(morphologies, streams):
        gen = np.random.Generator(np.random.PCG64(stream))
        trajectories, t_generate = rollout(
            mdp, policy, config.steps_per_cycle, gen, episode_len=episode_len)
        t0 = time.perf_counter_ns()
        apply_gradient_update(policy, trajectories, config.learning_rate,
                              entropy_coef=ENTROPY_COEF if config.entropy else 0.0)
        t_optimize = time.perf_counter_ns() - t0
        records.append(BenchRecord(
            scenario=config.scenario, cycle=cycle_index,
            morphology_id=mdp.morphology_id, episodes=len(trajectories),
            mean_return=mean_discounted_return(trajectories),
            t_generate_ns=t_generate, t_optimize_ns=t_optimize,
            param_count=policy.param_count,
            hidden_mem_bytes=episode_len * policy.hidden_dim * 8,
            theta_version=policy.theta_version))
    return policy, records


def staleness_probe(policy_old: BasePolicy, policy_new: BasePolicy,
                    stored: list[Trajectory]) -> DriftReport:
    """Replay stored observation sequences under the new parameters and
    measure how far the memory trace and action log-probs have moved."""
    logp_terms = []
    hidden_terms = []
    for traj in stored:
        hiddens, logps = replay_trajectory(policy_new, traj)
        if len(traj):
            logp_terms.append(np.abs(logps - traj.logprobs))
            hidden_terms.append(
                np.linalg.norm(hiddens - traj.hidden_snapshots, axis=1))
    logp_drift = float(np.concatenate(logp_terms).mean()) if logp_terms else 0.0
    hidden_drift = float(np.concatenate(hidden_terms).mean()) if hidden_terms else 0.0
    delta = float(np.linalg.norm(policy_new.theta - policy_old.theta))
    return DriftReport(logp_drift, hidden_drift, delta)


def morphologies_for(config: RunConfig, family: FamilyManifest) -> list[TabularMdp]:
    mdps = compile_family(family, split="train")
    if not mdps:
        raise ContractViolation("family has no training morphologies")
    if config.scenario.startswith("single"):
        return mdps[:1]
    return mdps


def build_policy(config: RunConfig, family: FamilyManifest) -> BasePolicy:
    arch = SCENARIO_ARCH[config.scenario]
    common = {"obs_alphabet": N_OUTCOMES, "n_actions": family.kmax + 1,
              "seed": config.seed}
    if arch == "modular":
        return init_policy(arch, kmax=family.kmax,
                           per_slot_memory_width=config.per_slot_memory_width,
                           message_width=config.message_width, **common)
    return init_policy(arch, hidden_width=config.hidden_width, **common)


def run_scenario(config: RunConfig,
                 family: FamilyManifest | None = None
                 ) -> tuple[BasePolicy, list[BenchRecord]]:
    """Train one scenario from scratch.  Randomness comes from per-(cycle,
    morphology) streams spawned off the root seed, so timing never alters
    what is sampled."""
    fam = family if family is not None else config.family
    if fam is None:
        raise ContractViolation("scenario runs need a morphology family")
    config = replace(config, family=fam)
    policy = build_policy(config, fam)
    morphologies = morphologies_for(config, fam)
    records: list[BenchRecord] = []
    for cycle in range(config.cycles):
        root = np.random.SeedSequence(config.seed, spawn_key=(cycle,))
        policy, recs = train_cycle(policy, morphologies, config, root,
                                   cycle_index=cycle)
        records.extend(recs)
    return policy, records


def write_bench_csv(path: Path, records: list[BenchRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCH_HEADER.split(","))
        for rec in records:
            writer.writerow(rec.csv_row())


def write_curves_csv(path: Path, records: list[BenchRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVES_HEADER.split(","))
        for rec in records:
            writer.writerow([rec.scenario, rec.cycle, rec.morphology_id,
                             repr(rec.mean_return)])


def run_benchmark(family: FamilyManifest, scenarios: list[str],
                  config: RunConfig, out_dir: str | Path) -> Path:
    """Execute the scenario set single-threaded, plus the multi_mem scaling
    study at n in {1,2,4,8} morphologies (rows labeled multi_mem_n<n>).

    Writes config.json, bench.csv, curves.csv and final.ckpt (the last
    scenario's trained policy) under out_dir; returns the bench.csv path.
    """
    for scen in scenarios:
        if scen not in SCENARIOS:
            raise ContractViolation(f"unknown scenario {scen!r}")
    if len(family.train_masks) < max(SCALING_NS):
        raise DomainError(
            f"scaling study needs >= {max(SCALING_NS)} training morphologies, "
            f"family has {len(family.train_masks)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    all_records: list[BenchRecord] = []
    last_policy: BasePolicy | None = None
    for scen in scenarios:
        cfg = replace(config, scenario=scen, family=family)
        policy, recs = run_scenario(cfg)
        all_records.extend(recs)
        last_policy = policy
    for n in SCALING_NS:
        sub = FamilyManifest(kmax=family.kmax, params=family.params,
                             train_masks=family.train_masks[:n],
                             eval_masks=family.eval_masks, seed=family.seed)
        cfg = replace(config, scenario="multi_mem", family=sub)
        policy, recs = run_scenario(cfg)
        all_records.extend(replace(r, scenario=f"multi_mem_n{n}") for r in recs)
        last_policy = policy
    cfg_doc = config.to_dict()
    cfg_doc["family"] = family.to_dict()
    cfg_doc["scenarios"] = list(scenarios)
    cfg_doc["scaling_ns"] = list(SCALING_NS)
    (out_dir / "config.json").write_text(
        json.dumps(cfg_doc, indent=2) + "\n", encoding="utf-8")
    bench_path = out_dir / "bench.csv"
    write_bench_csv(bench_path, all_records)
    write_curves_csv(out_dir / "curves.csv", all_records)
    if last_policy is not None:
        save_checkpoint(last_policy, out_dir / "final.ckpt",
                        extra={"training_seed": config.seed})
    return bench_path


@dataclass
class ScalingFit:
    slope: float
    intercept: float
    r_squared: float
    totals: dict = field(default_factory=dict)


def fit_scaling(records: list[BenchRecord]) -> ScalingFit:
    """Least-squares fit of total wall time vs morphology count over the
    multi_mem_n<n> rows.  Cycle 0 is warm-up and excluded."""
    totals: dict[int, float] = {}
    for rec in records:
        if not rec.scenario.startswith("multi_mem_n"):
            continue
        if rec.cycle == 0:
            continue
        n = int(rec.scenario[len("multi_mem_n"):])
        totals[n] = totals.get(n, 0.0) + rec.t_generate_ns + rec.t_optimize_ns
    if len(totals) < 2:
        raise DomainError("scaling fit needs rows for at least two n values")
    ns = np.array(sorted(totals))
    ts = np.array([totals[n] for n in ns])
    slope, intercept = np.polyfit(ns, ts, 1)
    pred = slope * ns + intercept
    ss_res = float(((ts - pred) ** 2).sum())
    ss_tot = float(((ts - ts.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return ScalingFit(float(slope), float(intercept), r2,
                      {int(n): float(totals[n]) for n in ns})


def memory_overhead_ratio(records: list[BenchRecord]) -> float:
    """Per-step train time of single_mem relative to single_nomem.
    Warm-up cycle excluded when later cycles exist."""
    def total(scenario: str) -> float:
        rows = [r for r in records if r.scenario == scenario]
        if not rows:
            raise DomainError(f"no benchmark rows for scenario {scenario!r}")
        warm = [r for r in rows if r.cycle > 0]
        rows = warm if warm else rows
        return sum(r.t_generate_ns + r.t_optimize_ns for r in rows) / len(rows)

    return total("single_mem") / total("single_nomem")
