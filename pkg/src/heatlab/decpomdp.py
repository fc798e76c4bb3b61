"""Decentralized POMDPs: exact evaluation, tiny-scale exhaustive search,
and independent per-agent learning.

A DecPomdp couples n agents through a joint transition and one shared
reward; each agent sees only its own observation channel Z_i(o_i | s', a_i).
Joint actions are indexed row-major with agent 0 most significant.

Episode convention: every entered state emits observations, including the
initial one, for which each agent's null action (index 0) conditions Z_i.
A local policy is therefore a depth-indexed decision tree: the action at
step t depends on the t+1 observations received so far.

evaluate_joint and brute_force are exact and pure.  dtde_train is the
decentralized alternative: each agent runs REINFORCE over a tabular
softmax policy on its own history nodes, sees only the shared reward as a
scalar signal, and optionally broadcasts one bit (its previous action mod
2) that is appended to the other agents' observations.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation, DomainError, SearchSpaceTooLargeError

PROB_ATOL = 1e-12


def _check_rows(name: str, arr: np.ndarray) -> None:
    if np.any(arr < -PROB_ATOL):
        raise ContractViolation(f"{name} has negative probabilities")
    sums = arr.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=PROB_ATOL, rtol=0.0):
        raise ContractViolation(f"{name} rows must sum to 1 within {PROB_ATOL}")


@dataclass
class DecPomdp:
    """n-agent common-reward Dec-POMDP with per-agent observation models.

    transition: (S, A_joint, S); reward: (S, A_joint);
    obs_models[i]: (S, |A_i|, |O_i|), conditioned on the entered state and
    agent i's own last action.
    """

    n_agents: int
    n_actions: tuple[int, ...]
    n_obs: tuple[int, ...]
    transition: np.ndarray
    reward: np.ndarray
    obs_models: list[np.ndarray]
    gamma: float
    initial: np.ndarray

    def __post_init__(self):
        if self.n_agents < 1 or len(self.n_actions) != self.n_agents \
                or len(self.n_obs) != self.n_agents \
                or len(self.obs_models) != self.n_agents:
            raise ContractViolation("agent count and per-agent lists disagree")
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        self.initial = np.asarray(self.initial, dtype=np.float64)
        self.obs_models = [np.asarray(z, dtype=np.float64) for z in self.obs_models]
        S = self.initial.shape[0]
        A = int(np.prod(self.n_actions))
        if self.transition.shape != (S, A, S) or self.reward.shape != (S, A):
            raise ContractViolation("transition/reward shapes do not match sizes")
        for i, z in enumerate(self.obs_models):
            if z.shape != (S, self.n_actions[i], self.n_obs[i]):
                raise ContractViolation(f"obs model {i} has wrong shape")
            _check_rows(f"obs model {i}", z)
        _check_rows("transition", self.transition)
        _check_rows("initial distribution", self.initial[None, :])
        if not np.all(np.isfinite(self.reward)):
            raise ContractViolation("rewards must be finite")
        if not (0.0 <= self.gamma <= 1.0):
            raise ContractViolation("gamma must lie in [0, 1]")

    @property
    def n_states(self) -> int:
        return self.initial.shape[0]

    @property
    def n_joint_actions(self) -> int:
        return int(np.prod(self.n_actions))

    def joint_index(self, actions: tuple[int, ...]) -> int:
        idx = 0
        for a, n in zip(actions, self.n_actions):
            idx = idx * n + a
        return idx


def history_node_count(n_obs: int, horizon: int) -> int:
    """Number of decision points of one agent: one per observation history
    of each length 1..horizon."""
    return sum(n_obs ** t for t in range(1, horizon + 1))


@dataclass
class LocalPolicy:
    """Deterministic decision tree for one agent.

    table is flat over histories ordered by depth then lexicographically
    within a depth; it is also the canonical encoding used for tie-breaks.
    """

    agent_id: int
    n_obs: int
    n_actions: int
    horizon: int
    table: np.ndarray

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.int64)
        expect = history_node_count(self.n_obs, self.horizon)
        if self.table.shape != (expect,):
            raise ContractViolation(
                f"policy table must cover all {expect} histories")
        if np.any(self.table < 0) or np.any(self.table >= self.n_actions):
            raise ContractViolation("policy table contains invalid actions")

    def node_index(self, history: tuple[int, ...]) -> int:
        t = len(history) - 1
        if not (0 <= t < self.horizon):
            raise ContractViolation("history length outside policy horizon")
        offset = sum(self.n_obs ** u for u in range(1, t + 1))
        flat = 0
        for o in history:
            flat = flat * self.n_obs + o
        return offset + flat

    def action_for(self, history: tuple[int, ...]) -> int:
        return int(self.table[self.node_index(history)])

    def encoding(self) -> tuple[int, ...]:
        return tuple(int(a) for a in self.table)


@dataclass
class JointPolicy:
    locals: list[LocalPolicy]

    def encoding(self) -> tuple[int, ...]:
        out: list[int] = []
        for lp in self.locals:
            out.extend(lp.encoding())
        return tuple(out)


def _forward_value(dec: DecPomdp, act_dist, horizon: int,
                   message_bits: int = 0) -> float:
    """Exact expected discounted shared reward by forward enumeration.

    act_dist(agent, history) must return a probability vector over that
    agent's actions.  With message_bits=1, each observation symbol seen by
    an agent is extended with the other agents' previous-action bits
    (symbol + base * packed_bits); initial bits are zero.
    """
    if horizon < 1:
        raise ContractViolation("horizon must be >= 1")
    n = dec.n_agents
    # layer maps (state, per-agent history tuples) -> probability weight
    layer: dict[tuple, float] = {}
    for s in np.flatnonzero(dec.initial > 0.0):
        obs_support = [np.flatnonzero(dec.obs_models[i][s, 0] > 0.0) for i in range(n)]
        for combo in itertools.product(*obs_support):
            w = float(dec.initial[s])
            for i, o in enumerate(combo):
                w *= float(dec.obs_models[i][s, 0, o])
            key = (int(s), tuple((int(o),) for o in combo))
            layer[key] = layer.get(key, 0.0) + w
    total = 0.0
    discount = 1.0
    for t in range(horizon):
        nxt: dict[tuple, float] = {}
        for (s, hists), w in layer.items():
            dists = [act_dist(i, hists[i]) for i in range(n)]
            supports = [np.flatnonzero(d > 0.0) for d in dists]
            for acts in itertools.product(*supports):
                pa = w
                for i, a in enumerate(acts):
                    pa *= float(dists[i][a])
                ja = dec.joint_index(acts)
                total += pa * discount * float(dec.reward[s, ja])
                if t + 1 >= horizon:
                    continue
                if message_bits:
                    bit_offsets = []
                    for i in range(n):
                        bits = 0
                        for j in range(n):
                            if j != i:
                                bits = bits * 2 + (acts[j] % 2)
                        bit_offsets.append(bits)
                for s2 in np.flatnonzero(dec.transition[s, ja] > 0.0):
                    ps = pa * float(dec.transition[s, ja, s2])
                    obs_support = [
                        np.flatnonzero(dec.obs_models[i][s2, acts[i]] > 0.0)
                        for i in range(n)]
                    for combo in itertools.product(*obs_support):
                        po = ps
                        for i, o in enumerate(combo):
                            po *= float(dec.obs_models[i][s2, acts[i], o])
                        syms = []
                        for i, o in enumerate(combo):
                            sym = int(o)
                            if message_bits:
                                sym += dec.n_obs[i] * bit_offsets[i]
                            syms.append(sym)
                        key = (int(s2), tuple(hists[i] + (syms[i],)
                                              for i in range(n)))
                        nxt[key] = nxt.get(key, 0.0) + po
        layer = nxt
        discount *= dec.gamma
    return total


def evaluate_joint(dec: DecPomdp, jp: JointPolicy, horizon: int) -> float:
    """Exact expected discounted shared return of a deterministic joint
    policy over the given horizon."""
    if len(jp.locals) != dec.n_agents:
        raise ContractViolation("joint policy agent count mismatch")

    def act_dist(i: int, history: tuple[int, ...]) -> np.ndarray:
        d = np.zeros(dec.n_actions[i])
        d[jp.locals[i].action_for(history)] = 1.0
        return d

    return _forward_value(dec, act_dist, horizon)


def brute_force(dec: DecPomdp, horizon: int,
                cap: int = 10 ** 7) -> tuple[JointPolicy, float]:
    """Enumerate every deterministic joint policy and return the maximizer.

    Ties go to the lowest lexicographic canonical encoding (agent 0's
    table first, depth order within each table).  Refuses instances whose
    joint policy count exceeds the cap.
    """
    node_counts = [history_node_count(dec.n_obs[i], horizon)
                   for i in range(dec.n_agents)]
    count = 1
    for i in range(dec.n_agents):
        count *= dec.n_actions[i] ** node_counts[i]
    if count > cap:
        raise SearchSpaceTooLargeError(
            f"instance too large for exact search: {count} joint policies "
            f"exceed the cap of {cap}")
    sizes: list[int] = []
    for i in range(dec.n_agents):
        sizes.extend([dec.n_actions[i]] * node_counts[i])
    best_jp = None
    best_v = -np.inf
    for assignment in itertools.product(*(range(sz) for sz in sizes)):
        locals_ = []
        pos = 0
        for i in range(dec.n_agents):
            tab = np.array(assignment[pos: pos + node_counts[i]], dtype=np.int64)
            locals_.append(LocalPolicy(i, dec.n_obs[i], dec.n_actions[i],
                                       horizon, tab))
            pos += node_counts[i]
        jp = JointPolicy(locals_)
        v = evaluate_joint(dec, jp, horizon)
        if v > best_v:
            best_v = v
            best_jp = jp
    return best_jp, float(best_v)


# ---------------------------------------------------------------------------
# Decentralized training (DTDE): independent REINFORCE learners.

DTDE_CURVE_HEADER = "episode,shared_return,agent_count,message_bits"


@dataclass
class LocalLearner:
    """Tabular-softmax stochastic policy over one agent's history nodes.

    The update function sees only (own history nodes, own actions, the
    scalar return signal, own parameters) — decentralization by interface.
    """

    agent_id: int
    n_actions: int
    logits: dict[tuple[int, ...], np.ndarray] = field(default_factory=dict)
    baseline: float = 0.0
    episodes_seen: int = 0

    def dist(self, history: tuple[int, ...]) -> np.ndarray:
        z = self.logits.get(history)
        if z is None:
            z = np.zeros(self.n_actions)
            self.logits[history] = z
        e = np.exp(z - z.max())
        return e / e.sum()

    def update(self, visited: list[tuple[tuple[int, ...], int]],
               episode_return: float, learning_rate: float) -> None:
        self.episodes_seen += 1
        advantage = episode_return - self.baseline
        self.baseline += (episode_return - self.baseline) / self.episodes_seen
        for history, action in visited:
            pi = self.dist(history)
            g = -pi
            g[action] += 1.0
            self.logits[history] += learning_rate * advantage * g


def dtde_train(dec: DecPomdp, config: dict) -> tuple[list[LocalLearner], list[dict]]:
    """Train independent per-agent learners on the shared reward.

    config keys: episodes (>= 1), learning_rate, message_bits in {0, 1},
    seed, horizon (default 1).  Returns the learners plus per-episode curve
    rows matching DTDE_CURVE_HEADER.
    """
    episodes = int(config["episodes"])
    lr = float(config["learning_rate"])
    message_bits = int(config.get("message_bits", 0))
    seed = int(config.get("seed", 0))
    horizon = int(config.get("horizon", 1))
    if episodes < 1:
        raise ContractViolation("episodes must be >= 1")
    if message_bits not in (0, 1):
        raise ContractViolation("message_bits must be 0 or 1")
    if horizon < 1:
        raise ContractViolation("horizon must be >= 1")
    rng = np.random.default_rng(seed)
    n = dec.n_agents
    learners = [LocalLearner(i, dec.n_actions[i]) for i in range(n)]
    rows = []
    for ep in range(episodes):
        s = int(rng.choice(dec.n_states, p=dec.initial))
        prev_bits = [0] * n
        hists: list[tuple[int, ...]] = [() for _ in range(n)]
        visited: list[list[tuple[tuple[int, ...], int]]] = [[] for _ in range(n)]
        # initial observation, conditioned on the null action
        for i in range(n):
            o = int(rng.choice(dec.n_obs[i], p=dec.obs_models[i][s, 0]))
            hists[i] = (_extend_symbol(dec, i, o, prev_bits, message_bits),)
        G = 0.0
        discount = 1.0
        for t in range(horizon):
            acts = []
            for i in range(n):
                d = learners[i].dist(hists[i])
                a = int(rng.choice(dec.n_actions[i], p=d))
                visited[i].append((hists[i], a))
                acts.append(a)
            ja = dec.joint_index(tuple(acts))
            G += discount * float(dec.reward[s, ja])
            discount *= dec.gamma
            if t + 1 >= horizon:
                break
            s = int(rng.choice(dec.n_states, p=dec.transition[s, ja]))
            prev_bits = [a % 2 for a in acts]
            for i in range(n):
                o = int(rng.choice(dec.n_obs[i], p=dec.obs_models[i][s, acts[i]]))
                hists[i] = hists[i] + (
                    _extend_symbol(dec, i, o, prev_bits, message_bits),)
        for i in range(n):
            learners[i].update(visited[i], G, lr)
        rows.append({"episode": ep, "shared_return": G,
                     "agent_count": n, "message_bits": message_bits})
    return learners, rows


def _extend_symbol(dec: DecPomdp, agent: int, obs: int, prev_bits: list[int],
                   message_bits: int) -> int:
    if not message_bits:
        return obs
    bits = 0
    for j in range(dec.n_agents):
        if j != agent:
            bits = bits * 2 + prev_bits[j]
    return obs + dec.n_obs[agent] * bits


def evaluate_stochastic(dec: DecPomdp, learners: list[LocalLearner],
                        horizon: int, message_bits: int = 0) -> float:
    """Exact expected shared return of the learners' stochastic policies
    (same observation-extension convention as dtde_train)."""
    if len(learners) != dec.n_agents:
        raise ContractViolation("learner count mismatch")
    return _forward_value(dec, lambda i, h: learners[i].dist(h), horizon,
                          message_bits=message_bits)


def write_curve_csv(path: str | Path, rows: list[dict]) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(DTDE_CURVE_HEADER.split(","))
        for row in rows:
            writer.writerow([row["episode"], repr(float(row["shared_return"])),
                             row["agent_count"], row["message_bits"]])


# ---------------------------------------------------------------------------
# Built-in instance and JSON I/O.

def build_meetsignal(obs_accuracy: float = 0.8) -> DecPomdp:
    """Two agents must both pick the side of a hidden fair coin.

    Each observes the coin correctly with probability obs_accuracy,
    independently.  Shared reward 1 iff both picks match the coin.  The
    coin never moves, so longer horizons just repeat the dilemma.
    """
    if not (0.0 <= obs_accuracy <= 1.0):
        raise ContractViolation("obs_accuracy must be a probability")
    S, A = 2, 2
    transition = np.zeros((S, A * A, S))
    for s in range(S):
        transition[s, :, s] = 1.0
    reward = np.zeros((S, A * A))
    for s in range(S):
        for a0 in range(A):
            for a1 in range(A):
                if a0 == s and a1 == s:
                    reward[s, a0 * A + a1] = 1.0
    z = np.zeros((S, A, 2))
    for s in range(S):
        z[s, :, s] = obs_accuracy
        z[s, :, 1 - s] = 1.0 - obs_accuracy
    return DecPomdp(n_agents=2, n_actions=(A, A), n_obs=(2, 2),
                    transition=transition, reward=reward,
                    obs_models=[z.copy(), z.copy()], gamma=1.0,
                    initial=np.array([0.5, 0.5]))


def save_decpomdp_json(dec: DecPomdp, path: str | Path) -> None:
    doc = {
        "n_agents": dec.n_agents,
        "n_actions": list(dec.n_actions),
        "n_obs": list(dec.n_obs),
        "gamma": dec.gamma,
        "initial": dec.initial.tolist(),
        "transition": dec.transition.tolist(),
        "reward": dec.reward.tolist(),
        "obs_models": [z.tolist() for z in dec.obs_models],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_decpomdp_json(path: str | Path) -> DecPomdp:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DomainError(f"{path} is not valid JSON: {exc}") from exc
    for key in ("n_agents", "n_actions", "n_obs", "gamma", "initial",
                "transition", "reward", "obs_models"):
        if key not in doc:
            raise DomainError(f"instance file missing field {key!r}")
    return DecPomdp(
        n_agents=int(doc["n_agents"]),
        n_actions=tuple(int(a) for a in doc["n_actions"]),
        n_obs=tuple(int(o) for o in doc["n_obs"]),
        transition=np.array(doc["transition"], dtype=np.float64),
        reward=np.array(doc["reward"], dtype=np.float64),
        obs_models=[np.array(z, dtype=np.float64) for z in doc["obs_models"]],
        gamma=float(doc["gamma"]),
        initial=np.array(doc["initial"], dtype=np.float64),
    )
