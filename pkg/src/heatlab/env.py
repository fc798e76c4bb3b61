"""GaitChain morphology family compiled to explicit tabular MDPs.

A morphology is a subset of joint slots (a JointMask).  The agent must
toggle the present joints in mask order to complete gait cycles; toggling
an absent joint fails, toggling a present-but-out-of-order joint resets
the gait.  Because "failed" covers both actuator noise on the correct
joint and absent joints, a controller can only tell the two apart
statistically, which is what forces genuine morphology inference when
the mask is hidden.

State encoding: s = cursor * 5 + outcome, with outcome one of OUTCOMES.
The last outcome is folded into the state so a state-conditioned
observation model can expose it directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation, FamilyTooLargeError

OUTCOMES = ("idle", "failed", "reset", "advanced", "cycle")
IDLE, FAILED, RESET, ADVANCED, CYCLE = range(5)
N_OUTCOMES = len(OUTCOMES)


def state_index(cursor: int, outcome: int) -> int:
    return cursor * N_OUTCOMES + outcome


def state_parts(s: int) -> tuple[int, int]:
    """Inverse of state_index: (cursor, outcome)."""
    return divmod(s, N_OUTCOMES)


@dataclass(frozen=True)
class JointMask:
    """Ordered set of present joint slots, 1-based, within 1..kmax."""

    present: tuple[int, ...]
    kmax: int = 5

    def __post_init__(self):
        if len(self.present) == 0:
            raise ContractViolation("mask must contain at least one joint slot")
        if list(self.present) != sorted(set(self.present)):
            raise ContractViolation(f"mask slots must be strictly increasing: {self.present}")
        if self.present[0] < 1 or self.present[-1] > self.kmax:
            raise ContractViolation(
                f"mask slots {self.present} out of range 1..{self.kmax}"
            )

    @property
    def k(self) -> int:
        return len(self.present)

    def bitcode(self) -> int:
        """Stable integer tag: bit (slot-1) set for each present slot."""
        code = 0
        for slot in self.present:
            code |= 1 << (slot - 1)
        return code


@dataclass(frozen=True)
class GaitChainParams:
    kmax: int = 5
    fail_prob: float = 0.1
    reset_penalty: float = 0.0
    cycle_reward: float = 1.0
    gamma: float = 0.95
    episode_len: int = 100

    def __post_init__(self):
        if not (0.0 <= self.fail_prob < 1.0):
            raise ContractViolation(f"fail_prob must be in [0,1): {self.fail_prob}")
        if not (0.0 <= self.gamma < 1.0):
            raise ContractViolation(f"gamma must be in [0,1): {self.gamma}")
        if self.episode_len < 1:
            raise ContractViolation(f"episode_len must be >= 1: {self.episode_len}")
        if self.kmax < 1:
            raise ContractViolation(f"kmax must be positive: {self.kmax}")

    def to_dict(self) -> dict:
        return {
            "kmax": self.kmax,
            "fail_prob": self.fail_prob,
            "reset_penalty": self.reset_penalty,
            "cycle_reward": self.cycle_reward,
            "gamma": self.gamma,
            "episode_len": self.episode_len,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaitChainParams":
        return cls(**d)


@dataclass
class TabularMdp:
    """Explicit <S, A, T, R, gamma> arrays for one morphology.

    transition[s, a] is a probability vector over successor states;
    reward[s, a] is the expected immediate reward of taking a in s.
    """

    n_states: int
    n_actions: int
    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray      # (S, A)
    gamma: float
    initial_state: int = 0
    morphology_id: int = 0

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        if self.transition.shape != (self.n_states, self.n_actions, self.n_states):
            raise ContractViolation(
                f"transition shape {self.transition.shape} != "
                f"({self.n_states}, {self.n_actions}, {self.n_states})"
            )
        if self.reward.shape != (self.n_states, self.n_actions):
            raise ContractViolation(
                f"reward shape {self.reward.shape} != ({self.n_states}, {self.n_actions})"
            )
        if np.any(self.transition < 0):
            raise ContractViolation("transition probabilities must be nonnegative")
        row_sums = self.transition.sum(axis=-1)
        if not np.allclose(row_sums, 1.0, atol=1e-12, rtol=0.0):
            raise ContractViolation("every transition row must sum to 1 within 1e-12")
        if not np.all(np.isfinite(self.reward)):
            raise ContractViolation("rewards must be finite")
        if not (0 <= self.initial_state < self.n_states):
            raise ContractViolation("initial_state out of range")


@dataclass
class FamilyManifest:
    kmax: int
    params: GaitChainParams
    train_masks: list[JointMask]
    eval_masks: list[JointMask]
    seed: int

    def __post_init__(self):
        train = {m.present for m in self.train_masks}
        evals = {m.present for m in self.eval_masks}
        if train & evals:
            raise ContractViolation("train and eval mask sets must be disjoint")

    def to_dict(self) -> dict:
        # Canonical key order; golden-file tested.
        return {
            "kmax": self.kmax,
            "params": self.params.to_dict(),
            "train_masks": [list(m.present) for m in self.train_masks],
            "eval_masks": [list(m.present) for m in self.eval_masks],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FamilyManifest":
        params = GaitChainParams.from_dict(doc["params"])
        kmax = doc["kmax"]
        return cls(
            kmax=kmax,
            params=params,
            train_masks=[JointMask(tuple(m), kmax) for m in doc["train_masks"]],
            eval_masks=[JointMask(tuple(m), kmax) for m in doc["eval_masks"]],
            seed=doc["seed"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "FamilyManifest":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FamilyManifest":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _mask_from_code(code: int, kmax: int) -> JointMask:
    slots = tuple(slot for slot in range(1, kmax + 1) if code & (1 << (slot - 1)))
    return JointMask(slots, kmax)


def generate_family(
    kmax: int,
    n_train: int,
    n_eval: int,
    seed: int,
    params: GaitChainParams | None = None,
) -> FamilyManifest:
    """Sample n_train + n_eval distinct masks uniformly without replacement
    from the non-empty subsets of {1..kmax}.  Deterministic per seed."""
    total = (1 << kmax) - 1
    need = n_train + n_eval
    if n_train < 0 or n_eval < 0:
        raise ContractViolation("mask counts must be nonnegative")
    if need > total:
        raise FamilyTooLargeError(
            f"family too large for kmax: requested {need} masks but only "
            f"{total} non-empty subsets of {kmax} slots exist"
        )
    rng = np.random.default_rng(seed)
    codes: list[int] = []
    seen: set[int] = set()
    # Rejection sampling keeps memory flat for large kmax; draws stay uniform
    # without replacement because repeats are simply discarded.
    while len(codes) < need:
        c = int(rng.integers(1, total + 1))
        if c not in seen:
            seen.add(c)
            codes.append(c)
    masks = [_mask_from_code(c, kmax) for c in codes]
    if params is None:
        params = GaitChainParams(kmax=kmax)
    elif params.kmax != kmax:
        raise ContractViolation("params.kmax must match the family kmax")
    return FamilyManifest(
        kmax=kmax,
        params=params,
        train_masks=masks[:n_train],
        eval_masks=masks[n_train:],
        seed=seed,
    )


def compile_mdp(mask: JointMask, params: GaitChainParams) -> TabularMdp:
    """Compile one morphology into explicit transition/reward tables.

    The action space is shared across every morphology with the same kmax:
    actions 0..kmax-1 toggle slot a+1, action kmax is a no-op.  Rewards are
    expected immediate rewards, so the cycle reward is scaled by the
    success probability on the completing toggle.
    """
    if mask.kmax != params.kmax:
        raise ContractViolation("mask.kmax must match params.kmax")
    k = mask.k
    n_states = N_OUTCOMES * k
    n_actions = params.kmax + 1
    eps = params.fail_prob
    T = np.zeros((n_states, n_actions, n_states))
    R = np.zeros((n_states, n_actions))
    present = set(mask.present)
    for c in range(k):
        correct = mask.present[c]
        for u in range(N_OUTCOMES):
            s = state_index(c, u)
            for a in range(n_actions):
                if a == params.kmax:  # noop
                    T[s, a, state_index(c, IDLE)] = 1.0
                    continue
                slot = a + 1
                if slot not in present:
                    T[s, a, state_index(c, FAILED)] = 1.0
                elif slot == correct:
                    if c + 1 == k:
                        T[s, a, state_index(0, CYCLE)] = 1.0 - eps
                        R[s, a] = (1.0 - eps) * params.cycle_reward
                    else:
                        T[s, a, state_index(c + 1, ADVANCED)] = 1.0 - eps
                    T[s, a, state_index(c, FAILED)] += eps
                else:  # present but out of order
                    T[s, a, state_index(0, RESET)] = 1.0
                    R[s, a] = params.reset_penalty
    return TabularMdp(
        n_states=n_states,
        n_actions=n_actions,
        transition=T,
        reward=R,
        gamma=params.gamma,
        initial_state=state_index(0, IDLE),
        morphology_id=mask.bitcode(),
    )


def compile_family(manifest: FamilyManifest, split: str = "train") -> list[TabularMdp]:
    masks = manifest.train_masks if split == "train" else manifest.eval_masks
    return [compile_mdp(m, manifest.params) for m in masks]


def outcome_of_state(s: int) -> int:
    """Observation symbol emitted by a GaitChain state (its last outcome)."""
    return s % N_OUTCOMES


def mdp_step(
    mdp: TabularMdp, s: int, a: int, rng: np.random.Generator
) -> tuple[int, float]:
    """Sample one transition.  Mutates only the caller-supplied rng."""
    if not (0 <= s < mdp.n_states) or not (0 <= a < mdp.n_actions):
        raise ContractViolation(f"state/action index out of range: s={s} a={a}")
    row = mdp.transition[s, a]
    nxt = int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))
    nxt = min(nxt, mdp.n_states - 1)  # guard against cumsum rounding at 1.0
    return nxt, float(mdp.reward[s, a])


def dp_optimal_value(mdp: TabularMdp, horizon: int) -> tuple[float, np.ndarray]:
    """Exact finite-horizon discounted optimal value from the initial state.

    Backward induction; returns (value, greedy) where greedy[t, s] is the
    optimal action at stage t with horizon-t steps remaining.  Ties break
    to the lowest action index.
    """
    if horizon < 0:
        raise ContractViolation("horizon must be >= 0")
    S = mdp.n_states
    V = np.zeros(S)
    stages = []
    for _ in range(horizon):
        Q = mdp.reward + mdp.gamma * np.tensordot(mdp.transition, V, axes=([2], [0]))
        best = np.argmax(Q, axis=1)  # argmax takes the first maximizer
        V = Q[np.arange(S), best]
        stages.append(best)
    greedy = np.array(stages[::-1], dtype=int) if stages else np.zeros((0, S), dtype=int)
    return float(V[mdp.initial_state]), greedy
