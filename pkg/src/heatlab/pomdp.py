"""Composite latent-morphology POMDP: composition, belief filtering, and
exact finite-horizon solving.

The hidden morphology index is encoded by block structure: global state
offsets[i] + s_local carries component i's local state, and transition
probability across blocks is identically zero.  Observations are emitted
by the successor state, so one shared observation table indexed by global
state covers every component.

The exact solver is a depth-first expectimax over beliefs: it retains
only the beliefs on the current path, so memory grows with depth rather
than with the number of reachable beliefs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import TabularMdp
from .errors import (
    ContractViolation,
    IncompatibleComponentsError,
    InconsistentObservationError,
)

PROB_ATOL = 1e-12
BELIEF_ATOL = 1e-9


@dataclass
class Belief:
    """Probability vector over the global states of a CompositePomdp."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if np.any(self.probs < 0):
            raise ContractViolation("belief entries must be nonnegative")
        if abs(self.probs.sum() - 1.0) > BELIEF_ATOL:
            raise ContractViolation(f"belief must sum to 1: {self.probs.sum()!r}")


@dataclass(frozen=True)
class ThresholdQuery:
    horizon: int
    threshold: float

    def __post_init__(self):
        if self.horizon < 1:
            raise ContractViolation("threshold query horizon must be >= 1")


@dataclass
class CompositePomdp:
    components: list[TabularMdp]
    prior: np.ndarray            # P(m) over components
    transition: np.ndarray       # (S_glob, A, S_glob), block diagonal
    reward: np.ndarray           # (S_glob, A)
    obs: np.ndarray              # (S_glob, n_obs)
    gamma: float
    offsets: list[int]
    n_actions: int
    n_obs: int
    initial_belief: np.ndarray

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    def belief(self) -> Belief:
        return Belief(self.initial_belief.copy())

    def component_of_state(self, s: int) -> int:
        idx = int(np.searchsorted(np.asarray(self.offsets), s, side="right") - 1)
        return idx


def _check_distribution(rows: np.ndarray, what: str) -> None:
    if np.any(rows < 0):
        raise ContractViolation(f"{what} entries must be nonnegative")
    sums = rows.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=PROB_ATOL, rtol=0.0):
        raise ContractViolation(f"every {what} row must sum to 1 within 1e-12")


def compose(
    mdps: list[TabularMdp],
    prior: np.ndarray,
    obs_map: list[np.ndarray],
) -> CompositePomdp:
    """Stack component MDPs into one POMDP with the morphology index hidden.

    obs_map gives, per component, an (S_i, n_obs) table of observation
    distributions over one alphabet shared by all components.  The initial
    belief places each component's prior mass on its initial state.
    """
    if len(mdps) == 0:
        raise IncompatibleComponentsError("need at least one component")
    prior = np.asarray(prior, dtype=np.float64)
    if prior.shape != (len(mdps),):
        raise IncompatibleComponentsError("prior length must match component count")
    _check_distribution(prior[None, :], "prior")
    n_actions = mdps[0].n_actions
    gamma = mdps[0].gamma
    if any(m.n_actions != n_actions for m in mdps):
        raise IncompatibleComponentsError("incompatible components: action counts differ")
    if any(m.gamma != gamma for m in mdps):
        raise IncompatibleComponentsError("incompatible components: discounts differ")
    if len(obs_map) != len(mdps):
        raise IncompatibleComponentsError("obs_map length must match component count")
    n_obs = np.asarray(obs_map[0]).shape[1]
    offsets = []
    total = 0
    for m in mdps:
        offsets.append(total)
        total += m.n_states
    T = np.zeros((total, n_actions, total))
    R = np.zeros((total, n_actions))
    O = np.zeros((total, n_obs))
    b0 = np.zeros(total)
    for i, (m, off) in enumerate(zip(mdps, offsets)):
        rows = np.asarray(obs_map[i], dtype=np.float64)
        if rows.shape != (m.n_states, n_obs):
            raise IncompatibleComponentsError(
                f"component {i} observation table has shape {rows.shape}, "
                f"expected ({m.n_states}, {n_obs})"
            )
        _check_distribution(rows, "observation")
        sl = slice(off, off + m.n_states)
        T[sl, :, sl] = m.transition
        R[sl, :] = m.reward
        O[sl, :] = rows
        b0[off + m.initial_state] = prior[i]
    return CompositePomdp(
        components=list(mdps),
        prior=prior,
        transition=T,
        reward=R,
        obs=O,
        gamma=gamma,
        offsets=offsets,
        n_actions=n_actions,
        n_obs=n_obs,
        initial_belief=b0,
    )


def outcome_obs_map(mdps: list[TabularMdp]) -> list[np.ndarray]:
    """Shared 5-symbol observation model for GaitChain components: each
    state deterministically emits its last-outcome symbol."""
    from .env import N_OUTCOMES, outcome_of_state

    tables = []
    for m in mdps:
        rows = np.zeros((m.n_states, N_OUTCOMES))
        for s in range(m.n_states):
            rows[s, outcome_of_state(s)] = 1.0
        tables.append(rows)
    return tables


def revealing_obs_map(mdps: list[TabularMdp]) -> list[np.ndarray]:
    """Observation model that also reveals the morphology index: symbol
    (i, outcome) flattened to i * 5 + outcome.  Makes the morphology
    observable at every step."""
    from .env import N_OUTCOMES, outcome_of_state

    n_obs = len(mdps) * N_OUTCOMES
    tables = []
    for i, m in enumerate(mdps):
        rows = np.zeros((m.n_states, n_obs))
        for s in range(m.n_states):
            rows[s, i * N_OUTCOMES + outcome_of_state(s)] = 1.0
        tables.append(rows)
    return tables


def compose_gaitchain(
    mdps: list[TabularMdp],
    prior: np.ndarray | None = None,
    reveal_morphology: bool = False,
) -> CompositePomdp:
    """Convenience composer for GaitChain families with the standard
    outcome observation alphabet (optionally morphology-revealing)."""
    if prior is None:
        prior = np.full(len(mdps), 1.0 / len(mdps))
    obs_map = revealing_obs_map(mdps) if reveal_morphology else outcome_obs_map(mdps)
    return compose(mdps, prior, obs_map)


def belief_update(
    p: CompositePomdp, b: Belief, a: int, o: int
) -> tuple[Belief, float]:
    """Bayes filter step: posterior over successors given action a and
    observation o, plus the observation likelihood Pr(o | b, a)."""
    if not (0 <= a < p.n_actions) or not (0 <= o < p.n_obs):
        raise ContractViolation(f"action/observation out of range: a={a} o={o}")
    pred = b.probs @ p.transition[:, a, :]          # sum_s T(s'|s,a) b(s)
    unnorm = p.obs[:, o] * pred
    likelihood = float(unnorm.sum())
    if likelihood <= 0.0:
        raise InconsistentObservationError(
            f"inconsistent observation: o={o} has zero likelihood after action {a}"
        )
    return Belief(unnorm / likelihood), likelihood


def _dfs_value(
    p: CompositePomdp,
    b: np.ndarray,
    depth: int,
    memo: dict | None,
) -> float:
    if depth == 0:
        return 0.0
    if memo is not None:
        key = (depth, tuple(np.round(b, 12)))
        hit = memo.get(key)
        if hit is not None:
            return hit
    best = -np.inf
    for a in range(p.n_actions):
        value = float(b @ p.reward[:, a])
        if depth > 1:
            pred = b @ p.transition[:, a, :]
            for o in range(p.n_obs):
                unnorm = p.obs[:, o] * pred
                lik = unnorm.sum()
                if lik <= 0.0:
                    continue
                value += p.gamma * lik * _dfs_value(p, unnorm / lik, depth - 1, memo)
        if value > best:  # strict: ties keep the lowest action index
            best = value
    if memo is not None:
        memo[key] = best
    return best


def exact_value(
    p: CompositePomdp,
    b0: Belief | None,
    horizon: int,
    use_memo: bool = False,
) -> float:
    """Optimal expected discounted return over `horizon` steps from b0
    (the composite's initial belief when b0 is None).

    Depth-first expectimax over beliefs; only the current path's beliefs
    are kept.  use_memo enables a transposition table keyed by the belief
    rounded to 1e-12 and the remaining depth - an engineering speedup that
    does not change results beyond that rounding.
    """
    if horizon < 0:
        raise ContractViolation("horizon must be >= 0")
    b = p.initial_belief if b0 is None else b0.probs
    memo: dict | None = {} if use_memo else None
    return _dfs_value(p, np.asarray(b, dtype=np.float64), horizon, memo)


def decide_threshold(
    p: CompositePomdp, q: ThresholdQuery, b0: Belief | None = None
) -> tuple[bool, float]:
    """HEAT threshold decision: is the optimal value at least q.threshold?
    A 1e-9 slack absorbs float rounding at the boundary."""
    v = exact_value(p, b0, q.horizon)
    return bool(v >= q.threshold - 1e-9), v


def solve_observable(
    mdps: list[TabularMdp], prior: np.ndarray | None, horizon: int
) -> float:
    """Optimal value when the morphology index is observable every step:
    the problem decomposes into one ordinary dynamic program per
    component, mixed under the prior (uniform when None)."""
    from .env import dp_optimal_value

    if prior is None:
        prior = np.full(len(mdps), 1.0 / len(mdps))
    prior = np.asarray(prior, dtype=np.float64)
    if prior.shape != (len(mdps),):
        raise IncompatibleComponentsError("prior length must match component count")
    total = 0.0
    for w, m in zip(prior, mdps):
        v, _ = dp_optimal_value(m, horizon)
        total += float(w) * v
    return total


# ---------------------------------------------------------------------------
# Standalone POMDP embedding (the n=1 construction)


def embed_pomdp(
    transition: np.ndarray,
    reward: np.ndarray,
    obs: np.ndarray,
    gamma: float,
    initial: np.ndarray,
) -> CompositePomdp:
    """Wrap a standalone POMDP as a single-component composite.

    The embedding preserves optimal values: solving the composite at any
    horizon gives exactly the original POMDP's optimal value.
    """
    transition = np.asarray(transition, dtype=np.float64)
    reward = np.asarray(reward, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    initial = np.asarray(initial, dtype=np.float64)
    if transition.ndim != 3 or transition.shape[0] != transition.shape[2]:
        raise ContractViolation(f"transition must be (S, A, S): got {transition.shape}")
    S, A, _ = transition.shape
    if reward.shape != (S, A):
        raise ContractViolation(f"reward must be (S, A): got {reward.shape}")
    if obs.ndim != 2 or obs.shape[0] != S:
        raise ContractViolation(f"observation must be (S, n_obs): got {obs.shape}")
    if initial.shape != (S,):
        raise ContractViolation(f"initial must be length {S}: got {initial.shape}")
    _check_distribution(initial[None, :], "initial")
    mdp = TabularMdp(
        n_states=S,
        n_actions=A,
        transition=transition,
        reward=reward,
        gamma=gamma,
        initial_state=int(np.argmax(initial)),
        morphology_id=0,
    )
    composite = compose([mdp], np.array([1.0]), [obs])
    composite.initial_belief = initial.copy()
    return composite


def load_pomdp_json(path: str | Path) -> CompositePomdp:
    """Read a standalone POMDP description (UTF-8 JSON) and embed it.

    Schema: {"gamma": float, "initial": [S], "transition": [S][A][S],
    "reward": [S][A], "observation": [S][O]}.  See instances/tiger.json.
    """
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    for key in ("transition", "reward", "observation", "gamma", "initial"):
        if key not in doc:
            raise ContractViolation(f"POMDP file missing required field '{key}'")
    return embed_pomdp(
        transition=np.array(doc["transition"], dtype=np.float64),
        reward=np.array(doc["reward"], dtype=np.float64),
        obs=np.array(doc["observation"], dtype=np.float64),
        gamma=float(doc["gamma"]),
        initial=np.array(doc["initial"], dtype=np.float64),
    )
