"""Unified memory-based policies with hand-derived gradients.

Three architectures share one interface:

  recurrent    tanh recurrence h_t = tanh(W_h h_{t-1} + W_x x_t + b) with a
               softmax action head and a linear value head on h_t.
  modular      one weight-shared cell per joint slot along the chain, each
               with local memory; coordination messages sweep root-to-leaf
               then leaf-to-root every step; per-slot logits are summed
               into the shared action space.  Absent slots emit zero
               messages and keep zero memory.
  feedforward  the memory-free baseline: same heads on tanh(W_x x_t + b).

Parameters live in one flat float64 vector (theta); the named weight
matrices are views into it, so coordinate-wise perturbation and wholesale
updates both work without copying.

Gradients are backpropagation through time over the full episode, written
out by hand and checked against central finite differences.  The training
loss for a trajectory with discounted returns-to-go G_t is

    L = -sum_t A_t * log pi(a_t) + c_v * sum_t (G_t - v_t)^2

with A_t = G_t - v_t held constant in the first term (the score-function
baseline is not differentiated through), plus an optional entropy bonus.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation

CHECKPOINT_MAGIC = b"HEATPOL1"
VALUE_COEF = 0.5
ENTROPY_COEF = 0.01  # only applied when entropy is enabled


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Returns-to-go G_t = sum_{u>=t} gamma^(u-t) r_u."""
    G = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        G[t] = acc
    return G


@dataclass
class PolicyStepOutput:
    action_dist: np.ndarray
    value_est: float
    next_hidden: np.ndarray


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class BasePolicy:
    """Common parameter-vector plumbing; subclasses define the layout."""

    arch: str = ""

    def __init__(self, obs_alphabet: int, n_actions: int, seed: int):
        if obs_alphabet < 1 or n_actions < 1:
            raise ContractViolation("obs_alphabet and n_actions must be positive")
        self.obs_alphabet = obs_alphabet
        self.n_actions = n_actions
        self.seed = seed
        self.theta_version = 0
        self.theta: np.ndarray = np.zeros(0)
        self._views: dict[str, np.ndarray] = {}

    # layout: ordered (name, shape, fan_in or None for biases)
    def _layout(self) -> list[tuple[str, tuple[int, ...], int | None]]:
        raise NotImplementedError

    def _allocate(self, rng: np.random.Generator | None) -> None:
        layout = self._layout()
        total = sum(int(np.prod(shape)) for _, shape, _ in layout)
        self.theta = np.zeros(total)
        self._views = {}
        pos = 0
        for name, shape, fan_in in layout:
            n = int(np.prod(shape))
            view = self.theta[pos : pos + n].reshape(shape)
            if rng is not None and fan_in is not None:
                view[...] = _uniform_init(rng, shape, fan_in)
            self._views[name] = view
            pos += n

    def __getattr__(self, name: str) -> np.ndarray:
        views = self.__dict__.get("_views", {})
        if name in views:
            return views[name]
        raise AttributeError(name)

    @property
    def param_count(self) -> int:
        return self.theta.size

    @property
    def hidden_dim(self) -> int:
        return 0

    def initial_hidden(self) -> np.ndarray:
        return np.zeros(self.hidden_dim)

    def apply_update(self, delta: np.ndarray) -> None:
        """Replace theta by theta + delta and bump the version counter."""
        if delta.shape != self.theta.shape:
            raise ContractViolation("update shape mismatch")
        self.theta += delta
        self.theta_version += 1

    def set_theta(self, theta: np.ndarray, bump_version: bool = True) -> None:
        if theta.shape != self.theta.shape:
            raise ContractViolation("theta shape mismatch")
        self.theta[...] = theta
        if bump_version:
            self.theta_version += 1

    def clone(self) -> "BasePolicy":
        other = init_policy(self.arch, seed=self.seed, **self.size_kwargs())
        other.set_theta(self.theta, bump_version=False)
        other.theta_version = self.theta_version
        if self.arch == "modular":
            other.active_slots = self.active_slots
        return other

    def size_kwargs(self) -> dict:
        raise NotImplementedError

    def step(self, obs: int, hidden: np.ndarray) -> PolicyStepOutput:
        raise NotImplementedError

    def _check_obs(self, obs: int) -> None:
        if not (0 <= obs < self.obs_alphabet):
            raise ContractViolation(f"observation {obs} outside alphabet")


class RecurrentPolicy(BasePolicy):
    arch = "recurrent"

    def __init__(self, obs_alphabet: int, n_actions: int, hidden_width: int = 16,
                 seed: int = 0):
        super().__init__(obs_alphabet, n_actions, seed)
        if hidden_width < 1:
            raise ContractViolation("hidden_width must be positive")
        self.hidden_width = hidden_width
        self._allocate(np.random.default_rng(seed))

    def _layout(self):
        H, X, A = self.hidden_width, self.obs_alphabet, self.n_actions
        return [
            ("W_h", (H, H), H),
            ("W_x", (H, X), X),
            ("b", (H,), None),
            ("W_a", (A, H), H),
            ("w_v", (H,), H),
        ]

    def size_kwargs(self) -> dict:
        return {
            "obs_alphabet": self.obs_alphabet,
            "n_actions": self.n_actions,
            "hidden_width": self.hidden_width,
        }

    @property
    def hidden_dim(self) -> int:
        return self.hidden_width

    def step(self, obs: int, hidden: np.ndarray) -> PolicyStepOutput:
        self._check_obs(obs)
        if hidden.shape != (self.hidden_width,):
            raise ContractViolation("hidden state width mismatch")
        h = np.tanh(self.W_h @ hidden + self.W_x[:, obs] + self.b)
        dist = softmax(self.W_a @ h)
        return PolicyStepOutput(dist, float(self.w_v @ h), h)

    def _episode_forward(self, observations: np.ndarray, slots=None) -> dict:
        T = len(observations)
        H = self.hidden_width
        hiddens = np.zeros((T, H))
        dists = np.zeros((T, self.n_actions))
        values = np.zeros(T)
        h = np.zeros(H)
        for t in range(T):
            h = np.tanh(self.W_h @ h + self.W_x[:, observations[t]] + self.b)
            hiddens[t] = h
            dists[t] = softmax(self.W_a @ h)
            values[t] = self.w_v @ h
        return {"hiddens": hiddens, "dists": dists, "values": values,
                "observations": observations}

    def _episode_backward(self, fwd: dict, dlogits: np.ndarray, dvalues: np.ndarray) -> np.ndarray:
        T = dlogits.shape[0]
        hiddens, obs = fwd["hiddens"], fwd["observations"]
        gW_h = np.zeros_like(self.W_h)
        gW_x = np.zeros_like(self.W_x)
        gb = np.zeros_like(self.b)
        gW_a = np.zeros_like(self.W_a)
        gw_v = np.zeros_like(self.w_v)
        carry = np.zeros(self.hidden_width)
        for t in range(T - 1, -1, -1):
            h = hiddens[t]
            h_prev = hiddens[t - 1] if t > 0 else np.zeros(self.hidden_width)
            dh = self.W_a.T @ dlogits[t] + dvalues[t] * self.w_v + carry
            dz = dh * (1.0 - h * h)
            gW_h += np.outer(dz, h_prev)
            gW_x[:, obs[t]] += dz
            gb += dz
            gW_a += np.outer(dlogits[t], h)
            gw_v += dvalues[t] * h
            carry = self.W_h.T @ dz
        return self._flatten_grads({"W_h": gW_h, "W_x": gW_x, "b": gb,
                                    "W_a": gW_a, "w_v": gw_v})

    def _flatten_grads(self, grads: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([grads[name].ravel() for name, _, _ in self._layout()])


class FeedforwardPolicy(BasePolicy):
    """Memory-free baseline: same heads, no recurrence, no hidden state."""

    arch = "feedforward"

    def __init__(self, obs_alphabet: int, n_actions: int, hidden_width: int = 16,
                 seed: int = 0):
        super().__init__(obs_alphabet, n_actions, seed)
        if hidden_width < 1:
            raise ContractViolation("hidden_width must be positive")
        self.hidden_width = hidden_width
        self._allocate(np.random.default_rng(seed))

    def _layout(self):
        H, X, A = self.hidden_width, self.obs_alphabet, self.n_actions
        return [
            ("W_x", (H, X), X),
            ("b", (H,), None),
            ("W_a", (A, H), H),
            ("w_v", (H,), H),
        ]

    def size_kwargs(self) -> dict:
        return {
            "obs_alphabet": self.obs_alphabet,
            "n_actions": self.n_actions,
            "hidden_width": self.hidden_width,
        }

    def step(self, obs: int, hidden: np.ndarray) -> PolicyStepOutput:
        self._check_obs(obs)
        h = np.tanh(self.W_x[:, obs] + self.b)
        dist = softmax(self.W_a @ h)
        return PolicyStepOutput(dist, float(self.w_v @ h), np.zeros(0))

    def _episode_forward(self, observations: np.ndarray, slots=None) -> dict:
        # No step-to-step dependency, so the whole episode runs as one batch.
        Z = self.W_x[:, observations].T + self.b
        H_mat = np.tanh(Z)
        logits = H_mat @ self.W_a.T
        dists = softmax(logits)
        values = H_mat @ self.w_v
        return {"H_mat": H_mat, "dists": dists, "values": values,
                "observations": observations,
                "hiddens": np.zeros((len(observations), 0))}

    def _episode_backward(self, fwd: dict, dlogits: np.ndarray, dvalues: np.ndarray) -> np.ndarray:
        H_mat, obs = fwd["H_mat"], fwd["observations"]
        dH = dlogits @ self.W_a + dvalues[:, None] * self.w_v
        dZ = dH * (1.0 - H_mat * H_mat)
        gW_x = np.zeros_like(self.W_x)
        np.add.at(gW_x.T, obs, dZ)
        gb = dZ.sum(axis=0)
        gW_a = dlogits.T @ H_mat
        gw_v = dvalues @ H_mat
        return np.concatenate([gW_x.ravel(), gb.ravel(), gW_a.ravel(), gw_v.ravel()])


class ModularPolicy(BasePolicy):
    """Chain of weight-shared per-slot cells with local memory.

    Each step: a root-to-leaf sweep computes downward messages d_i, a
    leaf-to-root sweep computes upward messages u_i, then each present
    slot updates its local memory and contributes logits W_o u_i and a
    value term w_v . u_i.  The slot identity enters as a one-hot input so
    shared weights can still specialize per position.
    """

    arch = "modular"

    def __init__(self, obs_alphabet: int, n_actions: int, kmax: int = 5,
                 per_slot_memory_width: int = 8, message_width: int = 8,
                 seed: int = 0):
        super().__init__(obs_alphabet, n_actions, seed)
        if kmax < 1 or per_slot_memory_width < 1 or message_width < 1:
            raise ContractViolation("modular sizes must be positive")
        self.kmax = kmax
        self.mem_width = per_slot_memory_width
        self.msg_width = message_width
        self.active_slots: tuple[int, ...] = tuple(range(1, kmax + 1))
        self._allocate(np.random.default_rng(seed))

    def _layout(self):
        X, K, P, Q, A = (self.obs_alphabet, self.kmax, self.mem_width,
                         self.msg_width, self.n_actions)
        in_d = X + K + P + Q
        in_u = X + K + P + 2 * Q
        in_m = X + K + P + 2 * Q
        return [
            ("W_d", (Q, in_d), in_d),
            ("b_d", (Q,), None),
            ("W_u", (Q, in_u), in_u),
            ("b_u", (Q,), None),
            ("W_m", (P, in_m), in_m),
            ("b_m", (P,), None),
            ("W_o", (A, Q), Q),
            ("w_v", (Q,), Q),
        ]

    def size_kwargs(self) -> dict:
        return {
            "obs_alphabet": self.obs_alphabet,
            "n_actions": self.n_actions,
            "kmax": self.kmax,
            "per_slot_memory_width": self.mem_width,
            "message_width": self.msg_width,
        }

    @property
    def hidden_dim(self) -> int:
        return self.kmax * self.mem_width

    def set_active_slots(self, slots: tuple[int, ...]) -> None:
        if any(not (1 <= s <= self.kmax) for s in slots) or len(slots) == 0:
            raise ContractViolation(f"invalid slot set {slots}")
        self.active_slots = tuple(sorted(slots))

    def _slot_input(self, x: np.ndarray, i: int, mem: np.ndarray, *msgs: np.ndarray) -> np.ndarray:
        e = np.zeros(self.kmax)
        e[i - 1] = 1.0
        return np.concatenate([x, e, mem] + list(msgs))

    def _sweep(self, x: np.ndarray, mems: np.ndarray, present: set[int]):
        """One message-passing step.  Returns (d, u, new_mems, inputs)."""
        K, Q, P = self.kmax, self.msg_width, self.mem_width
        d = np.zeros((K + 1, Q))   # d[i] is slot i's downward message; d[0] is the root input
        u = np.zeros((K + 2, Q))   # u[i] upward; u[K+1] is the leaf-side input
        in_d = [None] * (K + 1)
        in_u = [None] * (K + 1)
        in_m = [None] * (K + 1)
        for i in range(1, K + 1):
            if i in present:
                in_d[i] = self._slot_input(x, i, mems[i - 1], d[i - 1])
                d[i] = np.tanh(self.W_d @ in_d[i] + self.b_d)
        for i in range(K, 0, -1):
            if i in present:
                in_u[i] = self._slot_input(x, i, mems[i - 1], d[i], u[i + 1])
                u[i] = np.tanh(self.W_u @ in_u[i] + self.b_u)
        new_mems = np.zeros_like(mems)
        for i in range(1, K + 1):
            if i in present:
                in_m[i] = self._slot_input(x, i, mems[i - 1], d[i], u[i])
                new_mems[i - 1] = np.tanh(self.W_m @ in_m[i] + self.b_m)
        return d, u, new_mems, (in_d, in_u, in_m)

    def step(self, obs: int, hidden: np.ndarray) -> PolicyStepOutput:
        self._check_obs(obs)
        if hidden.shape != (self.hidden_dim,):
            raise ContractViolation("hidden state width mismatch")
        x = np.zeros(self.obs_alphabet)
        x[obs] = 1.0
        mems = hidden.reshape(self.kmax, self.mem_width)
        present = set(self.active_slots)
        d, u, new_mems, _ = self._sweep(x, mems, present)
        logits = np.zeros(self.n_actions)
        value = 0.0
        for i in present:
            logits += self.W_o @ u[i]
            value += float(self.w_v @ u[i])
        return PolicyStepOutput(softmax(logits), value, new_mems.ravel())

    def messages_for(self, obs: int, hidden: np.ndarray) -> np.ndarray:
        """Upward message of every slot for one step (zeros when absent)."""
        self._check_obs(obs)
        x = np.zeros(self.obs_alphabet)
        x[obs] = 1.0
        mems = hidden.reshape(self.kmax, self.mem_width)
        _, u, _, _ = self._sweep(x, mems, set(self.active_slots))
        return u[1 : self.kmax + 1].copy()

    def _episode_forward(self, observations: np.ndarray, slots=None) -> dict:
        present = set(self.active_slots if slots is None else slots)
        T = len(observations)
        K, P, Q = self.kmax, self.mem_width, self.msg_width
        mems = np.zeros((K, P))
        store = {"d": [], "u": [], "mems_in": [], "inputs": [],
                 "dists": np.zeros((T, self.n_actions)), "values": np.zeros(T),
                 "hiddens": np.zeros((T, K * P)), "present": present,
                 "observations": observations}
        for t in range(T):
            x = np.zeros(self.obs_alphabet)
            x[observations[t]] = 1.0
            store["mems_in"].append(mems.copy())
            d, u, mems, inputs = self._sweep(x, mems, present)
            logits = np.zeros(self.n_actions)
            value = 0.0
            for i in present:
                logits += self.W_o @ u[i]
                value += float(self.w_v @ u[i])
            store["d"].append(d)
            store["u"].append(u)
            store["inputs"].append(inputs)
            store["dists"][t] = softmax(logits)
            store["values"][t] = value
            store["hiddens"][t] = mems.ravel()
        return store

    def _episode_backward(self, fwd: dict, dlogits: np.ndarray, dvalues: np.ndarray) -> np.ndarray:
        T = dlogits.shape[0]
        K, P, Q, X = self.kmax, self.mem_width, self.msg_width, self.obs_alphabet
        present = sorted(fwd["present"])
        grads = {name: np.zeros(shape) for name, shape, _ in self._layout()}
        # input block offsets: [x | slot one-hot | mem | msg1 (| msg2)]
        m_lo, m_hi = X + K, X + K + P
        d_lo, d_hi = X + K + P, X + K + P + Q
        u_lo, u_hi = X + K + P + Q, X + K + P + 2 * Q
        dmem_next = np.zeros((K, P))  # dL/d new_mems flowing back from t+1
        for t in range(T - 1, -1, -1):
            d, u = fwd["d"][t], fwd["u"][t]
            in_d, in_u, in_m = fwd["inputs"][t]
            new_mems = fwd["hiddens"][t].reshape(K, P)
            du = np.zeros((K + 2, Q))
            dd = np.zeros((K + 1, Q))
            dmem = np.zeros((K, P))
            for i in present:
                du[i] += self.W_o.T @ dlogits[t] + dvalues[t] * self.w_v
                grads["W_o"] += np.outer(dlogits[t], u[i])
                grads["w_v"] += dvalues[t] * u[i]
            # memory update backward: m'_i = tanh(W_m [x; e; m; d_i; u_i])
            for i in present:
                dzm = dmem_next[i - 1] * (1.0 - new_mems[i - 1] ** 2)
                grads["W_m"] += np.outer(dzm, in_m[i])
                grads["b_m"] += dzm
                back = self.W_m.T @ dzm
                dmem[i - 1] += back[m_lo:m_hi]
                dd[i] += back[d_lo:d_hi]
                du[i] += back[u_lo:u_hi]
            # upward sweep backward (u_i depends on u_{i+1}: ascend)
            for i in present:
                dzu = du[i] * (1.0 - u[i] ** 2)
                grads["W_u"] += np.outer(dzu, in_u[i])
                grads["b_u"] += dzu
                back = self.W_u.T @ dzu
                dmem[i - 1] += back[m_lo:m_hi]
                dd[i] += back[d_lo:d_hi]
                du[i + 1] += back[u_lo:u_hi]
            # downward sweep backward (d_i depends on d_{i-1}: descend)
            for i in reversed(present):
                dzd = dd[i] * (1.0 - d[i] ** 2)
                grads["W_d"] += np.outer(dzd, in_d[i])
                grads["b_d"] += dzd
                back = self.W_d.T @ dzd
                dmem[i - 1] += back[m_lo:m_hi]
                dd[i - 1] += back[d_lo:d_hi]
            dmem_next = dmem
        return np.concatenate([grads[name].ravel() for name, _, _ in self._layout()])


ARCHS = {"recurrent": RecurrentPolicy, "modular": ModularPolicy,
         "feedforward": FeedforwardPolicy}


def init_policy(arch: str, seed: int = 0, **sizes) -> BasePolicy:
    """Build a freshly initialized policy.  Weights are uniform in
    [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero, deterministic per seed."""
    if arch not in ARCHS:
        raise ContractViolation(f"unknown architecture {arch!r}")
    return ARCHS[arch](seed=seed, **sizes)


def policy_step(policy: BasePolicy, obs: int, hidden: np.ndarray) -> PolicyStepOutput:
    return policy.step(obs, hidden)


def mask_slots_from_bitcode(code: int, kmax: int) -> tuple[int, ...]:
    slots = tuple(i + 1 for i in range(kmax) if (code >> i) & 1)
    return slots if slots else tuple(range(1, kmax + 1))


def _slots_for_traj(policy: BasePolicy, traj) -> tuple[int, ...] | None:
    if policy.arch != "modular":
        return None
    return mask_slots_from_bitcode(traj.morphology_id, policy.kmax)


def _check_traj(policy: BasePolicy, traj) -> None:
    if getattr(traj, "arch", policy.arch) != policy.arch:
        raise ContractViolation(
            f"trajectory was collected by arch {traj.arch!r}, not {policy.arch!r}"
        )


def episode_loss(policy: BasePolicy, traj, advantages: np.ndarray | None = None,
                 value_coef: float = VALUE_COEF, entropy_coef: float = 0.0) -> float:
    """Scalar training loss for one trajectory at the current parameters.

    When advantages is None they are computed from the live value head and
    treated as constants (the standard baselined score-function estimator);
    finite_diff_check passes the center-point advantages in explicitly so
    that perturbed evaluations differentiate the same scalar function.
    """
    _check_traj(policy, traj)
    T = len(traj.actions)
    if T == 0:
        return 0.0
    fwd = policy._episode_forward(np.asarray(traj.observations),
                                  slots=_slots_for_traj(policy, traj))
    G = discounted_returns(np.asarray(traj.rewards, dtype=np.float64), traj.gamma)
    if advantages is None:
        advantages = G - fwd["values"]
    logp = np.log(fwd["dists"][np.arange(T), np.asarray(traj.actions)])
    loss = float(-(advantages * logp).sum()
                 + value_coef * ((G - fwd["values"]) ** 2).sum())
    if entropy_coef:
        # floor keeps 0*log(0) at its limit value 0
        ent = -(fwd["dists"] * np.log(np.maximum(fwd["dists"], 1e-300))).sum()
        loss -= entropy_coef * ent
    return loss


def episode_gradient(policy: BasePolicy, traj,
                     value_coef: float = VALUE_COEF,
                     entropy_coef: float = 0.0) -> np.ndarray:
    """Exact gradient of episode_loss via full-episode BPTT (no truncation)."""
    _check_traj(policy, traj)
    T = len(traj.actions)
    if T == 0:
        return np.zeros_like(policy.theta)
    obs = np.asarray(traj.observations)
    acts = np.asarray(traj.actions)
    fwd = policy._episode_forward(obs, slots=_slots_for_traj(policy, traj))
    G = discounted_returns(np.asarray(traj.rewards, dtype=np.float64), traj.gamma)
    A = G - fwd["values"]
    dists = fwd["dists"]
    dlogits = A[:, None] * dists
    dlogits[np.arange(T), acts] -= A
    if entropy_coef:
        logd = np.log(np.maximum(dists, 1e-300))
        ent_rows = -(dists * logd).sum(axis=1)
        dlogits += entropy_coef * dists * (logd + ent_rows[:, None])
    dvalues = 2.0 * value_coef * (fwd["values"] - G)
    return policy._episode_backward(fwd, dlogits, dvalues)


def central_difference_gradient(loss_fn, theta: np.ndarray, eps: float,
                                coords: np.ndarray) -> np.ndarray:
    """Central differences of loss_fn over the given coordinates of theta.
    theta is perturbed in place and restored exactly."""
    out = np.zeros(len(coords))
    for j, i in enumerate(coords):
        orig = theta[i]
        theta[i] = orig + eps
        hi = loss_fn()
        theta[i] = orig - eps
        lo = loss_fn()
        theta[i] = orig
        out[j] = (hi - lo) / (2.0 * eps)
    return out


def max_relative_error(approx: np.ndarray, exact: np.ndarray,
                       atol: float = 1e-9) -> float:
    """Worst-case relative disagreement, denominators floored at 1e-12.
    Discrepancies below atol (the finite-difference noise floor) count
    as zero so exactly-zero gradient coordinates do not alias noise."""
    diff = np.abs(approx - exact)
    diff[diff < atol] = 0.0
    denom = np.maximum(np.maximum(np.abs(approx), np.abs(exact)), 1e-12)
    return float((diff / denom).max()) if len(diff) else 0.0


def finite_diff_check(policy: BasePolicy, traj, eps: float = 1e-5,
                      value_coef: float = VALUE_COEF, entropy_coef: float = 0.0,
                      max_coords: int = 512, seed: int = 0,
                      gradient: np.ndarray | None = None) -> float:
    """Compare episode_gradient against central finite differences.

    Checks every coordinate when the parameter count is at most
    max_coords, otherwise a seeded random subset of at least 64.  Passing
    `gradient` overrides the analytic gradient (used by mutation tests).
    Returns the max relative error (see max_relative_error).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ContractViolation("eps must lie in [1e-7, 1e-3]")
    W = policy.param_count
    if W <= max_coords:
        coords = np.arange(W)
    else:
        rng = np.random.default_rng(seed)
        coords = rng.choice(W, size=max(64, max_coords), replace=False)
    analytic = episode_gradient(policy, traj, value_coef, entropy_coef) \
        if gradient is None else gradient
    # Freeze the score-term weights at the center point so the perturbed
    # losses differentiate the same function the analytic gradient does.
    T = len(traj.actions)
    if T:
        fwd = policy._episode_forward(np.asarray(traj.observations),
                                      slots=_slots_for_traj(policy, traj))
        G = discounted_returns(np.asarray(traj.rewards, dtype=np.float64), traj.gamma)
        adv = G - fwd["values"]
    else:
        adv = np.zeros(0)
    loss_fn = lambda: episode_loss(policy, traj, advantages=adv,
                                   value_coef=value_coef, entropy_coef=entropy_coef)
    fd = central_difference_gradient(loss_fn, policy.theta, eps, coords)
    return max_relative_error(fd, analytic[coords])


# ---------------------------------------------------------------------------
# Checkpoint I/O: magic, arch tag, shape header, little-endian float64 params,
# plus a JSON sidecar with hyperparameters and the training seed.

_SHAPE_FIELDS = {
    "recurrent": ("hidden_width", "obs_alphabet", "n_actions"),
    "feedforward": ("hidden_width", "obs_alphabet", "n_actions"),
    "modular": ("kmax", "per_slot_memory_width", "message_width",
                "obs_alphabet", "n_actions"),
}


def save_checkpoint(policy: BasePolicy, path: str | Path, extra: dict | None = None) -> None:
    path = Path(path)
    sizes = policy.size_kwargs()
    shape_ints = [sizes[f] for f in _SHAPE_FIELDS[policy.arch]]
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<16s", policy.arch.encode("ascii"))
    blob += struct.pack("<I", len(shape_ints))
    blob += struct.pack(f"<{len(shape_ints)}q", *shape_ints)
    blob += struct.pack("<Q", policy.param_count)
    blob += policy.theta.astype("<f8").tobytes()
    path.write_bytes(bytes(blob))
    sidecar = {"arch": policy.arch, "sizes": sizes, "seed": policy.seed,
               "theta_version": policy.theta_version}
    if extra:
        sidecar.update(extra)
    Path(str(path) + ".json").write_text(
        json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> BasePolicy:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ContractViolation(f"{path} is not a policy checkpoint (bad magic)")
    off = 8
    arch = struct.unpack_from("<16s", blob, off)[0].rstrip(b"\x00").decode("ascii")
    off += 16
    if arch not in _SHAPE_FIELDS:
        raise ContractViolation(f"unknown checkpoint architecture {arch!r}")
    (n_ints,) = struct.unpack_from("<I", blob, off)
    off += 4
    shape_ints = struct.unpack_from(f"<{n_ints}q", blob, off)
    off += 8 * n_ints
    (W,) = struct.unpack_from("<Q", blob, off)
    off += 8
    theta = np.frombuffer(blob, dtype="<f8", count=W, offset=off).copy()
    sizes = dict(zip(_SHAPE_FIELDS[arch], shape_ints))
    sidecar_path = Path(str(path) + ".json")
    seed = 0
    version = 0
    if sidecar_path.exists():
        meta = json.loads(sidecar_path.read_text(encoding="utf-8"))
        seed = meta.get("seed", 0)
        version = meta.get("theta_version", 0)
    policy = init_policy(arch, seed=seed, **sizes)
    if policy.param_count != W:
        raise ContractViolation("checkpoint parameter count does not match header")
    policy.set_theta(theta, bump_version=False)
    policy.theta_version = version
    return policy


def replay_trajectory(policy: BasePolicy, traj) -> tuple[np.ndarray, np.ndarray]:
    """Recompute hidden states and stored-action log-probs for a stored
    observation sequence under the CURRENT parameters."""
    _check_traj(policy, traj)
    obs = np.asarray(traj.observations)
    fwd = policy._episode_forward(obs, slots=_slots_for_traj(policy, traj))
    T = len(obs)
    logp = np.log(fwd["dists"][np.arange(T), np.asarray(traj.actions)]) if T else np.zeros(0)
    return fwd["hiddens"], logp
