"""Value/policy approximator, replay memory and the DQN / actor-critic training loop."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .environment import N_ACTIONS, MdpTransition, UavSwarmEnv

CHECKPOINT_VERSION = 1
VARIANTS = ("dqn", "actor_critic")


class TrainingDivergedError(RuntimeError):
    """Non-finite weights or loss during training."""


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint."""


def output_dim(variant: str) -> int:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return N_ACTIONS + (1 if variant == "actor_critic" else 0)


class Approximator:
    """Fully connected network: ReLU hidden layers, linear output."""

    def __init__(self, layer_dims: Sequence[int], rng: np.random.Generator | None = None):
        if len(layer_dims) < 2:
            raise ValueError("need at least input and output dimensions")
        self.layer_dims = [int(d) for d in layer_dims]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Approximator":
        other = Approximator(self.layer_dims)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def forward(self, x: np.ndarray, keep: bool = False):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.input_dim:
            raise ValueError(f"input has {h.shape[1]} features, network expects {self.input_dim}")
        acts = [h]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        out = h[0] if single else h
        return (out, acts) if keep else out

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray):
        """Gradients of ``sum(grad_out * output)`` w.r.t. every weight and bias."""
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        g = grad_out
        for k in range(len(self.weights) - 1, -1, -1):
            gw[k] = acts[k].T @ g
            gb[k] = g.sum(axis=0)
            if k:
                g = (g @ self.weights[k].T) * (acts[k] > 0)
        return gw, gb

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for pair in zip(self.weights, self.biases) for p in pair])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        pos = 0
        for k in range(len(self.weights)):
            for arr in (self.weights[k], self.biases[k]):
                arr[...] = flat[pos:pos + arr.size].reshape(arr.shape)
                pos += arr.size

    @staticmethod
    def flatten_grads(gw, gb) -> np.ndarray:
        return np.concatenate([p.ravel() for pair in zip(gw, gb) for p in pair])

    def apply(self, gw, gb, lr: float) -> None:
        for k in range(len(self.weights)):
            self.weights[k] -= lr * gw[k]
            self.biases[k] -= lr * gb[k]

    def is_finite(self) -> bool:
        return all(np.isfinite(w).all() and np.isfinite(b).all() for w, b in zip(self.weights, self.biases))


def forward(approx: Approximator, state: np.ndarray) -> np.ndarray:
    return approx.forward(state)


class ReplayMemory:
    """Bounded FIFO of transitions with seeded uniform minibatch sampling.

    Transitions live in preallocated ring arrays, so a minibatch is one fancy index.
    """

    def __init__(self, capacity: int = 50_000, rng: np.random.Generator | None = None):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._size = 0
        self._next = 0  # slot the next push writes
        self._arrays = None

    def __len__(self) -> int:
        return self._size

    def push(self, transition: MdpTransition) -> None:
        if self._arrays is None:
            dim = np.asarray(transition.state).shape
            self._arrays = (np.zeros((self.capacity, *dim)), np.zeros(self.capacity, np.int64),
                            np.zeros(self.capacity), np.zeros((self.capacity, *dim)), np.zeros(self.capacity, bool))
        s, a, r, s2, term = self._arrays
        k = self._next
        s[k], a[k], r[k], s2[k], term[k] = (transition.state, transition.action, transition.reward,
                                             transition.next_state, transition.terminal)
        self._next = (k + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample_arrays(self, batch_size: int):
        """Minibatch as ``(states, actions, rewards, next_states, terminal)`` arrays."""
        if self._size < batch_size:
            raise ValueError(f"cannot sample {batch_size} from {self._size} transitions")
        idx = self.rng.choice(self._size, size=batch_size, replace=False)  # 0 is the oldest
        idx = (idx + (self._next if self._size == self.capacity else 0)) % self.capacity
        return tuple(arr[idx] for arr in self._arrays)

    def sample(self, batch_size: int) -> list[MdpTransition]:
        s, a, r, s2, term = self.sample_arrays(batch_size)
        return [MdpTransition(s[i], int(a[i]), float(r[i]), s2[i], bool(term[i])) for i in range(batch_size)]


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.95
    lr: float = 0.0005
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.5  # share of episodes over which epsilon decays linearly
    batch_size: int = 32
    episodes: int = 2000
    memory_capacity: int = 50_000
    hidden: tuple[int, ...] = (64, 64)
    updates_per_step: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("discount must satisfy 0 <= gamma < 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        for name in ("eps_start", "eps_end"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.batch_size < 1 or self.episodes < 0 or self.updates_per_step < 1:
            raise ValueError("batch_size, updates_per_step must be >= 1 and episodes >= 0")

    def epsilon(self, episode: int) -> float:
        span = max(1, int(round(self.eps_decay_fraction * self.episodes)))
        frac = min(1.0, episode / span)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


def _batch_arrays(batch: Sequence[MdpTransition]):
    s = np.stack([t.state for t in batch])
    a = np.fromiter((t.action for t in batch), dtype=np.int64, count=len(batch))
    r = np.fromiter((t.reward for t in batch), dtype=np.float64, count=len(batch))
    s2 = np.stack([t.next_state for t in batch])
    term = np.fromiter((t.terminal for t in batch), dtype=bool, count=len(batch))
    return s, a, r, s2, term


def td_targets(approx: Approximator, rewards, next_states, terminal, gamma: float, variant: str):
    """Bootstrapped targets from the parameter snapshot ``approx``."""
    nxt = approx.forward(next_states)
    if variant == "dqn":
        boot = nxt[:, :N_ACTIONS].max(axis=1)
    else:
        boot = nxt[:, N_ACTIONS]
    return rewards + gamma * np.where(terminal, 0.0, boot)


def loss_and_grads(approx: Approximator, batch, gamma: float, variant: str, snapshot: Approximator | None = None,
                   actor_delta: np.ndarray | None = None):
    """Loss and analytic gradients for one minibatch.

    dqn: ``0.5 * mean((Q(s, a) - y)^2)`` with ``y = r + gamma * max Q_old(s', .)``.
    actor_critic: critic ``0.5 * mean(delta^2)`` plus actor ``-mean(delta * log pi(a|s))``,
    ``delta = r + gamma * V_old(s') - V(s)`` held constant in the actor term.
    ``actor_delta`` pins that constant, which makes the returned loss the exact
    surrogate whose gradient is returned (used for finite-difference checks).
    """
    s, a, r, s2, term = _batch_arrays(batch) if not isinstance(batch, tuple) else batch
    snapshot = approx if snapshot is None else snapshot
    y = td_targets(snapshot, r, s2, term, gamma, variant)
    out, acts = approx.forward(s, keep=True)
    B = s.shape[0]
    rows = np.arange(B)
    grad = np.zeros_like(out)
    if variant == "dqn":
        err = out[rows, a] - y
        loss = 0.5 * float(np.mean(err ** 2))
        grad[rows, a] = err / B
    elif variant == "actor_critic":
        value = out[:, N_ACTIONS]
        delta = y - value
        logits = out[:, :N_ACTIONS]
        z = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(z)
        probs /= probs.sum(axis=1, keepdims=True)
        logp = z[rows, a] - np.log(np.exp(z).sum(axis=1))
        adv = delta if actor_delta is None else np.asarray(actor_delta, dtype=np.float64)
        loss = 0.5 * float(np.mean(delta ** 2)) - float(np.mean(adv * logp))
        grad[:, N_ACTIONS] = -delta / B
        onehot = np.zeros_like(probs)
        onehot[rows, a] = 1.0
        grad[:, :N_ACTIONS] = -(adv[:, None] * (onehot - probs)) / B
    else:
        raise ValueError(f"unknown variant {variant!r}")
    gw, gb = approx.backward(acts, grad)
    return loss, gw, gb


def td_update(approx: Approximator, batch, config: TrainConfig, variant: str = "dqn",
              check_weights: bool = True) -> float:
    """One SGD step on a minibatch (transitions or a tuple of arrays); returns the loss before the step.

    The training loop skips the per-step weight scan: non-finite weights make the
    next loss non-finite, and the weights are scanned once per episode.
    """
    if not len(batch) or (isinstance(batch, tuple) and not len(batch[0])):
        raise ValueError("empty minibatch")
    # theta_old is theta itself: targets are computed before the step
    loss, gw, gb = loss_and_grads(approx, batch, config.gamma, variant)
    if not math.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss {loss} in {variant} update")
    approx.apply(gw, gb, config.lr)
    if check_weights and not approx.is_finite():
        raise TrainingDivergedError(f"non-finite weights after {variant} update (loss {loss})")
    return loss


def select_action(approx: Approximator, state: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over the nine action scores; ties go to the lowest index."""
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(N_ACTIONS))
    return int(np.argmax(approx.forward(state)[:N_ACTIONS]))


def greedy_policy(approx: Approximator):
    def policy(env: UavSwarmEnv, obs: np.ndarray) -> int:
        return int(np.argmax(approx.forward(obs)[:N_ACTIONS]))
    return policy


def new_approximator(obs_dim: int, config: TrainConfig, variant: str, rng: np.random.Generator) -> Approximator:
    return Approximator([obs_dim, *config.hidden, output_dim(variant)], rng)


@dataclass
class EpisodeMetrics:
    episode: int
    epsilon: float
    total_reward: float
    mean_coverage: float
    mean_loss: float
    steps: int


@dataclass
class TrainResult:
    approximator: Approximator
    variant: str
    metrics: list[EpisodeMetrics] = field(default_factory=list)


def train(env: UavSwarmEnv, config: TrainConfig = TrainConfig(), variant: str = "dqn",
          approximator: Approximator | None = None) -> TrainResult:
    """Episode / per-UAV loop: act, score, store, sample a minibatch, TD update."""
    output_dim(variant)
    rng = np.random.default_rng(config.seed)
    init_rng, act_rng, mem_rng, env_rng = (np.random.default_rng(s) for s in rng.integers(0, 2**63, size=4))
    approx = approximator if approximator is not None else new_approximator(env.obs_dim, config, variant, init_rng)
    if approx.input_dim != env.obs_dim:
        raise ValueError(f"approximator expects {approx.input_dim} inputs, environment encodes {env.obs_dim}")
    memory = ReplayMemory(config.memory_capacity, mem_rng)
    result = TrainResult(approx, variant)
    for ep in range(config.episodes):
        eps = config.epsilon(ep)
        obs = env.reset(int(env_rng.integers(0, 2**31)))
        done = env.done
        total_r = 0.0
        losses = []
        coverage = []
        while not done:
            a = select_action(approx, obs, eps, act_rng)
            nxt, r, done = env.step(a)
            memory.push(MdpTransition(obs, a, r, nxt, done and not env.truncated))
            total_r += r
            obs = nxt
            if env.current == 0:
                coverage.append(env.coverage())
            if len(memory) >= config.batch_size:
                for _ in range(config.updates_per_step):
                    losses.append(td_update(approx, memory.sample_arrays(config.batch_size), config, variant,
                                            check_weights=False))
        if not approx.is_finite():
            raise TrainingDivergedError(f"non-finite weights after episode {ep} ({variant})")
        result.metrics.append(EpisodeMetrics(ep, eps, total_r, float(np.mean(coverage)) if coverage else 0.0,
                                             float(np.mean(losses)) if losses else float("nan"), env.steps))
    return result


def save_checkpoint(approx: Approximator, path, variant: str, grid: tuple[int, int] | None = None,
                    extra: dict | None = None) -> None:
    """Text checkpoint: version, layer dims, then row-major weight and bias blocks per layer."""
    doc = {
        "format": "aeris-checkpoint",
        "version": CHECKPOINT_VERSION,
        "variant": variant,
        "layer_dims": approx.layer_dims,
        "grid": list(grid) if grid is not None else None,
        "layers": [{"weight": w.ravel().tolist(), "bias": b.tolist()}
                   for w, b in zip(approx.weights, approx.biases)],
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[Approximator, dict]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is corrupt: {exc}") from exc
    if doc.get("format") != "aeris-checkpoint" or doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format/version in {path}")
    dims = doc["layer_dims"]
    approx = Approximator(dims)
    if len(doc["layers"]) != len(dims) - 1:
        raise CheckpointError("layer count does not match layer_dims")
    for k, layer in enumerate(doc["layers"]):
        w = np.asarray(layer["weight"], dtype=np.float64)
        b = np.asarray(layer["bias"], dtype=np.float64)
        if w.size != dims[k] * dims[k + 1] or b.size != dims[k + 1]:
            raise CheckpointError(f"layer {k} block sizes do not match layer_dims")
        approx.weights[k] = w.reshape(dims[k], dims[k + 1])
        approx.biases[k] = b
    meta = {"variant": doc.get("variant"), "grid": doc.get("grid"), "extra": doc.get("extra", {})}
    return approx, meta
