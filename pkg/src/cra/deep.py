"""Deep Q-learning over machine-augmented gridworlds, from scratch.

Plain-numpy multilayer perceptrons (two hidden ReLU layers, linear head
over the four grid actions) trained on the mean squared Bellman error
with uniform experience replay and a periodically refreshed target
network. Gradients are hand-derived; the tests hold them against
central finite differences. The counterfactual variants push one
synthetic transition per non-terminal machine state and cached counter
vector into the replay buffer at every real step, exactly like the
tabular learners.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .envs import ACTIONS
from .learning import (
    CounterCache,
    CurvePoint,
    EvalResult,
    _require_valid,
    compile_stepper,
    counterfactual_experiences,
)
from .machines import (
    ZERO_REWARD,
    CounterOverflow,
    initial_configuration,
    project_label,
)
from .product import gamma_bound

ALGORITHMS = ("dqn", "cql", "crm")

CHECKPOINT_MAGIC = b"CRAQ"
CHECKPOINT_VERSION = 1
_DTYPES = {"float64": np.float64, "float32": np.float32}
_DTYPE_CODES = {"float64": 0, "float32": 1}


class DimensionMismatch(Exception):
    """Input width does not match the network's first layer."""


class NonFiniteLoss(Exception):
    """Bellman loss left the finite range during training."""


class BadCheckpoint(Exception):
    """Checkpoint bytes do not decode to a network."""


@dataclass
class QNetwork:
    """Fully connected net: weights[i] is (fan_in, fan_out), ReLU between
    layers, linear output."""

    weights: list
    biases: list

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def n_actions(self):
        return self.weights[-1].shape[1]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def copy(self):
        return QNetwork(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )

    def parameters(self):
        return self.weights + self.biases


def init_network(input_dim, rng, hidden=128, actions=len(ACTIONS), dtype="float64",
                 optimism=0.0):
    """He-initialized 2x`hidden` ReLU net with zero biases.

    optimism offsets the output-layer bias so untrained action values sit
    above zero; sparse-reward gridworlds need the greedy policy to prefer
    unvisited regions over learned-worthless ones.
    """
    dt = _DTYPES[dtype] if isinstance(dtype, str) else dtype
    dims = [input_dim, hidden, hidden, actions]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        scale = np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)).astype(dt))
        biases.append(np.zeros(fan_out, dtype=dt))
    biases[-1] += dt(optimism)
    return QNetwork(weights, biases)


def _trace(net, x):
    acts = [x]
    pre = []
    a = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        pre.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        acts.append(a)
    return acts, pre


def forward(net, x):
    """Action values for one feature vector (d,) or a batch (n, d)."""
    x = np.asarray(x, dtype=net.dtype)
    if x.ndim not in (1, 2) or x.shape[-1] != net.input_dim:
        raise DimensionMismatch(
            f"expected (..., {net.input_dim}), got {x.shape}"
        )
    acts, _ = _trace(net, np.atleast_2d(x))
    out = acts[-1]
    return out[0] if x.ndim == 1 else out


def gradients(net, x, actions, targets):
    """Mean squared Bellman error on the chosen actions and its gradient.

    Returns (loss, (weight grads, bias grads)) with grads shaped like the
    parameters.
    """
    x = np.asarray(x, dtype=net.dtype)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DimensionMismatch(
            f"expected (n, {net.input_dim}), got {x.shape}"
        )
    actions = np.asarray(actions)
    targets = np.asarray(targets, dtype=net.dtype)
    n = x.shape[0]
    acts, pre = _trace(net, x)
    picked = acts[-1][np.arange(n), actions]
    err = picked - targets
    loss = float(np.mean(err * err))
    delta = np.zeros_like(acts[-1])
    delta[np.arange(n), actions] = 2.0 * err / n
    gw = [None] * len(net.weights)
    gb = [None] * len(net.biases)
    for i in range(len(net.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ net.weights[i].T) * (pre[i - 1] > 0)
    return loss, (gw, gb)


class AdamState:
    """First/second gradient moments, standard coefficients 0.9/0.999."""

    def __init__(self, net, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.parameters()]
        self.v = [np.zeros_like(p) for p in net.parameters()]


def adam_step(net, grads, opt, eta):
    gw, gb = grads
    opt.t += 1
    b1, b2 = opt.beta1, opt.beta2
    scale = np.sqrt(1.0 - b2**opt.t) / (1.0 - b1**opt.t)
    for p, g, m, v in zip(net.parameters(), gw + gb, opt.m, opt.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= eta * scale * m / (np.sqrt(v) + opt.eps)


def train_step(net, target_net, batch, eta, opt, gamma=0.9):
    """One optimisation step; returns the pre-step loss.

    batch is (features, actions, rewards, next features, done flags);
    targets are r + gamma * max_a' target_net(x') with the bootstrap
    dropped on done transitions.
    """
    x, actions, rewards, x2, done = batch
    rewards = np.asarray(rewards, dtype=net.dtype)
    bootstrap = forward(target_net, x2).max(axis=1)
    targets = rewards + gamma * np.where(np.asarray(done, bool), 0.0, bootstrap)
    loss, grads = gradients(net, x, actions, targets)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss {loss!r}")
    adam_step(net, grads, opt, eta)
    return loss


class ReplayBuffer:
    """Uniform-sampling ring buffer of transitions."""

    def __init__(self, capacity=50000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items = []
        self._next = 0

    def __len__(self):
        return len(self._items)

    def add(self, item):
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def sample(self, rng, batch):
        idx = rng.integers(0, len(self._items), size=batch)
        xs, actions, rewards, x2s, done = zip(*(self._items[i] for i in idx))
        return (
            np.stack(xs),
            np.asarray(actions),
            np.asarray(rewards),
            np.stack(x2s),
            np.asarray(done, bool),
        )


class FeatureEncoder:
    """One-hot agent x and y, one-hot machine state, counters scaled to
    [0, 1] by the counter cap. machine=False drops the machine block
    (environment-only input for the plain-DQN control)."""

    def __init__(self, env, m, machine=True, dtype="float64"):
        layout = env.config.layout
        self._w = layout.width
        self._h = layout.height
        self._machine = machine
        self._dtype = _DTYPES[dtype] if isinstance(dtype, str) else dtype
        self._index = {
            u: i for i, u in enumerate(sorted(set(m.states) | set(m.terminals)))
        }
        self._k = m.k
        self._cap = max(gamma_bound(m, env.config.horizon), 1) if m.k else 1
        self.dim = self._w + self._h
        if machine:
            self.dim += len(self._index) + m.k

    def encode(self, pos, state, counters):
        x = np.zeros(self.dim, dtype=self._dtype)
        x[pos[0]] = 1.0
        x[self._w + pos[1]] = 1.0
        if self._machine:
            base = self._w + self._h
            x[base + self._index[state]] = 1.0
            for i, c in enumerate(counters):
                x[base + len(self._index) + i] = c / self._cap
        return x


@dataclass(frozen=True)
class DeepParams:
    eta: float = 1e-4
    gamma: float = 0.9
    interactions: int = 12000
    batch: int = 32
    buffer: int = 50000
    target_period: int = 500
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_anneal: int = 4000
    train_repeat: int = 1
    optimism: float = 0.0
    hidden: int = 128
    eval_every: int = 500
    eval_episodes: int = 20
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        for name in ("interactions", "batch", "buffer", "target_period",
                     "eps_anneal", "train_repeat", "hidden", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("eps_start", "eps_end"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.eval_episodes < 0:
            raise ValueError("eval_episodes must be >= 0")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")


def evaluate_net(net, env, m, encoder, episodes, seed, stepper=None):
    """Greedy rollouts; same return/success accounting as the tabular
    evaluator."""
    if episodes == 0:
        return EvalResult(0.0, 0.0, 0)
    if stepper is None:
        stepper = compile_stepper(m)
    rng = np.random.default_rng(seed)
    terminals = frozenset(m.terminals)
    total = 0.0
    successes = 0
    for _ in range(episodes):
        s = env.reset(int(rng.integers(2**31)))
        cfg = initial_configuration(m)
        episode_return = 0.0
        for _ in range(env.config.horizon):
            if cfg.state in terminals:
                break
            x = encoder.encode(s.pos, cfg.state, cfg.counters)
            a = int(np.argmax(forward(net, x)))
            s2 = env.step(s, a)
            sigma = project_label(m, env.label(s, a, s2))
            cfg2, spec, _ = stepper(cfg, sigma)
            r = spec.apply(s, a, s2)
            episode_return += r
            if cfg2.state in terminals and r == 1.0:
                successes += 1
            s, cfg = s2, cfg2
        total += episode_return
    return EvalResult(total / episodes, successes / episodes, episodes)


def dqn_train(env, m, algo, p):
    """Train for p.interactions environment steps; returns (net, curve).

    algo selects the replay recipe: "dqn" stores only the real transition
    and sees environment-only features; "cql" and "crm" store one
    transition per non-terminal machine state and cached counter vector
    (callers hand "crm" a converted reward machine) and sample batches of
    p.batch * |machine states|.

    Episodes are owned by the environment: they end at the horizon, never
    on machine-terminal entry. A decided machine absorbs (rewards stop)
    while the walk keeps generating transitions, so one early mistake does
    not cut off the rest of the episode's data.
    """
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algo!r}")
    _require_valid(m)
    counterfactual = algo != "dqn"
    encoder = FeatureEncoder(env, m, machine=counterfactual, dtype=p.dtype)
    rng = np.random.default_rng(p.seed)
    net = init_network(encoder.dim, rng, hidden=p.hidden, dtype=p.dtype,
                       optimism=p.optimism)
    target = net.copy()
    opt = AdamState(net)
    buf = ReplayBuffer(p.buffer)
    stepper = compile_stepper(m)
    cache = CounterCache(m.k)
    cap = gamma_bound(m, env.config.horizon) if m.k else None
    batch_total = p.batch * (len(m.states) if counterfactual else 1)
    terminals = frozenset(m.terminals)
    horizon = env.config.horizon
    curve = []
    train_steps = 0
    episodes = 0
    s = env.reset(int(rng.integers(2**31)))
    cfg = initial_configuration(m)
    for step in range(1, p.interactions + 1):
        frac = min(1.0, (step - 1) / p.eps_anneal)
        epsilon = p.eps_start + frac * (p.eps_end - p.eps_start)
        x = encoder.encode(s.pos, cfg.state, cfg.counters)
        if rng.random() < epsilon:
            a = int(rng.integers(len(ACTIONS)))
        else:
            a = int(np.argmax(forward(net, x)))
        s2 = env.step(s, a)
        sigma = project_label(m, env.label(s, a, s2))
        absorbed = cfg.state in terminals
        if absorbed:
            cfg2, spec = cfg, ZERO_REWARD
        else:
            cfg2, spec, _ = stepper(cfg, sigma)
        if cap is not None and any(c > cap for c in cfg2.counters):
            raise CounterOverflow(f"counter above cap {cap}")
        env_done = s2.steps >= horizon
        if counterfactual:
            for e in counterfactual_experiences(
                m, sigma, s, a, s2, cache, stepper=stepper
            ):
                buf.add((
                    encoder.encode(s.pos, e.state, e.counters),
                    a,
                    e.reward,
                    encoder.encode(s2.pos, e.state2, e.counters2),
                    e.terminal or env_done,
                ))
            cache.add(cfg2.counters)
        else:
            buf.add((
                x,
                a,
                spec.apply(s, a, s2),
                encoder.encode(s2.pos, cfg2.state, cfg2.counters),
                (not absorbed and cfg2.state in terminals) or env_done,
            ))
        if len(buf) >= batch_total:
            for _ in range(p.train_repeat):
                train_step(
                    net, target, buf.sample(rng, batch_total), p.eta, opt,
                    p.gamma,
                )
                train_steps += 1
                if train_steps % p.target_period == 0:
                    target = net.copy()
        if env_done:
            episodes += 1
            s = env.reset(int(rng.integers(2**31)))
            cfg = initial_configuration(m)
        else:
            s, cfg = s2, cfg2
        if step % p.eval_every == 0:
            res = evaluate_net(
                net, env, m, encoder, p.eval_episodes, seed=(p.seed, step),
                stepper=stepper,
            )
            curve.append(CurvePoint(episodes, step, res.mean_return,
                                    res.success_rate))
    return net, curve


def save_checkpoint(net, path):
    """Versioned binary dump: magic, version, layer count, dtype code,
    then per layer the two dims and the row-major weight and bias bytes."""
    code = _DTYPE_CODES["float64" if net.dtype == np.float64 else "float32"]
    with open(path, "wb") as fh:
        fh.write(struct.pack(
            "<4sHBB", CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
            len(net.weights), code,
        ))
        for w, b in zip(net.weights, net.biases):
            fh.write(struct.pack("<II", *w.shape))
            fh.write(np.ascontiguousarray(w).tobytes())
            fh.write(np.ascontiguousarray(b).tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    head = struct.calcsize("<4sHBB")
    if len(raw) < head:
        raise BadCheckpoint("truncated header")
    magic, version, layers, code = struct.unpack_from("<4sHBB", raw)
    if magic != CHECKPOINT_MAGIC:
        raise BadCheckpoint(f"bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise BadCheckpoint(f"unsupported version {version}")
    try:
        dt = np.dtype({0: np.float64, 1: np.float32}[code])
    except KeyError:
        raise BadCheckpoint(f"unknown dtype code {code}") from None
    at = head
    weights, biases = [], []
    for _ in range(layers):
        if at + 8 > len(raw):
            raise BadCheckpoint("truncated layer header")
        fan_in, fan_out = struct.unpack_from("<II", raw, at)
        at += 8
        need = (fan_in * fan_out + fan_out) * dt.itemsize
        if at + need > len(raw):
            raise BadCheckpoint("truncated layer data")
        w = np.frombuffer(
            raw, dt, fan_in * fan_out, at
        ).reshape(fan_in, fan_out).copy()
        at += fan_in * fan_out * dt.itemsize
        b = np.frombuffer(raw, dt, fan_out, at).copy()
        at += fan_out * dt.itemsize
        weights.append(w)
        biases.append(b)
    if at != len(raw):
        raise BadCheckpoint("trailing bytes after last layer")
    if not weights:
        raise BadCheckpoint("no layers")
    return QNetwork(weights, biases)
