"""Product of a gridworld with a counting reward automaton.

The learner's state is the triple (environment state, machine state,
counter vector). Counters live in {0..G} where G = horizon * largest
positive counter increment; an episode of H steps can never push a
counter past that, so exceeding it is a configuration bug, not a
clamping situation.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .envs import ACTIONS
from .machines import (
    CounterOverflow,
    MachineConfiguration,
    TerminalStep,
    project_label,
    step,
)


class CapExceeded(Exception):
    pass


class NonConvergence(Exception):
    pass


@dataclass(frozen=True)
class AAMDPState:
    env_state: object
    machine_state: str
    counters: tuple


def gamma_bound(m, horizon):
    """Largest counter value reachable in `horizon` steps."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    biggest = 0
    for rule in m.rules:
        for entry in rule.modifier:
            if entry > biggest:
                biggest = entry
    return horizon * biggest


def initial_product_state(env, m, seed):
    return AAMDPState(env.reset(seed), m.initial, (0,) * m.k)


def is_terminal(m, x):
    return x.machine_state in m.terminals


def product_step(env, m, x, action, cap=None):
    """Advance environment and machine together; returns (state', reward).

    The reward spec fires on the underlying environment transition
    (s, a, s'). Counters above the bound raise CounterOverflow.
    """
    if x.machine_state in m.terminals:
        raise TerminalStep(f"machine is in terminal state {x.machine_state!r}")
    if cap is None:
        cap = gamma_bound(m, env.config.horizon)
    s2 = env.step(x.env_state, action)
    sigma = project_label(m, env.label(x.env_state, action, s2))
    cfg, spec, _ = step(m, MachineConfiguration(x.machine_state, x.counters), sigma)
    for value in cfg.counters:
        if value > cap:
            raise CounterOverflow(
                f"counter value {value} exceeds bound {cap}"
            )
    reward = spec.apply(x.env_state, action, s2)
    return AAMDPState(s2, cfg.state, cfg.counters), reward


@dataclass(frozen=True)
class ExplicitMDP:
    """Deterministic finite MDP with point-mass transition distributions."""

    states: tuple  # index -> AAMDPState
    transitions: np.ndarray  # (n, actions) next-state index
    rewards: np.ndarray  # (n, actions)
    terminal: np.ndarray  # (n,) bool, absorbing
    gamma: float

    def distribution(self, i, action):
        """Next-state distribution for (state i, action) as {index: mass}."""
        return {int(self.transitions[i, action]): 1.0}


def _stationary(env_state):
    # Drop the step counter so enumeration closes over episode time.
    return dataclasses.replace(env_state, steps=0)


def enumerate_product(env, m, cap, gamma=0.9, size_cap=2_000_000, seed=0):
    """Breadth-first reachable product enumeration into an ExplicitMDP.

    Requires a fixed N so dynamics are deterministic. Terminal product
    states are absorbing with reward 0. Horizon is intentionally not part
    of the state: the result is the stationary discounted product.
    """
    from .envs import BadConfig

    if env.config.fixed_n is None:
        raise BadConfig("enumerate_product needs a fixed-N environment config")
    start = initial_product_state(env, m, seed)
    start = AAMDPState(_stationary(start.env_state), start.machine_state, start.counters)

    index = {start: 0}
    order = [start]
    frontier = [start]
    edges = {}  # state -> list of (next_state, reward) per action
    while frontier:
        x = frontier.pop()
        if is_terminal(m, x):
            edges[x] = [(x, 0.0)] * len(ACTIONS)
            continue
        row = []
        for action in ACTIONS:
            x2, reward = product_step(env, m, x, action, cap=cap)
            x2 = AAMDPState(_stationary(x2.env_state), x2.machine_state, x2.counters)
            row.append((x2, reward))
            if x2 not in index:
                if len(index) >= size_cap:
                    raise CapExceeded(
                        f"product exceeds configured cap of {size_cap} states"
                    )
                index[x2] = len(order)
                order.append(x2)
                frontier.append(x2)
        edges[x] = row

    n = len(order)
    transitions = np.zeros((n, len(ACTIONS)), dtype=np.int64)
    rewards = np.zeros((n, len(ACTIONS)), dtype=np.float64)
    terminal = np.zeros(n, dtype=bool)
    for x, row in edges.items():
        i = index[x]
        terminal[i] = is_terminal(m, x)
        for action, (x2, reward) in enumerate(row):
            transitions[i, action] = index[x2]
            rewards[i, action] = reward
    return ExplicitMDP(
        states=tuple(order),
        transitions=transitions,
        rewards=rewards,
        terminal=terminal,
        gamma=gamma,
    )


def value_iteration(mdp, tol=1e-10, max_sweeps=100_000):
    """Optimal values and a greedy policy for an ExplicitMDP.

    Stops when the sup-norm Bellman residual drops to tol; raises
    NonConvergence if the sweep cap is hit first.
    """
    v = np.zeros(len(mdp.states), dtype=np.float64)
    for _ in range(max_sweeps):
        q = mdp.rewards + mdp.gamma * v[mdp.transitions]
        q[mdp.terminal] = 0.0
        v2 = q.max(axis=1)
        residual = np.abs(v2 - v).max()
        v = v2
        if residual <= tol:
            policy = q.argmax(axis=1)
            return v, policy
    raise NonConvergence(f"residual above {tol} after {max_sweeps} sweeps")


def greedy_q(mdp, v):
    """Action values implied by a state-value vector."""
    q = mdp.rewards + mdp.gamma * v[mdp.transitions]
    q[mdp.terminal] = 0.0
    return q
