import dataclasses
from collections import deque

import numpy as np
import pytest

from cra import tasks
from cra.envs import ACTIONS, EAST, NORTH, WEST, BadConfig, LetterState
from cra.machines import (
    CounterOverflow,
    CountingRewardAutomaton,
    MachineConfiguration,
    TerminalStep,
    project_label,
    step,
)
from cra.product import (
    AAMDPState,
    CapExceeded,
    ExplicitMDP,
    NonConvergence,
    enumerate_product,
    gamma_bound,
    greedy_q,
    initial_product_state,
    is_terminal,
    product_step,
    value_iteration,
)


def test_gamma_bound():
    assert gamma_bound(tasks.anbcn_machine(), 500) == 500
    assert gamma_bound(tasks.office_machine(), 1000) == 1000
    m = tasks.anbcn_machine()
    drained = dataclasses.replace(
        m,
        rules=tuple(
            dataclasses.replace(r, modifier=tuple(min(e, 0) for e in r.modifier))
            for r in m.rules
        ),
        _dispatch=None,
    )
    assert gamma_bound(drained, 100) == 0
    with pytest.raises(ValueError):
        gamma_bound(m, 0)


def test_product_step_onto_letter_cell():
    env = tasks.letter_env(fixed_n=2)
    m = tasks.anbcn_machine()
    s = LetterState((0, 4), 2, 0)
    x = AAMDPState(s, "u0", (0,))
    x2, reward = product_step(env, m, x, EAST)
    assert x2.env_state.pos == (1, 4)
    assert x2.machine_state == "u0"
    assert x2.counters == (1,)
    assert reward == 0.0


def test_product_step_empty_label_leaves_machine_alone():
    env = tasks.letter_env(fixed_n=2)
    m = tasks.anbcn_machine()
    x = initial_product_state(env, m, seed=0)
    x2, reward = product_step(env, m, x, NORTH)
    assert (x2.machine_state, x2.counters) == (x.machine_state, x.counters)
    assert reward == 0.0


def test_product_step_from_terminal_raises():
    env = tasks.letter_env(fixed_n=2)
    m = tasks.anbcn_machine()
    x = AAMDPState(LetterState((0, 0), 2, 0), "t_succ", (0,))
    with pytest.raises(TerminalStep):
        product_step(env, m, x, NORTH)


def test_product_step_counter_overflow():
    env = tasks.letter_env(fixed_n=2)
    m = tasks.anbcn_machine()
    x = AAMDPState(LetterState((0, 4), 2, 0), "u0", (3,))
    with pytest.raises(CounterOverflow):
        product_step(env, m, x, EAST, cap=3)


def test_product_step_matches_manual_compose():
    env = tasks.office_env(fixed_n=2)
    m = tasks.office_machine()
    rng = np.random.default_rng(5)
    x = initial_product_state(env, m, seed=3)
    for _ in range(300):
        if is_terminal(m, x):
            x = initial_product_state(env, m, seed=3)
        a = int(rng.integers(len(ACTIONS)))
        s2 = env.step(x.env_state, a)
        sigma = project_label(m, env.label(x.env_state, a, s2))
        cfg, spec, _ = step(m, MachineConfiguration(x.machine_state, x.counters), sigma)
        expect = AAMDPState(s2, cfg.state, cfg.counters)
        got, reward = product_step(env, m, x, a)
        assert got == expect
        assert reward == spec.apply(x.env_state, a, s2)
        x = got


def _reachable_by_hand(env, m, seed):
    """Independent reachable-set walk used to cross-check enumerate_product."""
    start = initial_product_state(env, m, seed)
    start = AAMDPState(
        dataclasses.replace(start.env_state, steps=0),
        start.machine_state,
        start.counters,
    )
    seen = {start}
    queue = deque([start])
    while queue:
        x = queue.popleft()
        if x.machine_state in m.terminals:
            continue
        for a in ACTIONS:
            s2 = env.step(x.env_state, a)
            sigma = project_label(m, env.label(x.env_state, a, s2))
            cfg, _, _ = step(
                m, MachineConfiguration(x.machine_state, x.counters), sigma
            )
            x2 = AAMDPState(dataclasses.replace(s2, steps=0), cfg.state, cfg.counters)
            if x2 not in seen:
                seen.add(x2)
                queue.append(x2)
    return seen


def test_enumerate_product_letter_n2():
    env = tasks.letter_env(fixed_n=2)
    m = tasks.anbcn_machine()
    mdp = enumerate_product(env, m, cap=4)
    assert set(mdp.states) == _reachable_by_hand(env, m, seed=0)
    assert len(mdp.states) <= 36 * 4 * 5
    # Point-mass rows: every (state, action) lands on a valid index.
    assert mdp.transitions.shape == (len(mdp.states), 4)
    assert (mdp.transitions >= 0).all()
    assert (mdp.transitions < len(mdp.states)).all()
    for i in range(len(mdp.states)):
        for a in ACTIONS:
            assert sum(mdp.distribution(i, a).values()) == 1.0
    # Absorbing terminals: self-loops with zero reward.
    for i in np.flatnonzero(mdp.terminal):
        assert (mdp.transitions[i] == i).all()
        assert (mdp.rewards[i] == 0.0).all()


def test_enumerate_product_requires_fixed_n():
    env = tasks.letter_env()
    with pytest.raises(BadConfig):
        enumerate_product(env, tasks.anbcn_machine(), cap=4)


def test_enumerate_product_cap_exceeded():
    env = tasks.letter_env(fixed_n=2)
    with pytest.raises(CapExceeded):
        enumerate_product(env, tasks.anbcn_machine(), cap=4, size_cap=10)


def test_enumerate_product_terminal_at_init():
    m = CountingRewardAutomaton(
        states=("u0",),
        terminals=("done",),
        propositions=("A", "B", "C", "D"),
        k=0,
        rules=(),
        initial="done",
    )
    env = tasks.letter_env(fixed_n=1)
    mdp = enumerate_product(env, m, cap=0)
    assert len(mdp.states) == 1
    assert mdp.terminal.all()
    assert (mdp.transitions == 0).all()
    assert (mdp.rewards == 0.0).all()


def _chain_mdp(gamma=0.9):
    # s0 -> s1 (reward 0), s1 -> s2 (reward 1), s2 absorbing terminal.
    transitions = np.array([[1], [2], [2]], dtype=np.int64)
    rewards = np.array([[0.0], [1.0], [0.0]])
    return ExplicitMDP(
        states=("s0", "s1", "s2"),
        transitions=transitions,
        rewards=rewards,
        terminal=np.array([False, False, True]),
        gamma=gamma,
    )


def test_value_iteration_two_state_chain():
    v, policy = value_iteration(_chain_mdp())
    assert v == pytest.approx([0.9, 1.0, 0.0], abs=1e-9)
    assert list(policy[:2]) == [0, 0]


def test_value_iteration_zero_rewards():
    mdp = _chain_mdp()
    zero = dataclasses.replace(mdp, rewards=np.zeros_like(mdp.rewards))
    v, _ = value_iteration(zero)
    assert (v == 0.0).all()


def test_value_iteration_nonconvergence():
    with pytest.raises(NonConvergence):
        value_iteration(_chain_mdp(), tol=0.0, max_sweeps=2)


def _shortest_solve_steps(mdp, start_index):
    """Steps until the first reward-1 transition, by breadth-first search."""
    dist = {start_index: 0}
    queue = deque([start_index])
    while queue:
        i = queue.popleft()
        for a in ACTIONS:
            j = int(mdp.transitions[i, a])
            if mdp.rewards[i, a] == 1.0:
                return dist[i] + 1
            if j not in dist:
                dist[j] = dist[i] + 1
                queue.append(j)
    raise AssertionError("no rewarding transition reachable")


def test_value_iteration_letter_product_matches_shortest_path():
    env = tasks.letter_env(fixed_n=2)
    m = tasks.anbcn_machine()
    mdp = enumerate_product(env, m, cap=4)
    start = initial_product_state(env, m, seed=0)
    start = AAMDPState(
        dataclasses.replace(start.env_state, steps=0),
        start.machine_state,
        start.counters,
    )
    start_index = mdp.states.index(start)
    steps = _shortest_solve_steps(mdp, start_index)
    assert steps == 15
    v, policy = value_iteration(mdp)
    assert v[start_index] == pytest.approx(0.9 ** (steps - 1), abs=1e-9)
    # Greedy rollout realizes the shortest solve.
    i = start_index
    total = 0.0
    for t in range(steps):
        a = int(policy[i])
        total += (0.9 ** t) * mdp.rewards[i, a]
        i = int(mdp.transitions[i, a])
    assert mdp.terminal[i]
    assert total == pytest.approx(0.9 ** (steps - 1), abs=1e-9)


def test_greedy_q_consistent_with_values():
    mdp = _chain_mdp()
    v, _ = value_iteration(mdp)
    q = greedy_q(mdp, v)
    assert q.max(axis=1) == pytest.approx(v, abs=1e-9)
