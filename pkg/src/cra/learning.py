"""Tabular learners over machine-augmented gridworlds.

Q-learning treats the (observation, machine state, counters) triple as the
state. Counterfactual Q-learning replays each real environment transition
through every non-terminal machine state crossed with every counter vector
seen so far, so one step of experience updates the whole machine dimension
at once. Both learners share one TD update routine and one RNG discipline;
with a single-state counterless machine they are bit-for-bit identical.
"""

import itertools
import random
from collections import namedtuple
from dataclasses import dataclass

from .envs import ACTIONS, BadConfig
from .machines import (
    Constant,
    CounterOverflow,
    CounterUnderflow,
    MachineConfiguration,
    MachineError,
    RewardMachine,
    TerminalStep,
    ZERO_REWARD,
    _apply_modifier,
    _epsilon_closure,
    _fires,
    initial_configuration,
    project_label,
    validate,
    zero_test,
)

_ZEROS = (0.0, 0.0, 0.0, 0.0)

CurvePoint = namedtuple("CurvePoint", "episode env_samples mean_return success_rate")
EvalResult = namedtuple("EvalResult", "mean_return success_rate episodes")
Experience = namedtuple("Experience", "state counters state2 counters2 reward terminal")


class QTable(dict):
    """(observation key, machine state, counters) -> per-action values.

    Missing keys read as zero everywhere.
    """

    def value(self, key, action):
        row = self.get(key)
        return 0.0 if row is None else row[action]

    def row(self, key):
        return self.get(key, _ZEROS)


@dataclass(frozen=True)
class LearnParams:
    alpha: float = 0.5
    gamma: float = 0.9
    epsilon: float = 0.1
    episodes: int = 1000
    horizon: int = None  # None: use the environment's
    seed: int = 0
    success_threshold: float = 0.95
    eval_every: int = 25
    eval_episodes: int = 100
    patience: int = 10  # consecutive passing evals that count as solved
    stop_when_solved: bool = True
    counterfactual_fallback: bool = True  # emit gated/no-rule self-loops
    full_enumeration: bool = False  # replay all of {0..cap}^k, not the cache

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.eval_every < 1 or self.eval_episodes < 0 or self.patience < 1:
            raise ValueError("bad evaluation cadence")


class CounterCache:
    """Sorted set of counter vectors seen during a run; always holds zero."""

    def __init__(self, k):
        self.k = k
        self._seen = {(0,) * k}
        self._sorted = [(0,) * k]

    def add(self, counters):
        if counters not in self._seen:
            self._seen.add(counters)
            self._sorted = sorted(self._seen)

    def vectors(self):
        return self._sorted

    def __len__(self):
        return len(self._seen)

    def __contains__(self, counters):
        return counters in self._seen


def epsilon_greedy(q, key, epsilon, rng):
    """Explore with probability epsilon, otherwise argmax with uniform
    random tie-breaking."""
    if epsilon > 0.0 and rng.random() < epsilon:
        return rng.randrange(len(ACTIONS))
    row = q.get(key, _ZEROS)
    best = max(row)
    ties = [a for a, v in enumerate(row) if v == best]
    if len(ties) == 1:
        return ties[0]
    return ties[rng.randrange(len(ties))]


def td_update(q, key, action, reward, key2, terminal, alpha, gamma):
    """The one TD backup both learners use. Terminal transitions do not
    bootstrap."""
    row = q.get(key)
    if row is None:
        row = [0.0, 0.0, 0.0, 0.0]
        q[key] = row
    if terminal:
        target = reward
    else:
        target = reward + gamma * max(q.get(key2, _ZEROS))
    row[action] += alpha * (target - row[action])


def compile_stepper(m):
    """Precompute rule selection over (state, zero-test, label set).

    Returns a drop-in for machines.step(m, cfg, sigma) minus the machine
    argument. Selection order and gating match the reference exactly; a
    property test holds the two pointwise equal.
    """
    plain, eps = m.dispatch()
    terminals = frozenset(m.terminals)
    subsets = [
        frozenset(combo)
        for r in range(len(m.propositions) + 1)
        for combo in itertools.combinations(m.propositions, r)
    ]
    table = {}
    for (state, ct), rules in plain.items():
        for sigma in subsets:
            for rule in rules:
                if _fires(m, rule, sigma):
                    table[(state, ct, sigma)] = rule
                    break

    def cstep(cfg, sigma):
        if cfg.state in terminals:
            raise TerminalStep(f"state {cfg.state!r} is terminal")
        rule = table.get((cfg.state, zero_test(cfg.counters), sigma))
        if rule is None:
            return cfg, ZERO_REWARD, False
        counters = _apply_modifier(cfg.counters, rule.modifier)
        state = rule.target
        if eps and state not in terminals:
            state, counters = _epsilon_closure(m, state, counters, m.terminals)
        return MachineConfiguration(state, counters), rule.reward, True

    return cstep


def counterfactual_experiences(
    m, sigma, s, action, s2, cache, include_fallback=True, stepper=None
):
    """Synthetic machine transitions for one real environment step.

    One experience per non-terminal machine state crossed with each cached
    counter vector. Underflowing combinations are dropped; combinations
    where nothing fires become zero-reward self-loops unless
    include_fallback is off.
    """
    if stepper is None:
        stepper = compile_stepper(m)
    out = []
    for state in m.states:
        for counters in cache.vectors():
            try:
                cfg2, spec, fired = stepper(
                    MachineConfiguration(state, counters), sigma
                )
            except CounterUnderflow:
                continue
            if not fired and not include_fallback:
                continue
            out.append(
                Experience(
                    state,
                    counters,
                    cfg2.state,
                    cfg2.counters,
                    spec.apply(s, action, s2),
                    cfg2.state in m.terminals,
                )
            )
    return out


def _effective_horizon(env, p):
    h = env.config.horizon if p.horizon is None else p.horizon
    if h > env.config.horizon:
        raise BadConfig("learner horizon exceeds the environment's")
    return h


def _require_valid(m):
    report = validate(m)
    if report:
        raise MachineError("; ".join(report))


def evaluate_policy(q, env, m, episodes, seed, stepper=None):
    """Mean undiscounted greedy return and success rate over fresh episodes.

    Success means the machine entered a terminal state on a reward-1
    transition. episodes=0 returns the explicit empty result.
    """
    if episodes == 0:
        return EvalResult(0.0, 0.0, 0)
    if stepper is None:
        stepper = compile_stepper(m)
    rng = random.Random(seed)
    terminals = frozenset(m.terminals)
    total = 0.0
    successes = 0
    for _ in range(episodes):
        s = env.reset(rng.getrandbits(31))
        cfg = initial_configuration(m)
        episode_return = 0.0
        for _ in range(env.config.horizon):
            if cfg.state in terminals:
                break
            key = (env.obs_key(s), cfg.state, cfg.counters)
            a = epsilon_greedy(q, key, 0.0, rng)
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


def _solved(curve, threshold, patience):
    if len(curve) < patience:
        return False
    return all(pt.mean_return >= threshold for pt in curve[-patience:])


def samples_to_solve(curve, threshold, patience=10):
    """Environment samples at the first eval point closing a solved streak,
    or None if the run never solved."""
    streak = 0
    for pt in curve:
        streak = streak + 1 if pt.mean_return >= threshold else 0
        if streak >= patience:
            return pt.env_samples
    return None


def _learn(env, m, p, counterfactual):
    from .product import gamma_bound

    _require_valid(m)
    stepper = compile_stepper(m)
    h = _effective_horizon(env, p)
    rng = random.Random(p.seed)
    q = QTable()
    curve = []
    samples = 0
    terminals = frozenset(m.terminals)
    cache = CounterCache(m.k)
    cap = gamma_bound(m, h) if m.k else None
    if counterfactual and p.full_enumeration:
        for vec in itertools.product(range((cap or 0) + 1), repeat=m.k):
            cache.add(vec)

    for ep in range(p.episodes):
        s = env.reset(rng.getrandbits(31))
        cfg = initial_configuration(m)
        for t in range(h):
            obs = env.obs_key(s)
            key = (obs, cfg.state, cfg.counters)
            a = epsilon_greedy(q, key, p.epsilon, rng)
            s2 = env.step(s, a)
            sigma = project_label(m, env.label(s, a, s2))
            obs2 = env.obs_key(s2)
            env_terminal = t == h - 1
            if counterfactual:
                for e in counterfactual_experiences(
                    m, sigma, s, a, s2, cache,
                    include_fallback=p.counterfactual_fallback,
                    stepper=stepper,
                ):
                    td_update(
                        q,
                        (obs, e.state, e.counters),
                        a,
                        e.reward,
                        (obs2, e.state2, e.counters2),
                        e.terminal or env_terminal,
                        p.alpha,
                        p.gamma,
                    )
            cfg2, spec, _ = stepper(cfg, sigma)
            if cap is not None and any(v > cap for v in cfg2.counters):
                raise CounterOverflow(
                    f"counter value {max(cfg2.counters)} exceeds bound {cap}"
                )
            if not counterfactual:
                td_update(
                    q,
                    key,
                    a,
                    spec.apply(s, a, s2),
                    (obs2, cfg2.state, cfg2.counters),
                    cfg2.state in terminals or env_terminal,
                    p.alpha,
                    p.gamma,
                )
            samples += 1
            cache.add(cfg2.counters)
            s, cfg = s2, cfg2
            if cfg.state in terminals:
                break
        if (ep + 1) % p.eval_every == 0 and p.eval_episodes:
            result = evaluate_policy(
                q, env, m, p.eval_episodes, f"{p.seed}:{ep + 1}", stepper=stepper
            )
            curve.append(
                CurvePoint(ep + 1, samples, result.mean_return, result.success_rate)
            )
            if p.stop_when_solved and _solved(curve, p.success_threshold, p.patience):
                break
    return q, curve


def q_learning(env, m, p):
    """Plain tabular Q-learning over the augmented state."""
    return _learn(env, m, p, counterfactual=False)


def cql(env, m, p):
    """Counterfactual Q-learning: every real step updates all machine
    states against the observed-counter cache."""
    return _learn(env, m, p, counterfactual=True)


def crm(env, r, p):
    """Counterfactual updates for a plain reward machine baseline."""
    from .machines import rm_to_cra

    return cql(env, rm_to_cra(r), p)


def generate_rm_letterenv(n):
    """Reward machine accepting exactly the event string A^n B C D^n.

    The chain holds n+1 A-counting states, one B state, one C state and n
    D-countdown states; the machine pays out on the first quiet observation
    after the final D, and any off-pattern event drops to the failure
    terminal. Observations matching no entry self-loop silently.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    a_states = [f"a{i}" for i in range(n + 1)]
    d_states = [f"d{j}" for j in range(1, n + 1)]
    states = tuple(a_states + ["b", "c"] + d_states)
    letters = ("A", "B", "C", "D")
    on_pattern = {}
    for i in range(n):
        on_pattern[(a_states[i], "A")] = a_states[i + 1]
    on_pattern[(a_states[n], "B")] = "b"
    on_pattern[("b", "C")] = "c"
    on_pattern[("c", "D")] = d_states[0]
    for j in range(n - 1):
        on_pattern[(d_states[j], "D")] = d_states[j + 1]
    transitions = {}
    for state in states:
        for letter in letters:
            target = on_pattern.get((state, letter), "fail")
            transitions[(state, frozenset((letter,)))] = target
    transitions[(d_states[-1], frozenset())] = "success"
    return RewardMachine(
        states=states,
        terminals=("success", "fail"),
        propositions=letters,
        transitions=transitions,
        state_reward={"success": Constant(1.0)},
        initial=a_states[0],
    )


def generate_rm_office(n):
    """Reward machine for fetch n mails, brew n coffees, deliver n times.

    One state per task-counter value (3n+1 non-terminal states); Dk or any
    out-of-order event fails, delivery number n pays 1.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    f_states = [f"f{i}" for i in range(n + 1)]
    c_states = [f"c{j}" for j in range(n, 0, -1)]
    d_states = [f"d{j}" for j in range(n, 0, -1)]
    states = tuple(f_states + c_states + d_states)
    events = ("M", "EM", "Cf", "Pd", "Dk")
    on_pattern = {}
    for i in range(n):
        on_pattern[(f_states[i], "M")] = f_states[i + 1]
    on_pattern[(f_states[n], "EM")] = c_states[0]
    for j in range(n, 1, -1):
        on_pattern[(f"c{j}", "Cf")] = f"c{j - 1}"
    on_pattern[("c1", "Cf")] = d_states[0]
    for j in range(n, 1, -1):
        on_pattern[(f"d{j}", "Pd")] = f"d{j - 1}"
    on_pattern[("d1", "Pd")] = "success"
    transitions = {}
    for state in states:
        for event in events:
            target = on_pattern.get((state, event), "fail")
            transitions[(state, frozenset((event,)))] = target
    return RewardMachine(
        states=states,
        terminals=("success", "fail"),
        propositions=events,
        transitions=transitions,
        state_reward={"success": Constant(1.0)},
        initial=f_states[0],
    )
