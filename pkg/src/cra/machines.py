"""Counter-machine reward automata: types, validation, stepping, acceptance.

A machine holds non-terminal states U, terminal states F, k counters and a
list of guarded transition rules. A rule fires when the machine sits in the
rule's source state, the zero-test pattern of the counters equals the rule's
counter-state vector, and the label set satisfies the rule's guard. Firing
moves to the target state, adds the modifier to the counters and emits the
rule's reward. Reward machines (counterless, state-entry rewards) are a
restricted variant with their own lighter representation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

from .guards import (
    TRUE,
    Atom,
    And,
    Not,
    eval_guard,
    is_tautology_literal,
    serialize_guard,
)


class MachineError(Exception):
    pass


class CounterUnderflow(MachineError):
    """A counter would go below zero; counters are non-negative by definition."""


class CounterOverflow(MachineError):
    """A counter exceeded the configured bound; indicates a misconfigured horizon."""


class EpsilonLoop(MachineError):
    """More consecutive epsilon firings than machine states: a no-input cycle."""


class TerminalStep(MachineError):
    """Attempted to step a configuration whose state is terminal."""


class NotConstant(MachineError):
    """Conversion requires constant rewards but found a function-valued one."""


# ---------------------------------------------------------------------------
# Reward specifications


@dataclass(frozen=True)
class Constant:
    value: float

    def apply(self, s=None, a=None, s2=None):
        return self.value


@dataclass(frozen=True)
class TransitionTable:
    """Function-valued reward: per-(s, a, s') overrides on top of a default."""

    default: float
    overrides: tuple = ()  # tuple of ((s, a, s2), value) pairs, kept hashable

    def apply(self, s=None, a=None, s2=None):
        for key, value in self.overrides:
            if key == (s, a, s2):
                return value
        return self.default


ZERO_REWARD = Constant(0.0)


# ---------------------------------------------------------------------------
# Machine types


def zero_test(counters):
    """Z(c): componentwise 0 where the counter is 0, else 1."""
    return tuple(0 if v == 0 else 1 for v in counters)


@dataclass(frozen=True)
class MachineConfiguration:
    state: str
    counters: tuple


@dataclass(frozen=True)
class TransitionRule:
    source: str
    target: str
    guard: object
    counter_state: tuple
    modifier: tuple
    reward: object = ZERO_REWARD
    epsilon: bool = False


@dataclass
class CountingRewardAutomaton:
    """Deterministic k-counter reward automaton (treat as immutable once built)."""

    states: tuple  # non-terminal states U, in declaration order
    terminals: tuple  # terminal states F
    propositions: tuple
    k: int
    rules: tuple
    initial: str
    gating: bool = True  # non-tautological guards need a non-empty label set
    _dispatch: dict = field(default=None, repr=False, compare=False)

    def dispatch(self):
        """Rules grouped by (source, counter-state); epsilon rules listed apart."""
        if self._dispatch is None:
            plain, eps = {}, {}
            for rule in self.rules:
                key = (rule.source, rule.counter_state)
                bucket = eps if rule.epsilon else plain
                bucket.setdefault(key, []).append(rule)
            self._dispatch = (plain, eps)
        return self._dispatch


@dataclass
class RewardMachine:
    """Counterless machine: (state, label set) -> state, reward on state entry.

    The transition map may be partial; a missing key behaves as a self-loop
    emitting reward 0, mirroring the no-rule-fires fallback of the full
    automaton. Rewards attach to the state being entered (terminals included)
    so completing transitions can pay out while failure exits from the same
    source state pay nothing.
    """

    states: tuple
    terminals: tuple
    propositions: tuple
    transitions: dict  # (state, frozenset) -> state
    state_reward: dict  # state -> RewardSpec, missing keys read as 0
    initial: str


ACCEPT_STATE = "STATE"
ACCEPT_STATE_ZERO = "STATE_ZERO"


@dataclass
class AcceptorMachine:
    """An automaton with designated accepting states for language recognition."""

    automaton: CountingRewardAutomaton
    accepting: tuple
    mode: str = ACCEPT_STATE_ZERO


def initial_configuration(m):
    return MachineConfiguration(m.initial, (0,) * m.k)


def project_label(m, labels):
    """Restrict an environment label set to the machine's declared propositions."""
    props = m.propositions
    return frozenset(p for p in labels if p in props)


# ---------------------------------------------------------------------------
# Validation


def _fires(m, rule, sigma):
    if not eval_guard(rule.guard, sigma):
        return False
    if m.gating and not sigma and not is_tautology_literal(rule.guard):
        return False
    return True


def validate(m):
    """Return a list of violation messages; an empty list means the machine is valid.

    Checks state-set disjointness, undeclared guard atoms, counter dimension
    mismatches, determinism (exhaustive enumeration of label sets per
    (source, counter-state) pair) and epsilon-rule well-formedness.
    """
    report = []
    state_set = set(m.states)
    terminal_set = set(m.terminals)
    overlap = state_set & terminal_set
    if overlap:
        report.append(f"states and terminals overlap: {sorted(overlap)}")
    if m.initial not in state_set:
        report.append(f"initial state {m.initial!r} is not a non-terminal state")
    prop_set = set(m.propositions)

    for idx, rule in enumerate(m.rules):
        where = f"rule #{idx} ({rule.source} -> {rule.target})"
        if rule.source not in state_set and rule.source not in terminal_set:
            report.append(f"{where}: source {rule.source!r} is undeclared")
        if rule.target not in state_set and rule.target not in terminal_set:
            report.append(f"{where}: target {rule.target!r} is undeclared")
        undeclared = rule.guard.atoms() - prop_set
        if undeclared:
            report.append(f"{where}: undeclared propositions {sorted(undeclared)}")
        if len(rule.counter_state) != m.k:
            report.append(
                f"{where}: counter-state length {len(rule.counter_state)} != k={m.k}"
            )
        if len(rule.modifier) != m.k:
            report.append(f"{where}: modifier length {len(rule.modifier)} != k={m.k}")
        if any(b not in (0, 1) for b in rule.counter_state):
            report.append(f"{where}: counter-state entries must be 0 or 1")
        if rule.epsilon and rule.reward != Constant(0.0):
            report.append(f"{where}: epsilon rules must carry reward Constant(0)")

    if report:
        # Dimension/declaration problems make the firing enumeration unreliable.
        return report

    groups = {}
    for idx, rule in enumerate(m.rules):
        groups.setdefault((rule.source, rule.counter_state), []).append((idx, rule))

    label_sets = [
        frozenset(c) for n in range(len(m.propositions) + 1)
        for c in itertools.combinations(m.propositions, n)
    ]
    for (source, omega), members in sorted(groups.items()):
        plain = [(i, r) for i, r in members if not r.epsilon]
        eps = [(i, r) for i, r in members if r.epsilon]
        for sigma in label_sets:
            firing = [i for i, r in plain if _fires(m, r, sigma)]
            if len(firing) > 1:
                report.append(
                    f"nondeterminism: state {source}, counter state "
                    f"{list(omega)}, label {{{','.join(sorted(sigma))}}}: "
                    f"rules {firing} all fire"
                )
        if len(eps) > 1:
            report.append(
                f"nondeterminism: state {source}, counter state {list(omega)}: "
                f"multiple epsilon rules {[i for i, _ in eps]}"
            )
        if eps and any(
            _fires(m, r, sigma) for _, r in plain for sigma in label_sets
        ):
            report.append(
                f"epsilon rule at state {source}, counter state {list(omega)} "
                f"coexists with a firable rule"
            )
    return report


def validate_rm(r):
    """Structural checks for reward machines; empty list means valid."""
    report = []
    state_set = set(r.states)
    terminal_set = set(r.terminals)
    overlap = state_set & terminal_set
    if overlap:
        report.append(f"states and terminals overlap: {sorted(overlap)}")
    if r.initial not in state_set:
        report.append(f"initial state {r.initial!r} is not a non-terminal state")
    prop_set = set(r.propositions)
    declared = state_set | terminal_set
    for (source, sigma), target in r.transitions.items():
        if source not in declared:
            report.append(f"transition source {source!r} is undeclared")
        if target not in declared:
            report.append(f"transition target {target!r} is undeclared")
        bad = set(sigma) - prop_set
        if bad:
            report.append(f"undeclared propositions {sorted(bad)} in label set")
    for state in r.state_reward:
        if state not in declared:
            report.append(f"reward attached to undeclared state {state!r}")
    return report


# ---------------------------------------------------------------------------
# Stepping


def _apply_modifier(counters, modifier):
    updated = tuple(c + d for c, d in zip(counters, modifier))
    if any(v < 0 for v in updated):
        raise CounterUnderflow(f"counters {counters} + {modifier} go negative")
    return updated


def _epsilon_closure(m, state, counters, terminal_set):
    _, eps = m.dispatch()
    fired = 0
    limit = len(m.states)
    while state not in terminal_set:
        rules = eps.get((state, zero_test(counters)))
        if not rules:
            break
        fired += 1
        if fired > limit:
            raise EpsilonLoop(f"more than {limit} consecutive epsilon firings")
        rule = rules[0]
        counters = _apply_modifier(counters, rule.modifier)
        state = rule.target
    return state, counters


def step(m, cfg, sigma):
    """Advance one input symbol: returns (configuration, RewardSpec, fired).

    Selects the unique applicable rule for (state, Z(counters), sigma), applies
    its counter modifier, then chases epsilon rules (bounded by |U|). When no
    rule applies the configuration is returned unchanged with reward 0 and
    fired=False.
    """
    terminal_set = m.terminals
    if cfg.state in terminal_set:
        raise TerminalStep(f"state {cfg.state!r} is terminal")
    plain, _ = m.dispatch()
    rules = plain.get((cfg.state, zero_test(cfg.counters)), ())
    chosen = None
    for rule in rules:
        if _fires(m, rule, sigma):
            chosen = rule
            break
    if chosen is None:
        return cfg, ZERO_REWARD, False
    counters = _apply_modifier(cfg.counters, chosen.modifier)
    state = chosen.target
    if state not in terminal_set:
        state, counters = _epsilon_closure(m, state, counters, terminal_set)
    return MachineConfiguration(state, counters), chosen.reward, True


def run(m, inputs):
    """Fold step over a label-set sequence from the initial configuration.

    Returns a list of (configuration, reward value) pairs, halting early once
    a terminal state is entered.
    """
    cfg = initial_configuration(m)
    trace = []
    for sigma in inputs:
        cfg, reward, _ = step(m, cfg, frozenset(sigma))
        trace.append((cfg, reward.apply()))
        if cfg.state in m.terminals:
            break
    return trace


def accept(acceptor, word):
    """Decide word membership: every symbol must fire a rule and the final
    configuration must satisfy the acceptance mode."""
    m = acceptor.automaton
    cfg = initial_configuration(m)
    for symbol in word:
        if cfg.state in m.terminals:
            return False
        cfg, _, fired = step(m, cfg, frozenset((symbol,)))
        if not fired:
            return False
    if cfg.state not in acceptor.accepting:
        return False
    if acceptor.mode == ACCEPT_STATE_ZERO:
        return all(v == 0 for v in cfg.counters)
    return True


# ---------------------------------------------------------------------------
# Reward-machine stepping


def rm_step(r, state, sigma):
    """One reward-machine transition; missing entries self-loop with reward 0."""
    target = r.transitions.get((state, frozenset(sigma)))
    if target is None:
        return state, 0.0
    reward = r.state_reward.get(target, ZERO_REWARD)
    return target, reward.apply()


def rm_run(r, inputs):
    state = r.initial
    trace = []
    for sigma in inputs:
        if state in r.terminals:
            break
        state, reward = rm_step(r, state, sigma)
        trace.append((state, reward))
    return trace


# ---------------------------------------------------------------------------
# Conversions


def ccra_to_cra(m):
    """Lift constant rewards to (trivially constant) reward functions.

    The structure is preserved exactly; each Constant(x) becomes a
    function-valued table whose output is x for every transition triple.
    """
    lifted = []
    for rule in m.rules:
        if not isinstance(rule.reward, Constant):
            raise NotConstant(f"rule {rule.source}->{rule.target} is not constant")
        lifted.append(replace(rule, reward=TransitionTable(rule.reward.value)))
    return replace(m, rules=tuple(lifted), _dispatch=None)


def _minterm(props, sigma):
    if not props:
        return TRUE
    literals = tuple(
        Atom(p) if p in sigma else Not(Atom(p)) for p in props
    )
    return literals[0] if len(literals) == 1 else And(literals)


def rm_to_cra(r):
    """Emulate a reward machine as a counterless automaton.

    Each transition entry becomes one rule whose guard is the exact minterm of
    its label set, so rule count equals entry count and state count carries
    over unchanged. Gating is disabled on the result: minterm guards already
    match exactly one label set, and entries keyed by the empty set must
    remain reachable.
    """
    rules = []
    for (source, sigma), target in sorted(
        r.transitions.items(), key=lambda kv: (kv[0][0], sorted(kv[0][1]))
    ):
        reward = r.state_reward.get(target, ZERO_REWARD)
        rules.append(
            TransitionRule(
                source=source,
                target=target,
                guard=_minterm(r.propositions, sigma),
                counter_state=(),
                modifier=(),
                reward=reward,
            )
        )
    return CountingRewardAutomaton(
        states=tuple(r.states),
        terminals=tuple(r.terminals),
        propositions=tuple(r.propositions),
        k=0,
        rules=tuple(rules),
        initial=r.initial,
        gating=False,
    )


def complexity(m):
    """(state count, transition count) for any machine kind."""
    if isinstance(m, AcceptorMachine):
        m = m.automaton
    if isinstance(m, RewardMachine):
        return (len(m.states) + len(m.terminals), len(m.transitions))
    return (len(m.states) + len(m.terminals), len(m.rules))


def describe_rule(rule):
    """Human-readable one-liner used by validation reports and the CLI."""
    tag = " epsilon" if rule.epsilon else ""
    return (
        f"{rule.source} -> {rule.target} GUARD {serialize_guard(rule.guard)} "
        f"ZT {list(rule.counter_state)} ADD {list(rule.modifier)}{tag}"
    )
