"""Line-oriented text formats: machine definition files and DFA-table import.

Machine files are UTF-8 with `#` comments. Header lines (any order) precede a
TRANSITIONS section with one rule per line:

    KIND (CRA|CCRA|RM|ACCEPTOR)
    COUNTERS <k>
    PROPS <name> [...]
    STATES <name> [...]
    TERMINAL <name> [...]
    ACCEPTING <name> [...]          # ACCEPTOR only
    ACCEPT_MODE (STATE|STATE_ZERO)  # ACCEPTOR only, default STATE_ZERO
    GATING (ON|OFF)                 # default ON
    INITIAL <name>
    TRANSITIONS
    <src> -> <dst> GUARD <expr> ZT [b,...] ADD [m,...] REWARD <float> [EPS]

RM rule lines carry no ZT/ADD fields; their guard must be a conjunction of
literals (or TRUE when there are no propositions) and the positive atoms name
the exact label set of the entry. KIND CRA reads rewards as function-valued
constants, KIND CCRA as plain constants; the serializer picks the kind back
from the reward representation.

DFA tables use `DELTA <src> <symbol> <dst>` entries plus `ACCEPT <state>` and
`TRAP <state>` lines; the source of the first DELTA line is the initial state.
"""

from __future__ import annotations

import re

from .guards import (
    TRUE,
    And,
    Atom,
    GuardSyntaxError,
    Not,
    is_tautology_literal,
    parse_guard,
    serialize_guard,
)
from .machines import (
    ACCEPT_STATE,
    ACCEPT_STATE_ZERO,
    AcceptorMachine,
    Constant,
    CountingRewardAutomaton,
    NotConstant,
    RewardMachine,
    TransitionRule,
    TransitionTable,
    validate,
    validate_rm,
)


class ParseError(Exception):
    def __init__(self, message, line=None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class ValidationError(Exception):
    def __init__(self, report):
        self.report = list(report)
        super().__init__("; ".join(self.report))


class DfaImportError(Exception):
    pass


class Nondeterministic(DfaImportError):
    pass


class NonTotal(DfaImportError):
    pass


class UnknownSymbol(DfaImportError):
    pass


KINDS = ("CRA", "CCRA", "RM", "ACCEPTOR")
_HEADER_KEYWORDS = (
    "KIND",
    "COUNTERS",
    "PROPS",
    "STATES",
    "TERMINAL",
    "ACCEPTING",
    "ACCEPT_MODE",
    "GATING",
    "INITIAL",
)

_CRA_RULE = re.compile(
    r"^(\S+) -> (\S+) GUARD (.*?) ZT \[([-\d,\s]*)\] ADD \[([-\d,\s]*)\]"
    r" REWARD (\S+)( EPS)?$"
)
_RM_RULE = re.compile(r"^(\S+) -> (\S+) GUARD (.*?) REWARD (\S+)$")


def _content_lines(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, re.sub(r"\s+", " ", line)


def _parse_vector(text, lineno):
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ParseError(f"bad integer vector [{text}]", lineno)


def _parse_reward(text, lineno):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"bad reward value {text!r}", lineno)


def _parse_guard_at(text, lineno):
    try:
        return parse_guard(text)
    except GuardSyntaxError as exc:
        raise ParseError(f"bad guard {text!r}: {exc} (column {exc.offset})", lineno)


def _label_set_from_guard(guard, props, lineno):
    """RM entries name their label set as a conjunction of literals."""
    if is_tautology_literal(guard):
        if props:
            raise ParseError(
                "TRUE guard on an RM line is only valid with no propositions", lineno
            )
        return frozenset()
    literals = guard.children if isinstance(guard, And) else (guard,)
    positive = set()
    seen = set()
    for lit in literals:
        inner = lit.child if isinstance(lit, Not) else lit
        if not isinstance(inner, Atom) or (
            isinstance(lit, Not) and not isinstance(lit.child, Atom)
        ):
            raise ParseError(
                "RM guards must be conjunctions of literals naming a label set",
                lineno,
            )
        if inner.name in seen:
            raise ParseError(f"proposition {inner.name} repeats in guard", lineno)
        seen.add(inner.name)
        if not isinstance(lit, Not):
            positive.add(inner.name)
    return frozenset(positive)


def parse_machine(text):
    headers = {}
    rules = []
    in_rules = False
    for lineno, line in _content_lines(text):
        if in_rules:
            rules.append((lineno, line))
            continue
        keyword, _, rest = line.partition(" ")
        if keyword == "TRANSITIONS":
            in_rules = True
            continue
        if keyword not in _HEADER_KEYWORDS:
            raise ParseError(f"unknown header keyword {keyword!r}", lineno)
        if keyword in headers:
            raise ParseError(f"duplicate {keyword} line", lineno)
        headers[keyword] = (rest.split() if rest else [], lineno)
    if not in_rules:
        raise ParseError("missing TRANSITIONS section")

    def take(keyword, required=False, default=None):
        if keyword in headers:
            return headers.pop(keyword)[0]
        if required:
            raise ParseError(f"missing {keyword} header")
        return default

    kind_words = take("KIND", required=True)
    if len(kind_words) != 1 or kind_words[0] not in KINDS:
        raise ParseError(f"KIND must be one of {'|'.join(KINDS)}")
    kind = kind_words[0]

    counters = take("COUNTERS", required=True)
    if len(counters) != 1 or not counters[0].isdigit():
        raise ParseError("COUNTERS takes a single non-negative integer")
    k = int(counters[0])
    props = tuple(take("PROPS", default=[]))
    states = tuple(take("STATES", required=True))
    terminals = tuple(take("TERMINAL", default=[]))
    initial_words = take("INITIAL", required=True)
    if len(initial_words) != 1:
        raise ParseError("INITIAL takes a single state name")
    initial = initial_words[0]

    accepting = take("ACCEPTING")
    mode_words = take("ACCEPT_MODE")
    gating_words = take("GATING")
    if kind != "ACCEPTOR" and (accepting is not None or mode_words is not None):
        raise ParseError("ACCEPTING/ACCEPT_MODE are only valid for KIND ACCEPTOR")
    if kind == "RM":
        if gating_words is not None:
            raise ParseError("GATING is not valid for KIND RM")
        if k != 0:
            raise ParseError("KIND RM requires COUNTERS 0")
        return _build_rm(props, states, terminals, initial, rules)

    gating = True
    if gating_words is not None:
        if gating_words not in (["ON"], ["OFF"]):
            raise ParseError("GATING must be ON or OFF")
        gating = gating_words == ["ON"]

    lifted = kind == "CRA"
    parsed_rules = []
    for lineno, line in rules:
        match = _CRA_RULE.match(line)
        if not match:
            raise ParseError(
                "expected: <src> -> <dst> GUARD <expr> ZT [..] ADD [..] "
                "REWARD <float> [EPS]",
                lineno,
            )
        src, dst, guard_text, zt, add, reward_text, eps = match.groups()
        value = _parse_reward(reward_text, lineno)
        reward = TransitionTable(value) if lifted else Constant(value)
        parsed_rules.append(
            TransitionRule(
                source=src,
                target=dst,
                guard=_parse_guard_at(guard_text, lineno),
                counter_state=_parse_vector(zt, lineno),
                modifier=_parse_vector(add, lineno),
                reward=reward,
                epsilon=eps is not None,
            )
        )
    machine = CountingRewardAutomaton(
        states=states,
        terminals=terminals,
        propositions=props,
        k=k,
        rules=tuple(parsed_rules),
        initial=initial,
        gating=gating,
    )
    report = validate(machine)
    if report:
        raise ValidationError(report)
    if kind != "ACCEPTOR":
        return machine

    if not accepting:
        raise ParseError("KIND ACCEPTOR requires an ACCEPTING header")
    undeclared = set(accepting) - set(states) - set(terminals)
    if undeclared:
        raise ValidationError([f"accepting states {sorted(undeclared)} undeclared"])
    mode = ACCEPT_STATE_ZERO
    if mode_words is not None:
        if mode_words not in ([ACCEPT_STATE], [ACCEPT_STATE_ZERO]):
            raise ParseError("ACCEPT_MODE must be STATE or STATE_ZERO")
        mode = mode_words[0]
    return AcceptorMachine(machine, tuple(accepting), mode)


def _build_rm(props, states, terminals, initial, rule_lines):
    transitions = {}
    rewards = {}
    for lineno, line in rule_lines:
        match = _RM_RULE.match(line)
        if not match:
            raise ParseError(
                "expected: <src> -> <dst> GUARD <literals> REWARD <float>", lineno
            )
        src, dst, guard_text, reward_text = match.groups()
        guard = _parse_guard_at(guard_text, lineno)
        sigma = _label_set_from_guard(guard, props, lineno)
        key = (src, sigma)
        if key in transitions:
            raise ParseError(f"duplicate entry for ({src}, {sorted(sigma)})", lineno)
        transitions[key] = dst
        value = _parse_reward(reward_text, lineno)
        if dst in rewards and rewards[dst] != value:
            raise ParseError(
                f"conflicting rewards for state {dst}: "
                f"{rewards[dst]} vs {value}",
                lineno,
            )
        rewards[dst] = value
    machine = RewardMachine(
        states=states,
        terminals=terminals,
        propositions=props,
        transitions=transitions,
        state_reward={
            s: Constant(v) for s, v in rewards.items() if v != 0.0
        },
        initial=initial,
    )
    report = validate_rm(machine)
    if report:
        raise ValidationError(report)
    return machine


# ---------------------------------------------------------------------------
# Serialization


def _vector_text(vec):
    return "[" + ",".join(str(v) for v in vec) + "]"


def _reward_value(reward):
    if isinstance(reward, Constant):
        return reward.value, False
    if isinstance(reward, TransitionTable):
        if reward.overrides:
            raise NotConstant(
                "the file format carries constant rewards only; "
                "this reward has per-transition overrides"
            )
        return reward.default, True
    raise NotConstant(f"unsupported reward spec {reward!r}")


def _minterm_text(props, sigma):
    if not props:
        return "TRUE"
    return " & ".join(p if p in sigma else f"!{p}" for p in props)


def serialize_machine(m):
    if isinstance(m, RewardMachine):
        return _serialize_rm(m)
    acceptor = None
    if isinstance(m, AcceptorMachine):
        acceptor, m = m, m.automaton

    rule_lines = []
    any_lifted = False
    for rule in m.rules:
        value, lifted = _reward_value(rule.reward)
        any_lifted = any_lifted or lifted
        suffix = " EPS" if rule.epsilon else ""
        rule_lines.append(
            f"{rule.source} -> {rule.target} GUARD {serialize_guard(rule.guard)} "
            f"ZT {_vector_text(rule.counter_state)} "
            f"ADD {_vector_text(rule.modifier)} REWARD {repr(float(value))}{suffix}"
        )
    if acceptor is not None:
        kind = "ACCEPTOR"
    else:
        kind = "CRA" if any_lifted else "CCRA"

    lines = [f"KIND {kind}", f"COUNTERS {m.k}"]
    if m.propositions:
        lines.append("PROPS " + " ".join(m.propositions))
    lines.append("STATES " + " ".join(m.states))
    if m.terminals:
        lines.append("TERMINAL " + " ".join(m.terminals))
    if acceptor is not None:
        lines.append("ACCEPTING " + " ".join(acceptor.accepting))
        lines.append(f"ACCEPT_MODE {acceptor.mode}")
    if not m.gating:
        lines.append("GATING OFF")
    lines.append(f"INITIAL {m.initial}")
    lines.append("TRANSITIONS")
    lines.extend(rule_lines)
    return "\n".join(lines) + "\n"


def _serialize_rm(r):
    lines = ["KIND RM", "COUNTERS 0"]
    if r.propositions:
        lines.append("PROPS " + " ".join(r.propositions))
    lines.append("STATES " + " ".join(r.states))
    if r.terminals:
        lines.append("TERMINAL " + " ".join(r.terminals))
    lines.append(f"INITIAL {r.initial}")
    lines.append("TRANSITIONS")
    for (source, sigma), target in sorted(
        r.transitions.items(), key=lambda kv: (kv[0][0], sorted(kv[0][1]))
    ):
        value, _ = _reward_value(r.state_reward.get(target, Constant(0.0)))
        lines.append(
            f"{source} -> {target} GUARD {_minterm_text(r.propositions, sigma)} "
            f"REWARD {repr(float(value))}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# DFA-table import


def import_dfa_table(text, fail_reward=0.0):
    """Build a reward machine from a deterministic, total transition table.

    Accepting states become terminal and pay +1 on entry; trap states become
    terminal and pay `fail_reward` (0 by default) on entry. Entries sourced at
    terminal states are kept verbatim as dead entries so the machine's
    transition count matches the table.
    """
    entries = []
    accepting, traps = [], []
    for lineno, line in _content_lines(text):
        words = line.split()
        if words[0] == "DELTA":
            if len(words) != 4:
                raise ParseError("DELTA takes <src> <symbol> <dst>", lineno)
            entries.append((lineno, words[1], words[2], words[3]))
        elif words[0] == "ACCEPT":
            if len(words) != 2:
                raise ParseError("ACCEPT takes a single state name", lineno)
            accepting.append(words[1])
        elif words[0] == "TRAP":
            if len(words) != 2:
                raise ParseError("TRAP takes a single state name", lineno)
            traps.append(words[1])
        else:
            raise ParseError(f"unknown keyword {words[0]!r}", lineno)
    if not entries:
        raise ParseError("table has no DELTA entries")

    states, symbols = [], []
    for _, src, sym, dst in entries:
        for name in (src, dst):
            if name not in states:
                states.append(name)
        if sym not in symbols:
            symbols.append(sym)

    seen = {}
    for lineno, src, sym, dst in entries:
        if (src, sym) in seen:
            raise Nondeterministic(
                f"line {lineno}: duplicate entry for ({src}, {sym})"
            )
        seen[(src, sym)] = dst
    missing = [
        (q, a) for q in states for a in symbols if (q, a) not in seen
    ]
    if missing:
        raise NonTotal(f"missing entries for {missing}")

    for name in accepting + traps:
        if name not in states:
            raise UnknownSymbol(f"state {name!r} does not appear in the table")

    terminal = tuple(dict.fromkeys(accepting + traps))
    non_terminal = tuple(q for q in states if q not in terminal)
    state_reward = {q: Constant(1.0) for q in accepting}
    if fail_reward != 0.0:
        for q in traps:
            state_reward[q] = Constant(float(fail_reward))
    machine = RewardMachine(
        states=non_terminal,
        terminals=terminal,
        propositions=tuple(symbols),
        transitions={
            (src, frozenset((sym,))): dst for (src, sym), dst in seen.items()
        },
        state_reward=state_reward,
        initial=entries[0][1],
    )
    report = validate_rm(machine)
    if report:
        raise ValidationError(report)
    return machine
