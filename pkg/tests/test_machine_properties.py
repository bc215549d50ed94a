"""Randomized structural properties of stepping, validation and conversion."""

import itertools
import random

from machine_gen import label_space, random_ccra, random_free_cra, random_rm, random_word

from cra.machines import (
    MachineConfiguration,
    ZERO_REWARD,
    _fires,
    ccra_to_cra,
    rm_run,
    rm_to_cra,
    run,
    step,
    validate,
    zero_test,
)


def reference_step(m, cfg, sigma):
    """Linear scan over the rule list; the dispatch-table step must agree."""
    assert cfg.state not in m.terminals
    chosen = None
    for rule in m.rules:
        if rule.epsilon or rule.source != cfg.state:
            continue
        if rule.counter_state != zero_test(cfg.counters):
            continue
        if not _fires(m, rule, sigma):
            continue
        chosen = rule
        break
    if chosen is None:
        return cfg, ZERO_REWARD, False
    counters = tuple(c + d for c, d in zip(cfg.counters, chosen.modifier))
    state = chosen.target
    while state not in m.terminals:
        eps = [
            r
            for r in m.rules
            if r.epsilon
            and r.source == state
            and r.counter_state == zero_test(counters)
        ]
        if not eps:
            break
        counters = tuple(c + d for c, d in zip(counters, eps[0].modifier))
        state = eps[0].target
    return MachineConfiguration(state, counters), chosen.reward, True


def test_validated_machines_fire_at_most_one_rule():
    rng = random.Random(20260815)
    checked = 0
    for _ in range(400):
        m = random_free_cra(rng)
        if validate(m):
            continue
        checked += 1
        sets = label_space(m.propositions)
        for u in m.states:
            for counters in itertools.product(range(4), repeat=m.k):
                omega = zero_test(counters)
                for sigma in sets:
                    firing = [
                        r
                        for r in m.rules
                        if not r.epsilon
                        and r.source == u
                        and r.counter_state == omega
                        and _fires(m, r, sigma)
                    ]
                    assert len(firing) <= 1, (m, u, counters, sigma)
    assert checked > 50


def test_dispatch_step_matches_reference_scan():
    rng = random.Random(7)
    for _ in range(300):
        m = random_free_cra(rng)
        if validate(m):
            continue
        for _ in range(20):
            state = rng.choice(m.states)
            counters = tuple(rng.randint(0, 3) for _ in range(m.k))
            cfg = MachineConfiguration(state, counters)
            sigma = frozenset(
                p for p in m.propositions if rng.getrandbits(1)
            )
            assert step(m, cfg, sigma) == reference_step(m, cfg, sigma)


def test_generated_ccras_validate():
    rng = random.Random(99)
    for _ in range(200):
        assert validate(random_ccra(rng)) == []


def test_ccra_lift_preserves_traces():
    rng = random.Random(3)
    for _ in range(200):
        m = random_ccra(rng)
        lifted = ccra_to_cra(m)
        word = random_word(rng, m.propositions, rng.randint(0, 12))
        assert run(lifted, word) == run(m, word)


def test_rm_conversion_preserves_traces_and_counts():
    rng = random.Random(4)
    for _ in range(200):
        r = random_rm(rng)
        m = rm_to_cra(r)
        assert validate(m) == []
        assert len(m.states) + len(m.terminals) == len(r.states) + len(r.terminals)
        assert len(m.rules) == len(r.transitions)
        word = random_word(rng, r.propositions, rng.randint(0, 12))
        got = [(c.state, rew) for c, rew in run(m, word)]
        assert got == rm_run(r, word)
