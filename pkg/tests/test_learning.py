import random
from collections import Counter

import pytest

from machine_gen import label_space, random_free_cra, random_word
from cra import tasks
from cra.learning import (
    CounterCache,
    Experience,
    LearnParams,
    QTable,
    compile_stepper,
    counterfactual_experiences,
    cql,
    crm,
    epsilon_greedy,
    evaluate_policy,
    generate_rm_letterenv,
    generate_rm_office,
    q_learning,
    samples_to_solve,
    td_update,
)
from cra.machines import (
    Constant,
    CountingRewardAutomaton,
    MachineConfiguration,
    TransitionRule,
    initial_configuration,
    project_label,
    rm_run,
    rm_step,
    step,
    validate,
    validate_rm,
)
from cra.guards import parse_guard
from cra.product import enumerate_product, greedy_q, value_iteration


def _freq(draws, n=4):
    counts = Counter(draws)
    return [counts.get(a, 0) / len(draws) for a in range(n)]


def test_epsilon_greedy_explores_uniformly():
    rng = random.Random(0)
    q = QTable()
    draws = [epsilon_greedy(q, "x", 1.0, rng) for _ in range(10_000)]
    assert all(abs(f - 0.25) < 0.02 for f in _freq(draws))


def test_epsilon_greedy_exploits():
    rng = random.Random(0)
    q = QTable({"x": [0.0, 1.0, 0.0, 0.0]})
    assert all(epsilon_greedy(q, "x", 0.0, rng) == 1 for _ in range(50))


def test_epsilon_greedy_uniform_tie_break():
    rng = random.Random(1)
    q = QTable({"x": [0.3, 0.3, 0.3, 0.3]})
    draws = [epsilon_greedy(q, "x", 0.0, rng) for _ in range(10_000)]
    assert all(abs(f - 0.25) < 0.02 for f in _freq(draws))


def test_learn_params_validation():
    with pytest.raises(ValueError):
        LearnParams(alpha=1.5)
    with pytest.raises(ValueError):
        LearnParams(gamma=0.0)
    with pytest.raises(ValueError):
        LearnParams(epsilon=-0.1)
    with pytest.raises(ValueError):
        LearnParams(episodes=-1)
    with pytest.raises(ValueError):
        LearnParams(horizon=0)
    with pytest.raises(ValueError):
        LearnParams(eval_every=0)


def test_counter_cache():
    cache = CounterCache(2)
    assert cache.vectors() == [(0, 0)]
    cache.add((1, 0))
    cache.add((0, 2))
    cache.add((1, 0))
    assert cache.vectors() == [(0, 0), (0, 2), (1, 0)]
    assert (0, 0) in cache and len(cache) == 3


# ---------------------------------------------------------------------------
# Counterfactual experience synthesis


def test_counterfactual_experiences_single_a():
    m = tasks.anbcn_machine()
    cache = CounterCache(1)
    cache.add((1,))
    out = counterfactual_experiences(m, frozenset("A"), None, 0, None, cache)
    assert out == [
        Experience("u0", (0,), "u0", (1,), 0.0, False),
        Experience("u0", (1,), "u0", (2,), 0.0, False),
        Experience("u1", (0,), "t_succ", (0,), 1.0, True),
        Experience("u1", (1,), "u1", (1,), 0.0, False),
    ]


def test_counterfactual_experiences_empty_label_gating():
    m = tasks.anbcn_machine()
    cache = CounterCache(1)
    cache.add((1,))
    out = counterfactual_experiences(m, frozenset(), None, 0, None, cache)
    assert out == [
        Experience("u0", (0,), "u0", (0,), 0.0, False),
        Experience("u0", (1,), "u0", (1,), 0.0, False),
        Experience("u1", (0,), "t_succ", (0,), 1.0, True),
        Experience("u1", (1,), "u1", (1,), 0.0, False),
    ]
    fired_only = counterfactual_experiences(
        m, frozenset(), None, 0, None, cache, include_fallback=False
    )
    assert fired_only == [Experience("u1", (0,), "t_succ", (0,), 1.0, True)]


def test_counterfactual_experiences_one_state_machine():
    m = CountingRewardAutomaton(
        states=("u0",),
        terminals=("done",),
        propositions=("P",),
        k=0,
        rules=(
            TransitionRule("u0", "done", parse_guard("P"), (), (), Constant(1.0)),
        ),
        initial="u0",
    )
    cache = CounterCache(0)
    out = counterfactual_experiences(m, frozenset("P"), None, 0, None, cache)
    assert out == [Experience("u0", (), "done", (), 1.0, True)]


def test_counterfactual_experiences_skips_underflow():
    m = CountingRewardAutomaton(
        states=("u0",),
        terminals=(),
        propositions=("P",),
        k=1,
        rules=(
            TransitionRule("u0", "u0", parse_guard("P"), (1,), (-2,), Constant(0.0)),
        ),
        initial="u0",
    )
    cache = CounterCache(1)
    cache.add((1,))
    out = counterfactual_experiences(m, frozenset("P"), None, 0, None, cache)
    # The (1,) row underflows and is dropped; the (0,) row has no rule.
    assert out == [Experience("u0", (0,), "u0", (0,), 0.0, False)]


def test_compiled_stepper_matches_reference():
    rng = random.Random(99)
    checked = 0
    while checked < 200:
        m = random_free_cra(rng, allow_eps=True)
        if validate(m):
            continue
        checked += 1
        cstep = compile_stepper(m)
        sets = label_space(m.propositions)
        for _ in range(20):
            cfg = MachineConfiguration(
                rng.choice(m.states),
                tuple(rng.randint(0, 3) for _ in range(m.k)),
            )
            sigma = rng.choice(sets)
            try:
                expect = step(m, cfg, sigma)
            except Exception as err:
                with pytest.raises(type(err)):
                    cstep(cfg, sigma)
                continue
            assert cstep(cfg, sigma) == expect


# ---------------------------------------------------------------------------
# Learners


def _one_state_machine():
    # Counterless single state: pays 1 on reaching the D cell.
    return CountingRewardAutomaton(
        states=("u0",),
        terminals=("done",),
        propositions=("D",),
        k=0,
        rules=(
            TransitionRule("u0", "done", parse_guard("D"), (), (), Constant(1.0)),
        ),
        initial="u0",
    )


def test_cql_equals_q_learning_on_one_state_machine():
    m = _one_state_machine()
    for seed in (0, 1):
        p = LearnParams(episodes=40, seed=seed, eval_every=10, eval_episodes=5)
        env = tasks.letter_env(horizon=60, fixed_n=1)
        q1, curve1 = q_learning(env, m, p)
        q2, curve2 = cql(env, m, p)
        assert q1 == q2
        assert curve1 == curve2


def test_q_learning_matches_manual_replay():
    env = tasks.letter_env(horizon=40, fixed_n=1)
    m = tasks.anbcn_machine()
    p = LearnParams(episodes=3, seed=7, eval_episodes=0)
    q, _ = q_learning(env, m, p)

    rng = random.Random(p.seed)
    expect = QTable()
    for _ in range(p.episodes):
        s = env.reset(rng.getrandbits(31))
        cfg = initial_configuration(m)
        for t in range(40):
            key = (env.obs_key(s), cfg.state, cfg.counters)
            a = epsilon_greedy(expect, key, p.epsilon, rng)
            s2 = env.step(s, a)
            sigma = project_label(m, env.label(s, a, s2))
            cfg2, spec, _ = step(m, cfg, sigma)
            key2 = (env.obs_key(s2), cfg2.state, cfg2.counters)
            done = cfg2.state in m.terminals or t == 39
            td_update(expect, key, a, spec.apply(s, a, s2), key2, done,
                      p.alpha, p.gamma)
            s, cfg = s2, cfg2
            if cfg.state in m.terminals:
                break
    assert q == expect


def test_zero_reward_machine_learns_nothing():
    m = CountingRewardAutomaton(
        states=("u0",),
        terminals=(),
        propositions=(),
        k=0,
        rules=(),
        initial="u0",
    )
    env = tasks.letter_env(horizon=30, fixed_n=1)
    q, _ = q_learning(env, m, LearnParams(episodes=5, seed=0, eval_episodes=0))
    assert all(v == 0.0 for row in q.values() for v in row)


def test_alpha_zero_leaves_q_at_init():
    env = tasks.letter_env(horizon=30, fixed_n=1)
    m = tasks.anbcn_machine()
    p = LearnParams(alpha=0.0, episodes=5, seed=0, eval_episodes=0)
    q, _ = q_learning(env, m, p)
    assert all(v == 0.0 for row in q.values() for v in row)


def test_learners_write_finite_values():
    env = tasks.letter_env(horizon=100, fixed_n=2)
    m = tasks.anbcn_machine()
    q, _ = cql(env, m, LearnParams(episodes=60, seed=3, eval_episodes=0))
    assert all(v == v and abs(v) < 1e9 for row in q.values() for v in row)


def test_crm_keeps_counters_empty():
    env = tasks.letter_env(horizon=80, fixed_n=1)
    q, _ = crm(env, generate_rm_letterenv(1),
               LearnParams(episodes=30, seed=0, eval_episodes=0))
    assert q
    assert all(key[2] == () for key in q)


def test_cql_beats_q_learning_on_letter_task():
    env = tasks.letter_env(fixed_n=1)
    m = tasks.anbcn_machine()
    base = dict(episodes=4000, eval_every=25, eval_episodes=30,
                success_threshold=0.95, seed=0)
    q_fast, curve_fast = cql(env, m, LearnParams(**base))
    q_slow, curve_slow = q_learning(env, m, LearnParams(**base))
    fast = samples_to_solve(curve_fast, 0.95)
    slow = samples_to_solve(curve_slow, 0.95)
    assert fast is not None
    assert slow is None or fast < slow


def test_q_learning_reaches_value_iteration_policy():
    env = tasks.letter_env(fixed_n=1)
    m = tasks.anbcn_machine()
    mdp = enumerate_product(env, m, cap=2)
    v, _ = value_iteration(mdp)
    qstar = greedy_q(mdp, v)
    lookup = {
        (env.obs_key(x.env_state), x.machine_state, x.counters): i
        for i, x in enumerate(mdp.states)
    }
    stepper = compile_stepper(m)
    for seed in (0, 1):
        p = LearnParams(episodes=3000, seed=seed, eval_every=25,
                        eval_episodes=30, patience=30)
        q, curve = cql(env, m, p)
        assert samples_to_solve(curve, 0.95) is not None
        # Greedy rollout stays optimal w.r.t. the value-iteration oracle.
        rng = random.Random(f"check:{seed}")
        s = env.reset(rng.getrandbits(31))
        cfg = initial_configuration(m)
        for _ in range(env.config.horizon):
            if cfg.state in m.terminals:
                break
            key = (env.obs_key(s), cfg.state, cfg.counters)
            a = epsilon_greedy(q, key, 0.0, rng)
            row = qstar[lookup[key]]
            assert row[a] >= row.max() - 1e-9
            s2 = env.step(s, a)
            sigma = project_label(m, env.label(s, a, s2))
            cfg, _, _ = stepper(cfg, sigma)
            s = s2
        assert cfg.state == "t_succ"


# ---------------------------------------------------------------------------
# Reward machine templates


def test_letter_template_shape():
    for n, count in ((1, 5), (3, 9)):
        r = generate_rm_letterenv(n)
        assert validate_rm(r) == []
        assert len(r.states) == count
    counts = [len(generate_rm_letterenv(n).states) for n in range(1, 11)]
    assert all(b - a == 2 for a, b in zip(counts, counts[1:]))
    with pytest.raises(ValueError):
        generate_rm_letterenv(0)


def _letter_word_accepted(r, word):
    sigmas = [frozenset((ch,)) for ch in word] + [frozenset()]
    return sum(reward for _, reward in rm_run(r, sigmas)) == 1.0


def _letter_accepted_words(r, max_len):
    """All accepted words up to max_len, walking the word tree and pruning
    absorbing terminals."""
    out = []

    def completes(state):
        nxt, reward = rm_step(r, state, frozenset())
        return nxt in r.terminals and reward == 1.0

    def walk(state, prefix):
        if completes(state):
            out.append("".join(prefix))
        if len(prefix) == max_len:
            return
        for ch in "ABCD":
            nxt, _ = rm_step(r, state, frozenset((ch,)))
            if nxt not in r.terminals:
                walk(nxt, prefix + [ch])

    walk(r.initial, [])
    return out


def test_letter_template_language_small_exhaustive():
    for n in (1, 2):
        r = generate_rm_letterenv(n)
        words = [""]
        frontier = [""]
        for _ in range(2 * n + 2):
            frontier = [w + ch for w in frontier for ch in "ABCD"]
            words += frontier
        accepted = [w for w in words if _letter_word_accepted(r, w)]
        assert accepted == ["A" * n + "BC" + "D" * n]


def test_letter_template_language_pruned_enumeration():
    for n in (3, 4):
        r = generate_rm_letterenv(n)
        assert _letter_accepted_words(r, 2 * n + 2) == ["A" * n + "BC" + "D" * n]


def test_letter_template_exact_string_trace():
    r = generate_rm_letterenv(2)
    sigmas = [frozenset(ch) for ch in "AABCDD"] + [frozenset()]
    trace = rm_run(r, sigmas)
    assert [s for s, _ in trace] == ["a1", "a2", "b", "c", "d1", "d2", "success"]
    assert [rw for _, rw in trace] == [0.0] * 6 + [1.0]


def test_office_template():
    r = generate_rm_office(1)
    assert validate_rm(r) == []
    trace = rm_run(r, [frozenset((e,)) for e in ("M", "EM", "Cf", "Pd")])
    assert [s for s, _ in trace] == ["f1", "c1", "d1", "success"]
    assert [rw for _, rw in trace] == [0.0, 0.0, 0.0, 1.0]
    # An extra coffee during delivery fails with no reward.
    bad = rm_run(r, [frozenset((e,)) for e in ("M", "EM", "Cf", "Cf")])
    assert bad[-1] == ("fail", 0.0)
    # Dk fails from any phase.
    assert rm_run(r, [frozenset(("Dk",))])[-1] == ("fail", 0.0)
    assert len(generate_rm_office(10).states) == 31
    counts = [len(generate_rm_office(n).states) for n in range(1, 8)]
    assert all(b - a == 3 for a, b in zip(counts, counts[1:]))
    with pytest.raises(ValueError):
        generate_rm_office(0)


# ---------------------------------------------------------------------------
# Evaluation


def test_evaluate_policy_oracle_succeeds():
    env = tasks.letter_env(fixed_n=2)
    m = tasks.anbcn_machine()
    mdp = enumerate_product(env, m, cap=2)
    v, _ = value_iteration(mdp)
    qstar = greedy_q(mdp, v)
    q = QTable()
    for i, x in enumerate(mdp.states):
        q[(env.obs_key(x.env_state), x.machine_state, x.counters)] = list(qstar[i])
    result = evaluate_policy(q, env, m, episodes=20, seed=0)
    assert result.success_rate == 1.0
    assert result.mean_return == 1.0
    assert result.episodes == 20


def test_evaluate_policy_random_office_fails():
    env = tasks.office_env()
    m = tasks.office_machine()
    result = evaluate_policy(QTable(), env, m, episodes=60, seed=0)
    assert result.success_rate < 0.05


def test_evaluate_policy_empty():
    env = tasks.letter_env(fixed_n=1)
    result = evaluate_policy(QTable(), env, tasks.anbcn_machine(), 0, seed=0)
    assert result == (0.0, 0.0, 0)


def test_samples_to_solve():
    from cra.learning import CurvePoint

    curve = [CurvePoint(25 * (i + 1), 1000 * (i + 1), r, r)
             for i, r in enumerate([0.0, 0.5, 0.96, 0.97, 0.98, 0.99])]
    assert samples_to_solve(curve, 0.95, patience=3) == 5000
    assert samples_to_solve(curve, 0.95, patience=5) is None
    assert samples_to_solve([], 0.95) is None
