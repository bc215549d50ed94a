"""Shared pytest plumbing: the acceptance suite reports one line per criterion."""

import re

import pytest

ACCEPTANCE = {}

LABELS = {
    1: "balanced-word acceptor matches brute force over all words of length <= 14",
    2: "1000 random constant-reward machines convert trace-exactly",
    3: "1000 random reward machines convert size- and trace-exactly",
    4: "tabular counterfactual learner matches value iteration along its greedy path",
    5: "one counter machine solves all sizes on fewer samples than five per-size machines",
    6: "counter machine size flat in task size while reward machine size is affine",
    7: "counterfactual learner reduces bit-identically to Q-learning on one-state machines",
    8: "analytic gradients match central finite differences",
    9: "deep counterfactual learners solve the delivery task; plain DQN lags",
    10: "experiment reruns are byte-identical",
}

_PAT = re.compile(r"test_criterion_(\d+)")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    out = yield
    rep = out.get_result()
    match = _PAT.search(item.name)
    if match is not None:
        n = int(match.group(1))
        if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
            ACCEPTANCE[n] = rep.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    words = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}
    for n in sorted(LABELS):
        outcome = ACCEPTANCE.get(n)
        if outcome is None:
            continue
        word = words.get(outcome, outcome.upper())
        terminalreporter.write_line(f"criterion {n:2d}: {word}  {LABELS[n]}")
