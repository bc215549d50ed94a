"""Loaders for the shipped machines and layouts."""

from importlib.resources import files

from .envs import EnvConfig, LetterEnv, OfficeEnv, parse_layout
from .formats import import_dfa_table, parse_machine

LETTER_HORIZON = 500
OFFICE_HORIZON = 1000


def data_text(name):
    return (files("cra") / "data" / name).read_text(encoding="utf-8")


def anbcn_machine():
    """Single-counter machine rewarding A^N B C^N observation strings."""
    return parse_machine(data_text("anbcn.cra"))


def anbcdn_machine():
    """Single-counter machine for the context-free task A^N B C D^N."""
    return parse_machine(data_text("anbcdn.cra"))


def office_machine():
    """Two-counter fetch/brew/deliver machine for the office world."""
    return parse_machine(data_text("office.cra"))


def anbn_acceptor():
    """Acceptor for the language { A^N B^N : N >= 1 }."""
    return parse_machine(data_text("anbn.acceptor"))


def mail_delivery_rm(fail_reward=0.0):
    """Reward machine for the single mail-then-delivery task, imported from
    its transition table."""
    return import_dfa_table(data_text("mail_delivery.dfa"), fail_reward)


def letter_env(horizon=LETTER_HORIZON, n_max=10, fixed_n=None):
    layout = parse_layout(data_text("letter.layout"))
    return LetterEnv(EnvConfig(layout, horizon, n_max, fixed_n))


def office_env(horizon=OFFICE_HORIZON, n_max=10, fixed_n=None):
    layout = parse_layout(data_text("office.layout"))
    return OfficeEnv(EnvConfig(layout, horizon, n_max, fixed_n))
