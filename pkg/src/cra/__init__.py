"""Counter-machine reward specifications for reinforcement learning.

Reward automata with integer counters: expressive enough for counting
tasks no finite reward machine covers, compact enough that one machine
serves a whole task family. Ships the automaton core, text formats,
two gridworld benchmarks, tabular and counterfactual Q-learning, a
small from-scratch deep Q-learning backend, and an experiment harness.
"""

from .envs import ACTIONS, EnvConfig, Layout, LetterEnv, OfficeEnv, parse_layout
from .formats import (
    ParseError,
    ValidationError,
    import_dfa_table,
    parse_machine,
    serialize_machine,
)
from .machines import (
    AcceptorMachine,
    Constant,
    CountingRewardAutomaton,
    MachineConfiguration,
    RewardMachine,
    TransitionRule,
    TransitionTable,
    accept,
    ccra_to_cra,
    complexity,
    initial_configuration,
    project_label,
    rm_to_cra,
    run,
    step,
    validate,
)
from .learning import (
    CounterCache,
    CurvePoint,
    EvalResult,
    LearnParams,
    QTable,
    counterfactual_experiences,
    cql,
    crm,
    evaluate_policy,
    generate_rm_letterenv,
    generate_rm_office,
    q_learning,
    samples_to_solve,
)
from .product import ExplicitMDP, enumerate_product, gamma_bound, value_iteration
from .deep import (
    DeepParams,
    QNetwork,
    dqn_train,
    evaluate_net,
    load_checkpoint,
    save_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    "ACTIONS",
    "AcceptorMachine",
    "Constant",
    "CounterCache",
    "CountingRewardAutomaton",
    "CurvePoint",
    "DeepParams",
    "EnvConfig",
    "EvalResult",
    "Layout",
    "LearnParams",
    "LetterEnv",
    "MachineConfiguration",
    "OfficeEnv",
    "ParseError",
    "QNetwork",
    "QTable",
    "RewardMachine",
    "TransitionRule",
    "TransitionTable",
    "ValidationError",
    "accept",
    "ccra_to_cra",
    "complexity",
    "counterfactual_experiences",
    "cql",
    "crm",
    "dqn_train",
    "enumerate_product",
    "ExplicitMDP",
    "gamma_bound",
    "evaluate_net",
    "evaluate_policy",
    "generate_rm_letterenv",
    "generate_rm_office",
    "import_dfa_table",
    "initial_configuration",
    "load_checkpoint",
    "parse_layout",
    "parse_machine",
    "project_label",
    "q_learning",
    "rm_to_cra",
    "run",
    "samples_to_solve",
    "save_checkpoint",
    "serialize_machine",
    "step",
    "validate",
    "value_iteration",
    "__version__",
]
