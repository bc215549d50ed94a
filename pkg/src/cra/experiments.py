"""Experiment harness: config files, seed fan-out, CSV and manifest output.

A run is described by one INI-style config file. Each (machine lane, seed)
pair trains independently; workers fan out across threads (capped by the
CRA_THREADS environment variable) and the writer emits rows in a canonical
order so reruns of the same config are byte-identical.
"""

import configparser
import csv
import dataclasses
import hashlib
import io
import os
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone

from . import __version__, tasks
from .deep import DeepParams, dqn_train
from .envs import EnvConfig, LetterEnv, OfficeEnv, parse_layout
from .formats import import_dfa_table, parse_machine
from .learning import (
    LearnParams,
    cql,
    crm,
    generate_rm_letterenv,
    generate_rm_office,
    q_learning,
)
from .machines import AcceptorMachine, RewardMachine, complexity, rm_to_cra

ALGORITHMS = ("qlearn", "cql", "crm", "dqn", "dqn-cql", "dqn-crm")
CSV_HEADER = (
    "series",
    "seed",
    "point",
    "episode",
    "env_samples",
    "greedy_return",
    "success_rate",
)


class ConfigError(Exception):
    """Experiment config file is malformed or inconsistent."""


@dataclasses.dataclass(frozen=True)
class Lane:
    """One machine/env variant inside a run; per-N sweeps make several."""

    series: str
    machine: object
    fixed_n: int | None


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    name: str
    env: str
    algorithm: str
    machine: str
    seeds: tuple
    output: str
    horizon: int | None = None
    n_max: int = 10
    fixed_n: int | None = None
    fail_reward: float = 0.0
    layout: str | None = None
    learn: LearnParams = LearnParams()
    deep: DeepParams = DeepParams()
    text: str = ""

    def __post_init__(self):
        if self.env not in ("letter", "office"):
            raise ConfigError(f"unknown env {self.env!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")


def _parse_seeds(text):
    out = []
    for token in text.split():
        if ".." in token:
            lo, hi = token.split("..", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(token))
    return tuple(out)


def _section_kwargs(section, spec_fields, integer=(), floating=(), boolean=()):
    kwargs = {}
    for key in section:
        name = key.replace("-", "_")
        if name not in spec_fields:
            raise ConfigError(f"unknown key {key!r}")
        raw = section[key]
        if raw == "":
            continue
        if name in integer:
            kwargs[name] = int(raw)
        elif name in floating:
            kwargs[name] = float(raw)
        elif name in boolean:
            if raw.lower() not in ("true", "false"):
                raise ConfigError(f"{key} must be true or false")
            kwargs[name] = raw.lower() == "true"
        else:
            kwargs[name] = raw
    return kwargs


def parse_experiment_config(text):
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    if "experiment" not in parser:
        raise ConfigError("missing [experiment] section")
    exp = parser["experiment"]
    for key in ("name", "env", "machine", "algorithm", "seeds", "output"):
        if key not in exp:
            raise ConfigError(f"[experiment] is missing {key!r}")

    learn_kwargs = {}
    if "learning" in parser:
        fields = {f.name for f in dataclasses.fields(LearnParams)} - {"seed"}
        learn_kwargs = _section_kwargs(
            parser["learning"],
            fields,
            integer=("episodes", "horizon", "eval_every", "eval_episodes",
                     "patience"),
            floating=("alpha", "gamma", "epsilon", "success_threshold"),
            boolean=("stop_when_solved", "counterfactual_fallback",
                     "full_enumeration"),
        )
    deep_kwargs = {}
    if "deep" in parser:
        fields = {f.name for f in dataclasses.fields(DeepParams)} - {"seed"}
        deep_kwargs = _section_kwargs(
            parser["deep"],
            fields,
            integer=("interactions", "batch", "buffer", "target_period",
                     "eps_anneal", "train_repeat", "hidden", "eval_every",
                     "eval_episodes"),
            floating=("eta", "gamma", "eps_start", "eps_end", "optimism"),
        )
    try:
        learn = LearnParams(**learn_kwargs)
        deep = DeepParams(**deep_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    try:
        return ExperimentConfig(
            name=exp["name"],
            env=exp["env"],
            machine=exp["machine"],
            algorithm=exp["algorithm"],
            seeds=_parse_seeds(exp["seeds"]),
            output=exp["output"],
            horizon=exp.getint("horizon", fallback=None),
            n_max=exp.getint("n-max", fallback=10),
            fixed_n=exp.getint("fixed-n", fallback=None),
            fail_reward=exp.getfloat("fail-reward", fallback=0.0),
            layout=exp.get("layout", fallback=None),
            learn=learn,
            deep=deep,
            text=text,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_experiment_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_experiment_config(fh.read())
    except OSError as exc:
        raise FileNotFoundError(str(exc)) from None


def _parse_n_range(spec):
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(spec)]


def resolve_lanes(cfg):
    """Expand the machine spec into one or more (series, machine) lanes."""
    spec = cfg.machine
    base = cfg.algorithm
    if spec == "cra-letter":
        return [Lane(base, tasks.anbcdn_machine(), cfg.fixed_n)]
    if spec == "cra-office":
        return [Lane(base, tasks.office_machine(), cfg.fixed_n)]
    if spec.startswith("rm-letter:") or spec.startswith("rm-office:"):
        kind, _, rest = spec.partition(":")
        gen = generate_rm_letterenv if kind == "rm-letter" else generate_rm_office
        try:
            ns = _parse_n_range(rest)
        except ValueError:
            raise ConfigError(f"bad machine spec {spec!r}") from None
        return [Lane(f"{base}-n{n}", gen(n), n) for n in ns]
    if spec.startswith("dfa:"):
        name = spec[len("dfa:"):]
        if name == "mail":
            r = tasks.mail_delivery_rm(cfg.fail_reward)
        else:
            with open(name, encoding="utf-8") as fh:
                r = import_dfa_table(fh.read(), cfg.fail_reward)
        return [Lane(base, r, cfg.fixed_n)]
    with open(spec, encoding="utf-8") as fh:
        m = parse_machine(fh.read())
    if isinstance(m, AcceptorMachine):
        raise ConfigError("acceptors have no reward to learn from")
    return [Lane(base, m, cfg.fixed_n)]


def _make_env(cfg, lane):
    if cfg.layout is not None:
        with open(cfg.layout, encoding="utf-8") as fh:
            layout = parse_layout(fh.read())
    else:
        name = "letter.layout" if cfg.env == "letter" else "office.layout"
        layout = parse_layout(tasks.data_text(name))
    default_h = (
        tasks.LETTER_HORIZON if cfg.env == "letter" else tasks.OFFICE_HORIZON
    )
    env_config = EnvConfig(
        layout,
        cfg.horizon if cfg.horizon is not None else default_h,
        n_max=cfg.n_max,
        fixed_n=lane.fixed_n,
    )
    return (LetterEnv if cfg.env == "letter" else OfficeEnv)(env_config)


def _as_cra(machine):
    if isinstance(machine, RewardMachine):
        return rm_to_cra(machine)
    return machine


def _train(cfg, lane, seed):
    env = _make_env(cfg, lane)
    algo = cfg.algorithm
    if algo in ("qlearn", "cql", "crm"):
        p = dataclasses.replace(cfg.learn, seed=seed)
        if algo == "crm":
            if not isinstance(lane.machine, RewardMachine):
                raise ConfigError("crm needs a reward machine spec")
            _, curve = crm(env, lane.machine, p)
        elif algo == "cql":
            _, curve = cql(env, _as_cra(lane.machine), p)
        else:
            _, curve = q_learning(env, _as_cra(lane.machine), p)
        return curve
    p = dataclasses.replace(cfg.deep, seed=seed)
    if algo == "dqn-crm":
        if not isinstance(lane.machine, RewardMachine):
            raise ConfigError("dqn-crm needs a reward machine spec")
        _, curve = dqn_train(env, rm_to_cra(lane.machine), "crm", p)
    elif algo == "dqn-cql":
        _, curve = dqn_train(env, _as_cra(lane.machine), "cql", p)
    else:
        _, curve = dqn_train(env, _as_cra(lane.machine), "dqn", p)
    return curve


@dataclasses.dataclass
class RunResult:
    rows: list
    manifest: dict
    failures: list


def _worker_count(n_jobs):
    cap = os.environ.get("CRA_THREADS")
    if cap is not None:
        return max(1, min(n_jobs, int(cap)))
    return max(1, min(n_jobs, os.cpu_count() or 1))


def run_experiment(cfg):
    """Train every (lane, seed) pair; returns rows, manifest, failures."""
    lanes = resolve_lanes(cfg)
    jobs = [(lane, seed) for lane in lanes for seed in cfg.seeds]
    started = time.time()
    results = {}
    failures = []

    def one(job):
        lane, seed = job
        try:
            return (lane.series, seed), _train(cfg, lane, seed), None
        except Exception as exc:
            return (lane.series, seed), None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=_worker_count(len(jobs))) as pool:
        for key, curve, error in pool.map(one, jobs):
            results[key] = curve
            if error is not None:
                failures.append((key[0], key[1], error))

    rows = []
    for lane in lanes:
        for seed in cfg.seeds:
            curve = results.get((lane.series, seed))
            if curve is None:
                continue
            for i, pt in enumerate(curve, start=1):
                rows.append((
                    lane.series,
                    seed,
                    i,
                    pt.episode,
                    pt.env_samples,
                    pt.mean_return,
                    pt.success_rate,
                ))

    manifest = {
        "format": "cra-run-manifest-v1",
        "name": cfg.name,
        "config-sha256": hashlib.sha256(cfg.text.encode("utf-8")).hexdigest(),
        "code-version": __version__,
        "env": cfg.env,
        "machine": cfg.machine,
        "algorithm": cfg.algorithm,
        "seeds": " ".join(str(s) for s in cfg.seeds),
        "threads": str(_worker_count(len(jobs))),
        "created-utc": datetime.now(timezone.utc).isoformat(),
        "wall-seconds": f"{time.time() - started:.3f}",
        "rows": str(len(rows)),
    }
    stream = "numpy-pcg64" if cfg.algorithm.startswith("dqn") else "python-random"
    for seed in cfg.seeds:
        manifest[f"rng-seed-{seed}"] = f"{stream}:{seed}"
    manifest["eval-rng"] = "derived per eval point from (seed, point)"
    for series, seed, error in failures:
        manifest[f"failure-{series}-{seed}"] = error
    return RunResult(rows, manifest, failures)


def format_rows(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def write_outputs(result, output_path):
    out_dir = os.path.dirname(output_path)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    with open(output_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_rows(result.rows))
    with open(output_path + ".manifest", "w", encoding="utf-8") as fh:
        for key, value in result.manifest.items():
            fh.write(f"{key} = {value}\n")


def read_rows(path):
    """CSV rows back as typed tuples matching CSV_HEADER."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(CSV_HEADER):
            raise ConfigError(f"unexpected CSV header in {path}")
        rows = []
        for rec in reader:
            series, seed, point, episode, samples, ret, succ = rec
            rows.append((
                series, int(seed), int(point), int(episode), int(samples),
                float(ret), float(succ),
            ))
    return rows


def aggregate_rows(rows):
    """Per (series, point): mean env samples, mean/variance of greedy
    return, mean success rate. Sample variance with the n=1 case pinned
    to 0."""
    groups = {}
    for series, seed, point, episode, samples, ret, succ in rows:
        groups.setdefault(series, {}).setdefault(point, []).append(
            (samples, ret, succ)
        )
    out = {}
    for series, points in groups.items():
        table = []
        for point in sorted(points):
            vals = points[point]
            n = len(vals)
            mean_samples = sum(v[0] for v in vals) / n
            mean_ret = sum(v[1] for v in vals) / n
            if n > 1:
                var_ret = sum((v[1] - mean_ret) ** 2 for v in vals) / (n - 1)
            else:
                var_ret = 0.0
            mean_succ = sum(v[2] for v in vals) / n
            table.append((point, mean_samples, mean_ret, var_ret, mean_succ))
        out[series] = table
    return out


def solve_table(rows, threshold, patience):
    """Per series: seed -> samples-to-solve (None when never solved)."""
    curves = {}
    for series, seed, point, episode, samples, ret, succ in rows:
        curves.setdefault(series, {}).setdefault(seed, []).append(
            (point, samples, ret)
        )
    out = {}
    for series, seeds in curves.items():
        per_seed = {}
        for seed, pts in seeds.items():
            pts.sort()
            streak = 0
            solved = None
            for _, samples, ret in pts:
                streak = streak + 1 if ret >= threshold else 0
                if streak >= patience:
                    solved = samples
                    break
            per_seed[seed] = solved
        out[series] = per_seed
    return out


def _median(values):
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    if n % 2:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2


def render_report(rows, threshold=0.95, patience=10):
    """Aggregate text report: per-point means/variances plus a
    samples-to-solve table with per-series medians."""
    lines = []
    agg = aggregate_rows(rows)
    for series in sorted(agg):
        lines.append(f"series {series}")
        lines.append("  point  env_samples  mean_return  var_return  success")
        for point, samples, mean_ret, var_ret, succ in agg[series]:
            lines.append(
                f"  {point:5d}  {samples:11.1f}  {mean_ret:11.6f}"
                f"  {var_ret:10.6f}  {succ:7.3f}"
            )
    solves = solve_table(rows, threshold, patience)
    lines.append(
        f"samples-to-solve (threshold {threshold}, patience {patience})"
    )
    total_median = 0.0
    all_solved = True
    for series in sorted(solves):
        per_seed = solves[series]
        shown = [
            f"{seed}:{per_seed[seed] if per_seed[seed] is not None else 'never'}"
            for seed in sorted(per_seed)
        ]
        solved_vals = [v for v in per_seed.values() if v is not None]
        if solved_vals:
            med = _median(solved_vals)
            lines.append(
                f"  {series}: median {med:g} over {len(solved_vals)} solved"
                f" ({' '.join(shown)})"
            )
            total_median += med
        else:
            all_solved = False
            lines.append(f"  {series}: never solved ({' '.join(shown)})")
    if len(solves) > 1 and all_solved:
        lines.append(f"  total (sum of series medians): {total_median:g}")
    return "\n".join(lines) + "\n"


def complexity_table(task, n_max):
    """Rows (n, cra_states, cra_rules, rm_states, rm_transitions) comparing
    the fixed counter machine against per-N generated reward machines."""
    if task == "letter":
        m = tasks.anbcdn_machine()
        gen = generate_rm_letterenv
    elif task == "office":
        m = tasks.office_machine()
        gen = generate_rm_office
    else:
        raise ConfigError(f"unknown task {task!r}")
    if n_max < 1:
        raise ConfigError("n-max must be >= 1")
    cra_states, cra_rules = complexity(m)
    out = []
    for n in range(1, n_max + 1):
        r = gen(n)
        rm_states = len(r.states) + len(r.terminals)
        out.append((n, cra_states, cra_rules, rm_states, len(r.transitions)))
    return out


def render_complexity(task, n_max):
    rows = complexity_table(task, n_max)
    lines = ["    n  cra_states  cra_rules  rm_states  rm_transitions"]
    for n, cs, cr, rs, rt in rows:
        lines.append(f"{n:5d}  {cs:10d}  {cr:9d}  {rs:9d}  {rt:14d}")
    return "\n".join(lines) + "\n"
