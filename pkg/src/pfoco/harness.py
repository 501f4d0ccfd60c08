"""Experiment configuration, validation and sweeps.

A config is a TOML file of flat dotted keys::

    algorithm = "dpp"
    horizons = [1024, 4096]
    seeds = [0, 1]
    intervals = [[0.25, 0.5]]        # fractions of T; default is the whole run
    output.dir = "out/dpp"

    set.kind = "ball"
    set.n = 10
    set.radius = 1.0

    generator.name = "planted_quadratic"
    generator.drift = 0.05

    schedule.scale_eps = 0.001       # multiplies the default; schedule.eps would replace it

Each ``(T, seed)`` cell regenerates its instance from the config, so cells
are independent and may run in separate processes.
"""

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigurationError, InputError
from .geometry import set_from_descriptor
from .learners import ALGORITHMS, SCHEDULE_FIELDS, bandit_delta_condition, default_schedule, run, write_trace_csv
from .metrics import fit_exponent, summarize
from .problems import GENERATORS, RNG_NAME, generate

OUT_DIR_ENV = "PFOCO_OUT_DIR"
LEARNER_SEED_OFFSET = 1_000_003

SUMMARY_HEADER = [
    "generator", "algorithm", "T", "seed", "regret", "violation", "loo_calls",
    "interval_s", "interval_e", "interval_regret", "interval_violation",
    "interval_correction", "K", "eps", "delta", "alpha", "eta", "mu", "rng",
    "delta_condition",
]

SET_KINDS = ("ball", "box", "simplex", "flow", "psd")
NO_INNER_RADIUS = ("simplex", "flow", "psd")
GENERATOR_PARAMS = {
    "planted_quadratic": {"drift", "n_constraints", "margin", "G_g"},
    "capacitated_flow": {"tightness"},
    "psd_affine": {"m_t", "margin"},
}


class ConfigParseError(InputError):
    """The config file is not valid TOML; the message carries the line number."""


@dataclass
class ExperimentConfig:
    algorithm: str
    generator: dict
    set: dict
    horizons: list
    seeds: list
    overrides: dict = field(default_factory=dict)
    scales: dict = field(default_factory=dict)
    output_dir: str = "out"
    intervals: list = field(default_factory=lambda: [[0.0, 1.0]])
    base_dir: str = "."

    @classmethod
    def from_dict(cls, raw, base_dir="."):
        raw = dict(raw)
        sched = dict(raw.get("schedule", {}))
        overrides = {k: v for k, v in sched.items() if not k.startswith("scale_")}
        scales = {k[len("scale_"):]: v for k, v in sched.items() if k.startswith("scale_")}
        out = raw.get("output", {})
        return cls(
            algorithm=raw.get("algorithm"),
            generator=dict(raw.get("generator", {})),
            set=dict(raw.get("set", {})),
            horizons=raw.get("horizons", []),
            seeds=raw.get("seeds", [0]),
            overrides=overrides,
            scales=scales,
            output_dir=out.get("dir", "out") if isinstance(out, dict) else out,
            intervals=raw.get("intervals", [[0.0, 1.0]]),
            base_dir=str(base_dir),
        )

    def set_descriptor(self):
        desc = dict(self.set)
        if desc.get("kind") == "flow" and "dag_file" in desc:
            path = Path(desc["dag_file"])
            if not path.is_absolute():
                desc["dag_file"] = str(Path(self.base_dir) / path)
        return desc

    def generator_params(self):
        return {k: v for k, v in self.generator.items() if k != "name"}

    def interval_bounds(self, T):
        """Convert the fractional intervals to 1-based ``(s, e)`` pairs."""
        out = []
        for a, b in self.intervals:
            s = max(1, int(round(a * T)))
            e = min(T, int(round(b * T)))
            out.append((s, e))
        return out


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParseError(f"{path}: cannot read config ({exc})") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        lineno = getattr(exc, "lineno", None)
        where = f"line {lineno}: " if lineno else ""
        raise ConfigParseError(f"{path}: {where}{exc}") from None
    return ExperimentConfig.from_dict(raw, base_dir=path.parent)


def _is_pow2(v):
    return isinstance(v, int) and not isinstance(v, bool) and v >= 1 and (v & (v - 1)) == 0


def _positive_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) and v > 0


def validate(config, min_horizons=1):
    """Return a list of ``"field: rule"`` strings; empty means runnable."""
    problems = []
    add = problems.append

    if config.algorithm not in ALGORITHMS:
        add(f"algorithm: must be one of {', '.join(ALGORITHMS)}")

    kind = config.set.get("kind")
    if kind not in SET_KINDS:
        add(f"set.kind: must be one of {', '.join(SET_KINDS)}")
    else:
        try:
            set_from_descriptor(config.set_descriptor())
        except (InputError, KeyError, TypeError, ValueError, OSError) as exc:
            add(f"set: cannot build {kind} set ({exc})")
        if config.algorithm == "bandit" and kind in NO_INNER_RADIUS:
            add(f"set.kind: inner radius required for the bandit learner ({kind} has none)")

    gname = config.generator.get("name")
    if gname not in GENERATORS:
        add(f"generator.name: must be one of {', '.join(GENERATORS)}")
    else:
        unknown = set(config.generator_params()) - GENERATOR_PARAMS[gname]
        for key in sorted(unknown):
            add(f"generator.{key}: unknown parameter for {gname}")
        if gname == "capacitated_flow" and kind != "flow":
            add("generator.name: capacitated_flow requires set.kind = 'flow'")
        if gname == "psd_affine" and kind != "psd":
            add("generator.name: psd_affine requires set.kind = 'psd'")

    horizons = config.horizons
    if not isinstance(horizons, list) or not horizons:
        add("horizons: must be a non-empty list")
        horizons = []
    else:
        for T in horizons:
            if not _is_pow2(T) or T < 2:
                add(f"horizons: {T!r} is not a power of two >= 2")
        if len(set(map(str, horizons))) != len(horizons):
            add("horizons: duplicate entries")
        if len(horizons) < min_horizons:
            add(f"horizons: at least {min_horizons} needed for an exponent fit")

    seeds = config.seeds
    if not isinstance(seeds, list) or not seeds:
        add("seeds: must be a non-empty list")
    elif any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in seeds):
        add("seeds: must be nonnegative integers")

    for key, val in config.overrides.items():
        if key not in SCHEDULE_FIELDS:
            add(f"schedule.{key}: unknown schedule field")
        elif not _positive_number(val):
            add(f"schedule.{key}: must be positive")
        elif key == "K":
            if not isinstance(val, int):
                add("schedule.K: must be an integer")
            else:
                for T in horizons:
                    if isinstance(T, int) and T % val:
                        add(f"schedule.K: K must divide T (K={val}, T={T})")
    for key, val in config.scales.items():
        if key not in SCHEDULE_FIELDS or key == "K":
            add(f"schedule.scale_{key}: unknown scalable field")
        elif not _positive_number(val):
            add(f"schedule.scale_{key}: must be positive")

    ivals = config.intervals
    if not isinstance(ivals, list) or not ivals:
        add("intervals: must be a non-empty list of [start, end] fractions")
    else:
        for iv in ivals:
            ok = (
                isinstance(iv, list) and len(iv) == 2
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in iv)
                and 0.0 <= iv[0] < iv[1] <= 1.0
            )
            if not ok:
                add(f"intervals: {iv!r} must be [a, b] with 0 <= a < b <= 1")

    if not isinstance(config.output_dir, str) or not config.output_dir:
        add("output.dir: must be a non-empty string")
    return problems


# ---------------------------------------------------------------------------
# running


@dataclass
class CellResult:
    T: int
    seed: int
    trace: object
    metrics: object
    schedule: object
    delta_condition: object


def run_cell(config, T, seed):
    K = set_from_descriptor(config.set_descriptor())
    problem = generate(config.generator["name"], K, T, seed, **config.generator_params())
    schedule = default_schedule(config.algorithm, problem, T, config.overrides, config.scales)
    trace = run(config.algorithm, problem, schedule, rng_seed=seed + LEARNER_SEED_OFFSET)
    metrics = summarize(trace, problem, config.interval_bounds(T))
    cond = bandit_delta_condition(schedule, problem) if config.algorithm == "bandit" else None
    return CellResult(T, seed, trace, metrics, schedule, cond)


def _run_cell_args(args):
    return run_cell(*args)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _summary_rows(config, cell):
    s = cell.schedule
    m = cell.metrics
    rows = []
    for iv in m.intervals:
        rows.append([
            config.generator["name"], config.algorithm, cell.T, cell.seed,
            _fmt(m.regret), _fmt(m.violation), m.loo_calls,
            iv.s, iv.e, _fmt(iv.regret), _fmt(iv.violation), _fmt(iv.correction),
            s.K, _fmt(s.eps), _fmt(s.delta), _fmt(s.alpha), _fmt(s.eta), _fmt(s.mu), RNG_NAME,
            "" if cell.delta_condition is None else str(bool(cell.delta_condition)).lower(),
        ])
    return rows


def sweep_exponents(cells):
    """Exponents of the seed-averaged regret and violation against ``T``.

    With four or more horizons the smallest is dropped (burn-in).  Returns
    ``(regret_exponent, violation_exponent)``; NaN where a mean is not
    positive.
    """
    by_T = {}
    for c in cells:
        by_T.setdefault(c.T, []).append(c.metrics)
    Ts = sorted(by_T)
    if len(Ts) < 3:
        raise InputError("an exponent fit needs at least three horizons")
    if len(Ts) >= 4:
        Ts = Ts[1:]
    out = []
    for attr in ("regret", "violation"):
        pts = [(T, float(np.mean([getattr(m, attr) for m in by_T[T]]))) for T in Ts]
        try:
            out.append(fit_exponent(pts))
        except InputError:
            out.append(math.nan)
    return tuple(out)


def resolve_output_dir(config, out=None):
    if out:
        return Path(out)
    env = os.environ.get(OUT_DIR_ENV)
    if env:
        return Path(env)
    path = Path(config.output_dir)
    return path if path.is_absolute() else Path(config.base_dir) / path


def run_experiment(config, out_dir=None, jobs=1, write_traces=True):
    """Run every ``(T, seed)`` cell and write trace and summary CSVs.

    Returns ``(cells, exponents)``; ``exponents`` is ``None`` with fewer than
    three horizons.  Raises :class:`ConfigurationError` on an invalid config.
    """
    issues = validate(config)
    if issues:
        raise ConfigurationError("; ".join(issues))
    out = resolve_output_dir(config, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(config, T, seed) for T in config.horizons for seed in config.seeds]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_run_cell_args, tasks))
    else:
        cells = [run_cell(*t) for t in tasks]

    rows = []
    for cell in cells:
        if write_traces:
            write_trace_csv(cell.trace, out / f"trace_T{cell.T}_seed{cell.seed}.csv")
        rows.extend(_summary_rows(config, cell))
    exponents = None
    if len(config.horizons) >= 3:
        exponents = sweep_exponents(cells)
        rows.append([
            config.generator["name"], config.algorithm, "exponent", "mean",
            _fmt(exponents[0]), _fmt(exponents[1]), "", "", "", "", "", "",
            "", "", "", "", "", "", RNG_NAME, "",
        ])
    with open(out / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        w.writerows(rows)
    return cells, exponents
