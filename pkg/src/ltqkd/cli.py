"""Command-line front end: scenario files, sweeps, coverage, validation.

A scenario is a JSON file with a required schema_version.  `sweep`
evaluates the key rate over the configured (method, block size, loss)
grid and writes a CSV plus a rate-versus-loss figure next to it;
`coverage` Monte-Carlo-checks the failure probability of every
phase-error bound on the sampled virtual protocol; `validate` only
checks the file.  Exit codes: 0 success, 1 usage or schema error,
2 numerical or domain error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from .channel_sim import ChannelParams, expected_counts, sample_pm_virtual_counts
from .concentration import phase_errors_azuma, phase_errors_kato
from .errors import LtqkdError, SchemaError
from .keyrate import METHODS, ProtocolConfig, compute_rate, optimize_rate
from .pm_estimator import pm_decompositions, pm_phase_error_bound, pm_tagging
from .qubit_algebra import PHASE_ERROR_PAIRS

__all__ = ["Scenario", "load_scenario", "run_sweep", "run_coverage", "main"]

SCHEMA_VERSION = 1
JOBS_ENV = "LTQKD_JOBS"

CSV_COLUMNS = (
    "protocol",
    "method",
    "n_tot",
    "loss_db",
    "rate",
    "key_length",
    "n_sifted",
    "n_ph_upper",
    "probabilities",
    "wall_time_ms",
)

COVERAGE_COLUMNS = (
    "bound",
    "trials",
    "violations",
    "fraction",
    "wilson_low",
    "wilson_high",
    "nominal_eps",
    "verdict",
)

_PM_PROB_KEYS = ("p_0z", "p_1z", "p_0x", "p_zb", "p_xb")
_MDI_PROB_KEYS = ("p_z_alice", "p_z_bob", "p_k_given_z")

_DEFAULT_PROBS = {
    "pm": {"p_0z": 0.25, "p_1z": 0.25, "p_0x": 0.5, "p_zb": 0.5, "p_xb": 0.5},
    "mdi": {"p_z_alice": 0.5, "p_z_bob": 0.5, "p_k_given_z": 0.5},
}

_KNOWN_KEYS = {
    "schema_version", "protocol", "delta", "eps_c", "eps_s", "f",
    "dark_count_prob", "misalignment", "bell_outcomes", "probabilities",
    "optimize", "n_tot", "loss_db", "methods", "out", "jobs", "trials",
    "seed", "coverage_eps",
}


@dataclass(frozen=True)
class Scenario:
    """Validated scenario file content."""

    protocol: str
    delta: float
    eps_c: float
    eps_s: float
    f: float
    dark_count_prob: float
    misalignment: float
    bell_outcomes: tuple
    probabilities: dict
    optimize: bool
    n_tot: tuple
    loss_db: tuple
    methods: tuple
    out: str
    jobs: int
    trials: int
    seed: int
    coverage_eps: float

    def config(self, n_tot: float) -> ProtocolConfig:
        if self.protocol == "pm":
            return ProtocolConfig(
                protocol="pm", n_tot=n_tot, delta=self.delta,
                eps_c=self.eps_c, eps_s=self.eps_s, f=self.f,
                **self.probabilities,
            )
        return ProtocolConfig(
            protocol="mdi", n_tot=n_tot, delta=self.delta,
            eps_c=self.eps_c, eps_s=self.eps_s, f=self.f,
            bell_outcomes=self.bell_outcomes, **self.probabilities,
        )

    def channel(self, loss_db: float) -> ChannelParams:
        if self.protocol == "pm":
            return ChannelParams.pm_from_loss(
                loss_db, self.dark_count_prob, self.misalignment
            )
        return ChannelParams.mdi_from_loss(loss_db, self.dark_count_prob)


def _require(raw: dict, key: str):
    if key not in raw:
        raise SchemaError(f"missing required key '{key}'")
    return raw[key]


def _number(value, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"'{key}' must be a number")
    value = float(value)
    if not math.isfinite(value):
        raise SchemaError(f"'{key}' must be finite")
    return value


def _integer(value, key: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"'{key}' must be an integer")
    return value


def _loss_grid(value) -> tuple:
    if isinstance(value, list):
        return tuple(_number(x, "loss_db") for x in value)
    if isinstance(value, dict):
        extra = set(value) - {"start", "stop", "step"}
        if extra:
            raise SchemaError(f"unknown loss_db range key '{sorted(extra)[0]}'")
        start = _number(_require(value, "start"), "loss_db.start")
        stop = _number(_require(value, "stop"), "loss_db.stop")
        step = _number(_require(value, "step"), "loss_db.step")
        if step <= 0 or stop < start:
            raise SchemaError("'loss_db' range needs step > 0 and stop >= start")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(start + k * step for k in range(count))
    raise SchemaError("'loss_db' must be a list or a start/stop/step range")


def load_scenario(path) -> Scenario:
    """Parse and fully validate a scenario file.

    Every schema violation raises SchemaError naming the offending key;
    the selection probabilities and channel parameters are pushed through
    their own validators here so a sweep cannot start on inconsistent
    input.
    """
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"scenario file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"scenario is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaError("scenario must be a JSON object")
    unknown = set(raw) - _KNOWN_KEYS
    if unknown:
        raise SchemaError(f"unknown key '{sorted(unknown)[0]}'")

    version = _require(raw, "schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(
            f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})"
        )
    protocol = _require(raw, "protocol")
    if protocol not in ("pm", "mdi"):
        raise SchemaError(f"'protocol' must be 'pm' or 'mdi', got {protocol!r}")

    n_tot_raw = _require(raw, "n_tot")
    if not isinstance(n_tot_raw, list) or not n_tot_raw:
        raise SchemaError("'n_tot' must be a non-empty list")
    n_tot = tuple(_number(x, "n_tot") for x in n_tot_raw)

    losses = _loss_grid(_require(raw, "loss_db"))

    methods_raw = _require(raw, "methods")
    if not isinstance(methods_raw, list) or not methods_raw:
        raise SchemaError("'methods' must be a non-empty list")
    for method in methods_raw:
        if method not in METHODS:
            raise SchemaError(f"unknown method '{method}' in 'methods'")
    if len(set(methods_raw)) != len(methods_raw):
        raise SchemaError("'methods' entries must be unique")

    if protocol == "mdi" and "misalignment" in raw:
        raise SchemaError("'misalignment' is only valid for protocol 'pm'")
    if protocol == "pm" and "bell_outcomes" in raw:
        raise SchemaError("'bell_outcomes' is only valid for protocol 'mdi'")

    bell_raw = raw.get("bell_outcomes", ["psi_minus"])
    if not isinstance(bell_raw, list) or not bell_raw:
        raise SchemaError("'bell_outcomes' must be a non-empty list")
    for outcome in bell_raw:
        if outcome not in PHASE_ERROR_PAIRS:
            raise SchemaError(f"unknown Bell outcome '{outcome}' in 'bell_outcomes'")

    prob_keys = _PM_PROB_KEYS if protocol == "pm" else _MDI_PROB_KEYS
    probs_raw = raw.get("probabilities", dict(_DEFAULT_PROBS[protocol]))
    if not isinstance(probs_raw, dict):
        raise SchemaError("'probabilities' must be an object")
    for key in probs_raw:
        if key not in prob_keys:
            raise SchemaError(f"unknown probability '{key}' for protocol '{protocol}'")
    for key in prob_keys:
        if key not in probs_raw:
            raise SchemaError(f"missing probability '{key}'")
    probabilities = {key: _number(probs_raw[key], key) for key in prob_keys}

    optimize = raw.get("optimize", True)
    if not isinstance(optimize, bool):
        raise SchemaError("'optimize' must be a boolean")
    out = raw.get("out", "sweep.csv")
    if not isinstance(out, str) or not out:
        raise SchemaError("'out' must be a non-empty string")
    jobs = _integer(raw.get("jobs", 0), "jobs") or None
    if jobs is not None and jobs < 1:
        raise SchemaError("'jobs' must be at least 1")
    trials = raw.get("trials")
    if trials is not None:
        trials = _integer(trials, "trials")
    seed = raw.get("seed")
    if seed is not None:
        seed = _integer(seed, "seed")
        if seed < 0:
            raise SchemaError("'seed' must be non-negative")

    scenario = Scenario(
        protocol=protocol,
        delta=_number(raw.get("delta", 0.0), "delta"),
        eps_c=_number(raw.get("eps_c", 1e-8), "eps_c"),
        eps_s=_number(raw.get("eps_s", 1e-8), "eps_s"),
        f=_number(raw.get("f", 1.16), "f"),
        dark_count_prob=_number(raw.get("dark_count_prob", 0.0), "dark_count_prob"),
        misalignment=_number(raw.get("misalignment", 0.0), "misalignment"),
        bell_outcomes=tuple(bell_raw),
        probabilities=probabilities,
        optimize=optimize,
        n_tot=n_tot,
        loss_db=losses,
        methods=tuple(methods_raw),
        out=out,
        jobs=jobs or 0,
        trials=trials or 0,
        seed=seed if seed is not None else -1,
        coverage_eps=_number(raw.get("coverage_eps", 0.05), "coverage_eps"),
    )
    # surface inconsistent probabilities and channel parameters now, as
    # schema problems, rather than mid-sweep
    try:
        scenario.config(scenario.n_tot[0])
        scenario.channel(scenario.loss_db[0] if scenario.loss_db else 0.0)
    except LtqkdError as exc:
        raise SchemaError(str(exc)) from exc
    return scenario


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _format_probabilities(probabilities: dict) -> str:
    return ";".join(
        f"{key}={repr(float(probabilities[key]))}" for key in sorted(probabilities)
    )


def _sweep_task(task):
    scenario, method, n_tot, loss_db = task
    config = scenario.config(n_tot)
    channel = scenario.channel(loss_db)
    started = time.perf_counter()
    if scenario.optimize:
        result = optimize_rate(config, channel, method)
    else:
        result = compute_rate(config, channel, method)
    wall_ms = (time.perf_counter() - started) * 1e3
    return method, n_tot, loss_db, result, wall_ms


def run_sweep(scenario: Scenario, jobs: int, out_path: Path) -> int:
    """Evaluate the scenario grid and write the CSV and figure artifacts."""
    tasks = [
        (scenario, method, n_tot, loss)
        for method in scenario.methods
        for n_tot in scenario.n_tot
        for loss in scenario.loss_db
    ]
    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_sweep_task, tasks))
    else:
        outcomes = [_sweep_task(task) for task in tasks]

    rows = []
    for method, n_tot, loss_db, result, wall_ms in outcomes:
        rows.append({
            "protocol": scenario.protocol,
            "method": method,
            "n_tot": n_tot,
            "loss_db": loss_db,
            "rate": result.rate,
            "key_length": result.key_length,
            "n_sifted": result.n_sifted,
            "n_ph_upper": result.n_ph_upper,
            "probabilities": _format_probabilities(result.probabilities),
            "wall_time_ms": wall_ms,
        })
    rows.sort(key=lambda row: (row["protocol"], row["method"], row["n_tot"],
                               row["loss_db"]))

    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_format_value(row[column]) for column in CSV_COLUMNS])

    message = f"wrote {len(rows)} rows to {out_path}"
    if rows:
        figure_path = out_path.with_suffix(".png")
        _render_figure(rows, scenario, figure_path)
        message += f" and figure to {figure_path}"
    print(message)
    return 0


def _render_figure(rows, scenario: Scenario, figure_path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    figure, axes = plt.subplots(figsize=(7.0, 4.5))
    series = {}
    for row in rows:
        series.setdefault((row["method"], row["n_tot"]), []).append(
            (row["loss_db"], row["rate"])
        )
    plotted = 0
    for (method, n_tot), points in sorted(series.items()):
        positive = [(loss, rate) for loss, rate in sorted(points) if rate > 0]
        if not positive:
            continue
        axes.semilogy(
            [loss for loss, _ in positive],
            [rate for _, rate in positive],
            marker="o",
            label=f"{method}, N={n_tot:g}",
        )
        plotted += 1
    axes.set_xlabel("channel loss (dB)")
    axes.set_ylabel("secret key rate per emitted round")
    axes.set_title(f"{scenario.protocol} protocol, delta={scenario.delta:g}")
    axes.grid(True, which="both", alpha=0.3)
    if plotted:
        axes.legend(fontsize=8)
    figure.tight_layout()
    figure.savefig(figure_path, dpi=150)
    plt.close(figure)


def _wilson_interval(successes: int, trials: int, z: float = 1.96):
    if trials <= 0:
        return 0.0, 1.0
    phat = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (phat + z2 / (2.0 * trials)) / denom
    half = z * math.sqrt(
        phat * (1.0 - phat) / trials + z2 / (4.0 * trials * trials)
    ) / denom
    return max(center - half, 0.0), min(center + half, 1.0)


def run_coverage(scenario: Scenario, trials: int, seed: int, out_path: Path) -> int:
    """Monte-Carlo coverage check of every phase-error bound.

    Runs the tagged virtual protocol end to end: each trial jointly draws
    the virtual phase-error count and the tag counts, then asks whether
    each bound (at its nominal failure probability) covers the drawn
    count.  Only the point-to-point protocol has a virtual-round sampler.
    """
    if scenario.protocol != "pm":
        raise SchemaError("coverage requires protocol 'pm'")
    if trials < 100:
        raise SchemaError("'trials' must be at least 100")
    if seed < 0:
        raise SchemaError("'seed' is required for coverage")
    if not scenario.loss_db:
        raise SchemaError("'loss_db' must be non-empty for coverage")

    n_tot = scenario.n_tot[0]
    config = scenario.config(n_tot)
    channel = scenario.channel(scenario.loss_db[0])
    decs, weights = pm_decompositions(scenario.delta)
    tagging = pm_tagging(config, decs, weights)
    pairs = ((decs[0], weights[0]), (decs[1], weights[1]))
    expected = expected_counts("pm", config, tagging, channel, n_tot)
    predictions = expected.counts.n_x_outcomes
    eps = scenario.coverage_eps

    violations = {"random-sampling": 0, "azuma": 0, "kato": 0}
    for trial in range(trials):
        n_ph, counts = sample_pm_virtual_counts(
            config, tagging, channel, int(n_tot), seed + trial
        )
        if n_ph > pm_phase_error_bound(counts, tagging, eps) + 1e-9:
            violations["random-sampling"] += 1
        azuma, _ = phase_errors_azuma("pm", counts, pairs, config, eps / 8.0)
        if n_ph > azuma + 1e-9:
            violations["azuma"] += 1
        kato, _ = phase_errors_kato("pm", counts, pairs, config, predictions,
                                    eps / 8.0)
        if n_ph > kato + 1e-9:
            violations["kato"] += 1

    sigma = math.sqrt(eps * (1.0 - eps) / trials)
    report_rows = []
    for bound in sorted(violations):
        count = violations[bound]
        fraction = count / trials
        low, high = _wilson_interval(count, trials)
        verdict = "pass" if fraction <= eps + 3.0 * sigma else "fail"
        report_rows.append({
            "bound": bound,
            "trials": trials,
            "violations": count,
            "fraction": fraction,
            "wilson_low": low,
            "wilson_high": high,
            "nominal_eps": eps,
            "verdict": verdict,
        })

    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(COVERAGE_COLUMNS)
        for row in report_rows:
            writer.writerow([_format_value(row[column]) for column in COVERAGE_COLUMNS])

    print(f"coverage of {trials} trials at eps={eps:g}, "
          f"n_tot={n_tot:g}, loss={scenario.loss_db[0]:g} dB (seed {seed})")
    for row in report_rows:
        print(
            f"  {row['bound']:16s} violations {row['violations']}/{trials} "
            f"fraction {row['fraction']:.4f} "
            f"Wilson95 [{row['wilson_low']:.4f}, {row['wilson_high']:.4f}] "
            f"nominal {eps:g}: {row['verdict']}"
        )
    print(f"wrote report to {out_path}")
    return 0


class _Parser(argparse.ArgumentParser):
    # usage problems are exit code 1; argparse defaults to 2
    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="ltqkd", description=__doc__.splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True)

    sweep = commands.add_parser("sweep", help="evaluate the scenario grid")
    sweep.add_argument("scenario", help="path to a scenario JSON file")
    sweep.add_argument("--jobs", type=int, default=None,
                       help=f"worker processes (default: file, then ${JOBS_ENV})")
    sweep.add_argument("--out", default=None, help="output CSV path")

    coverage = commands.add_parser("coverage",
                                   help="Monte Carlo bound coverage report")
    coverage.add_argument("scenario", help="path to a scenario JSON file")
    coverage.add_argument("--trials", type=int, default=None)
    coverage.add_argument("--seed", type=int, default=None)
    coverage.add_argument("--out", default=None, help="output CSV path")

    validate = commands.add_parser("validate", help="check a scenario file")
    validate.add_argument("scenario", help="path to a scenario JSON file")
    return parser


def _default_jobs(scenario: Scenario, flag_jobs) -> int:
    if flag_jobs is not None:
        if flag_jobs < 1:
            raise SchemaError("'--jobs' must be at least 1")
        return flag_jobs
    if scenario.jobs:
        return scenario.jobs
    env = os.environ.get(JOBS_ENV)
    if env:
        try:
            jobs = int(env)
        except ValueError as exc:
            raise SchemaError(f"${JOBS_ENV} must be an integer") from exc
        if jobs < 1:
            raise SchemaError(f"${JOBS_ENV} must be at least 1")
        return jobs
    return 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        scenario = load_scenario(args.scenario)
        if args.command == "validate":
            print(f"scenario valid: {args.scenario}")
            return 0
        if args.command == "sweep":
            jobs = _default_jobs(scenario, args.jobs)
            out_path = Path(args.out if args.out is not None else scenario.out)
            return run_sweep(scenario, jobs, out_path)
        trials = args.trials if args.trials is not None else scenario.trials
        seed = args.seed if args.seed is not None else scenario.seed
        out = args.out if args.out is not None else "coverage.csv"
        return run_coverage(scenario, trials, seed, Path(out))
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except LtqkdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
