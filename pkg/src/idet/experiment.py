"""Batch experiments: configuration, sweeps over one parameter, CSV and JSON artifacts.

A configuration is a JSON document::

    {
      "schema_version": 1,
      "system": {"n_subcarriers": 8, "n_receivers": 2, ...},
      "channels": {"source": "generated", "max_length": 3, "pdp_decay": 0.5},
      "scenario": "siso-fair",
      "sweep": {"variable": "dc_requirement", "values": [0.0, 0.1]},
      "n_trials": 10,
      "seed": 7,
      "output_dir": "results"
    }

``channels`` may instead be ``{"source": "file", "path": "channels.json"}``,
in which case every trial uses the same realization.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import miso, siso
from .channels import ChannelSet, generate_channels
from .exceptions import ConfigError
from .model import SystemParams, dsw_power_scaling
from .report import CONVERGED, INFEASIBLE
from .validation import check_sorted_finite

SCHEMA_VERSION = 1
SCENARIOS = ("siso-fair", "siso-sum", "miso-fair", "miso-sum")
SWEEP_VARIABLES = ("dc_requirement", "transmit_power", "n_antennas")
POWER_MODES = ("ofdm", "dsw-equivalent")
SEED_ENV = "IDET_SEED"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2
EXIT_NOT_CONVERGED = 3

_TOP_KEYS = {"schema_version", "system", "channels", "scenario", "sweep", "n_trials", "seed",
             "output_dir", "power_mode", "strategy", "max_outer", "jobs", "write_traces"}


@dataclass
class ExperimentConfig:
    system: dict
    scenario: str = "siso-fair"
    channels: dict = field(default_factory=lambda: {"source": "generated"})
    sweep: dict = None
    n_trials: int = 1
    seed: int = 0
    output_dir: str = "results"
    power_mode: str = "ofdm"
    strategy: str = "joint"
    max_outer: int = siso.MAX_OUTER
    jobs: int = 1
    write_traces: bool = True
    schema_version: int = SCHEMA_VERSION
    source_text: str = ""

    @property
    def config_hash(self):
        return hashlib.sha256(self.source_text.encode("utf-8")).hexdigest()

    @property
    def sweep_values(self):
        if not self.sweep:
            return [None]
        return list(self.sweep["values"])

    @property
    def kind(self):
        return self.scenario.split("-")[1]

    @property
    def is_miso(self):
        return self.scenario.startswith("miso")


def parse_config(text, base_dir=None):
    """Validate a JSON configuration string; raises :class:`ConfigError`."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    if "system" not in data or not isinstance(data["system"], dict):
        raise ConfigError("configuration needs a 'system' object")
    cfg = ExperimentConfig(system=dict(data["system"]), source_text=text)
    for key in ("scenario", "channels", "sweep", "n_trials", "seed", "output_dir",
                "power_mode", "strategy", "max_outer", "jobs", "write_traces"):
        if key in data:
            setattr(cfg, key, data[key])
    if cfg.scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {SCENARIOS}, got {cfg.scenario!r}")
    if cfg.power_mode not in POWER_MODES:
        raise ConfigError(f"power_mode must be one of {POWER_MODES}")
    if cfg.strategy not in siso.STRATEGIES:
        raise ConfigError(f"strategy must be one of {siso.STRATEGIES}")
    for key in ("n_trials", "max_outer", "jobs"):
        value = getattr(cfg, key)
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise ConfigError(f"{key} must be a positive integer")
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    _check_channels_spec(cfg, base_dir)
    _check_sweep(cfg)
    params = system_params(cfg, None)
    if cfg.is_miso == params.is_siso and not (cfg.sweep and cfg.sweep["variable"] == "n_antennas"):
        raise ConfigError(f"scenario {cfg.scenario!r} does not match n_antennas={params.n_antennas}")
    spec = cfg.channels
    if spec["source"] == "generated":
        length = spec["max_length"]
        if not isinstance(length, int) or isinstance(length, bool) or not 1 <= length <= params.n_subcarriers:
            raise ConfigError(f"max_length must be an integer in [1, {params.n_subcarriers}]")
        if not np.isfinite(float(spec["pdp_decay"])) or float(spec["pdp_decay"]) < 0:
            raise ConfigError("pdp_decay must be finite and non-negative")
    elif cfg.sweep is None or cfg.sweep["variable"] != "n_antennas":
        _channels_for(cfg, params, 0)
    return cfg


def _check_channels_spec(cfg, base_dir):
    spec = dict(cfg.channels)
    source = spec.get("source", "generated")
    if source == "generated":
        allowed = {"source", "max_length", "pdp_decay", "seed"}
        if set(spec) - allowed:
            raise ConfigError(f"unknown channel keys: {sorted(set(spec) - allowed)}")
        spec.setdefault("max_length", 1)
        spec.setdefault("pdp_decay", 0.0)
    elif source == "file":
        if "path" not in spec:
            raise ConfigError("file channel source needs a 'path'")
        path = Path(spec["path"])
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        try:
            spec["loaded"] = ChannelSet.from_json(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read channel file {path}: {exc}") from exc
    else:
        raise ConfigError(f"channel source must be 'generated' or 'file', got {source!r}")
    spec["source"] = source
    cfg.channels = spec


def _check_sweep(cfg):
    if cfg.sweep is None:
        return
    if not isinstance(cfg.sweep, dict) or "variable" not in cfg.sweep or "values" not in cfg.sweep:
        raise ConfigError("sweep needs 'variable' and 'values'")
    if cfg.sweep["variable"] not in SWEEP_VARIABLES:
        raise ConfigError(f"sweep variable must be one of {SWEEP_VARIABLES}")
    values = check_sorted_finite(cfg.sweep["values"], "sweep values")
    if cfg.sweep["variable"] == "n_antennas":
        if np.any(values != np.round(values)) or np.any(values < 1):
            raise ConfigError("n_antennas sweep values must be positive integers")
        if cfg.channels["source"] == "file":
            raise ConfigError("an n_antennas sweep needs generated channels")
    cfg.sweep = {"variable": cfg.sweep["variable"], "values": values.tolist()}


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent)


def system_params(cfg, sweep_value):
    try:
        params = SystemParams.from_dict(cfg.system)
    except TypeError as exc:
        raise ConfigError(f"invalid system parameters: {exc}") from exc
    if cfg.power_mode == "dsw-equivalent":
        params = params.replace(tx_power=dsw_power_scaling(params))
    if sweep_value is None:
        return params
    variable = cfg.sweep["variable"]
    if variable == "dc_requirement":
        return params.replace(dc_requirements=(float(sweep_value),) * params.n_receivers)
    if variable == "transmit_power":
        value = float(sweep_value)
        if cfg.power_mode == "dsw-equivalent":
            value *= params.sampling_factor
        return params.replace(tx_power=value)
    return params.replace(n_antennas=int(sweep_value))


def trial_seeds(seed, n_trials):
    """Independent 63-bit seeds for each trial, derived from the experiment seed."""
    words = np.random.SeedSequence(seed).generate_state(2 * n_trials, dtype=np.uint32)
    pairs = words.reshape(n_trials, 2).astype(np.uint64)
    return [int(((hi << np.uint64(32)) | lo) & np.uint64(0x7FFFFFFFFFFFFFFF)) for hi, lo in pairs]


def _channels_for(cfg, params, trial_seed):
    spec = cfg.channels
    if spec["source"] == "file":
        ch = spec["loaded"]
        if (ch.n_subcarriers, ch.n_receivers, ch.n_antennas) != (
                params.n_subcarriers, params.n_receivers, params.n_antennas):
            raise ConfigError("channel file does not match the system dimensions")
        return ch
    return generate_channels(params.n_subcarriers, params.n_receivers, params.n_antennas,
                             int(spec["max_length"]), float(spec["pdp_decay"]), trial_seed)


def _channel_seeds(cfg, seeds):
    # a seed in the channel block pins the realizations independently of the solver seed
    if cfg.channels.get("seed") is None:
        return seeds
    return trial_seeds(int(cfg.channels["seed"]), cfg.n_trials)


def _solve(cfg, params, channels, seed):
    if params.is_siso:
        fn = siso.solve_fair_siso if cfg.kind == "fair" else siso.solve_sum_siso
        return fn(params, channels, max_outer=cfg.max_outer, seed=seed, strategy=cfg.strategy)
    fn = miso.solve_fair_miso if cfg.kind == "fair" else miso.solve_sum_miso
    return fn(params, channels, max_outer=cfg.max_outer, seed=seed)


@dataclass
class ResultRow:
    trial: int
    seed: int
    sweep_value: float
    objective: float
    status: str
    iters: int
    wall_ms: float
    rates: list
    dc: list

    def to_csv(self):
        fmt = _fmt
        return ([str(self.trial), str(self.seed), fmt(self.sweep_value), fmt(self.objective),
                 self.status, str(self.iters), fmt(self.wall_ms)]
                + [fmt(v) for v in self.rates] + [fmt(v) for v in self.dc])


def _fmt(value):
    if value is None:
        return ""
    return format(float(value), ".17g")


def csv_header(n_receivers):
    return (["trial", "seed", "sweep_value", "objective", "status", "iters", "wall_ms"]
            + [f"rate_user_{j + 1}" for j in range(n_receivers)]
            + [f"dc_user_{j + 1}" for j in range(n_receivers)])


def _run_one(args):
    cfg, sweep_index, trial, seed, channel_seed = args
    value = cfg.sweep_values[sweep_index]
    params = system_params(cfg, value)
    channels = _channels_for(cfg, params, channel_seed)
    start = time.perf_counter()
    report = _solve(cfg, params, channels, seed)
    wall_ms = (time.perf_counter() - start) * 1e3
    J = params.n_receivers
    rates = report.rates if report.rates is not None else np.full(J, np.nan)
    dc = report.dc if report.dc is not None else np.full(J, np.nan)
    row = ResultRow(trial=trial, seed=seed, sweep_value=value, objective=report.objective,
                    status=report.status, iters=report.iterations, wall_ms=wall_ms,
                    rates=list(map(float, rates)), dc=list(map(float, dc)))
    trace = report.to_dict(include_timing=False)
    return sweep_index, trial, row, trace


def run_experiment(cfg, output_dir=None, jobs=None, log=None):
    """Run every (sweep value, trial) pair and write the artifacts.

    Returns ``(exit_code, rows)``.
    """
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = jobs or cfg.jobs
    seeds = trial_seeds(cfg.seed, cfg.n_trials)
    ch_seeds = _channel_seeds(cfg, seeds)
    tasks = [(cfg, i, t, seeds[t], ch_seeds[t]) for i in range(len(cfg.sweep_values)) for t in range(cfg.n_trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = []
        for task in tasks:
            results.append(_run_one(task))
            if log is not None:
                _, t, row, _ = results[-1]
                log(f"trial {t} sweep={row.sweep_value} status={row.status} objective={row.objective:.6g}")
    results.sort(key=lambda r: (r[0], r[1]))
    rows = [r[2] for r in results]
    J = SystemParams.from_dict(cfg.system).n_receivers
    meta = {"config_hash": cfg.config_hash, "seed": cfg.seed}
    write_results_csv(out / "results.csv", rows, J, meta)
    summary = summarize(cfg, rows)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    if cfg.write_traces:
        traces = out / "traces"
        traces.mkdir(exist_ok=True)
        for sweep_index, trial, _, trace in results:
            doc = dict(meta, trial=trial, sweep_index=sweep_index, report=trace)
            (traces / f"sweep{sweep_index:03d}_trial{trial:04d}.json").write_text(
                json.dumps(doc) + "\n", encoding="utf-8")
    statuses = {row.status for row in rows}
    if INFEASIBLE in statuses:
        code = EXIT_INFEASIBLE
    elif statuses - {CONVERGED}:
        code = EXIT_NOT_CONVERGED
    else:
        code = EXIT_OK
    return code, rows


def write_results_csv(path, rows, n_receivers, meta):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config_hash={meta['config_hash']} seed={meta['seed']}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(csv_header(n_receivers))
        for row in rows:
            writer.writerow(row.to_csv())


def read_results_csv(path):
    """Parse a results file written by :func:`run_experiment` back into rows."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    n_rx = sum(1 for h in header if h.startswith("rate_user_"))
    rows = []
    for rec in reader:
        value = float(rec[2]) if rec[2] != "" else None
        rows.append(ResultRow(
            trial=int(rec[0]), seed=int(rec[1]), sweep_value=value, objective=float(rec[3]),
            status=rec[4], iters=int(rec[5]), wall_ms=float(rec[6]),
            rates=[float(v) for v in rec[7:7 + n_rx]],
            dc=[float(v) for v in rec[7 + n_rx:7 + 2 * n_rx]],
        ))
    return header, rows


def summarize(cfg, rows):
    """Mean and standard error of the objective per sweep value (feasible trials only)."""
    groups = []
    for value in cfg.sweep_values:
        objs = np.array([r.objective for r in rows if r.sweep_value == value and r.status != INFEASIBLE])
        n = len(objs)
        mean = float(objs.mean()) if n else None
        se = float(objs.std(ddof=1) / np.sqrt(n)) if n > 1 else (0.0 if n else None)
        groups.append({
            "sweep_value": value,
            "n_trials": sum(1 for r in rows if r.sweep_value == value),
            "n_feasible": n,
            "mean_objective": mean,
            "se_objective": se,
            "statuses": {s: sum(1 for r in rows if r.sweep_value == value and r.status == s)
                         for s in sorted({r.status for r in rows if r.sweep_value == value})},
        })
    return {
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "scenario": cfg.scenario,
        "sweep_variable": cfg.sweep["variable"] if cfg.sweep else None,
        "power_mode": cfg.power_mode,
        "groups": groups,
    }


def seed_override(cfg, environ=None):
    """Apply the ``IDET_SEED`` environment override, if set."""
    environ = os.environ if environ is None else environ
    raw = environ.get(SEED_ENV)
    if raw is None or raw == "":
        return cfg
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc
    if value < 0:
        raise ConfigError(f"{SEED_ENV} must be non-negative")
    cfg.seed = value
    return cfg
