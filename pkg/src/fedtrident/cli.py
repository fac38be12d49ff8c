"""Command-line runner: TOML config in, per-round CSV / detection CSV / JSON summary out.

    fedtrident run CONFIG [--out DIR] [--seed N] [--dump-trajectory] [--ablation STAGE]
    fedtrident sweep CONFIG --axis NAME --values v1,v2,... [--out DIR] [--seed N] [--jobs N]

Verbosity comes from the FEDTRIDENT_LOG environment variable (DEBUG, INFO, ...).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .defenses.baselines import BaselineConfig
from .defenses.trident import RatingPolicy
from .engine import DEFENSES, ExperimentConfig, ExperimentResult, run_experiment
from .model import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("fedtrident")

ROUND_COLUMNS = ("t", "SRE", "ASR", "GAC", "GAS", "n_bad", "n_blacklist", "f_prime", "g_prime",
                 "revert", "ambiguity")
DETECTION_COLUMNS = ("round", "f_prime", "g_prime", "ambiguity", "bad_ids", "density_ratio", "revert")
SWEEP_COLUMNS = ("axis", "value", "SRE", "ASR", "GAC", "GAS", "precision", "recall", "n_blacklist", "seconds")
SWEEP_AXES = ("malicious_fraction", "alpha", "defense")
ABLATIONS = {
    "detection": dict(enable_exclusion=False, enable_remediation=False),
    "exclusion": dict(enable_exclusion=True, enable_remediation=False),
    "full": dict(enable_exclusion=True, enable_remediation=True),
}
_SECTIONS = {"train": TrainConfig, "policy": RatingPolicy, "baseline": BaselineConfig}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def _coerce(name: str, value, default, annotation: str):
    """Type-check one TOML value against the dataclass field it feeds."""
    if "float" in annotation and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if "int" in annotation and isinstance(value, int) and not isinstance(value, bool):
        return value
    if "bool" in annotation and isinstance(value, bool):
        return value
    if "str" in annotation and isinstance(value, str):
        return value
    if name == "attack_phases" and isinstance(value, list):
        try:
            return tuple(tuple(int(x) for x in phase) for phase in value)
        except (TypeError, ValueError):
            pass
        raise ConfigError("attack_phases must be a list of [first, last, source, target] integer lists")
    raise ConfigError(f"{name}: expected {annotation}, got {type(value).__name__} {value!r}")


def _build(cls, table: dict, prefix: str = ""):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in table.items():
        if key not in fields:
            raise ConfigError(f"unknown config key '{prefix}{key}'")
        f = fields[key]
        if key in _SECTIONS and cls is ExperimentConfig:
            if not isinstance(value, dict):
                raise ConfigError(f"{key} must be a table")
            kwargs[key] = _build(_SECTIONS[key], value, prefix=f"{key}.")
            continue
        kwargs[key] = _coerce(prefix + key, value, f.default, str(f.type))
    try:
        return cls(**kwargs)
    except ValueError as e:
        raise ConfigError(f"{prefix or 'config'}: {e}") from e


def config_from_dict(table: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, table)


def parse_config(path) -> ExperimentConfig:
    """Read a TOML file; omitted keys take their defaults, unknown keys are errors."""
    try:
        with open(path, "rb") as fh:
            table = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return config_from_dict(table)


def config_to_dict(config: ExperimentConfig) -> dict:
    out = dataclasses.asdict(config)
    if out["attack_phases"] is not None:
        out["attack_phases"] = [list(p) for p in out["attack_phases"]]
    return out


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def round_rows(result: ExperimentResult):
    for m in result.rounds:
        yield (m.round, m.sre, m.asr, m.gac, m.gas, len(m.bad), m.blacklist_size,
               m.source_neuron, m.target_neuron, m.reverted, m.ambiguous)


def detection_rows(result: ExperimentResult):
    for m in result.rounds:
        yield (m.round, m.source_neuron, m.target_neuron, m.ambiguous, ";".join(map(str, m.bad)),
               m.density_ratio, m.reverted)


def _write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def mean_defined(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def summarize(result: ExperimentResult, seconds: float) -> dict:
    last = result.rounds[-1] if result.rounds else None
    records = result.state.records
    return {
        "config": config_to_dict(result.config),
        "final": {k: (getattr(last, k.lower()) if last else None) for k in ("SRE", "ASR", "GAC", "GAS")},
        "blacklist": [{"client": k, "round": records[k].blacklisted_round}
                      for k in sorted(records) if records[k].blacklisted],
        "attackers": sorted(result.env.attackers),
        "detection": {
            "precision": mean_defined(m.precision for m in result.rounds),
            "recall": mean_defined(m.recall for m in result.rounds),
        },
        "seconds": seconds,
    }


def write_outputs(result: ExperimentResult, out: Path, seconds: float) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "rounds.csv", ROUND_COLUMNS, round_rows(result))
    _write_csv(out / "detection.csv", DETECTION_COLUMNS, detection_rows(result))
    summary = summarize(result, seconds)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _progress(m):
    log.info("round %d  SRE=%s ASR=%s GAC=%s  bad=%d blacklist=%d%s", m.round, _fmt(m.sre), _fmt(m.asr),
             _fmt(m.gac), len(m.bad), m.blacklist_size, "  (reverted)" if m.reverted else "")


def _fmt(v):
    return "-" if v is None else f"{v:.3f}"


def run(config: ExperimentConfig, out, dump_trajectory: bool = False) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = run_experiment(config, trajectory_dir=out / "trajectory" if dump_trajectory else None,
                            progress=_progress)
    return write_outputs(result, out, time.perf_counter() - t0)


def parse_axis_values(axis: str, values: str) -> list:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {', '.join(SWEEP_AXES)}")
    items = [v.strip() for v in values.split(",") if v.strip()]
    if not items:
        raise ConfigError("sweep needs at least one value")
    if axis == "defense":
        bad = [v for v in items if v not in DEFENSES]
        if bad:
            raise ConfigError(f"unknown defense {bad[0]!r}; expected one of {', '.join(DEFENSES)}")
        return items
    try:
        return [float(v) for v in items]
    except ValueError as e:
        raise ConfigError(f"sweep values for {axis} must be numbers: {e}") from e


def _sweep_one(args):
    config, axis, value = args
    t0 = time.perf_counter()
    result = run_experiment(config.replace(**{axis: value}))
    last = result.rounds[-1] if result.rounds else None
    get = (lambda k: getattr(last, k) if last else None)
    return (axis, value, get("sre"), get("asr"), get("gac"), get("gas"),
            mean_defined(m.precision for m in result.rounds), mean_defined(m.recall for m in result.rounds),
            len(result.state.blacklist), time.perf_counter() - t0)


def sweep(config: ExperimentConfig, axis: str, values, out=None, jobs: int = 1) -> list[tuple]:
    if not values:
        raise ConfigError("sweep needs at least one value")
    for v in values:  # validate every grid point before spending time on any run
        config.replace(**{axis: v})
    tasks = [(config, axis, v) for v in values]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            rows = list(ex.map(_sweep_one, tasks))
    else:
        rows = [_sweep_one(t) for t in tasks]
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    return rows


def _setup_logging():
    level = os.environ.get("FEDTRIDENT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedtrident", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("config")
    r.add_argument("--out", default="out")
    r.add_argument("--seed", type=int)
    r.add_argument("--dump-trajectory", action="store_true")
    r.add_argument("--ablation", choices=sorted(ABLATIONS), help="enable only the listed defense stages")
    s = sub.add_parser("sweep", help="one run per value of a config axis")
    s.add_argument("config")
    s.add_argument("--axis", required=True, choices=SWEEP_AXES)
    s.add_argument("--values", required=True)
    s.add_argument("--out", default="sweep_out")
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, default=1, help="parallel runs (each keeps its own RNG streams)")
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        config = parse_config(args.config)
        if args.seed is not None:
            config = config.replace(seed=args.seed)
        if args.command == "run":
            if args.ablation:
                config = config.replace(**ABLATIONS[args.ablation])
            summary = run(config, args.out, args.dump_trajectory)
            f = summary["final"]
            print(f"SRE={_fmt(f['SRE'])} ASR={_fmt(f['ASR'])} GAC={_fmt(f['GAC'])} GAS={_fmt(f['GAS'])} "
                  f"blacklist={len(summary['blacklist'])} -> {args.out}")
        else:
            rows = sweep(config, args.axis, parse_axis_values(args.axis, args.values), args.out, args.jobs)
            for row in rows:
                print(f"{row[0]}={row[1]}: SRE={_fmt(row[2])} ASR={_fmt(row[3])} GAC={_fmt(row[4])} GAS={_fmt(row[5])}")
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
