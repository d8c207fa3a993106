"""Command-line front end: analyze, synthesize, simulate, dp and replay.

Every command reads one JSON config, validates it against a schema that
rejects unknown keys, and writes JSON/CSV into ``--out``. Exit codes:
0 success, 2 config or input error, 3 synthesis fail, 4 resource limit.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
from pathlib import Path

import jsonschema

from . import analysis, energy, exactdp, simkit, synthesis
from .errors import ConfigError, ResourceLimitError
from .fairness import FairnessTarget
from .shield import CSV_HEADER, ShieldEngine, run_stream

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAIL = 3
EXIT_RESOURCE = 4

_NUM = {"type": "number"}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_PROB = {"type": "number", "minimum": 0, "maximum": 1}

_DEFS = {
    "target": {
        "type": "object",
        "additionalProperties": False,
        "required": ["burn_in", "running", "limit"],
        "properties": {
            "burn_in": {"type": "integer", "minimum": 0},
            "running": _PAIR,
            "limit": {"oneOf": [_NUM, _PAIR]},
            "domain": {"enum": ["unit", "signed"]},
        },
    },
    "energy": {
        "type": "object",
        "additionalProperties": False,
        "required": ["family"],
        "properties": {
            "family": {"enum": ["idle", "naive", "polynomial", "exponential", "monotonic"]},
            "params": {"type": "object"},
            "domain": {"enum": ["unit", "signed"]},
            "calibrate": {
                "type": "object",
                "additionalProperties": False,
                "required": ["bias", "mu_star"],
                "properties": {"bias": _NUM, "mu_star": _NUM},
            },
        },
    },
    "setting": {
        "type": "object",
        "additionalProperties": False,
        "oneOf": [{"required": ["p"]}, {"required": ["r_a", "p_a", "p_b"]}],
        "properties": {"p": _PROB, "r_a": _PROB, "p_a": _PROB, "p_b": _PROB},
    },
    "engine": {
        "type": "object",
        "additionalProperties": False,
        "required": ["mode"],
        "properties": {
            "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
            "mode": {"enum": ["known", "drift", "two_group", "adaptive", "naive", "idle"]},
            "energy": {"$ref": "#/$defs/energy"},
            "shape": {"$ref": "#/$defs/energy"},
            "mu_star": _NUM,
            "target": {"$ref": "#/$defs/target"},
            "two_group": {"type": "boolean"},
        },
    },
    "env": {
        "type": "object",
        "additionalProperties": False,
        "required": ["kind"],
        "properties": {
            "kind": {"enum": ["single", "unknown_p", "sinusoid", "two_group"]},
            "p": _PROB,
            "base": _PROB,
            "amplitude": _NUM,
            "period": {"type": "number", "exclusiveMinimum": 0},
            "r_a": _PROB,
            "p_a": _PROB,
            "p_b": _PROB,
        },
    },
}


def _schema(properties: dict, required: list[str]) -> dict:
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "$defs": _DEFS,
        "type": "object",
        "additionalProperties": False,
        "required": required,
        "properties": {"seed": {"type": "integer", "minimum": 0}, **properties},
    }


SCHEMAS = {
    "analyze": _schema(
        {
            "setting": {"$ref": "#/$defs/setting"},
            "energy": {"$ref": "#/$defs/energy"},
            "target": {"$ref": "#/$defs/target"},
            "times": {"type": "array", "items": {"type": "integer", "minimum": 1}},
            "eta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        },
        ["setting", "energy", "target"],
    ),
    "synthesize": _schema(
        {
            "measure": {"enum": ["P", "E"]},
            "target": {"$ref": "#/$defs/target"},
            "delta": {"type": "number", "exclusiveMinimum": 0},
            "epsilon": {"type": "number", "exclusiveMinimum": 0},
            "setting": {"$ref": "#/$defs/setting"},
            "eta": {"type": "number", "exclusiveMinimum": 0},
            "index_range": _PAIR,
            "index_tol": {"type": "number", "exclusiveMinimum": 0},
            "probe_points": {"type": "integer", "minimum": 2},
            "t_dp_cap": {"type": "integer", "minimum": 1},
            "exact_limit": {"type": "integer", "minimum": 0},
            "mc_runs": {"type": "integer", "minimum": 2},
        },
        ["measure", "target", "delta", "epsilon", "setting"],
    ),
    "simulate": _schema(
        {
            "env": {"$ref": "#/$defs/env"},
            "engines": {"type": "array", "items": {"$ref": "#/$defs/engine"}, "minItems": 1},
            "target": {"$ref": "#/$defs/target"},
            "horizon": {"type": "integer", "minimum": 1},
            "replications": {"type": "integer", "minimum": 1},
            "record_every": {"type": "integer", "minimum": 1},
            "quantiles": {"type": "array", "items": _PROB, "minItems": 2, "maxItems": 2},
            "max_samples": {"type": "integer", "minimum": 1},
        },
        ["env", "engines", "target", "horizon", "replications"],
    ),
    "dp": _schema(
        {
            "setting": {"$ref": "#/$defs/setting"},
            "energy": {"$ref": "#/$defs/energy"},
            "target": {"$ref": "#/$defs/target"},
            "horizon": {"type": "integer", "minimum": 0},
            "measure": {"enum": ["P", "E"]},
            "table": {"type": "boolean"},
            "exact_limit": {"type": "integer", "minimum": 0},
            "mc_runs": {"type": "integer", "minimum": 2},
        },
        ["setting", "energy", "target", "horizon"],
    ),
    "replay": _schema(
        {
            "engine": {"$ref": "#/$defs/engine"},
            "target": {"$ref": "#/$defs/target"},
            "input": {"type": "string"},
        },
        ["engine"],
    ),
}

_DEFAULTS = {
    "analyze": {"seed": 0, "times": [100, 1000, 10000, 100000]},
    "synthesize": {
        "seed": 0,
        "index_range": list(synthesis.DEFAULT_INDEX_RANGE),
        "index_tol": synthesis.DEFAULT_INDEX_TOL,
        "probe_points": synthesis.DEFAULT_PROBE_POINTS,
        "t_dp_cap": synthesis.DEFAULT_T_DP_CAP,
        "exact_limit": exactdp.DEFAULT_EXACT_LIMIT,
        "mc_runs": exactdp.DEFAULT_MC_RUNS,
    },
    "simulate": {
        "seed": 0,
        "record_every": 1,
        "quantiles": [0.025, 0.975],
        "max_samples": simkit.DEFAULT_MAX_SAMPLES,
    },
    "dp": {
        "seed": 0,
        "measure": "P",
        "table": False,
        "exact_limit": exactdp.DEFAULT_EXACT_LIMIT,
        "mc_runs": exactdp.DEFAULT_MC_RUNS,
    },
    "replay": {"seed": 0},
}


# config handling


def _path(err: jsonschema.ValidationError) -> str:
    return "config" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)


def normalize_config(command: str, raw: dict) -> dict:
    """Schema-check ``raw`` and fill defaults; the result validates and normalizes to itself."""
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a JSON object")
    validator = jsonschema.Draft202012Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(raw), key=_path)
    if errors:
        raise ConfigError("; ".join(f"{_path(e)}: {e.message}" for e in errors))
    cfg = copy.deepcopy(_DEFAULTS[command])
    cfg.update(copy.deepcopy(raw))
    if "target" in cfg:
        cfg["target"] = _normalize_target(cfg["target"])
    for eng in cfg.get("engines", []):
        if "target" in eng:
            eng["target"] = _normalize_target(eng["target"])
    if "engine" in cfg and "target" in cfg["engine"]:
        cfg["engine"]["target"] = _normalize_target(cfg["engine"]["target"])
    if command == "simulate":
        for i, eng in enumerate(cfg["engines"]):
            eng.setdefault("name", f"{eng['mode']}{i}")
        names = [e["name"] for e in cfg["engines"]]
        if len(set(names)) != len(names):
            raise ConfigError("config.engines: engine names must be unique")
    return cfg


def _normalize_target(t: dict) -> dict:
    limit = t["limit"]
    if isinstance(limit, (int, float)):
        limit = [limit, limit]
    return {"burn_in": t["burn_in"], "running": list(t["running"]), "limit": list(limit),
            "domain": t.get("domain", "unit")}


def emit_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)


def load_config(command: str, path: str | None, seed: int | None = None) -> dict:
    if path is None:
        raise ConfigError("--config is required")
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: line {exc.lineno}: {exc.msg}") from None
    cfg = normalize_config(command, raw)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


# builders


def build_target(spec: dict) -> FairnessTarget:
    return FairnessTarget.make(spec["burn_in"], spec["running"], spec["limit"], spec.get("domain", "unit"))


def build_energy(spec: dict) -> energy.EnergyFunction:
    try:
        zeta = energy.from_json(spec)
    except KeyError as exc:
        raise ConfigError(f"energy params for {spec['family']!r} miss {exc.args[0]!r}") from None
    cal = spec.get("calibrate")
    if cal is not None:
        zeta = energy.calibrate(zeta, cal["bias"], cal["mu_star"])
    return zeta


def build_model(setting: dict, zeta):
    if "p" in setting:
        return analysis.CharacteristicModel(zeta, setting["p"])
    return analysis.TwoGroupModel(zeta, setting["r_a"], setting["p_a"], setting["p_b"])


def build_engine(spec: dict, target: FairnessTarget | None = None) -> ShieldEngine:
    mode = spec["mode"]
    if mode in ("known", "drift", "two_group"):
        if "energy" not in spec:
            raise ConfigError(f"config.engine: mode {mode!r} needs 'energy'")
        zeta = build_energy(spec["energy"])
        return {"known": ShieldEngine.known, "drift": ShieldEngine.drift, "two_group": ShieldEngine.two_group}[mode](zeta)
    if mode == "adaptive":
        if "shape" not in spec or "mu_star" not in spec:
            raise ConfigError("config.engine: adaptive mode needs 'shape' and 'mu_star'")
        return ShieldEngine.adaptive(build_energy(spec["shape"]), spec["mu_star"])
    if mode == "naive":
        t = build_target(spec["target"]) if "target" in spec else target
        if t is None:
            raise ConfigError("config.engine: naive mode needs a target")
        return ShieldEngine.naive(t)
    return ShieldEngine.idle(spec.get("two_group", False))


def build_env(spec: dict):
    kind = spec["kind"]
    need = {"single": ["p"], "unknown_p": ["p"], "sinusoid": [], "two_group": ["r_a", "p_a", "p_b"]}[kind]
    missing = [k for k in need if k not in spec]
    if missing:
        raise ConfigError(f"config.env: kind {kind!r} needs {missing}")
    if kind == "single":
        return simkit.SingleGroup(spec["p"])
    if kind == "unknown_p":
        return simkit.UnknownP(spec["p"])
    if kind == "sinusoid":
        defaults = simkit.Sinusoid()
        return simkit.DynamicP(simkit.Sinusoid(spec.get("base", defaults.base), spec.get("amplitude", defaults.amplitude),
                                               spec.get("period", defaults.period)))
    return simkit.TwoGroup(spec["r_a"], spec["p_a"], spec["p_b"])


def build_instance(cfg: dict) -> synthesis.SynthesisInstance:
    s = cfg["setting"]
    single = "p" in s
    return synthesis.SynthesisInstance(
        measure=cfg["measure"],
        target=build_target(cfg["target"]),
        delta=cfg["delta"],
        epsilon=cfg["epsilon"],
        p=s["p"] if single else None,
        groups=None if single else (s["r_a"], s["p_a"], s["p_b"]),
        eta=cfg.get("eta"),
        index_range=tuple(cfg["index_range"]),
        index_tol=cfg["index_tol"],
        probe_points=cfg["probe_points"],
        t_dp_cap=cfg["t_dp_cap"],
        exact_limit=cfg["exact_limit"],
        mc_runs=cfg["mc_runs"],
        seed=cfg["seed"],
    )


# output helpers


def round12(obj):
    """Floats rounded to 12 significant digits, recursively; non-finite floats become None."""
    if isinstance(obj, float):
        return float(f"{obj:.12g}") if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: round12(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round12(v) for v in obj]
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(round12(obj), indent=2, sort_keys=True) + "\n")


def _out_dir(out: str | None) -> Path:
    d = Path(out or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


# commands


def cmd_analyze(cfg: dict, out: Path, threads: int = 1) -> int:
    model = build_model(cfg["setting"], build_energy(cfg["energy"]))
    report = analysis.analysis_report(model, build_target(cfg["target"]), cfg["times"], cfg.get("eta"))
    report["seed"] = cfg["seed"]
    _write_json(out / "analysis.json", report)
    return EXIT_OK


def cmd_synthesize(cfg: dict, out: Path, threads: int = 1) -> int:
    outcome = synthesis.synthesize(build_instance(cfg), threads=threads)
    result = outcome.to_json()
    result["seed"] = cfg["seed"]
    result["flags"] = outcome.flags
    _write_json(out / "synthesis.json", result)
    print(f"status={outcome.status} index={outcome.index} condition={outcome.condition:.12g} t_dp={outcome.t_dp}")
    return EXIT_OK if outcome.found else EXIT_FAIL


def cmd_simulate(cfg: dict, out: Path, threads: int = 1) -> int:
    env = build_env(cfg["env"])
    target = build_target(cfg["target"])
    summaries = {}
    for spec in cfg["engines"]:
        engine = build_engine(spec, target)
        ec = simkit.ExperimentConfig(env, engine, cfg["horizon"], cfg["replications"], cfg["seed"], target,
                                     record_every=cfg["record_every"], quantiles=tuple(cfg["quantiles"]),
                                     max_samples=cfg["max_samples"], threads=threads, name=spec["name"])
        s = simkit.run_ensemble(ec)
        s.write_csv(out / f"{spec['name']}.csv")
        summaries[spec["name"]] = s.to_json()
    _write_json(out / "summary.json", {"seed": cfg["seed"], "engines": summaries})
    return EXIT_OK


def cmd_dp(cfg: dict, out: Path, threads: int = 1) -> int:
    model = build_model(cfg["setting"], build_energy(cfg["energy"]))
    target = build_target(cfg["target"])
    if model.two_group:
        if cfg["table"]:
            raise ConfigError("config.table: value tables are only available for single-group chains")
        res = exactdp.dp_value_two_group(model, target, cfg["horizon"], cfg["measure"], cfg["exact_limit"],
                                         cfg["mc_runs"], cfg["seed"])
    else:
        res = exactdp.dp_value(exactdp.ChainSpec(model, target, cfg["horizon"], cfg["measure"]), table=cfg["table"])
        if cfg["table"]:
            res.write_table(out / "dp_table.csv")
    _write_json(out / "dp.json", {
        "seed": cfg["seed"],
        "measure": res.measure,
        "value": res.value,
        "P": res.p_value,
        "E": res.e_value,
        "method": res.method,
        "stderr": res.stderr,
        "states": res.state_count,
    })
    print(f"P={res.p_value:.12g} E={res.e_value:.12g}")
    return EXIT_OK


def read_replay(path, two_group: bool) -> list:
    """Decision stream from a CSV with columns decision, optional group and timestamp."""
    items = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if "decision" not in cols:
            raise ConfigError(f"{path}: line 1: missing 'decision' column")
        if two_group and "group" not in cols:
            raise ConfigError(f"{path}: line 1: two-group replay needs a 'group' column")
        unknown = set(cols) - {"decision", "group", "timestamp"}
        if unknown:
            raise ConfigError(f"{path}: line 1: unknown columns {sorted(unknown)}")
        for row in reader:
            line = reader.line_num
            d = (row.get("decision") or "").strip()
            if d not in ("0", "1"):
                raise ConfigError(f"{path}: line {line}: decision must be 0 or 1, got {d!r}")
            if two_group:
                g = (row.get("group") or "").strip()
                if g not in ("A", "B"):
                    raise ConfigError(f"{path}: line {line}: group must be A or B, got {g!r}")
                items.append((g, int(d)))
            else:
                items.append(int(d))
    return items


def replay_summary(records, target: FairnessTarget | None) -> dict:
    T = len(records)
    third = max(T // 3, 1)
    out = {
        "steps": T,
        "fairness_at_third": records[third - 1].m if T else None,
        "fairness_at_end": records[-1].m if T else None,
        "interventions": sum(r.y for r in records),
    }
    if target is not None:
        tw = max(target.burn_in, 1)
        out["violations"] = sum(1 for r in records if r.t >= tw and r.m is not None
                                and not target.lower <= r.m <= target.upper)
    return out


def cmd_replay(cfg: dict, out: Path, threads: int = 1) -> int:
    if "input" not in cfg:
        raise ConfigError("config.input: replay needs an input CSV (config key or --input)")
    target = build_target(cfg["target"]) if "target" in cfg else None
    engine = build_engine(cfg["engine"], target)
    items = read_replay(cfg["input"], engine.two_group_mode)
    records = run_stream(engine, items, cfg["seed"])
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow(r.csv_row())
    summary = replay_summary(records, target)
    summary["seed"] = cfg["seed"]
    _write_json(out / "replay_summary.json", summary)
    return EXIT_OK


COMMANDS = {
    "analyze": cmd_analyze,
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "dp": cmd_dp,
    "replay": cmd_replay,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="energyshield", description="Energy-based fairness shields.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--emit-config", action="store_true", help="print the normalized config and exit")
        if name == "replay":
            p.add_argument("--input", help="decision CSV (overrides config 'input')")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args.command, args.config, args.seed)
        if getattr(args, "input", None):
            cfg["input"] = args.input
        if args.emit_config:
            print(emit_config(cfg))
            return EXIT_OK
        return COMMANDS[args.command](cfg, _out_dir(args.out), max(args.threads, 1))
    except ResourceLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
