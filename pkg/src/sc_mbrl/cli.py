"""Command-line entry point.

Configuration resolves as defaults < JSON config file < command-line flags.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import experiment as ex
from . import io
from .errors import InvalidArgumentError, NumericalError
from .mdp import SCHEMA_VERSION, TabularMdp, generate_garnet

log = logging.getLogger("sc_mbrl")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("generate", "evaluate", "control", "robustness", "sweep")


class ConfigError(Exception):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


def _csv_floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).split(",") if x.strip()]


def _optional_float(text):
    return None if text is None else float(text)


def _bool(text):
    if isinstance(text, bool):
        return text
    if str(text).lower() in ("1", "true", "yes"):
        return True
    if str(text).lower() in ("0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text):
    if isinstance(text, float) or isinstance(text, bool):
        raise ValueError(f"not an integer: {text!r}")
    return int(text)


def _choice(*options):
    def convert(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return convert


def _starts(text):
    if text == "all":
        return text
    kind, _, n = str(text).partition(":")
    if kind != "sample" or int(n) < 1:
        raise ValueError(f"expected 'all' or 'sample:N' with N >= 1, got {text!r}")
    return f"sample:{int(n)}"


def _imagination(text):
    if text == "on_policy":
        return text
    kind, _, eps = str(text).partition(":")
    if kind != "eps_mix" or not 0.0 <= float(eps) <= 1.0:
        raise ValueError(f"expected 'on_policy' or 'eps_mix:F' with F in [0, 1], got {text!r}")
    return f"eps_mix:{float(eps)!r}"


# key -> (converter, default); defaults match ExperimentConfig.
KEYS = {
    "task": (_choice("evaluation", "control"), None),
    "algorithm": (_choice(*(a.value for a in ex.Algorithm)), "sc_direct"),
    "model": (_choice("mle", "ve"), "mle"),
    "n_states": (_int, 20),
    "n_actions": (_int, 4),
    "discount": (float, 0.99),
    "epsilon": (_optional_float, None),
    "batch_size": (_int, 8),
    "K": (_int, 2),
    "iterations": (_int, 2000),
    "eval_interval": (_int, 1),
    "replicas": (_int, 30),
    "seed": (_int, 0),
    "alpha_td": (float, 0.03),
    "alpha_r": (float, 1.0),
    "alpha_model": (_optional_float, None),
    "alpha_plan": (_optional_float, None),
    "alpha_plan_value": (_optional_float, None),
    "starts": (_starts, "all"),
    "imagination": (_imagination, "on_policy"),
    "collection": (_choice("streams", "iid"), "streams"),
    "sigma_grid": (_csv_floats, [0.0, 0.25, 0.5, 1.0, 2.0]),
    "target": (_choice("reward", "value"), "reward"),
    "reward_noise_sigma": (_optional_float, None),
    "value_noise_sigma": (_optional_float, None),
    "greedy_eval": (_bool, False),
    "grid_alpha_td": (_csv_floats, list(ex.ALPHA_TD_GRID)),
    "grid_alpha_model": (_csv_floats, list(ex.MODEL_RATE_GRID)),
    "grid_sc_multiplier": (_csv_floats, list(ex.SC_MULTIPLIER_GRID)),
    "out": (str, None),
    "format": (_choice("jsonl", "csv", "both"), "both"),
    "checkpoint": (_bool, False),
    "mdp": (str, None),
    "mdp_out": (str, None),
}

FLAG_HELP = {
    "seed": "base seed (U64)",
    "replicas": "independent replicas",
    "starts": "planning start states: all | sample:N",
    "imagination": "imagination policy: on_policy | eps_mix:F",
    "sigma_grid": "comma-separated noise levels for the robustness sweep",
    "target": "robustness target: reward | value",
    "mdp": "load the ground-truth MDP from this JSON file",
    "mdp_out": "where 'generate' writes the MDP (default OUT/mdp.json)",
    "out": "output directory (env SC_MBRL_OUT overrides the default)",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", metavar="PATH", help="JSON configuration file")
    for key in KEYS:
        flag = "--K" if key == "K" else "--" + key.replace("_", "-")
        common.add_argument(flag, dest=key, metavar=key.upper(), help=FLAG_HELP.get(key))
    parser = argparse.ArgumentParser(prog="sc-mbrl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def resolve_config(command: str, flags: dict, env=os.environ) -> dict:
    """Merge defaults, the optional config file and explicit flags."""
    resolved = {k: default for k, (_, default) in KEYS.items()}
    resolved["out"] = env.get("SC_MBRL_OUT", "runs")
    explicit = {}
    path = flags.pop("config", None)
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError("config", f"cannot read {path}: {err}") from err
        if not isinstance(data, dict):
            raise ConfigError("config", "file must hold a JSON object")
        if data.pop("schema_version", None) != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"must be {SCHEMA_VERSION}")
        explicit.update(data)
    explicit.update(flags)
    for key, raw in explicit.items():
        if key not in KEYS:
            raise ConfigError(key, "unknown key")
        convert, _ = KEYS[key]
        try:
            resolved[key] = None if raw is None else convert(raw)
        except (TypeError, ValueError) as err:
            raise ConfigError(key, str(err)) from err

    forced = {"evaluate": "evaluation", "control": "control", "robustness": "evaluation"}
    if command in forced:
        if resolved["task"] not in (None, forced[command]):
            raise ConfigError("task", f"'{command}' runs the {forced[command]} task")
        resolved["task"] = forced[command]
    resolved["task"] = resolved["task"] or "evaluation"
    if resolved["task"] == "control" and resolved["epsilon"] is None:
        resolved["epsilon"] = 0.1
    resolved["_explicit"] = sorted(explicit)
    return resolved


def experiment_config(resolved: dict) -> ex.ExperimentConfig:
    starts = resolved["starts"]
    imagination = resolved["imagination"]
    kwargs = dict(
        task=ex.Task(resolved["task"]),
        algorithm=ex.Algorithm(resolved["algorithm"]),
        model_objective=ex.ModelObjective(resolved["model"]),
        n_states=resolved["n_states"],
        n_actions=resolved["n_actions"],
        discount=resolved["discount"],
        epsilon=resolved["epsilon"],
        batch_size=resolved["batch_size"],
        K=resolved["K"],
        iterations=resolved["iterations"],
        eval_interval=resolved["eval_interval"],
        n_replicas=resolved["replicas"],
        base_seed=resolved["seed"],
        alpha_td=resolved["alpha_td"],
        alpha_r=resolved["alpha_r"],
        alpha_model=resolved["alpha_model"],
        alpha_plan=resolved["alpha_plan"],
        alpha_plan_value=resolved["alpha_plan_value"],
        planning_starts=None if starts == "all" else int(starts.split(":")[1]),
        imagination_epsilon=None if imagination == "on_policy" else float(imagination.split(":")[1]),
        collection=ex.Collection(resolved["collection"]),
        reward_noise_sigma=resolved["reward_noise_sigma"],
        value_noise_sigma=resolved["value_noise_sigma"],
        greedy_eval=resolved["greedy_eval"],
    )
    try:
        return ex.ExperimentConfig(**kwargs)
    except InvalidArgumentError as err:
        key = str(err).split(":")[0]
        key = {"n_replicas": "replicas", "planning_starts": "starts",
               "imagination_epsilon": "imagination", "model_objective": "model"}.get(key, key)
        raise ConfigError(key, str(err)) from err


def _load_mdp(resolved: dict) -> TabularMdp | None:
    if resolved["mdp"] is None:
        return None
    try:
        mdp = TabularMdp.from_json(Path(resolved["mdp"]).read_text())
    except (OSError, ValueError, KeyError) as err:
        raise ConfigError("mdp", f"cannot load {resolved['mdp']}: {err}") from err
    # an explicit discount overrides the file; sizes always come from the file
    if "discount" not in resolved["_explicit"]:
        resolved["discount"] = mdp.discount
    resolved["n_states"], resolved["n_actions"] = mdp.n_states, mdp.n_actions
    return mdp


def _write_json(path: Path, data):
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def emit_plot_data(out: Path, config: ex.ExperimentConfig, records) -> Path:
    path = out / f"summary_{config.algorithm.value}_{config.model_objective.value}.csv"
    io.write_summary_csv(path, ex.summarize(records, seed=config.base_seed))
    return path


def _cmd_generate(resolved: dict, out: Path):
    mdp = generate_garnet(
        resolved["n_states"], resolved["n_actions"], resolved["seed"], resolved["discount"]
    )
    target = Path(resolved["mdp_out"]) if resolved["mdp_out"] else out / "mdp.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(mdp.to_json() + "\n")
    log.info("wrote %s", target)


def _cmd_run(resolved: dict, out: Path, mdp: TabularMdp | None):
    config = experiment_config(resolved)
    mdps = None if mdp is None else [mdp] * config.n_replicas
    runner = ex.run(config, mdps=mdps)
    records = list(runner)
    fmt = resolved["format"]
    if fmt in ("jsonl", "both"):
        io.write_records_jsonl(out / "metrics.jsonl", records)
    if fmt in ("csv", "both"):
        io.write_records_csv(out / "metrics.csv", records)
    emit_plot_data(out, config, records)
    if resolved["checkpoint"]:
        ckpt = out / "checkpoints"
        ckpt.mkdir(exist_ok=True)
        for replica, params, values in runner.final_state():
            _write_json(ckpt / f"replica_{replica:03d}.json", {
                "schema_version": SCHEMA_VERSION,
                "replica": replica,
                "model": params.to_dict(),
                "values": values.tolist(),
            })
    final = ex.aggregate_ci(ex.final_values(records))
    log.info("final mean %.4f (90%% CI %.4f..%.4f)", final.mean, final.ci_lo, final.ci_hi)


def _cmd_robustness(resolved: dict, out: Path, mdp):
    config = experiment_config(resolved)
    if mdp is not None:
        raise ConfigError("mdp", "the robustness sweep generates its own MDPs")
    rows = ex.run_robustness_sweep(
        config, resolved["sigma_grid"], ex.InitTarget(resolved["target"]), seed=config.base_seed
    )
    name = f"robustness_{config.algorithm.value}_{config.model_objective.value}_{resolved['target']}.csv"
    io.write_robustness_csv(out / name, rows)


def _cmd_sweep(resolved: dict, out: Path, mdp):
    config = experiment_config(resolved)
    if mdp is not None:
        raise ConfigError("mdp", "the learning-rate sweep generates its own MDPs")
    grids = {"alpha_td": resolved["grid_alpha_td"]}
    if config.algorithm is not ex.Algorithm.MODEL_FREE:
        grids["alpha_model"] = resolved["grid_alpha_model"]
    if config.algorithm.variant not in (None, ex.ScVariant.DYNA):
        grids["sc_multiplier"] = resolved["grid_sc_multiplier"]
    table = ex.run_lr_sweep(config, grids, seed=config.base_seed)
    names = sorted(grids)
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names + ["mean", "ci_lo", "ci_hi"])
        for cell, stat in table:
            writer.writerow([repr(cell[n]) for n in names] + [repr(stat.mean), repr(stat.ci_lo), repr(stat.ci_hi)])


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    try:
        resolved = resolve_config(command, args)
        mdp = _load_mdp(resolved) if command != "generate" else None
        if command != "generate":
            experiment_config(resolved)
        out = Path(resolved["out"])
        out.mkdir(parents=True, exist_ok=True)
        echo = {k: v for k, v in resolved.items() if not k.startswith("_")}
        echo.update(schema_version=SCHEMA_VERSION, command=command)
        if command != "generate":
            echo["resolved_rates"] = {
                k: v for k, v in experiment_config(resolved).to_dict().items()
                if k.startswith("resolved_")
            }
        _write_json(out / "resolved_config.json", echo)
        if command == "generate":
            _cmd_generate(resolved, out)
        elif command in ("evaluate", "control"):
            _cmd_run(resolved, out, mdp)
        elif command == "robustness":
            _cmd_robustness(resolved, out, mdp)
        else:
            _cmd_sweep(resolved, out, mdp)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
