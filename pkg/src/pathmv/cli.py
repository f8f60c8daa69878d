"""Command line entry point: ``pathmv {cluster,simulate,solve,backtest}``.

Settings come from schema defaults, then an optional ``--config`` file
(TOML, or a ``manifest.json`` written by an earlier run), then explicit
flags. A master ``seed`` fans out to named sub-seeds so the subsystems
never share a random stream. Every run writes ``manifest.json`` with the
resolved config, the derived seeds and library versions under ``--out``.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import zlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("pathmv")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Key:
    type: str  # int, float, bool, str, floats, ints
    default: object
    help: str


def _bundled_prices() -> str:
    return str(resources.files("pathmv") / "data" / "synthetic30.csv")


COMMON = {
    "seed": Key("int", 0, "master seed; sub-seeds are derived per subsystem"),
}

SCHEMAS: dict[str, dict[str, Key]] = {
    "cluster": {
        "prices": Key("str", None, "price CSV (date column then one column per ticker); default: bundled panel"),
        "benchmark_col": Key("str", None, "column to leave out of the clustering"),
        "start_day": Key("int", None, "use only returns before this date index (default: all)"),
        "window": Key("int", None, "number of trailing returns to use (default: all)"),
        "sim_w": Key("float", 0.5, "weight of the cumulative-return term in the similarity"),
        "T0": Key("float", 100.0, "initial annealing temperature"),
        "Tf": Key("float", 0.1, "final annealing temperature"),
        "alpha": Key("float", 0.99, "geometric cooling factor"),
        "kappa": Key("float", 1e-4, "within-cluster similarity weight in the energy"),
        "restarts": Key("int", 100, "independent annealing runs"),
        "k_max": Key("int", 25, "number of cluster slots"),
        "backend": Key("str", "auto", "annealing kernel: auto, cython or python"),
    },
    "simulate": {
        "mu": Key("floats", [0.1], "annual drift per asset"),
        "vol": Key("floats", [0.2], "annual volatility per asset"),
        "corr": Key("float", 0.0, "common pairwise correlation"),
        "r": Key("float", 0.0, "risk-free rate"),
        "gamma": Key("float", 0.01, "exploration temperature"),
        "N": Key("int", 20, "time steps"),
        "T": Key("float", 1.0, "horizon in years"),
        "M": Key("int", 200, "number of paths"),
        "x0": Key("floats", [1.0], "initial wealth path on the simulation grid"),
        "theta": Key("str", None, "trained network file; default: bootstrap exploration policy"),
        "h": Key("float", 0.01, "vertical bump for the induced policy"),
        "floor": Key("float", 1e-6, "curvature floor for the induced policy"),
        "assets": Key("bool", False, "also write simulated asset price paths"),
    },
    "solve": {
        "mu": Key("floats", [0.1], "annual drift per asset"),
        "vol": Key("floats", [0.2], "annual volatility per asset"),
        "corr": Key("float", 0.0, "common pairwise correlation"),
        "r": Key("float", 0.0, "risk-free rate"),
        "gamma": Key("float", 0.01, "exploration temperature"),
        "z": Key("float", 1.1, "target expected terminal wealth"),
        "lagrange_w": Key("float", None, "initial multiplier (default: classical closed form)"),
        "M": Key("int", 200, "simulated paths per round"),
        "N": Key("int", 20, "time steps"),
        "T": Key("float", 1.0, "horizon in years"),
        "h": Key("float", 0.01, "vertical bump size"),
        "terminal_weight": Key("float", 1.0, "weight of the terminal-condition penalty"),
        "floor": Key("float", 1e-6, "curvature floor"),
        "outer_rounds": Key("int", 3, "simulate/train/update rounds"),
        "epochs": Key("int", 300, "optimizer steps per round"),
        "lr": Key("float", 1e-3, "learning rate"),
        "hidden": Key("int", 32, "LSTM hidden size"),
        "layers": Key("ints", [64, 64, 64], "MLP hidden layer widths"),
        "x_scale": Key("float", 0.25, "wealth standardization scale"),
        "x0": Key("floats", [1.0], "initial wealth path on the solver grid"),
        "martingale_paths": Key("int", 0, "paths for the martingale diagnostic (0 skips it)"),
    },
    "backtest": {
        "prices": Key("str", None, "price CSV; default: bundled 30-asset synthetic panel"),
        "benchmark_col": Key("str", "INDEX", "buy-and-hold comparison column ('' for none)"),
        "start_day": Key("int", 75, "date index of the first trading day"),
        "days": Key("int", 30, "consecutive trading days"),
        "gamma": Key("float", 0.01, "exploration temperature"),
        "z": Key("float", 1.1, "target terminal wealth"),
        "window": Key("int", 75, "estimation window in returns"),
        "d": Key("int", 25, "number of traded assets"),
        "r": Key("float", 0.0, "risk-free rate"),
        "M": Key("int", 500, "simulated paths per training round"),
        "epochs": Key("int", 100, "optimizer steps per round"),
        "outer_rounds": Key("int", 1, "training rounds per day"),
        "lr": Key("float", 1e-3, "learning rate"),
        "h": Key("float", 0.01, "vertical bump size"),
        "terminal_weight": Key("float", 1.0, "terminal penalty weight"),
        "floor": Key("float", 1e-6, "curvature floor"),
        "hidden": Key("int", 32, "LSTM hidden size"),
        "layers": Key("ints", [64, 64, 64], "MLP hidden layer widths"),
        "x_scale": Key("float", 0.25, "wealth standardization scale"),
        "cluster": Key("bool", False, "pick assets as cluster representatives"),
        "warm_start": Key("bool", False, "start each day from the previous network"),
        "zero_holdings": Key("bool", False, "debug: hold nothing"),
    },
}
for _schema in SCHEMAS.values():
    _schema.update(COMMON)


def sub_seed(master: int, name: str) -> int:
    ss = np.random.SeedSequence([int(master), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# -- config parsing ------------------------------------------------------------

def _check_value(name: str, key: Key, value):
    if value is None:
        return None
    t = key.type
    ok = {
        "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "float": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        "bool": lambda v: isinstance(v, bool),
        "str": lambda v: isinstance(v, str),
        "floats": lambda v: isinstance(v, list) and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v),
        "ints": lambda v: isinstance(v, list) and all(isinstance(x, int) and not isinstance(x, bool) for x in v),
    }[t]
    if not ok(value):
        raise ConfigError(f"config key {name!r} expects {t}, got {value!r}")
    if t == "float":
        return float(value)
    if t == "floats":
        return [float(x) for x in value]
    return value


def load_config_file(path: str, command: str) -> dict:
    p = Path(path)
    try:
        text = p.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if p.suffix == ".json":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if "command" in obj and obj["command"] != command:
            raise ConfigError(f"{path} is a manifest for {obj['command']!r}, not {command!r}")
        obj = obj.get("config", obj)
    else:
        try:
            obj = tomllib.loads(text.decode())
        except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
        if isinstance(obj.get(command), dict):
            obj = {**{k: v for k, v in obj.items() if k not in SCHEMAS}, **obj[command]}
        obj = {k: v for k, v in obj.items() if k not in SCHEMAS}
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: config must be a table of keys")
    return obj


def resolve(command: str, file_cfg: dict, flags: dict) -> dict:
    schema = SCHEMAS[command]
    unknown = sorted(set(file_cfg) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    out = {name: key.default for name, key in schema.items()}
    for name, value in file_cfg.items():
        out[name] = _check_value(name, schema[name], value)
    for name, value in flags.items():
        out[name] = _check_value(name, schema[name], value)
    return out


def _flag_type(key: Key):
    return {"int": int, "float": float, "str": str, "floats": float, "ints": int}.get(key.type)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathmv",
        description="Path-dependent exploratory mean-variance toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "cluster": "cluster assets by return similarity with simulated annealing",
        "simulate": "simulate exploratory wealth paths",
        "solve": "train the value network for constant market parameters",
        "backtest": "run the daily re-training backtest",
    }
    for command, schema in SCHEMAS.items():
        p = sub.add_parser(
            command, help=helps[command], description=helps[command],
            epilog="config keys: " + ", ".join(schema),
        )
        p.add_argument("--config", help="TOML config file or manifest.json from a previous run")
        p.add_argument("--out", default=f"{command}_out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true", help="progress lines on stderr")
        for name, key in schema.items():
            flag = "--" + name.replace("_", "-")
            default_txt = f" (default: {key.default})"
            if key.type == "bool":
                p.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction,
                               default=argparse.SUPPRESS, help=key.help + default_txt)
            elif key.type in ("floats", "ints"):
                p.add_argument(flag, dest=name, nargs="+", type=_flag_type(key),
                               default=argparse.SUPPRESS, help=key.help + default_txt)
            else:
                p.add_argument(flag, dest=name, type=_flag_type(key),
                               default=argparse.SUPPRESS, help=key.help + default_txt)
    return parser


# -- subcommands ---------------------------------------------------------------

def _model_params(cfg: dict):
    from .marketdata import ModelParams

    mu = np.asarray(cfg["mu"], dtype=float)
    vol = np.asarray(cfg["vol"], dtype=float)
    if mu.shape != vol.shape:
        raise ConfigError("mu and vol need the same number of entries")
    d = mu.size
    corr = np.full((d, d), cfg["corr"])
    np.fill_diagonal(corr, 1.0)
    return ModelParams.from_cov(mu, corr * np.outer(vol, vol), cfg["r"])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_cluster(cfg: dict, seeds: dict, out: Path) -> dict:
    from .clustering import BACKEND, AnnealConfig, best_of_restarts, select_representatives
    from .marketdata import load_prices, to_returns
    from .similarity import SimilarityConfig, similarity_matrix

    panel = load_prices(cfg["prices"] or _bundled_prices())
    names = [t for t in panel.tickers if t != cfg["benchmark_col"]]
    rets = to_returns(panel)[:, [panel.tickers.index(t) for t in names]]
    end = rets.shape[0] if cfg["start_day"] is None else cfg["start_day"]
    begin = 0 if cfg["window"] is None else max(0, end - cfg["window"])
    S = similarity_matrix(rets[begin:end], SimilarityConfig(cfg["sim_w"]), names)
    acfg = AnnealConfig(
        T0=cfg["T0"], Tf=cfg["Tf"], alpha=cfg["alpha"], kappa=cfg["kappa"],
        restarts=cfg["restarts"], seed=seeds["anneal"], k_max=cfg["k_max"],
    )
    backend = None if cfg["backend"] == "auto" else cfg["backend"]
    log.info("annealing %d assets, %d restarts", len(names), acfg.restarts)
    res = best_of_restarts(S, acfg, backend=backend)
    reps = select_representatives(res.partition, np.random.default_rng(seeds["representatives"]))
    S.to_csv(out / "similarity.csv")
    labels = res.partition.canonical()
    with (out / "clusters.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "cluster"])
        for t, c in zip(names, labels):
            w.writerow([t, c])
    summary = {
        "energy": res.energy,
        "n_clusters": res.partition.n_clusters,
        "restart": res.restart,
        "steps": res.steps,
        "representatives": [names[i] for i in reps],
        "backend": backend or BACKEND,
    }
    _write_json(out / "clusters.json", summary)
    return summary


def cmd_simulate(cfg: dict, seeds: dict, out: Path) -> dict:
    from .hjb_solver import induced_policy
    from .market import PathGrid, SimConfig, constant_policy, simulate_assets, simulate_exploratory_paths
    from .nn.network import NetworkParams
    from .policy import bootstrap_policy

    params = _model_params(cfg)
    sim = SimConfig(cfg["N"], cfg["T"], cfg["M"], seeds["paths"])
    x0 = PathGrid(np.asarray(cfg["x0"]), sim.dt)
    if cfg["theta"]:
        pol = induced_policy(NetworkParams.load(cfg["theta"]), params, cfg["gamma"], cfg["h"], sim.dt, cfg["floor"])
    else:
        pol = constant_policy(bootstrap_policy(params, cfg["gamma"]))
    ens = simulate_exploratory_paths(x0, pol, params, sim)
    ens.to_csv(out / "paths.csv")
    if cfg["assets"]:
        prices = simulate_assets(params, SimConfig(cfg["N"], cfg["T"], cfg["M"], seeds["assets"]))
        with (out / "assets.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "step", *(f"asset{j}" for j in range(params.d))])
            for i, path in enumerate(prices):
                for k, row in enumerate(path):
                    w.writerow([i, k, *(repr(float(v)) for v in row)])
    xT = ens.values[:, -1]
    summary = {"mean_xT": float(xT.mean()), "std_xT": float(xT.std(ddof=1)) if xT.size > 1 else 0.0}
    _write_json(out / "summary.json", summary)
    return summary


def cmd_solve(cfg: dict, seeds: dict, out: Path) -> dict:
    from .hjb_solver import SolverConfig, martingale_check, train
    from .market import PathGrid, SimConfig

    params = _model_params(cfg)
    scfg = SolverConfig(
        gamma=cfg["gamma"], z=cfg["z"], lagrange_w=cfg["lagrange_w"], M=cfg["M"], N=cfg["N"],
        T=cfg["T"], h=cfg["h"], terminal_weight=cfg["terminal_weight"], floor=cfg["floor"],
        outer_rounds=cfg["outer_rounds"], epochs=cfg["epochs"], lr=cfg["lr"],
        hidden=cfg["hidden"], layers=tuple(cfg["layers"]), x_scale=cfg["x_scale"],
    )
    x0 = PathGrid(np.asarray(cfg["x0"]), scfg.dt)

    def progress(r, epoch, value):
        if epoch % 50 == 0:
            log.info("round %d epoch %d loss %.4g", r, epoch, value)

    theta, rep = train(x0, params, scfg, seed=seeds["train"], callback=progress)
    theta.save(out / "theta.bin")
    with (out / "loss_curve.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, v in enumerate(rep.loss_curve):
            w.writerow([i, repr(v)])
    report = rep.to_dict()
    report.pop("loss_curve")
    report.pop("seconds")
    if cfg["martingale_paths"] > 0:
        m = martingale_check(
            theta, params, SimConfig(scfg.N, scfg.T, cfg["martingale_paths"], seeds["martingale"]),
            x0, scfg.gamma, scfg.h, scfg.floor,
        )
        report["martingale"] = {"gap": float(m.gaps[-1]), "stderr": float(m.stderrs[-1])}
    _write_json(out / "report.json", report)
    return report


def cmd_backtest(cfg: dict, seeds: dict, out: Path) -> dict:
    from .backtest import BacktestConfig, report, run
    from .marketdata import load_prices

    panel = load_prices(cfg["prices"] or _bundled_prices())
    bcfg = BacktestConfig(
        gamma=cfg["gamma"], d=cfg["d"], r=cfg["r"], window=cfg["window"], days=cfg["days"],
        M=cfg["M"], z=cfg["z"], seed=seeds["backtest"], benchmark=cfg["benchmark_col"] or None,
        cluster=cfg["cluster"], warm_start=cfg["warm_start"], zero_holdings=cfg["zero_holdings"],
        epochs=cfg["epochs"], outer_rounds=cfg["outer_rounds"], lr=cfg["lr"], h=cfg["h"],
        terminal_weight=cfg["terminal_weight"], floor=cfg["floor"], hidden=cfg["hidden"],
        layers=tuple(cfg["layers"]), x_scale=cfg["x_scale"],
    )
    ledger, bench = run(panel, cfg["start_day"], bcfg)
    report(ledger, bench, out, panel.dates)
    return json.loads((out / "metrics.json").read_text())["strategy"]


COMMANDS = {
    "cluster": (cmd_cluster, ("anneal", "representatives")),
    "simulate": (cmd_simulate, ("paths", "assets")),
    "solve": (cmd_solve, ("train", "martingale")),
    "backtest": (cmd_backtest, ("backtest",)),
}


def _versions() -> dict:
    import matplotlib
    import scipy

    from . import __version__
    from .clustering import BACKEND

    return {
        "pathmv": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
        "python": ".".join(map(str, sys.version_info[:3])),
        "anneal_backend": BACKEND,
    }


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(message)s", stream=sys.stderr,
    )
    command = args.command
    flags = {k: v for k, v in vars(args).items() if k in SCHEMAS[command]}
    try:
        file_cfg = load_config_file(args.config, command) if args.config else {}
        cfg = resolve(command, file_cfg, flags)
        if command == "backtest" and cfg["benchmark_col"] == "":
            cfg["benchmark_col"] = None
    except ConfigError as exc:
        print(f"pathmv {command}: error: {exc}", file=sys.stderr)
        return 2

    fn, seed_names = COMMANDS[command]
    seeds = {name: sub_seed(cfg["seed"], f"{command}.{name}") for name in seed_names}
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = {
            "command": command,
            "config": cfg,
            "seeds": {"master": cfg["seed"], **seeds},
            "versions": _versions(),
        }
        _write_json(out / "manifest.json", manifest)
        summary = fn(cfg, seeds, out)
    except ConfigError as exc:
        print(f"pathmv {command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: report and exit 1
        print(f"pathmv {command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    log.info("%s done: %s", command, json.dumps(summary, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
