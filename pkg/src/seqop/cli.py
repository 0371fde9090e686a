"""``seqop`` command line: gen, train, eval, predict, bench.

Failures print one line to stderr,
``seqop: error code=<code> message=<json string>``, and exit non-zero
(2 for usage errors, 1 otherwise).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("seqop")

DEFAULTS = {
    "gen": {"problem": None, "cases": 600, "seed": 0, "out": None, "jobs": 1, "dt": 0.1,
            "mesh_target": 4756, "dump_mesh": False, "dump_history": None},
    "train": {"data": None, "variant": "fnn", "epochs": 20000, "batch": 64, "lr": 1e-3, "seed": 0,
              "out": None, "n_test": None, "split_seed": 0, "checkpoint_every": 0, "log_every": 100},
    "eval": {"model": None, "data": None, "out": None, "svg": False},
    "predict": {"model": None, "history": None, "out": None},
    "bench": {"model": None, "data": None, "repeat": 5},
}
POSITIVE = ("cases", "jobs", "dt", "mesh_target", "epochs", "batch", "repeat")
NON_NEGATIVE = ("lr", "checkpoint_every", "log_every")


class CliError(Exception):
    def __init__(self, code, message, status=1):
        super().__init__(message)
        self.code, self.status = code, status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message, 2)


def _parser():
    S = argparse.SUPPRESS
    common = _Parser(add_help=False, argument_default=S)
    common.add_argument("--config", help="JSON file of option defaults (flags take precedence)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")
    p = _Parser(prog="seqop", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="solve random load histories into a dataset", argument_default=S)
    g.add_argument("--problem", choices=("heat", "plastic"))
    g.add_argument("--cases", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.add_argument("--jobs", type=int)
    g.add_argument("--dt", type=float, help="heat time step [s]")
    g.add_argument("--mesh-target", dest="mesh_target", type=int, help="dog-bone element count")
    g.add_argument("--dump-mesh", dest="dump_mesh", action="store_true", help="also write mesh.txt")
    g.add_argument("--dump-history", dest="dump_history", type=int, metavar="CASE",
                   help="also write history_<CASE>.csv")

    t = sub.add_parser("train", parents=[common], help="train a DeepONet on a dataset", argument_default=S)
    t.add_argument("--data")
    t.add_argument("--variant", choices=("fnn", "lstm", "gru"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--n-test", dest="n_test", type=int, help="held-out cases (default N/12, at most 50)")
    t.add_argument("--split-seed", dest="split_seed", type=int)
    t.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    t.add_argument("--log-every", dest="log_every", type=int)

    e = sub.add_parser("eval", parents=[common], help="evaluate a model and write the report directory", argument_default=S)
    e.add_argument("--model")
    e.add_argument("--data")
    e.add_argument("--out")
    e.add_argument("--svg", action="store_true")

    r = sub.add_parser("predict", parents=[common], help="predict the final field for one history CSV", argument_default=S)
    r.add_argument("--model")
    r.add_argument("--history")
    r.add_argument("--out")

    b = sub.add_parser("bench", parents=[common], help="time batched inference against the stored solver times",
                       argument_default=S)
    b.add_argument("--model")
    b.add_argument("--data")
    b.add_argument("--repeat", type=int)
    return p


def resolve(argv):
    """Parse ``argv`` and merge flags > ``--config`` file > built-in defaults."""
    ns = vars(_parser().parse_args(argv))
    cmd = ns.pop("cmd")
    cfg = dict(DEFAULTS[cmd])
    cfg["force"] = False
    path = ns.pop("config", None)
    if path:
        try:
            filecfg = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise CliError("missing_path", f"config file {path} not found")
        except json.JSONDecodeError as exc:
            raise CliError("invalid_config", f"{path}: {exc}")
        filecfg = filecfg.get(cmd, filecfg)
        unknown = set(filecfg) - set(cfg)
        if unknown:
            raise CliError("invalid_config", f"{path}: unknown options {sorted(unknown)}")
        cfg.update(filecfg)
    verbose = ns.pop("verbose", False)
    cfg.update({k: v for k, v in ns.items() if v is not None})
    for k in POSITIVE:
        if k in cfg and cfg[k] is not None and not cfg[k] > 0:
            raise CliError("invalid_value", f"--{k.replace('_', '-')} must be positive, got {cfg[k]}", 2)
    for k in NON_NEGATIVE:
        if k in cfg and cfg[k] is not None and cfg[k] < 0:
            raise CliError("invalid_value", f"--{k.replace('_', '-')} must be non-negative, got {cfg[k]}", 2)
    for k, v in cfg.items():
        if v is None and k in ("problem", "out", "data", "model", "history"):
            raise CliError("usage", f"{cmd}: --{k} is required", 2)
    return cmd, cfg, verbose


def _fresh_dir(path, force):
    p = Path(path)
    if p.exists() and (not p.is_dir() or any(p.iterdir())) and not force:
        raise CliError("exists", f"{p} exists and is not empty (use --force)")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _existing_dir(path, what):
    p = Path(path)
    if not p.is_dir():
        raise CliError("missing_path", f"{what} directory {p} not found")
    return p


def _echo(out_dir, cmd, cfg):
    echo = {k: v for k, v in cfg.items() if k not in ("out", "force")}
    (Path(out_dir) / "run_config.json").write_text(
        json.dumps({"command": cmd, **echo}, indent=1, sort_keys=True) + "\n")


def default_n_test(n):
    return min(n - 1, max(3, min(50, round(n / 12))))


def cmd_gen(cfg):
    from .pipeline import generate_dataset

    if cfg["dump_mesh"] and cfg["problem"] != "plastic":
        raise CliError("usage", "--dump-mesh applies to the plastic problem only", 2)
    i = cfg["dump_history"]
    if i is not None and not 0 <= i < cfg["cases"]:
        raise CliError("invalid_value", f"--dump-history {i} outside 0..{cfg['cases'] - 1}", 2)
    out = _fresh_dir(cfg["out"], cfg["force"])
    over = {"dt": cfg["dt"]} if cfg["problem"] == "heat" else {"mesh_target": cfg["mesh_target"]}

    def progress(i, n):
        if i == n or i % max(1, n // 20) == 0:
            log.info("gen %s: %d/%d cases", cfg["problem"], i, n)

    bundle = generate_dataset(cfg["problem"], cfg["cases"], cfg["seed"], jobs=cfg["jobs"],
                              progress=progress, **over)
    bundle.save(out)
    _echo(out, "gen", cfg)
    if cfg["dump_mesh"]:
        from .pipeline.dataset import _setup
        _setup(bundle.config)["mesh"].to_text(out / "mesh.txt")
    if i is not None:
        bundle.load_history(i).to_csv(out / f"history_{i}.csv")
    print(json.dumps({"out": str(out), "cases": len(bundle), "nodes": bundle.n_nodes,
                      "mean_solver_time": float(bundle.times.mean())}))


def cmd_train(cfg):
    from .operator_net import DeepONetConfig, build_model
    from .pipeline import DatasetBundle, split_dataset, train

    bundle = DatasetBundle.load(_existing_dir(cfg["data"], "data"))
    n_test = cfg["n_test"] or default_n_test(len(bundle))
    out = _fresh_dir(cfg["out"], cfg["force"])
    tr, te = split_dataset(bundle, n_test, cfg["split_seed"])
    model = build_model(DeepONetConfig.default(cfg["variant"]), cfg["seed"])

    def progress(epoch, loss):
        if epoch == 1 or epoch % cfg["log_every"] == 0 or epoch == cfg["epochs"]:
            log.info("train %s: epoch %d loss %.6e", cfg["variant"], epoch, loss)

    ckpt = out / "checkpoints" if cfg["checkpoint_every"] else None
    result = train(model, tr, cfg["epochs"], cfg["batch"], cfg["lr"], cfg["seed"],
                   checkpoint_dir=ckpt, checkpoint_every=cfg["checkpoint_every"],
                   log=progress if cfg["log_every"] else None)
    model.metadata.update({"n_test": n_test, "split_seed": cfg["split_seed"]})
    model.save(out)
    with open(out / "losses.csv", "w") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(result.losses, 1):
            fh.write(f"{i},{v!r}\n")
    _echo(out, "train", cfg)
    print(json.dumps({"out": str(out), "variant": cfg["variant"], "n_train": len(tr), "n_test": n_test,
                      "initial_loss": result.initial_loss, "final_loss": result.final_loss}))


def _load_model(path):
    from .operator_net import DeepONetModel
    return DeepONetModel.load(_existing_dir(path, "model"))


def _test_view(model, bundle):
    """The held-out split when the data is the training dataset, otherwise every case."""
    from .pipeline import split_dataset
    from .pipeline.evaluation import check_compatible

    try:
        check_compatible(model, bundle)
    except ValueError as exc:
        raise CliError("mismatch", str(exc))
    md = model.metadata
    if md.get("data_config_hash") == bundle.config_hash and "n_test" in md:
        return split_dataset(bundle, md["n_test"], md["split_seed"])[1]
    return bundle


def cmd_eval(cfg):
    from .pipeline import DatasetBundle, evaluate, export_report, measure_speedup

    model = _load_model(cfg["model"])
    bundle = DatasetBundle.load(_existing_dir(cfg["data"], "data"))
    test = _test_view(model, bundle)
    out = _fresh_dir(cfg["out"], cfg["force"])
    report, pred = evaluate(model, test)
    report.timing = measure_speedup(test, model)
    export_report(report, test, {model.config.variant: pred}, out, svg=cfg["svg"])
    _echo(out, "eval", cfg)
    print(json.dumps({"out": str(out), "mean": report.mean, "std": report.std, "min": report.min,
                      "max": report.max, "speedup": report.timing["speedup"]}))


def cmd_predict(cfg):
    from .histories import read_history_csv
    from .operator_net import forward

    model = _load_model(cfg["model"])
    src = Path(cfg["history"])
    if not src.is_file():
        raise CliError("missing_path", f"history file {src} not found")
    out = Path(cfg["out"])
    if out.exists() and not cfg["force"]:
        raise CliError("exists", f"{out} exists (use --force)")
    if model.coords is None:
        raise CliError("mismatch", "model checkpoint carries no mesh coordinates")
    problem = model.metadata.get("problem", "heat")
    try:
        h = read_history_csv(src, "flux" if problem == "heat" else "displacement")
    except ValueError as exc:
        raise CliError("invalid_history", str(exc))
    field = forward(model, h.values[None], model.coords)[0]
    header = "node_x,node_y," + ("T_final" if problem == "heat" else "von_mises")
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(out, np.column_stack([model.coords.astype(np.float64), field.astype(np.float64)]),
               delimiter=",", header=header, comments="", fmt="%.9g")
    print(json.dumps({"out": str(out), "nodes": int(field.size), "min": float(field.min()),
                      "max": float(field.max())}))


def cmd_bench(cfg):
    from .pipeline import DatasetBundle, measure_speedup

    model = _load_model(cfg["model"])
    bundle = DatasetBundle.load(_existing_dir(cfg["data"], "data"))
    test = _test_view(model, bundle)
    res = measure_speedup(test, model, cfg["repeat"])
    res["variant"] = model.config.variant
    print(json.dumps(res))


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "bench": cmd_bench}


def run(argv=None) -> int:
    from .nn import reduction_mode
    from .pipeline import DatasetError, TrainingDiverged

    try:
        cmd, cfg, verbose = resolve(sys.argv[1:] if argv is None else argv)
        logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                            format="%(asctime)s %(message)s", stream=sys.stderr)
        with reduction_mode():
            COMMANDS[cmd](cfg)
        return 0
    except CliError as exc:
        err = exc
    except TrainingDiverged as exc:
        err = CliError("diverged", str(exc))
    except DatasetError as exc:
        err = CliError("invalid_data", str(exc))
    except FileNotFoundError as exc:
        err = CliError("missing_path", str(exc))
    except (ValueError, RuntimeError) as exc:
        err = CliError("failed", f"{type(exc).__name__}: {exc}")
    print(f"seqop: error code={err.code} message={json.dumps(str(err))}", file=sys.stderr)
    return err.status


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
