"""Command-line entry point: ``editloop {gen,trace,train,infer,eval,sweep}``.

Settings resolve in this order, later winning: built-in defaults, a flat
``key = value`` file given with ``--config``, ``EDITLOOP_<KEY>`` environment
variables, explicit flags.
"""
import argparse
import csv
import json
import logging
import os
import sys
import traceback
from dataclasses import fields

from . import __version__
from . import dataio
from .actions import encode_action
from .arith import MalformedExpression, detokenize, tokenize
from .engine import recurrent_infer
from .metrics import LengthMismatch, evaluate
from .model import PROFILES, Hyperparams, NonFiniteLoss
from .tasks import GENERATORS, GenerationExhausted, Task, TaskParams, substream
from .trace import Method, Mode, derive_trace
from .training import TrainedModel, evaluate_model, infer_method, predict, train

logger = logging.getLogger("editloop")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAIN = 0, 2, 3, 4

ENV_PREFIX = "EDITLOOP_"
TASK_FIELDS = {f.name: f.type for f in fields(TaskParams)}
HP_FIELDS = {f.name: f.type for f in fields(Hyperparams)}


class ConfigError(ValueError):
    pass


def _to_bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _optional_int(text):
    if text is None or str(text).strip().lower() in ("", "none"):
        return None
    return int(text)


# key -> converter; anything not listed stays a string
CONVERTERS = {
    "n": int, "l": int, "d": int, "seed": int, "max_attempts": int, "aec_max_errors": int,
    "unary_rate": float, "aes_replace_rate": float, "aes_unary_rate": float,
    "d_model": int, "d_embedding": int, "n_layers": int, "batch_size": int, "patience": int, "max_epochs": int,
    "learning_rate": float, "teacher_forcing_rate": float, "dropout_rate": float, "grad_clip": float,
    "beta1": float, "beta2": float, "adam_eps": float,
    "max_iters": _optional_int, "resume": _to_bool, "random_order": _to_bool, "eval_test": _to_bool,
}


def read_config_file(path) -> dict:
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def write_config_file(path, settings: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# editloop {__version__} run manifest\n")
        for key in sorted(settings):
            value = settings[key]
            fh.write(f"{key} = {'none' if value is None else value}\n")


def resolve(args, keys, defaults=None) -> dict:
    """Merge defaults, config file, environment and flags for ``keys``."""
    merged = dict(defaults or {})
    if getattr(args, "config", None):
        merged.update({k: v for k, v in read_config_file(args.config).items() if k in keys})
    for key in keys:
        env = os.environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            merged[key] = env
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    out = {}
    for key, value in merged.items():
        conv = CONVERTERS.get(key)
        try:
            out[key] = conv(value) if conv and value is not None else value
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for {key}: {value!r}") from None
    return out


def _require(settings, *keys):
    missing = [k for k in keys if settings.get(k) in (None, "")]
    if missing:
        raise ConfigError("missing required setting(s): " + ", ".join(missing))


def task_params_from(settings) -> TaskParams:
    _require(settings, "task", "n", "l", "d")
    kw = {k: settings[k] for k in TASK_FIELDS if k in settings}
    try:
        kw["task"] = Task(str(kw["task"]).lower())
        return TaskParams(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def hyperparams_from(settings) -> Hyperparams:
    profile = settings.get("profile", "desk")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r} (choose from {', '.join(PROFILES)})")
    overrides = {k: settings[k] for k in HP_FIELDS if k in settings and settings[k] is not None}
    try:
        return PROFILES[profile].with_(**overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _enum(cls, value, what):
    try:
        return cls(str(value).lower())
    except ValueError:
        choices = ", ".join(m.value for m in cls)
        raise ConfigError(f"unknown {what} {value!r} (choose from {choices})") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

GEN_KEYS = ["task", "out"] + [k for k in TASK_FIELDS if k != "task"]


def cmd_gen(args) -> int:
    settings = resolve(args, GEN_KEYS)
    _require(settings, "out")
    params = task_params_from(settings)
    split = GENERATORS[params.task](params)
    dataio.write_dataset(split, params, settings["out"])
    sizes = {k: len(v) for k, v in split.parts().items()}
    print(f"wrote {settings['out']}: " + ", ".join(f"{k}={v}" for k, v in sizes.items()))
    return EXIT_OK


TRACE_KEYS = ["task", "input", "out", "random_order", "seed"]


def cmd_trace(args) -> int:
    settings = resolve(args, TRACE_KEYS, {"random_order": False, "seed": 0})
    _require(settings, "input", "out")
    pairs = dataio.read_pairs(settings["input"])
    task = settings.get("task")
    if task is None:
        # fall back to the manifest next to a dataset split file
        task = dataio.read_manifest(os.path.dirname(settings["input"]) or ".")["params"]["task"]
    task = _enum(Task, task, "task")
    with open(settings["out"], "w", encoding="utf-8", newline="\n") as fh:
        for idx, pair in enumerate(pairs):
            rng = substream(settings["seed"], "order", idx) if settings["random_order"] else None
            tr = derive_trace(pair.src, pair.tgt, task, rng)
            rec = {
                "states": [detokenize(s) for s in tr.states],
                "actions": [detokenize(encode_action(a, task)) for a in tr.actions],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"wrote {len(pairs)} traces to {settings['out']}")
    return EXIT_OK


TRAIN_KEYS = ["data", "out", "method", "mode", "profile", "seed", "max_iters", "resume", "eval_test"] + [
    k for k in HP_FIELDS
]
TRAIN_DEFAULTS = {"method": "recurrence", "mode": "online", "profile": "desk", "seed": 0, "max_iters": None,
                  "resume": False, "eval_test": True}


def run_training(settings) -> dict:
    """Train from resolved settings; writes the run directory and returns a summary."""
    _require(settings, "data", "out")
    method = _enum(Method, settings["method"], "method")
    mode = _enum(Mode, settings["mode"], "mode")
    hp = hyperparams_from(settings)
    dataset, params = dataio.read_dataset(settings["data"])
    out = settings["out"]
    os.makedirs(out, exist_ok=True)
    manifest = {k: v for k, v in settings.items() if k not in ("resume", "config")}
    manifest.update({k: getattr(hp, k) for k in HP_FIELDS})
    manifest.update({"method": method.value, "mode": mode.value})
    # informational; results are only bitwise stable for a fixed BLAS thread count
    manifest["blas_threads"] = os.environ.get("OMP_NUM_THREADS", "default")
    write_config_file(os.path.join(out, "manifest.cfg"), manifest)

    model = train(params, dataset, hp, method, mode, seed=settings["seed"], out_dir=out,
                  resume=settings["resume"], max_iters=settings["max_iters"], eval_test=settings["eval_test"])
    report = evaluate_model(model, dataset.test, settings["max_iters"])
    summary = {"best_epoch": model.best_epoch, "epochs_run": model.epochs_run, "test": report.summary(),
               "task": params.task.value, "method": method.value, "mode": mode.value}
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return summary


def cmd_train(args) -> int:
    settings = resolve(args, TRAIN_KEYS, TRAIN_DEFAULTS)
    summary = run_training(settings)
    t = summary["test"]
    print(f"best epoch {summary['best_epoch']} of {summary['epochs_run']}; test token {t['token_acc']:.4f} "
          f"seq {t['seq_acc']:.4f} eq {t['eq_acc']:.4f}")
    return EXIT_OK


INFER_KEYS = ["task", "model", "input", "data", "out", "max_iters"]


def cmd_infer(args) -> int:
    settings = resolve(args, INFER_KEYS, {"max_iters": None})
    _require(settings, "model")
    if not os.path.exists(settings["model"]):
        raise dataio.DatasetMissing(f"no such checkpoint: {settings['model']}")
    model = TrainedModel.load(settings["model"])
    if settings.get("task") is not None and _enum(Task, settings["task"], "task") is not model.task:
        raise ConfigError(f"checkpoint was trained on {model.task.value}, not {settings['task']}")
    if settings.get("data"):
        data_dir, split = dataio.resolve_split(settings["data"])
        pairs = dataio.read_pairs(os.path.join(data_dir, f"{split}.jsonl"))
        preds = infer_method(model, [p.src for p in pairs], settings["max_iters"])
        out = settings.get("out")
        fh = open(out, "w", encoding="utf-8", newline="\n") if out else sys.stdout
        try:
            for pred in preds:
                fh.write(detokenize(pred) + "\n")
        finally:
            if out:
                fh.close()
        if out:
            print(f"wrote {len(preds)} predictions to {out}")
        return EXIT_OK

    _require(settings, "input")
    src = tokenize(settings["input"])
    if model.method is Method.RECURRENCE:
        def show(t, tokens, result):
            print(f"step {t}: action {detokenize(tokens)}")
            print(f"        state  {detokenize(result.state)}")

        final = recurrent_infer(model, src, model.task, settings["max_iters"], on_step=show)
    else:
        out = predict(model, src)
        print(f"output {detokenize(out)}")
        final = infer_method(model, [src])[0]
    print(f"final {detokenize(final)}")
    return EXIT_OK


EVAL_KEYS = ["task", "pred", "data", "summary"]


def cmd_eval(args) -> int:
    settings = resolve(args, EVAL_KEYS)
    _require(settings, "pred", "data")
    data_dir, split = dataio.resolve_split(settings["data"])
    pairs = dataio.read_pairs(os.path.join(data_dir, f"{split}.jsonl"))
    task = settings.get("task") or dataio.read_manifest(data_dir)["params"]["task"]
    task = _enum(Task, task, "task")
    if not os.path.exists(settings["pred"]):
        raise dataio.DatasetMissing(f"no such prediction file: {settings['pred']}")
    report = evaluate(settings["pred"], pairs, task)
    print(f"{task.value} {split}: n={report.n} token_acc={report.token_acc:.4f} "
          f"seq_acc={report.seq_acc:.4f} eq_acc={report.eq_acc:.4f}")
    summary_path = settings.get("summary") or settings["pred"] + ".summary.json"
    record = {**report.summary(), "split": split, "pred": settings["pred"]}
    with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(record, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


SWEEP_KEYS = ["axis", "values", "combos", "out"] + GEN_KEYS[:1] + [k for k in TASK_FIELDS if k != "task"] + [
    k for k in TRAIN_KEYS if k not in ("data", "out", "method", "mode", "resume")
]
SWEEP_FIELDS = ["axis", "value", "task", "n", "l", "d", "method", "mode", "status", "best_epoch", "epochs_run",
                "token_acc", "seq_acc", "eq_acc", "error"]


def _parse_combos(text):
    combos = []
    for item in str(text).split(","):
        item = item.strip()
        if not item:
            continue
        method, _, mode = item.partition(":")
        combos.append((_enum(Method, method, "method"), _enum(Mode, mode or "offline", "mode")))
    if not combos:
        raise ConfigError("no method:mode combinations given")
    return combos


def cmd_sweep(args) -> int:
    settings = resolve(args, SWEEP_KEYS, {**TRAIN_DEFAULTS, "combos": "recurrence:online"})
    _require(settings, "axis", "values", "out")
    axis = settings["axis"]
    if axis not in ("n", "l", "d"):
        raise ConfigError(f"axis must be one of n, l, d (got {axis!r})")
    try:
        values = [int(v) for v in str(settings["values"]).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad sweep values {settings['values']!r}") from None
    combos = _parse_combos(settings["combos"])
    out = settings["out"]
    os.makedirs(out, exist_ok=True)
    results_path = os.path.join(out, "results.csv")
    failures = 0
    with open(results_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS, lineterminator="\n")
        writer.writeheader()
        for value in values:
            cell = {**settings, axis: value}
            cell_dir = os.path.join(out, f"{axis}={value}")
            base = {"axis": axis, "value": value}
            try:
                params = task_params_from(cell)
                base.update(task=params.task.value, n=params.n, l=params.l, d=params.d)
                data_dir = os.path.join(cell_dir, "data")
                dataio.write_dataset(GENERATORS[params.task](params), params, data_dir)
            except Exception as exc:  # noqa: BLE001 - recorded per cell
                failures += len(combos)
                for method, mode in combos:
                    writer.writerow({**base, "method": method.value, "mode": mode.value, "status": "failed",
                                     "error": f"{type(exc).__name__}: {exc}"})
                fh.flush()
                continue
            for method, mode in combos:
                row = {**base, "method": method.value, "mode": mode.value}
                run = {k: v for k, v in cell.items() if k in TRAIN_KEYS}
                run.update(data=data_dir, out=os.path.join(cell_dir, f"{method.value}_{mode.value}"),
                           method=method.value, mode=mode.value, resume=False)
                try:
                    summary = run_training(run)
                    t = summary["test"]
                    row.update(status="ok", best_epoch=summary["best_epoch"], epochs_run=summary["epochs_run"],
                               token_acc=t["token_acc"], seq_acc=t["seq_acc"], eq_acc=t["eq_acc"])
                except Exception as exc:  # noqa: BLE001
                    failures += 1
                    logger.debug("cell failed", exc_info=True)
                    row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
                writer.writerow(row)
                fh.flush()
    print(f"wrote {results_path} ({failures} failed cell(s))")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_task_args(p, with_dataset_knobs=True):
    p.add_argument("--task", choices=[t.value for t in Task])
    p.add_argument("--n", type=int, help="integers are drawn from 1..N")
    p.add_argument("--l", type=int, help="integers per equation")
    p.add_argument("--d", type=int, help="number of unique equations")
    if with_dataset_knobs:
        p.add_argument("--max-attempts", dest="max_attempts", type=int)
        p.add_argument("--unary-rate", dest="unary_rate", type=float)
        p.add_argument("--aes-replace-rate", dest="aes_replace_rate", type=float)
        p.add_argument("--aes-unary-rate", dest="aes_unary_rate", type=float)
        p.add_argument("--aec-max-errors", dest="aec_max_errors", type=int)


def _add_train_args(p):
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--eval-test", dest="eval_test", choices=["true", "false"])
    for name in HP_FIELDS:
        conv = CONVERTERS.get(name, str)
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=conv, metavar=name.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="editloop", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"editloop {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a dataset directory")
    p.add_argument("--config")
    _add_task_args(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("trace", help="derive gold action traces for a pairs file")
    p.add_argument("--config")
    p.add_argument("--task", choices=[t.value for t in Task])
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    p.add_argument("--random-order", dest="random_order", action="store_const", const=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("train", help="train a programmer on a dataset directory")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--method", choices=[m.value for m in Method])
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", action="store_const", const=True)
    _add_train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run a trained model on one input or a dataset split")
    p.add_argument("--config")
    p.add_argument("--task", choices=[t.value for t in Task])
    p.add_argument("--model")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--input", help="space-separated source tokens")
    src.add_argument("--data", help="DIR/split to predict, one line per pair")
    p.add_argument("--out", help="prediction file (with --data)")
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score a prediction file against a split")
    p.add_argument("--config")
    p.add_argument("--task", choices=[t.value for t in Task])
    p.add_argument("--pred")
    p.add_argument("--data", help="DIR/test (or DIR/valid, DIR/train)")
    p.add_argument("--summary", help="summary JSON path (default PRED.summary.json)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="gen+train+eval over a grid of N, L or D")
    p.add_argument("--config")
    p.add_argument("--axis", choices=["n", "l", "d"])
    p.add_argument("--values", help="comma-separated axis values")
    p.add_argument("--combos", help="comma-separated method:mode pairs (default recurrence:online)")
    p.add_argument("--out")
    _add_task_args(p)
    p.add_argument("--seed", type=int)
    _add_train_args(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"editloop: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (dataio.DatasetMissing, GenerationExhausted, LengthMismatch, MalformedExpression) as exc:
        print(f"editloop: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteLoss, FloatingPointError) as exc:
        print(f"editloop: training error: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except ValueError as exc:
        if args.verbose:
            traceback.print_exc()
        print(f"editloop: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
