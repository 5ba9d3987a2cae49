"""Vocabulary construction, training with early stopping, and method-level inference."""
import csv
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import model as M
from .actions import ACTION_LENGTH, AEC_OP_TOKENS, DELETE_TAG, DONE_TOKEN, KEEP_TAG, insert_tag, pos_token, realize, sub_tag
from .arith import EQ, LPAREN, OPERATORS, RPAREN, TokenSeq
from .engine import recurrent_infer_batch
from .metrics import EvalReport, score
from .tasks import DatasetSplit, SamplePair, Task, TaskParams, max_seq_len, substream, symbol_inventory
from .trace import Method, Mode, TrainingPair, epoch_refresh

logger = logging.getLogger(__name__)

METRIC_FIELDS = ["epoch", "split", "token_acc", "seq_acc", "eq_acc", "loss", "wall_time_s"]
EVAL_CHUNK = 512


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


def token_inventory(params: TaskParams, method: Method) -> List[str]:
    """Every token a (task, method) dataset can contain on either side."""
    task, method = params.task, Method(method)
    n = params.n
    toks = symbol_inventory(n)
    if task is Task.AES:
        toks += [str(v) for v in range(n + 1, 2 * n + 1)] + [LPAREN, RPAREN]
    if method is Method.RECURRENCE:
        toks += [pos_token(k) for k in range(max_seq_len(params) + 1)] + [DONE_TOKEN]
        if task is Task.AEC:
            toks += list(AEC_OP_TOKENS.values())
    elif method is Method.TAGGING:
        toks += [KEEP_TAG]
        if task is Task.AOR:
            toks += [insert_tag(t) for t in list(OPERATORS) + [EQ]]
        elif task is Task.AES:
            toks += [DELETE_TAG] + [sub_tag(str(v)) for v in range(1, n + 1)]
        else:
            edit = symbol_inventory(n)
            toks += [DELETE_TAG] + [sub_tag(t) for t in edit] + [insert_tag(t) for t in edit]
    return toks


def build_vocab(split: DatasetSplit, params: TaskParams, method: Method) -> M.Vocab:
    """Reserved ids, then tokens by first occurrence in training data, then the rest sorted."""
    seen = {}
    for pair in split.train:
        for tok in pair.src + pair.tgt:
            seen.setdefault(tok, None)
    rest = sorted(set(token_inventory(params, method)) - set(seen))
    return M.Vocab(list(seen) + rest)


# ---------------------------------------------------------------------------
# the programmer and method-level inference
# ---------------------------------------------------------------------------


@dataclass
class TrainedModel:
    params: dict
    vocab: M.Vocab
    hyperparams: M.Hyperparams
    task: Task
    method: Method
    mode: Mode = Mode.OFFLINE
    epochs_run: int = 0
    best_epoch: int = -1
    best_score: float = float("-inf")
    history: List[dict] = field(default_factory=list)

    def meta(self) -> dict:
        return {"task": self.task.value, "method": self.method.value, "mode": self.mode.value}

    def save(self, path, optimizer=None, extra=None):
        M.save_checkpoint(path, self.params, self.vocab, self.hyperparams, {**self.meta(), **(extra or {})}, optimizer)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        ck = M.load_checkpoint(path)
        meta = ck.meta
        return cls(ck.params, ck.vocab, ck.hyperparams, Task(meta["task"]), Method(meta["method"]), Mode(meta["mode"]),
                   epochs_run=meta.get("epochs_run", 0), best_epoch=meta.get("best_epoch", -1),
                   best_score=meta.get("best_score", float("-inf")))

    # --- Programmer interface -------------------------------------------------

    def predict(self, state: Sequence[str]) -> TokenSeq:
        return self.predict_batch([tuple(state)])[0]

    def predict_batch(self, srcs: Sequence[Sequence[str]]) -> List[TokenSeq]:
        return predict_batch(self, srcs)


def _decode_cap(src) -> int:
    return 2 * len(src) + 8


def predict_batch(model: TrainedModel, srcs: Sequence[Sequence[str]]) -> List[TokenSeq]:
    """Greedy outputs: an exact action length for Recurrence, EOS-terminated otherwise."""
    out: List[TokenSeq] = []
    fixed = ACTION_LENGTH[model.task] if model.method is Method.RECURRENCE else None
    for lo in range(0, len(srcs), EVAL_CHUNK):
        chunk = [tuple(s) for s in srcs[lo:lo + EVAL_CHUNK]]
        ids = M.pad_batch([model.vocab.encode(s) for s in chunk])
        cap = max(_decode_cap(s) for s in chunk)
        rows = M.greedy_decode(model.params, ids, cap, fixed)
        for s, row in zip(chunk, rows):
            toks = model.vocab.decode(int(i) for i in row)
            out.append(toks if fixed else toks[:_decode_cap(s)])
    return out


def predict(model: TrainedModel, src: Sequence[str]) -> TokenSeq:
    return predict_batch(model, [src])[0]


def infer_method(model: TrainedModel, srcs: Sequence[Sequence[str]], max_iters: Optional[int] = None) -> List[TokenSeq]:
    """Final edited sequences for each source under the model's method."""
    srcs = [tuple(s) for s in srcs]
    if model.method is Method.END2END:
        return predict_batch(model, srcs)
    if model.method is Method.TAGGING:
        return [realize(tags, s) for tags, s in zip(predict_batch(model, srcs), srcs)]
    return recurrent_infer_batch(lambda states: predict_batch(model, states), srcs, model.task, max_iters)


def evaluate_model(model: TrainedModel, pairs: Sequence[SamplePair], max_iters=None) -> EvalReport:
    preds = infer_method(model, [p.src for p in pairs], max_iters)
    return score(preds, pairs, model.task)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _batches(pairs: Sequence[TrainingPair], vocab: M.Vocab, order, batch_size: int, variable: bool):
    n_batches = max(1, len(order) // batch_size)
    for b in range(n_batches):
        idx = order[b * batch_size:(b + 1) * batch_size]
        src = M.pad_batch([vocab.encode(pairs[i].src) for i in idx])
        tgt = M.pad_batch([vocab.encode(pairs[i].tgt) for i in idx], append_eos=variable)
        yield b, src, tgt


def _write_rows(path, rows):
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        if new:
            writer.writeheader()
        writer.writerows(rows)


def train(
    task_params: TaskParams,
    dataset: DatasetSplit,
    hp: M.Hyperparams,
    method: Method,
    mode: Mode,
    seed: int = 0,
    out_dir: Optional[str] = None,
    resume: bool = False,
    max_iters: Optional[int] = None,
    eval_test: bool = True,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> TrainedModel:
    """Train a programmer and return the best-validation model.

    Every random draw is keyed by (seed, epoch, batch), so a run resumed from
    ``out_dir/last.ckpt`` replays exactly the epochs an uninterrupted run would.
    Stops once the validation primary metric has not improved for
    ``hp.patience`` epochs, or after ``hp.max_epochs``.
    """
    method, mode = Method(method), Mode(mode)
    task = task_params.task
    dtype = np.dtype(hp.dtype)
    vocab = build_vocab(dataset, task_params, method)
    variable = method is not Method.RECURRENCE

    current = TrainedModel(
        M.init_params(len(vocab), hp.d_embedding, hp.d_model, substream(seed, "init"), dtype),
        vocab, hp, task, method, mode,
    )
    opt = M.Adam(current.params, hp.learning_rate, hp.beta1, hp.beta2, hp.adam_eps)
    best_params = {k: v.copy() for k, v in current.params.items()}
    start, since_best = 0, 0
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    last_path = os.path.join(out_dir, "last.ckpt") if out_dir else None
    best_path = os.path.join(out_dir, "best.ckpt") if out_dir else None
    metrics_path = os.path.join(out_dir, "metrics.csv") if out_dir else None
    if resume and last_path and os.path.exists(last_path):
        ck = M.load_checkpoint(last_path)
        current.params, opt = ck.params, ck.optimizer()
        start = ck.meta["epochs_run"]
        since_best = ck.meta["since_best"]
        current.best_epoch = ck.meta["best_epoch"]
        current.best_score = ck.meta["best_score"]
        best_params = M.load_checkpoint(best_path).params
        logger.info("resumed at epoch %d", start)
    elif metrics_path and os.path.exists(metrics_path):
        os.remove(metrics_path)

    static_pairs = None
    t0 = time.perf_counter()
    epoch = start
    while epoch < hp.max_epochs:
        if static_pairs is not None:
            pairs = static_pairs
        else:
            pairs = epoch_refresh(dataset.train, task_params, epoch, method, mode, sample_seed=seed)
            if task is Task.AOR and mode is Mode.OFFLINE:
                static_pairs = pairs
        order = substream(seed, "shuffle", epoch).permutation(len(pairs))
        losses = []
        for b, src, tgt in _batches(pairs, vocab, order, hp.batch_size, variable):
            rng = substream(seed, "step", epoch, b)
            loss, grads = M.loss_and_grads(current.params, src, tgt, hp.teacher_forcing_rate, rng, hp.dropout_rate)
            if not np.isfinite(loss):
                raise M.NonFiniteLoss(f"non-finite loss {loss} at epoch {epoch}, batch {b}")
            M.clip_grads(grads, hp.grad_clip)
            opt.step(current.params, grads)
            losses.append(loss)
        mean_loss = float(np.mean(losses))
        epoch += 1
        wall = time.perf_counter() - t0

        reports = {"valid": evaluate_model(current, dataset.valid, max_iters)}
        if eval_test:
            reports["test"] = evaluate_model(current, dataset.test, max_iters)
        rows = [
            {"epoch": epoch, "split": name, "token_acc": r.token_acc, "seq_acc": r.seq_acc,
             "eq_acc": r.eq_acc, "loss": mean_loss, "wall_time_s": round(wall, 3)}
            for name, r in reports.items()
        ]
        current.history.extend(rows)
        if metrics_path:
            _write_rows(metrics_path, rows)

        score_now = reports["valid"].primary_score
        if score_now > current.best_score:
            current.best_score = score_now
            current.best_epoch = epoch
            since_best = 0
            best_params = {k: v.copy() for k, v in current.params.items()}
            if best_path:
                _snapshot(best_params, current, epoch, since_best).save(best_path)
        else:
            since_best += 1
        current.epochs_run = epoch
        if last_path:
            current.save(last_path, opt, extra=_progress(current, since_best))
        logger.info("epoch %d loss %.4f valid %s", epoch, mean_loss, reports["valid"].primary)
        if on_epoch is not None:
            on_epoch({"epoch": epoch, "loss": mean_loss, **{f"{k}_{m}": getattr(r, m) for k, r in reports.items()
                                                           for m in ("token_acc", "seq_acc", "eq_acc")}})
        if since_best >= hp.patience:
            break

    return _snapshot(best_params, current, current.epochs_run, since_best)


def _progress(model: TrainedModel, since_best: int) -> dict:
    return {"epochs_run": model.epochs_run, "best_epoch": model.best_epoch,
            "best_score": model.best_score, "since_best": since_best}


def _snapshot(params, model: TrainedModel, epochs_run: int, since_best: int) -> TrainedModel:
    snap = TrainedModel(params, model.vocab, model.hyperparams, model.task, model.method, model.mode,
                        epochs_run=epochs_run, best_epoch=model.best_epoch, best_score=model.best_score,
                        history=model.history)
    return snap
