"""Bidirectional LSTM encoder with a Luong ("general") attention decoder.

Everything is plain numpy with hand-written backpropagation; the LSTM cell
itself runs through :mod:`editloop.kernels`.  Arrays are batch-major:
``(batch, time, features)``.
"""
import json
import struct
from dataclasses import asdict, dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .kernels import lstm_backward, lstm_forward

PAD, SOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<sos>", "<eos>", "<unk>")

_NEG = -1e30


class ShapeMismatch(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


class Vocab:
    def __init__(self, tokens: Iterable[str]):
        self.tokens = list(RESERVED)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        for t in tokens:
            if t not in self.index:
                self.index[t] = len(self.tokens)
                self.tokens.append(t)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, tok):
        return tok in self.index

    def encode(self, seq: Sequence[str]) -> List[int]:
        return [self.index.get(t, UNK) for t in seq]

    def decode(self, ids: Iterable[int]) -> tuple:
        return tuple(self.tokens[i] for i in ids)


@dataclass(frozen=True)
class Hyperparams:
    d_model: int = 512
    d_embedding: int = 512
    n_layers: int = 1
    learning_rate: float = 1e-5
    teacher_forcing_rate: float = 0.5
    dropout_rate: float = 0.5
    batch_size: int = 256
    patience: int = 512
    grad_clip: float = 5.0
    max_epochs: int = 100_000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("teacher_forcing_rate", "dropout_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if min(self.d_model, self.d_embedding, self.batch_size) < 1:
            raise ValueError("dimensions and batch size must be positive")
        if self.n_layers != 1:
            raise ValueError("only single-layer encoder/decoder is implemented")
        if self.dropout_rate >= 1.0:
            raise ValueError("dropout_rate must be < 1")

    def with_(self, **kw) -> "Hyperparams":
        return replace(self, **kw)


PAPER_PROFILE = Hyperparams()
DESK_PROFILE = Hyperparams(
    d_model=64, d_embedding=64, learning_rate=1e-3, batch_size=64, patience=32, dropout_rate=0.1, max_epochs=300
)
PROFILES = {"paper": PAPER_PROFILE, "desk": DESK_PROFILE}


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def param_shapes(vocab_size: int, d_emb: int, d_hid: int) -> Dict[str, tuple]:
    """Shape and init fan-in of every tensor.

    An embedding row is selected by a one-hot input, so each of its units sees
    exactly one active input; its fan-in is 1.
    """
    V, E, H = vocab_size, d_emb, d_hid
    return {
        "embedding": ((V, E), 1),
        "enc_fwd_wx": ((E, 4 * H), E),
        "enc_fwd_wh": ((H, 4 * H), H),
        "enc_fwd_b": ((4 * H,), H),
        "enc_bwd_wx": ((E, 4 * H), E),
        "enc_bwd_wh": ((H, 4 * H), H),
        "enc_bwd_b": ((4 * H,), H),
        "bridge_h_w": ((2 * H, H), 2 * H),
        "bridge_h_b": ((H,), 2 * H),
        "bridge_c_w": ((2 * H, H), 2 * H),
        "bridge_c_b": ((H,), 2 * H),
        "dec_wx": ((E, 4 * H), E),
        "dec_wh": ((H, 4 * H), H),
        "dec_b": ((4 * H,), H),
        "attn_w": ((H, 2 * H), H),
        "combine_w": ((3 * H, H), 3 * H),
        "combine_b": ((H,), 3 * H),
        "out_w": ((H, V), H),
        "out_b": ((V,), H),
    }


def init_params(vocab_size: int, d_emb: int, d_hid: int, rng: np.random.Generator, dtype="float32"):
    """Uniform init in [-sqrt(1/fan_in), sqrt(1/fan_in)] for every tensor."""
    params = {}
    for name, (shape, fan_in) in param_shapes(vocab_size, d_emb, d_hid).items():
        bound = np.sqrt(1.0 / fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


def init_bound(name: str, params) -> float:
    V, E = params["embedding"].shape
    H = params["dec_wh"].shape[0]
    return float(np.sqrt(1.0 / param_shapes(V, E, H)[name][1]))


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def pad_batch(seqs: Sequence[Sequence[int]], append_eos: bool = False, min_len: int = 1):
    """Pad id sequences into a ``(B, T)`` int array plus a float mask."""
    rows = [list(s) + ([EOS] if append_eos else []) for s in seqs]
    width = max([min_len] + [len(r) for r in rows])
    ids = np.full((len(rows), width), PAD, dtype=np.int64)
    for b, r in enumerate(rows):
        ids[b, :len(r)] = r
    return ids


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _dropout_mask(rng, shape, rate, dtype):
    if rate <= 0.0 or rng is None:
        return None
    keep = 1.0 - rate
    return (rng.random(shape) < keep).astype(dtype) / dtype.type(keep)


def _run_lstm(zx, mask, wh, reverse, dtype):
    bsz, steps, four_h = zx.shape
    hid = four_h // 4
    h = np.zeros((bsz, hid), dtype=dtype)
    c = np.zeros((bsz, hid), dtype=dtype)
    outs = np.zeros((bsz, steps, hid), dtype=dtype)
    cache = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        z = zx[:, t] + h @ wh
        gates, c_new, tanh_c, h_new = lstm_forward(z, c)
        m = mask[:, t:t + 1]
        cache[t] = (h, c, gates, tanh_c, m)
        h = m * h_new + (1 - m) * h
        c = m * c_new + (1 - m) * c
        outs[:, t] = h
    return outs, h, c, cache


def _backprop_lstm(d_outs, dh, dc, cache, wh, reverse):
    bsz, steps, hid = d_outs.shape
    dzx = np.zeros((bsz, steps, 4 * hid), dtype=d_outs.dtype)
    dwh = np.zeros_like(wh)
    order = range(steps) if reverse else range(steps - 1, -1, -1)
    for t in order:
        h_prev, c_prev, gates, tanh_c, m = cache[t]
        dh_tot = dh + d_outs[:, t]
        dz, dc_cell = lstm_backward(m * dh_tot, m * dc, gates, c_prev, tanh_c)
        dzx[:, t] = dz
        dwh += h_prev.T @ dz
        dh = dz @ wh.T + (1 - m) * dh_tot
        dc = dc_cell + (1 - m) * dc
    return dzx, dwh


def encode(params, src, rng=None, dropout_rate=0.0):
    """Run the bidirectional encoder; returns (memory, init_h, init_c, cache)."""
    dtype = params["embedding"].dtype
    mask = (src != PAD).astype(dtype)
    x = params["embedding"][src]
    drop = _dropout_mask(rng, x.shape, dropout_rate, dtype)
    xd = x if drop is None else x * drop
    zf = xd @ params["enc_fwd_wx"] + params["enc_fwd_b"]
    zb = xd @ params["enc_bwd_wx"] + params["enc_bwd_b"]
    out_f, hf, cf, cache_f = _run_lstm(zf, mask, params["enc_fwd_wh"], False, dtype)
    out_b, hb, cb, cache_b = _run_lstm(zb, mask, params["enc_bwd_wh"], True, dtype)
    memory = np.concatenate([out_f, out_b], axis=2)
    hcat = np.concatenate([hf, hb], axis=1)
    ccat = np.concatenate([cf, cb], axis=1)
    h0 = np.tanh(hcat @ params["bridge_h_w"] + params["bridge_h_b"])
    c0 = ccat @ params["bridge_c_w"] + params["bridge_c_b"]
    cache = dict(src=src, mask=mask, xd=xd, drop=drop, cache_f=cache_f, cache_b=cache_b, hcat=hcat, ccat=ccat, h0=h0)
    return memory, h0, c0, cache


def _decoder_step(params, inp, h, c, memory, mask, drop_x=None, drop_o=None):
    x = params["embedding"][inp]
    if drop_x is not None:
        x = x * drop_x
    z = x @ params["dec_wx"] + h @ params["dec_wh"] + params["dec_b"]
    gates, c_new, tanh_c, h_new = lstm_forward(z, c)
    q = h_new @ params["attn_w"]
    scores = np.einsum("bsk,bk->bs", memory, q)
    scores = np.where(mask > 0, scores, _NEG)
    scores = scores - scores.max(axis=1, keepdims=True)
    alpha = np.exp(scores)
    alpha /= alpha.sum(axis=1, keepdims=True)
    ctx = np.einsum("bs,bsk->bk", alpha, memory)
    u = np.concatenate([ctx, h_new], axis=1)
    att = np.tanh(u @ params["combine_w"] + params["combine_b"])
    att_d = att if drop_o is None else att * drop_o
    logits = att_d @ params["out_w"] + params["out_b"]
    step = dict(inp=inp, x=x, drop_x=drop_x, h=h, c=c, gates=gates, tanh_c=tanh_c, h_new=h_new,
                q=q, alpha=alpha, u=u, att=att, att_d=att_d, drop_o=drop_o)
    return logits, h_new, c_new, step


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def forward(params, src, tgt, teacher_forcing_rate=1.0, rng=None, dropout_rate=0.0):
    """Teacher-forced (with probability ``teacher_forcing_rate``) decoding pass.

    ``src`` and ``tgt`` are padded id arrays; PAD targets are masked out of
    the mean cross-entropy.  Returns ``(logits, loss, cache)``; pass the cache
    to :func:`backward`.  ``rng`` is only consulted for dropout and for
    teacher-forcing coin flips when the rate is below one.
    """
    src = np.asarray(src)
    tgt = np.asarray(tgt)
    if src.ndim != 2 or tgt.ndim != 2 or src.shape[0] != tgt.shape[0]:
        raise ShapeMismatch(f"src {src.shape} and tgt {tgt.shape} must be (B, S) and (B, T)")
    dtype = params["embedding"].dtype
    memory, h, c, enc_cache = encode(params, src, rng, dropout_rate)
    mask = enc_cache["mask"]
    bsz, steps = tgt.shape
    E = params["embedding"].shape[1]
    H = params["dec_wh"].shape[0]
    tgt_mask = (tgt != PAD).astype(dtype)
    count = max(tgt_mask.sum(), 1.0)
    logits_all = np.zeros((bsz, steps, params["out_w"].shape[1]), dtype=dtype)
    steps_cache = []
    inp = np.full(bsz, SOS, dtype=np.int64)
    loss = 0.0
    for t in range(steps):
        drop_x = _dropout_mask(rng, (bsz, E), dropout_rate, dtype)
        drop_o = _dropout_mask(rng, (bsz, H), dropout_rate, dtype)
        logits, h, c, step = _decoder_step(params, inp, h, c, memory, mask, drop_x, drop_o)
        logits_all[:, t] = logits
        logp = _log_softmax(logits)
        loss -= float((logp[np.arange(bsz), tgt[:, t]] * tgt_mask[:, t]).sum())
        step["probs"] = np.exp(logp)
        steps_cache.append(step)
        if teacher_forcing_rate >= 1.0:
            inp = tgt[:, t]
        else:
            forced = rng.random(bsz) < teacher_forcing_rate
            inp = np.where(forced, tgt[:, t], logits.argmax(axis=1))
    loss /= float(count)
    cache = dict(enc=enc_cache, memory=memory, steps=steps_cache, tgt=tgt, tgt_mask=tgt_mask, count=count)
    return logits_all, loss, cache


def backward(params, cache) -> Dict[str, np.ndarray]:
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    enc = cache["enc"]
    memory = cache["memory"]
    tgt, tgt_mask, count = cache["tgt"], cache["tgt_mask"], cache["count"]
    bsz = tgt.shape[0]
    H = params["dec_wh"].shape[0]
    d_memory = np.zeros_like(memory)
    dh = np.zeros((bsz, H), dtype=memory.dtype)
    dc = np.zeros_like(dh)
    rows = np.arange(bsz)
    for t in range(len(cache["steps"]) - 1, -1, -1):
        s = cache["steps"][t]
        dlogits = s["probs"].copy()
        dlogits[rows, tgt[:, t]] -= 1.0
        dlogits *= (tgt_mask[:, t] / count)[:, None]
        grads["out_w"] += s["att_d"].T @ dlogits
        grads["out_b"] += dlogits.sum(axis=0)
        datt = dlogits @ params["out_w"].T
        if s["drop_o"] is not None:
            datt *= s["drop_o"]
        dpre = datt * (1.0 - s["att"] ** 2)
        grads["combine_w"] += s["u"].T @ dpre
        grads["combine_b"] += dpre.sum(axis=0)
        du = dpre @ params["combine_w"].T
        dctx, dh_att = du[:, :2 * H], du[:, 2 * H:]
        alpha = s["alpha"]
        dalpha = np.einsum("bk,bsk->bs", dctx, memory)
        d_memory += alpha[:, :, None] * dctx[:, None, :]
        dscores = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
        dq = np.einsum("bs,bsk->bk", dscores, memory)
        d_memory += dscores[:, :, None] * s["q"][:, None, :]
        grads["attn_w"] += s["h_new"].T @ dq
        dh_tot = dh + dh_att + dq @ params["attn_w"].T
        dz, dc = lstm_backward(dh_tot, dc, s["gates"], s["c"], s["tanh_c"])
        grads["dec_wx"] += s["x"].T @ dz
        grads["dec_wh"] += s["h"].T @ dz
        grads["dec_b"] += dz.sum(axis=0)
        dx = dz @ params["dec_wx"].T
        if s["drop_x"] is not None:
            dx *= s["drop_x"]
        np.add.at(grads["embedding"], s["inp"], dx)
        dh = dz @ params["dec_wh"].T
    # bridge
    da = dh * (1.0 - enc["h0"] ** 2)
    grads["bridge_h_w"] += enc["hcat"].T @ da
    grads["bridge_h_b"] += da.sum(axis=0)
    dhcat = da @ params["bridge_h_w"].T
    grads["bridge_c_w"] += enc["ccat"].T @ dc
    grads["bridge_c_b"] += dc.sum(axis=0)
    dccat = dc @ params["bridge_c_w"].T
    # encoder
    xd = enc["xd"]
    E = xd.shape[2]
    dxd = np.zeros_like(xd)
    for name, sl, reverse, cache_dir in (
        ("enc_fwd", slice(0, H), False, enc["cache_f"]),
        ("enc_bwd", slice(H, 2 * H), True, enc["cache_b"]),
    ):
        dzx, dwh = _backprop_lstm(d_memory[:, :, sl], dhcat[:, sl], dccat[:, sl], cache_dir, params[name + "_wh"], reverse)
        grads[name + "_wh"] += dwh
        grads[name + "_wx"] += xd.reshape(-1, E).T @ dzx.reshape(-1, 4 * H)
        grads[name + "_b"] += dzx.sum(axis=(0, 1))
        dxd += dzx @ params[name + "_wx"].T
    if enc["drop"] is not None:
        dxd *= enc["drop"]
    np.add.at(grads["embedding"], enc["src"].reshape(-1), dxd.reshape(-1, E))
    return grads


def loss_and_grads(params, src, tgt, teacher_forcing_rate=1.0, rng=None, dropout_rate=0.0):
    _, loss, cache = forward(params, src, tgt, teacher_forcing_rate, rng, dropout_rate)
    return loss, backward(params, cache)


def greedy_decode(params, src, max_len: int, fixed_len: Optional[int] = None) -> List[List[int]]:
    """Greedy decoding without dropout.

    With ``fixed_len`` every output has exactly that many tokens; otherwise
    decoding runs until EOS (not included in the output) or ``max_len``.
    """
    memory, h, c, enc_cache = encode(params, np.asarray(src))
    mask = enc_cache["mask"]
    bsz = memory.shape[0]
    steps = fixed_len if fixed_len is not None else max_len
    out = np.zeros((bsz, steps), dtype=np.int64)
    inp = np.full(bsz, SOS, dtype=np.int64)
    finished = np.zeros(bsz, dtype=bool)
    for t in range(steps):
        logits, h, c, _ = _decoder_step(params, inp, h, c, memory, mask)
        inp = logits.argmax(axis=1)
        out[:, t] = inp
        if fixed_len is None:
            finished |= inp == EOS
            if finished.all():
                out = out[:, :t + 1]
                break
    if fixed_len is not None:
        return [list(row) for row in out]
    result = []
    for row in out:
        row = list(row)
        result.append(row[:row.index(EOS)] if EOS in row else row)
    return result


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))


def clip_grads(grads, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= g.dtype.type(scale)
    return norm


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.step_count += 1
        t = self.step_count
        corr1 = 1.0 - self.beta1 ** t
        corr2 = 1.0 - self.beta2 ** t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (self.lr / corr1) * m / (np.sqrt(v / corr2) + self.eps)
            params[k] -= update.astype(params[k].dtype)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"EDLPCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params, vocab: Vocab, hp: Hyperparams, meta: dict = None, optimizer: Adam = None):
    """Write a self-describing binary checkpoint.

    Layout: magic, u32 version, u64 header length, JSON header, then each
    tensor's raw little-endian row-major bytes in header order.
    """
    tensors = [(k, v) for k, v in params.items()]
    if optimizer is not None:
        tensors += [("adam_m/" + k, v) for k, v in optimizer.m.items()]
        tensors += [("adam_v/" + k, v) for k, v in optimizer.v.items()]
    index = []
    offset = 0
    blobs = []
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = le.tobytes(order="C")
        index.append({"name": name, "dtype": arr.dtype.str.lstrip("<>|="), "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "version": CHECKPOINT_VERSION,
        "vocab": vocab.tokens,
        "hyperparams": asdict(hp),
        "meta": meta or {},
        "tensors": index,
        "adam_step": optimizer.step_count if optimizer is not None else None,
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    vocab: Vocab
    hyperparams: Hyperparams
    meta: dict
    adam_m: Dict[str, np.ndarray]
    adam_v: Dict[str, np.ndarray]
    adam_step: Optional[int]

    def optimizer(self) -> Adam:
        hp = self.hyperparams
        opt = Adam(self.params, hp.learning_rate, hp.beta1, hp.beta2, hp.adam_eps)
        if self.adam_step is not None:
            opt.m, opt.v, opt.step_count = self.adam_m, self.adam_v, self.adam_step
        return opt


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(data[20:20 + hlen])
    base = 20 + hlen
    params, adam_m, adam_v = {}, {}, {}
    for entry in header["tensors"]:
        dt = np.dtype(entry["dtype"]).newbyteorder("<")
        start = base + entry["offset"]
        arr = np.frombuffer(data[start:start + entry["nbytes"]], dtype=dt).reshape(entry["shape"])
        arr = arr.astype(dt.newbyteorder("="))
        name = entry["name"]
        if name.startswith("adam_m/"):
            adam_m[name[7:]] = arr
        elif name.startswith("adam_v/"):
            adam_v[name[7:]] = arr
        else:
            params[name] = arr
    vocab = Vocab(header["vocab"][len(RESERVED):])
    return Checkpoint(params, vocab, Hyperparams(**header["hyperparams"]), header["meta"],
                      adam_m, adam_v, header["adam_step"])
