"""Decoder-only transformer language model over the synthetic vocabulary

Row-vector convention: a projection computes ``x @ W`` with ``W`` of shape
``[d_in, d_out]``.  Projections go through :meth:`TransformerLM.project`, which lets
attached adapters (low-rank updates, codebooks) transform the output of any weight
matrix without touching the weight itself.
"""
import copy
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, asdict, fields

import numpy as np

from editlab.errors import ConfigError, ContractError, SequenceLengthError, TrainingError
from editlab.tensor import (Parameter, Adam, no_grad, zero_grads, add, matmul, scale, transpose,
                            softmax_rows, causal_mask, layer_norm, gelu, take_rows, slice_cols,
                            concat_cols, cross_entropy)
from editlab.utils.hashing import sha256_arrays
from editlab.utils.logging import print_log

CHECKPOINT_MAGIC = b"EDLABCK\x00"
CHECKPOINT_VERSION = 1

ATTENTION_MATRICES = ("wq", "wk", "wv", "wo")
FFN_PARAMS = ("w1", "b1", "w2", "b2")


@dataclass
class ModelConfig:
    """architecture hyperparameters

    Parameters
    ----------
    vocab_size: int
    d_model: int, default 64
    n_heads: int, default 4
        must divide d_model
    n_layers: int, default 12
    d_ffn: int, default 256
    max_seq_len: int, default 128
    seed: int, default 0
        seed for weight initialization
    """
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 12
    d_ffn: int = 256
    max_seq_len: int = 128
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise ConfigError(f"ModelConfig.{f.name} must be an integer, got {v!r}")
            if f.name != "seed" and v <= 0:
                raise ConfigError(f"ModelConfig.{f.name} must be positive, got {v}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"n_heads {self.n_heads} does not divide d_model {self.d_model}")

    @property
    def d_head(self):
        return self.d_model // self.n_heads

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown ModelConfig keys {sorted(unknown)}")
        return cls(**d)


def parameter_shapes(config):
    """ordered mapping of parameter id to shape"""
    d, f, V = config.d_model, config.d_ffn, config.vocab_size
    shapes = OrderedDict()
    shapes["embed.tok"] = (V, d)
    shapes["embed.pos"] = (config.max_seq_len, d)
    for i in range(config.n_layers):
        p = f"layer.{i}"
        shapes[f"{p}.ln1.g"] = (d,)
        shapes[f"{p}.ln1.b"] = (d,)
        for w in ATTENTION_MATRICES:
            shapes[f"{p}.attn.{w}"] = (d, d)
        shapes[f"{p}.ln2.g"] = (d,)
        shapes[f"{p}.ln2.b"] = (d,)
        shapes[f"{p}.ffn.w1"] = (d, f)
        shapes[f"{p}.ffn.b1"] = (f,)
        shapes[f"{p}.ffn.w2"] = (f, d)
        shapes[f"{p}.ffn.b2"] = (d,)
    shapes["final_ln.g"] = (d,)
    shapes["final_ln.b"] = (d,)
    shapes["lm_head"] = (d, V)
    return shapes


def layer_index(name):
    """layer number of a parameter id, None for parameters outside the blocks"""
    parts = name.split(".")
    if len(parts) > 1 and parts[0] == "layer":
        return int(parts[1])
    return None


class Snapshot:
    """deep copy of (some of) a model's parameters, tagged with the model config"""

    def __init__(self, config, arrays):
        self.config = dict(config)
        self.arrays = OrderedDict((k, v.copy()) for k, v in arrays.items())

    def names(self):
        return list(self.arrays.keys())


class TransformerLM:
    """pre-norm decoder-only transformer with learned positional embeddings

    Parameters
    ----------
    config: ModelConfig
    vocab: Vocabulary, optional
        needed only for the token-string helpers and to be stored in checkpoints
    """

    def __init__(self, config, vocab=None):
        if vocab is not None and len(vocab) != config.vocab_size:
            raise ConfigError(f"vocabulary has {len(vocab)} tokens, config says {config.vocab_size}")
        self.config = config
        self.vocab = vocab
        self.params = OrderedDict()
        self.adapters = {}
        self.active_edit = None
        self.pending_handle = None

        rng = np.random.default_rng(config.seed)
        for name, shape in parameter_shapes(config).items():
            if name.endswith(".g"):
                data = np.ones(shape)
            elif len(shape) == 1:
                data = np.zeros(shape)
            else:
                data = rng.normal(0.0, 0.02, size=shape)
            self.params[name] = Parameter(name, data)

    # ------------------------------------------------------------------------------
    # computation

    def parameters(self, names=None):
        if names is None:
            return list(self.params.values())
        return [self.params[n] for n in names]

    def attach_adapter(self, matrix_name, adapter):
        if matrix_name not in self.params or self.params[matrix_name].data.ndim != 2:
            raise ContractError(f"cannot attach adapter to {matrix_name!r}, not a weight matrix")
        self.adapters.setdefault(matrix_name, []).append(adapter)

    def detach_adapter(self, matrix_name, adapter):
        attached = self.adapters.get(matrix_name, [])
        self.adapters[matrix_name] = [a for a in attached if a is not adapter]
        if not self.adapters[matrix_name]:
            del self.adapters[matrix_name]

    def project(self, name, x):
        """``x @ params[name]`` followed by every adapter attached to that matrix"""
        y = matmul(x, self.params[name])
        for adapter in self.adapters.get(name, ()):
            y = adapter.apply(x, y)
        return y

    def _attention(self, i, h, mask):
        p = f"layer.{i}.attn"
        q = self.project(f"{p}.wq", h)
        k = self.project(f"{p}.wk", h)
        v = self.project(f"{p}.wv", h)
        dh = self.config.d_head
        heads = []
        for hd in range(self.config.n_heads):
            lo, hi = hd * dh, (hd + 1) * dh
            if self.config.n_heads == 1:
                qh, kh, vh = q, k, v
            else:
                qh, kh, vh = slice_cols(q, lo, hi), slice_cols(k, lo, hi), slice_cols(v, lo, hi)
            scores = scale(matmul(qh, transpose(kh)), 1.0 / np.sqrt(dh))
            heads.append(matmul(softmax_rows(scores, mask), vh))
        a = heads[0] if len(heads) == 1 else concat_cols(heads)
        return self.project(f"{p}.wo", a)

    def _block(self, i, x, mask):
        P = self.params
        p = f"layer.{i}"
        h = layer_norm(x, P[f"{p}.ln1.g"], P[f"{p}.ln1.b"])
        x = add(x, self._attention(i, h, mask))
        h = layer_norm(x, P[f"{p}.ln2.g"], P[f"{p}.ln2.b"])
        f = gelu(add(self.project(f"{p}.ffn.w1", h), P[f"{p}.ffn.b1"]))
        f = add(self.project(f"{p}.ffn.w2", f), P[f"{p}.ffn.b2"])
        return add(x, f)

    def check_tokens(self, tokens):
        tokens = [int(t) for t in tokens]
        if len(tokens) == 0:
            raise ContractError("empty token sequence")
        if len(tokens) > self.config.max_seq_len:
            raise SequenceLengthError(f"sequence of {len(tokens)} tokens exceeds max_seq_len {self.config.max_seq_len}")
        if min(tokens) < 0 or max(tokens) >= self.config.vocab_size:
            raise ContractError(f"token index out of range [0, {self.config.vocab_size})")
        return tokens

    def forward(self, tokens):
        """logits ``[len(tokens), vocab_size]``, row t depends only on tokens[:t+1]"""
        tokens = self.check_tokens(tokens)
        T = len(tokens)
        P = self.params
        x = add(take_rows(P["embed.tok"], tokens), take_rows(P["embed.pos"], range(T)))
        mask = causal_mask(T)
        for i in range(self.config.n_layers):
            x = self._block(i, x, mask)
        x = layer_norm(x, P["final_ln.g"], P["final_ln.b"])
        return self.project("lm_head", x)

    def sequence_loss(self, tokens, targets, mask=None):
        return cross_entropy(self.forward(tokens), targets, mask)

    def greedy_complete(self, prompt, stop_token, max_new):
        """greedy decoding, ties go to the lowest token index

        Returns only generated tokens, including the stop token if it was produced.
        Decoding also ends when the sequence reaches max_seq_len.
        """
        seq = self.check_tokens(prompt)
        out = []
        with no_grad():
            for _ in range(max_new):
                if len(seq) >= self.config.max_seq_len:
                    break
                logits = self.forward(seq).data[-1]
                nxt = int(np.argmax(logits))
                out.append(nxt)
                seq.append(nxt)
                if nxt == stop_token:
                    break
        return out

    def complete_tokens(self, prompt_tokens, max_new=24):
        """greedy completion of a token-string prompt up to the end of the line, end-of-line stripped"""
        if self.vocab is None:
            raise ContractError("complete_tokens needs a model with a vocabulary")
        eol = self.vocab.eol_id
        ids = self.greedy_complete(self.vocab.encode(prompt_tokens), eol, max_new)
        if ids and ids[-1] == eol:
            ids = ids[:-1]
        return self.vocab.decode(ids)

    # ------------------------------------------------------------------------------
    # state

    def snapshot(self, names=None):
        names = list(self.params.keys()) if names is None else list(names)
        return Snapshot(self.config.to_dict(), OrderedDict((n, self.params[n].data) for n in names))

    def restore(self, snap):
        if snap.config != self.config.to_dict():
            raise ConfigError("snapshot was taken from a model with a different configuration")
        for name, arr in snap.arrays.items():
            self.params[name].data[...] = arr

    def checksum(self):
        """sha256 over the configuration and every parameter, adapters excluded"""
        prefix = json.dumps(self.config.to_dict(), sort_keys=True).encode("utf-8")
        return sha256_arrays(((n, p.data) for n, p in self.params.items()), prefix=prefix)

    def clone(self):
        return copy.deepcopy(self)

    def trainable(self, names):
        """context manager making only the named parameters require gradients"""
        return _Trainable(self, names)


class _Trainable:

    def __init__(self, model, names):
        self.model = model
        self.names = set(names)
        unknown = self.names - set(model.params)
        if unknown:
            raise ContractError(f"unknown parameters {sorted(unknown)}")

    def __enter__(self):
        self._prev = {n: p.requires_grad for n, p in self.model.params.items()}
        for n, p in self.model.params.items():
            p.requires_grad = n in self.names
        return self.model

    def __exit__(self, *exc):
        for n, p in self.model.params.items():
            p.requires_grad = self._prev[n]
            p.grad = None
        return False


def train_lm(model, corpus, epochs, lr, batch, seed=0, betas=(0.9, 0.999), eps=1e-8, verbose=False):
    """next-token training of every parameter with Adam

    Parameters
    ----------
    model: TransformerLM
    corpus: list(list(int))
        token index sequences, truncated to max_seq_len + 1
    epochs: int
        passes over the corpus, 0 leaves the model unchanged
    lr: float
    batch: int
        sequences per optimizer step, losses averaged over the batch
    seed: int, default 0
        seed for the per-epoch shuffle
    verbose: bool, default False
        log every epoch

    Returns
    -------
    loss_trace: list(float) mean loss per epoch
    """
    if batch < 1:
        raise ContractError(f"batch must be >= 1, got {batch}")
    seqs = [list(s)[:model.config.max_seq_len + 1] for s in corpus]
    seqs = [s for s in seqs if len(s) >= 2]
    loss_trace = []
    if epochs == 0 or len(seqs) == 0:
        return loss_trace

    rng = np.random.default_rng(seed)
    opt = Adam(model.parameters(), lr, betas=betas, eps=eps)
    for epoch_i in range(epochs):
        order = rng.permutation(len(seqs))
        epoch_loss = 0.0
        for start in range(0, len(order), batch):
            group = [seqs[j] for j in order[start:start + batch]]
            zero_grads(opt.params)
            for s in group:
                loss = scale(model.sequence_loss(s[:-1], s[1:]), 1.0 / len(group))
                loss.backward()
                epoch_loss += loss.item() * len(group)
            if not np.isfinite(epoch_loss):
                raise TrainingError(f"training diverged in epoch {epoch_i}", loss_trace + [epoch_loss])
            opt.step()
        zero_grads(opt.params)
        loss_trace.append(epoch_loss / len(seqs))
        if verbose:
            print_log(f"train_lm epoch {epoch_i} loss {loss_trace[-1]:.5f}")

    return loss_trace


def save_checkpoint(model, path, extra=None):
    """write config, vocabulary and parameters as named little-endian float64 tensors

    Layout: magic, uint32 version, uint64 header length, JSON header, tensor bytes in
    header order.  Bytes depend only on the model state and ``extra``.
    """
    header = {"config": model.config.to_dict(),
              "vocab": model.vocab.to_dict() if model.vocab is not None else None,
              "tensors": [[n, list(p.data.shape)] for n, p in model.params.items()],
              "extra": extra or {}}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fout:
        fout.write(CHECKPOINT_MAGIC)
        fout.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header_bytes)))
        fout.write(header_bytes)
        for p in model.params.values():
            fout.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def read_checkpoint_header(path):
    with open(path, "rb") as fin:
        magic = fin.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path} is not an editlab checkpoint")
        version, header_len = struct.unpack("<IQ", fin.read(12))
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        return json.loads(fin.read(header_len).decode("utf-8")), len(CHECKPOINT_MAGIC) + 12 + header_len


def load_checkpoint(path):
    """inverse of :func:`save_checkpoint`, restores parameters bit for bit"""
    from editlab.bench.vocab import Vocabulary

    header, offset = read_checkpoint_header(path)
    config = ModelConfig.from_dict(header["config"])
    vocab = Vocabulary.from_dict(header["vocab"]) if header["vocab"] is not None else None
    model = TransformerLM(config, vocab)
    expected = parameter_shapes(config)

    with open(path, "rb") as fin:
        fin.seek(offset)
        for name, shape in header["tensors"]:
            if name not in expected or tuple(shape) != expected[name]:
                raise ConfigError(f"{path}: tensor {name} {shape} does not fit the stored config")
            n = int(np.prod(shape))
            buf = fin.read(8 * n)
            if len(buf) != 8 * n:
                raise ConfigError(f"{path}: truncated tensor {name}")
            model.params[name].data[...] = np.frombuffer(buf, dtype="<f8").reshape(shape)

    return model, header.get("extra", {})
