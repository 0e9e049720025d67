"""Toy encoder-decoder used as both the captioner and the molecule generator.

Encoder layers mix each token with its left/right neighbours, then apply a
feed-forward block; decoder layers use causal prefix averaging, a single-head
cross-attention over the encoder output, and a feed-forward block.  Every
layer can carry one adapter hook that sees the layer input and the plain
layer output and returns the output to use instead.
"""

from __future__ import annotations

import contextlib
import copy
import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from . import numerics as nx
from .expertise import ExpertiseSegmentation
from .numerics import Tensor, no_grad

log = logging.getLogger(__name__)

END, START, PAD, UNK = 0, 1, 2, 3
SPECIALS = ("<end>", "<start>", "<pad>", "<unk>")


class TokenOutOfVocab(ValueError):
    pass


class SiteOccupied(ValueError):
    pass


class SiteOutOfRange(ValueError):
    pass


class EmptyCorpus(ValueError):
    pass


class Vocab:
    """Token list where line number (0-based) is the id."""

    def __init__(self, tokens: Iterable[str]):
        toks = list(tokens)
        if tuple(toks[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        self.tokens = toks
        self.index = {t: i for i, t in enumerate(toks)}

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]]) -> Vocab:
        seen = dict.fromkeys(SPECIALS)
        for seq in sequences:
            seen.update(dict.fromkeys(seq))
        return cls(seen)

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, seq: Sequence[str]) -> list[int]:
        return [self.index.get(t, UNK) for t in seq]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Vocab:
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


@dataclass
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    d_model: int = 64
    n_enc_layers: int = 4
    n_dec_layers: int = 4
    ffn: int = 128
    max_len: int = 64
    seed: int = 0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if k != "seed" and v <= 0:
                raise ValueError(f"ModelConfig.{k} must be positive, got {v}")


@dataclass
class HookContext:
    segmentation: ExpertiseSegmentation | None = None
    training: bool = False
    rng: np.random.Generator | None = None
    trace: list | None = None  # adapters append routing records here when given


class LayerHook(Protocol):
    active: bool

    def __call__(self, z_prev: Tensor, base_out: Tensor, ctx: HookContext) -> Tensor: ...


@dataclass
class LayerActivations:
    encoder: list[Tensor] = field(default_factory=list)  # [input, layer 1, ..., layer L]
    decoder: list[Tensor] = field(default_factory=list)

    @property
    def final(self) -> Tensor:
        return self.encoder[-1]


def sinusoid(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class Model:
    def __init__(self, config: ModelConfig):
        self.config = config
        c = config
        rng = np.random.default_rng(c.seed)
        d, f = c.d_model, c.ffn
        self.params: dict[str, Tensor] = {}

        def p(name: str, *shape: int, std: float | None = None, value: float | None = None):
            if value is not None:
                arr = np.full(shape, value)
            else:
                arr = rng.normal(0.0, std if std is not None else 1.0 / math.sqrt(shape[0]), shape)
            self.params[name] = Tensor(arr, requires_grad=True, name=name)

        p("src_emb", c.src_vocab, d, std=1.0)
        p("tgt_emb", c.tgt_vocab, d, std=1.0)
        for l in range(1, c.n_enc_layers + 1):
            pre = f"enc{l}."
            for w in ("mix", "prev", "next"):
                p(pre + w, d, d)
            p(pre + "mix_b", d, value=0.0)
            p(pre + "ffn_w1", d, f)
            p(pre + "ffn_b1", f, value=0.0)
            p(pre + "ffn_w2", f, d)
            p(pre + "ffn_b2", d, value=0.0)
            for ln in ("ln1", "ln2"):
                p(pre + ln + "_g", d, value=1.0)
                p(pre + ln + "_b", d, value=0.0)
        for l in range(1, c.n_dec_layers + 1):
            pre = f"dec{l}."
            for w in ("causal", "self", "q", "k", "v", "o"):
                p(pre + w, d, d)
            p(pre + "self_b", d, value=0.0)
            p(pre + "ffn_w1", d, f)
            p(pre + "ffn_b1", f, value=0.0)
            p(pre + "ffn_w2", f, d)
            p(pre + "ffn_b2", d, value=0.0)
            for ln in ("ln1", "ln2", "ln3"):
                p(pre + ln + "_g", d, value=1.0)
                p(pre + ln + "_b", d, value=0.0)
        for ln in ("enc_ln", "dec_ln"):
            p(ln + "_g", d, value=1.0)
            p(ln + "_b", d, value=0.0)
        p("out_w", d, c.tgt_vocab, std=0.02)
        p("out_b", c.tgt_vocab, value=0.0)

        self.pos = sinusoid(c.max_len, d)
        self.wraps: dict[tuple[str, int], LayerHook] = {}
        self._shift_cache: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    # ------------------------------------------------------------------
    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def backbone_checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(self.params[name].data.tobytes())
        return h.hexdigest()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, t in self.params.items():
            if state[k].shape != t.data.shape:
                raise nx.ShapeMismatch(f"load {k}", state[k].shape, t.data.shape)
            t.data = np.array(state[k], dtype=np.float64)

    def copy(self) -> Model:
        """Deep copy of the backbone (wraps are not copied)."""
        wraps, self.wraps = self.wraps, {}
        try:
            dup = copy.deepcopy(self)
        finally:
            self.wraps = wraps
        return dup

    def _mixers(self, n: int):
        if n not in self._shift_cache:
            prev = np.eye(n, k=-1)  # row i picks token i-1
            nxt = np.eye(n, k=1)
            causal = np.tril(np.ones((n, n))) / np.arange(1, n + 1)[:, None]
            self._shift_cache[n] = (prev, nxt, causal)
        return self._shift_cache[n]

    def _hook(self, side: str, l: int, hooks_active: bool, z_prev: Tensor, out: Tensor, ctx: HookContext) -> Tensor:
        hook = self.wraps.get((side, l))
        if hook is None or not hooks_active or not hook.active:
            return out
        return hook(z_prev, out, ctx)

    # ------------------------------------------------------------------
    def encoder_layer(self, l: int, x: Tensor) -> Tensor:
        P = self.params
        pre = f"enc{l}."
        prev, nxt, _ = self._mixers(x.shape[0])
        u = nx.layer_norm(x, P[pre + "ln1_g"], P[pre + "ln1_b"])
        mixed = nx.add(
            nx.add(nx.add(u @ P[pre + "mix"], nx.matmul(prev, u) @ P[pre + "prev"]), nx.matmul(nxt, u) @ P[pre + "next"]),
            P[pre + "mix_b"],
        )
        h = nx.add(x, nx.relu(mixed))
        return nx.add(h, self._ffn(pre, nx.layer_norm(h, P[pre + "ln2_g"], P[pre + "ln2_b"])))

    def _ffn(self, pre: str, h: Tensor) -> Tensor:
        P = self.params
        inner = nx.relu(nx.add(h @ P[pre + "ffn_w1"], P[pre + "ffn_b1"]))
        return nx.add(inner @ P[pre + "ffn_w2"], P[pre + "ffn_b2"])

    def memory(self, enc_final: Tensor) -> Tensor:
        return nx.layer_norm(enc_final, self.params["enc_ln_g"], self.params["enc_ln_b"])

    def decoder_layer(self, l: int, x: Tensor, memory: Tensor) -> Tensor:
        P = self.params
        pre = f"dec{l}."
        _, _, causal = self._mixers(x.shape[0])
        u = nx.layer_norm(x, P[pre + "ln1_g"], P[pre + "ln1_b"])
        mixed = nx.add(nx.add(nx.matmul(causal, u @ P[pre + "causal"]), u @ P[pre + "self"]), P[pre + "self_b"])
        h1 = nx.add(x, nx.relu(mixed))
        u = nx.layer_norm(h1, P[pre + "ln2_g"], P[pre + "ln2_b"])
        q = u @ P[pre + "q"]
        k = memory @ P[pre + "k"]
        v = memory @ P[pre + "v"]
        att = nx.softmax(nx.scale(q @ nx.transpose(k), 1.0 / math.sqrt(self.config.d_model)), axis=1)
        h2 = nx.add(h1, (att @ v) @ P[pre + "o"])
        return nx.add(h2, self._ffn(pre, nx.layer_norm(h2, P[pre + "ln3_g"], P[pre + "ln3_b"])))

    def embed(self, table: str, ids: Sequence[int]) -> Tensor:
        vocab = self.params[table].shape[0]
        bad = [i for i in ids if not 0 <= i < vocab]
        if bad:
            raise TokenOutOfVocab(f"token ids {bad} outside vocabulary of size {vocab}")
        if len(ids) > self.config.max_len:
            raise ValueError(f"sequence length {len(ids)} exceeds max_len {self.config.max_len}")
        return nx.add(nx.embedding_lookup(self.params[table], ids), self.pos[: len(ids)])


def encode(
    m: Model,
    src: Sequence[int],
    hooks_active: bool = False,
    ctx: HookContext | None = None,
) -> LayerActivations:
    ctx = ctx or HookContext()
    z = m.embed("src_emb", src)
    acts = LayerActivations(encoder=[z])
    for l in range(1, m.config.n_enc_layers + 1):
        out = m.encoder_layer(l, z)
        z = m._hook("encoder", l, hooks_active, z, out, ctx)
        acts.encoder.append(z)
    return acts


def decode_states(
    m: Model,
    enc: LayerActivations,
    tgt_in: Sequence[int],
    hooks_active: bool = False,
    ctx: HookContext | None = None,
) -> Tensor:
    """Teacher-forced decoder pass; returns logits (len(tgt_in) x vocab)."""
    ctx = ctx or HookContext()
    z = m.embed("tgt_emb", tgt_in)
    enc.decoder = [z]
    memory = m.memory(enc.final)
    for l in range(1, m.config.n_dec_layers + 1):
        out = m.decoder_layer(l, z, memory)
        z = m._hook("decoder", l, hooks_active, z, out, ctx)
        enc.decoder.append(z)
    z = nx.layer_norm(z, m.params["dec_ln_g"], m.params["dec_ln_b"])
    return nx.add(z @ m.params["out_w"], m.params["out_b"])


LogitsFn = Callable[[list[int]], np.ndarray]


def greedy(next_logits: LogitsFn, max_len: int) -> list[int]:
    """Greedy search over a function mapping a prefix to next-token logits."""
    out: list[int] = []
    for _ in range(max_len):
        logits = next_logits(out)
        tok = int(np.argmax(logits))  # first maximum, i.e. lowest id on ties
        if tok == END:
            break
        out.append(tok)
    return out


def decode_greedy(
    m: Model,
    enc: LayerActivations,
    max_len: int | None = None,
    hooks_active: bool = False,
    ctx: HookContext | None = None,
) -> list[int]:
    max_len = m.config.max_len - 1 if max_len is None else min(max_len, m.config.max_len - 1)

    def step(prefix: list[int]) -> np.ndarray:
        with no_grad():
            logits = decode_states(m, enc, [START] + prefix, hooks_active, ctx)
        return logits.data[-1]

    return greedy(step, max_len)


def generate(m: Model, src: Sequence[int], hooks_active: bool = False, ctx: HookContext | None = None, max_len: int | None = None) -> list[int]:
    with no_grad():
        enc = encode(m, src, hooks_active, ctx)
    return decode_greedy(m, enc, max_len, hooks_active, ctx)


def sequence_loss(
    m: Model,
    src: Sequence[int],
    tgt: Sequence[int],
    hooks_active: bool = False,
    ctx: HookContext | None = None,
) -> Tensor:
    enc = encode(m, src, hooks_active, ctx)
    logits = decode_states(m, enc, [START, *tgt], hooks_active, ctx)
    return nx.cross_entropy(logits, [*tgt, END])


def token_accuracy(m: Model, src: Sequence[int], tgt: Sequence[int]) -> float:
    """Teacher-forced argmax accuracy over ``tgt + [END]``."""
    with no_grad():
        enc = encode(m, src)
        logits = decode_states(m, enc, [START, *tgt])
    gold = np.array([*tgt, END])
    return float(np.mean(np.argmax(logits.data, axis=1) == gold))


ParamFilter = Callable[[str], bool]


def select(m: Model, trainable: ParamFilter | None) -> list[Tensor]:
    if trainable is None:
        return list(m.params.values())
    return [t for k, t in m.params.items() if trainable(k)]


def train_step(
    m: Model,
    src: Sequence[int],
    tgt: Sequence[int],
    trainable: ParamFilter | None = None,
    optimizer: nx.Adam | None = None,
    lr: float = 1e-3,
) -> float:
    """One teacher-forced step; returns the loss before the update.

    Only parameters passing ``trainable`` are updated.  Pass a persistent
    ``optimizer`` (built over ``select(m, trainable)``) to keep Adam moments
    across steps.
    """
    params = select(m, trainable)
    if optimizer is None:
        optimizer = nx.Adam(params, lr=lr)
    with frozen_except(m, params):
        loss = sequence_loss(m, src, tgt)
        nx.backward(loss)
        if params:
            optimizer.step()
        for t in params:
            t.grad = None
    return float(loss.data)


@contextlib.contextmanager
def frozen_except(m: Model, params: Iterable[Tensor]):
    """Temporarily stop recording gradients for every model parameter not in ``params``."""
    keep = {id(t) for t in params}
    saved = {k: t.requires_grad for k, t in m.params.items()}
    for t in m.params.values():
        t.requires_grad = id(t) in keep
        t.grad = None
    try:
        yield
    finally:
        for k, t in m.params.items():
            t.requires_grad = saved[k]


@dataclass
class PretrainResult:
    model: Model
    losses: list[float]


def pretrain(
    m: Model,
    corpus: Sequence[tuple[Sequence[int], Sequence[int]]],
    epochs: int,
    lr: float = 3e-3,
    seed: int = 0,
    checkpoint: str | Path | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> PretrainResult:
    if not corpus:
        raise EmptyCorpus("pretraining corpus is empty")
    rng = np.random.default_rng(seed)
    opt = nx.Adam(list(m.params.values()), lr=lr)
    losses = []
    n_steps = max(1, epochs * len(corpus))
    step = 0
    for epoch in range(epochs):
        total = 0.0
        for i in rng.permutation(len(corpus)):
            # cosine decay to zero over the whole run
            opt.state.lr = lr * 0.5 * (1.0 + math.cos(math.pi * step / n_steps))
            step += 1
            src, tgt = corpus[i]
            total += train_step(m, src, tgt, optimizer=opt)
        losses.append(total / len(corpus))
        log.info("epoch %d loss %.4f", epoch + 1, losses[-1])
        if on_epoch:
            on_epoch(epoch + 1, losses[-1])
    if checkpoint is not None:
        save_model(m, checkpoint)
    return PretrainResult(m, losses)


def install_wrap(m: Model, side: str, layer: int, hook: LayerHook) -> None:
    depth = {"encoder": m.config.n_enc_layers, "decoder": m.config.n_dec_layers}.get(side)
    if depth is None:
        raise SiteOutOfRange(f"unknown side {side!r}")
    if not 1 <= layer <= depth:
        raise SiteOutOfRange(f"{side} layer {layer} outside 1..{depth}")
    if (side, layer) in m.wraps:
        raise SiteOccupied(f"{side} layer {layer} already wrapped")
    m.wraps[(side, layer)] = hook


def remove_wraps(m: Model) -> None:
    m.wraps.clear()


def proportional_site(layer: int, depth: int, toy_depth: int) -> int:
    """Map a layer index of a ``depth``-layer network onto a shallower one."""
    return min(toy_depth, max(1, round(layer / depth * toy_depth)))


def save_model(m: Model, path: str | Path) -> None:
    nx.save_checkpoint(path, m.state_dict())


def load_model(path: str | Path, config: ModelConfig) -> Model:
    m = Model(config)
    m.load_state_dict(nx.load_checkpoint(path))
    return m
