"""Network blocks: MLP heads, the step-level RNN encoder with its recursive
position code, sinusoidal embeddings, multi-head self-attention, post-norm
transformer blocks and the hierarchical RNN + transformer stack.

All forward functions accept inputs with arbitrary leading batch axes; the
last axis is the feature axis and, for sequences, the one before it is the
time axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numcore as nc
from .numcore import Tensor

ACTIVATIONS = ("relu", "tanh", "none")


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape))


# ----------------------------------------------------------------------- MLP

@dataclass
class Layer:
    weight: Tensor          # (in, out)
    bias: Tensor            # (out,)
    activation: str = "none"


@dataclass
class MlpParams:
    layers: list[Layer]

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise nc.ShapeError(f"layer widths do not chain: {a.weight.shape} -> {b.weight.shape}")
        for l in self.layers:
            if l.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {l.activation!r}")

    @property
    def in_width(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def out_width(self) -> int:
        return self.layers[-1].weight.shape[1]


def mlp_init(rng: np.random.Generator, sizes: Sequence[int], activations: Sequence[str]) -> MlpParams:
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    layers = [Layer(_uniform(rng, (i, o), i), _uniform(rng, (o,), i), act)
              for i, o, act in zip(sizes[:-1], sizes[1:], activations)]
    return MlpParams(layers)


def _activate(x: Tensor, act: str) -> Tensor:
    if act == "relu":
        return nc.relu(x)
    if act == "tanh":
        return nc.tanh(x)
    return x


def mlp_forward(p: MlpParams, x: Tensor) -> Tensor:
    if x.shape[-1] != p.in_width:
        raise nc.ShapeError(f"mlp input width {x.shape[-1]}, expected {p.in_width}")
    for layer in p.layers:
        x = _activate(nc.add_bias(nc.matmul(x, layer.weight), layer.bias), layer.activation)
    return x


# ----------------------------------------------------------------------- RNN

@dataclass
class RnnParams:
    U: Tensor   # (hidden, in)
    W: Tensor   # (hidden, hidden)
    b: Tensor   # (hidden,)

    def __post_init__(self):
        hid = self.W.shape[0]
        if self.W.shape != (hid, hid) or self.U.shape[0] != hid or self.b.shape != (hid,):
            raise nc.ShapeError(f"inconsistent RNN shapes U{self.U.shape} W{self.W.shape} b{self.b.shape}")

    @property
    def hidden(self) -> int:
        return self.W.shape[0]

    @property
    def in_width(self) -> int:
        return self.U.shape[1]


def rnn_init(rng: np.random.Generator, in_width: int, hidden: int) -> RnnParams:
    return RnnParams(_uniform(rng, (hidden, in_width), hidden),
                     _uniform(rng, (hidden, hidden), hidden),
                     _uniform(rng, (hidden,), hidden))


def rnn_step(p: RnnParams, h_prev: Tensor, x: Tensor) -> Tensor:
    """tanh(U x + W h_prev + b) for row-vector batches."""
    if x.shape[-1] != p.in_width or h_prev.shape[-1] != p.hidden:
        raise nc.ShapeError(f"rnn_step: x {x.shape}, h {h_prev.shape} vs U{p.U.shape}")
    z = nc.add(nc.matmul(x, nc.transpose(p.U)), nc.matmul(h_prev, nc.transpose(p.W)))
    return nc.tanh(nc.add_bias(z, p.b))


def _as_steps(window) -> list[Tensor]:
    if isinstance(window, Tensor):
        if window.data.ndim < 2:
            raise nc.ShapeError("window tensor needs a time axis")
        return [nc.take(window, k, axis=-2) for k in range(window.shape[-2])]
    steps = list(window)
    return steps


def rnn_chain(p: RnnParams, window) -> list[Tensor]:
    """Hidden states s_1..s_K of the recurrence started from a zero state."""
    steps = _as_steps(window)
    if not steps:
        raise ValueError("empty window")
    h = Tensor(np.zeros(steps[0].shape[:-1] + (p.hidden,)))
    out = []
    for x in steps:
        h = rnn_step(p, h, x)
        out.append(h)
    return out


def rnn_position_encode(p: RnnParams, window) -> list[Tensor]:
    """Recursive position codes p_1..p_K with p_i = RNN(window_i, p_{i-1}), p_0 = 0.

    Code i only ever sees window entries 1..i.
    """
    return rnn_chain(p, window)


def sinusoidal_pe(pos: int, d: int) -> Tensor:
    if d % 2:
        raise ValueError(f"sinusoidal embedding width must be even, got {d}")
    if pos < 0:
        raise ValueError("position must be nonnegative")
    i = np.arange(d // 2)
    angle = pos / np.power(10000.0, 2.0 * i / d)
    out = np.empty(d)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return Tensor(out)


# ---------------------------------------------------------------- attention

@dataclass
class TransformerBlockParams:
    wq: list[Tensor]        # per head (d_s, d_h)
    wk: list[Tensor]
    wv: list[Tensor]
    wo: Tensor              # (heads * d_h, d_s)
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    ff: MlpParams

    def __post_init__(self):
        d_s = self.d_s
        heads = len(self.wq)
        if not (heads == len(self.wk) == len(self.wv)) or heads == 0:
            raise nc.ShapeError("per-head projection lists differ in length")
        d_h = self.wq[0].shape[1]
        for w in (*self.wq, *self.wk, *self.wv):
            if w.shape != (d_s, d_h):
                raise nc.ShapeError(f"head projection {w.shape}, expected {(d_s, d_h)}")
        if heads * d_h != d_s or self.wo.shape != (heads * d_h, d_s):
            raise nc.ShapeError(f"heads*d_h must equal d_s and W^O be {(heads * d_h, d_s)}")
        if self.ff.in_width != d_s or self.ff.out_width != d_s:
            raise nc.ShapeError("feed-forward must map d_s -> d_s")

    @property
    def d_s(self) -> int:
        return self.wo.shape[1]

    @property
    def heads(self) -> int:
        return len(self.wq)


def block_init(rng: np.random.Generator, d_s: int = 64, heads: int = 4, d_ff: int = 64) -> TransformerBlockParams:
    if d_s % heads:
        raise ValueError("d_s must be divisible by the number of heads")
    d_h = d_s // heads
    proj = lambda: [_uniform(rng, (d_s, d_h), d_s) for _ in range(heads)]
    return TransformerBlockParams(
        wq=proj(), wk=proj(), wv=proj(),
        wo=_uniform(rng, (heads * d_h, d_s), heads * d_h),
        ln1_gain=Tensor(np.ones(d_s)), ln1_bias=Tensor(np.zeros(d_s)),
        ln2_gain=Tensor(np.ones(d_s)), ln2_bias=Tensor(np.zeros(d_s)),
        ff=mlp_init(rng, [d_s, d_ff, d_s], ["relu", "none"]),
    )


@dataclass
class AttentionTrace:
    """Per-head attention weights (and pre-softmax logits) of one call."""
    weights: list[np.ndarray] = field(default_factory=list)
    logits: list[np.ndarray] = field(default_factory=list)


def multi_head_attention(p: TransformerBlockParams, X: Tensor, logit_shift: float = 0.0,
                         trace: AttentionTrace | None = None, last_only: bool = False) -> Tensor:
    """Scaled dot-product self-attention over the time axis, heads concatenated
    and projected by W^O. Logits are scaled by 1/sqrt(d_s).

    The per-head projections are applied as one (d_s, heads*d_h) product and
    the heads are then split off as an extra batch axis.

    ``logit_shift`` adds a constant to every logit before the softmax; it exists
    so tests can probe shift invariance from outside. With ``last_only`` only
    the final position queries, giving (..., 1, d_s).
    """
    if X.shape[-1] != p.d_s or X.data.ndim < 2:
        raise nc.ShapeError(f"attention input {X.shape}, expected (..., L, {p.d_s})")
    lead, L = X.shape[:-2], X.shape[-2]
    h, d_h = p.heads, p.d_s // p.heads
    nl = len(lead)
    # (..., L, h*d_h) -> (..., h, L, d_h)
    to_heads = tuple(range(nl)) + (nl + 1, nl, nl + 2)

    def project(ws, Z):
        rows = Z.shape[-2]
        y = nc.matmul(Z, nc.concat(ws, axis=-1))
        return nc.permute(nc.reshape(y, lead + (rows, h, d_h)), to_heads)

    Xq = _last_row(X) if last_only else X
    Q, K, V = project(p.wq, Xq), project(p.wk, X), project(p.wv, X)
    logits = nc.scale(nc.matmul(Q, nc.transpose(K)), 1.0 / math.sqrt(p.d_s))
    if logit_shift:
        logits = nc.add(logits, Tensor(np.full(logits.shape, float(logit_shift))))
    A = nc.softmax(logits, axis=-1)
    if trace is not None:
        for i in range(h):
            trace.logits.append(np.take(logits.data, i, axis=nl).copy())
            trace.weights.append(np.take(A.data, i, axis=nl).copy())
    heads = nc.permute(nc.matmul(A, V), to_heads)  # back to (..., rows, h, d_h)
    return nc.matmul(nc.reshape(heads, lead + (Xq.shape[-2], h * d_h)), p.wo)


def _last_row(X: Tensor) -> Tensor:
    x = nc.take(X, -1, axis=-2)
    return nc.reshape(x, x.shape[:-1] + (1, x.shape[-1]))


def transformer_block(p: TransformerBlockParams, D: Tensor, logit_shift: float = 0.0,
                      trace: AttentionTrace | None = None, last_only: bool = False) -> Tensor:
    """Post-norm encoder block: H = LN(D + MHA(D)); out = LN(H + FF(H)).

    ``last_only`` computes just the final position's output row (..., 1, d_s);
    every position still serves as a key and value.
    """
    att = multi_head_attention(p, D, logit_shift, trace, last_only)
    H = nc.layer_norm(nc.add(_last_row(D) if last_only else D, att), p.ln1_gain, p.ln1_bias)
    return nc.layer_norm(nc.add(H, mlp_forward(p.ff, H)), p.ln2_gain, p.ln2_bias)


# ------------------------------------------------------------ hierarchical

POOLING = "last"


@dataclass
class EncoderStack:
    """Step-level RNN encoder plus the ordered transformer blocks T_1..T_N."""
    embed: Tensor                       # (hidden, d_s)
    rnn: RnnParams                      # observation -> hidden
    pos_rnn: RnnParams                  # hidden -> recursive position code of width d_s
    blocks: list[TransformerBlockParams]
    sinusoidal: bool = False

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("an encoder stack needs at least one transformer block")
        d_s = self.blocks[0].d_s
        if any(b.d_s != d_s for b in self.blocks):
            raise nc.ShapeError("all blocks must share d_s")
        if self.embed.shape != (self.rnn.hidden, d_s):
            raise nc.ShapeError(f"embedding {self.embed.shape}, expected {(self.rnn.hidden, d_s)}")
        if self.pos_rnn.in_width != self.rnn.hidden or self.pos_rnn.hidden != d_s:
            raise nc.ShapeError("position RNN must map hidden -> d_s")

    @property
    def depth(self) -> int:
        return len(self.blocks)

    @property
    def d_s(self) -> int:
        return self.blocks[0].d_s


def encoder_init(rng: np.random.Generator, obs_width: int, depth: int, hidden: int = 64,
                 d_s: int = 64, heads: int = 4, d_ff: int = 64, sinusoidal: bool = False) -> EncoderStack:
    return EncoderStack(
        embed=_uniform(rng, (hidden, d_s), hidden),
        rnn=rnn_init(rng, obs_width, hidden),
        pos_rnn=rnn_init(rng, hidden, d_s),
        blocks=[block_init(rng, d_s, heads, d_ff) for _ in range(depth)],
        sinusoidal=sinusoidal,
    )


def step_tokens(stack: EncoderStack, window) -> Tensor:
    """Lower level: RNN hidden states projected to d_s, plus their recursive
    position codes. Returns (..., K, d_s)."""
    hs = rnn_chain(stack.rnn, window)
    codes = rnn_position_encode(stack.pos_rnn, hs)
    seq = lambda xs: nc.concat([nc.reshape(x, x.shape[:-1] + (1, x.shape[-1])) for x in xs], axis=-2)
    tokens = nc.add(nc.matmul(seq(hs), stack.embed), seq(codes))
    if stack.sinusoidal:
        table = np.stack([sinusoidal_pe(k, stack.d_s).data for k in range(len(hs))])
        tokens = nc.add(tokens, Tensor(np.broadcast_to(table, tokens.shape).copy()))
    return tokens


def hierarchical_encode(stack: EncoderStack, window, trace: AttentionTrace | None = None
                        ) -> tuple[Tensor, Tensor]:
    """Run T_N o ... o T_1 over the step-level tokens.

    Returns the encoded sequence (..., K, d_s) and the pooled last-position
    vector (..., d_s).
    """
    x = step_tokens(stack, window)
    for block in stack.blocks:
        x = transformer_block(block, x, trace=trace)
    return x, nc.take(x, -1, axis=-2)


def pooled_encode(stack: EncoderStack, window) -> Tensor:
    """The pooled vector of ``hierarchical_encode`` without computing the final
    block's discarded rows; equal to it up to rounding."""
    x = step_tokens(stack, window)
    for block in stack.blocks[:-1]:
        x = transformer_block(block, x)
    return nc.take(transformer_block(stack.blocks[-1], x, last_only=True), -1, axis=-2)
