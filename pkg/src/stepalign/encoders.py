"""Trainable text encoders: embedding lookup, positional one-hot, LSTM, MLP.

These are small stand-ins for a pretrained-embedding pipeline: tokens arrive
as integer ids, a trainable table embeds them, an LSTM cell rolled out over
the sequence produces the representation (final hidden state), and an MLP
projects fused representations before similarity scoring. Sequences of
precomputed feature vectors can be fed to the same LSTM encoder directly,
so pretrained embeddings can be plugged in without code changes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, ShapeError, Tensor

INIT_SCALE = 0.1  # parameters start uniform in [-INIT_SCALE, INIT_SCALE]


def _uniform(rng: np.random.Generator, shape, scale: float = INIT_SCALE) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


@dataclass
class EmbeddingTable:
    """Trainable vocab_size x dim lookup table."""

    weights: Tensor

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class LstmParams:
    """Standard LSTM cell parameters.

    The four gate weight matrices (input, forget, output, candidate) are
    stored stacked as row blocks of ``w``: shape (4*hidden, input+hidden),
    with ``b`` of length 4*hidden in the same block order. One matmul per
    token instead of four.
    """

    w: Tensor
    b: Tensor
    input_dim: int
    hidden_dim: int

    def __post_init__(self):
        expect_w = (4 * self.hidden_dim, self.input_dim + self.hidden_dim)
        if tuple(self.w.shape) != expect_w or tuple(self.b.shape) != (4 * self.hidden_dim,):
            raise ShapeError(
                f"LstmParams: weights {self.w.shape}/{self.b.shape} inconsistent with "
                f"input_dim={self.input_dim}, hidden_dim={self.hidden_dim}"
            )


@dataclass
class MlpParams:
    """Affine stack with tanh between layers and a bare final affine."""

    weights: list
    biases: list
    nonlinearity: str = "tanh"

    def __post_init__(self):
        if self.nonlinearity != "tanh":
            raise ValueError(f"MlpParams: unsupported nonlinearity '{self.nonlinearity}'")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("MlpParams: need one bias per weight matrix")
        for k in range(len(self.weights) - 1):
            if self.weights[k].shape[0] != self.weights[k + 1].shape[1]:
                raise ShapeError(
                    f"MlpParams: layer {k} output dim {self.weights[k].shape[0]} does not "
                    f"chain into layer {k + 1} input dim {self.weights[k + 1].shape[1]}"
                )

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]


def init_embedding(rng: np.random.Generator, vocab_size: int, dim: int) -> EmbeddingTable:
    return EmbeddingTable(_uniform(rng, (vocab_size, dim)))


def init_lstm(rng: np.random.Generator, input_dim: int, hidden_dim: int) -> LstmParams:
    return LstmParams(
        w=_uniform(rng, (4 * hidden_dim, input_dim + hidden_dim)),
        b=_uniform(rng, (4 * hidden_dim,)),
        input_dim=input_dim,
        hidden_dim=hidden_dim,
    )


def init_mlp(rng: np.random.Generator, layer_dims) -> MlpParams:
    """layer_dims chains input through hidden sizes to the output size."""
    if len(layer_dims) < 2:
        raise ShapeError(f"init_mlp: need at least input and output dims, got {layer_dims}")
    weights = [
        _uniform(rng, (layer_dims[k + 1], layer_dims[k])) for k in range(len(layer_dims) - 1)
    ]
    biases = [_uniform(rng, (layer_dims[k + 1],)) for k in range(len(layer_dims) - 1)]
    return MlpParams(weights, biases)


def one_hot_position(position: int, max_positions: int) -> Tensor:
    """Constant indicator vector: 1 at ``position``, 0 elsewhere."""
    if not 0 <= position < max_positions:
        raise ValueError(f"one_hot_position: position {position} out of range [0, {max_positions})")
    v = np.zeros(max_positions)
    v[position] = 1.0
    return Tensor(v)


def embed_tokens(g: Graph, table: EmbeddingTable, ids) -> Tensor:
    """Look up rows of the table; gradients accumulate into repeated rows."""
    ids = list(ids)
    if not ids:
        raise ValueError("embed_tokens: ids must be non-empty")
    for t in ids:
        if not 0 <= int(t) < table.vocab_size:
            raise ValueError(f"embed_tokens: token id {t} out of range [0, {table.vocab_size})")
    return g.gather_rows(table.weights, ids)


def lstm_encode(g: Graph, params: LstmParams, sequence: Tensor) -> Tensor:
    """Roll the LSTM cell over the rows of ``sequence`` from zero state.

    Returns the final hidden state h_T (length hidden_dim).
    """
    if sequence.data.ndim != 2 or sequence.shape[0] < 1:
        raise ShapeError(f"lstm_encode: expected a non-empty len x dim sequence, got {sequence.shape}")
    if sequence.shape[1] != params.input_dim:
        raise ShapeError(
            f"lstm_encode: sequence width {sequence.shape[1]} does not match "
            f"input_dim {params.input_dim}"
        )
    hd = params.hidden_dim
    h = Tensor(np.zeros(hd))
    c = Tensor(np.zeros(hd))
    for t in range(sequence.shape[0]):
        x = g.slice_row(sequence, t)
        z = g.add(g.matmul(params.w, g.concat(x, h)), params.b)
        gate_i = g.sigmoid(g.slice_range(z, 0, hd))
        gate_f = g.sigmoid(g.slice_range(z, hd, 2 * hd))
        gate_o = g.sigmoid(g.slice_range(z, 2 * hd, 3 * hd))
        cand = g.tanh(g.slice_range(z, 3 * hd, 4 * hd))
        c = g.add(g.mul(gate_f, c), g.mul(gate_i, cand))
        h = g.mul(gate_o, g.tanh(c))
    return h


def encode_instruction(g: Graph, step_tokens, table: EmbeddingTable, lstm: LstmParams) -> Tensor:
    """Embed a step's tokens and encode them; returns the hidden_dim vector."""
    return lstm_encode(g, lstm, embed_tokens(g, table, step_tokens))


def encode_positioned_text(
    g: Graph,
    tokens,
    position: int,
    table: EmbeddingTable,
    lstm: LstmParams,
    max_positions: int = 4,
) -> Tensor:
    """Encode tokens with the same one-hot position vector appended to every row.

    Used for question items and candidate answers alike; the LSTM input dim
    must equal embedding dim + max_positions.
    """
    emb = embed_tokens(g, table, tokens)
    onehot = one_hot_position(position, max_positions)
    pos_rows = Tensor(np.tile(onehot.data, (emb.shape[0], 1)))
    return lstm_encode(g, lstm, g.concat(emb, pos_rows))


def encode_question(
    g: Graph,
    items,
    placeholder_position: int,
    table: EmbeddingTable,
    item_lstm: LstmParams,
    question_lstm: LstmParams,
    max_positions: int = 4,
) -> Tensor:
    """Encode the three question items, then the item sequence, in given order.

    ``items`` is three (tokens, position) pairs; positions plus the
    placeholder must be pairwise distinct values in [0, max_positions).
    """
    items = list(items)
    if len(items) != 3:
        raise ValueError(f"encode_question: expected exactly 3 items, got {len(items)}")
    positions = [p for _, p in items] + [placeholder_position]
    if len(set(positions)) != len(positions):
        raise ValueError(f"encode_question: duplicate positions in {positions}")
    for p in positions:
        if not 0 <= p < max_positions:
            raise ValueError(f"encode_question: position {p} out of range [0, {max_positions})")
    reps = [
        encode_positioned_text(g, tokens, pos, table, item_lstm, max_positions)
        for tokens, pos in items
    ]
    return lstm_encode(g, question_lstm, g.stack_rows(reps))


def mlp_project(g: Graph, params: MlpParams, x: Tensor) -> Tensor:
    """Alternating affine + tanh; the final layer is affine with no activation."""
    if x.data.ndim != 1 or x.shape[0] != params.input_dim:
        raise ShapeError(
            f"mlp_project: input shape {x.shape} does not match first layer "
            f"input dim {params.input_dim}"
        )
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        x = g.add(g.matmul(w, x), b)
        if k != last:
            x = g.tanh(x)
    return x
