"""Cross-modal fusion of step text with precomputed image feature vectors.

Two variants:

* concat fusion: the image sequence is encoded by its own LSTM and the final
  hidden state is concatenated to the text representation;
* cross-attention fusion: one bidirectional single-head scaled dot-product
  attention exchange (text -> image and image -> text) with residual adds,
  then each updated sequence is encoded by its LSTM and the two final states
  are concatenated.

Image features arrive as plain vectors (extraction happens outside this
package). Steps without images use a learned placeholder so shapes stay
uniform: concat fusion substitutes a learned representation directly, while
cross-attention fusion feeds a learned pseudo-feature as a length-1 image
sequence so the attention block always has a key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, ShapeError, Tensor
from .encoders import EmbeddingTable, LstmParams, _uniform, embed_tokens, lstm_encode


@dataclass
class CrossAttnParams:
    """Single-head projections for both attention directions.

    Naming: ``wq_text`` makes queries from text rows, ``wk_image``/``wv_image``
    keys and values from image rows, ``wo_text`` projects attended values back
    to the text width; the ``*_image`` output direction mirrors it.
    """

    wq_text: Tensor
    wk_image: Tensor
    wv_image: Tensor
    wo_text: Tensor
    wq_image: Tensor
    wk_text: Tensor
    wv_text: Tensor
    wo_image: Tensor
    text_dim: int
    image_dim: int
    attention_dim: int

    def __post_init__(self):
        a, dt, di = self.attention_dim, self.text_dim, self.image_dim
        expected = {
            "wq_text": (dt, a), "wk_image": (di, a), "wv_image": (di, a), "wo_text": (a, dt),
            "wq_image": (di, a), "wk_text": (dt, a), "wv_text": (dt, a), "wo_image": (a, di),
        }
        for name, shape in expected.items():
            got = tuple(getattr(self, name).shape)
            if got != shape:
                raise ShapeError(f"CrossAttnParams: {name} has shape {got}, expected {shape}")


def init_cross_attn(
    rng: np.random.Generator, text_dim: int, image_dim: int, attention_dim: int
) -> CrossAttnParams:
    a = attention_dim
    return CrossAttnParams(
        wq_text=_uniform(rng, (text_dim, a)),
        wk_image=_uniform(rng, (image_dim, a)),
        wv_image=_uniform(rng, (image_dim, a)),
        wo_text=_uniform(rng, (a, text_dim)),
        wq_image=_uniform(rng, (image_dim, a)),
        wk_text=_uniform(rng, (text_dim, a)),
        wv_text=_uniform(rng, (text_dim, a)),
        wo_image=_uniform(rng, (a, image_dim)),
        text_dim=text_dim,
        image_dim=image_dim,
        attention_dim=attention_dim,
    )


def softmax_rows(g: Graph, logits: Tensor) -> Tensor:
    """Row-wise softmax, max-shifted for stability; rows sum to 1."""
    ld = logits.data
    if ld.ndim != 2:
        raise ShapeError(f"softmax_rows: expected a matrix, got shape {ld.shape}")
    shifted = ld - ld.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bwd(gout):
        inner = (gout * out).sum(axis=1, keepdims=True)
        return (out * (gout - inner),)

    return g.record("softmax_rows", (logits,), out, bwd)


def _attend(g: Graph, queries, keys, values, w_q, w_k, w_v, w_o, scale):
    q = g.matmul(queries, w_q)
    k = g.matmul(keys, w_k)
    v = g.matmul(values, w_v)
    logits = g.scalar_mul(g.matmul(q, g.transpose(k)), scale)
    weights = softmax_rows(g, logits)
    return g.matmul(g.matmul(weights, v), w_o), weights


def cross_attention_block(
    g: Graph, text_seq: Tensor, image_seq: Tensor, params: CrossAttnParams
):
    """Bidirectional cross-attention with residual adds; shapes are preserved.

    Both directions read the original inputs (a parallel exchange). Zero
    projection parameters make the block an exact identity.
    """
    if text_seq.data.ndim != 2 or text_seq.shape[1] != params.text_dim:
        raise ShapeError(f"cross_attention_block: text shape {text_seq.shape} vs text_dim {params.text_dim}")
    if image_seq.data.ndim != 2 or image_seq.shape[1] != params.image_dim:
        raise ShapeError(f"cross_attention_block: image shape {image_seq.shape} vs image_dim {params.image_dim}")
    scale = 1.0 / math.sqrt(params.attention_dim)
    text_update, _ = _attend(
        g, text_seq, image_seq, image_seq,
        params.wq_text, params.wk_image, params.wv_image, params.wo_text, scale,
    )
    image_update, _ = _attend(
        g, image_seq, text_seq, text_seq,
        params.wq_image, params.wk_text, params.wv_text, params.wo_image, scale,
    )
    return g.add(text_seq, text_update), g.add(image_seq, image_update)


def image_sequence(
    g: Graph, image_features, feature_dim: int, no_image_feature: Tensor
) -> Tensor:
    """Image features as a K x dim tensor; empty input uses the learned placeholder."""
    if isinstance(image_features, Tensor):
        if image_features.data.ndim != 2 or image_features.shape[1] != feature_dim:
            raise ShapeError(
                f"image_sequence: features shape {image_features.shape} vs dim {feature_dim}"
            )
        return image_features
    features = list(image_features or [])
    if not features:
        return g.stack_rows([no_image_feature])
    mat = np.asarray(features, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != feature_dim:
        raise ShapeError(f"image_sequence: features shape {mat.shape} vs dim {feature_dim}")
    return Tensor(mat)


def encode_step_concat(
    g: Graph,
    step_tokens,
    image_features,
    table: EmbeddingTable,
    text_lstm: LstmParams,
    image_lstm: LstmParams,
    no_image_rep: Tensor,
) -> Tensor:
    """concat(text LSTM final state, image LSTM final state).

    Without images the learned ``no_image_rep`` stands in for the image
    encoding directly (its length must equal the image LSTM hidden dim).
    """
    text_rep = lstm_encode(g, text_lstm, embed_tokens(g, table, step_tokens))
    empty = not isinstance(image_features, Tensor) and not list(image_features or [])
    if empty:
        image_rep = no_image_rep
    else:
        seq = image_sequence(g, image_features, image_lstm.input_dim, no_image_rep)
        image_rep = lstm_encode(g, image_lstm, seq)
    return g.concat(text_rep, image_rep)


def encode_step_lxmert(
    g: Graph,
    step_tokens,
    image_features,
    table: EmbeddingTable,
    attn: CrossAttnParams,
    text_lstm: LstmParams,
    image_lstm: LstmParams,
    no_image_feature: Tensor,
) -> Tensor:
    """Cross-attend token embeddings with image features, encode both, concat.

    With zero attention parameters this degenerates to the concat-fusion
    computation path (the block passes both sequences through unchanged).
    """
    emb = embed_tokens(g, table, step_tokens)
    img = image_sequence(g, image_features, attn.image_dim, no_image_feature)
    emb_updated, img_updated = cross_attention_block(g, emb, img, attn)
    text_rep = lstm_encode(g, text_lstm, emb_updated)
    image_rep = lstm_encode(g, image_lstm, img_updated)
    return g.concat(text_rep, image_rep)
