"""The NDRM ranking family over a conformer document encoder.

NDRM1 kernel-pools cosine similarities between a term's static embedding and
the encoded document tokens; NDRM2 is a learned BM25-form exact matcher;
NDRM3 gates between them. Every variant scores query terms independently and
sums them, so per-term scores can be precomputed into an inverted index
without changing rankings.

Query terms deliberately use static (non-contextual) embeddings: a term's
score must not depend on the rest of the query, or the precomputed index
would diverge from live scoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .corpus import PAD_ID, UNK_ID, Document, Vocabulary, idf
from .errors import EmptyDocument

KERNEL_MUS = (1.0, 0.9, 0.7, 0.5, 0.3, 0.1, -0.1, -0.3, -0.5, -0.7, -0.9)
KERNEL_SIGMAS = (0.001,) + (0.1,) * 10

VARIANTS = ("NDRM1", "NDRM2", "NDRM3")

PHI_EPS = 1e-6

_INFERENCE_DTYPE = np.dtype(np.float32)


def set_inference_dtype(dtype) -> None:
    """Precision for the numpy scoring wrappers: float32 at runtime, float64
    for verification. Training is unaffected."""
    global _INFERENCE_DTYPE
    _INFERENCE_DTYPE = np.dtype(dtype)


def _inference_tape() -> Tape:
    return Tape(dtype=_INFERENCE_DTYPE, record=False)


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    d_key: int = 64
    d_value: int = 64
    num_layers: int = 2
    conv_window: int = 7
    ffn_dim: int = 128
    kernel_mus: tuple[float, ...] = KERNEL_MUS
    kernel_sigmas: tuple[float, ...] = KERNEL_SIGMAS
    max_doc_len: int = 1024
    max_query_len: int = 20
    variant: str = "NDRM3"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.conv_window < 1 or self.conv_window % 2 == 0:
            raise ValueError(f"conv_window must be odd and >= 1, got {self.conv_window}")
        if len(self.kernel_mus) != len(self.kernel_sigmas):
            raise ValueError("kernel_mus and kernel_sigmas must have equal length")
        if len(self.kernel_mus) < 2:
            raise ValueError("need at least 2 kernels")
        if any(s <= 0 for s in self.kernel_sigmas):
            raise ValueError("kernel widths must be positive")
        if sum(1 for m in self.kernel_mus if m == 1.0) != 1:
            raise ValueError("exactly one kernel must sit at mu=1.0 (the exact-match kernel)")
        for name in ("embed_dim", "d_key", "d_value", "ffn_dim", "max_doc_len", "max_query_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")

    @property
    def num_kernels(self) -> int:
        return len(self.kernel_mus)


def _layer_shapes(config: ModelConfig, l: int) -> dict[str, tuple[int, ...]]:
    d, dk, dv, f, w = (
        config.embed_dim,
        config.d_key,
        config.d_value,
        config.ffn_dim,
        config.conv_window,
    )
    p = f"layer{l}."
    return {
        p + "ln_attn.gain": (d,),
        p + "ln_attn.bias": (d,),
        p + "attn.wq": (d, dk),
        p + "attn.wk": (d, dk),
        p + "attn.wv": (d, dv),
        p + "attn.wo": (dv, d),
        p + "ln_conv.gain": (d,),
        p + "ln_conv.bias": (d,),
        p + "conv.depthwise": (w, d),
        p + "conv.pointwise": (d, d),
        p + "ln_ffn.gain": (d,),
        p + "ln_ffn.bias": (d,),
        p + "ffn.w1": (d, f),
        p + "ffn.b1": (f,),
        p + "ffn.w2": (f, d),
        p + "ffn.b2": (d,),
    }


def param_shapes(config: ModelConfig, vocab_size: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {"embedding": (vocab_size, config.embed_dim)}
    for l in range(config.num_layers):
        shapes.update(_layer_shapes(config, l))
    shapes.update(
        {
            "kernel_pool.weight": (config.num_kernels,),
            "kernel_pool.bias": (1,),
            "exact.weight_raw": (1,),
            "exact.k1_raw": (1,),
            "exact.b_raw": (1,),
            "combine.gate_raw": (1,),
        }
    )
    return shapes


def _inverse_softplus(y: float) -> float:
    return math.log(math.expm1(y))


@dataclass
class ModelParams:
    """Learnable arrays keyed by name, plus the architecture they realize."""

    config: ModelConfig
    vocab_size: int
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, config: ModelConfig, vocab_size: int, seed: int = 0) -> "ModelParams":
        """Uniform(-0.1, 0.1) matrices, zero biases, BM25-informed scalar warm start."""
        rng = np.random.default_rng(seed)
        arrays: dict[str, np.ndarray] = {}
        for name, shape in sorted(param_shapes(config, vocab_size).items()):
            if name.endswith((".bias", ".b1", ".b2")) or name == "combine.gate_raw":
                arr = np.zeros(shape, dtype=np.float32)
            elif name.endswith(".gain"):
                arr = np.ones(shape, dtype=np.float32)
            elif name == "exact.weight_raw":
                arr = np.full(shape, _inverse_softplus(1.0), dtype=np.float32)
            elif name == "exact.k1_raw":
                arr = np.full(shape, _inverse_softplus(1.2), dtype=np.float32)
            elif name == "exact.b_raw":
                arr = np.full(shape, math.log(3.0), dtype=np.float32)
            else:
                arr = rng.uniform(-0.1, 0.1, size=shape).astype(np.float32)
            arrays[name] = arr
        arrays["embedding"][PAD_ID] = 0.0
        return cls(config=config, vocab_size=vocab_size, arrays=arrays)

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            vocab_size=self.vocab_size,
            arrays={k: v.copy() for k, v in self.arrays.items()},
        )

    def check_finite(self) -> None:
        for name, arr in self.arrays.items():
            if not np.all(np.isfinite(arr)):
                from .errors import NonFinite

                raise NonFinite(f"non-finite parameter {name!r}")


def bind(tape: Tape, params: ModelParams) -> dict[str, Tensor]:
    """One tape variable per parameter array; gradients land on these."""
    return {name: tape.var(arr, name=name) for name, arr in params.arrays.items()}


@dataclass
class DocEncoding:
    """Contextual token matrix with unit-norm valid rows and a validity mask."""

    matrix: np.ndarray
    mask: np.ndarray

    @property
    def num_valid(self) -> int:
        return int(self.mask.sum())


# ---------------------------------------------------------------------------
# encoder, tensor level

def _separable_attention_t(
    x: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    mask_col: np.ndarray,
) -> tuple[Tensor, Tensor]:
    """Attention without the n*n matrix: returns (output n*d_value, context).

    The only cross-token reduction is the d_key*d_value context, so memory
    stays linear in sequence length.
    """
    q = ad.matmul(x, wq)
    k = ad.matmul(x, wk)
    v = ad.matmul(x, wv)
    sq = ad.softmax(q, axis=1)
    sk = ad.masked_softmax(k, mask_col, axis=0)
    context = ad.matmul(ad.transpose(sk), v)
    return ad.matmul(sq, context), context


def _conformer_layer_t(
    tape: Tape,
    tvars: dict[str, Tensor],
    l: int,
    x: Tensor,
    mask_col: np.ndarray,
) -> Tensor:
    """Pre-norm residual: attention, depthwise conv + pointwise mix, FFN.

    Masked rows are re-zeroed after every block (and after every layer norm,
    whose bias would otherwise resurrect them), so appended padding can never
    leak into valid positions.
    """
    p = f"layer{l}."
    mc = x.tape.const(mask_col)

    h = ad.layer_norm(x, tvars[p + "ln_attn.gain"], tvars[p + "ln_attn.bias"]) * mc
    attn, _ = _separable_attention_t(
        h, tvars[p + "attn.wq"], tvars[p + "attn.wk"], tvars[p + "attn.wv"], mask_col
    )
    x = (x + ad.matmul(attn, tvars[p + "attn.wo"])) * mc

    h = ad.layer_norm(x, tvars[p + "ln_conv.gain"], tvars[p + "ln_conv.bias"]) * mc
    local = ad.conv1d_depthwise(h, tvars[p + "conv.depthwise"])
    x = (x + ad.matmul(local, tvars[p + "conv.pointwise"])) * mc

    h = ad.layer_norm(x, tvars[p + "ln_ffn.gain"], tvars[p + "ln_ffn.bias"]) * mc
    inner = ad.relu(ad.matmul(h, tvars[p + "ffn.w1"]) + tvars[p + "ffn.b1"])
    x = (x + (ad.matmul(inner, tvars[p + "ffn.w2"]) + tvars[p + "ffn.b2"])) * mc
    return x


def encode_tokens_t(
    tape: Tape,
    tvars: dict[str, Tensor],
    config: ModelConfig,
    token_ids,
) -> tuple[Tensor, np.ndarray]:
    """Embed, run the conformer stack, L2-normalize rows. Returns (enc, mask)."""
    ids = np.asarray(token_ids, dtype=np.int64)
    mask = (ids != PAD_ID).astype(tape.dtype) if ids.size else np.zeros(0, dtype=tape.dtype)
    if mask.sum() == 0:
        raise EmptyDocument("document has no valid tokens")
    mask_col = mask.reshape(-1, 1)
    x = ad.embedding_gather(tvars["embedding"], ids) * tape.const(mask_col)
    for l in range(config.num_layers):
        x = _conformer_layer_t(tape, tvars, l, x, mask_col)
    return ad.l2_normalize_rows(x, mask=mask), mask


# ---------------------------------------------------------------------------
# term scoring, tensor level

def _term_scores_t(
    tape: Tape,
    tvars: dict[str, Tensor],
    config: ModelConfig,
    enc: Tensor,
    mask: np.ndarray,
    term_ids,
    tfs: np.ndarray,
    idfs: np.ndarray,
    doc_len: int,
    avgdl: float,
    variant: str,
) -> Tensor:
    """Scores for T terms against one encoded document, shape (T,).

    Rows are computed independently (einsum contractions only), so a term's
    score is bitwise identical whether it is scored alone or in a batch; the
    impact index depends on that.
    """
    ids = np.asarray(term_ids, dtype=np.int64)
    n = enc.data.shape[0]
    t = ids.shape[0]

    s1 = None
    if variant in ("NDRM1", "NDRM3"):
        q = ad.l2_normalize_rows(ad.embedding_gather(tvars["embedding"], ids))
        sims = ad.matmul(q, ad.transpose(enc))
        sims3 = ad.reshape(sims, (t, n, 1))
        mus = tape.const(np.asarray(config.kernel_mus, dtype=tape.dtype).reshape(1, 1, -1))
        inv2s2 = tape.const(
            (1.0 / (2.0 * np.asarray(config.kernel_sigmas, dtype=np.float64) ** 2))
            .astype(tape.dtype)
            .reshape(1, 1, -1)
        )
        diff = sims3 - mus
        weights = ad.exp(-(diff * diff) * inv2s2) * tape.const(mask.reshape(1, n, 1))
        phi = ad.log(ad.reduce_sum(weights, axis=1) + tape.const(np.array(PHI_EPS)))
        pooled = ad.matmul(phi, ad.reshape(tvars["kernel_pool.weight"], (-1, 1)))
        s1 = ad.reshape(ad.relu(pooled + tvars["kernel_pool.bias"]), (t,))

    s2 = None
    if variant in ("NDRM2", "NDRM3"):
        w2 = ad.softplus(tvars["exact.weight_raw"])
        k1 = ad.softplus(tvars["exact.k1_raw"])
        b = ad.sigmoid(tvars["exact.b_raw"])
        tf = tape.const(np.asarray(tfs, dtype=tape.dtype))
        idf_c = tape.const(np.asarray(idfs, dtype=tape.dtype))
        ratio = tape.const(np.array(doc_len / avgdl, dtype=tape.dtype))
        norm = (1.0 - b) + b * ratio
        s2 = w2 * idf_c * tf / (tf + k1 * norm)

    if variant == "NDRM1":
        return s1
    if variant == "NDRM2":
        return s2
    g = ad.sigmoid(tvars["combine.gate_raw"])
    return g * s1 + (1.0 - g) * s2


# ---------------------------------------------------------------------------
# public numpy-facing operations

def separable_attention(
    x: np.ndarray,
    wq: np.ndarray,
    wk: np.ndarray,
    wv: np.ndarray,
    mask: np.ndarray,
    return_context: bool = False,
):
    """Numpy convenience wrapper around the tensor-level attention."""
    tape = _inference_tape()
    out, ctx = _separable_attention_t(
        tape.var(x), tape.var(wq), tape.var(wk), tape.var(wv),
        np.asarray(mask, dtype=tape.dtype).reshape(-1, 1),
    )
    return (out.data, ctx.data) if return_context else out.data


def conformer_layer(
    x: np.ndarray,
    layer_params: dict[str, np.ndarray],
    mask: np.ndarray,
    layer_index: int = 0,
) -> np.ndarray:
    """One conformer block over numpy inputs; layer_params keyed like ModelParams."""
    tape = _inference_tape()
    tvars = {name: tape.var(arr, name=name) for name, arr in layer_params.items()}
    mask_col = np.asarray(mask, dtype=tape.dtype).reshape(-1, 1)
    return _conformer_layer_t(tape, tvars, layer_index, tape.var(x), mask_col).data


def encode_document(token_ids, params: ModelParams) -> DocEncoding:
    """Flat token ids to a DocEncoding. Raises EmptyDocument on all-PAD input."""
    tape = _inference_tape()
    tvars = bind(tape, params)
    enc, mask = encode_tokens_t(tape, tvars, params.config, token_ids)
    return DocEncoding(matrix=enc.data, mask=mask)


def kernel_features(
    q_embed: np.ndarray,
    doc_enc: DocEncoding,
    mus=None,
    sigmas=None,
) -> np.ndarray:
    """Log-summed Gaussian kernel responses of cosine similarities, shape (K,).

    q_embed must already be L2-normalized; document rows are unit-norm by
    construction, so the dot products are cosines.
    """
    mus = np.asarray(KERNEL_MUS if mus is None else mus, dtype=np.float64)
    sigmas = np.asarray(KERNEL_SIGMAS if sigmas is None else sigmas, dtype=np.float64)
    sims = np.einsum("nd,d->n", doc_enc.matrix.astype(np.float64), np.asarray(q_embed, np.float64))
    diff = sims[:, None] - mus[None, :]
    weights = np.exp(-(diff * diff) / (2.0 * sigmas[None, :] ** 2)) * doc_enc.mask[:, None]
    return np.log(weights.sum(axis=0) + PHI_EPS)


def _doc_stats(document: Document, vocab: Vocabulary, term_ids) -> tuple[np.ndarray, np.ndarray, int]:
    counts = document.term_counts()
    tfs = np.array([counts.get(int(i), 0) for i in term_ids], dtype=np.float64)
    idfs = np.array(
        [idf(vocab, vocab.term_of(int(i)) or "\x00unknown") for i in term_ids], dtype=np.float64
    )
    return tfs, idfs, max(document.length, 1)


def score_terms(
    params: ModelParams,
    vocab: Vocabulary,
    document: Document,
    term_ids,
    variant: str | None = None,
    enc: DocEncoding | None = None,
) -> np.ndarray:
    """Variant scores for term_ids against one document, shape (T,), float32.

    Pass a precomputed `enc` to reuse one encoding across many term batches.
    """
    variant = variant or params.config.variant
    tape = _inference_tape()
    tvars = bind(tape, params)
    if enc is None:
        enc_t, mask = encode_tokens_t(tape, tvars, params.config, document.tokens)
    else:
        enc_t, mask = tape.const(enc.matrix), enc.mask
    ids = np.asarray(term_ids, dtype=np.int64)
    if ids.size == 0:
        return np.zeros(0, dtype=tape.dtype)
    tfs, idfs, doc_len = _doc_stats(document, vocab, ids)
    out = _term_scores_t(
        tape, tvars, params.config, enc_t, mask, ids, tfs, idfs, doc_len, vocab.avgdl, variant
    )
    return out.data


def ndrm1_term_score(term_id: int, doc_enc: DocEncoding, params: ModelParams) -> float:
    """relu(w . kernel_features + b) with the term's normalized static embedding."""
    tape = _inference_tape()
    tvars = bind(tape, params)
    out = _term_scores_t(
        tape, tvars, params.config, tape.const(doc_enc.matrix), doc_enc.mask,
        np.array([term_id]), np.zeros(1), np.zeros(1), 1, 1.0, "NDRM1",
    )
    return float(out.data[0])


def ndrm2_term_score(
    term_id: int, tf: float, doc_len: int, vocab: Vocabulary, params: ModelParams
) -> float:
    """softplus(w)*idf*tf / (tf + k1*(1 - b + b*doc_len/avgdl)), BM25-shaped."""
    term = vocab.term_of(int(term_id))
    tape = _inference_tape()
    tvars = bind(tape, params)
    out = _term_scores_t(
        tape, tvars, params.config,
        tape.const(np.zeros((1, params.config.embed_dim))), np.ones(1),
        np.array([term_id]), np.array([tf], dtype=np.float64),
        np.array([idf(vocab, term or "\x00unknown")]), doc_len, vocab.avgdl, "NDRM2",
    )
    return float(out.data[0])


def ndrm3_term_score(
    term_id: int,
    doc_enc: DocEncoding,
    tf: float,
    doc_len: int,
    vocab: Vocabulary,
    params: ModelParams,
) -> float:
    """Gated blend: sigmoid(g)*ndrm1 + (1-sigmoid(g))*ndrm2."""
    term = vocab.term_of(int(term_id))
    tape = _inference_tape()
    tvars = bind(tape, params)
    out = _term_scores_t(
        tape, tvars, params.config, tape.const(doc_enc.matrix), doc_enc.mask,
        np.array([term_id]), np.array([tf], dtype=np.float64),
        np.array([idf(vocab, term or "\x00unknown")]), doc_len, vocab.avgdl, "NDRM3",
    )
    return float(out.data[0])


def scoreable_query_ids(token_ids) -> list[int]:
    """Query token ids that can contribute: PAD and out-of-vocabulary drop out."""
    return [int(t) for t in token_ids if t not in (PAD_ID, UNK_ID)]


def query_score(
    query_token_ids,
    document: Document,
    params: ModelParams,
    vocab: Vocabulary,
    variant: str | None = None,
    enc: DocEncoding | None = None,
) -> float:
    """Sum of per-term scores over query token occurrences; empty query -> 0.

    Accumulates in token order with float64, exactly like index retrieval
    sums posting impacts, so the two paths agree bitwise pre-quantization.
    """
    ids = scoreable_query_ids(query_token_ids)
    if not ids:
        return 0.0
    scores = score_terms(params, vocab, document, ids, variant=variant, enc=enc)
    total = 0.0
    for s in scores:
        total += float(s)
    return total
