"""Multimodal survival network: attention aggregation over patch embeddings,
dual cross-attention fusion with per-gene tokens, late concatenation of the
clinical vector, and a linear risk head producing one log-hazard per patient.

Forward passes record a tape of intermediates; backward passes replay the
tape with hand-derived gradients, so the module has no autodiff dependency.
Three modalities share the parameter container: the full multimodal network,
an image+gene variant without the clinical tail, and an image-only variant
that skips fusion entirely.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError, EmptyBagError, ShapeError, TapeError
from .numerics import fmat_bytes, fmat_from_bytes, rng_stream, softmax_rows

MODALITIES = ("multimodal", "imaging_genetic", "imaging")

CHECKPOINT_MAGIC = b"SFCK"


# ---------------------------------------------------------------------------
# attention primitive
# ---------------------------------------------------------------------------

@dataclass
class AttentionBlock:
    """Single-site scaled dot-product attention projections.

    w_q and w_k map query/key inputs to a shared scoring width. w_v maps key
    inputs to values; when it is None the raw key tokens themselves act as
    the values, which is what the cross-attention fusion uses (gene tokens
    are consumed directly, so a one-token key side collapses to that token).
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: Optional[np.ndarray] = None

    def __post_init__(self):
        self.w_q = np.asarray(self.w_q, dtype=np.float64)
        self.w_k = np.asarray(self.w_k, dtype=np.float64)
        if self.w_v is not None:
            self.w_v = np.asarray(self.w_v, dtype=np.float64)
        if self.w_q.ndim != 2 or self.w_k.ndim != 2:
            raise ShapeError("AttentionBlock: projections must be 2-D")
        if self.w_q.shape[1] != self.w_k.shape[1]:
            raise ShapeError(
                f"AttentionBlock: scoring widths differ, "
                f"w_q {self.w_q.shape} vs w_k {self.w_k.shape}"
            )
        for name, w in (("w_q", self.w_q), ("w_k", self.w_k), ("w_v", self.w_v)):
            if w is not None and not np.isfinite(w).all():
                raise DomainError(f"AttentionBlock: non-finite entries in {name}")

    @property
    def scale(self) -> float:
        return 1.0 / np.sqrt(self.w_q.shape[1])


@dataclass
class AttnTape:
    queries_in: np.ndarray
    keys_in: np.ndarray
    q: np.ndarray
    k: np.ndarray
    attn: np.ndarray
    values: np.ndarray


def attend(block: AttentionBlock, queries_in, keys_in):
    """out_i = sum_j softmax_j(q_i . k_j * scale) * v_j, with the tape."""
    queries_in = np.asarray(queries_in, dtype=np.float64)
    keys_in = np.asarray(keys_in, dtype=np.float64)
    if queries_in.shape[0] == 0:
        raise EmptyBagError("attend: no query tokens")
    if keys_in.shape[0] == 0:
        raise EmptyBagError("attend: no key tokens")
    q = queries_in @ block.w_q
    k = keys_in @ block.w_k
    attn = softmax_rows((q @ k.T) * block.scale)
    values = keys_in if block.w_v is None else keys_in @ block.w_v
    out = attn @ values
    return out, AttnTape(queries_in, keys_in, q, k, attn, values)


def attend_backward(block: AttentionBlock, tape: AttnTape, d_out):
    """Gradients of attend. Returns (d_queries_in, d_keys_in, weight grads).

    The softmax Jacobian contracts row-wise:
    d_score_ij = a_ij * (d_attn_ij - sum_k d_attn_ik * a_ik).
    """
    d_out = np.asarray(d_out, dtype=np.float64)
    attn = tape.attn
    d_attn = d_out @ tape.values.T
    d_values = attn.T @ d_out
    d_scores = attn * (d_attn - (d_attn * attn).sum(axis=1, keepdims=True))
    d_q = d_scores @ tape.k * block.scale
    d_k = d_scores.T @ tape.q * block.scale
    weight_grads = {
        "w_q": tape.queries_in.T @ d_q,
        "w_k": tape.keys_in.T @ d_k,
    }
    d_queries_in = d_q @ block.w_q.T
    d_keys_in = d_k @ block.w_k.T
    if block.w_v is None:
        d_keys_in = d_keys_in + d_values
    else:
        weight_grads["w_v"] = tape.keys_in.T @ d_values
        d_keys_in = d_keys_in + d_values @ block.w_v.T
    return d_queries_in, d_keys_in, weight_grads


# ---------------------------------------------------------------------------
# aggregation and fusion layers
# ---------------------------------------------------------------------------

def self_attend_aggregate(tokens, block: AttentionBlock):
    """Attend tokens over themselves, then mean-pool to one row.

    With a single token the softmax is 1 and the result is that token's
    value vector; with w_q = 0 every score ties and the pool is the plain
    mean of the values.
    """
    out, tape = attend(block, tokens, tokens)
    patient_vec = out.mean(axis=0, keepdims=True)
    return patient_vec, tape


def self_attend_aggregate_backward(block: AttentionBlock, tape: AttnTape,
                                   d_patient_vec):
    n = tape.queries_in.shape[0]
    d_out = np.repeat(np.asarray(d_patient_vec, dtype=np.float64), n, axis=0) / n
    d_q_in, d_k_in, weight_grads = attend_backward(block, tape, d_out)
    # queries and keys were the same array; their gradients accumulate
    return d_q_in + d_k_in, weight_grads


@dataclass
class CrossTape:
    ig: AttnTape
    gi: AttnTape


def dual_cross_attend(img_tokens, gene_tokens, block_ig: AttentionBlock,
                      block_gi: AttentionBlock):
    """Fuse the two modalities by attending each over the other.

    The image->gene branch queries with image tokens and consumes raw gene
    tokens as values; the gene->image branch does the converse. Each branch
    is mean-pooled over its queries and the two pooled rows are
    concatenated, so the fused vector is twice the token width.
    """
    ig_out, ig_tape = attend(block_ig, img_tokens, gene_tokens)
    gi_out, gi_tape = attend(block_gi, gene_tokens, img_tokens)
    fused = np.concatenate(
        [ig_out.mean(axis=0, keepdims=True), gi_out.mean(axis=0, keepdims=True)],
        axis=1,
    )
    return fused, CrossTape(ig_tape, gi_tape)


def dual_cross_attend_backward(block_ig, block_gi, tape: CrossTape, d_fused):
    d_fused = np.asarray(d_fused, dtype=np.float64)
    d = d_fused.shape[1] // 2
    n = tape.ig.queries_in.shape[0]
    m = tape.gi.queries_in.shape[0]
    d_ig_out = np.repeat(d_fused[:, :d], n, axis=0) / n
    d_gi_out = np.repeat(d_fused[:, d:], m, axis=0) / m
    d_img_q, d_gene_kv, ig_grads = attend_backward(block_ig, tape.ig, d_ig_out)
    d_gene_q, d_img_kv, gi_grads = attend_backward(block_gi, tape.gi, d_gi_out)
    return d_img_q + d_img_kv, d_gene_kv + d_gene_q, ig_grads, gi_grads


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------

@dataclass
class ModelParams:
    """All learnable arrays, grouped by pipeline stage.

    The modality picks which stages run: "imaging" stops after aggregation,
    "imaging_genetic" adds cross-attention fusion, "multimodal" also
    concatenates the clinical vector before the head. Unused stages hold
    None.
    """

    modality: str
    img_proj: np.ndarray
    img_bias: np.ndarray
    self_attn: AttentionBlock
    head_w: np.ndarray
    head_b: np.ndarray
    gene_proj: Optional[np.ndarray] = None
    gene_bias: Optional[np.ndarray] = None
    cross_ig: Optional[AttentionBlock] = None
    cross_gi: Optional[AttentionBlock] = None

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise DomainError(f"ModelParams: unknown modality {self.modality!r}")
        if self.uses_genes and (self.gene_proj is None or self.cross_ig is None
                                or self.cross_gi is None):
            raise DomainError(
                f"ModelParams: modality {self.modality!r} needs gene stages"
            )

    @property
    def uses_genes(self) -> bool:
        return self.modality in ("multimodal", "imaging_genetic")

    @property
    def uses_clinical(self) -> bool:
        return self.modality == "multimodal"

    @property
    def d_img(self) -> int:
        return self.img_proj.shape[0]

    @property
    def d(self) -> int:
        return self.img_proj.shape[1]

    @property
    def n_genes(self) -> int:
        return 0 if self.gene_proj is None else self.gene_proj.shape[0]

    @property
    def d_clin(self) -> int:
        fused = 2 * self.d if self.uses_genes else self.d
        return self.head_w.shape[0] - fused

    def named_arrays(self):
        """(name, array, decay) triples in a fixed order.

        The order is the optimizer's and the checkpoint's canonical layout.
        Biases are flagged decay-exempt.
        """
        entries = [
            ("img_proj", self.img_proj, True),
            ("img_bias", self.img_bias, False),
            ("self_attn.w_q", self.self_attn.w_q, True),
            ("self_attn.w_k", self.self_attn.w_k, True),
            ("self_attn.w_v", self.self_attn.w_v, True),
        ]
        if self.uses_genes:
            entries += [
                ("gene_proj", self.gene_proj, True),
                ("gene_bias", self.gene_bias, False),
                ("cross_ig.w_q", self.cross_ig.w_q, True),
                ("cross_ig.w_k", self.cross_ig.w_k, True),
                ("cross_gi.w_q", self.cross_gi.w_q, True),
                ("cross_gi.w_k", self.cross_gi.w_k, True),
            ]
        entries += [
            ("head_w", self.head_w, True),
            ("head_b", self.head_b, False),
        ]
        return entries

    def set_array(self, name: str, value: np.ndarray):
        if "." in name:
            attr, leaf = name.split(".", 1)
            setattr(getattr(self, attr), leaf, value)
        else:
            setattr(self, name, value)


def _fingerprint(params: ModelParams):
    return tuple(
        (name, arr.shape, float(arr.sum()), float(np.abs(arr).sum()))
        for name, arr, _ in params.named_arrays()
    )


@dataclass
class ForwardTape:
    """Everything backward needs, plus a parameter fingerprint so a tape
    cannot silently be replayed against mutated weights."""

    patches: np.ndarray
    tokens: np.ndarray
    self_tape: AttnTape
    patient_vec: np.ndarray
    head_in: np.ndarray
    fingerprint: tuple = field(repr=False, default=())
    gene_values: Optional[np.ndarray] = None
    gene_tokens: Optional[np.ndarray] = None
    cross_tape: Optional[CrossTape] = None


def forward(params: ModelParams, patient):
    """Log-hazard for one patient record; returns (value, tape).

    The record needs patch_embeddings (n x d_img), gene_expr (one value per
    gene row) and clinical (d_clin), matching the parameter shapes; a
    mismatch raises a shape error naming the stage.
    """
    x = np.asarray(patient.patch_embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("forward: patch_embeddings must be an n x d_img matrix")
    if x.shape[0] == 0:
        raise EmptyBagError("forward: patient has no patches")
    if x.shape[1] != params.d_img:
        raise ShapeError(
            f"patch projection: embeddings have width {x.shape[1]}, "
            f"img_proj expects {params.d_img}"
        )
    tokens = x @ params.img_proj + params.img_bias
    patient_vec, self_tape = self_attend_aggregate(tokens, params.self_attn)

    tape = ForwardTape(x, tokens, self_tape, patient_vec, head_in=None,
                       fingerprint=_fingerprint(params))

    if params.uses_genes:
        g = np.asarray(patient.gene_expr, dtype=np.float64).ravel()
        if g.size != params.n_genes:
            raise ShapeError(
                f"gene tokenization: {g.size} gene values, "
                f"gene_proj expects {params.n_genes}"
            )
        gene_tokens = g[:, None] * params.gene_proj + params.gene_bias
        fused, cross_tape = dual_cross_attend(
            patient_vec, gene_tokens, params.cross_ig, params.cross_gi
        )
        tape.gene_values = g
        tape.gene_tokens = gene_tokens
        tape.cross_tape = cross_tape
    else:
        fused = patient_vec

    if params.uses_clinical:
        c = np.asarray(patient.clinical, dtype=np.float64).ravel()
        if c.size != params.d_clin:
            raise ShapeError(
                f"risk head: {c.size} clinical values, head expects {params.d_clin}"
            )
        head_in = np.concatenate([fused, c[None, :]], axis=1)
    else:
        head_in = fused
    if head_in.shape[1] != params.head_w.shape[0]:
        raise ShapeError(
            f"risk head: input width {head_in.shape[1]}, "
            f"head_w expects {params.head_w.shape[0]}"
        )
    tape.head_in = head_in
    log_hazard = float((head_in @ params.head_w)[0, 0] + params.head_b[0])
    return log_hazard, tape


def backward(params: ModelParams, tape: ForwardTape, upstream_grad: float = 1.0):
    """Gradient of upstream_grad * log_hazard w.r.t. every parameter array.

    Returns a dict keyed like named_arrays(). Raises a tape error when the
    tape was recorded under different parameter values.
    """
    if tape.fingerprint != _fingerprint(params):
        raise TapeError("backward: tape does not match current parameters")
    u = float(upstream_grad)

    grads = {}
    grads["head_w"] = tape.head_in.T * u
    grads["head_b"] = np.array([u])
    d_head_in = u * params.head_w.T

    fused_width = 2 * params.d if params.uses_genes else params.d
    d_fused = d_head_in[:, :fused_width]

    if params.uses_genes:
        d_patient_vec, d_gene_tokens, ig_grads, gi_grads = dual_cross_attend_backward(
            params.cross_ig, params.cross_gi, tape.cross_tape, d_fused
        )
        grads["cross_ig.w_q"] = ig_grads["w_q"]
        grads["cross_ig.w_k"] = ig_grads["w_k"]
        grads["cross_gi.w_q"] = gi_grads["w_q"]
        grads["cross_gi.w_k"] = gi_grads["w_k"]
        grads["gene_proj"] = tape.gene_values[:, None] * d_gene_tokens
        grads["gene_bias"] = d_gene_tokens.sum(axis=0)
    else:
        d_patient_vec = d_fused

    d_tokens, self_grads = self_attend_aggregate_backward(
        params.self_attn, tape.self_tape, d_patient_vec
    )
    grads["self_attn.w_q"] = self_grads["w_q"]
    grads["self_attn.w_k"] = self_grads["w_k"]
    grads["self_attn.w_v"] = self_grads["w_v"]
    grads["img_proj"] = tape.patches.T @ d_tokens
    grads["img_bias"] = d_tokens.sum(axis=0)
    return grads


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def _xavier(rng, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(d_img: int, d: int, n_genes: int = 50, d_clin: int = 4,
                seed: int = 0, modality: str = "multimodal",
                d_attn: Optional[int] = None) -> ModelParams:
    """Xavier-uniform initial parameters, biases zero, one RNG stream.

    d_attn is the scoring width of every attention block (defaults to d);
    value projections keep width d so the token width is preserved through
    aggregation.
    """
    if modality not in MODALITIES:
        raise DomainError(f"init_params: unknown modality {modality!r}")
    if min(d_img, d) < 1 or (d_attn is not None and d_attn < 1):
        raise DomainError("init_params: dimensions must be positive")
    d_attn = d if d_attn is None else d_attn
    rng = rng_stream(seed, stream=17)

    img_proj = _xavier(rng, d_img, d)
    self_attn = AttentionBlock(
        _xavier(rng, d, d_attn), _xavier(rng, d, d_attn), _xavier(rng, d, d)
    )
    gene_proj = gene_bias = cross_ig = cross_gi = None
    uses_genes = modality in ("multimodal", "imaging_genetic")
    if uses_genes:
        gene_proj = _xavier(rng, n_genes, d)
        gene_bias = np.zeros(d)
        cross_ig = AttentionBlock(_xavier(rng, d, d_attn), _xavier(rng, d, d_attn))
        cross_gi = AttentionBlock(_xavier(rng, d, d_attn), _xavier(rng, d, d_attn))
    fused_width = 2 * d if uses_genes else d
    head_width = fused_width + (d_clin if modality == "multimodal" else 0)
    head_w = _xavier(rng, head_width, 1)

    return ModelParams(
        modality=modality,
        img_proj=img_proj,
        img_bias=np.zeros(d),
        self_attn=self_attn,
        head_w=head_w,
        head_b=np.zeros(1),
        gene_proj=gene_proj,
        gene_bias=gene_bias,
        cross_ig=cross_ig,
        cross_gi=cross_gi,
    )


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, extra: Optional[dict] = None):
    """Write parameters as concatenated matrix blobs behind a JSON header.

    Layout: 4-byte magic, u64 little-endian header length, UTF-8 JSON
    header, then the blobs. The header records each array's name, shape and
    byte offset (relative to the blob region) plus caller-provided metadata
    such as the training config and seed.
    """
    arrays = []
    blobs = []
    offset = 0
    for name, arr, _ in params.named_arrays():
        mat = np.atleast_2d(np.asarray(arr, dtype=np.float64))
        blob = fmat_bytes(mat)
        arrays.append({
            "name": name,
            "rows": int(mat.shape[0]),
            "cols": int(mat.shape[1]),
            "vector": int(np.asarray(arr).ndim == 1),
            "offset": offset,
            "length": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    header = {
        "schema_version": 1,
        "modality": params.modality,
        "arrays": arrays,
        "extra": dict(extra or {}),
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Inverse of save_checkpoint. Returns (params, extra)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise DomainError(f"checkpoint {path}: bad magic {raw[:4]!r}")
    (header_len,) = struct.unpack("<Q", raw[4:12])
    header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    blob_start = 12 + header_len

    loaded = {}
    for entry in header["arrays"]:
        start = blob_start + entry["offset"]
        mat = fmat_from_bytes(raw[start:start + entry["length"]])
        if mat.shape != (entry["rows"], entry["cols"]):
            raise DomainError(
                f"checkpoint {path}: array {entry['name']} has shape "
                f"{mat.shape}, header says {(entry['rows'], entry['cols'])}"
            )
        loaded[entry["name"]] = mat[0] if entry["vector"] else mat

    modality = header["modality"]
    uses_genes = modality in ("multimodal", "imaging_genetic")
    params = ModelParams(
        modality=modality,
        img_proj=loaded["img_proj"],
        img_bias=loaded["img_bias"],
        self_attn=AttentionBlock(
            loaded["self_attn.w_q"], loaded["self_attn.w_k"], loaded["self_attn.w_v"]
        ),
        head_w=loaded["head_w"],
        head_b=loaded["head_b"],
        gene_proj=loaded.get("gene_proj"),
        gene_bias=loaded.get("gene_bias"),
        cross_ig=AttentionBlock(loaded["cross_ig.w_q"], loaded["cross_ig.w_k"])
        if uses_genes else None,
        cross_gi=AttentionBlock(loaded["cross_gi.w_q"], loaded["cross_gi.w_k"])
        if uses_genes else None,
    )
    return params, header.get("extra", {})
