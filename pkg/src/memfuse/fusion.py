"""Attentive memory fusion layer.

Fuses two per-mode feature vectors through an external slot memory:
the concatenated input addresses the memory with softmax attention,
the recalled slot is composed with the input through a gated MLP, the
result is transformed and written back (erase-then-add), and the layer
output is the residual sum of input and transformed vector, so the
output keeps the plain-concatenation shape.

Forward passes consume whole batches: every example reads the same
pre-step memory, and a single mean-aggregated write advances the state.
The backward pass returns exact vector-Jacobian products for all
parameter blocks and both inputs, treating the pre-step memory as a
constant (no gradient flows across write steps).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ParameterError, ShapeError
from .kernels import Array, Rng, concat, relu, softmax, softmax_rows

PARAM_FIELDS = ("w_read", "b_read", "w_comp", "b_comp", "w_scale")

# Slot count that carried the best benchmark accuracy; the configs here
# default to it unless the caller sweeps.
DEFAULT_SLOTS = 30

NAIVE = "naive"
MEMORY = "memory"
MEMORY_CROSS = "memory_cross"
MEMORY_SINGLE = "memory_single"
MEMORY_RESAMPLED = "memory_resampled"

_KINDS = (NAIVE, MEMORY, MEMORY_CROSS, MEMORY_SINGLE, MEMORY_RESAMPLED)


@dataclass(frozen=True)
class Variant:
    """Which fusion path to run.

    kind      one of the module-level kind constants
    mode      which input feeds a single-mode layer (1 or 2)
    out_dim   projection width for the resampled path
    """

    kind: str = MEMORY
    mode: int = 1
    out_dim: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ParameterError(f"unknown variant kind {self.kind!r}")
        if self.kind == MEMORY_SINGLE and self.mode not in (1, 2):
            raise ParameterError(f"single-mode index must be 1 or 2, got {self.mode}")
        if self.kind == MEMORY_RESAMPLED and self.out_dim < 1:
            raise ParameterError("resampled variant needs out_dim >= 1")

    @property
    def uses_memory(self) -> bool:
        return self.kind != NAIVE


def parse_variant(name: str, mode: int = 1, out_dim: int = 0) -> Variant:
    """Build a Variant from its CLI spelling (hyphens or underscores)."""
    kind = name.strip().lower().replace("-", "_")
    if kind not in _KINDS:
        raise ParameterError(f"unknown variant {name!r}; expected one of {_KINDS}")
    return Variant(kind, mode=mode, out_dim=out_dim)


@dataclass
class MemoryState:
    """The slot matrix plus its write policy.

    matrix is (slots, dim); each row is one slot.  When writes_enabled
    is false, write_memory returns the state unchanged.
    """

    matrix: Array
    writes_enabled: bool = True

    @property
    def slots(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def copy(self) -> "MemoryState":
        return MemoryState(self.matrix.copy(), self.writes_enabled)

    def frozen(self) -> "MemoryState":
        return replace(self, writes_enabled=False)


@dataclass
class FusionParams:
    """Learnable weights of one fusion layer (d = fused input width).

    w_read  (d, d)   read map applied to the fused input
    b_read  (d,)
    w_comp  (2d, d)  composer MLP over [query, recalled slot]
    b_comp  (d,)
    w_scale (d,)     elementwise transform weight before the ReLU

    Gradient containers reuse this class field-for-field.
    """

    w_read: Array
    b_read: Array
    w_comp: Array
    b_comp: Array
    w_scale: Array

    @property
    def dim(self) -> int:
        return self.b_read.shape[0]

    def zeros_like(self) -> "FusionParams":
        return FusionParams(*(np.zeros_like(getattr(self, f)) for f in PARAM_FIELDS))

    def scaled(self, factor: float) -> "FusionParams":
        return FusionParams(*(factor * getattr(self, f) for f in PARAM_FIELDS))


@dataclass
class ForwardTrace:
    """Per-batch intermediates cached for the backward pass.

    All arrays have the batch index first.  query equals fused except for
    the cross-attention path; out_raw is the pre-projection output and is
    None unless the variant resamples.
    """

    variant: Variant
    s1: int
    s2: int
    fused: Array        # (B, d)   concatenated (or single-mode) input
    query: Array        # (B, d)   composer query
    keys: Array         # (B, k)   softmax attention over slots
    recalled: Array     # (B, d)   attention-weighted slot readout
    mlp_in: Array       # (B, 2d)  [query, recalled]
    scores: Array       # (B, d)   composer MLP pre-attention output
    attn: Array         # (B, d)   softmax of scores
    gated: Array        # (B, d)   attn * scores
    pre_act: Array      # (B, d)   gated * w_scale, before the ReLU
    transformed: Array  # (B, d)   ReLU(pre_act); also the write content
    out: Array          # (B, d) or (B, out_dim)
    out_raw: Optional[Array] = None


@dataclass
class FusionBackward:
    """Cotangents returned by fusion_backward."""

    params: FusionParams
    grad_m1: Array
    grad_m2: Array
    grad_proj: Optional[Array] = None


def init_params(rng: Rng, dim: int) -> FusionParams:
    """Uniform init in +-1/sqrt(fan_in) for every block.

    The elementwise scale has fan-in 1, so it starts at full +-1 range
    and the transform path is active from the first step.
    """
    if dim < 1:
        raise ParameterError(f"layer dim must be >= 1, got {dim}")

    def block(n, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(n, -bound, bound)

    return FusionParams(
        w_read=block(dim * dim, dim).reshape(dim, dim),
        b_read=block(dim, dim),
        w_comp=block(2 * dim * dim, 2 * dim).reshape(2 * dim, dim),
        b_comp=block(dim, 2 * dim),
        w_scale=block(dim, 1),
    )


def init_memory(rng: Rng, slots: int, dim: int) -> MemoryState:
    """Fresh memory with standard-normal entries and writes enabled."""
    if slots < 1 or dim < 1:
        raise ParameterError(f"memory sizes must be >= 1, got slots={slots} dim={dim}")
    matrix = rng.normal(slots * dim).reshape(slots, dim)
    return MemoryState(matrix=matrix, writes_enabled=True)


def attention_keys(params: FusionParams, fused: Array, mem: MemoryState) -> Array:
    """Softmax distribution over slots for one fused input vector.

    Slot j scores the inner product of the mapped input (w_read^T x +
    b_read) with row j of the memory.
    """
    fused = np.asarray(fused, dtype=np.float64)
    if fused.shape != (mem.dim,):
        raise ShapeError(f"attention_keys: input {fused.shape} vs memory dim {mem.dim}")
    mapped = fused @ params.w_read + params.b_read
    return softmax(mem.matrix @ mapped)


def read_memory(keys: Array, mem: MemoryState) -> Array:
    """Convex combination of slots: sum_j keys[j] * M[j]."""
    keys = np.asarray(keys, dtype=np.float64)
    if keys.shape != (mem.slots,):
        raise ShapeError(f"read_memory: keys {keys.shape} vs {mem.slots} slots")
    return keys @ mem.matrix


def compose(params: FusionParams, query: Array, recalled: Array):
    """Composer MLP with self-attention gating.

    Returns (scores, attn, gated): scores = w_comp^T [query, recalled] +
    b_comp, attn = softmax(scores), gated = attn * scores.
    """
    query = np.asarray(query, dtype=np.float64)
    recalled = np.asarray(recalled, dtype=np.float64)
    d = params.dim
    if query.shape != (d,) or recalled.shape != (d,):
        raise ShapeError(
            f"compose: query {query.shape} / recalled {recalled.shape} vs dim {d}"
        )
    scores = np.concatenate([query, recalled]) @ params.w_comp + params.b_comp
    attn = softmax(scores)
    return scores, attn, attn * scores


def transform(params: FusionParams, gated: Array) -> Array:
    """Map the composition into the stored-feature space: relu(gated * w)."""
    gated = np.asarray(gated, dtype=np.float64)
    if gated.shape != (params.dim,):
        raise ShapeError(f"transform: input {gated.shape} vs dim {params.dim}")
    return relu(gated * params.w_scale)


def fuse_output(fused: Array, transformed: Array) -> Array:
    """Residual output: elementwise sum, keeping the concatenation shape."""
    fused = np.asarray(fused, dtype=np.float64)
    transformed = np.asarray(transformed, dtype=np.float64)
    if fused.shape != transformed.shape:
        raise ShapeError(
            f"fuse_output: shapes differ, {fused.shape} vs {transformed.shape}"
        )
    return fused + transformed


def write_memory(mem: MemoryState, batch_keys: Array, batch_values: Array) -> MemoryState:
    """Erase-then-add update, aggregated over the batch by the mean.

    Row j of the new memory is M[j] * (1 - mean_b keys[b, j]) +
    mean_b(keys[b, j] * values[b]).  With a one-example batch and a
    one-hot key this replaces exactly one row and leaves every other row
    bit-identical.  Returns a new state; the input is never mutated.
    """
    keys = np.atleast_2d(np.asarray(batch_keys, dtype=np.float64))
    values = np.atleast_2d(np.asarray(batch_values, dtype=np.float64))
    if keys.shape[0] == 0:
        raise ParameterError("write_memory: empty batch")
    if keys.shape[1] != mem.slots or values.shape[1] != mem.dim:
        raise ShapeError(
            f"write_memory: keys {keys.shape} / values {values.shape} "
            f"vs memory ({mem.slots}, {mem.dim})"
        )
    if keys.shape[0] != values.shape[0]:
        raise ShapeError("write_memory: batch sizes differ")
    if not mem.writes_enabled:
        return mem
    batch = keys.shape[0]
    erase = keys.mean(axis=0)
    add = keys.T @ values / batch
    matrix = mem.matrix * (1.0 - erase)[:, None] + add
    return MemoryState(matrix=matrix, writes_enabled=True)


def naive_fusion(batch_m1, batch_m2) -> Array:
    """Plain per-example concatenation, the no-memory baseline."""
    m1 = np.atleast_2d(np.asarray(batch_m1, dtype=np.float64))
    m2 = np.atleast_2d(np.asarray(batch_m2, dtype=np.float64))
    if m1.shape[0] != m2.shape[0]:
        raise ShapeError(
            f"naive_fusion: batch sizes differ, {m1.shape[0]} vs {m2.shape[0]}"
        )
    if m1.shape[1] == 0 or m2.shape[1] == 0:
        raise ShapeError("naive_fusion: empty mode features")
    return np.concatenate([m1, m2], axis=1)


def swap_concat(m1, m2) -> Array:
    """Order-swapped concatenation: m2's entries first."""
    return concat(m2, m1)


def resample_output(out: Array, proj: Array) -> Array:
    """Linear projection of the layer output to a different width."""
    out = np.asarray(out, dtype=np.float64)
    proj = np.asarray(proj, dtype=np.float64)
    if proj.ndim != 2 or out.shape[-1] != proj.shape[0]:
        raise ShapeError(f"resample_output: out {out.shape} vs proj {proj.shape}")
    return out @ proj


def param_count_formula(s1: int, s2: int, batch: int) -> int:
    """Closed-form size estimate: 3(s1+s2)^2 + (batch+2)(s1+s2).

    For batch 1 this coincides with param_count_actual; for larger
    batches it exceeds the learnable tensor count by (batch-1)*(s1+s2),
    a surplus no tensor in this layer accounts for.
    """
    if s1 < 1 or s2 < 1 or batch < 1:
        raise ParameterError("param_count_formula: sizes must be positive")
    d = s1 + s2
    return 3 * d * d + (batch + 2) * d


def param_count_actual(params: FusionParams) -> int:
    """Number of learnable scalars: 3d^2 + 3d.  Memory slots excluded."""
    return sum(getattr(params, f).size for f in PARAM_FIELDS)


def _check_mode_batches(batch_m1, batch_m2):
    m1 = np.atleast_2d(np.asarray(batch_m1, dtype=np.float64))
    m2 = np.atleast_2d(np.asarray(batch_m2, dtype=np.float64))
    if m1.shape[0] != m2.shape[0]:
        raise ShapeError(
            f"fusion_forward: batch sizes differ, {m1.shape[0]} vs {m2.shape[0]}"
        )
    if m1.shape[0] == 0:
        raise ParameterError("fusion_forward: empty batch")
    if m1.shape[1] == 0 or m2.shape[1] == 0:
        raise ShapeError("fusion_forward: empty mode features")
    return m1, m2


def fusion_forward(
    params: FusionParams,
    mem: MemoryState,
    variant: Variant,
    batch_m1,
    batch_m2,
    proj: Optional[Array] = None,
):
    """Run one batch through the layer.

    Returns (outputs, trace, new_memory).  Inputs may be lists of vectors
    or (B, s) arrays.  Every example reads the same pre-step memory; one
    aggregated write produces the returned state.  The naive variant has
    no trace or memory and returns (outputs, None, mem).
    """
    m1, m2 = _check_mode_batches(batch_m1, batch_m2)
    s1, s2 = m1.shape[1], m2.shape[1]

    if variant.kind == NAIVE:
        return np.concatenate([m1, m2], axis=1), None, mem

    if variant.kind == MEMORY_SINGLE:
        fused = m1 if variant.mode == 1 else m2
        query = fused
    else:
        fused = np.concatenate([m1, m2], axis=1)
        query = np.concatenate([m2, m1], axis=1) if variant.kind == MEMORY_CROSS else fused

    d = fused.shape[1]
    if mem.dim != d:
        raise ShapeError(f"fusion_forward: memory dim {mem.dim} vs input dim {d}")
    if params.dim != d:
        raise ShapeError(f"fusion_forward: params dim {params.dim} vs input dim {d}")

    mapped = fused @ params.w_read + params.b_read       # (B, d)
    keys = softmax_rows(mapped @ mem.matrix.T)           # (B, k)
    recalled = keys @ mem.matrix                         # (B, d)
    mlp_in = np.concatenate([query, recalled], axis=1)   # (B, 2d)
    scores = mlp_in @ params.w_comp + params.b_comp      # (B, d)
    attn = softmax_rows(scores)
    gated = attn * scores
    pre_act = gated * params.w_scale
    transformed = np.maximum(pre_act, 0.0)
    out = fused + transformed

    out_raw = None
    if variant.kind == MEMORY_RESAMPLED:
        if proj is None:
            raise ParameterError("resampled variant needs a projection matrix")
        out_raw = out
        out = resample_output(out, proj)

    new_mem = write_memory(mem, keys, transformed)
    trace = ForwardTrace(
        variant=variant,
        s1=s1,
        s2=s2,
        fused=fused,
        query=query,
        keys=keys,
        recalled=recalled,
        mlp_in=mlp_in,
        scores=scores,
        attn=attn,
        gated=gated,
        pre_act=pre_act,
        transformed=transformed,
        out=out,
        out_raw=out_raw,
    )
    return out, trace, new_mem


def _softmax_vjp(soft: Array, grad: Array) -> Array:
    # rows of soft are softmax outputs; standard Jacobian-transpose product
    inner = np.sum(grad * soft, axis=1, keepdims=True)
    return soft * (grad - inner)


def fusion_backward(
    params: FusionParams,
    trace: ForwardTrace,
    mem_prev: MemoryState,
    batch_grad_out,
    proj: Optional[Array] = None,
) -> FusionBackward:
    """Exact cotangents for one forward batch.

    mem_prev must be the state the forward pass read from; its contents
    are treated as constants.  Gradients flow through both the attention
    keys and the composer gate, but not into the written memory.
    """
    if trace is None:
        raise ParameterError(
            "naive fusion has no trace; use naive_backward to split the gradient"
        )
    grad_out = np.atleast_2d(np.asarray(batch_grad_out, dtype=np.float64))
    variant = trace.variant
    s1, s2 = trace.s1, trace.s2

    if grad_out.shape != trace.out.shape:
        raise ShapeError(
            f"fusion_backward: grad {grad_out.shape} vs outputs {trace.out.shape}"
        )

    grads = params.zeros_like()
    grad_proj = None

    if variant.kind == MEMORY_RESAMPLED:
        if proj is None:
            raise ParameterError("resampled variant needs its projection matrix")
        grad_proj = trace.out_raw.T @ grad_out
        grad_out = grad_out @ proj.T

    # out = fused + transformed
    grad_fused = grad_out.copy()
    grad_transformed = grad_out

    # transformed = relu(gated * w_scale)
    grad_pre = grad_transformed * (trace.pre_act > 0.0)
    grads.w_scale += np.sum(grad_pre * trace.gated, axis=0)
    grad_gated = grad_pre * params.w_scale

    # gated = attn * scores, attn = softmax(scores)
    grad_attn = grad_gated * trace.scores
    grad_scores = grad_gated * trace.attn + _softmax_vjp(trace.attn, grad_attn)

    # scores = mlp_in @ w_comp + b_comp
    grads.w_comp += trace.mlp_in.T @ grad_scores
    grads.b_comp += grad_scores.sum(axis=0)
    grad_mlp_in = grad_scores @ params.w_comp.T
    d = params.dim
    grad_query = grad_mlp_in[:, :d]
    grad_recalled = grad_mlp_in[:, d:]

    # recalled = keys @ M, keys = softmax(mapped @ M^T); M constant
    grad_keys = grad_recalled @ mem_prev.matrix.T
    grad_scores_read = _softmax_vjp(trace.keys, grad_keys)
    grad_mapped = grad_scores_read @ mem_prev.matrix

    # mapped = fused @ w_read + b_read
    grads.w_read += trace.fused.T @ grad_mapped
    grads.b_read += grad_mapped.sum(axis=0)
    grad_fused += grad_mapped @ params.w_read.T

    batch = grad_out.shape[0]
    if variant.kind == MEMORY_SINGLE:
        # the query is the fused input itself
        grad_single = grad_fused + grad_query
        if variant.mode == 1:
            grad_m1 = grad_single
            grad_m2 = np.zeros((batch, s2))
        else:
            grad_m1 = np.zeros((batch, s1))
            grad_m2 = grad_single
    else:
        grad_m1 = grad_fused[:, :s1].copy()
        grad_m2 = grad_fused[:, s1:].copy()
        if variant.kind == MEMORY_CROSS:
            # query = [m2, m1]
            grad_m2 += grad_query[:, :s2]
            grad_m1 += grad_query[:, s2:]
        else:
            grad_m1 += grad_query[:, :s1]
            grad_m2 += grad_query[:, s1:]

    return FusionBackward(params=grads, grad_m1=grad_m1, grad_m2=grad_m2, grad_proj=grad_proj)


def naive_backward(grad_out, s1: int) -> tuple[Array, Array]:
    """Backward of naive fusion: pure slicing of the output gradient."""
    grad_out = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
    return grad_out[:, :s1].copy(), grad_out[:, s1:].copy()
