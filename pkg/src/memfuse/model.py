"""Trainable classifier around a fusion variant.

Pipeline: optional one-layer ReLU encoder per mode, the configured
fusion path, a ReLU hidden head with inverted dropout, and a linear
layer to class logits trained with softmax cross-entropy under Adam.

All where-the-memory-lives bookkeeping is handled here: the standard
memory variants own one slot matrix, the single-mode variant owns one
independent layer (and memory) per mode and concatenates their outputs,
and the naive variant owns nothing.  Training consumes the stream in
order, full batches only; the memory persists across batches and, by
default, across epochs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import NumericError, ParameterError, ShapeError
from .fusion import (
    DEFAULT_SLOTS,
    MEMORY_RESAMPLED,
    MEMORY_SINGLE,
    NAIVE,
    PARAM_FIELDS,
    ForwardTrace,
    FusionParams,
    MemoryState,
    Variant,
    fusion_backward,
    fusion_forward,
    init_memory,
    init_params,
    naive_backward,
    parse_variant,
)
from .kernels import Array, Rng, softmax
from .metrics import MetricsReport, report_from_labels
from .synthdata import Sample, stack


@dataclass
class ClassifierConfig:
    variant: str = "memory"
    out_dim: int = 0              # resampled output width
    encoder_hidden: int = 0       # 0 keeps raw features
    head_hidden: int = 32
    classes: int = 3
    dropout_rate: float = 0.0
    slots: int = DEFAULT_SLOTS
    lr: float = 1e-3
    batch: int = 32
    epochs: int = 10
    seed: int = 0
    reset_memory_each_epoch: bool = False
    freeze_eval_writes: bool = False
    # Warm-start policy for the memory loop.  A large uniform read bias
    # makes slot addressing start sharply peaked, so one row acts as a
    # constantly rewritten pointer and reads return near-fresh content
    # instead of a long, stale slot average.  The transform gain keeps
    # written vectors near the memory's own unit scale despite the 1/d
    # attenuation of the softmax gate.  Both stay fully learnable; zero
    # bias / unit gain fall back to the plain small-uniform init.
    read_bias_init: float = 32.0
    transform_gain: float = 16.0

    def __post_init__(self):
        self.variant = self.variant.strip().lower().replace("-", "_")
        if self.classes < 2:
            raise ParameterError(f"classes must be >= 2, got {self.classes}")
        if self.lr < 0:
            raise ParameterError(f"lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ParameterError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.batch < 1 or self.epochs < 0 or self.slots < 1:
            raise ParameterError("batch and slots must be >= 1, epochs >= 0")
        if self.variant == MEMORY_RESAMPLED and self.out_dim < 1:
            raise ParameterError("resampled variant needs out_dim >= 1")
        if self.read_bias_init < 0 or self.transform_gain <= 0:
            raise ParameterError("read_bias_init must be >= 0 and transform_gain > 0")
        parse_variant(self.variant, out_dim=self.out_dim)  # validates the kind

    def layer_variants(self) -> List[Variant]:
        if self.variant == NAIVE:
            return []
        if self.variant == MEMORY_SINGLE:
            return [Variant(MEMORY_SINGLE, mode=1), Variant(MEMORY_SINGLE, mode=2)]
        if self.variant == MEMORY_RESAMPLED:
            return [Variant(MEMORY_RESAMPLED, out_dim=self.out_dim)]
        return [Variant(self.variant)]


@dataclass
class ModelParams:
    head1_w: Array
    head1_b: Array
    head2_w: Array
    head2_b: Array
    enc1_w: Optional[Array] = None
    enc1_b: Optional[Array] = None
    enc2_w: Optional[Array] = None
    enc2_b: Optional[Array] = None
    fusion_layers: List[FusionParams] = field(default_factory=list)
    proj: Optional[Array] = None

    def named(self) -> Dict[str, Array]:
        """Flat name -> array view of every learnable block, fixed order."""
        out: Dict[str, Array] = {}
        if self.enc1_w is not None:
            out["enc1_w"] = self.enc1_w
            out["enc1_b"] = self.enc1_b
            out["enc2_w"] = self.enc2_w
            out["enc2_b"] = self.enc2_b
        for i, fp in enumerate(self.fusion_layers):
            for name in PARAM_FIELDS:
                out[f"fusion{i}.{name}"] = getattr(fp, name)
        if self.proj is not None:
            out["proj"] = self.proj
        out["head1_w"] = self.head1_w
        out["head1_b"] = self.head1_b
        out["head2_w"] = self.head2_w
        out["head2_b"] = self.head2_b
        return out

    def with_named(self, arrays: Dict[str, Array]) -> "ModelParams":
        """Rebuild with the given arrays substituted (shapes must match)."""
        fusion_layers = [
            FusionParams(**{f: arrays[f"fusion{i}.{f}"] for f in PARAM_FIELDS})
            for i in range(len(self.fusion_layers))
        ]
        return ModelParams(
            head1_w=arrays["head1_w"],
            head1_b=arrays["head1_b"],
            head2_w=arrays["head2_w"],
            head2_b=arrays["head2_b"],
            enc1_w=arrays.get("enc1_w"),
            enc1_b=arrays.get("enc1_b"),
            enc2_w=arrays.get("enc2_w"),
            enc2_b=arrays.get("enc2_b"),
            fusion_layers=fusion_layers,
            proj=arrays.get("proj"),
        )


@dataclass
class TrainState:
    config: ClassifierConfig
    s1: int
    s2: int
    params: ModelParams
    memories: List[MemoryState]
    adam_m: Dict[str, Array]
    adam_v: Dict[str, Array]
    step: int
    drop_rng: Rng
    mem_seed: int


def _encoded_dims(config: ClassifierConfig, s1: int, s2: int) -> Tuple[int, int]:
    e = config.encoder_hidden
    return (e, e) if e > 0 else (s1, s2)


def head_input_dim(config: ClassifierConfig, s1: int, s2: int) -> int:
    e1, e2 = _encoded_dims(config, s1, s2)
    if config.variant == MEMORY_RESAMPLED:
        return config.out_dim
    return e1 + e2


def build_state(config: ClassifierConfig, s1: int, s2: int, init_seed: Optional[int] = None) -> TrainState:
    """Draw all parameters and memories for a fresh training run."""
    seed = config.seed if init_seed is None else init_seed
    rng = Rng(seed)
    prng = rng.split(1)
    mem_seed = int(rng.split(2).integers(1, 2**62)[0])
    drop_rng = rng.split(3)

    def linear(rin: Rng, n_in: int, n_out: int) -> Tuple[Array, Array]:
        bound = 1.0 / np.sqrt(n_in)
        w = rin.uniform(n_in * n_out, -bound, bound).reshape(n_in, n_out)
        b = rin.uniform(n_out, -bound, bound)
        return w, b

    e1, e2 = _encoded_dims(config, s1, s2)
    enc1_w = enc1_b = enc2_w = enc2_b = None
    if config.encoder_hidden > 0:
        enc1_w, enc1_b = linear(prng.split(10), s1, config.encoder_hidden)
        enc2_w, enc2_b = linear(prng.split(11), s2, config.encoder_hidden)

    variants = config.layer_variants()
    fusion_layers = []
    for i, var in enumerate(variants):
        d = e1 if var.kind == MEMORY_SINGLE and var.mode == 1 else (
            e2 if var.kind == MEMORY_SINGLE else e1 + e2
        )
        layer_rng = prng.split(20 + i)
        fp = init_params(layer_rng, d)
        if config.read_bias_init > 0:
            fp.b_read[:] = layer_rng.uniform(
                d, -config.read_bias_init, config.read_bias_init
            )
        fp.w_scale *= config.transform_gain
        fusion_layers.append(fp)

    proj = None
    if config.variant == MEMORY_RESAMPLED:
        d = e1 + e2
        bound = 1.0 / np.sqrt(d)
        proj = prng.split(30).uniform(d * config.out_dim, -bound, bound).reshape(d, config.out_dim)

    fused_dim = head_input_dim(config, s1, s2)
    head1_w, head1_b = linear(prng.split(40), fused_dim, config.head_hidden)
    head2_w, head2_b = linear(prng.split(41), config.head_hidden, config.classes)

    params = ModelParams(
        head1_w=head1_w,
        head1_b=head1_b,
        head2_w=head2_w,
        head2_b=head2_b,
        enc1_w=enc1_w,
        enc1_b=enc1_b,
        enc2_w=enc2_w,
        enc2_b=enc2_b,
        fusion_layers=fusion_layers,
        proj=proj,
    )

    memories = _fresh_memories(config, e1, e2, mem_seed)
    named = params.named()
    return TrainState(
        config=config,
        s1=s1,
        s2=s2,
        params=params,
        memories=memories,
        adam_m={k: np.zeros_like(v) for k, v in named.items()},
        adam_v={k: np.zeros_like(v) for k, v in named.items()},
        step=0,
        drop_rng=drop_rng,
        mem_seed=mem_seed,
    )


def _fresh_memories(config: ClassifierConfig, e1: int, e2: int, mem_seed: int, epoch: int = 0) -> List[MemoryState]:
    mrng = Rng(mem_seed).split(epoch)
    memories = []
    for i, var in enumerate(config.layer_variants()):
        d = e1 if var.kind == MEMORY_SINGLE and var.mode == 1 else (
            e2 if var.kind == MEMORY_SINGLE else e1 + e2
        )
        memories.append(init_memory(mrng.split(i), config.slots, d))
    return memories


@dataclass
class BatchCache:
    enc1: Array
    enc2: Array
    pre1: Optional[Array]
    pre2: Optional[Array]
    traces: List[Optional[ForwardTrace]]
    mem_prev: List[MemoryState]
    new_memories: List[MemoryState]
    fused_out: Array
    hid_pre: Array
    hid: Array
    drop_mask: Optional[Array]
    hid_dropped: Array
    logits: Array


def encode(params: ModelParams, m1: Array, m2: Array):
    """Per-mode dense+ReLU encoders; identity when none are configured.

    Returns (enc1, enc2, pre1, pre2) with the pre-activations kept for
    the backward pass (None under the identity encoder).
    """
    m1 = np.atleast_2d(np.asarray(m1, dtype=np.float64))
    m2 = np.atleast_2d(np.asarray(m2, dtype=np.float64))
    if params.enc1_w is None:
        return m1, m2, None, None
    pre1 = m1 @ params.enc1_w + params.enc1_b
    pre2 = m2 @ params.enc2_w + params.enc2_b
    return np.maximum(pre1, 0.0), np.maximum(pre2, 0.0), pre1, pre2


def head_forward(params: ModelParams, fused: Array, drop_mask: Optional[Array] = None):
    """Hidden ReLU layer (with optional inverted-dropout mask) to logits.

    Returns (logits, hid_pre, hid, hid_dropped).
    """
    fused = np.atleast_2d(np.asarray(fused, dtype=np.float64))
    hid_pre = fused @ params.head1_w + params.head1_b
    hid = np.maximum(hid_pre, 0.0)
    hid_dropped = hid if drop_mask is None else hid * drop_mask
    logits = hid_dropped @ params.head2_w + params.head2_b
    return logits, hid_pre, hid, hid_dropped


def forward_logits(
    config: ClassifierConfig,
    params: ModelParams,
    memories: List[MemoryState],
    m1: Array,
    m2: Array,
    drop_mask: Optional[Array] = None,
) -> Tuple[Array, BatchCache]:
    """Pure forward pass over one batch; never mutates the given memories."""
    enc1, enc2, pre1, pre2 = encode(params, m1, m2)

    variants = config.layer_variants()
    traces: List[Optional[ForwardTrace]] = []
    new_memories: List[MemoryState] = []
    if config.variant == NAIVE:
        fused_out = np.concatenate([enc1, enc2], axis=1)
    elif config.variant == MEMORY_SINGLE:
        out1, tr1, nm1 = fusion_forward(params.fusion_layers[0], memories[0], variants[0], enc1, enc2)
        out2, tr2, nm2 = fusion_forward(params.fusion_layers[1], memories[1], variants[1], enc1, enc2)
        fused_out = np.concatenate([out1, out2], axis=1)
        traces = [tr1, tr2]
        new_memories = [nm1, nm2]
    else:
        out, tr, nm = fusion_forward(
            params.fusion_layers[0], memories[0], variants[0], enc1, enc2, proj=params.proj
        )
        fused_out = out
        traces = [tr]
        new_memories = [nm]

    logits, hid_pre, hid, hid_dropped = head_forward(params, fused_out, drop_mask)

    cache = BatchCache(
        enc1=enc1,
        enc2=enc2,
        pre1=pre1,
        pre2=pre2,
        traces=traces,
        mem_prev=list(memories),
        new_memories=new_memories or list(memories),
        fused_out=fused_out,
        hid_pre=hid_pre,
        hid=hid,
        drop_mask=drop_mask,
        hid_dropped=hid_dropped,
        logits=logits,
    )
    return logits, cache


def cross_entropy(logits: Array, label: int) -> Tuple[float, Array]:
    """Single-example softmax cross-entropy and its logit gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ShapeError(f"cross_entropy: logits must be 1-D, got {logits.shape}")
    if not 0 <= label < logits.size:
        raise ParameterError(f"cross_entropy: label {label} out of range for {logits.size} classes")
    probs = softmax(logits)
    loss = -float(np.log(probs[label]))
    grad = probs.copy()
    grad[label] -= 1.0
    return loss, grad


def cross_entropy_batch(logits: Array, labels: Array) -> Tuple[float, Array]:
    """Mean cross-entropy over a batch and the gradient of that mean."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    batch, classes = logits.shape
    if labels.shape != (batch,):
        raise ShapeError(f"cross_entropy_batch: labels {labels.shape} vs batch {batch}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ParameterError("cross_entropy_batch: label out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(batch)
    loss = float(np.mean(log_z - shifted[rows, labels]))
    probs = np.exp(shifted - log_z[:, None])
    grad = probs
    grad[rows, labels] -= 1.0
    return loss, grad / batch


def backward_batch(
    config: ClassifierConfig,
    params: ModelParams,
    cache: BatchCache,
    grad_logits: Array,
    m1: Array,
    m2: Array,
) -> Dict[str, Array]:
    """Gradients of the batch loss for every named parameter array."""
    grads: Dict[str, Array] = {}

    grads["head2_w"] = cache.hid_dropped.T @ grad_logits
    grads["head2_b"] = grad_logits.sum(axis=0)
    grad_hid_dropped = grad_logits @ params.head2_w.T
    grad_hid = grad_hid_dropped if cache.drop_mask is None else grad_hid_dropped * cache.drop_mask
    grad_hid_pre = grad_hid * (cache.hid_pre > 0.0)
    grads["head1_w"] = cache.fused_out.T @ grad_hid_pre
    grads["head1_b"] = grad_hid_pre.sum(axis=0)
    grad_fused = grad_hid_pre @ params.head1_w.T

    if config.variant == NAIVE:
        e1 = cache.enc1.shape[1]
        grad_enc1, grad_enc2 = naive_backward(grad_fused, e1)
    elif config.variant == MEMORY_SINGLE:
        e1 = cache.enc1.shape[1]
        bwd1 = fusion_backward(
            params.fusion_layers[0], cache.traces[0], cache.mem_prev[0], grad_fused[:, :e1]
        )
        bwd2 = fusion_backward(
            params.fusion_layers[1], cache.traces[1], cache.mem_prev[1], grad_fused[:, e1:]
        )
        for name in PARAM_FIELDS:
            grads[f"fusion0.{name}"] = getattr(bwd1.params, name)
            grads[f"fusion1.{name}"] = getattr(bwd2.params, name)
        grad_enc1 = bwd1.grad_m1 + bwd2.grad_m1
        grad_enc2 = bwd1.grad_m2 + bwd2.grad_m2
    else:
        bwd = fusion_backward(
            params.fusion_layers[0], cache.traces[0], cache.mem_prev[0], grad_fused,
            proj=params.proj,
        )
        for name in PARAM_FIELDS:
            grads[f"fusion0.{name}"] = getattr(bwd.params, name)
        if bwd.grad_proj is not None:
            grads["proj"] = bwd.grad_proj
        grad_enc1, grad_enc2 = bwd.grad_m1, bwd.grad_m2

    if params.enc1_w is not None:
        grad_pre1 = grad_enc1 * (cache.pre1 > 0.0)
        grads["enc1_w"] = np.asarray(m1, dtype=np.float64).T @ grad_pre1
        grads["enc1_b"] = grad_pre1.sum(axis=0)
        grad_pre2 = grad_enc2 * (cache.pre2 > 0.0)
        grads["enc2_w"] = np.asarray(m2, dtype=np.float64).T @ grad_pre2
        grads["enc2_b"] = grad_pre2.sum(axis=0)

    return grads


def loss_and_grads(state: TrainState, m1: Array, m2: Array, labels: Array):
    """Loss, full gradient dict, and the cache for one batch (no dropout)."""
    logits, cache = forward_logits(state.config, state.params, state.memories, m1, m2)
    loss, grad_logits = cross_entropy_batch(logits, labels)
    grads = backward_batch(state.config, state.params, cache, grad_logits, m1, m2)
    return loss, grads, cache


def loss_with_overrides(state: TrainState, arrays: Dict[str, Array], m1, m2, labels) -> float:
    """Loss at substituted parameter values (finite-difference hook)."""
    params = state.params.with_named(arrays)
    logits, _ = forward_logits(state.config, params, state.memories, m1, m2)
    return cross_entropy_batch(logits, labels)[0]


def relu_margins_ok(cache: BatchCache, margin: float) -> bool:
    """True when every ReLU pre-activation sits clear of its kink."""
    pres = [cache.hid_pre]
    if cache.pre1 is not None:
        pres += [cache.pre1, cache.pre2]
    for tr in cache.traces:
        if tr is not None:
            pres.append(tr.pre_act)
    return all(np.abs(p).min() >= margin for p in pres if p.size)


def adam_step(
    state: TrainState,
    grads: Dict[str, Array],
    lr: Optional[float] = None,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> TrainState:
    """Bias-corrected Adam update, in place on the state's parameters."""
    lr = state.config.lr if lr is None else lr
    named = state.params.named()
    state.step += 1
    t = state.step
    for key, p in named.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: grad {key} has shape {g.shape}, want {p.shape}")
        m = state.adam_m[key]
        v = state.adam_v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def _as_arrays(dataset) -> Tuple[Array, Array, Array]:
    if isinstance(dataset, tuple) and len(dataset) == 3:
        return dataset
    if isinstance(dataset, list) and dataset and isinstance(dataset[0], Sample):
        return stack(dataset)
    raise ParameterError("dataset must be a (m1, m2, labels) tuple or a list of samples")


def train_epoch(state: TrainState, dataset) -> Tuple[TrainState, float]:
    """One pass over the stream in order, full batches only.

    The ragged tail (fewer than `batch` examples) is dropped; the memory
    advances through every processed batch.  Returns the mean batch loss.
    """
    m1_all, m2_all, y_all = _as_arrays(dataset)
    n = m1_all.shape[0]
    if n == 0:
        raise ParameterError("train_epoch: empty dataset")
    cfg = state.config
    n_batches = n // cfg.batch
    if n_batches == 0:
        raise ParameterError(
            f"train_epoch: dataset of {n} smaller than one batch of {cfg.batch}"
        )

    total = 0.0
    for b in range(n_batches):
        sl = slice(b * cfg.batch, (b + 1) * cfg.batch)
        m1, m2, y = m1_all[sl], m2_all[sl], y_all[sl]
        drop_mask = None
        if cfg.dropout_rate > 0.0:
            keep = state.drop_rng.uniform(cfg.batch * cfg.head_hidden).reshape(
                cfg.batch, cfg.head_hidden
            ) >= cfg.dropout_rate
            drop_mask = keep / (1.0 - cfg.dropout_rate)
        logits, cache = forward_logits(cfg, state.params, state.memories, m1, m2, drop_mask)
        loss, grad_logits = cross_entropy_batch(logits, y)
        if not np.isfinite(loss):
            raise NumericError(f"train_epoch: non-finite loss at batch {b}")
        grads = backward_batch(cfg, state.params, cache, grad_logits, m1, m2)
        adam_step(state, grads)
        state.memories = cache.new_memories
        total += loss
    return state, total / n_batches


def evaluate(state: TrainState, dataset, freeze_writes: Optional[bool] = None) -> MetricsReport:
    """Metrics on a dataset; dropout off, memory evolves on a copy.

    Writes follow the flag (default: the config's freeze_eval_writes);
    either way the training memories are untouched.
    """
    m1_all, m2_all, y_all = _as_arrays(dataset)
    n = m1_all.shape[0]
    if n == 0:
        raise ParameterError("evaluate: empty dataset")
    cfg = state.config
    freeze = cfg.freeze_eval_writes if freeze_writes is None else freeze_writes
    memories = [m.frozen() if freeze else m.copy() for m in state.memories]

    preds = np.empty(n, dtype=np.int64)
    for start in range(0, n, cfg.batch):
        sl = slice(start, min(start + cfg.batch, n))
        logits, cache = forward_logits(cfg, state.params, memories, m1_all[sl], m2_all[sl])
        memories = cache.new_memories
        preds[sl] = np.argmax(logits, axis=1)
    return report_from_labels(y_all, preds, cfg.classes)


def fit(
    state: TrainState,
    train_set,
    val_set=None,
) -> List[dict]:
    """Run config.epochs passes; returns one curve row per epoch."""
    cfg = state.config
    e1, e2 = _encoded_dims(cfg, state.s1, state.s2)
    curves = []
    for epoch in range(1, cfg.epochs + 1):
        if cfg.reset_memory_each_epoch and epoch > 1:
            state.memories = _fresh_memories(cfg, e1, e2, state.mem_seed, epoch=epoch - 1)
        state, loss = train_epoch(state, train_set)
        row = {"epoch": epoch, "train_loss": loss}
        if val_set is not None:
            rep = evaluate(state, val_set)
            row["val_wa"] = rep.wa
            row["val_ua"] = rep.ua
        curves.append(row)
    return curves
