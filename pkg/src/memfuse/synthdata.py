"""Synthetic bimodal classification stream with a cross-modal dependency.

A latent regime cycles deterministically every `regime_period` steps and
is encoded (noisily) in mode 1; an i.i.d. signal index is encoded in
mode 2.  The label is (regime + signal) mod classes, so neither mode
alone determines it.  With probability `occlusion_prob` a step's mode-1
features are replaced by pure noise of matched scale: such steps can
only be classified by carrying regime information across time, which is
exactly what a fusion memory can provide and plain concatenation
cannot.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import ParameterError
from .kernels import Array, Rng


@dataclass(frozen=True)
class TaskConfig:
    s1: int = 16
    s2: int = 16
    classes: int = 3
    regimes: int = 3
    regime_period: int = 8
    occlusion_prob: float = 0.5
    noise_sigma: float = 0.3
    length: int = 10000
    seed: int = 0

    def __post_init__(self):
        if self.s1 < 1 or self.s2 < 1:
            raise ParameterError("feature dims must be >= 1")
        if self.classes < 2:
            raise ParameterError(f"classes must be >= 2, got {self.classes}")
        if self.regimes < 1:
            raise ParameterError(f"regimes must be >= 1, got {self.regimes}")
        if self.regime_period < 1:
            raise ParameterError(f"regime_period must be >= 1, got {self.regime_period}")
        if not 0.0 <= self.occlusion_prob <= 1.0:
            raise ParameterError(f"occlusion_prob must be in [0, 1], got {self.occlusion_prob}")
        if self.noise_sigma <= 0:
            raise ParameterError(f"noise_sigma must be > 0, got {self.noise_sigma}")
        if self.length < 1:
            raise ParameterError(f"length must be >= 1, got {self.length}")


@dataclass(frozen=True)
class Sample:
    m1: Array
    m2: Array
    label: int
    t: int


def gen_dataset(config: TaskConfig) -> List[Sample]:
    """Deterministic stream generation; a pure function of the config.

    Prototypes are drawn once and frozen.  Occluded steps replace mode 1
    with N(0, 1 + sigma^2) noise, matching the marginal scale of
    prototype + noise so occlusion destroys information without shifting
    the statistics the encoder sees.
    """
    rng = Rng(config.seed)
    n, s1, s2 = config.length, config.s1, config.s2

    proto1 = rng.normal(config.regimes * s1).reshape(config.regimes, s1)
    proto2 = rng.normal(config.classes * s2).reshape(config.classes, s2)

    signals = rng.integers(n, config.classes)
    occluded = rng.uniform(n) < config.occlusion_prob
    noise1 = rng.normal(n * s1, 0.0, config.noise_sigma).reshape(n, s1)
    noise2 = rng.normal(n * s2, 0.0, config.noise_sigma).reshape(n, s2)
    occlusion_scale = float(np.sqrt(1.0 + config.noise_sigma**2))
    occ_noise = rng.normal(n * s1, 0.0, occlusion_scale).reshape(n, s1)

    regimes_t = (np.arange(n) // config.regime_period) % config.regimes
    labels = (regimes_t + signals) % config.classes

    m1 = proto1[regimes_t] + noise1
    m1[occluded] = occ_noise[occluded]
    m2 = proto2[signals] + noise2

    return [
        Sample(m1=m1[t], m2=m2[t], label=int(labels[t]), t=t)
        for t in range(n)
    ]


def regime_at(config: TaskConfig, t: int) -> int:
    """Latent regime of step t (exposed for dataset diagnostics)."""
    return (t // config.regime_period) % config.regimes


def split(dataset: List[Sample], train_frac: float, val_frac: float) -> Tuple[List[Sample], List[Sample], List[Sample]]:
    """Contiguous train/val/test split preserving stream order."""
    if train_frac <= 0 or val_frac <= 0:
        raise ParameterError("split fractions must be positive")
    if train_frac + val_frac >= 1.0:
        raise ParameterError(
            f"split fractions must leave a test remainder, got {train_frac} + {val_frac}"
        )
    n = len(dataset)
    n_train = int(n * train_frac)
    n_val = int(n * val_frac)
    if n_train == 0 or n_val == 0 or n_train + n_val >= n:
        raise ParameterError(f"degenerate split for {n} samples")
    return (
        dataset[:n_train],
        dataset[n_train : n_train + n_val],
        dataset[n_train + n_val :],
    )


def stack(dataset: List[Sample]) -> Tuple[Array, Array, Array]:
    """Batch a sample list into (M1, M2, labels) arrays."""
    if not dataset:
        raise ParameterError("stack: empty dataset")
    m1 = np.stack([s.m1 for s in dataset])
    m2 = np.stack([s.m2 for s in dataset])
    y = np.array([s.label for s in dataset], dtype=np.int64)
    return m1, m2, y


def to_csv(dataset: List[Sample]) -> str:
    """One row per sample: t, label, then mode-1 and mode-2 features."""
    if not dataset:
        raise ParameterError("to_csv: empty dataset")
    s1 = dataset[0].m1.size
    s2 = dataset[0].m2.size
    header = (
        "t,label,"
        + ",".join(f"m1_{i}" for i in range(s1))
        + ","
        + ",".join(f"m2_{i}" for i in range(s2))
    )
    lines = [header]
    for s in dataset:
        feats = [repr(float(v)) for v in s.m1] + [repr(float(v)) for v in s.m2]
        lines.append(f"{s.t},{s.label}," + ",".join(feats))
    return "\n".join(lines) + "\n"
