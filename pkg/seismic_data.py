from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from langsmith import traceable
from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import (
    ConfigError,
    ExtentMismatchError,
    InvalidImpedanceError,
    ShapeError,
    ZeroVarianceError,
)
from tensor import Rng, Tensor


logger = logging.getLogger(__name__)

# Marmousi-like section geometry: 2721 traces over 17000 m.
DEFAULT_TRACE_SPACING_M = 17000.0 / 2721
DEFAULT_SAMPLE_INTERVAL = 0.002


# ---------------------------------------------------------------------
# Sections
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class Section:
    """
    2-D grid [n_traces, n_samples] with its acquisition geometry.

    trace_spacing_m: distance between neighbouring traces
    sample_interval: time between samples (seconds)
    """

    values: Tensor
    trace_spacing_m: float = DEFAULT_TRACE_SPACING_M
    sample_interval: float = DEFAULT_SAMPLE_INTERVAL

    def __post_init__(self) -> None:
        if self.values.rank != 2:
            raise ShapeError(f"section values must be [n_traces, n_samples], got {self.values.shape}")

    @property
    def n_traces(self) -> int:
        return self.values.shape[0]

    @property
    def n_samples(self) -> int:
        return self.values.shape[1]

    @property
    def extents(self) -> Tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    def trace(self, index: int) -> np.ndarray:
        return self.values.data[index]


@dataclass(frozen=True)
class SeismicSection(Section):
    """Post-stack amplitudes, one row per trace."""

    normalized: bool = False


@dataclass(frozen=True)
class ImpedanceSection(Section):
    """
    Acoustic impedance, one row per trace.

    Measured or generated sections must be strictly positive. Normalized and
    predicted sections carry a flag and are exempt.
    """

    normalized: bool = False
    predicted: bool = False

    def __post_init__(self) -> None:
        super().__post_init__()
        if not (self.normalized or self.predicted) and np.any(self.values.data <= 0.0):
            raise InvalidImpedanceError("acoustic impedance must be > 0 everywhere")


S = TypeVar("S", bound=Section)


def ensure_paired(seismic: Section, impedance: Section) -> None:
    if seismic.extents != impedance.extents:
        raise ExtentMismatchError(
            f"seismic section is {seismic.n_traces}x{seismic.n_samples} but impedance "
            f"section is {impedance.n_traces}x{impedance.n_samples}"
        )


# ---------------------------------------------------------------------
# Synthetic layered earth
# ---------------------------------------------------------------------


class GeneratorConfig(BaseModel):
    """Layered-earth generator settings (a desk-scale Marmousi stand-in)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_traces: int = Field(2721, ge=1)
    n_samples: int = Field(400, ge=1)
    min_layers: int = Field(8, ge=1)
    max_layers: int = Field(16, ge=1)
    ai_lo: float = Field(2000.0, gt=0.0)
    ai_hi: float = Field(12000.0, gt=0.0)
    # moving-average window (traces) applied to each horizon's random walk
    horizon_smoothness: int = Field(101, ge=1)
    # std of one random-walk step, in samples
    horizon_step_std: float = Field(0.6, ge=0.0)
    # lateral drift of layer values as a fraction of (ai_hi - ai_lo)
    lateral_variation: float = Field(0.05, ge=0.0)
    ricker_freq: float = Field(30.0, gt=0.0)
    noise_std: float = Field(0.02, ge=0.0)
    sample_interval: float = Field(DEFAULT_SAMPLE_INTERVAL, gt=0.0)
    trace_spacing_m: float = Field(DEFAULT_TRACE_SPACING_M, gt=0.0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_ranges(self) -> "GeneratorConfig":
        if self.ai_hi <= self.ai_lo:
            raise ValueError(f"ai_hi ({self.ai_hi}) must exceed ai_lo ({self.ai_lo})")
        if self.max_layers < self.min_layers:
            raise ValueError(
                f"max_layers ({self.max_layers}) must be >= min_layers ({self.min_layers})"
            )
        return self


def _smooth(walk: np.ndarray, window: int) -> np.ndarray:
    """Moving average along the last axis with edge padding (same length)."""
    if window <= 1 or walk.shape[-1] == 1:
        return walk
    half = window // 2
    padded = np.pad(walk, [(0, 0)] * (walk.ndim - 1) + [(half, window - 1 - half)], mode="edge")
    kernel = np.ones(window) / window
    return np.apply_along_axis(lambda row: np.convolve(row, kernel, mode="valid"), -1, padded)


def generate_layered_model(config: GeneratorConfig, rng: Rng) -> ImpedanceSection:
    """
    Piecewise-constant AI per trace with laterally smooth horizons.

    Horizon depths follow a smoothed random walk across traces; each layer's
    value is drawn in [ai_lo, ai_hi] and drifts slowly along the section,
    clipped back into the range.
    """
    n_traces, n_samples = config.n_traces, config.n_samples
    n_layers = int(rng.integers(config.min_layers, config.max_layers)[0])
    span = config.ai_hi - config.ai_lo

    base_values = config.ai_lo + span * rng.uniform(n_layers)
    if n_layers == 1:
        values = np.full((n_traces, n_samples), base_values[0])
        logger.info("Generated constant section %dx%d", n_traces, n_samples)
        return ImpedanceSection(
            values=Tensor.adopt(values),
            trace_spacing_m=config.trace_spacing_m,
            sample_interval=config.sample_interval,
        )

    n_horizons = n_layers - 1
    depths = np.sort(1.0 + (n_samples - 1) * rng.uniform(n_horizons))
    steps = rng.normal(n_horizons * n_traces, 0.0, config.horizon_step_std)
    walk = np.cumsum(steps.reshape(n_horizons, n_traces), axis=1)
    walk -= walk.mean(axis=1, keepdims=True)
    horizons = depths[:, None] + _smooth(walk, config.horizon_smoothness)
    horizons = np.clip(np.rint(horizons), 1, max(n_samples - 1, 1)).astype(np.int64)
    # keep horizons ordered with depth in every trace
    horizons = np.maximum.accumulate(horizons, axis=0)

    drift_steps = rng.normal(n_layers * n_traces, 0.0, 1.0).reshape(n_layers, n_traces)
    drift = _smooth(np.cumsum(drift_steps, axis=1), config.horizon_smoothness)
    scale = np.max(np.abs(drift), axis=1, keepdims=True)
    drift = np.divide(drift, scale, out=np.zeros_like(drift), where=scale > 0)
    layer_values = np.clip(
        base_values[:, None] + config.lateral_variation * span * drift,
        config.ai_lo,
        config.ai_hi,
    )

    samples = np.arange(n_samples)
    # layer index of every sample: number of horizons at or above it
    layer_of = (samples[None, None, :] >= horizons.T[:, :, None]).sum(axis=1)
    values = np.take_along_axis(layer_values.T, layer_of, axis=1)
    logger.info(
        "Generated layered section %dx%d with %d layers", n_traces, n_samples, n_layers
    )
    return ImpedanceSection(
        values=Tensor.adopt(values),
        trace_spacing_m=config.trace_spacing_m,
        sample_interval=config.sample_interval,
    )


# ---------------------------------------------------------------------
# Convolutional forward model
# ---------------------------------------------------------------------


def ai_to_reflectivity(ai_trace: Tensor) -> Tensor:
    """r[t] = (AI[t+1] - AI[t]) / (AI[t+1] + AI[t]); the last sample is 0."""
    ai = ai_trace.data
    if np.any(ai <= 0.0):
        raise InvalidImpedanceError("reflectivity needs strictly positive impedance")
    r = np.zeros_like(ai)
    r[..., :-1] = (ai[..., 1:] - ai[..., :-1]) / (ai[..., 1:] + ai[..., :-1])
    return Tensor.adopt(r)


def ricker_wavelet(f: float, dt: float, half_width: Optional[float] = None) -> Tensor:
    """
    (1 - 2 pi^2 f^2 t^2) exp(-pi^2 f^2 t^2) sampled on [-half_width, +half_width].

    The sample count is odd so t=0 sits on the centre sample.
    """
    if f <= 0 or dt <= 0:
        raise ConfigError(f"ricker needs f > 0 and dt > 0, got f={f}, dt={dt}")
    if half_width is None:
        half_width = 1.5 / f
    n_half = int(round(half_width / dt))
    t = np.arange(-n_half, n_half + 1) * dt
    arg = (math.pi * f * t) ** 2
    return Tensor.adopt((1.0 - 2.0 * arg) * np.exp(-arg))


def convolve_wavelet(reflectivity: Tensor, wavelet: Tensor) -> Tensor:
    """
    Same-length convolution of each trace with a centred odd-length wavelet.
    """
    w = wavelet.data
    if w.ndim != 1 or w.size % 2 == 0:
        raise ShapeError(f"wavelet must be 1-D with an odd length, got {w.shape}")
    r = reflectivity.data
    traces = r.reshape(-1, r.shape[-1])
    length = traces.shape[1]
    half = (w.size - 1) // 2
    out = np.empty_like(traces)
    for i, trace in enumerate(traces):
        out[i] = np.convolve(trace, w, mode="full")[half : half + length]
    return Tensor.adopt(out.reshape(r.shape))


@traceable(name="synthesize_seismic")
def synthesize_seismic(
    impedance_section: ImpedanceSection,
    f: float,
    noise_std: float,
    rng: Rng,
) -> SeismicSection:
    """
    Reflectivity -> Ricker convolution -> additive noise scaled by trace RMS.
    """
    if noise_std < 0:
        raise ConfigError(f"noise_std must be >= 0, got {noise_std}")
    wavelet = ricker_wavelet(f, impedance_section.sample_interval)
    reflectivity = ai_to_reflectivity(impedance_section.values)
    clean = convolve_wavelet(reflectivity, wavelet).data
    seismic = clean.copy()
    if noise_std > 0:
        rms = np.sqrt(np.mean(clean * clean, axis=1, keepdims=True))
        noise = rng.normal(clean.size).reshape(clean.shape)
        seismic = clean + noise_std * rms * noise
    logger.info(
        "Synthesized seismic %dx%d (f=%.1f Hz, noise=%.3f)",
        impedance_section.n_traces,
        impedance_section.n_samples,
        f,
        noise_std,
    )
    return SeismicSection(
        values=Tensor.adopt(seismic),
        trace_spacing_m=impedance_section.trace_spacing_m,
        sample_interval=impedance_section.sample_interval,
    )


@traceable(name="generate_pair")
def generate_pair(config: GeneratorConfig) -> Tuple[ImpedanceSection, SeismicSection]:
    """Generator entry point: a layered model and its synthetic seismic."""
    model_rng = Rng(config.seed, stream=0)
    noise_rng = Rng(config.seed, stream=1)
    impedance = generate_layered_model(config, model_rng)
    seismic = synthesize_seismic(impedance, config.ricker_freq, config.noise_std, noise_rng)
    return impedance, seismic


# ---------------------------------------------------------------------
# Training split and normalization
# ---------------------------------------------------------------------


def select_training_traces(n_traces: int, step: int) -> List[int]:
    """Indices 0, step, 2*step, ... below n_traces."""
    if step < 1:
        raise ConfigError(f"trace step must be >= 1, got {step}")
    return list(range(0, n_traces, step))


def trace_step_for_interval(interval_m: float, trace_spacing_m: float) -> int:
    """Trace step matching a sampling interval in metres (937 m -> 150 on Marmousi)."""
    if interval_m <= 0 or trace_spacing_m <= 0:
        raise ConfigError("interval and trace spacing must be > 0")
    return max(1, int(round(interval_m / trace_spacing_m)))


@dataclass(frozen=True)
class NormStats:
    """
    Mean/std of seismic and AI over the traces listed in ``provenance``.
    """

    seismic_mean: float
    seismic_std: float
    ai_mean: float
    ai_std: float
    provenance: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.seismic_std <= 0 or self.ai_std <= 0:
            raise ZeroVarianceError(
                f"normalization std must be > 0 (seismic {self.seismic_std}, AI {self.ai_std})"
            )


def compute_norm_stats(
    seismic: SeismicSection, impedance: ImpedanceSection, indices: Sequence[int]
) -> NormStats:
    ensure_paired(seismic, impedance)
    if not len(indices):
        raise ShapeError("normalization needs at least one trace")
    picked = list(indices)
    x = seismic.values.data[picked]
    y = impedance.values.data[picked]
    seismic_std, ai_std = float(np.std(x)), float(np.std(y))
    if seismic_std == 0.0:
        raise ZeroVarianceError("selected seismic traces are constant")
    if ai_std == 0.0:
        raise ZeroVarianceError("selected impedance traces are constant")
    return NormStats(
        seismic_mean=float(np.mean(x)),
        seismic_std=seismic_std,
        ai_mean=float(np.mean(y)),
        ai_std=ai_std,
        provenance=tuple(int(i) for i in picked),
    )


def _stats_for(section: Section, stats: NormStats) -> Tuple[float, float]:
    if isinstance(section, ImpedanceSection):
        return stats.ai_mean, stats.ai_std
    return stats.seismic_mean, stats.seismic_std


def normalize(section: S, stats: NormStats) -> S:
    """(x - mean) / std with the seismic or AI statistics matching the section type."""
    if getattr(section, "normalized", False):
        raise ConfigError("section is already normalized")
    mean, std = _stats_for(section, stats)
    return replace(section, values=Tensor.adopt((section.values.data - mean) / std), normalized=True)


def denormalize(section: S, stats: NormStats) -> S:
    if not getattr(section, "normalized", False):
        raise ConfigError("section is not normalized")
    mean, std = _stats_for(section, stats)
    return replace(section, values=Tensor.adopt(section.values.data * std + mean), normalized=False)


# ---------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class TraceDataset:
    """
    Paired sections with the training split and its normalization stats.

    Validation covers the traces outside the training set, or the entire
    section when ``validation_includes_training`` is set.
    """

    seismic: SeismicSection
    impedance: ImpedanceSection
    training_indices: Tuple[int, ...]
    stats: NormStats
    validation_includes_training: bool = False
    validation_indices: Tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        ensure_paired(self.seismic, self.impedance)
        idx = self.training_indices
        if not idx:
            raise ShapeError("dataset needs at least one training trace")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ShapeError("training indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= self.seismic.n_traces:
            raise ShapeError(f"training indices out of range for {self.seismic.n_traces} traces")
        if not self.validation_indices:
            train = set(idx)
            validation = tuple(
                i
                for i in range(self.seismic.n_traces)
                if self.validation_includes_training or i not in train
            )
            object.__setattr__(self, "validation_indices", validation)

    @classmethod
    def from_sections(
        cls,
        seismic: SeismicSection,
        impedance: ImpedanceSection,
        training_indices: Sequence[int],
        validation_includes_training: bool = False,
    ) -> "TraceDataset":
        indices = tuple(int(i) for i in training_indices)
        stats = compute_norm_stats(seismic, impedance, indices)
        return cls(
            seismic=seismic,
            impedance=impedance,
            training_indices=indices,
            stats=stats,
            validation_includes_training=validation_includes_training,
        )

    @classmethod
    def with_step(
        cls,
        seismic: SeismicSection,
        impedance: ImpedanceSection,
        step: int,
        validation_includes_training: bool = False,
    ) -> "TraceDataset":
        indices = select_training_traces(seismic.n_traces, step)
        return cls.from_sections(seismic, impedance, indices, validation_includes_training)

    def training_arrays(self) -> Tuple[Tensor, Tensor]:
        """Normalized training traces stacked as [N, 1, L] (seismic, AI)."""
        idx = list(self.training_indices)
        x = normalize(self.seismic, self.stats).values.data[idx]
        y = normalize(self.impedance, self.stats).values.data[idx]
        return Tensor.adopt(x[:, None, :]), Tensor.adopt(y[:, None, :])


__all__ = [
    "Section",
    "SeismicSection",
    "ImpedanceSection",
    "ensure_paired",
    "GeneratorConfig",
    "generate_layered_model",
    "ai_to_reflectivity",
    "ricker_wavelet",
    "convolve_wavelet",
    "synthesize_seismic",
    "generate_pair",
    "select_training_traces",
    "trace_step_for_interval",
    "NormStats",
    "compute_norm_stats",
    "normalize",
    "denormalize",
    "TraceDataset",
]
