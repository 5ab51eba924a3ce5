"""Waveform to normalized log-spectrogram conversion and the two training augmentations."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import ConfigError, DspError
from .ingest import WaveformRecord

VERTICAL_ONLY = np.array([True, False, False])


@dataclass(frozen=True)
class StftConfig:
    nperseg: int = 128
    noverlap: int = 0
    window: tuple = ("tukey", 0.25)
    log_epsilon: float = 1e-10

    def __post_init__(self):
        if not (self.nperseg > self.noverlap >= 0):
            raise ConfigError("nperseg", "need nperseg > noverlap >= 0")
        if not self.log_epsilon > 0:
            raise ConfigError("log_epsilon", "must be > 0")
        if isinstance(self.window, list):
            object.__setattr__(self, "window", tuple(self.window))

    def shape(self, n_samples: int) -> tuple[int, int]:
        """(F, T) produced for a record of ``n_samples``."""
        step = self.nperseg - self.noverlap
        return self.nperseg // 2 + 1, (n_samples - self.noverlap) // step

    @classmethod
    def from_dict(cls, d: dict) -> "StftConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(k, "unknown key")
        return cls(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["window"] = list(self.window) if isinstance(self.window, tuple) else self.window
        return d


@dataclass
class SpectrogramSample:
    tensor: np.ndarray  # (3, F, T), entries in [0, 1]
    event_id: str = ""
    station_id: str = ""
    channel_mask: np.ndarray = field(default_factory=lambda: np.ones(3, dtype=bool))
    attributes: dict = field(default_factory=dict)

    def replace(self, **kw) -> "SpectrogramSample":
        return dataclasses.replace(self, **kw)


def _window(cfg: StftConfig):
    w = cfg.window
    if isinstance(w, tuple) and len(w) == 1:
        return w[0]
    return w


def log_power(record: WaveformRecord, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Per-channel log STFT power, (n_channels, F, T), before normalization."""
    if record.n_samples < cfg.nperseg:
        raise DspError(f"record has {record.n_samples} samples, fewer than one "
                       f"frame of {cfg.nperseg}")
    x = record.data.astype(np.float64)
    _, _, power = signal.spectrogram(
        x, fs=record.sample_rate_hz, window=_window(cfg), nperseg=cfg.nperseg,
        noverlap=cfg.noverlap, detrend=False, scaling="spectrum", mode="psd", axis=-1,
    )
    return np.log(power + cfg.log_epsilon)


def normalize(logp: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Joint min-max over present channels; absent channels written as zeros."""
    F, T = logp.shape[1:]
    out = np.zeros((3, F, T))
    present = np.flatnonzero(mask)
    vals = logp[: present.size]
    lo, hi = vals.min(), vals.max()
    if hi > lo:
        out[present] = (vals - lo) / (hi - lo)
    return out


def spectrogram(record: WaveformRecord, cfg: StftConfig = StftConfig(), event_id: str = "",
                station_id: str = "", attributes: dict | None = None) -> SpectrogramSample:
    """Model input for one record: 3 x F x T log power scaled to [0, 1]."""
    mask = record.channel_mask
    tensor = normalize(log_power(record, cfg), mask)
    return SpectrogramSample(tensor, event_id, station_id, mask.copy(), dict(attributes or {}))


def augment_noise(sample: SpectrogramSample, sigma: float,
                  rng: np.random.Generator) -> SpectrogramSample:
    """Add N(0, sigma^2) to present channels and clamp to [0, 1]."""
    if sigma < 0:
        raise ConfigError("sigma", "must be >= 0")
    if sigma == 0:
        return sample.replace(tensor=sample.tensor.copy())
    t = sample.tensor.copy()
    present = np.flatnonzero(sample.channel_mask)
    t[present] = np.clip(t[present] + rng.normal(0.0, sigma, size=t[present].shape), 0.0, 1.0)
    return sample.replace(tensor=t)


def zero_pad_horizontals(sample: SpectrogramSample) -> SpectrogramSample:
    """Drop the horizontals as if the station were vertical-only."""
    t = sample.tensor.copy()
    t[1:] = 0.0
    return sample.replace(tensor=t, channel_mask=VERTICAL_ONLY.copy())


# Array forms used by the training loop. Semantics match the per-sample functions.

def noise_batch(tensors: np.ndarray, masks: np.ndarray, sigmas: np.ndarray,
                rng: np.random.Generator) -> np.ndarray:
    """Vectorized ``augment_noise`` over (N, 3, F, T) with one sigma per sample."""
    out = tensors.copy()
    for i, s in enumerate(sigmas):
        if s > 0:
            present = np.flatnonzero(masks[i])
            out[i, present] = np.clip(
                out[i, present] + rng.normal(0.0, s, size=out[i, present].shape), 0.0, 1.0)
    return out


def zero_pad_batch(tensors: np.ndarray, masks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    out = tensors.copy()
    out[:, 1:] = 0.0
    new_masks = np.zeros_like(masks, dtype=bool)
    new_masks[:, 0] = True
    return out, new_masks


def spectrogram_stack(records, cfg: StftConfig = StftConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Preprocess many records into ``(N, 3, F, T)`` tensors and ``(N, 3)`` masks."""
    tensors, masks = [], []
    for rec in records:
        s = spectrogram(rec, cfg)
        tensors.append(s.tensor)
        masks.append(s.channel_mask)
    return np.stack(tensors), np.stack(masks)
