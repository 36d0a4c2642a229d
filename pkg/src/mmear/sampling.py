"""Multi-rate sampling: per-modality frame selection inside a native window.

Downsampling strides through the native stream with the phase anchored on
the last frame, so the most recent evidence always survives (the models
predict the action at the window's final step).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class RateConfig:
    """Sampling frequencies for one model configuration.

    ``f_hp = 0`` disables the hand stream (RGB-only model); ``f_rgb`` must
    stay positive. ``window_seconds * native_hz`` must be a whole number of
    frames.
    """

    native_hz: float = 30.0
    f_rgb: float = 30.0
    f_hp: float = 30.0
    window_seconds: float = 2.0

    def __post_init__(self):
        if self.native_hz <= 0:
            raise ConfigError(f"native_hz must be positive, got {self.native_hz}")
        if not 0 < self.f_rgb <= self.native_hz:
            raise ConfigError(
                f"f_rgb must satisfy 0 < f_rgb <= native_hz ({self.native_hz}), got {self.f_rgb}"
            )
        if not 0 <= self.f_hp <= self.native_hz:
            raise ConfigError(
                f"f_hp must satisfy 0 <= f_hp <= native_hz ({self.native_hz}), got {self.f_hp}"
            )
        frames = self.window_seconds * self.native_hz
        if frames < 1 or abs(frames - round(frames)) > 1e-9:
            raise ConfigError(
                f"window_seconds * native_hz must be a whole frame count >= 1, got {frames}"
            )

    @property
    def window_frames(self) -> int:
        return int(round(self.window_seconds * self.native_hz))

    @property
    def hp_enabled(self) -> bool:
        return self.f_hp > 0

    def steps(self, f: float) -> int:
        return num_steps(self.native_hz, f, self.window_frames)


def num_steps(native_hz: float, f: float, window_frames: int) -> int:
    """T = max(1, round(window_frames * f / native_hz)), half rounds up."""
    return max(1, int(math.floor(window_frames * f / native_hz + 0.5)))


def sample_indices(native_hz: float, f: float, window_frames: int) -> np.ndarray:
    """Strictly increasing native indices for one modality within a window.

    index_k = ceil((k+1) * window_frames / T) - 1, which anchors the last
    sample on the window's final frame.
    """
    if f <= 0:
        raise ConfigError(f"sampling frequency must be positive, got {f}")
    if f > native_hz:
        raise ConfigError(f"sampling frequency {f} exceeds native rate {native_hz}")
    if window_frames < 1:
        raise ConfigError(f"window_frames must be >= 1, got {window_frames}")
    t = num_steps(native_hz, f, window_frames)
    k = np.arange(1, t + 1)
    return (k * window_frames + t - 1) // t - 1


@dataclass
class MultiRateWindow:
    """One sample: per-modality sequences plus the final-frame labels.

    ``rgb_seq`` is [T_rgb, D]; ``hp_seq`` is [T_hp, 126] flattened
    normalized keypoints (None when the hand stream is disabled), with
    ``hp_valid`` the matching [T_hp, 2] validity flags.
    """

    rgb_seq: np.ndarray
    hp_seq: np.ndarray | None
    hp_valid: np.ndarray | None
    action: int
    verb: int
    source: tuple  # (take id, end-frame native index)


def build_window(rgb_frames, hp_frames, hp_valid, actions, verbs, end, cfg: RateConfig,
                 take_id="") -> MultiRateWindow:
    """Slice the native window ending at ``end`` and sample each modality."""
    n = len(actions)
    w = cfg.window_frames
    if end < w - 1 or end >= n:
        raise DataError(
            f"window end {end} out of bounds: need {w - 1} <= end < {n}"
        )
    start = end - w + 1
    rgb_idx = sample_indices(cfg.native_hz, cfg.f_rgb, w)
    rgb_seq = np.asarray(rgb_frames)[start + rgb_idx]
    if cfg.hp_enabled:
        hp_idx = sample_indices(cfg.native_hz, cfg.f_hp, w)
        hp_seq = np.asarray(hp_frames)[start + hp_idx]
        valid = np.asarray(hp_valid)[start + hp_idx] if hp_valid is not None else None
    else:
        hp_seq = None
        valid = None
    return MultiRateWindow(
        rgb_seq=rgb_seq,
        hp_seq=hp_seq,
        hp_valid=valid,
        action=int(actions[end]),
        verb=int(verbs[end]),
        source=(take_id, int(end)),
    )
