"""Trainable functional time encoding."""
from __future__ import annotations

import math

import numpy as np

from . import diffcore as dc
from .errors import ConfigError


def init_freqs(d: int) -> np.ndarray:
    """Geometric frequencies from 1 down to 1e-9 per time unit (d/2 of them)."""
    if d <= 0 or d % 2:
        raise ConfigError(f"time encoding dimension must be a positive even number, got {d}")
    half = d // 2
    return 1.0 / 10.0 ** (np.arange(half) * 9.0 / half)


class TimeEncoder:
    """Maps a time difference to sqrt(2/d) * [cos(w_1 dt), sin(w_1 dt), ...].

    The output has unit L2 norm for any dt. ``zero`` turns the encoder off
    (constant zero vector), which the no-time ablation uses.
    """

    def __init__(self, d: int, freqs: np.ndarray | None = None, zero: bool = False):
        if d <= 0 or d % 2:
            raise ConfigError(f"time encoding dimension must be a positive even number, got {d}")
        self.d = d
        self.zero = zero
        if freqs is None:
            freqs = init_freqs(d)
        freqs = np.asarray(freqs, dtype=np.float64)
        if freqs.shape != (d // 2,) or not np.all(np.isfinite(freqs)):
            raise ConfigError(f"expected {d // 2} finite frequencies, got shape {freqs.shape}")
        self.freqs = dc.Tensor(freqs.copy(), requires_grad=True, name="time.freqs")

    def params(self) -> dict[str, dc.Tensor]:
        return {self.freqs.name: self.freqs}

    def __call__(self, dt) -> dc.Tensor:
        """Encode an array of time differences of any shape -> shape + (d,)."""
        dt = np.asarray(dt, dtype=np.float64)
        if self.zero:
            return dc.Tensor(np.zeros(dt.shape + (self.d,)))
        half = self.d // 2
        phase = dc.mul(dt[..., None], self.freqs)  # (..., d/2)
        scale = math.sqrt(2.0 / self.d)
        c = dc.reshape(dc.cos(phase), dt.shape + (half, 1))
        s = dc.reshape(dc.sin(phase), dt.shape + (half, 1))
        pairs = dc.concat([c, s], axis=-1)  # interleave cos/sin per frequency
        return dc.mul(dc.reshape(pairs, dt.shape + (self.d,)), scale)


def encode(dt: float, freqs, d: int | None = None) -> np.ndarray:
    """Plain numpy encoding of a single time difference."""
    freqs = np.asarray(freqs, dtype=np.float64)
    d = d or 2 * len(freqs)
    return TimeEncoder(d, freqs)(np.array(dt)).value
