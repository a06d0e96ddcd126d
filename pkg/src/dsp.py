"""
Digital replication of the acquisition firmware stage.

Notch and Butterworth bandpass IIR filters realized as biquad cascades,
causal direct-form-II-transposed filtering, and a moving-window RMS.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from .errors import ConfigError, FilterDesignError, SignalError

logger = logging.getLogger(__name__)

STABILITY_MARGIN = 1e-9

# =============================================================================
# Types
# =============================================================================


@dataclass(frozen=True)
class FilterSpec:
    sample_rate_hz: float = 20000.0
    notch_hz: float = 50.0
    notch_q: float = 35.0
    band_lo_hz: float = 30.0
    band_hi_hz: float = 300.0
    order: int = 4
    notch_enabled: bool = True
    zero_phase: bool = False
    decimate_to_hz: float | None = None

    def __post_init__(self):
        nyquist = self.sample_rate_hz / 2
        if not self.sample_rate_hz > 0:
            raise FilterDesignError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if not 0 < self.band_lo_hz < self.band_hi_hz < nyquist:
            raise FilterDesignError(
                f"need 0 < band_lo ({self.band_lo_hz}) < band_hi ({self.band_hi_hz}) < fs/2 ({nyquist})"
            )
        if not 0 < self.notch_hz < nyquist:
            raise FilterDesignError(f"notch {self.notch_hz} Hz must be in (0, fs/2)")
        if not self.notch_q > 0:
            raise FilterDesignError("notch Q must be positive")
        if self.order < 2 or self.order % 2:
            raise FilterDesignError(f"order must be even and >= 2, got {self.order}")
        if self.decimate_to_hz is not None:
            ratio = self.sample_rate_hz / self.decimate_to_hz
            if not self.decimate_to_hz > 2 * self.band_hi_hz:
                raise FilterDesignError("decimated rate must exceed twice band_hi")
            if abs(ratio - round(ratio)) > 1e-9:
                raise FilterDesignError("decimated rate must divide the sample rate")

    @property
    def output_rate_hz(self) -> float:
        return self.decimate_to_hz or self.sample_rate_hz

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class BiquadCascade:
    """
    Second-order sections as an (n, 6) array in scipy `sos` layout:
    (b0, b1, b2, 1, a1, a2) per row.
    """

    sos: np.ndarray

    def __post_init__(self):
        sos = np.atleast_2d(np.asarray(self.sos, dtype=float))
        if sos.shape[1] != 6 or not np.allclose(sos[:, 3], 1.0):
            raise FilterDesignError("sections must be normalized (b0, b1, b2, 1, a1, a2) rows")
        sos = sos.copy()
        sos.flags.writeable = False
        object.__setattr__(self, "sos", sos)
        radius = self.pole_radius()
        if radius >= 1 - STABILITY_MARGIN:
            raise FilterDesignError(f"unstable design: pole radius {radius:.12f}")

    @property
    def sections(self) -> list[tuple[float, float, float, float, float]]:
        return [(b0, b1, b2, a1, a2) for b0, b1, b2, _, a1, a2 in self.sos.tolist()]

    def pole_radius(self) -> float:
        return max(float(np.max(np.abs(np.roots(row[3:])))) for row in self.sos)

    def __add__(self, other: BiquadCascade) -> BiquadCascade:
        return BiquadCascade(np.vstack([self.sos, other.sos]))


@dataclass(frozen=True)
class RmsParams:
    window_s: float = 0.020
    hop_s: float = 0.005

    def __post_init__(self):
        if not (self.window_s > 0 and self.hop_s > 0):
            raise ConfigError("RMS window and hop must be positive")
        if self.hop_s > self.window_s:
            raise ConfigError(f"RMS hop {self.hop_s}s exceeds window {self.window_s}s")

    def window_samples(self, fs: float) -> int:
        w = int(round(self.window_s * fs))
        if w < 1:
            raise ConfigError(f"RMS window {self.window_s}s is shorter than one sample at {fs} Hz")
        return w

    def hop_samples(self, fs: float) -> int:
        return max(1, int(round(self.hop_s * fs)))

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class RmsSeries:
    values: np.ndarray
    hop_s: float
    window_s: float
    start_time_s: float = 0.0

    def times(self) -> np.ndarray:
        """Start time of each window."""
        return self.start_time_s + np.arange(len(self.values)) * self.hop_s


# =============================================================================
# Design
# =============================================================================


def design_notch(f0: float, fs: float, q: float) -> BiquadCascade:
    """Single-biquad notch at f0; unity gain at DC and Nyquist."""
    if not 0 < f0 < fs / 2:
        raise FilterDesignError(f"notch frequency {f0} Hz must be in (0, {fs / 2})")
    if not q > 0:
        raise FilterDesignError(f"notch Q must be positive, got {q}")
    b, a = signal.iirnotch(f0, q, fs=fs)
    return BiquadCascade(np.concatenate([b / a[0], a / a[0]])[None, :])


def design_bandpass(lo: float, hi: float, fs: float, order: int) -> BiquadCascade:
    """
    Butterworth high-pass at `lo` cascaded with a Butterworth low-pass at
    `hi`, each of `order` poles (bilinear transform with pre-warping).
    """
    if order < 2 or order % 2:
        raise FilterDesignError(f"order must be even and >= 2, got {order}")
    if not 0 < lo < hi < fs / 2:
        raise FilterDesignError(f"need 0 < lo ({lo}) < hi ({hi}) < fs/2 ({fs / 2})")
    highpass = signal.butter(order, lo, btype="highpass", output="sos", fs=fs)
    lowpass = signal.butter(order, hi, btype="lowpass", output="sos", fs=fs)
    return BiquadCascade(np.vstack([highpass, lowpass]))


def design_chain(fspec: FilterSpec) -> BiquadCascade:
    """Notch (when enabled) followed by the bandpass."""
    bandpass = design_bandpass(fspec.band_lo_hz, fspec.band_hi_hz, fspec.sample_rate_hz, fspec.order)
    if not fspec.notch_enabled:
        return bandpass
    return design_notch(fspec.notch_hz, fspec.sample_rate_hz, fspec.notch_q) + bandpass


def frequency_response(c: BiquadCascade, freqs_hz, fs: float) -> np.ndarray:
    """H(e^{jw}) evaluated directly on the unit circle."""
    z = np.exp(-2j * np.pi * np.asarray(freqs_hz, dtype=float) / fs)
    h = np.ones_like(z)
    for b0, b1, b2, a1, a2 in c.sections:
        h *= (b0 + b1 * z + b2 * z**2) / (1 + a1 * z + a2 * z**2)
    return h


# =============================================================================
# Filtering
# =============================================================================


def _check_finite(x: np.ndarray):
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.isfinite(x).reshape(-1))[0])
        raise SignalError(f"non-finite input sample at flat index {bad}")


def apply_filter(c: BiquadCascade, x, zero_phase: bool = False) -> np.ndarray:
    """
    Filter along the last axis. Causal DF-II-T with zero initial state by
    default; `zero_phase=True` runs forward-backward instead.
    """
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    sos = np.array(c.sos)  # scipy's sosfilt rejects read-only coefficient buffers
    if zero_phase:
        return signal.sosfiltfilt(sos, x, axis=-1)
    return signal.sosfilt(sos, x, axis=-1)


def preprocess(x, fspec: FilterSpec, cascade: BiquadCascade | None = None) -> np.ndarray:
    """Notch then bandpass, then optional decimation. Works on 1-D or (channels x T)."""
    cascade = cascade or design_chain(fspec)
    y = apply_filter(cascade, x, zero_phase=fspec.zero_phase)
    if fspec.decimate_to_hz:
        factor = int(round(fspec.sample_rate_hz / fspec.decimate_to_hz))
        if factor > 1:
            y = signal.resample_poly(y, up=1, down=factor, axis=-1)
    return y


# =============================================================================
# Moving RMS
# =============================================================================


def moving_rms(x, fs: float, p: RmsParams) -> RmsSeries:
    """Windowed RMS: value k covers x[k*hop : k*hop + W]."""
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    w = p.window_samples(fs)
    hop = p.hop_samples(fs)
    if x.shape[-1] < w:
        raise SignalError(f"RMS window ({w} samples) is longer than the signal ({x.shape[-1]})")
    windows = sliding_window_view(x, w, axis=-1)[..., ::hop, :]
    values = np.sqrt(np.mean(np.square(windows), axis=-1))
    return RmsSeries(values=values, hop_s=hop / fs, window_s=w / fs)


def rms_count(n_samples: int, fs: float, p: RmsParams) -> int:
    return (n_samples - p.window_samples(fs)) // p.hop_samples(fs) + 1


def notch_width_hz(fspec: FilterSpec) -> float:
    """-3 dB width of the notch."""
    return fspec.notch_hz / fspec.notch_q


def describe(fspec: FilterSpec) -> str:
    cascade = design_chain(fspec)
    lines = [
        f"fs={fspec.sample_rate_hz:g} Hz, sections={len(cascade.sections)}, "
        f"max pole radius={cascade.pole_radius():.6f}"
    ]
    if fspec.notch_enabled:
        lines.append(f"notch {fspec.notch_hz:g} Hz, Q={fspec.notch_q:g} (width {notch_width_hz(fspec):.2f} Hz)")
    lines.append(f"bandpass {fspec.band_lo_hz:g}-{fspec.band_hi_hz:g} Hz, order {fspec.order}")
    check_hz = [fspec.notch_hz, fspec.band_lo_hz, math.sqrt(fspec.band_lo_hz * fspec.band_hi_hz), fspec.band_hi_hz]
    for f, h in zip(check_hz, np.abs(frequency_response(cascade, check_hz, fspec.sample_rate_hz))):
        lines.append(f"  |H({f:.1f} Hz)| = {h:.4f} ({20 * np.log10(max(h, 1e-300)):.1f} dB)")
    return "\n".join(lines)
