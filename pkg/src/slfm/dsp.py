"""Signal-processing kernels: STFT/ISTFT, GCC-PHAT delay estimation, and
interaural-intensity-difference (IID) cues.

Conventions: positive GCC-PHAT lag means the right channel is delayed
relative to the left; IID sign +1 means louder in the left channel.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError, SilentClipError

SILENCE_RMS = 1e-8
LOG_EPS = 1e-8


def _hann_periodic(n):
    return (0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))).astype(np.float32)


@dataclass(frozen=True)
class StftParams:
    window: int = 256
    hop: int = 64

    @property
    def bins(self):
        return self.window // 2 + 1


DEFAULT_STFT = StftParams()


@dataclass
class Spectrogram:
    """Complex STFT values of shape (channels, frames, bins)."""

    values: np.ndarray
    params: StftParams
    signal_length: int

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ShapeError("Spectrogram", self.values.shape, detail="expected (channels, frames, bins)")
        if self.values.shape[2] != self.params.bins:
            raise ShapeError(
                "Spectrogram", self.values.shape, detail=f"bins must equal window/2+1 = {self.params.bins}"
            )

    @property
    def channels(self):
        return self.values.shape[0]

    @property
    def frames(self):
        return self.values.shape[1]

    @property
    def bins(self):
        return self.values.shape[2]


@dataclass
class BinauralClip:
    """Two-channel audio clip; both channels equal length float32."""

    sample_rate: int
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=np.float32)
        self.right = np.asarray(self.right, dtype=np.float32)
        if self.left.shape != self.right.shape or self.left.ndim != 1:
            raise ShapeError("BinauralClip", self.left.shape, self.right.shape)
        if not (np.isfinite(self.left).all() and np.isfinite(self.right).all()):
            raise DataError("BinauralClip: non-finite samples")

    @property
    def duration(self):
        return self.left.shape[0] / self.sample_rate

    def swapped(self):
        return BinauralClip(self.sample_rate, self.right.copy(), self.left.copy())

    def mono(self):
        return self.left + self.right


def rms(x):
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


def stft(signal, params: StftParams = DEFAULT_STFT) -> Spectrogram:
    """STFT with periodic Hann window; signal padded so ISTFT is exact."""
    x = np.asarray(signal, dtype=np.float32)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError("stft", x.shape, detail="expected 1-D or (channels, samples)")
    n = x.shape[1]
    w, hop = params.window, params.hop
    if n < w:
        raise ShapeError("stft", x.shape, detail=f"signal shorter than window {w}")
    total = n + 2 * w
    extra = (-(total - w)) % hop
    padded = np.pad(x, ((0, 0), (w, w + extra)))
    frames = np.lib.stride_tricks.sliding_window_view(padded, w, axis=1)[:, ::hop, :]
    window = _hann_periodic(w)
    values = np.fft.rfft(frames * window, axis=2).astype(np.complex64)
    return Spectrogram(values=values, params=params, signal_length=n)


def stft_clip(clip: BinauralClip, params: StftParams = DEFAULT_STFT) -> Spectrogram:
    return stft(np.stack([clip.left, clip.right]), params)


def _cola_denominator(params, n_frames, length):
    w, hop = params.window, params.hop
    window = _hann_periodic(w).astype(np.float64)
    den = np.zeros(length, dtype=np.float64)
    wsq = window * window
    for m in range(n_frames):
        den[m * hop : m * hop + w] += wsq
    return den


def istft(spec: Spectrogram):
    """Inverse STFT via weighted overlap-add; exact for COLA window/hop."""
    params = spec.params
    w, hop = params.window, params.hop
    n_frames = spec.frames
    length = (n_frames - 1) * hop + w
    den = _cola_denominator(params, n_frames, length)
    interior = den[w : w + spec.signal_length]
    if interior.size and (interior.max() - interior.min()) > 1e-6 * interior.max():
        raise DataError(f"istft: window/hop ({w}/{hop}) does not satisfy constant overlap-add")

    window = _hann_periodic(w)
    frames = np.fft.irfft(spec.values, n=w, axis=2).astype(np.float32) * window
    out = np.zeros((spec.channels, length), dtype=np.float64)
    for m in range(n_frames):
        out[:, m * hop : m * hop + w] += frames[:, m, :]
    out /= np.maximum(den, 1e-12)
    result = out[:, w : w + spec.signal_length].astype(np.float32)
    return result[0] if result.shape[0] == 1 else result


def fix_frames(values, n_frames=128):
    """Crop or zero-pad the time axis of (channels, frames, bins) values."""
    c, m, b = values.shape
    if m >= n_frames:
        return values[:, :n_frames, :]
    out = np.zeros((c, n_frames, b), dtype=values.dtype)
    out[:, :m, :] = values
    return out


@dataclass
class GccResult:
    lag: int
    lag_refined: float
    lags: np.ndarray
    curve: np.ndarray


def gcc_phat(left, right, max_lag: int, min_rms: float = SILENCE_RMS) -> GccResult:
    """Phase-transform cross-correlation; argmax within +-max_lag samples."""
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if left.shape != right.shape or left.ndim != 1:
        raise ShapeError("gcc_phat", left.shape, right.shape)
    n = left.shape[0]
    if n <= 4 * max_lag:
        raise ShapeError("gcc_phat", left.shape, detail=f"need length > 4*max_lag = {4 * max_lag}")
    if rms(left) < min_rms or rms(right) < min_rms:
        raise SilentClipError("gcc_phat: no signal (RMS below threshold)")

    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec_l = np.fft.rfft(left, nfft)
    spec_r = np.fft.rfft(right, nfft)
    cross = np.conj(spec_l) * spec_r
    cross /= np.maximum(np.abs(cross), 1e-15)
    corr = np.fft.irfft(cross, nfft)
    curve = np.concatenate([corr[-max_lag:], corr[: max_lag + 1]])
    lags = np.arange(-max_lag, max_lag + 1)
    peak = int(np.argmax(curve))
    lag = int(lags[peak])

    refined = float(lag)
    if 0 < peak < curve.size - 1:
        y0, y1, y2 = curve[peak - 1], curve[peak], curve[peak + 1]
        denom = y0 - 2.0 * y1 + y2
        if abs(denom) > 1e-12:
            refined = lag + 0.5 * (y0 - y2) / denom
    return GccResult(lag=lag, lag_refined=refined, lags=lags, curve=curve)


def _frame_magnitude_sums(clip: BinauralClip, params: StftParams):
    spec = stft_clip(clip, params)
    mags = np.abs(spec.values)
    return mags.sum(axis=2, dtype=np.float64)


def iid_sign(clip: BinauralClip, params: StftParams = DEFAULT_STFT, with_flag: bool = False):
    """Left/right decision from per-frame magnitude ratios.

    Returns +1 when the clip is louder in the left channel. Per-frame signs
    of log(sum_f |L| / sum_f |R|) are majority-voted; an exact tie resolves
    to +1 (flagged when with_flag is set).
    """
    if rms(clip.left) < SILENCE_RMS and rms(clip.right) < SILENCE_RMS:
        raise SilentClipError("iid_sign: silent clip")
    sums = _frame_magnitude_sums(clip, params)
    ratios = np.log10(np.maximum(sums[0], LOG_EPS) / np.maximum(sums[1], LOG_EPS))
    votes = np.sign(ratios)
    total = votes.sum()
    tie = total == 0.0
    d = 1 if total >= 0 else -1
    return (d, tie) if with_flag else d


@dataclass
class IidProfile:
    values: np.ndarray
    excluded: int = 0

    def distance(self, other: "IidProfile") -> float:
        n = min(self.values.size, other.values.size)
        if n == 0:
            raise DataError("IidProfile.distance: empty profile")
        return float(np.mean(np.abs(self.values[:n] - other.values[:n])))


def iid_profile(clip: BinauralClip, params: StftParams = DEFAULT_STFT, energy_floor: float = 1e-6) -> IidProfile:
    """Per-frame log10 level ratio between channels; near-silent frames
    (either channel below energy_floor) are excluded and counted."""
    if rms(clip.left) < SILENCE_RMS and rms(clip.right) < SILENCE_RMS:
        raise SilentClipError("iid_profile: silent clip")
    sums = _frame_magnitude_sums(clip, params)
    valid = (sums[0] > energy_floor) & (sums[1] > energy_floor)
    ratios = np.log10(np.maximum(sums[0, valid], LOG_EPS) / np.maximum(sums[1, valid], LOG_EPS))
    return IidProfile(values=ratios.astype(np.float32), excluded=int((~valid).sum()))
