"""Waveforms, WAV I/O, STFT analysis/synthesis, and SNR-controlled mixing.

All audio is mono. The pipeline runs at 16 kHz throughout; readers accept
whatever the file header declares and rate checks happen where signals meet.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import AudioIOError, FormatError, InvalidInputError, NumericError

PIPELINE_SAMPLE_RATE = 16000


@dataclass
class Waveform:
    """Mono time-domain signal.

    samples are kept as float64; amplitudes are dimensionless and not
    range-limited, but must be finite.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidInputError("waveform samples must be one-dimensional")
        if self.sample_rate <= 0:
            raise InvalidInputError("sample_rate must be positive")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class StftConfig:
    """Analysis parameters: periodic Hann window of `window_len` samples,
    frames advanced by `hop` samples."""

    window_len: int = 400
    hop: int = 160
    window_kind: str = "hann"

    def __post_init__(self):
        if self.window_kind != "hann":
            raise InvalidInputError(f"unsupported window kind: {self.window_kind!r}")
        if not (0 < self.hop <= self.window_len):
            raise InvalidInputError("need 0 < hop <= window_len")

    @property
    def freq_bins(self) -> int:
        return self.window_len // 2 + 1

    def window(self) -> np.ndarray:
        n = np.arange(self.window_len)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.window_len)

    def num_frames(self, n_samples: int) -> int:
        """Full-window frame count: 1 + floor((len - window_len) / hop)."""
        if n_samples < self.window_len:
            raise InvalidInputError(
                f"signal of {n_samples} samples is shorter than one "
                f"{self.window_len}-sample window"
            )
        return 1 + (n_samples - self.window_len) // self.hop


@dataclass
class Spectrogram:
    """Complex T-F matrix of shape (frames, freq_bins)."""

    bins: np.ndarray
    frame_stride_samples: int
    window_len_samples: int
    sample_rate: int

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.complex128)
        if self.bins.ndim != 2:
            raise InvalidInputError("spectrogram must be a 2-D matrix")
        expected = self.window_len_samples // 2 + 1
        if self.bins.shape[1] != expected:
            raise InvalidInputError(
                f"freq_bins {self.bins.shape[1]} inconsistent with "
                f"window_len {self.window_len_samples} (expected {expected})"
            )
        if not np.all(np.isfinite(self.bins)):
            raise NumericError("spectrogram contains non-finite entries")

    @property
    def frames(self) -> int:
        return self.bins.shape[0]

    @property
    def freq_bins(self) -> int:
        return self.bins.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.bins)

    def phase(self) -> np.ndarray:
        return np.angle(self.bins)


def stft(wave: Waveform, cfg: StftConfig) -> Spectrogram:
    """Short-time Fourier transform without padding.

    Each frame is the real FFT of one Hann-windowed segment; only full
    windows are analysed, so frames = 1 + floor((len - window_len) / hop).

    Raises InvalidInputError if the signal is shorter than one window.
    """
    x = wave.samples
    n_frames = cfg.num_frames(x.size)
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.window_len)[:: cfg.hop]
    frames = frames[:n_frames] * cfg.window()
    bins = np.fft.rfft(frames, axis=1)
    return Spectrogram(
        bins=bins,
        frame_stride_samples=cfg.hop,
        window_len_samples=cfg.window_len,
        sample_rate=wave.sample_rate,
    )


def istft(spec: Spectrogram, cfg: StftConfig) -> Waveform:
    """Inverse STFT by windowed overlap-add with squared-window-sum
    normalisation.

    Output length is (frames - 1) * hop + window_len. Interior samples of
    stft->istft round trips reconstruct the input; use interior_slice() to
    address the region with full window support.
    """
    if (
        spec.window_len_samples != cfg.window_len
        or spec.frame_stride_samples != cfg.hop
    ):
        raise InvalidInputError("spectrogram geometry does not match the config")
    n_frames = spec.frames
    if n_frames == 0:
        raise InvalidInputError("cannot invert an empty spectrogram")
    w = cfg.window()
    segs = np.fft.irfft(spec.bins, n=cfg.window_len, axis=1) * w

    out_len = (n_frames - 1) * cfg.hop + cfg.window_len
    out = np.zeros(out_len)
    denom = np.zeros(out_len)
    w_sq = w * w
    for t in range(n_frames):
        lo = t * cfg.hop
        out[lo : lo + cfg.window_len] += segs[t]
        denom[lo : lo + cfg.window_len] += w_sq
    start, stop = interior_slice(cfg, n_frames)
    if np.any(denom[start:stop] <= 1e-12):
        raise NumericError("window-sum vanishes at an interior sample")
    nonzero = denom > 1e-12
    out[nonzero] /= denom[nonzero]
    return Waveform(out, spec.sample_rate)


def interior_slice(cfg: StftConfig, n_frames: int) -> tuple[int, int]:
    """Half-open sample range covered by the full periodic window sum.

    Outside this range the overlap-add normaliser differs from its
    steady-state value, so edge samples are not comparable to the input.
    """
    return cfg.window_len - cfg.hop, n_frames * cfg.hop


# --- WAV I/O -------------------------------------------------------------
#
# Minimal RIFF support: read PCM16 and IEEE float32 (first channel of
# multi-channel files), write mono float32. Kept in-house so that the
# error taxonomy and normalisation convention stay exact: PCM16 sample s
# maps to s / 32768.

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003


def read_wav(path) -> Waveform:
    """Read a WAV file; PCM16 is normalised by 1/32768, float32 is taken
    verbatim. Multi-channel files keep channel 0 only."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise AudioIOError(f"cannot read {path}: {exc}") from exc
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path} is not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise AudioIOError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            if len(body) < size:
                raise AudioIOError(f"{path}: data chunk truncated "
                                   f"({len(body)} of {size} bytes)")
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None or payload is None:
        raise AudioIOError(f"{path}: missing fmt or data chunk")

    audio_format, channels, sample_rate, _, block_align, bits = fmt
    if channels < 1 or block_align == 0:
        raise FormatError(f"{path}: malformed fmt chunk")
    if audio_format == _WAVE_FORMAT_PCM and bits == 16:
        raw = np.frombuffer(payload[: len(payload) - len(payload) % block_align],
                            dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif audio_format == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        raw = np.frombuffer(payload[: len(payload) - len(payload) % block_align],
                            dtype="<f4")
        samples = raw.astype(np.float64)
    else:
        raise FormatError(
            f"{path}: unsupported encoding (format={audio_format}, bits={bits}); "
            "only PCM16 and float32 are readable"
        )
    if channels > 1:
        samples = samples[::channels]
    if int(sample_rate) != PIPELINE_SAMPLE_RATE:
        raise FormatError(
            f"{path}: {sample_rate} Hz input rejected; the pipeline runs at "
            f"{PIPELINE_SAMPLE_RATE} Hz and does not resample"
        )
    return Waveform(samples, int(sample_rate))


def write_wav(wave: Waveform, path) -> None:
    """Write a mono 32-bit float WAV; read_wav() inverts it exactly for
    float32-representable samples."""
    if wave.samples.size and not np.all(np.isfinite(wave.samples)):
        raise InvalidInputError("refusing to write non-finite samples")
    frames = wave.samples.astype("<f4").tobytes()
    n = wave.samples.size
    fmt_chunk = struct.pack(
        "<HHIIHH", _WAVE_FORMAT_IEEE_FLOAT, 1, wave.sample_rate,
        wave.sample_rate * 4, 4, 32,
    )
    fact_chunk = struct.pack("<I", n)
    body = (
        b"WAVE"
        + b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk
        + b"fact" + struct.pack("<I", len(fact_chunk)) + fact_chunk
        + b"data" + struct.pack("<I", len(frames)) + frames
    )
    try:
        with open(path, "wb") as fh:
            fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)
    except OSError as exc:
        raise AudioIOError(f"cannot write {path}: {exc}") from exc


# --- Mixing --------------------------------------------------------------


@dataclass
class MomRecord:
    """A mixture of mixtures and the two (scaled) constituents it sums."""

    mom: Waveform
    sources: list[Waveform] = field(default_factory=list)
    snr_db: float = 0.0


def _mean_power(x: np.ndarray) -> float:
    return float(np.mean(x * x)) if x.size else 0.0


def mix_at_snr(a: Waveform, b: Waveform, snr_db: float) -> tuple[Waveform, Waveform]:
    """Scale `b` so the full-signal power ratio a/(g*b) equals `snr_db`,
    then add. Length mismatch is resolved by truncating to the shorter
    signal. Returns (mixture, scaled_b)."""
    if a.sample_rate != b.sample_rate:
        raise InvalidInputError("sample rates differ")
    n = min(len(a), len(b))
    xa = a.samples[:n]
    xb = b.samples[:n]
    pa = _mean_power(xa)
    pb = _mean_power(xb)
    if pa == 0.0 or pb == 0.0:
        raise InvalidInputError("mixing requires both signals to have energy")
    gain = np.sqrt(pa / (pb * 10.0 ** (snr_db / 10.0)))
    scaled_b = xb * gain
    return Waveform(xa + scaled_b, a.sample_rate), Waveform(scaled_b, a.sample_rate)


def make_mom(
    mix1: Waveform, mix2: Waveform, snr_range: tuple[float, float], rng_seed: int
) -> MomRecord:
    """Combine two overlapped recordings into a mixture of mixtures at an
    SNR drawn uniformly from `snr_range` (deterministic per seed). The MoM
    equals the elementwise sum of the returned sources exactly."""
    lo, hi = snr_range
    if hi < lo:
        raise InvalidInputError("snr_range must satisfy lo <= hi")
    snr_db = float(np.random.default_rng(rng_seed).uniform(lo, hi))
    mom, scaled2 = mix_at_snr(mix1, mix2, snr_db)
    n = len(mom)
    first = Waveform(mix1.samples[:n].copy(), mix1.sample_rate)
    return MomRecord(mom=mom, sources=[first, scaled2], snr_db=snr_db)
