"""Waveform I/O, Mel spectrogram patches, speech-feature window slicing,
and Gaussian noise injection for the robustness experiments.

Speech features themselves (per-frame character probabilities) are never
computed here; they are ingested as T x D matrices via the tensor
container, or synthesized by the dataset generator.
"""

import wave
from dataclasses import dataclass

import numpy as np

LOG_POWER_FLOOR = 1e-10  # mel power floor; log10 of it is -10


class AudioError(ValueError):
    """Unsupported or malformed audio input."""


@dataclass
class Waveform:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate: int

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelConfig:
    """STFT + mel filterbank parameters (HTK mel scale, Hann window)."""

    sample_rate: int = 16000
    n_fft: int = 1024
    hop: int = 256
    n_mels: int = 80       # F
    patch_len: int = 16    # L columns per patch
    fmin: float = 0.0
    fmax: float = 8000.0

    def validate(self):
        for name in ("sample_rate", "n_fft", "hop", "n_mels", "patch_len"):
            if getattr(self, name) <= 0:
                raise AudioError(f"mel config: {name} must be positive")
        if self.fmax > self.sample_rate / 2:
            raise AudioError(
                f"mel config: fmax={self.fmax} exceeds Nyquist {self.sample_rate / 2}"
            )
        return self


def read_wav(path) -> Waveform:
    """Read a PCM 16-bit RIFF/WAVE file; stereo is mean-downmixed.

    Samples are scaled to [-1, 1] by dividing by 32768.
    """
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getcomptype() != "NONE":
                raise AudioError(f"{path}: unsupported codec {wf.getcomptype()!r}")
            if wf.getsampwidth() != 2:
                raise AudioError(
                    f"{path}: only 16-bit PCM is supported (got {8 * wf.getsampwidth()}-bit)"
                )
            n_channels = wf.getnchannels()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
            rate = wf.getframerate()
    except wave.Error as e:
        raise AudioError(f"{path}: {e}") from e

    if len(raw) < n_frames * n_channels * 2:
        raise AudioError(f"{path}: truncated file")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if n_channels > 1:
        data = data.reshape(-1, n_channels).mean(axis=1)
    return Waveform(samples=data, sample_rate=rate)


def write_wav(w: Waveform, path) -> None:
    """Write a mono PCM 16-bit WAV (values clipped to [-1, 1])."""
    clipped = np.clip(w.samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate)
        wf.writeframes(pcm.tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """(F, n_fft//2 + 1) triangular filterbank on the HTK mel scale."""
    n_bins = cfg.n_fft // 2 + 1
    bin_hz = np.arange(n_bins) * cfg.sample_rate / cfg.n_fft
    points_hz = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    fb = np.zeros((cfg.n_mels, n_bins), dtype=np.float64)
    for m in range(cfg.n_mels):
        left, center, right = points_hz[m], points_hz[m + 1], points_hz[m + 2]
        up = (bin_hz - left) / (center - left)
        down = (right - bin_hz) / (right - center)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def mel_filter_centers_hz(cfg: MelConfig) -> np.ndarray:
    points = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    return points[1:-1]


def _segment(samples: np.ndarray, start: int, length: int) -> np.ndarray:
    """Samples [start, start+length), zero-padded outside the waveform."""
    out = np.zeros(length, dtype=np.float64)
    lo = max(start, 0)
    hi = min(start + length, len(samples))
    if hi > lo:
        out[lo - start : hi - start] = samples[lo:hi]
    return out


def mel_patch(w: Waveform, frame: int, fps: float, cfg: MelConfig) -> np.ndarray:
    """(F, L) log10 mel-power patch centered at the frame's timestamp.

    Column l covers samples starting at
    center - n_fft/2 + (l - L//2) * hop, where center = round(frame/fps * sr);
    out-of-range audio is zero-padded. Power is floored at 1e-10 before log10.
    """
    cfg.validate()
    window = np.hanning(cfg.n_fft)
    center = int(round(frame / fps * w.sample_rate))
    n_bins = cfg.n_fft // 2 + 1
    spectra = np.empty((cfg.patch_len, n_bins), dtype=np.float64)
    for l in range(cfg.patch_len):
        start = center - cfg.n_fft // 2 + (l - cfg.patch_len // 2) * cfg.hop
        seg = _segment(w.samples, start, cfg.n_fft)
        spectra[l] = np.abs(np.fft.rfft(seg * window)) ** 2
    fb = mel_filterbank(cfg)
    mel_power = spectra @ fb.T                      # (L, F)
    return np.log10(np.maximum(mel_power.T, LOG_POWER_FLOOR))


def mel_patches(w: Waveform, n_frames: int, fps: float, cfg: MelConfig) -> np.ndarray:
    """(T, F, L) patches for frames 0..n_frames-1."""
    return np.stack([mel_patch(w, i, fps, cfg) for i in range(n_frames)])


def slice_feature_windows(features: np.ndarray, window: int) -> np.ndarray:
    """(T, W, D) windows; window i spans rows i - ceil(W/2) + 1 .. i + floor(W/2),
    with rows outside [0, T) edge-replicated."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise AudioError(f"feature sequence must be T x D (got shape {features.shape})")
    if window < 1:
        raise AudioError(f"window size must be >= 1 (got {window})")
    t_total = features.shape[0]
    offsets = np.arange(window) - (-(-window // 2) - 1)   # -ceil(W/2)+1 .. floor(W/2)
    idx = np.arange(t_total)[:, None] + offsets[None, :]
    idx = np.clip(idx, 0, t_total - 1)
    return features[idx]


def add_gaussian_noise(w: Waveform, snr_db: float, seed: int) -> Waveform:
    """Add zero-mean Gaussian noise at the given SNR; output clipped to [-1, 1].

    Deterministic for a fixed seed. Pure silence has undefined SNR and is
    rejected.
    """
    power = float(np.mean(w.samples**2))
    if power <= 0.0:
        raise AudioError("cannot set an SNR on pure silence (zero signal power)")
    noise_power = power / (10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(len(w.samples)) * np.sqrt(noise_power)
    return Waveform(
        samples=np.clip(w.samples + noise, -1.0, 1.0),
        sample_rate=w.sample_rate,
    )
