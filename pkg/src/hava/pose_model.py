"""Head-pose regression from per-frame spectrogram patches.

Seven 1-D convolutions summarize each frame's patch into an encoding;
a two-layer LSTM consumes the encodings in frame order and a linear
head emits a raw rotation vector r_i per frame. Tracks are anchored to
the first frame, p_i = r_i - r_0, so frame 0 is exactly zero and the
network only has to model relative motion.

Training runs the recurrence in fixed-length chunks with the carried
state detached at chunk boundaries; the values are identical to an
unchunked pass, only the gradient horizon is truncated.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .anim_model import ConfigError, conv_chain_lengths
from .data import PoseTrack

_GATES = ("i", "f", "g", "o")


@dataclass(frozen=True)
class PoseConfig:
    in_channels: int = 80    # patch rows (mel bands, or feature dim)
    in_len: int = 16         # patch columns
    conv_channels: tuple = (32, 32, 64, 64, 64, 64, 64)
    conv_kernel: int = 3
    conv_strides: tuple = (1, 1, 1, 1, 1, 1, 1)
    lstm_hidden: int = 128
    chunk_len: int = 30
    leaky_slope: float = 0.2

    def validate(self):
        if self.in_channels < 1 or self.in_len < 1:
            raise ConfigError("in_channels and in_len must be positive")
        if len(self.conv_channels) != 7:
            raise ConfigError(
                f"pose encoder needs 7 conv channels, got {len(self.conv_channels)}"
            )
        if len(self.conv_strides) != 7:
            raise ConfigError(
                f"pose encoder needs 7 conv strides, got {len(self.conv_strides)}"
            )
        if self.conv_kernel < 1:
            raise ConfigError(f"conv_kernel must be positive, got {self.conv_kernel}")
        if self.lstm_hidden < 1:
            raise ConfigError("lstm_hidden must be positive")
        if self.chunk_len < 1:
            raise ConfigError(f"chunk_len must be positive, got {self.chunk_len}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError(f"leaky_slope must be in (0, 1), got {self.leaky_slope}")
        try:
            conv_chain_lengths(self.in_len, self.conv_kernel, self.conv_strides)
        except ConfigError as exc:
            raise ConfigError(f"pose encoder: {exc}") from None
        return self

    def encoding_dim(self):
        t_out = conv_chain_lengths(self.in_len, self.conv_kernel,
                                   self.conv_strides)[-1]
        return self.conv_channels[-1] * t_out


class PoseModel:
    """Parameters plus forward passes for the pose network."""

    def __init__(self, cfg: PoseConfig = None, seed: int = 0):
        self.cfg = (cfg or PoseConfig()).validate()
        self.params = ad.ParameterSet(seed)
        self._build()

    def _build(self):
        cfg = self.cfg
        p = self.params
        c_in = cfg.in_channels
        for i, c_out in enumerate(cfg.conv_channels):
            p.add(f"psm.conv{i}.w", (c_out, c_in, cfg.conv_kernel))
            p.add(f"psm.conv{i}.b", (c_out,), init="zeros")
            c_in = c_out
        h = cfg.lstm_hidden
        for layer, in_dim in enumerate((cfg.encoding_dim() + h, 2 * h)):
            for gate in _GATES:
                p.add(f"psm.lstm{layer}.w_{gate}", (in_dim, h))
                # unit forget bias keeps early memory open
                p.add(f"psm.lstm{layer}.b_{gate}", (h,),
                      init=1.0 if gate == "f" else "zeros")
        p.add("psm.head.w", (h, 3))
        p.add("psm.head.b", (3,), init="zeros")

    def _gates(self, layer):
        p = self.params
        return {
            f"{kind}_{gate}": p[f"psm.lstm{layer}.{kind}_{gate}"]
            for kind in ("w", "b") for gate in _GATES
        }

    def zero_state(self):
        h = self.cfg.lstm_hidden
        return tuple(ad.Value(np.zeros((1, h))) for _ in range(4))

    def encode(self, patches):
        """Conv encodings for a batch of patches: (B, C, L) -> Value (B, E)."""
        cfg = self.cfg
        arr = patches if isinstance(patches, ad.Value) else ad.Value(patches)
        if arr.data.ndim != 3 or arr.shape[1:] != (cfg.in_channels, cfg.in_len):
            raise ad.ShapeError(
                f"expected patches of shape (B, {cfg.in_channels}, {cfg.in_len}),"
                f" got {arr.shape}"
            )
        x = arr
        for i in range(7):
            x = ad.conv1d(x, self.params[f"psm.conv{i}.w"],
                          self.params[f"psm.conv{i}.b"],
                          stride=cfg.conv_strides[i])
            if i < 6:
                x = ad.leaky_relu(x, cfg.leaky_slope)
        return ad.reshape(x, (x.shape[0], -1))

    def step(self, enc_row, state):
        """One recurrence step; enc_row (1, E), state 4-tuple of (1, H)."""
        h1, c1, h2, c2 = state
        h1, c1 = ad.lstm_cell(enc_row, h1, c1, self._gates(0))
        h2, c2 = ad.lstm_cell(h1, h2, c2, self._gates(1))
        r = ad.dense(h2, self.params["psm.head.w"], self.params["psm.head.b"])
        return r, (h1, c1, h2, c2)

    def raw_track(self, encodings, state=None):
        """Run the recurrence over encoding rows: Value (T, 3) of raw r_i."""
        state = state or self.zero_state()
        rows = []
        for t in range(encodings.shape[0]):
            r, state = self.step(ad.take_rows(encodings, t, t + 1), state)
            rows.append(r)
        return ad.concat(rows, axis=0), state


def psm_encode(model, patches):
    return model.encode(patches)


def predict_pose_track(model, patches):
    """Anchored pose track for a full clip of (T, C, L) patches."""
    arr = np.asarray(patches, dtype=np.float64)
    if arr.ndim != 3:
        raise ad.ShapeError(f"expected (T, C, L) patches, got {arr.shape}")
    if arr.shape[0] == 0:
        return PoseTrack(np.zeros((0, 3)))
    enc = model.encode(arr)
    r, _ = model.raw_track(enc)
    raw = r.data
    return PoseTrack(raw - raw[0])


def pose_magnitude_track(track):
    """Per-frame rotation magnitude in radians: (T,)."""
    vectors = track.vectors if isinstance(track, PoseTrack) else np.asarray(track)
    return np.linalg.norm(vectors, axis=1)
