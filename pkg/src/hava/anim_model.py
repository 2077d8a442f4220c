"""Speech-to-displacement network over a template mesh.

Three cooperating pieces, all differentiable through ``hava.autodiff``:

- a local audio encoder: stride-1 convolutions over the feature window,
  mean-pooled over time, then a per-vertex MLP conditioned on each
  vertex's Fourier index embedding;
- a global audio encoder: strided convolutions over the same window
  flattened into a single utterance-level vector;
- a residual graph-convolution stack that turns the assembled
  per-vertex rows into 3-D displacements added onto the template.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .kernels import CsrGraph
from .mesh import vertex_embedding

ALM_KERNEL = 4
AGM_KERNEL = 3


class ConfigError(ValueError):
    """A model configuration is internally inconsistent."""


def conv_chain_lengths(t, kernel, strides):
    """Output lengths of a valid-conv stack; raises if any layer underflows."""
    lengths = []
    for i, s in enumerate(strides):
        if t < kernel:
            raise ConfigError(
                f"conv layer {i}: input length {t} shorter than kernel {kernel}"
            )
        t = (t - kernel) // s + 1
        lengths.append(t)
    return lengths


@dataclass(frozen=True)
class AnimationConfig:
    window: int = 16        # feature rows per frame
    feat_dim: int = 29      # feature columns
    bands: int = 8          # Fourier embedding bands (embedding width 2*bands)
    local_dim: int = 64
    global_dim: int = 64
    gcn_width: int = 128
    gcn_layers: int = 8
    alm_channels: tuple = (32, 32, 64, 64, 64)
    alm_mlp: tuple = (64, 64, 64, 64)
    agm_channels: tuple = (32, 64, 64, 64)
    # (2, 1, 1, 1) keeps every layer's input at least kernel-sized for window=16
    agm_strides: tuple = (2, 1, 1, 1)
    agm_mlp: tuple = (64, 64)
    leaky_slope: float = 0.2

    @property
    def embed_dim(self):
        return 2 * self.bands

    @property
    def fsm_in(self):
        return self.local_dim + self.global_dim + self.embed_dim

    def validate(self):
        if self.window < 1 or self.feat_dim < 1 or self.bands < 1:
            raise ConfigError("window, feat_dim and bands must be positive")
        if len(self.alm_channels) != 5:
            raise ConfigError(
                f"local encoder needs 5 conv channels, got {len(self.alm_channels)}"
            )
        if len(self.alm_mlp) != 4:
            raise ConfigError(f"local MLP needs 4 widths, got {len(self.alm_mlp)}")
        if self.alm_mlp[-1] != self.local_dim:
            raise ConfigError(
                f"local MLP must end at local_dim={self.local_dim}, "
                f"got {self.alm_mlp[-1]}"
            )
        if len(self.agm_channels) != 4 or len(self.agm_strides) != 4:
            raise ConfigError("global encoder needs 4 conv channels and 4 strides")
        if len(self.agm_mlp) != 2:
            raise ConfigError(f"global MLP needs 2 widths, got {len(self.agm_mlp)}")
        if self.agm_mlp[-1] != self.global_dim:
            raise ConfigError(
                f"global MLP must end at global_dim={self.global_dim}, "
                f"got {self.agm_mlp[-1]}"
            )
        if self.gcn_layers < 1 or self.gcn_width < 1:
            raise ConfigError("gcn_layers and gcn_width must be positive")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError(f"leaky_slope must be in (0, 1), got {self.leaky_slope}")
        try:
            conv_chain_lengths(self.window, ALM_KERNEL, (1,) * 5)
        except ConfigError as exc:
            raise ConfigError(f"local encoder: {exc}") from None
        try:
            conv_chain_lengths(self.window, AGM_KERNEL, self.agm_strides)
        except ConfigError as exc:
            raise ConfigError(f"global encoder: {exc}") from None
        return self

    def agm_flat_dim(self):
        t_out = conv_chain_lengths(self.window, AGM_KERNEL, self.agm_strides)[-1]
        return self.agm_channels[-1] * t_out


class AnimationModel:
    """Parameter container plus forward passes for the displacement network."""

    def __init__(self, cfg: AnimationConfig = None, seed: int = 0):
        self.cfg = (cfg or AnimationConfig()).validate()
        self.params = ad.ParameterSet(seed)
        self._build()
        self._bound_mesh = None
        self._graph = None
        self._emb = None

    def _build(self):
        cfg = self.cfg
        p = self.params
        c_in = cfg.feat_dim
        for i, c_out in enumerate(cfg.alm_channels):
            p.add(f"alm.conv{i}.w", (c_out, c_in, ALM_KERNEL))
            p.add(f"alm.conv{i}.b", (c_out,), init="zeros")
            c_in = c_out
        width = cfg.alm_channels[-1] + cfg.embed_dim
        for i, w_out in enumerate(cfg.alm_mlp):
            p.add(f"alm.mlp{i}.w", (width, w_out))
            p.add(f"alm.mlp{i}.b", (w_out,), init="zeros")
            width = w_out
        c_in = cfg.feat_dim
        for i, c_out in enumerate(cfg.agm_channels):
            p.add(f"agm.conv{i}.w", (c_out, c_in, AGM_KERNEL))
            p.add(f"agm.conv{i}.b", (c_out,), init="zeros")
            c_in = c_out
        width = cfg.agm_flat_dim()
        for i, w_out in enumerate(cfg.agm_mlp):
            p.add(f"agm.mlp{i}.w", (width, w_out))
            p.add(f"agm.mlp{i}.b", (w_out,), init="zeros")
            width = w_out
        p.add("fsm.proj.w", (cfg.fsm_in, cfg.gcn_width))
        p.add("fsm.proj.b", (cfg.gcn_width,), init="zeros")
        for i in range(cfg.gcn_layers):
            p.add(f"fsm.gc{i}.eps", (1,), init="zeros")
            # The aggregation feeds self plus ~6 neighbours into the dense
            # layer, so the effective fan-in is 7x the width; shrink the
            # glorot bound accordingly or activations grow ~8x per layer.
            p.add(f"fsm.gc{i}.w", (cfg.gcn_width, cfg.gcn_width),
                  scale=1.0 / 7.0)
            p.add(f"fsm.gc{i}.b", (cfg.gcn_width,), init="zeros")
        p.add("fsm.head.w", (cfg.gcn_width, 3))
        p.add("fsm.head.b", (3,), init="zeros")

    # ------------------------------------------------------------- binding

    def bind_mesh(self, mesh):
        """Cache the CSR graph and index embedding for a template."""
        self._bound_mesh = mesh
        self._graph = CsrGraph.from_mesh(mesh)
        self._emb = vertex_embedding(mesh.n_vertices, self.cfg.bands)
        return self

    def _bound(self, mesh):
        if self._bound_mesh is not mesh:
            self.bind_mesh(mesh)
        return self._graph, self._emb

    # ------------------------------------------------------------ forwards

    def _windows_value(self, windows):
        arr = np.asarray(windows, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        cfg = self.cfg
        if arr.ndim != 3 or arr.shape[1:] != (cfg.window, cfg.feat_dim):
            raise ad.ShapeError(
                f"expected windows of shape (B, {cfg.window}, {cfg.feat_dim}), "
                f"got {np.shape(windows)}"
            )
        # convolutions run over time with features as channels
        return ad.Value(np.ascontiguousarray(arr.transpose(0, 2, 1)))

    def forward_batch(self, windows, graph, emb):
        """Displacements for a batch of feature windows: Value (B, N, 3)."""
        x = self._windows_value(windows)
        local = alm_forward(self, x, emb)
        glob = agm_forward(self, x)
        rows = assemble_features(local, glob, emb)
        return fsm_forward(self, rows, graph)

    def displacements(self, mesh, windows):
        graph, emb = self._bound(mesh)
        return self.forward_batch(windows, graph, emb)


def _conv_stack(params, prefix, x, n_layers, strides, slope):
    for i in range(n_layers):
        x = ad.conv1d(x, params[f"{prefix}{i}.w"], params[f"{prefix}{i}.b"],
                      stride=strides[i])
        if i + 1 < n_layers:
            x = ad.leaky_relu(x, slope)
    return x


def _mlp(params, prefix, x, n_layers, slope):
    for i in range(n_layers):
        x = ad.dense(x, params[f"{prefix}{i}.w"], params[f"{prefix}{i}.b"])
        if i + 1 < n_layers:
            x = ad.leaky_relu(x, slope)
    return x


def alm_forward(model, windows, emb):
    """Per-vertex local audio features: (B, N, local_dim).

    ``windows`` may be raw (B, W, D) arrays or an already-transposed
    (B, D, W) Value; ``emb`` is the (N, 2K) index embedding.
    """
    cfg = model.cfg
    p = model.params
    x = windows if isinstance(windows, ad.Value) else model._windows_value(windows)
    code = _conv_stack(p, "alm.conv", x, 5, (1,) * 5, cfg.leaky_slope)
    code = ad.vmean(code, axis=2)  # (B, C)
    b = code.shape[0]
    emb = np.asarray(emb, dtype=np.float64)
    n = emb.shape[0]
    code_rows = ad.broadcast_to(ad.reshape(code, (b, 1, -1)), (b, n, code.shape[1]))
    emb_rows = ad.broadcast_to(ad.Value(emb), (b, n, emb.shape[1]))
    h = ad.concat([code_rows, emb_rows], axis=-1)
    return _mlp(p, "alm.mlp", h, 4, cfg.leaky_slope)


def agm_forward(model, windows):
    """Single global audio vector per window: (B, global_dim)."""
    cfg = model.cfg
    p = model.params
    x = windows if isinstance(windows, ad.Value) else model._windows_value(windows)
    code = _conv_stack(p, "agm.conv", x, 4, cfg.agm_strides, cfg.leaky_slope)
    flat = ad.reshape(code, (code.shape[0], -1))
    return _mlp(p, "agm.mlp", flat, 2, cfg.leaky_slope)


def assemble_features(local, global_vec, emb):
    """Per-vertex rows [local_v, global, emb_v].

    Accepts single-frame ((N, l), (g,)) or batched ((B, N, l), (B, g))
    inputs; output width is l + g + 2K.
    """
    local = local if isinstance(local, ad.Value) else ad.Value(local)
    global_vec = global_vec if isinstance(global_vec, ad.Value) else ad.Value(global_vec)
    emb = np.asarray(emb, dtype=np.float64)
    single = local.data.ndim == 2
    if single:
        local = ad.reshape(local, (1,) + local.shape)
        global_vec = ad.reshape(global_vec, (1, -1))
    b, n = local.shape[0], local.shape[1]
    if emb.shape[0] != n:
        raise ad.ShapeError(
            f"embedding has {emb.shape[0]} rows for {n} vertices"
        )
    glob_rows = ad.broadcast_to(
        ad.reshape(global_vec, (b, 1, -1)), (b, n, global_vec.shape[-1])
    )
    emb_rows = ad.broadcast_to(ad.Value(emb), (b, n, emb.shape[1]))
    out = ad.concat([local, glob_rows, emb_rows], axis=-1)
    return ad.reshape(out, out.shape[1:]) if single else out


def fsm_forward(model, rows, graph):
    """Residual graph-convolution stack: per-vertex rows -> displacements.

    rows: (N, fsm_in) or (B, N, fsm_in); output matches with last dim 3.
    Every layer is h <- LeakyReLU(h + graph_conv(h)), so the map is
    exactly equivariant to vertex relabeling.
    """
    cfg = model.cfg
    p = model.params
    rows = rows if isinstance(rows, ad.Value) else ad.Value(rows)
    h = ad.dense(rows, p["fsm.proj.w"], p["fsm.proj.b"])
    for i in range(cfg.gcn_layers):
        step = ad.graph_conv(h, graph, p[f"fsm.gc{i}.eps"],
                             p[f"fsm.gc{i}.w"], p[f"fsm.gc{i}.b"])
        h = ad.leaky_relu(ad.add(h, step), cfg.leaky_slope)
    return ad.dense(h, p["fsm.head.w"], p["fsm.head.b"])


def predict_frame(model, mesh, window):
    """Posed-neutral vertex positions for one feature window: (N, 3) mm."""
    disp = model.displacements(mesh, np.asarray(window)[None])
    return mesh.vertices + disp.data[0]
