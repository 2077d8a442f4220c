"""Datasets, pose tracks, and the synthetic oracle clip.

A dataset couples a template mesh with per-frame ground truth: vertex
positions (mm), an optional head-pose track, the ingested speech
feature sequence, and per-frame spectrogram patches. On disk it is a
directory holding ``template.obj`` plus ``data.hava``; every stored
array is float32-quantized at creation so save/load round-trips are
exact.

The synthetic generator builds a clip with known structure on an
icosphere: a fixed smooth displacement field scaled per frame by a
bounded function of the speech window, a sinusoidal pose track, and a
waveform whose amplitude envelopes encode that same track so the pose
network has a real signal to recover.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .audio import MelConfig, Waveform, mel_patches, slice_feature_windows
from .container import read_container, write_container
from .mesh import RegionMask, TemplateMesh, build_adjacency, load_obj, write_obj


class DataError(ValueError):
    """Dataset contents are malformed or inconsistent."""


@dataclass
class PoseTrack:
    """Per-frame axis-angle rotation vectors, radians: (T, 3)."""

    vectors: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.vectors, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise DataError(f"pose track must be (T, 3), got {arr.shape}")
        self.vectors = arr

    def __len__(self):
        return self.vectors.shape[0]

    def anchored(self):
        """Track re-expressed relative to its first frame."""
        if len(self) == 0:
            return PoseTrack(self.vectors.copy())
        return PoseTrack(self.vectors - self.vectors[0])


@dataclass
class FrameSample:
    frame: int
    gt_vertices: np.ndarray   # (N, 3) mm
    gt_pose: np.ndarray       # (3,) radians
    speech_window: np.ndarray  # (W, D)
    mel: np.ndarray           # (F, L)


@dataclass
class Dataset:
    template: TemplateMesh
    samples: list
    fps: float
    features: np.ndarray      # (T, D) full feature sequence
    window: int
    pose_present: bool

    @property
    def n_frames(self):
        return len(self.samples)

    def windows(self):
        return np.stack([s.speech_window for s in self.samples])

    def vertex_stack(self):
        return np.stack([s.gt_vertices for s in self.samples])

    def mel_stack(self):
        return np.stack([s.mel for s in self.samples])

    def pose_track(self):
        return PoseTrack(np.stack([s.gt_pose for s in self.samples]))


# ------------------------------------------------------------- pose CSV I/O

POSE_HEADER = "frame,rx,ry,rz"


def write_pose_csv(track, path):
    """Write a pose track; 9 significant digits per component."""
    vectors = track.vectors if isinstance(track, PoseTrack) else np.asarray(track)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(POSE_HEADER + "\n")
        for i, row in enumerate(vectors):
            fh.write(f"{i},{row[0]:.9g},{row[1]:.9g},{row[2]:.9g}\n")


def read_pose_csv(path):
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != POSE_HEADER:
        raise DataError(f"{path}: expected header '{POSE_HEADER}'")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 comma-separated fields")
        try:
            frame = int(parts[0])
            vec = [float(p) for p in parts[1:]]
        except ValueError:
            raise DataError(f"{path}:{lineno}: unparseable row {line!r}") from None
        if frame != len(rows):
            raise DataError(
                f"{path}:{lineno}: frame {frame} out of order (expected {len(rows)})"
            )
        rows.append(vec)
    return PoseTrack(np.array(rows, dtype=np.float64).reshape(-1, 3))


# ---------------------------------------------------------------- icosphere

def icosphere(subdivisions):
    """Unit icosphere: 12, 42, 162, 642, ... vertices; deterministic order."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=np.float64) for v in verts]
    verts = [v / np.linalg.norm(v) for v in verts]

    for _ in range(subdivisions):
        midpoint = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    return np.array(verts), [tuple(int(i) for i in f) for f in faces]


def _icosphere_for(n_vertices):
    count, level = 12, 0
    while count < n_vertices:
        if level >= 6:
            raise DataError(f"n_vertices={n_vertices} is beyond supported sizes")
        level += 1
        count = 10 * 4 ** level + 2
    return icosphere(level)


# ---------------------------------------------------------- synthetic oracle

@dataclass(frozen=True)
class SynthConfig:
    feat_dim: int = 29
    window: int = 16
    fps: float = 60.0
    radius_mm: float = 100.0
    max_displacement_mm: float = 2.0
    pose_amp: tuple = (0.1, 0.05)   # radians, slow and fast component
    mel: MelConfig = field(default_factory=MelConfig)


def _q32(arr):
    """Quantize to float32 grid (kept as float64) so storage is lossless."""
    return np.asarray(arr, dtype=np.float32).astype(np.float64)


def synthetic_pose_track(n_frames, amp=(0.1, 0.05)):
    i = np.arange(n_frames, dtype=np.float64)
    track = np.zeros((n_frames, 3))
    track[:, 0] = amp[0] * np.sin(2.0 * np.pi * i / n_frames)
    track[:, 1] = amp[1] * np.sin(4.0 * np.pi * i / n_frames)
    return PoseTrack(track)


def synthetic_waveform(n_frames, fps, sample_rate):
    """Two AM carriers whose envelopes trace the synthetic pose sinusoids."""
    n = int(round(n_frames / fps * sample_rate))
    t = np.arange(n, dtype=np.float64) / sample_rate
    cycles = t * fps / n_frames  # equals i / n_frames at frame instants
    env1 = 0.5 * (1.0 + np.sin(2.0 * np.pi * cycles))
    env2 = 0.5 * (1.0 + np.sin(4.0 * np.pi * cycles))
    carrier1 = np.sin(2.0 * np.pi * 440.0 * t)
    carrier2 = np.sin(2.0 * np.pi * 3000.0 * t)
    return Waveform(0.45 * env1 * carrier1 + 0.45 * env2 * carrier2,
                    int(sample_rate))


def _smooth_columns(arr, sigma, half):
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    padded = np.pad(arr, ((half, half), (0, 0)), mode="reflect")
    out = np.empty_like(arr)
    for j in range(arr.shape[1]):
        out[:, j] = np.convolve(padded[:, j], k, mode="valid")
    return out


def synthetic_region_masks(template):
    """Lip/eye stand-in bands from latitude on the synthetic sphere."""
    v = template.vertices
    unit_y = v[:, 1] / np.linalg.norm(v, axis=1)
    lip = np.flatnonzero(unit_y < -0.45)
    eye = np.flatnonzero(unit_y > 0.45)
    return RegionMask("lip", lip), RegionMask("eye", eye)


def generate_synthetic_dataset(seed, n_vertices=162, n_frames=256, cfg=None):
    """Deterministic oracle clip with recoverable structure.

    Displacements are a fixed smooth per-vertex field scaled each frame
    by tanh of the standardized speech-window mean; poses are the two
    sinusoids from synthetic_pose_track. Every stored array is float32
    quantized so a save/load round-trip reproduces it exactly.
    """
    cfg = cfg or SynthConfig()
    if n_vertices < 12:
        raise DataError(f"n_vertices must be >= 12, got {n_vertices}")
    if n_frames < 2:
        raise DataError(f"n_frames must be >= 2, got {n_frames}")
    rng = np.random.default_rng(seed)

    unit, faces = _icosphere_for(n_vertices)
    template = build_adjacency(
        TemplateMesh(vertices=unit * cfg.radius_mm, faces=faces, adjacency=[])
    )
    n = template.n_vertices

    features = rng.standard_normal((n_frames, cfg.feat_dim))
    features = _q32(_smooth_columns(features, sigma=2.0, half=6))
    windows = slice_feature_windows(features, cfg.window)

    means = windows.mean(axis=(1, 2))
    scale = means.std()
    drive = np.tanh(means / scale) if scale > 0 else np.zeros_like(means)

    # smooth displacement field, max vertex amplitude pinned in mm
    basis = np.empty((n, 3))
    for axis in range(3):
        k = rng.standard_normal(3)
        k *= np.pi / np.linalg.norm(k)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        basis[:, axis] = np.sin(unit @ k + phase)
    basis *= cfg.max_displacement_mm / np.linalg.norm(basis, axis=1).max()

    vertices = _q32(template.vertices[None] + basis[None] * drive[:, None, None])
    poses = _q32(synthetic_pose_track(n_frames, cfg.pose_amp).vectors)

    wave = synthetic_waveform(n_frames, cfg.fps, cfg.mel.sample_rate)
    mels = _q32(mel_patches(wave, n_frames, cfg.fps, cfg.mel))

    samples = [
        FrameSample(frame=i, gt_vertices=vertices[i], gt_pose=poses[i],
                    speech_window=windows[i], mel=mels[i])
        for i in range(n_frames)
    ]
    return Dataset(template=template, samples=samples, fps=cfg.fps,
                   features=features, window=cfg.window, pose_present=True)


# ----------------------------------------------------------- directory I/O

TEMPLATE_NAME = "template.obj"
DATA_NAME = "data.hava"


def save_dataset(dataset, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    write_obj(dataset.template, os.path.join(out_dir, TEMPLATE_NAME))
    entries = [
        ("features", np.asarray(dataset.features, dtype=np.float32)),
        ("vertices", dataset.vertex_stack().astype(np.float32)),
        ("mel", dataset.mel_stack().astype(np.float32)),
        ("meta", np.array([dataset.fps, dataset.window], dtype=np.float32)),
    ]
    if dataset.pose_present:
        entries.append(("poses", dataset.pose_track().vectors.astype(np.float32)))
    write_container(entries, os.path.join(out_dir, DATA_NAME))


def load_dataset(in_dir):
    template_path = os.path.join(in_dir, TEMPLATE_NAME)
    data_path = os.path.join(in_dir, DATA_NAME)
    if not os.path.exists(template_path):
        raise DataError(f"{in_dir}: missing {TEMPLATE_NAME}")
    if not os.path.exists(data_path):
        raise DataError(f"{in_dir}: missing {DATA_NAME}")
    template = build_adjacency(load_obj(template_path))
    box = read_container(data_path)
    for name in ("features", "vertices", "mel", "meta"):
        if name not in box:
            raise DataError(f"{data_path}: missing entry '{name}'")

    meta = box["meta"].astype(np.float64)
    if meta.shape != (2,):
        raise DataError(f"{data_path}: meta must hold [fps, window]")
    fps, window = float(meta[0]), int(round(float(meta[1])))
    if fps <= 0 or window < 1:
        raise DataError(f"{data_path}: bad meta values fps={fps}, window={window}")

    features = box["features"].astype(np.float64)
    vertices = box["vertices"].astype(np.float64)
    mels = box["mel"].astype(np.float64)
    if features.ndim != 2:
        raise DataError(f"{data_path}: features must be (T, D)")
    t = features.shape[0]
    if vertices.shape != (t, template.n_vertices, 3):
        raise DataError(
            f"{data_path}: vertices shape {vertices.shape} does not match "
            f"{t} frames x {template.n_vertices} template vertices"
        )
    if mels.ndim != 3 or mels.shape[0] != t:
        raise DataError(f"{data_path}: mel shape {mels.shape} does not match T={t}")

    pose_present = "poses" in box
    if pose_present:
        poses = box["poses"].astype(np.float64)
        if poses.shape != (t, 3):
            raise DataError(f"{data_path}: poses shape {poses.shape} != ({t}, 3)")
    else:
        poses = np.zeros((t, 3))

    windows = slice_feature_windows(features, window)
    samples = [
        FrameSample(frame=i, gt_vertices=vertices[i], gt_pose=poses[i],
                    speech_window=windows[i], mel=mels[i])
        for i in range(t)
    ]
    return Dataset(template=template, samples=samples, fps=fps,
                   features=features, window=window, pose_present=pose_present)
