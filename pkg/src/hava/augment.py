"""Pose-attribute augmentation: smooth an estimated head-pose track and
attach it to a pose-less dataset.

Raw per-frame pose estimates jitter; a normalized Gaussian kernel
(default sigma 1, window 29) low-passes each rotation component
independently. Smoothed tracks are re-anchored so frame 0 is exactly
zero, matching the convention the pose network trains against.
"""

import numpy as np

from .data import DataError, Dataset, FrameSample, PoseTrack


def gaussian_kernel(sigma=1.0, window=29):
    """Normalized symmetric Gaussian taps over an odd-length window."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and positive, got {window}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    half = window // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _reflect_index(i, n):
    # mirror without repeating the edge sample; identity for n == 1
    if n == 1:
        return 0
    period = 2 * (n - 1)
    j = i % period
    return j if j < n else period - j


def gaussian_smooth(track, sigma=1.0, window=29):
    """Convolve each pose component with the Gaussian kernel.

    Boundaries use reflect padding (no edge duplication), so the result
    is defined for any track length; the output is re-anchored to make
    frame 0 exactly zero.
    """
    vectors = track.vectors if isinstance(track, PoseTrack) else np.asarray(track)
    vectors = np.asarray(vectors, dtype=np.float64)
    t = vectors.shape[0]
    if t == 0:
        return PoseTrack(vectors.copy())
    kernel = gaussian_kernel(sigma, window)
    half = window // 2
    pad_idx = np.array([_reflect_index(i, t) for i in range(-half, t + half)])
    padded = vectors[pad_idx]
    out = np.empty_like(vectors)
    for c in range(vectors.shape[1]):
        out[:, c] = np.convolve(padded[:, c], kernel, mode="valid")
    return PoseTrack(out - out[0])


def attach_poses(dataset, track):
    """New dataset with the track installed as per-frame ground truth."""
    vectors = track.vectors if isinstance(track, PoseTrack) else np.asarray(track)
    if vectors.shape[0] != dataset.n_frames:
        raise DataError(
            f"pose track has {vectors.shape[0]} frames, "
            f"dataset has {dataset.n_frames}"
        )
    samples = [
        FrameSample(frame=s.frame, gt_vertices=s.gt_vertices,
                    gt_pose=np.asarray(vectors[i], dtype=np.float64),
                    speech_window=s.speech_window, mel=s.mel)
        for i, s in enumerate(dataset.samples)
    ]
    return Dataset(template=dataset.template, samples=samples, fps=dataset.fps,
                   features=dataset.features, window=dataset.window,
                   pose_present=True)
