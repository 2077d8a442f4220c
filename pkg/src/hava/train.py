"""Losses, the two training loops, and checkpoint I/O.

Stage 1 fits the displacement network with an L1 reconstruction term
plus a weighted L1 velocity term over consecutive-frame pairs. Stage 2
fits the pose network with mean squared error on anchored rotation
vectors, run over fixed-length chunks with the LSTM state detached at
chunk boundaries.

Checkpoints are HAVA containers holding every parameter by name plus
``__adam_m/<name>`` / ``__adam_v/<name>`` moment entries and
``__meta_step`` / ``__meta_epoch`` counters, all float64; loading into
a mismatched configuration fails naming the first offending entry.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .container import read_container, write_container


class TrainError(RuntimeError):
    """Training cannot proceed (bad inputs or numerical failure)."""


class CheckpointError(ValueError):
    """Checkpoint contents do not match the model."""


# -------------------------------------------------------------------- losses

def reconstruction_loss(y, yhat):
    """Sum of absolute differences over every vertex coordinate."""
    return ad.vsum(ad.vabs(ad.sub(ad.as_value(yhat), ad.as_value(y))))


def velocity_loss(y, y_prev, yhat, yhat_prev):
    """L1 mismatch of frame-to-frame displacement differences."""
    dy = ad.sub(ad.as_value(y), ad.as_value(y_prev))
    dyh = ad.sub(ad.as_value(yhat), ad.as_value(yhat_prev))
    return ad.vsum(ad.vabs(ad.sub(dyh, dy)))


def stage1_loss(y, y_prev, yhat, yhat_prev, prev_mask, lam=10.0):
    """Mean over the batch of (recon + lam * velocity) per frame.

    All vertex tensors are (B, N, 3); prev_mask is (B,) with 1 where a
    predecessor frame exists and 0 for clip-initial frames, whose
    velocity term contributes nothing.
    """
    y = ad.as_value(y)
    b = y.shape[0]
    recon = reconstruction_loss(y, yhat)
    mask = np.asarray(prev_mask, dtype=np.float64).reshape(b, 1, 1)
    dy = ad.sub(ad.as_value(y), ad.as_value(y_prev))
    dyh = ad.sub(ad.as_value(yhat), ad.as_value(yhat_prev))
    vel = ad.vsum(ad.vabs(ad.mul(ad.sub(dyh, dy), ad.Value(mask))))
    total = ad.add(recon, ad.mul(vel, ad.as_value(lam)))
    return ad.mul(total, ad.as_value(1.0 / b))


def pose_loss(pred, target):
    """Mean over frames of the squared rotation-vector error (rad^2)."""
    diff = ad.sub(ad.as_value(pred), ad.as_value(target))
    return ad.vmean(ad.row_sqnorm(diff))


# ------------------------------------------------------------ configuration

@dataclass
class TrainConfig:
    epochs: int = 50
    batch: int = 64
    lr: float = 1e-4
    lam: float = 10.0
    seed: int = 0
    # optional early stop: finish the epoch whose mean loss reaches this
    target_loss: float = None


@dataclass
class TrainResult:
    history: list = field(default_factory=list)   # (step, epoch, loss) rows
    epoch_means: list = field(default_factory=list)
    final_step: int = 0


def write_history(history, path):
    with open(path, "w", encoding="ascii") as fh:
        fh.write("step,epoch,loss\n")
        for step, epoch, loss in history:
            fh.write(f"{step},{epoch},{loss:.9g}\n")


# ------------------------------------------------------------------ stage 1

def train_stage1(dataset, model, cfg=None, adam=None, start_epoch=0):
    """Fit the displacement network; returns a TrainResult.

    Deterministic for a given (cfg.seed, start_epoch): every epoch
    shuffles with its own seeded generator, so resuming from an
    epoch-boundary checkpoint reproduces the uninterrupted run.
    """
    cfg = cfg or TrainConfig()
    if dataset.n_frames < 1:
        raise TrainError("dataset has no frames")
    if cfg.batch < 1 or cfg.epochs < 0:
        raise TrainError(f"bad training config: batch={cfg.batch}, epochs={cfg.epochs}")

    model.bind_mesh(dataset.template)
    graph, emb = model._graph, model._emb
    windows = dataset.windows()
    verts = dataset.vertex_stack()
    template = dataset.template.vertices
    t = dataset.n_frames
    adam = adam or ad.AdamState(model.params, lr=cfg.lr)

    result = TrainResult(final_step=adam.t)
    for epoch in range(start_epoch, cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(t)
        epoch_losses = []
        for lo in range(0, t, cfg.batch):
            idx = order[lo:lo + cfg.batch]
            prev = np.maximum(idx - 1, 0)
            mask = (idx > 0).astype(np.float64)
            b = idx.size
            stacked = np.concatenate([windows[idx], windows[prev]], axis=0)
            try:
                disp = model.forward_batch(stacked, graph, emb)
                yhat = ad.add(ad.take_rows(disp, 0, b), ad.Value(template))
                yhat_prev = ad.add(ad.take_rows(disp, b, 2 * b), ad.Value(template))
                loss = stage1_loss(verts[idx], verts[prev], yhat, yhat_prev,
                                   mask, cfg.lam)
                ad.backward(loss)
            except ad.NonFiniteError as exc:
                raise TrainError(
                    f"non-finite loss at step {adam.t + 1}: {exc}"
                ) from exc
            ad.adam_step(model.params, adam)
            value = loss.item()
            epoch_losses.append(value)
            result.history.append((adam.t, epoch, value))
        mean = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        result.epoch_means.append(mean)
        result.final_step = adam.t
        if cfg.target_loss is not None and mean <= cfg.target_loss:
            break
    return result


# ------------------------------------------------------------------ stage 2

def train_stage2(dataset, model, cfg=None, adam=None, start_epoch=0):
    """Fit the pose network on anchored rotation vectors.

    The clip is split into chunk_len pieces; the LSTM state crosses
    boundaries by value only (gradients are truncated). The raw frame-0
    output is snapshotted once per epoch to anchor later chunks.
    """
    cfg = cfg or TrainConfig(epochs=1, batch=8)
    if not dataset.pose_present:
        raise TrainError(
            "dataset has no pose attributes; attach poses first (augment --attach)"
        )
    mels = dataset.mel_stack()
    pcfg = model.cfg
    if mels.shape[1:] != (pcfg.in_channels, pcfg.in_len):
        raise TrainError(
            f"patches are {mels.shape[1:]}, pose model expects "
            f"({pcfg.in_channels}, {pcfg.in_len})"
        )
    target = dataset.pose_track().anchored().vectors
    t = dataset.n_frames
    chunk = pcfg.chunk_len
    adam = adam or ad.AdamState(model.params, lr=cfg.lr)

    result = TrainResult(final_step=adam.t)
    starts = list(range(0, t, chunk))
    for epoch in range(start_epoch, cfg.epochs):
        state = model.zero_state()
        r0 = None
        pending = []
        epoch_losses = []

        def flush():
            total = pending[0]
            for extra in pending[1:]:
                total = ad.add(total, extra)
            total = ad.mul(total, ad.as_value(1.0 / len(pending)))
            try:
                ad.backward(total)
            except ad.NonFiniteError as exc:
                raise TrainError(
                    f"non-finite loss at step {adam.t + 1}: {exc}"
                ) from exc
            ad.adam_step(model.params, adam)
            value = total.item()
            epoch_losses.append(value)
            result.history.append((adam.t, epoch, value))
            pending.clear()

        for lo in starts:
            hi = min(lo + chunk, t)
            try:
                enc = model.encode(mels[lo:hi])
                r, state = model.raw_track(enc, state)
                if r0 is None:
                    anchor = ad.take_rows(r, 0, 1)
                    r0 = r.data[0].copy()
                else:
                    anchor = ad.Value(r0.reshape(1, 3))
                pred = ad.sub(r, anchor)
                pending.append(pose_loss(pred, target[lo:hi]))
            except ad.NonFiniteError as exc:
                raise TrainError(
                    f"non-finite loss at step {adam.t + 1}: {exc}"
                ) from exc
            state = tuple(ad.Value(s.data.copy()) for s in state)
            if len(pending) == cfg.batch:
                flush()
        if pending:
            flush()
        mean = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        result.epoch_means.append(mean)
        result.final_step = adam.t
        if cfg.target_loss is not None and mean <= cfg.target_loss:
            break
    return result


# --------------------------------------------------------------- checkpoints

def save_checkpoint(params, path, adam=None, epoch=0):
    entries = [(name, p.data) for name, p in params.items()]
    if adam is not None:
        for name in params.names():
            entries.append((f"__adam_m/{name}", adam.m[name]))
            entries.append((f"__adam_v/{name}", adam.v[name]))
        entries.append(("__meta_step", np.array([float(adam.t)])))
    entries.append(("__meta_epoch", np.array([float(epoch)])))
    write_container(entries, path)


def load_checkpoint(params, path, adam=None):
    """Load parameters (and moments) in place; returns the stored epoch."""
    box = read_container(path)
    for name, p in params.items():
        if name not in box:
            raise CheckpointError(f"checkpoint missing parameter '{name}'")
        arr = box[name].astype(np.float64)
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"checkpoint entry '{name}' has shape {arr.shape}, "
                f"model expects {p.data.shape}"
            )
        p.data = arr.copy()
        p.zero_grad()
    if adam is not None:
        for name, p in params.items():
            for kind, store in (("m", adam.m), ("v", adam.v)):
                key = f"__adam_{kind}/{name}"
                if key in box:
                    arr = box[key].astype(np.float64)
                    if arr.shape != p.data.shape:
                        raise CheckpointError(
                            f"checkpoint entry '{key}' has shape {arr.shape}, "
                            f"model expects {p.data.shape}"
                        )
                    store[name] = arr.copy()
                else:
                    store[name] = np.zeros_like(p.data)
        if "__meta_step" in box:
            adam.t = int(round(float(box["__meta_step"][0])))
    if "__meta_epoch" in box:
        return int(round(float(box["__meta_epoch"][0])))
    return 0
