"""Command-line surface: synth / train / infer / eval / augment.

Exit codes: 0 success, 2 usage error, 1 runtime error. Effective
options (including defaults) are echoed to stderr before work starts.
``HAVA_THREADS`` caps per-frame parallelism during inference; the pose
pass itself is sequential by nature.
"""

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import augment as aug
from . import autodiff as ad
from . import evaluate as ev
from . import train as tr
from .anim_model import AnimationConfig, AnimationModel
from .audio import (MelConfig, add_gaussian_noise, mel_patches, read_wav,
                    slice_feature_windows, write_wav)
from .container import read_container
from .data import (DataError, PoseTrack, generate_synthetic_dataset,
                   load_dataset, read_pose_csv, save_dataset,
                   synthetic_region_masks, synthetic_waveform, write_pose_csv)
from .mesh import (apply_pose, build_adjacency, export_ply_colormap, load_obj,
                   load_region_mask, write_obj)
from .pose_model import PoseConfig, PoseModel, predict_pose_track


def _threads():
    raw = os.environ.get("HAVA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"HAVA_THREADS must be an integer, got {raw!r}")


def _echo(cmd, options):
    text = " ".join(f"{k}={v}" for k, v in options.items())
    print(f"hava {cmd}: {text}", file=sys.stderr)


# ------------------------------------------------------------------- infer

def infer_sequence(template, anim_model, pose_model, features, wave, out_dir,
                   fps=60.0, no_pose=False, const_pose=None, snr_db=None,
                   noise_seed=0, roundtrip=False, threads=1):
    """Audio features + checkpoints -> per-frame posed OBJs and poses.csv.

    Returns (list of (N, 3) vertex arrays, PoseTrack). ``const_pose``
    forces every frame to one rotation vector; ``no_pose`` forces zeros.
    With ``roundtrip`` set, each posed frame is unposed again and must
    recover the unposed vertices within 1e-9 mm.
    """
    t = features.shape[0]
    windows = slice_feature_windows(features, anim_model.cfg.window)
    anim_model.bind_mesh(template)
    graph, emb = anim_model._graph, anim_model._emb

    group = 32
    groups = [(lo, min(lo + group, t)) for lo in range(0, t, group)]

    def run_group(bounds):
        lo, hi = bounds
        disp = anim_model.forward_batch(windows[lo:hi], graph, emb)
        return template.vertices[None] + disp.data

    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(run_group, groups))
    else:
        chunks = [run_group(g) for g in groups]
    unposed = np.concatenate(chunks, axis=0)

    if no_pose:
        track = PoseTrack(np.zeros((t, 3)))
    elif const_pose is not None:
        track = PoseTrack(np.tile(np.asarray(const_pose, dtype=np.float64), (t, 1)))
    else:
        if wave is None:
            raise DataError("pose inference needs audio; pass a wav or --no-pose")
        if snr_db is not None:
            wave = add_gaussian_noise(wave, snr_db, seed=noise_seed)
        mel_cfg = MelConfig(sample_rate=wave.sample_rate)
        patches = mel_patches(wave, t, fps, mel_cfg)
        track = predict_pose_track(pose_model, patches)

    pivot = template.centroid()
    os.makedirs(out_dir, exist_ok=True)
    posed = []
    for i in range(t):
        vertices = apply_pose(unposed[i], track.vectors[i], pivot)
        if roundtrip:
            back = apply_pose(vertices, -track.vectors[i], pivot)
            worst = float(np.abs(back - unposed[i]).max())
            if worst > 1e-9:
                raise DataError(
                    f"pose round-trip failed at frame {i}: {worst:.3e} mm"
                )
        posed.append(vertices)
        write_obj(vertices, os.path.join(out_dir, f"frame_{i:05d}.obj"),
                  faces=template.faces)
    write_pose_csv(track, os.path.join(out_dir, "poses.csv"))
    return posed, track


# ------------------------------------------------------------- subcommands

def _cmd_synth(args):
    _echo("synth", {"out": args.out, "vertices": args.vertices,
                    "frames": args.frames, "seed": args.seed})
    dataset = generate_synthetic_dataset(args.seed, args.vertices, args.frames)
    save_dataset(dataset, args.out)
    wave = synthetic_waveform(args.frames, dataset.fps,
                              MelConfig().sample_rate)
    write_wav(wave, os.path.join(args.out, "audio.wav"))
    write_pose_csv(dataset.pose_track(), os.path.join(args.out, "poses.csv"))
    lip, eye = synthetic_region_masks(dataset.template)
    for mask, fname in ((lip, "lip.txt"), (eye, "eye.txt")):
        with open(os.path.join(args.out, fname), "w", encoding="ascii") as fh:
            fh.write(f"# {mask.name} band on the synthetic sphere\n")
            for idx in mask.indices:
                fh.write(f"{idx}\n")
    print(f"wrote {dataset.n_frames} frames, {dataset.template.n_vertices} "
          f"vertices to {args.out}", file=sys.stderr)
    return 0


_STAGE_DEFAULTS = {1: {"epochs": 50, "batch": 64}, 2: {"epochs": 1, "batch": 8}}


def _cmd_train(args):
    defaults = _STAGE_DEFAULTS[args.stage]
    epochs = args.epochs if args.epochs is not None else defaults["epochs"]
    batch = args.batch if args.batch is not None else defaults["batch"]
    _echo("train", {"stage": args.stage, "data": args.data, "ckpt": args.ckpt,
                    "epochs": epochs, "batch": batch, "lr": args.lr,
                    "lambda": args.lam, "seed": args.seed})
    dataset = load_dataset(args.data)
    cfg = tr.TrainConfig(epochs=epochs, batch=batch, lr=args.lr,
                         lam=args.lam, seed=args.seed)
    if args.stage == 1:
        model = AnimationModel(
            AnimationConfig(window=dataset.window,
                            feat_dim=dataset.features.shape[1]),
            seed=args.seed)
    else:
        mels = dataset.mel_stack()
        model = PoseModel(
            PoseConfig(in_channels=mels.shape[1], in_len=mels.shape[2]),
            seed=args.seed)
    adam = ad.AdamState(model.params, lr=args.lr)
    start_epoch = 0
    if os.path.exists(args.ckpt):
        # an existing checkpoint continues training up to --epochs
        start_epoch = tr.load_checkpoint(model.params, args.ckpt, adam=adam)
        adam.lr = args.lr
        print(f"resuming {args.ckpt} from epoch {start_epoch}",
              file=sys.stderr)
    if args.stage == 1:
        result = tr.train_stage1(dataset, model, cfg, adam=adam,
                                 start_epoch=start_epoch)
    else:
        result = tr.train_stage2(dataset, model, cfg, adam=adam,
                                 start_epoch=start_epoch)
    tr.save_checkpoint(model.params, args.ckpt, adam=adam, epoch=cfg.epochs)
    tr.write_history(result.history, args.ckpt + ".history.csv")
    last = result.epoch_means[-1] if result.epoch_means else float("nan")
    print(f"stage {args.stage}: {result.final_step} steps, "
          f"last epoch mean loss {last:.6g}", file=sys.stderr)
    return 0


def _parse_const_pose(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise DataError(f"--debug-const-pose needs rx,ry,rz, got {text!r}")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise DataError(f"--debug-const-pose needs rx,ry,rz, got {text!r}") from None


def _cmd_infer(args):
    _echo("infer", {"template": args.template, "anim_ckpt": args.anim_ckpt,
                    "pose_ckpt": args.pose_ckpt, "features": args.features,
                    "wav": args.wav, "out": args.out, "no_pose": args.no_pose,
                    "snr_db": args.snr_db, "noise_seed": args.noise_seed,
                    "threads": _threads()})
    template = build_adjacency(load_obj(args.template))
    box = read_container(args.features)
    if "features" not in box:
        raise DataError(f"{args.features}: missing 'features' entry")
    features = box["features"].astype(np.float64)
    if features.ndim != 2:
        raise DataError(f"{args.features}: features must be (T, D)")
    fps, window = 60.0, 16
    if "meta" in box and box["meta"].shape == (2,):
        fps = float(box["meta"][0])
        window = int(round(float(box["meta"][1])))

    anim = AnimationModel(AnimationConfig(window=window,
                                          feat_dim=features.shape[1]))
    tr.load_checkpoint(anim.params, args.anim_ckpt)

    pose_model = None
    wave = None
    const_pose = None
    if args.debug_const_pose:
        const_pose = _parse_const_pose(args.debug_const_pose)
    elif not args.no_pose:
        if not args.pose_ckpt or not args.wav:
            raise DataError(
                "infer needs --pose-ckpt and --wav unless --no-pose is set"
            )
        wave = read_wav(args.wav)
        pose_model = PoseModel(PoseConfig())
        tr.load_checkpoint(pose_model.params, args.pose_ckpt)

    infer_sequence(template, anim, pose_model, features, wave, args.out,
                   fps=fps, no_pose=args.no_pose, const_pose=const_pose,
                   snr_db=args.snr_db, noise_seed=args.noise_seed,
                   roundtrip=args.debug_pose_roundtrip, threads=_threads())
    print(f"wrote {features.shape[0]} frames to {args.out}", file=sys.stderr)
    return 0


def _load_pred_frames(pred_dir, n):
    frames = []
    for i in range(n):
        path = os.path.join(pred_dir, f"frame_{i:05d}.obj")
        if not os.path.exists(path):
            raise DataError(f"{pred_dir}: missing frame OBJ for frame {i}")
        frames.append(load_obj(path).vertices)
    return frames


def _cmd_eval(args):
    _echo("eval", {"pred": args.pred, "gt": args.gt, "mask": args.mask,
                   "report": args.report, "colormap": args.colormap,
                   "squared": args.squared})
    if not args.mask:
        raise DataError("eval needs at least one --mask file")
    if len(args.mask) > 2:
        raise DataError("eval takes at most two --mask files (lip, eye)")
    gt = load_dataset(args.gt)
    n = gt.template.n_vertices
    preds = _load_pred_frames(args.pred, gt.n_frames)
    for i, arr in enumerate(preds):
        if arr.shape != (n, 3):
            raise DataError(
                f"{args.pred}: frame {i} has {arr.shape[0]} vertices, "
                f"ground truth has {n}"
            )
    pairs = [(gt.samples[i].gt_vertices, preds[i]) for i in range(gt.n_frames)]
    masks = [load_region_mask(path, n) for path in args.mask]

    series = {m.name: ev.regional_series(pairs, m, squared=args.squared)
              for m in masks}
    metrics = {m.name: float(series[m.name].mean()) for m in masks}
    row = {
        "method": os.path.basename(os.path.normpath(args.pred)) or "pred",
        "dataset": os.path.basename(os.path.normpath(args.gt)) or "gt",
        "e_vl": metrics[masks[0].name],
        "e_ve": metrics[masks[1].name] if len(masks) > 1 else None,
        "series": series,
    }
    ev.emit_report([row], args.report)
    if args.colormap:
        field = ev.mean_vertex_error_field(pairs)
        export_ply_colormap(gt.template, field, args.colormap)
    unit = "mm^2" if args.squared else "mm"
    for name, value in metrics.items():
        print(f"{name}: {value:.6f} {unit}", file=sys.stderr)
    return 0


def _cmd_augment(args):
    _echo("augment", {"poses": args.poses, "out": args.out,
                      "sigma": args.sigma, "window": args.window,
                      "attach": args.attach})
    track = read_pose_csv(args.poses)
    smoothed = aug.gaussian_smooth(track, sigma=args.sigma, window=args.window)
    write_pose_csv(smoothed, args.out)
    if args.attach:
        dataset = load_dataset(args.attach)
        dataset = aug.attach_poses(dataset, smoothed)
        save_dataset(dataset, args.attach)
        print(f"attached {len(smoothed)} poses to {args.attach}",
              file=sys.stderr)
    return 0


# ------------------------------------------------------------------ parser

def build_parser():
    parser = argparse.ArgumentParser(
        prog="hava",
        description="Two-stage audio-driven 3D facial animation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic oracle dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--vertices", type=int, required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train stage 1 (mesh) or stage 2 (pose)")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lambda", dest="lam", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="run the full audio-to-mesh pipeline")
    p.add_argument("--template", required=True)
    p.add_argument("--anim-ckpt", required=True)
    p.add_argument("--pose-ckpt", default=None)
    p.add_argument("--features", required=True)
    p.add_argument("--wav", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--no-pose", action="store_true")
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--debug-const-pose", default=None, metavar="RX,RY,RZ")
    p.add_argument("--debug-pose-roundtrip", action="store_true")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="regional error metrics against a dataset")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mask", action="append", default=[])
    p.add_argument("--report", required=True)
    p.add_argument("--colormap", default=None)
    p.add_argument("--squared", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("augment", help="smooth a pose track; optionally attach")
    p.add_argument("--poses", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--window", type=int, default=29)
    p.add_argument("--attach", default=None)
    p.set_defaults(func=_cmd_augment)

    return parser


def run_cli(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
