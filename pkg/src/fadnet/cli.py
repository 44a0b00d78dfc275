"""Command line: gradcheck, train, infer, eval, stats, remake-labels.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .errors import FadnetError

log = logging.getLogger("fadnet")


class UsageError(Exception):
    pass


def _data_dir(arg) -> Path:
    root = arg or os.environ.get("FADNET_DATA_DIR")
    if not root:
        raise UsageError("no data directory given and FADNET_DATA_DIR is unset")
    return Path(root)


def cmd_gradcheck(args) -> int:
    from .sweep import run_sweep

    results = run_sweep(eps=args.eps, tol=args.tol, model_coords=args.model_coords,
                        include_model=not args.primitives_only)
    ok = True
    for name, rep in results:
        status = "PASS" if rep.passed else "FAIL"
        ok &= rep.passed
        print(f"{status} {name} max_rel_error={rep.max_rel_error:.3e} checked={rep.n_checked} "
              f"kinks={len(rep.kinks)}")
    return 0 if ok else 1


def _run_config(args):
    from .pipeline import RunConfig

    run = RunConfig.from_text(Path(args.config).read_text()) if args.config else RunConfig()
    overrides = {}
    for key in ("variant", "seed", "frames", "objects", "repeats"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if overrides:
        run = RunConfig(**{**run.__dict__, **overrides})
    run.model_config(1)  # validates the variant early
    return run


def cmd_train(args) -> int:
    from .kitti.synthetic import read_frames, write_scenes
    from .pipeline import fit, synthetic_frames

    run = _run_config(args)
    out = Path(args.out)
    if args.synthetic:
        frames = synthetic_frames(run)
        data = out / "data"
        write_scenes(frames, data)
        log.info("wrote %d synthetic frames to %s", len(frames), data)
    else:
        frames = read_frames(_data_dir(args.data))
    result, _ = fit(run, frames, checkpoint_dir=out / "checkpoint", log_path=out / "train_log.csv",
                    resume=args.resume)
    print(f"trained {run.variant} for {len(result.log)} epochs in {result.seconds:.1f}s; "
          f"final total {result.final_total:.6f}")
    return 0


def cmd_infer(args) -> int:
    from .checkpoint import load_model
    from .decode import write_results
    from .kitti.synthetic import read_frames
    from .pipeline import DataInfo, predict

    model = load_model(args.checkpoint)
    info = DataInfo.load(args.checkpoint)
    frames = read_frames(_data_dir(args.data))
    dets = predict(model, frames, info, args.threshold, args.topk)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for frame, d in zip(frames, dets):
        (out / f"{frame.image_id}.txt").write_text(write_results(d))
    print(f"wrote results for {len(frames)} frames to {out}")
    return 0


def _load_pairs(results_dir, labels_dir):
    from .decode import read_results
    from .kitti.labels import parse_label_file

    results_dir, labels_dir = Path(results_dir), Path(labels_dir)
    ids = sorted(p.stem for p in labels_dir.glob("*.txt"))
    if not ids:
        raise FadnetError(f"no label files in {labels_dir}")
    dets, gts = [], []
    for i in ids:
        res = results_dir / f"{i}.txt"
        dets.append(read_results(res.read_text()) if res.exists() else [])
        gts.append(parse_label_file((labels_dir / f"{i}.txt").read_text()))
    return dets, gts


def cmd_eval(args) -> int:
    from .metrics.report import evaluate, to_csv

    labels = args.labels or (_data_dir(None) / "label_2")
    dets, gts = _load_pairs(args.results, labels)
    rows = []
    for metric in args.metric:
        rows += evaluate(dets, gts, metric, args.iou, args.interp, args.category)
    sys.stdout.write(to_csv(rows))
    return 0


def cmd_stats(args) -> int:
    from .decode import read_results
    from .kitti.labels import parse_calib, parse_label_file
    from .metrics.stats import consistency_stat, depth_row_stat

    if args.which == "consistency":
        if not args.results or not args.calib:
            raise UsageError("stats consistency needs --results and --calib")
        print("bucket_lo,bucket_hi,mean_iou,count")
        totals = {}
        for res in sorted(Path(args.results).glob("*.txt")):
            K = parse_calib((Path(args.calib) / res.name).read_text())
            for (lo, hi), _, _ in consistency_stat([], K):
                totals.setdefault((lo, hi), [0.0, 0])
            for (lo, hi), mean, count in consistency_stat(read_results(res.read_text()), K):
                if count:
                    totals[(lo, hi)][0] += mean * count
                    totals[(lo, hi)][1] += count
        for (lo, hi), (s, n) in sorted(totals.items()):
            print(f"{lo:g},{hi:g},{s / n if n else 'n/a'},{n}")
        return 0
    if not args.labels:
        raise UsageError("stats depth-rows needs --labels")
    objects = []
    for p in sorted(Path(args.labels).glob("*.txt")):
        objects += parse_label_file(p.read_text())
    print("row,mean_depth")
    for row, depth in depth_row_stat(objects, args.bucket).items():
        print(f"{row},{depth}")
    return 0


def cmd_remake_labels(args) -> int:
    from .errors import ProjectionError
    from .geometry import remake_label_2d
    from .kitti.labels import parse_calib, parse_label_file, write_label_file

    src, calib, out = Path(args.labels), Path(args.calib), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    skipped = 0
    files = sorted(src.glob("*.txt"))
    for p in files:
        K = parse_calib((calib / p.name).read_text())
        remade = []
        for obj in parse_label_file(p.read_text()):
            if obj.is_dontcare:
                remade.append(obj)
                continue
            try:
                remade.append(obj.with_bbox(remake_label_2d(obj.box3d, K)))
            except ProjectionError:
                skipped += 1
                log.warning("%s: object behind the camera skipped", p.name)
        (out / p.name).write_text(write_label_file(remade, False))
    print(f"remade {len(files)} label files into {out} ({skipped} objects skipped)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fadnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", help="finite-difference sweep over primitives, losses and model")
    g.add_argument("--eps", type=float, default=1e-5)
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--model-coords", type=int, default=6, help="sampled coordinates per model tensor")
    g.add_argument("--primitives-only", action="store_true")
    g.set_defaults(fn=cmd_gradcheck)

    variants = ("full", "baseline", "fa", "dh", "reversed")
    t = sub.add_parser("train", help="stage-wise training")
    t.add_argument("--config", help="key=value run config file")
    src = t.add_mutually_exclusive_group()
    src.add_argument("--data", help="KITTI-layout directory (default $FADNET_DATA_DIR)")
    src.add_argument("--synthetic", action="store_true", help="generate synthetic scenes")
    t.add_argument("--seed", type=int)
    t.add_argument("--frames", type=int)
    t.add_argument("--objects", type=int)
    t.add_argument("--repeats", type=int)
    t.add_argument("--variant", choices=variants)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", action="store_true")
    t.set_defaults(fn=cmd_train)

    i = sub.add_parser("infer", help="write KITTI result files")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", help="KITTI-layout directory (default $FADNET_DATA_DIR)")
    i.add_argument("--out", required=True)
    i.add_argument("--threshold", type=float, default=0.25)
    i.add_argument("--topk", type=int, default=100)
    i.set_defaults(fn=cmd_infer)

    e = sub.add_parser("eval", help="AP / AOS report as CSV")
    e.add_argument("--results", required=True)
    e.add_argument("--labels")
    e.add_argument("--metric", nargs="+", default=["ap3d"], choices=("ap2d", "apbev", "ap3d", "aos"))
    e.add_argument("--iou", type=float, default=0.7)
    e.add_argument("--interp", choices=("r11", "r40"), default="r40")
    e.add_argument("--category", default="Car")
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("stats", help="consistency or depth-by-row statistics")
    s.add_argument("which", choices=("consistency", "depth-rows"))
    s.add_argument("--results")
    s.add_argument("--calib")
    s.add_argument("--labels")
    s.add_argument("--bucket", type=int, default=32)
    s.set_defaults(fn=cmd_stats)

    r = sub.add_parser("remake-labels", help="replace 2D boxes by projected 3D box extents")
    r.add_argument("--labels", required=True)
    r.add_argument("--calib", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_remake_labels)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (FadnetError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
