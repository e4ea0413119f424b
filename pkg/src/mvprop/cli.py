"""``mvprop`` command line.

Exit codes: 0 success, 2 invalid input or configuration, 1 stage failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import io as mio
from . import pipeline as pl
from .geometry import InvalidInput
from .planes import planes_to_json, remove_planes
from .projection import ObjectSegment, project_annotations, project_proposals
from .proposals import generate_proposals_multiview, proposals_to_json

log = logging.getLogger("mvprop")


def _common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (dotted path, JSON value); repeatable")


def build_parser():
    ap = argparse.ArgumentParser(prog="mvprop", description="Multi-view 3D object proposals from RGB-D frames")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("fuse", help="estimate metric scale and fuse frames into one world cloud")
    p.add_argument("--scene", required=True, help="scene.json")
    p.add_argument("--correspondences", help="Z,z[,frame] CSV (default: next to scene.json)")
    p.add_argument("--out", required=True, help="output PLY")
    p.add_argument("--report", help="fusion report JSON (default: <out>.json)")
    _common(p)

    p = sub.add_parser("planes", help="detect support planes in a cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--filtered-dir", help="also write one plane-filtered PLY per removal fraction")
    _common(p)

    p = sub.add_parser("propose", help="3D proposals from a cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--planes", help="planes JSON (detected when omitted)")
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("project", help="project proposals or labelled segments into frames")
    p.add_argument("--scene", required=True)
    p.add_argument("--cloud", help="world PLY the proposals index into")
    p.add_argument("--proposals", help="proposals JSON")
    p.add_argument("--segments", help="segment manifest JSON (label + PLY per entry)")
    p.add_argument("--alpha", type=float, help="metric scale for the scene poses")
    p.add_argument("--fusion-report", help="take alpha from a fusion report")
    p.add_argument("--out", required=True, help="boxes JSON")
    _common(p)

    p = sub.add_parser("eval", help="recall report (and AP with detections)")
    p.add_argument("--proposals", required=True, help="per-frame proposal boxes JSON")
    p.add_argument("--gt", required=True, help="per-frame ground-truth boxes JSON")
    p.add_argument("--detections", help="scored detections JSON")
    p.add_argument("--out", required=True, help="output directory")
    _common(p)

    p = sub.add_parser("synth", help="render a synthetic scene directory")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--spec", help="SceneSpec JSON")
    g.add_argument("--preset", choices=["a1", "a2", "tabletop"])
    p.add_argument("--frames", type=int, help="camera count for presets")
    p.add_argument("--out", required=True)
    _common(p)

    for name in ("run-multiview", "run-singleview"):
        p = sub.add_parser(name, help=f"{name[4:]} flow end to end")
        p.add_argument("--scene-dir", required=True)
        p.add_argument("--out", required=True)
        _common(p)
    return ap


def _alpha(args, cfg):
    if args.alpha is not None:
        return args.alpha
    if args.fusion_report:
        return float(mio.read_json(args.fusion_report)["alpha"])
    if cfg["fusion"]["alpha"] is not None:
        return float(cfg["fusion"]["alpha"])
    return 1.0


def _run(args, cfg):
    _, hough, prop, vis = pl.params(cfg)
    threads = cfg["threads"]
    if args.cmd == "fuse":
        scene = Path(args.scene)
        _, frames = mio.load_scene(scene)
        corr = Path(args.correspondences) if args.correspondences else scene.parent / "correspondences.csv"
        if args.correspondences and not corr.exists():
            raise InvalidInput(f"{corr} does not exist")
        est, cloud = pl.stage_fuse(frames, corr, cfg, threads)
        mio.save_cloud(cloud, args.out)
        report = args.report or f"{args.out}.json"
        rep = pl.fusion_report(est, cloud)
        mio.write_json(report, rep)
        _write_rows(Path(report).with_suffix(".csv"), ["alpha", "sample_count", "fused_points"],
                    [[rep["alpha"], rep["sample_count"], rep["fused_points"]]])
        log.info("alpha %.6f, %d points", est.alpha, len(cloud))
    elif args.cmd == "planes":
        cloud = mio.load_cloud(args.cloud)
        planes = pl.stage_planes(cloud, hough, threads)
        mio.write_json(args.out, planes_to_json(planes), compact=True)
        _write_rows(Path(args.out).with_suffix(".csv"), ["nx", "ny", "nz", "rho", "inlier_count"],
                    [[*p.normal.tolist(), p.rho, p.inlier_count] for p in planes])
        if args.filtered_dir:
            out = Path(args.filtered_dir)
            out.mkdir(parents=True, exist_ok=True)
            for frac in prop.plane_fractions:
                mio.save_cloud(remove_planes(cloud, planes, frac), out / f"filtered_{frac:.2f}.ply")
        log.info("%d planes", len(planes))
    elif args.cmd == "propose":
        cloud = mio.load_cloud(args.cloud)
        planes = pl.load_planes_or_detect(cloud, args.planes, hough, threads)
        props = generate_proposals_multiview(cloud, planes, prop, threads) if len(cloud) else []
        mio.write_json(args.out, proposals_to_json(props), compact=True)
        log.info("%d proposals", len(props))
    elif args.cmd == "project":
        _, frames = mio.load_scene(args.scene)
        frames = pl.metric_frames(frames, _alpha(args, cfg))
        if args.segments:
            root = Path(args.segments).parent
            segs = [ObjectSegment(e["label"], mio.load_cloud(root / Path(e["file"]).name))
                    for e in mio.read_json(args.segments)]
            mio.save_boxes(args.out, project_annotations(segs, frames, vis))
        elif args.proposals and args.cloud:
            cloud = mio.load_cloud(args.cloud)
            props = pl.load_proposals(args.proposals, cloud)
            fps = project_proposals(props, cloud, frames, vis, 0.95, threads)
            mio.save_boxes(args.out, [(f.frame_id, list(zip(f.boxes, f.proposal_indices))) for f in fps])
        else:
            raise InvalidInput("project needs --segments, or --proposals with --cloud")
    elif args.cmd == "eval":
        rep, _ = pl.evaluate_files(args.proposals, args.gt, args.out, cfg, args.detections)
        if rep.classes:
            log.info("average recall at %.2f: %.4f", rep.thresholds[0], rep.average(rep.thresholds[0]))
    elif args.cmd == "synth":
        from . import synth

        if args.spec:
            spec = synth.SceneSpec.from_json(mio.read_json(args.spec))
        else:
            builder = {"a1": synth.scene_a1, "a2": synth.scene_a2, "tabletop": synth.scene_tabletop}[args.preset]
            spec = builder(**({"n_frames": args.frames} if args.frames else {}))
        truth = synth.generate_scene(spec, seed=cfg["seed"], threads=threads)
        synth.write_scene(truth, spec, args.out)
    elif args.cmd == "run-multiview":
        manifest, rep = pl.run_multiview(cfg, args.scene_dir, args.out)
        _summary(rep)
    elif args.cmd == "run-singleview":
        manifest, rep = pl.run_singleview(cfg, args.scene_dir, args.out)
        _summary(rep)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows([repr(v) if isinstance(v, float) else v for v in r] for r in rows)


def _summary(rep):
    if rep is not None and rep.classes:
        for t in rep.thresholds[:1]:
            log.info("average recall at IoU %.2f: %.4f (%.1f proposals/image)", t, rep.average(t),
                     rep.proposals_per_image)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = pl.load_config(args.config, args.overrides)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        _run(args, cfg)
    except pl.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InvalidInput, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
