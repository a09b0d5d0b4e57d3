"""Command-line interface.

Subcommands: gen-data, train, eval, estimate, refine, gradcheck.
Global flags: --config, --seed, --threads, --deterministic.  The env var
SYMSLICE_DATA_DIR overrides the dataset root.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import autograd as ag
from .data import (
    FAMILIES,
    default_manifest,
    gen_vehicle,
    load_cloud,
    read_manifest,
    write_manifest,
)
from .errors import SymsliceError
from .geometry import Plane, reflect_point
from .grid import normalize_cloud
from .metrics import GroundTruth, angular_error, gte, sde, write_metric_report, MetricRow
from .network import (
    ModelConfig,
    config_from_dict,
    forward,
    load_params,
    save_params,
)
from .refine import (
    Box3D,
    RefinementReport,
    estimate_plane_in_box,
    read_boxes,
    refine_box,
    write_boxes,
    write_report,
)
from .training import (
    RunConfig,
    evaluate,
    load_run_config,
    run_config_to_dict,
    train,
    _subseed,
    prepare_sample,
)
from .errors import DegenerateNormal, TooFewPoints


def _data_dir(args) -> str:
    return os.environ.get("SYMSLICE_DATA_DIR", getattr(args, "data_dir", ".") or ".")


def _load_rc(args) -> RunConfig:
    rc = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        rc = replace(rc, seed=args.seed, model=replace(rc.model, seed=args.seed))
    return rc


def cmd_gen_data(args) -> int:
    rc = _load_rc(args)
    entries = default_manifest(rc.seed, rc.n_train, rc.n_val, rc.n_test)
    out = args.out or os.path.join(_data_dir(args), "manifest.csv")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    write_manifest(entries, out)
    print(f"wrote {len(entries)} entries to {out}")
    return 0


def cmd_train(args) -> int:
    rc = _load_rc(args)
    manifest = read_manifest(args.manifest) if args.manifest else None
    log_path = args.log or (args.checkpoint + ".log.csv")

    def progress(epoch, stats):
        last = [s for s in stats if s.epoch == epoch]
        msg = " ".join(
            f"{s.split}: off={s.offsets_loss:.4f} gte={s.gte:.4f} ang={s.angular_error:.2f}"
            for s in last
        )
        print(f"epoch {epoch}: {msg}", flush=True)

    params, _ = train(rc, log_path=log_path, manifest=manifest, progress=progress)
    save_params(params, args.checkpoint, cfg=rc.model)
    with open(args.checkpoint + ".run.json", "w") as f:
        json.dump(run_config_to_dict(rc), f, indent=2)
    print(f"checkpoint: {args.checkpoint}")
    print(f"log: {log_path}")
    return 0


def _load_checkpoint(path):
    sidecar = path + ".run.json"
    if os.path.exists(sidecar):
        with open(sidecar) as f:
            from .training import run_config_from_dict

            rc = run_config_from_dict(json.load(f))
    else:
        cfg_path = path + ".json"
        if os.path.exists(cfg_path):
            with open(cfg_path) as f:
                rc = RunConfig(model=config_from_dict(json.load(f)))
        else:
            rc = RunConfig()
    params = load_params(path, cfg=rc.model)
    return params, rc


def cmd_eval(args) -> int:
    params, rc = _load_checkpoint(args.checkpoint)
    if args.config:
        rc = _load_rc(args)
        params = load_params(args.checkpoint, cfg=rc.model)
    if args.manifest:
        entries = [e for e in read_manifest(args.manifest) if e.split == args.split]
    else:
        entries = [e for e in default_manifest(rc.seed, rc.n_train, rc.n_val, rc.n_test) if e.split == args.split]
    if not entries:
        print(f"split {args.split}: no samples (count 0)")
        if args.out:
            write_metric_report([], args.out)
        return 0
    rows = evaluate(params, rc.model, rc, entries, rc.partial)
    if args.out:
        write_metric_report(rows, args.out)
    ok = [r for r in rows if r.status == "ok"]
    for name, vals in (
        ("gte", [r.gte for r in ok]),
        ("sde", [r.sde for r in ok]),
        ("angular_error_deg", [r.angular_error_deg for r in ok]),
    ):
        if vals:
            print(f"{name}: mean={np.mean(vals):.6g} median={np.median(vals):.6g}")
    print(f"objects: {len(ok)} ok / {len(rows)} total")
    return 0


def _plane_quad_ply(path, points: np.ndarray, plane: Plane) -> None:
    """Input points plus the plane polygon clipped to the unit box."""
    n = plane.n
    # in-plane basis
    a = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(n, a)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    c = plane.d * n
    quad = [c + s1 * u + s2 * v for s1, s2 in ((-1.2, -1.2), (1.2, -1.2), (1.2, 1.2), (-1.2, 1.2))]
    # Sutherland-Hodgman clip against the 6 unit-box half-spaces
    poly = quad
    for axis in range(3):
        for sign in (1.0, -1.0):
            clipped = []
            for i, p in enumerate(poly):
                q = poly[(i + 1) % len(poly)]
                pin = sign * p[axis] <= 0.5
                qin = sign * q[axis] <= 0.5
                if pin:
                    clipped.append(p)
                if pin != qin:
                    t = (0.5 - sign * p[axis]) / (sign * (q[axis] - p[axis]))
                    clipped.append(p + t * (q - p))
            poly = clipped
            if not poly:
                break
        if not poly:
            break
    with open(path, "w") as f:
        nv = len(points) + len(poly)
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {nv}\n")
        f.write("property double x\nproperty double y\nproperty double z\n")
        f.write(f"element face {1 if len(poly) >= 3 else 0}\n")
        f.write("property list uchar int vertex_indices\nend_header\n")
        for p in points:
            f.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
        for p in poly:
            f.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
        if len(poly) >= 3:
            idx = " ".join(str(len(points) + i) for i in range(len(poly)))
            f.write(f"{len(poly)} {idx}\n")


def cmd_estimate(args) -> int:
    if not os.path.exists(args.cloud):
        print(f"error: no such file: {args.cloud}", file=sys.stderr)
        return 2
    params, rc = _load_checkpoint(args.checkpoint)
    cloud = load_cloud(args.cloud, surface_sample=args.surface_sample, seed=rc.seed)
    norm_cloud, rec = normalize_cloud(cloud)
    out = forward(norm_cloud, params, rc.model)
    plane = out.plane
    line = (
        f"n=({float(plane.n[0])!r},{float(plane.n[1])!r},{float(plane.n[2])!r})"
        f" d={float(plane.d)!r}"
    )
    if args.gt_plane:
        vals = [float(x) for x in args.gt_plane.split(",")]
        gt = GroundTruth(
            planes=[Plane(np.array(vals[:3]), vals[3])],
            object_points=norm_cloud.points,
        )
        line += f" gte={gte(plane, gt):.6g} sde={sde(plane, gt, rc.sde_samples, rc.seed):.6g}"
    print(line)
    if args.ply:
        _plane_quad_ply(args.ply, norm_cloud.points, plane)
        print(f"ply: {args.ply}")
    return 0


def cmd_refine(args) -> int:
    ids, det_boxes = read_boxes(args.boxes)
    gt_ids, gt_boxes = read_boxes(args.gt_boxes) if args.gt_boxes else (ids, det_boxes)
    if len(det_boxes) != len(gt_boxes):
        print("error: detection and gt box lists differ in length", file=sys.stderr)
        return 2
    params = rc = None
    if not args.oracle_planes:
        params, rc = _load_checkpoint(args.checkpoint)
    refined, flags = [], []
    for i, (bid, box) in enumerate(zip(ids, det_boxes)):
        cloud_path = os.path.join(args.clouds, f"{bid}.xyz")
        try:
            if args.oracle_planes:
                plane = gt_boxes[i].symmetry_plane()
            else:
                cloud = load_cloud(cloud_path)
                plane = estimate_plane_in_box(cloud, box, params, rc.model)
            refined.append(refine_box(box, plane, translate=not args.no_translate))
            flags.append("ok")
        except (DegenerateNormal, TooFewPoints, FileNotFoundError, SymsliceError) as e:
            refined.append(box)
            flags.append(type(e).__name__)
    report = RefinementReport(
        yaw_before=[b.yaw for b in det_boxes],
        yaw_after=[b.yaw for b in refined],
        yaw_gt=[b.yaw for b in gt_boxes],
        flags=flags,
    )
    write_boxes(refined, args.out, ids)
    write_report(report, args.report, ids)
    print(f"mean orientation error before: {report.mean_before():.6f} rad")
    print(f"mean orientation error after:  {report.mean_after():.6f} rad")
    return 0


def cmd_gradcheck(args) -> int:
    from .verification import run_suite

    results = run_suite()
    writer = csv.writer(sys.stdout)
    writer.writerow(["op", "max_rel_err", "tol", "status"])
    failed = False
    for r in results:
        writer.writerow([r.op, repr(r.max_rel_err), repr(r.tol), r.status])
        failed = failed or r.status == "fail"
    if args.out:
        with open(args.out, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["op", "max_rel_err", "tol", "status"])
            for r in results:
                wr.writerow([r.op, repr(r.max_rel_err), repr(r.tol), r.status])
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="symslice", description=__doc__)
    ap.add_argument("--config", help="run configuration JSON")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    ap.add_argument("--deterministic", action="store_true", help="force single-threaded reductions")
    ap.add_argument("--data-dir", default=None, help="dataset root (or SYMSLICE_DATA_DIR)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a dataset manifest")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("checkpoint", help="output checkpoint path")
    p.add_argument("--manifest", default=None)
    p.add_argument("--log", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("checkpoint")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--manifest", default=None)
    p.add_argument("--out", default=None, help="metrics CSV path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("estimate", help="estimate the symmetry plane of one cloud")
    p.add_argument("cloud")
    p.add_argument("checkpoint")
    p.add_argument("--ply", default=None, help="write points + plane quad PLY")
    p.add_argument("--surface-sample", type=int, default=None)
    p.add_argument("--gt-plane", default=None, help="nx,ny,nz,d for metric output")
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("refine", help="refine detected boxes with estimated planes")
    p.add_argument("boxes", help="detections CSV")
    p.add_argument("clouds", help="directory of <id>.xyz clouds")
    p.add_argument("checkpoint", nargs="?", default=None)
    p.add_argument("--gt-boxes", default=None)
    p.add_argument("--oracle-planes", action="store_true")
    p.add_argument("--no-translate", action="store_true")
    p.add_argument("--out", default="refined_boxes.csv")
    p.add_argument("--report", default="refine_report.csv")
    p.set_defaults(fn=cmd_refine)

    p = sub.add_parser("gradcheck", help="finite-difference operator verification")
    p.add_argument("--out", default=None, help="also write the CSV here")
    p.set_defaults(fn=cmd_gradcheck)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SymsliceError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
