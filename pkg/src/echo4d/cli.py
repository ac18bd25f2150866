"""Command-line entry points for segmentation, phantoms, and evaluation.

The subcommands cover the whole workflow without the HTTP service:
``segment`` runs the full 4D pipeline from a volume and an annotation,
``phantom`` renders a synthetic study with ground truth, ``evaluate``
scores a prediction directory against a truth directory, ``experiment``
reproduces the robustness studies on the phantom suite, and ``serve``
starts the annotator backend.

All commands are deterministic for identical inputs; outputs carry no
timestamps so repeated runs are byte-identical. Exit codes: 0 success,
1 validation failure (stderr names the violated rule), 2 registration
degeneracy (stderr names the frame and angle).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .errors import RegistrationDegeneracyError, ValidationError
from .evalstats import (bland_altman, correlation, dice,
                        dice_reliability_curve, distance_summary,
                        ejection_fraction, voxelize_mesh, write_metrics_csv)
from .meshkit import SurfaceMesh, build_mesh, capped, mesh_volume, transformed
from .phantom import PhantomSpec, default_suite, generate
from .pipeline import segment_cycle_4d, segment_frame_3d
from .regengine import RegistrationConfig
from .slicer import build_axis_frame
from .volcore import (ClinicalMetrics, FrameMetrics, MetricsReport,
                      StudyAnnotation, Volume4D, read_annotation, read_mesh,
                      read_volume4d, validate_annotation, write_annotation,
                      write_mesh, write_report, write_volume4d)

SUITE_ALIASES = {
    "static": "static",
    "beating": "beating-symmetric",
    "beating-symmetric": "beating-symmetric",
    "bent": "beating-bent",
    "beating-bent": "beating-bent",
    "low-snr": "low-snr",
}


# ---------------------------------------------------------------------------
# Library-level drivers (shared with the service and the experiments)


def segment_study(vol: Volume4D, annotation: StudyAnnotation, theta_d: float,
                  cfg: RegistrationConfig | None = None, *,
                  register_fn=None):
    """Full 4D segmentation of a study from its seed annotation.

    Segments the ED and ES frames spatially from the drawn contours, then
    propagates both anchors through the whole cycle. Returns the axis
    frame and one ContourSet3D per frame.
    """
    ann = validate_annotation(annotation)
    axis = build_axis_frame(ann.apex_mm, ann.base_mm)
    ed, es = vol.ed_index, vol.es_index
    ed_set = segment_frame_3d(
        vol.frame(ed), axis, ann.contour("ED", 0).points_mm,
        ann.contour("ED", 90).points_mm, theta_d, cfg,
        frame_index=ed, register_fn=register_fn)
    es_set = segment_frame_3d(
        vol.frame(es), axis, ann.contour("ES", 0).points_mm,
        ann.contour("ES", 90).points_mm, theta_d, cfg,
        frame_index=es, register_fn=register_fn)
    sets = segment_cycle_4d(vol, axis, ed_set, es_set, cfg,
                            register_fn=register_fn)
    return axis, sets


def study_meshes(vol: Volume4D, annotation: StudyAnnotation, theta_d: float,
                 cfg: RegistrationConfig | None = None, *,
                 register_fn=None) -> list[SurfaceMesh]:
    axis, sets = segment_study(vol, annotation, theta_d, cfg,
                               register_fn=register_fn)
    return [build_mesh(cs, axis) for cs in sets]


def _mask_grid(meshes: list[SurfaceMesh], spacing: float):
    """Bounding voxel grid covering every mesh, with the volume convention
    that voxel (ix, iy, iz) sits at (ix*s, iy*s, iz*s)."""
    verts = np.vstack([m.vertices for m in meshes])
    lo = verts.min(axis=0)
    shift = np.where(lo < spacing, spacing - lo, 0.0)
    hi = (verts + shift).max(axis=0)
    dims = tuple(int(np.ceil(h / spacing)) + 2 for h in hi)
    return dims, (spacing,) * 3, shift


def evaluate_meshes(pred: list[SurfaceMesh], truth: list[SurfaceMesh],
                    dims=None, spacing_mm=None,
                    truth_masks=None) -> MetricsReport:
    """Per-frame distance/overlap metrics of predictions against truth.

    Dice is computed on the study grid when given, otherwise on a 1 mm
    bounding grid over both mesh sets. ``truth_masks`` may carry
    pre-voxelized truth occupancy (one per frame) to avoid recomputation
    across experiment arms.
    """
    if len(pred) != len(truth) or not pred:
        raise ValidationError(
            "frame_mismatch",
            f"prediction has {len(pred)} frames, truth has {len(truth)}")
    shift = np.zeros(3)
    if dims is None or spacing_mm is None:
        dims, spacing_mm, shift = _mask_grid(pred + truth, 1.0)
    eye = np.eye(3)

    def mask(mesh):
        shifted = transformed(mesh, eye, shift) if shift.any() else mesh
        return voxelize_mesh(shifted, dims, spacing_mm)

    per_frame = []
    volumes = []
    for t, (p, r) in enumerate(zip(pred, truth)):
        vol_ml = mesh_volume(capped(p))
        m_p = mask(p)
        m_r = truth_masks[t] if truth_masks is not None else mask(r)
        d_m, d_h = distance_summary(p, r)
        per_frame.append(FrameMetrics(
            frame=t, volume_ml=vol_ml, d_m_mm=d_m, d_h_mm=d_h,
            dice=dice(m_p, m_r)))
        volumes.append(vol_ml)

    truth_volumes = [mesh_volume(capped(r)) for r in truth]
    edv, esv = max(volumes), min(volumes)
    clinical = ClinicalMetrics(edv_ml=edv, esv_ml=esv,
                               ef_percent=ejection_fraction(edv, esv))
    stats = {
        "mean_d_m_mm": float(np.mean([fm.d_m_mm for fm in per_frame])),
        "mean_d_h_mm": float(np.mean([fm.d_h_mm for fm in per_frame])),
        "mean_dice": float(np.mean([fm.dice for fm in per_frame])),
        "truth_ef_percent": ejection_fraction(max(truth_volumes),
                                              min(truth_volumes)),
    }
    if len(volumes) >= 2 and np.ptp(volumes) > 0 and np.ptp(truth_volumes) > 0:
        stats["volume_pearson_r"] = correlation(volumes, truth_volumes)
        ba = bland_altman(volumes, truth_volumes)
        stats["volume_bias_ml"] = ba.bias
        stats["volume_loa_ml"] = [ba.loa_low, ba.loa_high]
    return MetricsReport(per_frame=tuple(per_frame), clinical=clinical,
                         stats=stats)


def load_mesh_dir(path) -> list[SurfaceMesh]:
    path = Path(path)
    files = sorted(path.glob("mesh_*.obj"))
    if not files:
        raise ValidationError("evaluate_inputs",
                              f"no mesh_*.obj files in {path}")
    return [read_mesh(f) for f in files]


def _write_volume_csv(path, volumes_ml) -> None:
    lines = ["frame,volume_mL"]
    lines += [f"{t},{v:.6f}" for t, v in enumerate(volumes_ml)]
    Path(path).write_text("\n".join(lines) + "\n")


def _load_config(path) -> RegistrationConfig:
    path = Path(path)
    if not path.is_file():
        raise ValidationError("config_schema", f"no such file: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError("config_schema", f"not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ValidationError("config_schema", "config must be a JSON object")
    allowed = {f.name for f in dataclasses.fields(RegistrationConfig)}
    unknown = set(obj) - allowed
    if unknown:
        raise ValidationError("config_schema",
                              f"unknown config keys: {sorted(unknown)}")
    if "mu_bounds" in obj:
        obj["mu_bounds"] = tuple(obj["mu_bounds"])
    return RegistrationConfig(**obj)


def _spec_from_json(path, seed=None) -> PhantomSpec:
    path = Path(path)
    if not path.is_file():
        raise ValidationError("phantom_spec", f"no such file: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError("phantom_spec", f"not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ValidationError("phantom_spec", "spec must be a JSON object")
    allowed = {f.name for f in dataclasses.fields(PhantomSpec)}
    unknown = set(obj) - allowed
    if unknown:
        raise ValidationError("phantom_spec",
                              f"unknown spec keys: {sorted(unknown)}")
    for key in ("dims", "spacing_mm"):
        if key in obj:
            obj[key] = tuple(obj[key])
    if seed is not None:
        obj["rng_seed"] = seed
    return PhantomSpec(**obj)


def _suite_spec(name: str, seed=None) -> PhantomSpec:
    canonical = SUITE_ALIASES.get(name)
    if canonical is None:
        raise ValidationError(
            "phantom_name",
            f"unknown phantom {name!r}; choose from {sorted(SUITE_ALIASES)}")
    spec = next(sp for sp in default_suite() if sp.name == canonical)
    if seed is not None:
        spec = dataclasses.replace(spec, rng_seed=seed)
    return spec


# ---------------------------------------------------------------------------
# Subcommands


def cmd_segment(args) -> int:
    vol = read_volume4d(args.volume)
    ann = read_annotation(args.annotation)
    cfg = _load_config(args.config) if args.config else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meshes = study_meshes(vol, ann, args.theta_d, cfg)
    for t, mesh in enumerate(meshes):
        write_mesh(mesh, out / f"mesh_{t:03d}.obj")
    volumes = [mesh_volume(capped(m)) for m in meshes]
    _write_volume_csv(out / "volumes.csv", volumes)
    if args.truth:
        truth_meshes = load_mesh_dir(args.truth)
        report = evaluate_meshes(meshes, truth_meshes)
        write_report(report, out / "report.json")
        write_metrics_csv(report, out / "metrics.csv")
    print(f"wrote {len(meshes)} frame meshes to {out}")
    return 0


def cmd_phantom(args) -> int:
    if args.spec:
        spec = _spec_from_json(args.spec, seed=args.seed)
    elif args.name:
        spec = _suite_spec(args.name, seed=args.seed)
    else:
        raise ValidationError("phantom_name", "give --name or --spec")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vol, truth = generate(spec)
    write_volume4d(vol, out / "volume.json")
    write_annotation(truth.annotation, out / "annotation.json")
    tdir = out / "truth"
    tdir.mkdir(exist_ok=True)
    for t, mesh in enumerate(truth.meshes):
        write_mesh(mesh, tdir / f"mesh_{t:03d}.obj")
    _write_volume_csv(tdir / "volumes.csv", truth.volumes_ml)
    meta = {
        "name": spec.name,
        "frame_count": spec.frame_count,
        "ed_index": 0,
        "es_index": spec.es_index,
        "ef_percent": truth.ef_percent,
        "dims": list(spec.dims),
        "spacing_mm": list(spec.spacing_mm),
        "rng_seed": spec.rng_seed,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"wrote phantom study to {out}")
    return 0


def cmd_evaluate(args) -> int:
    pred = load_mesh_dir(args.pred)
    truth = load_mesh_dir(args.truth)
    report = evaluate_meshes(pred, truth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out / "report.json")
    write_metrics_csv(report, out / "metrics.csv")
    curve = dice_reliability_curve([fm.dice for fm in report.per_frame], 21)
    lines = ["threshold,fraction"] + [f"{t:.2f},{f:.6f}" for t, f in curve]
    (out / "reliability.csv").write_text("\n".join(lines) + "\n")
    ba_stats = {k: report.stats[k] for k in ("volume_bias_ml", "volume_loa_ml")
                if k in report.stats}
    if ba_stats:
        lines = ["bias_ml,loa_low_ml,loa_high_ml",
                 f"{ba_stats['volume_bias_ml']:.6f},"
                 f"{ba_stats['volume_loa_ml'][0]:.6f},"
                 f"{ba_stats['volume_loa_ml'][1]:.6f}"]
        (out / "bland_altman.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote evaluation report to {out}")
    return 0


def cmd_experiment(args) -> int:
    from . import experiments

    runner = experiments.RUNNERS.get(args.name)
    if runner is None:
        raise ValidationError(
            "experiment_name",
            f"unknown experiment {args.name!r}; choose from "
            f"{sorted(experiments.RUNNERS)}")
    result = runner()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    experiments.write_result(result, out)
    print(f"wrote experiment results to {out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    root = Path(args.data_root)
    if not root.is_dir():
        raise ValidationError("data_root", f"not a directory: {root}")
    app = create_app(root)
    try:
        uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="warning")
    except (OSError, SystemExit) as exc:
        print(f"error serving on port {args.port}: {exc}", file=sys.stderr)
        return 1
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="echo4d",
        description="Semi-automated 4D left-ventricle segmentation tools")
    sub = parser.add_subparsers(dest="command", required=True)

    seg = sub.add_parser("segment", help="segment a 4D study end to end")
    seg.add_argument("--volume", required=True, help="volume header JSON")
    seg.add_argument("--annotation", required=True, help="seed annotation JSON")
    seg.add_argument("--theta-d", type=float, default=5.0,
                     help="angular slice spacing in degrees (default 5)")
    seg.add_argument("--config", help="RegistrationConfig overrides, JSON")
    seg.add_argument("--out", required=True, help="output directory")
    seg.add_argument("--truth", help="truth mesh directory for a report")

    ph = sub.add_parser("phantom", help="generate a synthetic study")
    ph.add_argument("--name", help="suite member: static, beating, bent, low-snr")
    ph.add_argument("--spec", help="custom PhantomSpec JSON")
    ph.add_argument("--out", required=True, help="output directory")
    ph.add_argument("--seed", type=int, help="override the speckle seed")

    ev = sub.add_parser("evaluate", help="score predictions against truth")
    ev.add_argument("--pred", required=True, help="directory of mesh_*.obj")
    ev.add_argument("--truth", required=True, help="directory of mesh_*.obj")
    ev.add_argument("--out", required=True, help="output directory")

    ex = sub.add_parser("experiment", help="run a phantom-suite experiment")
    ex.add_argument("--name", required=True,
                    help="angular-spacing | axis-perturbation | "
                         "contour-perturbation | ellipsoid-baseline | "
                         "method-comparison")
    ex.add_argument("--out", required=True, help="output directory")

    sv = sub.add_parser("serve", help="run the annotator HTTP service")
    sv.add_argument("--port", type=int, default=8000)
    sv.add_argument("--data-root", required=True, help="studies directory")
    return parser


_HANDLERS = {
    "segment": cmd_segment,
    "phantom": cmd_phantom,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except ValidationError as exc:
        print(f"error {exc.rule}: {exc.detail}", file=sys.stderr)
        return 1
    except RegistrationDegeneracyError as exc:
        print(f"error registration_degenerate: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
