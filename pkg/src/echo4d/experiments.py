"""Robustness and comparison experiments on the phantom suite.

Each runner segments phantom studies under controlled variations, scores
every arm against analytic truth per frame, and summarizes the arms with
a Kruskal-Wallis test per measure. Runners accept explicit specs so the
same analyses scale down for fast checks; the CLI invokes them with the
default suite members.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cli import evaluate_meshes, study_meshes
from .evalstats import (KruskalWallisResult, dice_reliability_curve,
                        kruskal_wallis, voxelize_mesh)
from .meshkit import (EllipsoidModel, fit_ellipsoid_baseline,
                      tessellate_ellipsoid)
from .phantom import PhantomSpec, annotation_for_axis, default_suite, generate
from .pipeline import cyclic_weights, perturb_axis, perturb_contours
from .regengine import register_demons
from .slicer import build_axis_frame
from .volcore import MetricsReport

MEASURES = ("d_m_mm", "d_h_mm", "dice", "volume_ml")
ROTATION_LABELS = ("+x", "-x", "+y", "-y", "+z", "-z")


@dataclass(frozen=True)
class ExperimentResult:
    """Outcome of one experiment: per-arm reports plus rank statistics."""

    name: str
    labels: tuple[str, ...]
    reports: tuple[MetricsReport, ...]
    kruskal: dict
    notes: dict

    def report(self, label: str) -> MetricsReport:
        return self.reports[self.labels.index(label)]


def _metric_values(report: MetricsReport, key: str) -> list[float]:
    return [getattr(fm, key) for fm in report.per_frame]


def _kw_table(reports, measures=MEASURES, prefix="") -> dict:
    return {
        prefix + m: kruskal_wallis([_metric_values(r, m) for r in reports])
        for m in measures
    }


def _truth_masks(spec: PhantomSpec, truth) -> list[np.ndarray]:
    return [voxelize_mesh(m, spec.dims, spec.spacing_mm) for m in truth.meshes]


def run_angular_spacing(spec: PhantomSpec | None = None,
                        theta_ds=(1.0, 5.0, 10.0, 15.0)) -> ExperimentResult:
    """Segment the beating phantom at several angular spacings."""
    spec = spec or default_suite()[1]
    vol, truth = generate(spec)
    masks = _truth_masks(spec, truth)
    reports = []
    for theta_d in theta_ds:
        meshes = study_meshes(vol, truth.annotation, theta_d)
        reports.append(evaluate_meshes(meshes, truth.meshes, spec.dims,
                                       spec.spacing_mm, truth_masks=masks))
    labels = tuple(f"theta_{theta_d:g}" for theta_d in theta_ds)
    return ExperimentResult("angular-spacing", labels, tuple(reports),
                            _kw_table(reports), {})


def run_axis_perturbation(spec: PhantomSpec | None = None,
                          angle_rad: float = np.pi / 32,
                          theta_d: float = 15.0) -> ExperimentResult:
    """Re-annotate and segment after elemental rotations of the axis."""
    spec = spec or default_suite()[1]
    vol, truth = generate(spec)
    masks = _truth_masks(spec, truth)
    labels = ["reference"]
    annotations = [truth.annotation]
    for label in ROTATION_LABELS:
        axis_p = perturb_axis(truth.axis, label, angle_rad)
        labels.append(label)
        annotations.append(annotation_for_axis(spec, axis_p))
    reports = []
    for ann in annotations:
        meshes = study_meshes(vol, ann, theta_d)
        reports.append(evaluate_meshes(meshes, truth.meshes, spec.dims,
                                       spec.spacing_mm, truth_masks=masks))
    return ExperimentResult("axis-perturbation", tuple(labels), tuple(reports),
                            _kw_table(reports), {"angle_rad": angle_rad})


def run_contour_perturbation(spec: PhantomSpec | None = None,
                             delta_mm: float = 1.0,
                             theta_d: float = 15.0) -> ExperimentResult:
    """Segment from radially dilated and eroded seed contours."""
    spec = spec or default_suite()[1]
    vol, truth = generate(spec)
    masks = _truth_masks(spec, truth)
    arms = (
        ("baseline", truth.annotation),
        ("dilated", perturb_contours(truth.annotation, delta_mm)),
        ("eroded", perturb_contours(truth.annotation, -delta_mm)),
    )
    reports = []
    for _, ann in arms:
        meshes = study_meshes(vol, ann, theta_d)
        reports.append(evaluate_meshes(meshes, truth.meshes, spec.dims,
                                       spec.spacing_mm, truth_masks=masks))
    labels = tuple(label for label, _ in arms)
    return ExperimentResult("contour-perturbation", labels, tuple(reports),
                            _kw_table(reports), {"delta_mm": delta_mm})


def _baseline_meshes(vol, annotation) -> list:
    """Per-frame truncated-ellipsoid baseline fitted to the seed contours.

    Fits the geometric model at ED and ES and interpolates its semi-axes
    and truncation height across the cycle with the same temporal weights
    the pipeline uses, so the baseline sees exactly the information a
    geometric method would.
    """
    axis = build_axis_frame(annotation.apex_mm, annotation.base_mm)
    model_ed, _ = fit_ellipsoid_baseline(
        axis, annotation.contour("ED", 0).points_mm,
        annotation.contour("ED", 90).points_mm)
    model_es, _ = fit_ellipsoid_baseline(
        axis, annotation.contour("ES", 0).points_mm,
        annotation.contour("ES", 90).points_mm)
    weights = cyclic_weights(vol.frame_count, vol.ed_index, vol.es_index)
    ed_axes = np.array(model_ed.semi_axes_mm)
    es_axes = np.array(model_es.semi_axes_mm)
    meshes = []
    for t, w in enumerate(weights.weights):
        axes = w * ed_axes + (1.0 - w) * es_axes
        cut = w * model_ed.cut_z_mm + (1.0 - w) * model_es.cut_z_mm
        center = w * model_ed.center_mm + (1.0 - w) * model_es.center_mm
        model = EllipsoidModel(center_mm=center,
                               semi_axes_mm=tuple(axes),
                               orientation=model_ed.orientation,
                               cut_z_mm=min(cut, axes[2] * (1 - 1e-9)))
        meshes.append(tessellate_ellipsoid(model))
    return meshes


def run_ellipsoid_baseline(bent_spec: PhantomSpec | None = None,
                           spheroid_spec: PhantomSpec | None = None,
                           theta_d: float = 15.0) -> ExperimentResult:
    """Compare the pipeline against the geometric ellipsoid baseline."""
    suite = default_suite()
    bent_spec = bent_spec or suite[2]
    spheroid_spec = spheroid_spec or suite[1]
    labels, reports, kruskal = [], [], {}
    notes = {}
    for tag, spec in (("bent", bent_spec), ("spheroid", spheroid_spec)):
        vol, truth = generate(spec)
        masks = _truth_masks(spec, truth)
        pipeline = evaluate_meshes(
            study_meshes(vol, truth.annotation, theta_d), truth.meshes,
            spec.dims, spec.spacing_mm, truth_masks=masks)
        baseline = evaluate_meshes(
            _baseline_meshes(vol, truth.annotation), truth.meshes,
            spec.dims, spec.spacing_mm, truth_masks=masks)
        labels += [f"{tag}:pipeline", f"{tag}:baseline"]
        reports += [pipeline, baseline]
        kruskal.update(_kw_table([pipeline, baseline], prefix=f"{tag}:"))
        truth_vols = np.asarray(truth.volumes_ml)
        base_vols = np.asarray([fm.volume_ml for fm in baseline.per_frame])
        notes[f"{tag}_baseline_volume_max_rel_err"] = float(
            np.abs(base_vols - truth_vols).max() / truth_vols.max())
    return ExperimentResult("ellipsoid-baseline", tuple(labels),
                            tuple(reports), kruskal, notes)


def run_method_comparison(spec: PhantomSpec | None = None,
                          theta_d: float = 15.0) -> ExperimentResult:
    """Pipeline registration versus the classical demons baseline."""
    spec = spec or default_suite()[1]
    vol, truth = generate(spec)
    masks = _truth_masks(spec, truth)
    arms = (
        ("pipeline", None),
        ("demons", lambda fixed, moving: register_demons(fixed, moving)),
    )
    reports = []
    for _, register_fn in arms:
        meshes = study_meshes(vol, truth.annotation, theta_d,
                              register_fn=register_fn)
        reports.append(evaluate_meshes(meshes, truth.meshes, spec.dims,
                                       spec.spacing_mm, truth_masks=masks))
    curves = {
        label: dice_reliability_curve(_metric_values(rep, "dice"), 21)
        for (label, _), rep in zip(arms, reports)
    }
    notes = {
        "reliability": {k: [[t, f] for t, f in v] for k, v in curves.items()},
        "mean_dice_gap": reports[0].stats["mean_dice"]
        - reports[1].stats["mean_dice"],
    }
    labels = tuple(label for label, _ in arms)
    return ExperimentResult("method-comparison", labels, tuple(reports),
                            _kw_table(reports), notes)


RUNNERS = {
    "angular-spacing": run_angular_spacing,
    "axis-perturbation": run_axis_perturbation,
    "contour-perturbation": run_contour_perturbation,
    "ellipsoid-baseline": run_ellipsoid_baseline,
    "method-comparison": run_method_comparison,
}


def _group_row(label: str, report: MetricsReport) -> dict:
    row = {"group": label}
    for m in MEASURES:
        vals = np.asarray(_metric_values(report, m), dtype=float)
        row[f"{m}_mean"] = float(vals.mean())
        row[f"{m}_sd"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return row


def write_result(result: ExperimentResult, out_dir) -> None:
    """Emit the experiment summary as JSON plus a table-style CSV."""
    out_dir = Path(out_dir)
    rows = [_group_row(label, rep)
            for label, rep in zip(result.labels, result.reports)]
    kruskal = {
        key: {"h_statistic": kw.h_statistic, "p_value": kw.p_value,
              "group_count": kw.group_count, "n_total": kw.n_total}
        for key, kw in result.kruskal.items()
    }
    payload = {"name": result.name, "groups": rows, "kruskal_wallis": kruskal,
               "notes": result.notes}
    (out_dir / "result.json").write_text(json.dumps(payload, indent=2) + "\n")

    header = ["group"]
    for m in MEASURES:
        header += [f"{m}_mean", f"{m}_sd"]
    lines = [",".join(header)]
    for row in rows:
        cells = [row["group"]]
        for m in MEASURES:
            cells += [f"{row[f'{m}_mean']:.6f}", f"{row[f'{m}_sd']:.6f}"]
        lines.append(",".join(cells))
    (out_dir / "table.csv").write_text("\n".join(lines) + "\n")
