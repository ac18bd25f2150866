"""Experiment runners: registry, result serialization, baseline fitting.

Full-scale experiment behavior (significance patterns across arms) is
covered by the acceptance suite; here we pin the cheap structural
pieces and one tiny end-to-end runner.
"""

import json

import numpy as np
import pytest

from echo4d.evalstats import kruskal_wallis
from echo4d.experiments import (MEASURES, RUNNERS, ExperimentResult,
                                _baseline_meshes, run_method_comparison,
                                write_result)
from echo4d.meshkit import capped, mesh_volume
from echo4d.phantom import PhantomSpec, generate
from echo4d.volcore import FrameMetrics, MetricsReport

TINY = PhantomSpec(
    semi_axes_mm=[[11.0, 11.0, 17.0], [9.35, 9.35, 15.3], [10.2, 10.2, 16.2]],
    dims=(28, 28, 40),
    spacing_mm=(1.4, 1.4, 1.4),
    wall_thickness_mm=5.0,
    speckle_sigma=0.15,
    rng_seed=31,
    name="exp-test",
)


def _report(values):
    frames = [FrameMetrics(frame=t, volume_ml=v, d_m_mm=d, d_h_mm=2 * d, dice=s)
              for t, (v, d, s) in enumerate(values)]
    return MetricsReport(per_frame=tuple(frames))


class TestRegistry:
    def test_five_experiments_registered(self):
        assert sorted(RUNNERS) == [
            "angular-spacing", "axis-perturbation", "contour-perturbation",
            "ellipsoid-baseline", "method-comparison"]
        assert all(callable(fn) for fn in RUNNERS.values())


class TestWriteResult:
    def test_json_and_csv_shapes(self, tmp_path):
        rep_a = _report([(50.0, 0.2, 0.95), (40.0, 0.3, 0.93), (45.0, 0.25, 0.94)])
        rep_b = _report([(52.0, 0.9, 0.85), (41.0, 1.1, 0.82), (46.0, 1.0, 0.84)])
        kw = {m: kruskal_wallis([[getattr(f, m) for f in rep_a.per_frame],
                                 [getattr(f, m) for f in rep_b.per_frame]])
              for m in MEASURES}
        result = ExperimentResult("demo", ("a", "b"), (rep_a, rep_b), kw,
                                  {"note": 1})
        write_result(result, tmp_path)

        payload = json.loads((tmp_path / "result.json").read_text())
        assert payload["name"] == "demo"
        assert [g["group"] for g in payload["groups"]] == ["a", "b"]
        assert payload["groups"][0]["dice_mean"] == pytest.approx(0.94)
        assert payload["notes"] == {"note": 1}
        for m in MEASURES:
            entry = payload["kruskal_wallis"][m]
            assert 0.0 <= entry["p_value"] <= 1.0
            assert entry["group_count"] == 2 and entry["n_total"] == 6

        lines = (tmp_path / "table.csv").read_text().splitlines()
        assert lines[0].startswith("group,d_m_mm_mean,d_m_mm_sd")
        assert len(lines) == 3
        assert lines[1].split(",")[0] == "a"

    def test_report_lookup_by_label(self):
        rep = _report([(50.0, 0.2, 0.95)])
        result = ExperimentResult("demo", ("only",), (rep,), {}, {})
        assert result.report("only") is rep
        with pytest.raises(ValueError):
            result.report("missing")


class TestEllipsoidBaselineFit:
    def test_recovers_phantom_volumes(self):
        vol, truth = generate(TINY)
        meshes = _baseline_meshes(vol, truth.annotation)
        assert len(meshes) == vol.frame_count
        fitted = np.array([mesh_volume(capped(m)) for m in meshes])
        rel = np.abs(fitted - np.asarray(truth.volumes_ml)) / truth.volumes_ml
        assert rel.max() < 0.05


class TestMethodComparisonTiny:
    def test_structure_and_reliability(self):
        result = run_method_comparison(TINY, theta_d=45.0)
        assert result.labels == ("pipeline", "demons")
        assert set(result.kruskal) == set(MEASURES)
        assert isinstance(result.notes["mean_dice_gap"], float)
        curves = result.notes["reliability"]
        assert set(curves) == {"pipeline", "demons"}
        for curve in curves.values():
            thresholds = [t for t, _ in curve]
            fractions = [f for _, f in curve]
            assert len(curve) == 21
            assert thresholds == sorted(thresholds)
            assert all(0.0 <= f <= 1.0 for f in fractions)
            # higher bar never admits more frames
            assert all(a >= b for a, b in zip(fractions, fractions[1:]))
        for rep in result.reports:
            assert len(rep.per_frame) == 3
