import numpy as np
import pytest
from scipy.spatial.distance import cdist

from vseg import metrics
from vseg.metrics import (EvaluationRecord, assd_mm, cohort_report, dsc,
                          hausdorff_mm, segment_sens_spec, surface_voxels,
                          volume_ml)


def brute_force_surface_distances(a, b, spacing):
    """O(n^2) pairwise oracle over the same 6-connectivity surface sets."""
    sa = np.argwhere(surface_voxels(a)) * np.asarray(spacing)
    sb = np.argwhere(surface_voxels(b)) * np.asarray(spacing)
    d = cdist(sa, sb)
    return d.min(axis=1), d.min(axis=0)


def brute_force_hd(a, b, spacing):
    d_ab, d_ba = brute_force_surface_distances(a, b, spacing)
    return max(d_ab.max(), d_ba.max())


def brute_force_assd(a, b, spacing):
    d_ab, d_ba = brute_force_surface_distances(a, b, spacing)
    return (d_ab.sum() + d_ba.sum()) / (d_ab.size + d_ba.size)


def random_mask(rng, shape=(16, 16, 16), p=0.1):
    while True:
        m = rng.uniform(size=shape) < p
        if m.any():
            return m


class TestDsc:
    def test_identical_masks(self, rng):
        m = random_mask(rng)
        assert dsc(m, m) == 1.0

    def test_disjoint_masks(self):
        a = np.zeros((4, 4, 4), bool)
        b = np.zeros((4, 4, 4), bool)
        a[0, 0, 0] = True
        b[3, 3, 3] = True
        assert dsc(a, b) == 0.0

    def test_hand_counted_overlap(self):
        a = np.zeros((4, 4, 4), bool)
        b = np.zeros((4, 4, 4), bool)
        a[0, 0, :2] = True          # |A| = 2
        b[0, 0, :4] = True          # |B| = 4, overlap 2
        assert dsc(a, b) == pytest.approx(2 * 2 / 6)

    def test_both_empty_is_one(self):
        z = np.zeros((3, 3, 3), bool)
        assert dsc(z, z) == 1.0

    def test_set_arithmetic_oracle(self, rng):
        for _ in range(20):
            a, b = random_mask(rng), random_mask(rng)
            sa = {tuple(p) for p in np.argwhere(a)}
            sb = {tuple(p) for p in np.argwhere(b)}
            expected = 2 * len(sa & sb) / (len(sa) + len(sb))
            assert dsc(a, b) == expected


class TestSurfaceVoxels:
    def test_solid_cube_surface(self):
        m = np.zeros((5, 5, 5), bool)
        m[1:4, 1:4, 1:4] = True
        s = surface_voxels(m)
        assert s.sum() == 27 - 1  # all but the center voxel

    def test_volume_border_counts_as_outside(self):
        m = np.ones((3, 3, 3), bool)
        s = surface_voxels(m)
        assert s.sum() == 27 - 1


class TestHausdorff:
    def test_identical_is_zero(self, rng):
        m = random_mask(rng)
        assert hausdorff_mm(m, m, (1, 1, 1)) == 0.0

    def test_single_voxels_three_apart(self):
        a = np.zeros((8, 3, 3), bool)
        b = np.zeros((8, 3, 3), bool)
        a[1, 1, 1] = True
        b[4, 1, 1] = True
        assert hausdorff_mm(a, b, (1, 1, 1)) == pytest.approx(3.0)
        assert hausdorff_mm(a, b, (2, 2, 2)) == pytest.approx(6.0)

    def test_empty_mask_raises(self):
        a = np.zeros((3, 3, 3), bool)
        b = np.ones((3, 3, 3), bool)
        with pytest.raises(ValueError, match="empty"):
            hausdorff_mm(a, b, (1, 1, 1))

    def test_symmetry(self, rng):
        a, b = random_mask(rng), random_mask(rng)
        sp = (2, 2, 2)
        assert hausdorff_mm(a, b, sp) == hausdorff_mm(b, a, sp)


class TestAssd:
    def test_identical_is_zero(self, rng):
        m = random_mask(rng)
        assert assd_mm(m, m, (1, 1, 1)) == 0.0

    def test_two_single_voxels(self):
        a = np.zeros((6, 3, 3), bool)
        b = np.zeros((6, 3, 3), bool)
        a[0, 0, 0] = True
        b[3, 0, 0] = True
        assert assd_mm(a, b, (1.5, 1, 1)) == pytest.approx(4.5)

    def test_symmetry(self, rng):
        a, b = random_mask(rng), random_mask(rng)
        sp = (1, 2, 3)
        assert assd_mm(a, b, sp) == assd_mm(b, a, sp)


@pytest.mark.parametrize("spacing", [(1, 1, 1), (2, 2, 2), (2.3, 2.3, 2.7)])
def test_distance_oracle_equivalence(rng, spacing):
    for _ in range(25):
        a, b = random_mask(rng), random_mask(rng)
        assert hausdorff_mm(a, b, spacing) == pytest.approx(
            brute_force_hd(a, b, spacing), abs=1e-9)
        assert assd_mm(a, b, spacing) == pytest.approx(
            brute_force_assd(a, b, spacing), abs=1e-9)


def test_spacing_scaling_law(rng):
    a, b = random_mask(rng), random_mask(rng)
    base_hd = hausdorff_mm(a, b, (1, 1, 1))
    base_assd = assd_mm(a, b, (1, 1, 1))
    base_vol = volume_ml(a, (1, 1, 1))
    s = 2.5
    assert hausdorff_mm(a, b, (s, s, s)) == pytest.approx(s * base_hd, abs=1e-9)
    assert assd_mm(a, b, (s, s, s)) == pytest.approx(s * base_assd, abs=1e-9)
    assert volume_ml(a, (s, s, s)) == pytest.approx(s ** 3 * base_vol, abs=1e-12)


class TestVolume:
    def test_empty_is_zero(self):
        assert volume_ml(np.zeros((4, 4, 4), bool), (2, 2, 2)) == 0.0

    def test_125_voxels_at_2mm(self):
        m = np.zeros((8, 8, 8), bool)
        m[:5, :5, :5] = True
        assert volume_ml(m, (2, 2, 2)) == pytest.approx(1.0)

    def test_full_64_cube(self):
        m = np.ones((64, 64, 64), bool)
        assert volume_ml(m, (2, 2, 2)) == pytest.approx(2097.152)


class TestSegmentSensSpec:
    def make_prostate(self, n_slices=3, extent=8):
        p = np.zeros((extent, extent, n_slices + 2), bool)
        p[1:-1, 1:-1, 1:1 + n_slices] = True
        return p

    def test_perfect_prediction(self):
        prostate = self.make_prostate()
        ref = np.zeros_like(prostate)
        ref[2, 2, 1] = True
        sens, spec, nseg = segment_sens_spec(ref, ref, prostate)
        assert sens == 1.0 and spec == 1.0
        assert nseg == 4 * 3

    def test_empty_prediction(self):
        prostate = self.make_prostate()
        ref = np.zeros_like(prostate)
        ref[2, 2, 1] = True
        sens, spec, _ = segment_sens_spec(np.zeros_like(ref), ref, prostate)
        assert sens == 0.0 and spec == 1.0

    def test_no_reference_sensitivity_is_absent(self):
        prostate = self.make_prostate()
        empty = np.zeros_like(prostate)
        sens, spec, _ = segment_sens_spec(empty, empty, prostate)
        assert sens is None
        assert spec == 1.0

    def test_empty_prostate_raises(self):
        z = np.zeros((4, 4, 4), bool)
        with pytest.raises(ValueError, match="prostate"):
            segment_sens_spec(z, z, z)

    def test_hand_built_quadrant_table(self):
        # 3-slice gland, reference fills the anterior-left quadrant of
        # every slice; prediction matches except on slice 2 where it
        # instead marks the posterior-right quadrant.
        prostate = self.make_prostate(n_slices=3)
        ref = np.zeros_like(prostate)
        pred = np.zeros_like(prostate)
        for z in (1, 2, 3):
            ref[1:3, 1:3, z] = True       # anterior-left of the centroid
            if z == 2:
                pred[5:7, 5:7, z] = True  # posterior-right: discordant
            else:
                pred[1:3, 1:3, z] = True
        # per slice: 4 segments; slices 1,3: TP=1 TN=3; slice 2: FN=1 FP=1 TN=2
        sens, spec, nseg = segment_sens_spec(pred, ref, prostate)
        assert nseg == 12
        assert sens == pytest.approx(2 / 3)
        assert spec == pytest.approx(8 / 9)

    def test_segment_count_census(self, rng):
        prostate = np.zeros((10, 10, 16), bool)
        slices = rng.choice(16, size=7, replace=False)
        for z in slices:
            prostate[2:8, 2:8, z] = True
        _, _, nseg = segment_sens_spec(
            np.zeros_like(prostate), np.zeros_like(prostate), prostate)
        assert nseg == 4 * 7


class TestCohortReport:
    def rec(self, case_id, **kw):
        return EvaluationRecord(case_id=case_id, **kw)

    def test_single_record(self):
        rep = cohort_report([self.rec("a", dsc=0.8, hd_mm=4.0)])
        assert rep["dsc"] == {"median": 0.8, "min": 0.8, "max": 0.8}

    def test_even_count_median_is_middle_mean(self):
        rep = cohort_report([self.rec("a", dsc=0.2), self.rec("b", dsc=0.8)])
        assert rep["dsc"]["median"] == pytest.approx(0.5)

    def test_median_matches_sort_oracle(self, rng):
        values = rng.uniform(size=11).tolist()
        recs = [self.rec(str(i), dsc=v) for i, v in enumerate(values)]
        rep = cohort_report(recs)
        assert rep["dsc"]["median"] == sorted(values)[5]
        assert rep["dsc"]["min"] == min(values)
        assert rep["dsc"]["max"] == max(values)

    def test_absent_metrics_are_skipped(self):
        rep = cohort_report([self.rec("a", dsc=0.9)])
        assert "sensitivity" not in rep

    def test_empty_cohort_raises(self):
        with pytest.raises(ValueError):
            cohort_report([])


def test_csv_writers(tmp_path, rng):
    recs = [EvaluationRecord(case_id="c0", dsc=1.0, hd_mm=0.0, assd_mm=0.0,
                             vol_pred_ml=1.0, vol_ref_ml=1.0, sensitivity=1.0,
                             specificity=1.0, segment_count=12, timing_sec=0.5)]
    case_csv = tmp_path / "cases.csv"
    summary_csv = tmp_path / "summary.csv"
    metrics.write_case_csv(recs, case_csv)
    metrics.write_summary_csv(cohort_report(recs), summary_csv)
    header = case_csv.read_text().splitlines()[0]
    assert header == ("case_id,dsc,hd_mm,assd_mm,vol_pred_ml,vol_ref_ml,"
                      "sensitivity,specificity,segments,time_sec")
    lines = summary_csv.read_text().splitlines()
    assert lines[0] == "metric,median,min,max"
    assert any(line.startswith("dsc,") for line in lines)
