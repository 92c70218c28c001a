import numpy as np
import pytest

from kwskit.metrics import (
    DetCurve,
    DetPoint,
    TrialSet,
    auc,
    det_curve,
    emit_plot_data,
    lower_envelope,
    relative_reduction,
)


def curve_of(pairs):
    return DetCurve([DetPoint(far, frr) for far, frr in pairs])


class TestDetCurve:
    def test_perfectly_separable(self):
        trials = TrialSet(
            positives=[("p1", 0.9), ("p2", 0.8)],
            negatives=[("n1", 0.1), ("n2", 0.2)],
        )
        curve = det_curve(trials)
        assert any(p.far == 0.0 and p.frr == 0.0 for p in curve.points)

    def test_identical_multisets(self):
        trials = TrialSet(
            positives=[("p1", 0.5), ("p2", 0.5)],
            negatives=[("n1", 0.5), ("n2", 0.5)],
        )
        curve = det_curve(trials)
        # hand sweep on {0.5, 0.5}: thresholds -inf / 0.5 / +inf give
        # (FAR 1, FRR 0), (FAR 1, FRR 0), (FAR 0, FRR 1)
        for p in curve.points:
            assert p.frr == pytest.approx(1.0 - p.far)

    def test_all_positives_undetected(self):
        trials = TrialSet(
            positives=[("p1", None), ("p2", None)],
            negatives=[("n1", 0.3), ("n2", 0.1)],
        )
        curve = det_curve(trials)
        assert all(p.frr == 1.0 for p in curve.points)

    def test_envelope_monotone_random_scores(self):
        rng = np.random.default_rng(0)
        for trial in range(50):
            pos = [(f"p{i}", float(rng.normal(1.0, 1.0))) for i in range(30)]
            neg = [(f"n{i}", float(rng.normal(0.0, 1.0))) for i in range(30)]
            # sprinkle in undetected trials
            if trial % 3 == 0:
                pos[0] = ("p0", None)
                neg[0] = ("n0", None)
            curve = det_curve(TrialSet(pos, neg))
            fars = [p.far for p in curve.points]
            frrs = [p.frr for p in curve.points]
            assert fars == sorted(fars)
            assert all(a >= b for a, b in zip(frrs, frrs[1:]))

    def test_rejects_empty_class(self):
        with pytest.raises(ValueError):
            det_curve(TrialSet(positives=[("p", 1.0)], negatives=[]))

    def test_rejects_overlapping_ids(self):
        with pytest.raises(ValueError, match="both classes"):
            TrialSet(positives=[("x", 1.0)], negatives=[("x", 0.0)])


class TestLowerEnvelope:
    def test_keeps_minimum_per_far(self):
        points = [DetPoint(0.1, 0.5), DetPoint(0.1, 0.3), DetPoint(0.2, 0.2)]
        envelope = lower_envelope(points)
        assert [(p.far, p.frr) for p in envelope] == [(0.1, 0.3), (0.2, 0.2)]

    def test_drops_dominated_points(self):
        points = [DetPoint(0.1, 0.2), DetPoint(0.3, 0.5), DetPoint(0.4, 0.1)]
        envelope = lower_envelope(points)
        assert [(p.far, p.frr) for p in envelope] == [(0.1, 0.2), (0.4, 0.1)]

    def test_random_point_clouds(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            points = [
                DetPoint(float(rng.uniform(0, 1)), float(rng.uniform(0, 1)))
                for _ in range(40)
            ]
            envelope = lower_envelope(points)
            fars = [p.far for p in envelope]
            frrs = [p.frr for p in envelope]
            assert fars == sorted(fars)
            assert all(a > b for a, b in zip(frrs, frrs[1:])) or len(frrs) == 1


class TestAuc:
    def test_perfect_detector(self):
        assert auc(curve_of([(0.0, 0.0), (1.0, 0.0)]), 0.001, 0.05) == 0.0

    def test_constant_frr(self):
        value = auc(curve_of([(0.0, 0.17), (1.0, 0.17)]), 0.001, 0.05)
        assert value == pytest.approx(0.170, abs=1e-12)

    def test_two_point_trapezoid(self):
        # mean of a straight line from 0.2 down to 0.1 over the full range
        value = auc(curve_of([(0.001, 0.2), (0.05, 0.1)]), 0.001, 0.05)
        assert value == pytest.approx(0.15, abs=1e-12)

    def test_clamping_outside_observed_range(self):
        value = auc(curve_of([(0.2, 0.4), (0.3, 0.2)]), 0.01, 0.5)
        # flat 0.4 over [0.01, 0.2], linear to 0.2 over [0.2, 0.3], flat 0.2 after
        expected = (0.19 * 0.4 + 0.1 * 0.3 + 0.2 * 0.2) / 0.49
        assert value == pytest.approx(expected, abs=1e-12)

    def test_monotone_under_domination(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            fars = np.sort(rng.uniform(0, 1, 5))
            frrs = np.sort(rng.uniform(0, 1, 5))[::-1]
            better = curve_of(list(zip(fars, frrs)))
            worse = curve_of(list(zip(fars, np.clip(frrs + rng.uniform(0, 0.3, 5), 0, 1))))
            lo = float(rng.uniform(0.01, 0.4))
            hi = float(rng.uniform(lo + 0.05, 1.0))
            assert auc(better, lo, hi) <= auc(worse, lo, hi) + 1e-12

    def test_collinear_point_insertion_invariance(self):
        base = curve_of([(0.1, 0.8), (0.5, 0.4)])
        with_mid = curve_of([(0.1, 0.8), (0.3, 0.6), (0.5, 0.4)])
        assert auc(base, 0.05, 0.7) == pytest.approx(auc(with_mid, 0.05, 0.7), abs=1e-12)

    def test_invalid_range(self):
        with pytest.raises(ValueError):
            auc(curve_of([(0.0, 0.5)]), 0.5, 0.1)


class TestRelativeReduction:
    def test_paper_movie_row(self):
        assert relative_reduction(0.170, 0.102) == pytest.approx(40.0, abs=0.05)

    def test_paper_music_row(self):
        assert relative_reduction(0.170, 0.089) == pytest.approx(47.6, abs=0.05)

    def test_no_change(self):
        assert relative_reduction(0.3, 0.3) == 0.0

    def test_to_zero_is_100(self):
        assert relative_reduction(0.25, 0.0) == 100.0

    def test_antisymmetric_sign(self):
        assert relative_reduction(0.2, 0.1) == pytest.approx(
            -relative_reduction(0.2, 0.3), abs=1e-12
        )

    def test_rejects_nonpositive_baseline(self):
        with pytest.raises(ValueError):
            relative_reduction(0.0, 0.1)


class TestEmitPlotData:
    def test_csv_rows(self, tmp_path):
        csv_path, svg_path = emit_plot_data(
            [("demo", curve_of([(0.1, 0.5), (0.4, 0.2)]))], tmp_path / "det"
        )
        lines = csv_path.read_text().strip().split("\n")
        assert lines[0] == "curve_name,far,frr"
        assert len(lines) == 3

    def test_byte_deterministic(self, tmp_path):
        curves = [
            ("a", curve_of([(0.01, 0.9), (0.2, 0.3)])),
            ("b", curve_of([(0.05, 0.7), (0.5, 0.1)])),
        ]
        emit_plot_data(curves, tmp_path / "one")
        emit_plot_data(curves, tmp_path / "two")
        assert (tmp_path / "one.csv").read_bytes() == (tmp_path / "two.csv").read_bytes()
        assert (tmp_path / "one.svg").read_bytes() == (tmp_path / "two.svg").read_bytes()

    def test_svg_polyline_per_curve(self, tmp_path):
        curves = [
            ("a", curve_of([(0.01, 0.9), (0.2, 0.3)])),
            ("b", curve_of([(0.05, 0.7), (0.5, 0.1)])),
        ]
        _, svg_path = emit_plot_data(curves, tmp_path / "det")
        svg = svg_path.read_text()
        assert svg.count("<polyline") == 2
        assert svg.startswith("<svg")

    def test_rejects_empty(self, tmp_path):
        with pytest.raises(ValueError):
            emit_plot_data([], tmp_path / "det")
