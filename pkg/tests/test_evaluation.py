import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from symlab.analytic import AnalyticLSB, ideal_matrices, rotation
from symlab.evaluation import (
    analyze_matrices,
    centroid_displacement,
    composed_log_det,
    cross_validate,
    determinant_drift,
    inverse_features,
    inverse_model_benchmark,
    kfold_indices,
    latent_traversal,
    lookup_result,
    read_pgm,
    rotation_angle,
    toroidal_centroid,
    write_benchmark,
    write_drift,
    write_matrix_report,
    write_pgm,
)
from symlab.groups import RepresentationTable
from symlab.models import TrainingConfig, train_autoencoder, train_forward_vae
from symlab.world import Move, WorldSpec, random_walk, render


def learned(n, scale=1.0, angle_error=0.0, clockwise=False):
    out = {}
    for a, m in ideal_matrices(n).items():
        e = m.entries.copy()
        sl = slice(0, 2) if a.axis == 0 else slice(2, 4)
        theta = a.delta * 2 * np.pi / n * (-1 if clockwise else 1) + angle_error
        e[sl, sl] = scale * rotation(theta)
        out[a] = e
    return out


class TestMatrices:
    @pytest.mark.parametrize("n", [3, 10, 16])
    def test_ideal_is_exact(self, n):
        report = analyze_matrices(ideal_matrices(n), n)
        for r in report.rows:
            assert r.mse == 0.0 and r.det == pytest.approx(1.0)
            assert abs(r.angle) == pytest.approx(2 * np.pi / n)
            assert r.angle == pytest.approx(r.ideal_angle) == pytest.approx(r.first_column_angle)

    def test_clockwise_axis_is_matched(self):
        report = analyze_matrices(learned(10, clockwise=True), 10)
        assert report.orientation == {"x": -1, "y": -1}
        assert max(r.mse for r in report.rows) < 1e-30

    def test_angle_error_and_scale(self):
        report = analyze_matrices(learned(10, scale=0.9, angle_error=0.05), 10)
        right = report.row(Move.RIGHT)
        assert right.angle - right.ideal_angle == pytest.approx(0.05)
        assert right.det == pytest.approx(0.81)

    def test_order_invariant(self):
        mats = learned(10, scale=1.1, angle_error=0.02)
        a = analyze_matrices(mats, 10)
        b = analyze_matrices(dict(reversed(list(mats.items()))), 10)
        assert [r.action for r in a.rows] == [r.action for r in b.rows]
        assert [r.mse for r in a.rows] == [r.mse for r in b.rows]

    @given(st.floats(-3.1, 3.1), st.floats(0.1, 3))
    def test_rotation_angle_of_scaled_rotation(self, theta, s):
        assert rotation_angle(s * rotation(theta)) == pytest.approx(theta, abs=1e-9)

    def test_report_csv(self, tmp_path):
        write_matrix_report(analyze_matrices(ideal_matrices(10), 10), tmp_path / "m.csv")
        rows = list(csv.DictReader(open(tmp_path / "m.csv")))
        assert sorted(r["action"] for r in rows) == sorted(a.name for a in Move)


class TestDrift:
    def test_ideal_is_flat(self):
        curve = determinant_drift(ideal_matrices(10)[Move.UP], 1000)
        np.testing.assert_allclose(curve.det, 1.0)

    def test_shrinking_example(self):
        m = np.eye(4)
        m[:2, :2] = np.sqrt(0.999) * rotation(0.3)
        curve = determinant_drift(m, 1000)
        assert curve.det[-1] == pytest.approx(0.999**1000) == pytest.approx(0.3677, abs=1e-4)

    @pytest.mark.parametrize("scale", [0.95, 1.0, 1.02])
    def test_matches_composition(self, scale, rng):
        m = np.eye(4)
        m[2:, 2:] = scale * rotation(0.7) + rng.normal(scale=0.05, size=(2, 2))
        curve = determinant_drift(m, 300)
        np.testing.assert_allclose(curve.log_abs_det, composed_log_det(m, 300), atol=1e-8)

    def test_overflow_is_infinite(self):
        m = np.eye(4)
        m[:2, :2] = 10 * np.eye(2)
        assert np.isinf(determinant_drift(m, 1000).det[-1])

    def test_csv(self, tmp_path):
        curves = {"ideal": determinant_drift(ideal_matrices(4)[Move.LEFT], 5)}
        write_drift(curves, tmp_path / "d.csv")
        assert len(open(tmp_path / "d.csv").read().splitlines()) == 6

    def test_rejects_zero_k(self):
        with pytest.raises(ValueError):
            determinant_drift(np.eye(4), 0)


class TestTraversal:
    def test_centroid_tracks_disc(self, spec):
        for s in [(0, 0), (3, 7), (9, 9)]:
            # centre snapped to a quarter pixel, reported in pixel-index units
            cx, cy = toroidal_centroid(render(spec, s))
            assert cx == pytest.approx(round((s[0] + 0.5) * 12.8) / 4 - 0.5, abs=0.05)
            assert cy == pytest.approx(round((s[1] + 0.5) * 12.8) / 4 - 0.5, abs=0.05)

    def test_displacement_of_a_full_lap(self, spec):
        frames = np.stack([render(spec, (x, 4)) for x in range(10)] + [render(spec, (0, 4))])
        dx, dy = centroid_displacement(frames)
        assert dx == pytest.approx(32, abs=1) and dy < 0.5

    def test_frames_and_validation(self, micro_spec):
        walk = random_walk(micro_spec, 200, 0)
        fvae = train_forward_vae(walk, TrainingConfig(epochs=1, batch_size=50), hidden=(8,))
        frames = latent_traversal(fvae, 0, steps=5)
        assert frames.shape == (5, 8, 8)
        np.testing.assert_array_equal(frames, latent_traversal(fvae, 0, steps=5))
        with pytest.raises(ValueError):
            latent_traversal(fvae, 2)
        ae = train_autoencoder(walk, TrainingConfig(epochs=0), hidden=(8,))
        assert latent_traversal(ae, 1, steps=3).shape == (3, 8, 8)
        with pytest.raises(ValueError):
            latent_traversal(ae, 2)

    def test_pgm_round_trip(self, tmp_path, rng):
        frames = rng.random((5, 4, 6))
        write_pgm(frames, tmp_path / "t.pgm", columns=3)
        img = read_pgm(tmp_path / "t.pgm")
        assert img.shape == (8, 18)
        np.testing.assert_array_equal(img[4:8, 6:12], np.round(frames[4] * 255).astype(np.uint8))
        assert not img[4:8, 12:].any()


class TestBenchmark:
    def test_folds_partition(self):
        parts = kfold_indices(103, 10, 4)
        joined = np.sort(np.concatenate(parts))
        np.testing.assert_array_equal(joined, np.arange(103))
        assert {len(p) for p in parts} == {10, 11}

    def test_features(self, walk):
        table = AnalyticLSB(10).table()
        X, y = inverse_features(table, walk)
        assert X.shape == (len(walk), 8)
        np.testing.assert_array_equal(X[:, 4:], table.lookup(walk.next_states))
        np.testing.assert_array_equal(y, walk.actions)

    def test_analytic_is_solved_and_shuffle_is_chance(self, walk):
        reps = {"analytic": AnalyticLSB(10).table()}
        real = inverse_model_benchmark(reps, walk, sizes=(2000,), depths=(2, 10), folds=5, trees=10)
        assert lookup_result(real, "analytic", 2000, 2).mean_accuracy < 0.6
        assert lookup_result(real, "analytic", 2000, 10).mean_accuracy > 0.99
        shuffled = inverse_model_benchmark(reps, walk, sizes=(1000,), depths=(6,), folds=5, trees=10, shuffle_labels=True)
        assert abs(shuffled[0].mean_accuracy - 0.25) < 0.06

    def test_constant_table_is_chance(self, walk):
        reps = {"constant": RepresentationTable(10, np.zeros((100, 2)))}
        res = inverse_model_benchmark(reps, walk, sizes=(500,), depths=(3,), folds=5, trees=5)
        assert res[0].mean_accuracy < 0.35

    def test_single_class_folds_skipped(self):
        X = np.arange(100.0)[:, None]
        scores = cross_validate(X, np.zeros(100, dtype=int), [1], folds=10, trees=2)
        assert scores == {1: []}

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            cross_validate(np.zeros((50, 2)), np.zeros(50, dtype=int), [1], folds=10)
        with pytest.raises(ValueError):
            inverse_model_benchmark({"a": AnalyticLSB(10).table()}, random_walk(WorldSpec(), 100, 0), sizes=(1000,))

    def test_csv(self, tmp_path, walk):
        res = inverse_model_benchmark({"a": AnalyticLSB(10).table()}, walk, sizes=(200,), depths=(1,), folds=2, trees=2)
        write_benchmark(res, tmp_path / "b.csv")
        rows = list(csv.DictReader(open(tmp_path / "b.csv")))
        assert rows[0]["representation"] == "a" and rows[0]["size"] == "200"
