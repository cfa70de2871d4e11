import math

import numpy as np
import pytest

from ckmsense.geometry import (SPEED_OF_LIGHT, CommChannelKnowledge, CommPath,
                               Environment, GeometryError,
                               InvalidObservationError, Point2, Scatterer,
                               SceneFormatError, candidate_paths,
                               composite_index, composite_pair_to_index,
                               enumerate_composite_paths, invert_los,
                               load_scene, los_angle_delay, save_scene,
                               single_bounce_paths, wrap_angle)

C = SPEED_OF_LIGHT


class TestLosAngleDelay:
    def test_diagonal_symmetry(self):
        bs = Point2(50.0, 0.0)
        target = Point2(50.0 + 30.0 * math.cos(math.pi / 4), 30.0 * math.sin(math.pi / 4))
        angle, delay = los_angle_delay(bs, target)
        assert angle == pytest.approx(math.pi / 4, abs=1e-12)
        assert delay == pytest.approx(60.0 / C, rel=1e-12)

    def test_negative_axis_quadrant(self):
        angle, delay = los_angle_delay(Point2(0.0, 0.0), Point2(-10.0, 0.0))
        assert angle == pytest.approx(math.pi)
        assert delay == pytest.approx(20.0 / C, rel=1e-12)

    def test_3_4_5_triangle(self):
        # distance/atan2 oracle: bs=(50,0), target=(80,40) is 3-4-5 scaled by 10
        angle, delay = los_angle_delay(Point2(50.0, 0.0), Point2(80.0, 40.0))
        assert angle == pytest.approx(math.atan2(40.0, 30.0), abs=1e-15)
        assert delay == pytest.approx(100.0 / C, rel=1e-14)

    def test_coincident_points_raise(self):
        with pytest.raises(GeometryError):
            los_angle_delay(Point2(1.0, 2.0), Point2(1.0, 2.0))


class TestInvertLos:
    def test_known_inverse(self):
        p = invert_los(math.pi / 4, 60.0 / C, Point2(50.0, 0.0))
        assert p.x == pytest.approx(50.0 + 30.0 / math.sqrt(2.0))
        assert p.y == pytest.approx(30.0 / math.sqrt(2.0))

    def test_unit_distance(self):
        p = invert_los(0.0, 2.0 / C, Point2(0.0, 0.0))
        assert p.x == pytest.approx(1.0, rel=1e-12)
        assert p.y == pytest.approx(0.0, abs=1e-12)

    def test_nonpositive_delay_raises(self):
        with pytest.raises(InvalidObservationError):
            invert_los(0.3, 0.0, Point2(0.0, 0.0))
        with pytest.raises(InvalidObservationError):
            invert_los(0.3, -1e-9, Point2(0.0, 0.0))

    def test_round_trip_identity(self):
        rng = np.random.default_rng(42)
        bs = Point2(50.0, 0.0)
        for _ in range(1000):
            x = Point2(rng.uniform(-200, 200), rng.uniform(-200, 200))
            if bs.distance_to(x) < 1e-6:
                continue
            angle, delay = los_angle_delay(bs, x)
            back = invert_los(angle, delay, bs)
            assert back.distance_to(x) <= 1e-9 * max(1.0, bs.distance_to(x))


class TestSingleBouncePaths:
    def test_two_345_triangles(self):
        env = Environment(bs=Point2(0.0, 0.0),
                          scatterers=(Scatterer(Point2(3.0, 4.0), 1.0),),
                          bounds=(10.0, 10.0), los_blocked=True)
        w = single_bounce_paths(env, Point2(6.0, 0.0), 1)
        assert w.paths[0].aod_rad == pytest.approx(math.atan2(4.0, 3.0))
        assert w.paths[0].delay_s == pytest.approx(10.0 / C, rel=1e-12)
        assert w.paths[0].gain == pytest.approx(1.0 / 25.0)

    def test_direct_path_when_unblocked(self):
        env = Environment(bs=Point2(0.0, 0.0),
                          scatterers=(Scatterer(Point2(3.0, 4.0), 1.0),),
                          bounds=(10.0, 10.0), los_blocked=False)
        w = single_bounce_paths(env, Point2(6.0, 0.0), 2)
        by_gain = sorted(w.paths, key=lambda p: -p.gain)
        # bounce (1/25) outranks direct (1/36)
        assert by_gain[0].gain == pytest.approx(1.0 / 25.0)
        assert by_gain[1].gain == pytest.approx(1.0 / 36.0)
        assert by_gain[1].aod_rad == pytest.approx(0.0, abs=1e-12)
        assert by_gain[1].delay_s == pytest.approx(6.0 / C, rel=1e-12)

    def test_top5_matches_brute_force(self, env40):
        rng = np.random.default_rng(1)
        for _ in range(20):
            loc = Point2(rng.uniform(1, 99), rng.uniform(1, 99))
            w = single_bounce_paths(env40, loc, 5)
            gains = sorted((p.gain for p in candidate_paths(env40, loc)), reverse=True)
            assert sorted((p.gain for p in w.paths), reverse=True) == pytest.approx(gains[:5])

    def test_delays_beat_direct_distance(self, env40):
        rng = np.random.default_rng(2)
        for _ in range(20):
            loc = Point2(rng.uniform(1, 99), rng.uniform(1, 99))
            direct = env40.bs.distance_to(loc) / C
            for p in single_bounce_paths(env40, loc, 5).paths:
                assert p.delay_s > direct

    def test_too_few_candidates(self, env8):
        with pytest.raises(GeometryError):
            single_bounce_paths(env8, Point2(10.0, 10.0), 9)

    def test_coincident_scatterer_raises(self, env8):
        p = env8.scatterers[0].position
        with pytest.raises(GeometryError):
            single_bounce_paths(env8, p, 3)


class TestCompositeIndex:
    def test_examples(self):
        assert composite_index(1, 5) == (1, 1)
        assert composite_index(7, 5) == (2, 2)
        assert composite_index(25, 5) == (5, 5)

    @pytest.mark.parametrize("l_prime", range(1, 9))
    def test_bijection(self, l_prime):
        seen = set()
        for l in range(1, l_prime ** 2 + 1):
            l_t, l_r = composite_index(l, l_prime)
            assert 1 <= l_t <= l_prime and 1 <= l_r <= l_prime
            assert composite_pair_to_index(l_t, l_r, l_prime) == l
            seen.add((l_t, l_r))
        assert len(seen) == l_prime ** 2

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            composite_index(0, 5)
        with pytest.raises(ValueError):
            composite_index(26, 5)


class TestEnumerateCompositePaths:
    def test_single_path_reciprocity(self):
        w = CommChannelKnowledge(paths=(CommPath(0.4, 1e-7, 0.1),))
        comps = enumerate_composite_paths(w)
        assert len(comps) == 1
        assert comps[0].aod_rad == comps[0].aoa_rad == 0.4
        assert comps[0].delay_s == pytest.approx(2e-7)

    def test_swapped_pair_symmetry(self):
        w = CommChannelKnowledge(paths=(CommPath(0.3, 1.0e-7, 0.2),
                                        CommPath(1.1, 1.5e-7, 0.1)))
        comps = enumerate_composite_paths(w)
        assert len(comps) == 4
        c12, c21 = comps[1], comps[2]
        assert c12.delay_s == pytest.approx(c21.delay_s)
        assert c12.aod_rad == c21.aoa_rad
        assert c12.aoa_rad == c21.aod_rad

    def test_reciprocal_mode(self, env40):
        w = single_bounce_paths(env40, Point2(20.0, 30.0), 5)
        diag = enumerate_composite_paths(w, reciprocal_only=True)
        assert len(diag) == 5
        full = enumerate_composite_paths(w)
        assert len(full) == 25
        for k, c in enumerate(diag):
            f = full[k * 5 + k]
            assert (c.aod_rad, c.aoa_rad, c.delay_s) == (f.aod_rad, f.aoa_rad, f.delay_s)
            assert c.aod_rad == c.aoa_rad


class TestWrapAngle:
    def test_range(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(-30, 30, size=1000)
        w = wrap_angle(a)
        assert np.all(w > -np.pi) and np.all(w <= np.pi)
        np.testing.assert_allclose(np.cos(w), np.cos(a), atol=1e-12)
        np.testing.assert_allclose(np.sin(w), np.sin(a), atol=1e-12)

    def test_boundary(self):
        assert wrap_angle(np.pi) == pytest.approx(np.pi)
        assert wrap_angle(-np.pi) == pytest.approx(np.pi)


class TestSceneFile:
    def test_round_trip(self, env40, tmp_path):
        path = tmp_path / "scene.txt"
        save_scene(env40, path)
        env2 = load_scene(path)
        assert env2.bs == env40.bs
        assert env2.bounds == env40.bounds
        assert env2.los_blocked == env40.los_blocked
        assert env2.scatterers == env40.scatterers

    def test_version_mismatch(self, env8, tmp_path):
        path = tmp_path / "scene.txt"
        save_scene(env8, path)
        text = path.read_text().replace("v1", "v9")
        path.write_text(text)
        with pytest.raises(SceneFormatError):
            load_scene(path)

    def test_truncated(self, env8, tmp_path):
        path = tmp_path / "scene.txt"
        save_scene(env8, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]))
        with pytest.raises(SceneFormatError):
            load_scene(path)


class TestValidation:
    def test_reflectivity_range(self):
        with pytest.raises(ValueError):
            Scatterer(Point2(1.0, 1.0), 0.0)
        with pytest.raises(ValueError):
            Scatterer(Point2(1.0, 1.0), 1.5)

    def test_positions_inside_bounds(self):
        with pytest.raises(ValueError):
            Environment(bs=Point2(200.0, 0.0), scatterers=(), bounds=(100.0, 100.0),
                        los_blocked=False)

    def test_channel_order_enforced(self):
        with pytest.raises(ValueError):
            CommChannelKnowledge(paths=(CommPath(0.1, 1e-7, 0.1),
                                        CommPath(0.2, 1e-7, 0.5)))
