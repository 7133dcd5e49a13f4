import pytest
from gmpy2 import mpq

from brigade_core import BrigadeConfig, ResetState, VelocityProfile, reset_map
from errors import ConfigError
from fixed_point import constant_velocity_fixed_point, scan_fixed_points, verify_fixed_point
from helpers import random_rational


def random_profile(rng, pieces=3):
    cuts = sorted({mpq(int(k), 16) for k in rng.integers(1, 16, size=pieces - 1)})
    breakpoints = [mpq(0)] + cuts + [mpq(1)]
    values = [random_rational(rng, mpq(1, 2), 2) for _ in range(len(breakpoints) - 1)]
    return VelocityProfile.from_pieces(breakpoints, values)


class TestClosedForm:
    def test_three_workers(self):
        assert constant_velocity_fixed_point([1, 2, 3]) == ResetState((mpq(1, 6), mpq(1, 2)))
        assert constant_velocity_fixed_point([2, mpq(4, 3), 1]) == ResetState((mpq(6, 13), mpq(10, 13)))

    def test_is_a_fixed_point_for_any_team(self, rng):
        for n in range(2, 7):
            for _ in range(10):
                velocities = [random_rational(rng, mpq(1, 10), 5) + mpq(1, 100) for _ in range(n)]
                cfg = BrigadeConfig.from_velocities(velocities)
                assert verify_fixed_point(cfg, constant_velocity_fixed_point(velocities))

    def test_bad_velocities(self):
        with pytest.raises(ConfigError):
            constant_velocity_fixed_point([1])
        with pytest.raises(ConfigError):
            constant_velocity_fixed_point([1, 0])

    def test_verify_rejects_other_states(self, both_cycles_config):
        assert not verify_fixed_point(both_cycles_config, ResetState((0, mpq(2, 5))))


class TestScan:
    def test_two_workers_polishes_off_the_lattice(self):
        report = scan_fixed_points(BrigadeConfig.from_velocities([1, 2]), mpq(1, 100))
        assert report.verified == [ResetState((mpq(1, 3),))]
        assert report.unresolved == []
        assert report.evaluated == 101
        assert report.to_dict()["candidates"][0]["state"] == ["1/3"]

    def test_piecewise_fixed_point_on_the_lattice(self):
        cfg = BrigadeConfig.from_profiles([
            VelocityProfile.constant(1),
            VelocityProfile.from_pieces([0, mpq(1, 2), 1], [2, 1]),
        ])
        report = scan_fixed_points(cfg, mpq(1, 10))
        assert report.verified == [ResetState((mpq(1, 2),))]
        assert report.displacement == [0]

    def test_piecewise_fixed_point_at_fine_resolution(self):
        cfg = BrigadeConfig.from_profiles([
            VelocityProfile.constant(1),
            VelocityProfile.from_pieces([0, mpq(1, 2), 1], [2, 1]),
        ])
        report = scan_fixed_points(cfg, mpq(1, 1000))
        assert report.verified == [ResetState((mpq(1, 2),))]
        assert report.unresolved == []
        assert report.evaluated == 1001

    def test_three_workers(self):
        report = scan_fixed_points(BrigadeConfig.from_velocities([1, 2, 3]), mpq(1, 50))
        assert report.verified == [ResetState((mpq(1, 6), mpq(1, 2)))]

    def test_exhausted_refinement_is_reported_unresolved(self):
        report = scan_fixed_points(BrigadeConfig.from_velocities([1, 2]), mpq(1, 100), rounds=0)
        assert report.verified == []
        assert report.unresolved == [ResetState((mpq(33, 100),))]
        assert report.to_dict()["candidates"][0]["exact_verified"] is False

    def test_resolution_must_be_positive(self):
        with pytest.raises(ConfigError):
            scan_fixed_points(BrigadeConfig.from_velocities([1, 2]), 0)

    def test_random_piecewise_two_workers(self, rng):
        for _ in range(3):
            cfg = BrigadeConfig.from_profiles([random_profile(rng), random_profile(rng)])
            report = scan_fixed_points(cfg, mpq(1, 20))
            assert len(report.verified) <= 1
            for s in report.verified:
                assert reset_map(cfg, s) == s

    def test_random_piecewise_three_workers(self, rng):
        for _ in range(3):
            cfg = BrigadeConfig.from_profiles([random_profile(rng) for _ in range(3)])
            report = scan_fixed_points(cfg, mpq(1, 40))
            assert len(report.verified) <= 1
            for s in report.verified:
                assert reset_map(cfg, s) == s

    @pytest.mark.slow
    def test_random_piecewise_acceptance(self, rng):
        for k in range(50):
            cfg = BrigadeConfig.from_profiles([random_profile(rng) for _ in range(2 + k % 2)])
            report = scan_fixed_points(cfg, mpq(1, 500))
            assert len(report.verified) == 1
            assert verify_fixed_point(cfg, report.verified[0])

    @pytest.mark.slow
    def test_random_three_worker_teams(self, rng):
        for _ in range(10):
            velocities = [random_rational(rng, mpq(1, 2), 3) for _ in range(3)]
            report = scan_fixed_points(BrigadeConfig.from_velocities(velocities), mpq(1, 50))
            assert report.verified == [constant_velocity_fixed_point(velocities)]
