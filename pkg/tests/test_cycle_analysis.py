import pytest
from gmpy2 import mpfr, mpq, mpz

import cycle_analysis
from cycle_analysis import (
    AffineMap,
    CellItinerary,
    CycleCertificate,
    IntegerStepper,
    SharedDenominatorState,
    _cycle_seed,
    certify_cycle,
    certify_period_from,
    classify_behavior,
    compose_affine,
    extract_itinerary,
    find_certified_cycle,
    float_step,
    grid_points,
    period_budget,
    replay_itinerary,
    scout_orbit,
    scout_returns,
    search_period,
    verify_certificate,
)
from errors import CertificationError, ConfigError
from helpers import random_rational, random_state
from numerics import working_precision
from three_worker import (
    BehaviorKind,
    Cell,
    Region,
    ThreeWorkerParams,
    classify_cell,
    other_cycle_states,
    p_star,
    region2_two_cycle,
    region_of,
    reset_map3,
    standard_cycle_states,
)

C1, C2, C3, C4 = Cell.C1, Cell.C2, Cell.C3, Cell.C4


# ============================================================================
# ITINERARIES
# ============================================================================

class TestItinerary:
    def test_run_length_encoding(self):
        it = CellItinerary((C4, C4, C4, C2))
        assert it.to_rle() == "C4x3,C2"
        assert CellItinerary.from_rle("C4x3, c2") == it
        assert CellItinerary.from_rle("C3,C2,C4").cells == (C3, C2, C4)

    @pytest.mark.parametrize("text", ["", "C9", "C4x0", "C4xmany"])
    def test_bad_itineraries(self, text):
        with pytest.raises(ConfigError):
            CellItinerary.from_rle(text)


class TestComposition:
    def test_other_cycle_itinerary(self, both_cycles):
        composed = compose_affine(both_cycles, CellItinerary((C3, C2, C4)))
        assert composed.matrix == ((0, 0), (-2, mpq(8, 3)))
        assert composed.offset == (0, mpq(-2, 3))
        assert composed.apply((0, mpq(2, 5))) == (0, mpq(2, 5))

    def test_two_cycle_itinerary(self, region2):
        composed = compose_affine(region2, CellItinerary((C2, C4)))
        assert composed.matrix == ((0, 0), (0, mpq(-1, 2)))
        assert composed.offset == (0, mpq(1, 2))

    def test_single_piece(self, region2):
        composed = compose_affine(region2, CellItinerary((C4,)))
        assert composed.matrix == ((0, mpq(-1, 2)), (1, -2))
        assert composed.offset == (mpq(1, 2), 2)
        assert not composed.collapses

    def test_c1_collapses(self, both_cycles):
        assert compose_affine(both_cycles, CellItinerary((C1, C4))).collapses

    def test_tree_matches_left_fold(self, both_cycles):
        it = CellItinerary((C3, C2, C4, C4, C2, C3, C4))
        s = (mpq(1, 7), mpq(3, 7))
        expected = s
        for cell in it.cells:
            expected = compose_affine(both_cycles, CellItinerary((cell,))).apply(expected)
        assert compose_affine(both_cycles, it).apply(s) == expected


# ============================================================================
# EXACT REPLAY
# ============================================================================

class TestReplay:
    def test_stepper_matches_the_map(self, rng):
        for _ in range(300):
            p = ThreeWorkerParams(random_rational(rng, mpq(1, 10), 3), random_rational(rng, mpq(1, 10), 3))
            s = random_state(rng)
            cell, image = IntegerStepper(p).step(SharedDenominatorState.from_state(s))
            assert cell is classify_cell(p, s)
            assert image.to_state() == reset_map3(p, s)

    def test_shared_denominator(self):
        s = SharedDenominatorState.from_state((mpq(1, 4), mpq(1, 2)))
        assert (s.nx, s.ny, s.den) == (1, 2, 4)
        scaled = SharedDenominatorState(mpz(3), mpz(6), mpz(12))
        assert scaled.same_point(s)
        assert scaled.simplify() == s
        assert scaled.to_state() == (mpq(1, 4), mpq(1, 2))

    def test_returns_are_the_closing_divisors(self, both_cycles):
        replay = replay_itinerary(both_cycles, (0, mpq(2, 5)), (C3, C2, C4) * 4, keep_states=True)
        assert replay.returns == [3, 6, 12]
        assert len(replay.states) == 12
        assert replay.states[:3] == other_cycle_states(both_cycles)

    def test_listed_states_are_checked(self, both_cycles):
        listed = [(0, mpq(2, 5)), (mpq(4, 5), mpq(4, 5)), (mpq(1, 2), 1)]
        with pytest.raises(CertificationError, match="does not map") as info:
            replay_itinerary(both_cycles, listed[0], (C3, C2, C4), listed=listed, first_index=1)
        assert info.value.index == 2

    def test_seed_outside_the_triangle(self, both_cycles):
        with pytest.raises(CertificationError, match="leaves the triangle") as info:
            replay_itinerary(both_cycles, (mpq(1, 2), mpq(1, 4)), (C4, C2), first_index=1)
        assert info.value.index == 1


# ============================================================================
# CERTIFICATION
# ============================================================================

class TestCertify:
    def test_standard_three_cycle(self, both_cycles):
        cert = certify_cycle(both_cycles, CellItinerary((C1, C2, C4)))
        assert cert.period == 3
        assert cert.states == [(0, 0), (1, 1), (0, 1)]
        assert set(cert.states) == set(standard_cycle_states())
        assert verify_certificate(cert)

    def test_other_three_cycle(self, both_cycles):
        cert = certify_cycle(both_cycles, CellItinerary((C3, C2, C4)))
        assert cert.states == [(0, mpq(2, 5)), (mpq(4, 5), mpq(4, 5)), (mpq(2, 5), 1)]
        assert cert.states == other_cycle_states(both_cycles)
        assert verify_certificate(cert)

    def test_two_cycle(self, region2):
        cert = certify_cycle(region2, CellItinerary((C2, C4)))
        assert cert.period == 2
        assert set(cert.states) == set(region2_two_cycle(region2))

    def test_wrong_itinerary_fails_at_first_state(self, both_cycles):
        with pytest.raises(CertificationError) as info:
            certify_cycle(both_cycles, CellItinerary((C3,)))
        assert info.value.index == 0

    def test_repeated_itinerary_reduces_to_minimal_period(self, both_cycles):
        cert = certify_cycle(both_cycles, CellItinerary((C3, C2, C4) * 2))
        assert cert.period == 3
        assert cert.itinerary.cells == (C3, C2, C4)
        assert len(cert.states) == 3

    def test_long_cycles_keep_only_the_seed(self, both_cycles, monkeypatch):
        monkeypatch.setattr(cycle_analysis, "LISTED_STATES_LIMIT", 2)
        cert = certify_cycle(both_cycles, CellItinerary((C3, C2, C4)))
        assert cert.period == 3
        assert cert.states == [(0, mpq(2, 5))]
        assert verify_certificate(cert)

    def test_seed_follows_the_c1_cell(self, both_cycles, monkeypatch):
        monkeypatch.setattr(cycle_analysis, "LISTED_STATES_LIMIT", 2)
        cert = certify_cycle(both_cycles, CellItinerary((C1, C2, C4)))
        assert cert.states == [(1, 1)]
        assert cert.itinerary.cells == (C2, C4, C1)
        assert verify_certificate(cert)

    def test_singular_system_uses_the_hint(self):
        identity = AffineMap(((1, 0), (0, 1)), (0, 0))
        assert _cycle_seed(identity, (mpq(1, 3), mpq(1, 2))) == (mpq(1, 3), mpq(1, 2))
        rank_one = AffineMap(((1, 0), (0, 0)), (0, mpq(1, 2)))
        assert _cycle_seed(rank_one, (mpq(1, 4), mpq(9, 10))) == (mpq(1, 4), mpq(1, 2))

    def test_singular_system_without_solution(self):
        with pytest.raises(CertificationError, match="no such cycle"):
            _cycle_seed(AffineMap(((1, 0), (0, 1)), (1, 0)), None)


class TestCertificateDocument:
    def test_round_trip(self, both_cycles):
        cert = certify_cycle(both_cycles, CellItinerary((C3, C2, C4)))
        document = cert.to_dict()
        assert document["itinerary"] == "C3,C2,C4"
        assert document["states"][0] == ["0", "2/5"]
        restored = CycleCertificate.from_dict(document)
        assert restored.states == cert.states
        assert verify_certificate(restored)

    def test_seed_only_round_trip(self, both_cycles, monkeypatch):
        monkeypatch.setattr(cycle_analysis, "LISTED_STATES_LIMIT", 2)
        document = certify_cycle(both_cycles, CellItinerary((C3, C2, C4))).to_dict()
        assert document["states"] == [["0", "2/5"]]
        restored = CycleCertificate.from_dict(document)
        assert restored.period == 3
        assert verify_certificate(restored)

    def test_tampered_state_is_rejected(self, both_cycles):
        document = certify_cycle(both_cycles, CellItinerary((C3, C2, C4))).to_dict()
        document["states"][1] = ["4/5", "9/10"]
        with pytest.raises(CertificationError) as info:
            verify_certificate(CycleCertificate.from_dict(document))
        assert info.value.index == 0

    def test_tampered_seed_is_rejected(self, both_cycles, monkeypatch):
        monkeypatch.setattr(cycle_analysis, "LISTED_STATES_LIMIT", 2)
        document = certify_cycle(both_cycles, CellItinerary((C3, C2, C4))).to_dict()
        document["states"][0] = ["4/5", "9/10"]
        with pytest.raises(CertificationError, match="lies in C4") as info:
            verify_certificate(CycleCertificate.from_dict(document))
        assert info.value.index == 0

    def test_non_minimal_certificate_is_rejected(self, both_cycles):
        document = certify_cycle(both_cycles, CellItinerary((C3, C2, C4))).to_dict()
        document.update(period=6, itinerary="C3,C2,C4,C3,C2,C4", states=document["states"][:1])
        with pytest.raises(CertificationError, match="not minimal"):
            verify_certificate(CycleCertificate.from_dict(document))

    def test_inconsistent_document(self, both_cycles):
        document = certify_cycle(both_cycles, CellItinerary((C3, C2, C4))).to_dict()
        document["period"] = 2
        with pytest.raises(ConfigError):
            CycleCertificate.from_dict(document)

    def test_partial_state_list(self, both_cycles):
        document = certify_cycle(both_cycles, CellItinerary((C3, C2, C4))).to_dict()
        document["states"] = document["states"][:2]
        with pytest.raises(ConfigError):
            CycleCertificate.from_dict(document)


# ============================================================================
# SCOUTING AND DRIVERS
# ============================================================================

def region3_params(rng):
    r2 = random_rational(rng, mpq(11, 10), 3)
    return ThreeWorkerParams(r2 + random_rational(rng, mpq(1, 10), 2), r2)


def region_k_params(rng):
    return ThreeWorkerParams(random_rational(rng, mpq(11, 10), 3), random_rational(rng, mpq(1, 10), 1))


def steps_to_reach(p, s0, target, limit, tolerance=mpq(1, 10 ** 9), precision=128):
    """First n <= limit with f^n(s0) within tolerance of target, in floats; None if never"""
    with working_precision(precision):
        eps = mpfr(2) ** -64
        tol = mpfr(tolerance)
        tx, ty = mpfr(target[0]), mpfr(target[1])
        s = (mpfr(s0[0]), mpfr(s0[1]))
        for n in range(limit + 1):
            if abs(s[0] - tx) < tol and abs(s[1] - ty) < tol:
                return n
            _, s = float_step(p, s, eps)
    return None


class TestScout:
    @pytest.mark.parametrize("start, transient", [
        ((0, mpq(1, 5)), 1),
        ((0, mpq(3, 10)), 4),
    ])
    def test_standard_cycle_basin(self, both_cycles, start, transient):
        scout = scout_orbit(both_cycles, start, 1000)
        assert scout.period == 3
        assert scout.transient == transient

    def test_repelling_fixed_point(self, both_cycles):
        scout = scout_orbit(both_cycles, p_star(both_cycles), 100)
        assert scout.period == 1
        assert scout.transient == 0

    def test_itinerary_of_scouted_cycle(self, both_cycles):
        scout = scout_orbit(both_cycles, (0, mpq(1, 5)), 1000)
        it = extract_itinerary(both_cycles, scout.entry, scout.period)
        assert sorted(c.value for c in it.cells) == ["C1", "C2", "C4"]

    def test_arguments_checked(self, both_cycles):
        with pytest.raises(ConfigError):
            scout_orbit(both_cycles, (0, 0), 0)
        with pytest.raises(ConfigError):
            scout_orbit(both_cycles, (0, 0), 10, precision=64)

    def test_return_after_one_period(self, both_cycles):
        candidate = next(scout_returns(both_cycles, (0, mpq(1, 5)), 3, 100))
        assert candidate.offset == 1
        assert candidate.entry == (1, 1)
        assert candidate.itinerary.cells == (C2, C4, C1)

    def test_return_arguments_checked(self, both_cycles):
        with pytest.raises(ConfigError):
            next(scout_returns(both_cycles, (0, 0), 0, 10))
        with pytest.raises(ConfigError):
            next(scout_returns(both_cycles, (0, 0), 5, 3))
        with pytest.raises(ConfigError):
            next(scout_returns(both_cycles, (0, 0), 3, 10, precision=64))

    def test_no_lag_two_return_on_a_three_cycle(self, both_cycles):
        assert list(scout_returns(both_cycles, (0, 0), 2, 500)) == []

    def test_period_budget(self):
        assert period_budget(3) == 20_012
        assert period_budget(63_667) == 274_668


class TestDrivers:
    def test_standard_cycle_certified(self, both_cycles):
        behavior = find_certified_cycle(both_cycles, (0, mpq(1, 5)), 1000)
        assert behavior.kind is BehaviorKind.CERTIFIED_CYCLE
        assert behavior.label == "CertifiedCycle(3)"
        assert set(behavior.witness_states) == set(standard_cycle_states())

    def test_region2_settles_on_two_cycle(self, region2):
        behavior = find_certified_cycle(region2, (0, mpq(9, 10)), 10_000)
        assert behavior.period == 2
        assert set(behavior.witness_states) == {(0, mpq(1, 3)), (mpq(1, 3), 1)}

    def test_region1_converges_to_fixed_point(self):
        p = ThreeWorkerParams(mpq(1, 2), 1)
        behavior = find_certified_cycle(p, (0, mpq(1, 2)), 10_000)
        assert behavior.period == 1
        assert behavior.witness_states == [(mpq(1, 5), mpq(3, 5))]

    def test_budget_exhaustion_is_unresolved(self, region2):
        behavior = find_certified_cycle(region2, (0, mpq(9, 10)), 2)
        assert behavior.kind is BehaviorKind.UNRESOLVED
        assert behavior.to_dict()["budget"] == 2

    def test_dispatch(self, both_cycles, region2):
        assert classify_behavior(both_cycles, (0, mpq(2, 5)), 100).kind is BehaviorKind.OTHER_THREE_CYCLE
        assert classify_behavior(region2, (0, mpq(1, 3)), 100).kind is BehaviorKind.TWO_CYCLE

    def test_grid_points(self):
        assert grid_points(3, 3) == [
            (0, 0), (0, mpq(1, 2)), (0, 1), (mpq(1, 2), mpq(1, 2)), (mpq(1, 2), 1), (1, 1),
        ]
        with pytest.raises(ConfigError):
            grid_points(0, 3)

    def test_unstable_cycle_reached_by_a_return(self, both_cycles):
        cert = certify_period_from(both_cycles, (0, mpq(2, 5)), 3)
        assert cert.states == other_cycle_states(both_cycles)
        assert cert.transient_bound == 0

    def test_stable_cycle_reached_by_a_return(self, both_cycles):
        cert = certify_period_from(both_cycles, (0, mpq(1, 5)), 3)
        assert set(cert.states) == set(standard_cycle_states())
        assert cert.transient_bound == 1

    def test_settled_fixed_point(self, both_cycles):
        cert = certify_period_from(both_cycles, p_star(both_cycles), 1)
        assert cert.states == [(mpq(6, 13), mpq(10, 13))]
        assert certify_period_from(both_cycles, p_star(both_cycles), 2) is None

    def test_wrong_period_is_not_reached(self, both_cycles):
        assert certify_period_from(both_cycles, (0, mpq(1, 5)), 2, budget=1000) is None

    def test_known_period_in_classification(self):
        p = ThreeWorkerParams(mpq(1, 2), 1)
        behavior = classify_behavior(p, (0, mpq(1, 2)), 10_000, period=1)
        assert behavior.label == "CertifiedCycle(1)"
        assert behavior.witness_states == [(mpq(1, 5), mpq(3, 5))]

    def test_search_finds_standard_cycle(self, both_cycles):
        start, cert = search_period(both_cycles, (5, 5), 3, 1000)
        assert start == (0, 0)
        assert cert.period == 3

    def test_search_with_a_process_pool(self, both_cycles):
        serial = search_period(both_cycles, (5, 5), 3, 1000)
        pooled = search_period(both_cycles, (5, 5), 3, 1000, workers=2)
        assert pooled == serial

    @pytest.mark.slow
    @pytest.mark.parametrize("draw, region", [(region3_params, Region.R3), (region_k_params, Region.RK)])
    def test_scout_and_certificate_agree(self, rng, draw, region):
        certified = 0
        for _ in range(50):
            p = draw(rng)
            assert region_of(p) is region
            s0 = random_state(rng)
            behavior = find_certified_cycle(p, s0, 20_000)
            if behavior.kind is BehaviorKind.CERTIFIED_CYCLE:
                certified += 1
                assert scout_orbit(p, s0, 20_000).period == behavior.period
                assert verify_certificate(behavior.certificate)
        assert certified >= 10

    @pytest.mark.slow
    def test_region1_orbits_converge_to_the_fixed_point(self, rng):
        for _ in range(10):
            r1 = random_rational(rng, mpq(1, 10), mpq(9, 10))
            p = ThreeWorkerParams(r1, random_rational(rng, mpq(1, 10), r1 + mpq(9, 10)))
            assert region_of(p) is Region.R1
            target = p_star(p)
            for s0 in grid_points(50, 50):
                assert steps_to_reach(p, s0, target, 10_000) is not None, (p, s0)

    @pytest.mark.slow
    def test_long_cycle_in_sigma_case(self):
        p = ThreeWorkerParams.from_velocities(["1.2", 3, 1])
        found = search_period(p, (200, 200), 63_667, workers=4)
        assert found is not None
        start, cert = found
        assert start == (0, mpq(46, 199))
        assert cert.period == 63_667
        assert len(cert.states) == 1
        assert verify_certificate(cert)

    @pytest.mark.slow
    def test_long_cycle_from_the_witness_start(self):
        p = ThreeWorkerParams.from_velocities(["1.2", 3, 1])
        behavior = classify_behavior(p, (0, mpq(46, 199)), period_budget(63_667), period=63_667)
        assert behavior.label == "CertifiedCycle(63667)"
        assert behavior.transient == 4468
        assert len(behavior.witness_states) == 1
