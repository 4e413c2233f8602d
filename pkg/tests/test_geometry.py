from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visbeam.geometry import (
    DirectionError,
    DoaAngles,
    MicArray,
    PropagationConfig,
    beampattern,
    beampattern_grid,
    build_concentric_array,
    direction_from_vector,
    reference_array,
    separation_angle,
    steering_delays,
    unit_vector,
)

from oracles import REFERENCE_POSITIONS, brute_beampattern, delay

PROP = PropagationConfig()


class TestArrayConstruction:
    def test_reference_array_layout(self):
        a = build_concentric_array([0, 0.025, 0.045], [1, 4, 8])
        assert a.count == 13
        np.testing.assert_allclose(a.positions[:, :2], np.array(REFERENCE_POSITIONS), atol=1e-15)
        ring2 = np.arctan2(a.positions[1:5, 1], a.positions[1:5, 0])
        ring3 = np.arctan2(a.positions[5:, 1], a.positions[5:, 0])
        np.testing.assert_allclose(np.diff(np.unwrap(ring2)), np.pi / 2)
        np.testing.assert_allclose(np.diff(np.unwrap(ring3)), np.pi / 4)
        assert a.center_index() == 0
        assert a.aperture_radius == pytest.approx(0.045)

    def test_single_mic(self):
        a = build_concentric_array([0], [1])
        np.testing.assert_array_equal(a.positions, [[0, 0, 0]])

    def test_quarter_turn_ring(self):
        a = build_concentric_array([0.025], [4])
        expected = [(0.025, 0, 0), (0, 0.025, 0), (-0.025, 0, 0), (0, -0.025, 0)]
        np.testing.assert_allclose(a.positions, expected, atol=1e-15)
        assert a.center_index() is None

    @pytest.mark.parametrize(
        "radii, counts",
        [([0, 0.02], [1]), ([0.02], [0]), ([-0.01], [4]), ([0], [2]), ([0.02, 0.02], [4, 4])],
    )
    def test_invalid_layouts(self, radii, counts):
        with pytest.raises(ValueError):
            build_concentric_array(radii, counts)

    def test_non_planar_rejected(self):
        with pytest.raises(ValueError):
            MicArray(np.array([[0.0, 0.0, 0.0], [0.01, 0.0, 0.01]]))


class TestUnitVector:
    @pytest.mark.parametrize(
        "doa, expected",
        [
            (DoaAngles(0, math.pi), (0, 0, 1)),
            (DoaAngles(math.pi / 4, math.pi), (0, 1 / math.sqrt(2), 1 / math.sqrt(2))),
            (DoaAngles(0, 3 * math.pi / 4), (1 / math.sqrt(2), 0, 1 / math.sqrt(2))),
        ],
    )
    def test_examples(self, doa, expected):
        np.testing.assert_allclose(unit_vector(doa), expected, atol=1e-15)

    def test_endfire_singularity(self):
        with pytest.raises(DirectionError):
            unit_vector(DoaAngles(0, math.pi / 2))
        with pytest.raises(DirectionError):
            unit_vector(DoaAngles(math.pi / 2, math.pi))

    @given(st.floats(-1.4, 1.4), st.floats(math.pi / 2 + 0.1, 3 * math.pi / 2 - 0.1))
    def test_round_trip(self, theta, phi):
        u = unit_vector(DoaAngles(theta, phi))
        assert np.linalg.norm(u) == pytest.approx(1.0, abs=1e-12)
        back = direction_from_vector(u)
        assert back.theta == pytest.approx(theta, abs=1e-9)
        assert back.phi == pytest.approx(phi, abs=1e-9)


class TestSteeringDelays:
    def test_broadside_is_zero(self):
        np.testing.assert_allclose(steering_delays(reference_array(), DoaAngles(0, math.pi), PROP), 0, atol=1e-18)

    def test_center_mic_always_zero(self):
        d = steering_delays(reference_array(), DoaAngles(0.3, 2.5), PROP)
        assert d[0] == 0.0

    def test_hand_evaluated_delay(self):
        a = MicArray(np.array([[0.045, 0.0, 0.0]]))
        tau = steering_delays(a, DoaAngles(0, 3 * math.pi / 4), PROP)[0]
        assert tau == pytest.approx(-0.045 / (math.sqrt(2) * 343), rel=1e-12)
        assert tau == pytest.approx(-9.276e-5, abs=1e-8)

    @given(st.floats(-1.3, 1.3), st.floats(math.pi / 2 + 0.2, 3 * math.pi / 2 - 0.2))
    def test_bounded_by_aperture(self, theta, phi):
        d = steering_delays(reference_array(), DoaAngles(theta, phi), PROP)
        assert np.all(np.abs(d) <= 0.045 / 343 + 1e-15)

    @given(st.floats(-1.3, 1.3), st.floats(math.pi / 2 + 0.2, 3 * math.pi / 2 - 0.2))
    def test_matches_oracle(self, theta, phi):
        d = steering_delays(reference_array(), DoaAngles(theta, phi), PROP)
        expected = [delay(p, theta, phi) for p in REFERENCE_POSITIONS]
        np.testing.assert_allclose(d, expected, rtol=1e-9, atol=1e-18)


class TestBeampattern:
    def test_look_equals_source(self):
        doa = DoaAngles(0.2, 2.7)
        assert beampattern(reference_array(), doa, doa, 3000, PROP) == 1 + 0j

    def test_single_mic_has_no_directivity(self):
        a = build_concentric_array([0], [1])
        assert beampattern(a, DoaAngles(0, math.pi), DoaAngles(0.4, 2.2), 3500, PROP) == 1 + 0j

    def test_golden_magnitude(self):
        # brute-force |B| recorded from an independent complex-exponential sum
        b = beampattern(reference_array(), DoaAngles(0, math.pi), DoaAngles(0, 3 * math.pi / 4), 3000, PROP)
        assert abs(b) == pytest.approx(0.5451371300958778, rel=1e-12)

    @settings(max_examples=200)
    @given(
        st.floats(-1.2, 1.2), st.floats(1.8, 4.4), st.floats(-1.2, 1.2), st.floats(1.8, 4.4), st.floats(0, 4000)
    )
    def test_matches_brute_force_and_bounded(self, lt, lp, st_, sp, f):
        b = beampattern(reference_array(), DoaAngles(lt, lp), DoaAngles(st_, sp), f, PROP)
        ref = brute_beampattern(REFERENCE_POSITIONS, (lt, lp), (st_, sp), f)
        assert abs(b - ref) < 1e-12
        assert abs(b) <= 1 + 1e-12

    def test_frequency_outside_band(self):
        with pytest.raises(ValueError):
            beampattern(reference_array(), DoaAngles(0, math.pi), DoaAngles(0, 3), 4001, PROP)

    def test_grid_contains_peak(self):
        look = DoaAngles(0.0, 2.9)
        rows = beampattern_grid(reference_array(), look, 2000, PROP, n_phi=360)
        assert rows.shape == (360, 5)
        assert rows[:, 3].max() == pytest.approx(1.0, abs=1e-12)
        assert rows[np.argmax(rows[:, 3]), 0] == look.phi


def test_separation_angle():
    a = DoaAngles(0, math.pi)
    b = DoaAngles(0, 3 * math.pi / 4)
    assert separation_angle(a, b) == pytest.approx(math.pi / 4)
    assert separation_angle(a, a) == pytest.approx(0.0, abs=1e-7)
