import numpy as np
import pytest

from flashlive.challenges import (
    BELT_HEIGHT,
    PALETTE,
    ChallengeKind,
    generate,
    guess_probability,
    plan_from_text,
    plan_to_text,
)


def test_determinism():
    a = generate(1234567, 20)
    b = generate(1234567, 20)
    assert a == b
    assert plan_to_text(a) == plan_to_text(b)


def test_different_seeds_differ():
    assert generate(1, 20) != generate(2, 20)


def test_pairing_and_counts():
    plan = generate(99, 20)
    assert len(plan.sequence) == 20
    lighting = plan.lighting()
    assert len(lighting) == 10
    for ch in plan.sequence:
        if ch.kind is ChallengeKind.LIGHTING:
            prev = plan.sequence[ch.display_frame - 1]
            assert prev.kind is ChallengeKind.BACKGROUND
            assert prev.background_color == ch.background_color


def test_belt_geometry():
    plan = generate(7, 200)
    for ch in plan.lighting():
        assert ch.belt_color != ch.background_color
        assert 0.0 <= ch.u <= 1.0 - BELT_HEIGHT
        assert ch.b_low == pytest.approx(ch.u + BELT_HEIGHT)


def test_color_frequencies_uniform():
    # frequency of each of the 8 colors over many challenges: 1/8 +- 0.02
    plan = generate(31337, 20000)
    bg = np.array([c.background_color for c in plan.sequence])
    belt = np.array([c.belt_color for c in plan.lighting()])
    for color in range(8):
        assert abs(np.mean(bg == color) - 0.125) < 0.02
        assert abs(np.mean(belt == color) - 0.125) < 0.02


def test_u_uniform():
    plan = generate(4242, 20000)
    us = np.array([c.u for c in plan.lighting()])
    assert us.min() >= 0.0 and us.max() <= 0.75
    assert abs(us.mean() - 0.375) < 0.01


def test_min_challenges():
    with pytest.raises(ValueError):
        generate(1, 1)


def test_odd_n_trailing_background():
    plan = generate(5, 7)
    assert len(plan.sequence) == 7
    assert plan.sequence[-1].kind is ChallengeKind.BACKGROUND


def test_guess_probability_values():
    assert guess_probability(8, 10) == pytest.approx(8.0**-10)
    assert guess_probability(8, 10) < 1e-9
    assert guess_probability(8, 1) == pytest.approx(0.125)
    assert guess_probability(2, 3) == pytest.approx(0.125)
    with pytest.raises(ValueError):
        guess_probability(0, 1)


def test_plan_text_round_trip():
    plan = generate(77, 21)
    assert plan_from_text(plan_to_text(plan)) == plan


def test_palette_is_rgb_cube():
    assert len(PALETTE) == 8
    assert sorted(PALETTE) == sorted(
        [(float(r), float(g), float(b)) for r in (0, 1) for g in (0, 1) for b in (0, 1)]
    )
