"""Seeded generation of the random challenge sequence.

A verification session shows the subject a sequence of screen pictures.
*Background* challenges fill the screen with a single palette color;
*lighting* challenges add a colored horizontal belt over the same
background.  The whole sequence is a pure function of ``(seed, n)`` so a
device and a server can derive the identical plan independently.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

#: The 8 challenge colors: the corners of the RGB unit cube, indexed by the
#: 3-bit number ``r<<2 | g<<1 | b`` (0 = black, 7 = white).
PALETTE: tuple[tuple[float, float, float], ...] = tuple(
    (float(r), float(g), float(b)) for r in (0, 1) for g in (0, 1) for b in (0, 1)
)

#: Vertical extent of the lighting belt as a fraction of the screen.
BELT_HEIGHT = 0.25


class ChallengeKind(enum.Enum):
    BACKGROUND = "background"
    LIGHTING = "lighting"


@dataclass(frozen=True)
class Challenge:
    """One screen picture: a background color, optionally with a belt."""

    kind: ChallengeKind
    background_color: int  # palette index
    belt_color: int | None  # palette index, lighting challenges only
    u: float | None  # top of the belt, fraction of screen height
    display_frame: int  # index of the screen refresh showing this picture

    def __post_init__(self) -> None:
        if not 0 <= self.background_color < len(PALETTE):
            raise ValueError(f"background_color {self.background_color} not in palette")
        if self.kind is ChallengeKind.LIGHTING:
            if self.belt_color is None or self.u is None:
                raise ValueError("lighting challenge needs belt_color and u")
            if not 0 <= self.belt_color < len(PALETTE):
                raise ValueError(f"belt_color {self.belt_color} not in palette")
            if self.belt_color == self.background_color:
                raise ValueError("belt color must differ from background color")
            if not 0.0 <= self.u <= 1.0 - BELT_HEIGHT:
                raise ValueError(f"belt top u={self.u} out of range")
        else:
            if self.belt_color is not None or self.u is not None:
                raise ValueError("background challenge carries no belt")

    @property
    def b_low(self) -> float | None:
        """Bottom of the belt; always ``u + BELT_HEIGHT``."""
        if self.u is None:
            return None
        return self.u + BELT_HEIGHT

    @property
    def background_rgb(self) -> tuple[float, float, float]:
        return PALETTE[self.background_color]

    @property
    def belt_rgb(self) -> tuple[float, float, float] | None:
        if self.belt_color is None:
            return None
        return PALETTE[self.belt_color]


@dataclass(frozen=True)
class ChallengePlan:
    """Deterministic challenge sequence for one session."""

    seed: int
    n: int
    sequence: tuple[Challenge, ...]

    def lighting(self) -> tuple[Challenge, ...]:
        return tuple(c for c in self.sequence if c.kind is ChallengeKind.LIGHTING)

    def background_for(self, lighting_index: int) -> Challenge:
        """The background challenge paired with (preceding) a lighting one."""
        ch = self.sequence[lighting_index]
        if ch.kind is not ChallengeKind.LIGHTING:
            raise ValueError(f"challenge {lighting_index} is not a lighting challenge")
        return self.sequence[lighting_index - 1]


def generate(seed: int, n: int) -> ChallengePlan:
    """Generate the challenge plan for ``(seed, n)``.

    The sequence strictly alternates background / lighting so that every
    lighting challenge is immediately preceded by a background challenge of
    the same background color (the timing check divides the former response
    by the latter).  Colors are uniform over the 8-color palette with the
    belt color constrained to differ from its background; the belt top ``u``
    is uniform over ``[0, 1 - BELT_HEIGHT]``.

    Randomness comes from the counter-based Philox-4x64-10 generator keyed
    by ``seed``, so the same ``(seed, n)`` yields a byte-identical plan on
    every platform.
    """
    if n < 2:
        raise ValueError(f"need at least 2 challenges, got {n}")
    rng = np.random.Generator(np.random.Philox(key=seed))
    n_pairs = n // 2
    trailing = n % 2
    bgs = rng.integers(0, 8, size=n_pairs + trailing)
    belt_offsets = rng.integers(1, 8, size=n_pairs)  # ensures belt != background
    us = rng.uniform(0.0, 1.0 - BELT_HEIGHT, size=n_pairs)
    seq: list[Challenge] = []
    for p in range(n_pairs):
        bg = int(bgs[p])
        seq.append(Challenge(ChallengeKind.BACKGROUND, bg, None, None, 2 * p))
        belt = (bg + int(belt_offsets[p])) % 8
        seq.append(Challenge(ChallengeKind.LIGHTING, bg, belt, float(us[p]), 2 * p + 1))
    if trailing:
        seq.append(Challenge(ChallengeKind.BACKGROUND, int(bgs[-1]), None, None, n - 1))
    return ChallengePlan(seed=seed, n=n, sequence=tuple(seq))


def guess_probability(colors: int, lighting_challenges: int) -> float:
    """Probability of blindly guessing every lighting challenge color."""
    if colors < 1 or lighting_challenges < 1:
        raise ValueError("counts must be >= 1")
    return math.pow(float(colors), -float(lighting_challenges))


def plan_to_text(plan: ChallengePlan) -> str:
    """One challenge per line: ``kind background belt u``."""
    lines = [f"# flashlive challenge plan seed={plan.seed} n={plan.n}"]
    for ch in plan.sequence:
        if ch.kind is ChallengeKind.LIGHTING:
            lines.append(f"lighting {ch.background_color} {ch.belt_color} {ch.u!r}")
        else:
            lines.append(f"background {ch.background_color} - -")
    return "\n".join(lines) + "\n"


def plan_from_text(text: str) -> ChallengePlan:
    header, *rows = [ln for ln in text.splitlines() if ln.strip()]
    if not header.startswith("# flashlive challenge plan"):
        raise ValueError("not a challenge plan file")
    fields = dict(tok.split("=") for tok in header.split() if "=" in tok)
    seed, n = int(fields["seed"]), int(fields["n"])
    seq: list[Challenge] = []
    for i, row in enumerate(rows):
        kind, bg, belt, u = row.split()
        if kind == "lighting":
            seq.append(Challenge(ChallengeKind.LIGHTING, int(bg), int(belt), float(u), i))
        elif kind == "background":
            seq.append(Challenge(ChallengeKind.BACKGROUND, int(bg), None, None, i))
        else:
            raise ValueError(f"unknown challenge kind {kind!r}")
    if len(seq) != n:
        raise ValueError(f"plan header says {n} challenges, file has {len(seq)}")
    return ChallengePlan(seed=seed, n=n, sequence=tuple(seq))
