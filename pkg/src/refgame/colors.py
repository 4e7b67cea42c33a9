"""Color patches, task contexts and the CIELAB distance machinery.

sRGB channels live in [0,1]; CIELAB uses D65 / 2-degree observer. Perceptual
distance is plain Euclidean CIELAB distance (1976 formula), which drives both
the task-difficulty conditions and the distance features fed to the learner.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator

import numpy as np

# Task-difficulty thresholds in CIELAB distance. Hand-picked to make the
# three conditions visually plausible; override per call site if needed.
CLOSE_MAX_DE = 20.0
FAR_MIN_DE = 50.0

# Patches closer than this are visually near-identical and the task would be
# unwinnable in principle, so generation keeps every pair at least this far.
MIN_SEPARATION_DE = 8.0

# The split condition's similar pair is kept a bit farther apart than the
# close floor: split difficulty comes from the pair alone, close difficulty
# from the whole triple.
SPLIT_PAIR_MIN_DE = 12.0

# Rejection-sampling cap for context generation.
MAX_GENERATION_ATTEMPTS = 10_000

# D65 reference white (2-degree observer), Y scaled to 100.
_WHITE_X = 95.047
_WHITE_Y = 100.0
_WHITE_Z = 108.883

_RGB_TO_XYZ = (
    (0.4124, 0.3576, 0.1805),
    (0.2126, 0.7152, 0.0722),
    (0.0193, 0.1192, 0.9505),
)


class Condition(str, Enum):
    FAR = "far"
    SPLIT = "split"
    CLOSE = "close"


def _linearize(c: float) -> float:
    if c > 0.04045:
        return ((c + 0.055) / 1.055) ** 2.4
    return c / 12.92


def _delinearize(c: float) -> float:
    if c > 0.0031308:
        return 1.055 * c ** (1.0 / 2.4) - 0.055
    return 12.92 * c


def _f(t: float) -> float:
    if t > 0.008856:
        return t ** (1.0 / 3.0)
    return 7.787 * t + 16.0 / 116.0


def _f_inv(t: float) -> float:
    t3 = t * t * t
    if t3 > 0.008856:
        return t3
    return (t - 16.0 / 116.0) / 7.787


def rgb_to_lab(rgb: tuple[float, float, float]) -> tuple[float, float, float]:
    r, g, b = (_linearize(c) * 100.0 for c in rgb)
    m = _RGB_TO_XYZ
    x = m[0][0] * r + m[0][1] * g + m[0][2] * b
    y = m[1][0] * r + m[1][1] * g + m[1][2] * b
    z = m[2][0] * r + m[2][1] * g + m[2][2] * b
    fx, fy, fz = _f(x / _WHITE_X), _f(y / _WHITE_Y), _f(z / _WHITE_Z)
    return (116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))


def lab_to_rgb(lab: tuple[float, float, float]) -> tuple[float, float, float]:
    """Inverse conversion; the result may fall outside [0,1] when the Lab
    point lies outside the sRGB gamut (callers must check)."""
    l, a, b = lab
    fy = (l + 16.0) / 116.0
    fx = fy + a / 500.0
    fz = fy - b / 200.0
    x = _f_inv(fx) * _WHITE_X
    y = _f_inv(fy) * _WHITE_Y
    z = _f_inv(fz) * _WHITE_Z
    r = (3.2406 * x - 1.5372 * y - 0.4986 * z) / 100.0
    g = (-0.9689 * x + 1.8758 * y + 0.0415 * z) / 100.0
    bb = (0.0557 * x - 0.2040 * y + 1.0570 * z) / 100.0
    return (_delinearize(r), _delinearize(g), _delinearize(bb))


def delta_e(lab1: tuple[float, float, float], lab2: tuple[float, float, float]) -> float:
    """CIE76 distance: Euclidean in Lab."""
    return math.sqrt(
        (lab1[0] - lab2[0]) ** 2 + (lab1[1] - lab2[1]) ** 2 + (lab1[2] - lab2[2]) ** 2
    )


@dataclass(frozen=True)
class Color:
    rgb: tuple[float, float, float]
    lab: tuple[float, float, float]

    @classmethod
    def from_rgb(cls, r: float, g: float, b: float) -> "Color":
        if not all(0.0 <= c <= 1.0 for c in (r, g, b)):
            raise ValueError(f"rgb channels must lie in [0,1], got {(r, g, b)}")
        rgb = (float(r), float(g), float(b))
        return cls(rgb=rgb, lab=rgb_to_lab(rgb))

    @classmethod
    def from_lab(cls, l: float, a: float, b: float) -> "Color":
        """Build from a Lab point; raises if it falls outside the sRGB gamut."""
        rgb = lab_to_rgb((l, a, b))
        if not all(-1e-9 <= c <= 1.0 + 1e-9 for c in rgb):
            raise ValueError(f"Lab point {(l, a, b)} is outside the sRGB gamut")
        rgb = tuple(min(1.0, max(0.0, c)) for c in rgb)
        return cls(rgb=rgb, lab=rgb_to_lab(rgb))

    def distance(self, other: "Color") -> float:
        return delta_e(self.lab, other.lab)

    def hex(self) -> str:
        return "#%02x%02x%02x" % tuple(round(c * 255.0) for c in self.rgb)


@dataclass(frozen=True)
class ColorContext:
    patches: tuple[Color, Color, Color]
    target_index: int
    condition: Condition

    def __post_init__(self) -> None:
        if len(self.patches) != 3:
            raise ValueError("a context holds exactly 3 patches")
        if self.target_index not in (0, 1, 2):
            raise ValueError(f"target_index must be 0, 1 or 2, got {self.target_index}")
        actual = classify_condition(self.patches)
        if actual is not Condition(self.condition):
            raise ValueError(
                f"patches classify as '{actual.value}', not '{self.condition}'"
            )

    @property
    def target(self) -> Color:
        return self.patches[self.target_index]

    def distractor_indices(self) -> tuple[int, int]:
        return tuple(i for i in range(3) if i != self.target_index)  # type: ignore[return-value]


@dataclass(frozen=True)
class DistanceFeatures:
    d_min: float
    d_max: float
    d_avg: float


def pairwise_distances(patches: Iterable[Color]) -> list[float]:
    p = list(patches)
    return [p[0].distance(p[1]), p[0].distance(p[2]), p[1].distance(p[2])]


def classify_condition(
    patches: Iterable[Color],
    close_max: float = CLOSE_MAX_DE,
    far_min: float = FAR_MIN_DE,
) -> Condition:
    dists = pairwise_distances(patches)
    if all(d < close_max for d in dists):
        return Condition.CLOSE
    if all(d > far_min for d in dists):
        return Condition.FAR
    return Condition.SPLIT


def distance_features(context: ColorContext) -> DistanceFeatures:
    dists = pairwise_distances(context.patches)
    return DistanceFeatures(
        d_min=min(dists), d_max=max(dists), d_avg=sum(dists) / 3.0
    )


def _random_color(rng: np.random.Generator) -> Color:
    r, g, b = rng.random(3)
    return Color.from_rgb(r, g, b)


def _jitter_within(base: Color, radius: float, rng: np.random.Generator) -> Color | None:
    """Lab-ball jitter around ``base``; None when the draw leaves the gamut."""
    direction = rng.normal(size=3)
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        return None
    r = radius * float(rng.random()) ** (1.0 / 3.0)
    offset = direction / norm * r
    lab = (base.lab[0] + offset[0], base.lab[1] + offset[1], base.lab[2] + offset[2])
    try:
        return Color.from_lab(*lab)
    except ValueError:
        return None


def generate_context(
    condition: Condition | str,
    rng: np.random.Generator,
    close_max: float = CLOSE_MAX_DE,
    far_min: float = FAR_MIN_DE,
) -> ColorContext:
    """Rejection-sample a 3-patch context of the requested difficulty.

    Identical rng states produce identical contexts. Raises RuntimeError when
    the thresholds make the condition infeasible within the attempt cap.
    """
    condition = Condition(condition)
    min_sep = min(MIN_SEPARATION_DE, close_max * 0.75)
    for _ in range(MAX_GENERATION_ATTEMPTS):
        if condition is Condition.FAR:
            patches = (_random_color(rng), _random_color(rng), _random_color(rng))
        elif condition is Condition.CLOSE:
            base = _random_color(rng)
            radius = close_max * 0.9
            second = _jitter_within(base, radius, rng)
            third = _jitter_within(base, radius, rng)
            if second is None or third is None:
                continue
            patches = (base, second, third)
        else:
            base = _random_color(rng)
            near = _jitter_within(base, close_max * 0.9, rng)
            outlier = _random_color(rng)
            if near is None:
                continue
            if near.distance(base) < SPLIT_PAIR_MIN_DE:
                continue
            if outlier.distance(base) <= far_min or outlier.distance(near) <= far_min:
                continue
            patches = (base, near, outlier)
        if any(d < min_sep for d in pairwise_distances(patches)):
            continue
        if classify_condition(patches, close_max, far_min) is not condition:
            continue
        order = rng.permutation(3)
        shuffled = tuple(patches[i] for i in order)
        target_index = int(rng.integers(3))
        return ColorContext(patches=shuffled, target_index=target_index, condition=condition)
    raise RuntimeError(
        f"could not generate a '{condition.value}' context in "
        f"{MAX_GENERATION_ATTEMPTS} attempts; thresholds look infeasible"
    )


def generate_contexts(
    counts: dict[Condition | str, int], rng: np.random.Generator
) -> list[ColorContext]:
    out: list[ColorContext] = []
    for condition, count in counts.items():
        out.extend(generate_context(condition, rng) for _ in range(count))
    return out


def context_to_json(context: ColorContext) -> dict:
    return {
        "patches": [list(p.rgb) for p in context.patches],
        "target": context.target_index,
        "condition": context.condition.value,
    }


def context_from_json(obj: dict) -> ColorContext:
    patches = tuple(Color.from_rgb(*p) for p in obj["patches"])
    return ColorContext(
        patches=patches,  # type: ignore[arg-type]
        target_index=int(obj["target"]),
        condition=Condition(obj["condition"]),
    )


def write_contexts(path, contexts: Iterable[ColorContext]) -> None:
    with open(path, "w") as fh:
        for ctx in contexts:
            fh.write(json.dumps(context_to_json(ctx)) + "\n")


def read_contexts(path) -> Iterator[ColorContext]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield context_from_json(json.loads(line))
