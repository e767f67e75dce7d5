"""Synthetic skin-lesion image generator.

Each image is a skin-tone background with one lesion: a radial polygon
around an integer center on the main diagonal, with per-class knobs for
mirror asymmetry, border irregularity, within-lesion color structure
(an outer ring pattern and an inner core), and diameter. The generator
is a pure function of (spec, seed): every random draw happens up front
in a fixed order from a per-image seed stream, so a regeneration is
byte-identical and toggling one profile knob never shifts the draws
behind the others.

Geometry: with psi the angle measured from the vertical axis through
the lesion center, the radius is

    r(psi) = R * (1 + border * B(psi) + bump * G(psi))

where B is an even cosine ripple over multiples of four and G carries
two narrow angular bumps of equal height. A transpose of the image maps
psi to pi/2 - psi and the B harmonics survive it, so the outline's
mirror behavior is set entirely by where the bumps sit: with symmetry 0
they form an exact transpose-mirrored pair, and raising symmetry slides
the second bump away from the mirrored position. Count, height, and
width of the bumps never change, so every per-image statistic that
ignores position is identical across the symmetry range; only the
pairing relation differs. Colors depend on the outline-normalized
center distance, so they inherit the outline's symmetries and the shape
knobs never shift the color histogram. Freckles (background mottling)
are rendered as transpose-mirrored pairs strictly outside the lesion:
they add image-level clutter without touching either the lesion or its
diagonal symmetry.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import LabeledDataset
from .errors import ConfigError, DataError

__all__ = ["ClassProfile", "SynthSpec", "generate_synthetic", "render_lesion"]

# ripple over multiples of four survives both a horizontal flip and a
# transpose, so border irregularity never masquerades as asymmetry
_BORDER_HARMONICS = (4, 8)
_CORE_EDGE = 0.38
_BUMP_WIDTH = 0.25
# the first bump keeps this angular distance from the diagonal, so a
# mirrored pair can never merge into one lump
_BUMP_CLEARANCE = 0.5
_FRECKLE_PAIRS = 10


@dataclass(frozen=True)
class ClassProfile:
    """Generator knobs for one lesion class.

    symmetry: how far the second outline bump slides away from the
        position that would mirror the first across the diagonal, as a
        fraction of the drawn displacement; 0 keeps the pair exactly
        mirrored, 1 places it freely. Does nothing while bump is 0.
    border: amplitude of the even outline ripple (border irregularity).
    bump: radial height of the two angular bumps, relative to the
        radius. Bumps carry the symmetry cue without changing any
        position-blind statistic.
    core: depth of a reddish central core (green and blue are dimmed
        over the inner part of the lesion); 0 renders no core. The core
        is a small local color cue that barely moves whole-image
        statistics.
    color: within-lesion color variation amplitude (ring contrast).
    mottle: depth multiplier for the background freckles; 0 renders a
        clean background. Freckles are clutter, not a class cue: they
        raise the noise floor of position-blind statistics.
    diameter: (low, high) lesion diameter range in pixels.
    """

    name: str
    symmetry: float = 0.0
    border: float = 0.0
    bump: float = 0.0
    core: float = 0.0
    color: float = 0.1
    mottle: float = 0.0
    diameter: tuple[float, float] = (18.0, 26.0)

    def __post_init__(self):
        knobs = (self.symmetry, self.border, self.bump, self.core,
                 self.color, self.mottle)
        if any(k < 0 for k in knobs):
            raise ConfigError(f"profile {self.name!r}: amplitudes must be >= 0")
        for field in ("symmetry", "core", "mottle"):
            if getattr(self, field) > 1:
                raise ConfigError(f"profile {self.name!r}: {field} must be <= 1")
        if self.border + self.bump >= 1:
            raise ConfigError(
                f"profile {self.name!r}: border + bump must stay below 1 "
                "or the outline can collapse to the center")
        lo, hi = self.diameter
        if not 0 < lo <= hi:
            raise ConfigError(f"profile {self.name!r}: bad diameter range {self.diameter}")

    def to_dict(self) -> dict:
        return {"name": self.name, "symmetry": self.symmetry,
                "border": self.border, "bump": self.bump,
                "core": self.core, "color": self.color,
                "mottle": self.mottle, "diameter": list(self.diameter)}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassProfile":
        return cls(name=d["name"], symmetry=float(d.get("symmetry", 0.0)),
                   border=float(d.get("border", 0.0)),
                   bump=float(d.get("bump", 0.0)),
                   core=float(d.get("core", 0.0)),
                   color=float(d.get("color", 0.1)),
                   mottle=float(d.get("mottle", 0.0)),
                   diameter=tuple(d.get("diameter", (18.0, 26.0))))


@dataclass(frozen=True)
class SynthSpec:
    """Full description of one synthetic dataset."""

    classes: tuple[ClassProfile, ...]
    count_per_class: int = 20
    image_size: int = 64
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            raise ConfigError("spec needs at least one class profile")
        if self.count_per_class < 1:
            raise ConfigError(f"count_per_class must be >= 1, got {self.count_per_class}")
        if self.image_size < 8:
            raise ConfigError(f"image_size must be >= 8, got {self.image_size}")

    def class_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.classes)

    def to_dict(self) -> dict:
        return {"classes": [p.to_dict() for p in self.classes],
                "count_per_class": self.count_per_class,
                "image_size": self.image_size, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {"classes", "count_per_class", "image_size", "seed"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown synth spec keys: {sorted(extra)}")
        if "classes" not in d:
            raise ConfigError("synth spec needs a classes list")
        return cls(classes=tuple(ClassProfile.from_dict(p) for p in d["classes"]),
                   count_per_class=int(d.get("count_per_class", 20)),
                   image_size=int(d.get("image_size", 64)),
                   seed=int(d.get("seed", 0)))

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid synth spec JSON: {exc}") from exc


def default_spec(seed: int = 0, count_per_class: int = 20,
                 image_size: int = 64) -> SynthSpec:
    """Seven profiles layering the clinical cues from coarse to fine.

    Color contrast and size separate three coarse groups. A central
    core splits the low-contrast quartet into pairs; it is a small
    local cue sitting in the freckle-free lesion center, so spatial
    attention reads it far above the clutter noise floor that global
    pooling is stuck with. Whether the two outline bumps mirror each
    other across the diagonal resolves each remaining pair, and no
    position-blind statistic can tell: bump count, height, arc length,
    and color histograms are matched inside every pair.
    """
    profiles = (
        ClassProfile("akiec", symmetry=0.0, border=0.25, bump=0.45,
                     core=0.0, color=0.05, mottle=1.0,
                     diameter=(24.0, 28.0)),
        ClassProfile("bcc", symmetry=1.0, border=0.25, bump=0.45,
                     core=0.0, color=0.05, mottle=1.0,
                     diameter=(24.0, 28.0)),
        ClassProfile("bkl", symmetry=0.0, border=0.25, bump=0.45,
                     core=0.7, color=0.05, mottle=1.0,
                     diameter=(24.0, 28.0)),
        ClassProfile("df", symmetry=1.0, border=0.25, bump=0.45,
                     core=0.7, color=0.05, mottle=1.0,
                     diameter=(24.0, 28.0)),
        ClassProfile("mel", symmetry=0.0, border=0.15, bump=0.45,
                     core=0.0, color=0.50, mottle=1.0,
                     diameter=(24.0, 28.0)),
        ClassProfile("nv", symmetry=1.0, border=0.15, bump=0.45,
                     core=0.0, color=0.50, mottle=1.0,
                     diameter=(24.0, 28.0)),
        ClassProfile("vasc", symmetry=0.5, border=0.15, bump=0.45,
                     core=0.0, color=0.25, mottle=1.0,
                     diameter=(12.0, 16.0)),
    )
    return SynthSpec(classes=profiles, count_per_class=count_per_class,
                     image_size=image_size, seed=seed)


def _series(angles: np.ndarray, weights: np.ndarray,
            harmonics: Sequence[int]) -> np.ndarray:
    """Weighted, normalized cosine series with values in [-1, 1]."""
    total = np.sum(np.abs(weights))
    if total == 0.0:
        return np.zeros_like(angles)
    acc = np.zeros_like(angles)
    for w, m in zip(weights, harmonics):
        acc += w * np.cos(m * angles)
    return acc / total


def render_lesion(profile: ClassProfile, image_size: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Render one image. All draws happen before any geometry is computed."""
    size = int(image_size)

    # fixed draw order; changing a profile amplitude never changes it.
    # draw ranges are deliberately tight: the class cues live in the
    # profile knobs, and wide nuisance variation would drown them at
    # desk-scale training budgets
    bg_r = rng.uniform(0.74, 0.80)
    bg_g = bg_r * rng.uniform(0.84, 0.90)
    bg_b = bg_g * rng.uniform(0.80, 0.86)
    diameter = rng.uniform(*profile.diameter)
    border_w = rng.uniform(-1.0, 1.0, size=len(_BORDER_HARMONICS))
    # the first bump keeps clear of both diagonal rays (psi = pi/4 and
    # psi = 5*pi/4), so its mirrored partner never lands on top of it
    bump_u = rng.uniform(_BUMP_CLEARANCE, np.pi - _BUMP_CLEARANCE)
    bump_side = float(rng.integers(0, 2))
    bump_slide = rng.uniform(2.0, 2.0 * np.pi - 2.0)
    bump_sign = -1.0 if rng.integers(0, 2) == 0 else 1.0
    ring_freq = rng.uniform(1.8, 2.2)
    ring_phase = rng.uniform(0.0, 2.0 * np.pi)
    les_r = rng.uniform(0.34, 0.40)
    les_g = les_r * rng.uniform(0.64, 0.70)
    les_b = les_g * rng.uniform(0.60, 0.66)
    core_depth = profile.core * rng.uniform(0.50, 0.60)
    fr_theta = rng.uniform(0.0, 2.0 * np.pi, size=_FRECKLE_PAIRS)
    fr_reach = rng.uniform(0.0, 1.0, size=_FRECKLE_PAIRS)
    fr_radius = rng.uniform(1.5, 3.5, size=_FRECKLE_PAIRS)
    fr_depth = profile.mottle * rng.uniform(0.08, 0.22, size=_FRECKLE_PAIRS)

    radius = diameter / 2.0
    reach = radius * (1.0 + profile.border + profile.bump)
    margin = int(np.ceil(reach)) + 2
    # the jitter window is profile-independent whenever the lesion fits
    # with room to spare, so position never leaks a class cue
    jitter = min(4, size // 2 - margin)
    if jitter < 1:
        raise DataError(
            f"profile {profile.name!r}: lesion diameter {diameter:.1f} does "
            f"not fit a {size}x{size} image")
    c = int(rng.integers(size // 2 - jitter, size // 2 + jitter))
    # centers sit on the main diagonal so a transpose of the image maps
    # the lesion onto itself
    cx, cy = c, c

    ys, xs = np.mgrid[0:size, 0:size]
    dx = (xs - cx).astype(np.float64)
    dy = (ys - cy).astype(np.float64)
    rho = np.sqrt(dx * dx + dy * dy)
    # angle from the vertical axis; a horizontal flip negates it and a
    # transpose maps it to pi/2 - psi
    psi = np.arctan2(dx, dy)

    # second bump: mirrored across the diagonal, then slid along the
    # outline by the symmetry knob. max() merges the narrow lobes where
    # they would overlap, so the outline never exceeds the reach bound
    bump_a = 0.25 * np.pi + bump_u + bump_side * np.pi
    bump_b = (0.5 * np.pi - bump_a) + profile.symmetry * bump_slide
    lobes = np.maximum(
        np.exp((np.cos(psi - bump_a) - 1.0) / _BUMP_WIDTH ** 2),
        np.exp((np.cos(psi - bump_b) - 1.0) / _BUMP_WIDTH ** 2))
    outline = radius * (1.0
                        + profile.border * _series(psi, border_w, _BORDER_HARMONICS)
                        + profile.bump * bump_sign * lobes)
    mask = rho <= outline

    # colors depend on the outline-normalized center distance: rings plus
    # a gentle darkening, with green and blue dimmed inside the core.
    # normalizing by the outline makes every lesion sample the same color
    # profile end to end, so bending the outline never shifts the color
    # histogram. ring mottling is one-sided (darkening), so the color
    # amplitude moves both the within-lesion variance and the mean
    t = rho / outline
    ring = 1.0 - profile.color * (
        0.5 + 0.5 * np.sin(2.0 * np.pi * ring_freq * t + ring_phase))
    shade = ring * (0.85 + 0.15 * np.minimum(t, 1.0))
    core_gain = 1.0 - core_depth * (t < _CORE_EDGE)
    image = np.empty((size, size, 3), dtype=np.float64)
    image[..., 0] = bg_r
    image[..., 1] = bg_g
    image[..., 2] = bg_b
    for ch, base, gain in ((0, les_r, None), (1, les_g, core_gain),
                           (2, les_b, core_gain)):
        channel = image[..., ch]
        values = base * shade if gain is None else base * shade * gain
        channel[mask] = values[mask]

    # freckles: transpose-mirrored pairs of soft discs strictly outside
    # the lesion (inner distance past the worst-case outline), clear of
    # the outermost pixel ring so corners always show pure background
    dir_x = np.sin(fr_theta)
    dir_y = np.cos(fr_theta)
    near = reach + fr_radius + 1.0
    far = np.full(_FRECKLE_PAIRS, np.inf)
    for d in (dir_x, dir_y):
        hi = np.where(d > 1e-9, (size - 2.0 - fr_radius - c) / np.where(d > 1e-9, d, 1.0), np.inf)
        lo = np.where(d < -1e-9, (1.0 + fr_radius - c) / np.where(d < -1e-9, d, 1.0), np.inf)
        far = np.minimum(far, np.minimum(hi, lo))
    dist = near + fr_reach * np.maximum(far - near, 0.0)
    for i in range(_FRECKLE_PAIRS):
        if fr_depth[i] <= 0.0 or far[i] <= near[i]:
            continue
        fy = cy + dist[i] * dir_y[i]
        fx = cx + dist[i] * dir_x[i]
        for py, px in ((fy, fx), (fx, fy)):
            prof = np.maximum(
                0.0, 1.0 - ((ys - py) ** 2 + (xs - px) ** 2) / fr_radius[i] ** 2)
            image[..., 0] *= 1.0 - 0.5 * fr_depth[i] * prof
            dim = 1.0 - fr_depth[i] * prof
            image[..., 1] *= dim
            image[..., 2] *= dim
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def generate_synthetic(spec: SynthSpec) -> LabeledDataset:
    """Render the full dataset described by the spec.

    Per-image seed streams are keyed by (class index, sample index), so
    datasets with different counts share their common prefix of images.
    """
    images, labels, provenance = [], [], []
    for c, profile in enumerate(spec.classes):
        for i in range(spec.count_per_class):
            seq = np.random.SeedSequence(entropy=spec.seed, spawn_key=(c, i))
            rng = np.random.default_rng(seq)
            images.append(render_lesion(profile, spec.image_size, rng))
            labels.append(c)
            provenance.append(f"{profile.name}_{i:05d}")
    return LabeledDataset(images=images, labels=labels,
                          class_names=spec.class_names(),
                          provenance=provenance)
