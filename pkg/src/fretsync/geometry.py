"""Parametric guitar model: fret/string layout and distance queries.

Guitar frame convention used throughout the package:

* ``+x`` runs from the nut (x = 0) toward the bridge (x = scale length),
* ``+y`` runs across the strings, from string 6 (bottom-most) toward
  string 1 (top-most); a top-to-down pick sweep moves in -y,
* ``+z`` points away from the fretboard plane (z = 0); strings sit at the
  configured action height above it.

The default layout is left-handed; ``mirrored=True`` flips the y axis to
obtain the right-handed setup.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Raised when a guitar spec violates a construction invariant."""


@dataclass(frozen=True)
class GuitarSpec:
    """Static guitar parameters. All lengths are meters."""

    scale_length: float = 0.6223
    num_strings: int = 6
    num_frets: int = 24
    string_spacing_nut: float = 0.0072
    string_spacing_bridge: float = 0.0105
    string_action_height: float = 0.002
    mirrored: bool = False
    # Rigid transform fixing the guitar in the world: 3x3 rotation + 3-vec.
    body_rotation: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    body_translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.scale_length <= 0:
            raise GeometryError("scale_length must be positive")
        if self.num_frets < 1:
            raise GeometryError("num_frets must be >= 1")
        if self.num_strings < 1:
            raise GeometryError("num_strings must be >= 1")
        if self.string_spacing_nut <= 0 or self.string_spacing_bridge <= 0:
            raise GeometryError("string spacings must be positive")
        if self.string_action_height <= 0:
            raise GeometryError("string_action_height must be positive")

    def to_json(self) -> str:
        return json.dumps(
            {
                "scale_length": self.scale_length,
                "num_strings": self.num_strings,
                "num_frets": self.num_frets,
                "string_spacing_nut": self.string_spacing_nut,
                "string_spacing_bridge": self.string_spacing_bridge,
                "string_action_height": self.string_action_height,
                "mirrored": self.mirrored,
                "body_rotation": [list(r) for r in self.body_rotation],
                "body_translation": list(self.body_translation),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "GuitarSpec":
        doc = json.loads(text)
        if "body_rotation" in doc:
            doc["body_rotation"] = tuple(tuple(r) for r in doc["body_rotation"])
        if "body_translation" in doc:
            doc["body_translation"] = tuple(doc["body_translation"])
        return cls(**doc)


@dataclass(frozen=True)
class CylinderSegment:
    """Axis segment of a cylinder-shaped body part."""

    endpoint_a: np.ndarray
    endpoint_b: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "endpoint_a", np.asarray(self.endpoint_a, float))
        object.__setattr__(self, "endpoint_b", np.asarray(self.endpoint_b, float))
        if self.radius <= 0:
            raise GeometryError("segment radius must be positive")
        if np.allclose(self.endpoint_a, self.endpoint_b):
            raise GeometryError("segment endpoints must be distinct")

    @property
    def axis(self) -> np.ndarray:
        return self.endpoint_b - self.endpoint_a

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.axis))


@dataclass(frozen=True)
class FretboardGeometry:
    """Derived fret-wire positions, string segments and press points.

    ``press_points[i][k]`` (1-indexed via helpers) is the intersection of
    string i with the middle line of fret region k.
    """

    spec: GuitarSpec
    fret_wire_distance: np.ndarray  # [num_frets+1], meters from nut, index 0 = nut
    fret_mid_distance: np.ndarray   # [num_frets+1], index 0 unused (nan)
    string_nut: np.ndarray          # [num_strings, 3]
    string_bridge: np.ndarray       # [num_strings, 3]
    _press: np.ndarray = field(repr=False, default=None)  # [num_strings, num_frets+1, 3]

    @property
    def num_strings(self) -> int:
        return self.spec.num_strings

    @property
    def num_frets(self) -> int:
        return self.spec.num_frets

    def string_segment(self, string: int) -> tuple[np.ndarray, np.ndarray]:
        """Endpoints of string ``string`` (1-indexed), nut to bridge."""
        i = _string_index(string, self.num_strings)
        return self.string_nut[i], self.string_bridge[i]

    def string_point_at(self, string: int, x: float) -> np.ndarray:
        """Point on string at axial distance x from the nut."""
        a, b = self.string_segment(string)
        t = np.clip(x / self.spec.scale_length, 0.0, 1.0)
        return a + t * (b - a)

    def press_point(self, string: int, fret: int) -> np.ndarray:
        """p_{i,k}: string/fret-middle intersection (both 1-indexed)."""
        if not 1 <= fret <= self.num_frets:
            raise GeometryError(f"fret {fret} out of range 1..{self.num_frets}")
        i = _string_index(string, self.num_strings)
        return self._press[i, fret]

    def fret_width(self, fret: int) -> float:
        return float(self.fret_wire_distance[fret] - self.fret_wire_distance[fret - 1])

    def fret_at(self, x: float) -> int | None:
        """Fret region containing axial coordinate x, or None if outside."""
        if x < 0 or x > self.fret_wire_distance[self.num_frets]:
            return None
        k = int(np.searchsorted(self.fret_wire_distance, x, side="left"))
        return max(k, 1) if k <= self.num_frets else None

    def string_distance(self, string: int, seg: CylinderSegment) -> tuple[float, float]:
        """Axis-to-axis distance from a segment to a string.

        Returns (distance, axial x of the closest point on the string).
        """
        a, b = self.string_segment(string)
        string_seg = CylinderSegment(a, b, 1e-6)
        d, p_seg, p_str = segment_to_segment_closest(seg, string_seg)
        return d, float(p_str[0] - a[0]) / max(1e-12, (b[0] - a[0])) * self.spec.scale_length


def _string_index(string: int, num_strings: int) -> int:
    if not 1 <= string <= num_strings:
        raise GeometryError(f"string {string} out of range 1..{num_strings}")
    return string - 1


def build_geometry(spec: GuitarSpec) -> FretboardGeometry:
    """Build the fretboard layout from a spec.

    Fret wires follow the equal-temperament rule L*(1 - 2^(-k/12)); the
    middle line of fret k is the axial midpoint of wires k-1 and k.
    """
    n, L = spec.num_frets, spec.scale_length
    ks = np.arange(0, n + 1)
    wires = L * (1.0 - 2.0 ** (-ks / 12.0))
    mids = np.full(n + 1, np.nan)
    mids[1:] = 0.5 * (wires[:-1] + wires[1:])

    s = spec.num_strings
    side = -1.0 if spec.mirrored else 1.0
    offsets = (s - 1) / 2.0 - np.arange(s)  # string 1 on top (+y)
    y_nut = side * offsets * spec.string_spacing_nut
    y_bridge = side * offsets * spec.string_spacing_bridge
    z = spec.string_action_height
    nut = np.stack([np.zeros(s), y_nut, np.full(s, z)], axis=1)
    bridge = np.stack([np.full(s, L), y_bridge, np.full(s, z)], axis=1)

    press = np.zeros((s, n + 1, 3))
    for k in range(1, n + 1):
        t = mids[k] / L
        press[:, k, :] = nut + t * (bridge - nut)

    return FretboardGeometry(
        spec=spec,
        fret_wire_distance=wires,
        fret_mid_distance=mids,
        string_nut=nut,
        string_bridge=bridge,
        _press=press,
    )


def point_to_segment_distance(p, seg: CylinderSegment) -> tuple[float, np.ndarray]:
    """Distance from point p to the axis segment, plus the closest point."""
    p = np.asarray(p, float)
    a, b = seg.endpoint_a, seg.endpoint_b
    ab = b - a
    t = float(np.dot(p - a, ab) / np.dot(ab, ab))
    t = min(1.0, max(0.0, t))
    closest = a + t * ab
    return float(np.linalg.norm(p - closest)), closest


def segment_to_segment_closest(
    a: CylinderSegment, b: CylinderSegment
) -> tuple[float, np.ndarray, np.ndarray]:
    """Minimal axis-to-axis distance between two segments plus witness points.

    Standard clamped closest-point computation (Ericson, Real-Time Collision
    Detection, 5.1.9).
    """
    p1, q1 = a.endpoint_a, a.endpoint_b
    p2, q2 = b.endpoint_a, b.endpoint_b
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    aa = float(np.dot(d1, d1))
    ee = float(np.dot(d2, d2))
    ff = float(np.dot(d2, r))
    cc = float(np.dot(d1, r))
    bb = float(np.dot(d1, d2))
    denom = aa * ee - bb * bb
    if denom > 1e-14 * aa * ee:
        s = np.clip((bb * ff - cc * ee) / denom, 0.0, 1.0)
    else:
        s = 0.0  # parallel: fix s and clamp t
    t = (bb * s + ff) / ee
    if t < 0.0:
        t = 0.0
        s = np.clip(-cc / aa, 0.0, 1.0)
    elif t > 1.0:
        t = 1.0
        s = np.clip((bb - cc) / aa, 0.0, 1.0)
    c1 = p1 + s * d1
    c2 = p2 + t * d2
    return float(np.linalg.norm(c1 - c2)), c1, c2


def segment_to_segment_distance(a: CylinderSegment, b: CylinderSegment) -> float:
    """Minimal Euclidean distance between two axis segments."""
    return segment_to_segment_closest(a, b)[0]
