"""Upper half-plane geometry and the real Moebius group.

Points of the hyperbolic plane are complex numbers with positive
imaginary part (the metric is |dz|^2 / Im(z)^2, curvature -1).
Isometries are unit-determinant real 2x2 matrices modulo sign; the
:class:`Mobius` wrapper keeps a canonical representative so equality,
hashing and serialization are well defined.

Everything here is pure and immutable; functions accept either scalar
complex points or numpy arrays of them where that is useful.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, NotHyperbolic

__all__ = [
    "Mobius",
    "IsometryClass",
    "GeodesicLine",
    "classify",
    "translation_length",
    "axis",
    "axis_chart",
    "dist",
    "geodesic_eval",
    "transvection_to",
    "valid_point",
]

# Classification band for |trace| - 2: representation data at desk scale
# is constructed, not measured, so a tight band is safe.
PARABOLIC_TOL = 1e-9
_DET_TOL = 1e-12


def valid_point(z: complex) -> bool:
    """True when z lies strictly in the upper half-plane and is finite."""
    return bool(np.isfinite(z.real) and np.isfinite(z.imag) and z.imag > 0.0)


class Mobius:
    """A unit-determinant real 2x2 matrix modulo sign.

    The stored representative is normalized so det = 1 and the first
    entry of (a, b, c, d) that is nonzero (beyond roundoff) is positive.
    """

    __slots__ = ("m",)

    def __init__(self, m, unit_det: bool = False) -> None:
        """unit_det=True skips determinant renormalization; meant for
        compositions of already-normalized matrices, whose raw float
        determinant drifts by ~eps * |entries|^2 and cannot (and need
        not) be recomputed once entries are large."""
        m = np.asarray(m, dtype=float)
        if m.shape != (2, 2):
            raise ValueError("Mobius expects a 2x2 real matrix")
        if not np.all(np.isfinite(m)):
            raise ValueError("matrix entries must be finite")
        if not unit_det:
            det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
            if not np.isfinite(det) or det <= 0.0:
                raise ValueError(f"matrix must have positive determinant, got {det!r}")
            m = m / np.sqrt(det)
        scale = np.abs(m).max()
        for entry in (m[0, 0], m[0, 1], m[1, 0], m[1, 1]):
            if abs(entry) > 1e-14 * scale:
                if entry < 0.0:
                    m = -m
                break
        m.flags.writeable = False
        self.m = m

    # -- algebra ------------------------------------------------------------

    @staticmethod
    def identity() -> "Mobius":
        return Mobius(np.eye(2))

    @staticmethod
    def from_list(entries) -> "Mobius":
        a, b, c, d = entries
        return Mobius(np.array([[a, b], [c, d]], dtype=float))

    def to_list(self) -> list[float]:
        """Serialized form [a, b, c, d] of the normalized representative."""
        return [float(self.m[0, 0]), float(self.m[0, 1]),
                float(self.m[1, 0]), float(self.m[1, 1])]

    def __matmul__(self, other: "Mobius") -> "Mobius":
        return Mobius(self.m @ other.m, unit_det=True)

    def inv(self) -> "Mobius":
        a, b, c, d = self.m.ravel()
        return Mobius(np.array([[d, -b], [-c, a]]), unit_det=True)

    @property
    def trace(self) -> float:
        return float(self.m[0, 0] + self.m[1, 1])

    def det_defect(self) -> float:
        a, b, c, d = self.m.ravel()
        return abs(a * d - b * c - 1.0)

    # -- action on the upper half-plane --------------------------------------

    def __call__(self, z):
        """Apply to a point (or numpy array of points) of the plane.

        z may also be a real number or +-inf, interpreted as an ideal
        point; the image is then real (or inf).
        """
        a, b, c, d = self.m.ravel()
        if isinstance(z, (float, int)) and not isinstance(z, bool):
            return self._apply_ideal(float(z))
        return (a * z + b) / (c * z + d)

    def _apply_ideal(self, x: float) -> float:
        a, b, c, d = self.m.ravel()
        if np.isinf(x):
            return a / c if c != 0.0 else np.inf
        den = c * x + d
        if den == 0.0:
            return np.inf
        return (a * x + b) / den

    def cderiv(self, z):
        """Complex derivative 1/(cz+d)^2 at z (conformal scale factor)."""
        a, b, c, d = self.m.ravel()
        return 1.0 / (c * z + d) ** 2

    # -- canonical-form comparisons ------------------------------------------

    def key(self, digits: int = 9) -> tuple:
        """Rounded entry tuple of the canonical representative (hash key)."""
        return tuple(round(v, digits) for v in self.to_list())

    def __eq__(self, other) -> bool:
        return isinstance(other, Mobius) and np.allclose(self.m, other.m, atol=1e-12)

    def __hash__(self) -> int:
        return hash(self.key())

    def __repr__(self) -> str:
        a, b, c, d = self.to_list()
        return f"Mobius([[{a:.6g}, {b:.6g}], [{c:.6g}, {d:.6g}]])"


@dataclass(frozen=True)
class IsometryClass:
    """Conjugacy-type of an isometry: kind plus translation length."""

    kind: str  # "Identity" | "Elliptic" | "Parabolic" | "Hyperbolic"
    length: float = 0.0

    def __post_init__(self):
        if self.kind not in ("Identity", "Elliptic", "Parabolic", "Hyperbolic"):
            raise ValueError(f"unknown isometry kind {self.kind!r}")


@dataclass(frozen=True)
class GeodesicLine:
    """Complete geodesic named by two distinct ideal endpoints.

    For an axis the order is (repelling, attracting) fixed point.
    Either endpoint may be +-inf.
    """

    endpoints: tuple = field(default=(0.0, np.inf))

    def __post_init__(self):
        u, v = self.endpoints
        if u == v:
            raise DegenerateInput("geodesic endpoints must be distinct")


def classify(T: Mobius) -> IsometryClass:
    """Classify by |trace|: < 2 elliptic, = 2 parabolic, > 2 hyperbolic.

    The parabolic band is |trace| - 2 within 1e-9; the identity is
    recognized first by matrix proximity.
    """
    if np.allclose(T.m, np.eye(2), atol=1e-12):
        return IsometryClass("Identity", 0.0)
    t = abs(T.trace)
    if abs(t - 2.0) <= PARABOLIC_TOL:
        return IsometryClass("Parabolic", 0.0)
    if t < 2.0:
        return IsometryClass("Elliptic", 0.0)
    return IsometryClass("Hyperbolic", 2.0 * float(np.arccosh(t / 2.0)))


def translation_length(T: Mobius) -> float:
    """inf over the plane of d(Tz, z); zero unless T is hyperbolic."""
    return classify(T).length


def _fixed_points_on_boundary(T: Mobius) -> tuple[float, float]:
    """Both ideal fixed points of a hyperbolic element (unordered)."""
    a, b, c, d = T.m.ravel()
    if c == 0.0:
        # fixes infinity; second fixed point solves (a-d) x + b = 0
        if a == d:  # identity-like, caller guards
            raise NotHyperbolic("no axis: element fixes no pair of ideal points")
        return (b / (d - a), np.inf)
    disc = (a + d) ** 2 - 4.0
    if disc <= 0.0:
        raise NotHyperbolic("no real fixed points")
    root = np.sqrt(disc)
    return ((a - d - root) / (2.0 * c), (a - d + root) / (2.0 * c))


def axis(T: Mobius) -> GeodesicLine:
    """Oriented invariant geodesic of a hyperbolic element.

    Endpoints come back ordered (repelling, attracting): the attracting
    fixed point is the one where the derivative has modulus < 1.
    """
    cls = classify(T)
    if cls.kind != "Hyperbolic":
        raise NotHyperbolic(f"axis undefined for {cls.kind} element")
    u, v = _fixed_points_on_boundary(T)
    a, b, c, d = T.m.ravel()

    def attracting(x: float) -> bool:
        if np.isinf(x):
            # derivative at infinity in the chart w = -1/z is (cz+d)^2 -> a^2
            return abs(a) > 1.0
        return abs(c * x + d) > 1.0

    if attracting(u) and not attracting(v):
        u, v = v, u
    elif attracting(u) == attracting(v):  # pragma: no cover - numerical tie
        raise NotHyperbolic("could not orient axis (borderline element)")
    return GeodesicLine((u, v))


def axis_chart(T: Mobius) -> Mobius:
    """Moebius M with M^-1 T M = diag(exp(l/2), exp(-l/2)).

    M carries the imaginary axis to the axis of T, sending 0 to the
    repelling and infinity to the attracting endpoint, so that
    M(i e^s) moves in T's translation direction as s grows.
    """
    line = axis(T)
    u_rep, u_att = line.endpoints
    if np.isinf(u_att):
        M = Mobius(np.array([[1.0, u_rep], [0.0, 1.0]]))
    elif np.isinf(u_rep):
        M = Mobius(np.array([[u_att, -1.0], [1.0, 0.0]]))
    else:
        if u_att > u_rep:
            s = 1.0 / np.sqrt(u_att - u_rep)
            M = Mobius(np.array([[u_att * s, u_rep * s], [s, s]]))
        else:
            s = 1.0 / np.sqrt(u_rep - u_att)
            M = Mobius(np.array([[-u_att * s, u_rep * s], [-s, s]]))
    return M


def dist(z, w):
    """Hyperbolic distance; accepts scalars or numpy arrays.

    arccosh formula with the argument clamped to >= 1 to absorb
    roundoff for nearly equal points.
    """
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    arg = 1.0 + np.abs(z - w) ** 2 / (2.0 * z.imag * w.imag)
    out = np.arccosh(np.maximum(arg, 1.0))
    if out.ndim == 0:
        return float(out)
    return out


def transvection_to(p: complex) -> Mobius:
    """The upper-triangular element taking i to p."""
    if not valid_point(p):
        raise DegenerateInput(f"not an interior point: {p!r}")
    sy = np.sqrt(p.imag)
    return Mobius(np.array([[sy, p.real / sy], [0.0, 1.0 / sy]]))


def _rotation_about_i(phi: float) -> Mobius:
    c, s = np.cos(phi), np.sin(phi)
    return Mobius(np.array([[c, s], [-s, c]]))


def geodesic_chart(p: complex, q: complex) -> Mobius:
    """Moebius M with M(i) = p and M(i e^d) = q, d = dist(p, q).

    M carries the upward imaginary axis onto the oriented geodesic from
    p toward q at unit speed: t -> M(i e^t).
    """
    if p == q:
        raise DegenerateInput("geodesic through a single point")
    Tp = transvection_to(p)
    q1 = Tp.inv()(q)
    # rotate about i so q1 lands on the imaginary axis above i
    wq = (q1 - 1j) / (q1 + 1j)  # disk coordinate centered at i
    phi = 0.5 * np.angle(wq)
    # disk rotation by -2*phi corresponds to the half-plane rotation below
    R = _rotation_about_i(phi)
    M = Tp @ R
    return M


def geodesic_eval(p: complex, q: complex, t: float) -> complex:
    """Point at arclength t along the unit-speed geodesic from p toward q."""
    M = geodesic_chart(p, q)
    return M(1j * np.exp(t))
