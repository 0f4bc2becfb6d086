"""Surface groups, their representations into the isometry group, and
fundamental-domain machinery.

Words are tuples of generator tokens; the inverse of a token is its
first character case-swapped ("a" <-> "A", "b1" <-> "B1").  Punctured
surfaces have free fundamental groups, so a representation is just a
generator -> Mobius assignment; the peripheral words carry the boundary
bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import (
    BadFNData,
    BadTopology,
    DepthTooSmall,
    ReductionFailed,
    SurfaceMismatch,
    UnknownGenerator,
)
from .hyperbolic import Mobius, classify, dist

__all__ = [
    "SurfacePresentation",
    "Representation",
    "FNData",
    "FundamentalDomain",
    "build_surface",
    "evaluate",
    "word_inverse",
    "reduce_word",
    "fuchsian_from_fn",
    "discreteness_smoke_test",
    "word_ball",
    "ball_images",
    "conjugacy_classes",
    "dirichlet_domain",
    "reduce_to_domain",
    "peripheral_report",
    "thurston_estimate",
]


# ---------------------------------------------------------------------------
# words


def token_inverse(t: str) -> str:
    return t[0].swapcase() + t[1:]


def word_inverse(word: tuple) -> tuple:
    return tuple(token_inverse(t) for t in reversed(word))


def reduce_word(word: Iterable[str]) -> tuple:
    """Free reduction (cancel adjacent inverse pairs, left-greedy)."""
    out: list[str] = []
    for t in word:
        if out and out[-1] == token_inverse(t):
            out.pop()
        else:
            out.append(t)
    return tuple(out)


def _commutator(a: str, b: str) -> tuple:
    return (a, b, token_inverse(a), token_inverse(b))


# ---------------------------------------------------------------------------
# presentations


@dataclass(frozen=True)
class SurfacePresentation:
    """Presentation data of a punctured surface group (always free here)."""

    genus: int
    punctures: int
    generators: tuple
    peripheral_words: tuple

    @property
    def euler(self) -> int:
        return 2 - 2 * self.genus - self.punctures

    def check_word(self, word: Iterable[str]) -> tuple:
        word = tuple(word)
        valid = set(self.generators) | {token_inverse(g) for g in self.generators}
        for t in word:
            if t not in valid:
                raise UnknownGenerator(f"token {t!r} not in generators {self.generators}")
        return word


def build_surface(g: int, n: int) -> SurfacePresentation:
    """Standard presentation of the genus-g surface with n punctures.

    The group is free; the peripheral words are the puncture loops:
    for n = 1 the product of handle commutators, otherwise the extra
    generators c_1 .. c_{n-1} plus the word closing up the relator.
    """
    if n < 1 or 2 - 2 * g - n >= 0:
        raise BadTopology(f"need negative Euler characteristic with n >= 1, got (g, n) = ({g}, {n})")
    if g == 1 and n == 1:
        return SurfacePresentation(1, 1, ("a", "b"), (_commutator("a", "b"),))
    handles: list[str] = []
    comm: list[str] = []
    for i in range(1, g + 1):
        ai, bi = (f"a{i}", f"b{i}") if g > 1 else ("a", "b")
        handles += [ai, bi]
        comm += list(_commutator(ai, bi))
    cs = [f"c{i}" for i in range(1, n)]
    if n == 1:
        return SurfacePresentation(g, 1, tuple(handles), (tuple(comm),))
    last = word_inverse(tuple(comm) + tuple(cs))
    peripherals = tuple((c,) for c in cs) + (last,)
    return SurfacePresentation(g, n, tuple(handles + cs), peripherals)


# ---------------------------------------------------------------------------
# representations


@dataclass(frozen=True)
class Representation:
    """Generator -> Mobius assignment with peripheral bookkeeping."""

    surface: SurfacePresentation
    images: dict = field(compare=False)

    def __post_init__(self):
        missing = [g for g in self.surface.generators if g not in self.images]
        if missing:
            raise UnknownGenerator(f"missing images for generators {missing}")

    def __call__(self, word: Iterable[str]) -> Mobius:
        return evaluate(self, word)

    @property
    def boundary_classes(self) -> list:
        return [classify(evaluate(self, w)) for w in self.surface.peripheral_words]

    def peripheral_image(self, i: int = 0) -> Mobius:
        return evaluate(self, self.surface.peripheral_words[i])

    def conjugated(self, S: Mobius) -> "Representation":
        return Representation(
            self.surface,
            {g: S @ T @ S.inv() for g, T in self.images.items()},
        )


def evaluate(rep: Representation, word: Iterable[str]) -> Mobius:
    """Image of a word under the representation (empty word -> identity)."""
    word = rep.surface.check_word(word)
    out = np.eye(2)
    for t in word:
        g = t[0].lower() + t[1:]
        T = rep.images[g]
        out = out @ (T.m if t[0].islower() else T.inv().m)
    return Mobius(out, unit_det=True)


def trivial_representation(surface: SurfacePresentation) -> Representation:
    return Representation(surface, {g: Mobius.identity() for g in surface.generators})


# ---------------------------------------------------------------------------
# Fenchel-Nielsen charts


@dataclass(frozen=True)
class FNData:
    """Fenchel-Nielsen data: interior curve lengths/twists plus one
    boundary entry per puncture (0.0 means a cusp, l > 0 a boundary
    geodesic of that length)."""

    lengths: tuple = ()
    twists: tuple = ()
    boundary: tuple = (0.0,)


def _punctured_torus_rep(L: float, t: float, ell_b: float) -> dict:
    # symmetric solution of the trace relation (the two transversal
    # curves share a length); twisting shears along the a-axis
    lam = np.exp(L / 2.0)
    x = 2.0 * np.cosh(L / 2.0)
    ch = np.cosh(ell_b / 2.0)
    y = np.sqrt((x * x - 2.0 + 2.0 * ch) / (x - 2.0))
    p = y / (1.0 + lam)
    s = lam * y / (1.0 + lam)
    q = np.sqrt(p * s - 1.0)
    A = Mobius(np.array([[lam, 0.0], [0.0, 1.0 / lam]]))
    B0 = Mobius(np.array([[p, q], [q, s]]))
    tw = Mobius(np.array([[np.exp(t / 4.0), 0.0], [0.0, np.exp(-t / 4.0)]]))
    return {"a": A, "b": tw @ B0 @ tw}


def _pants_rep(l1: float, l2: float, l3: float) -> dict:
    x = -2.0 * np.cosh(l1 / 2.0)
    y = -2.0 * np.cosh(l2 / 2.0)
    z = -2.0 * np.cosh(l3 / 2.0)
    zeta = (z - np.sqrt(z * z - 4.0)) / 2.0 if z * z > 4.0 else -1.0
    C1 = Mobius(np.array([[x, -1.0], [1.0, 0.0]]))
    C2 = Mobius(np.array([[0.0, zeta], [-1.0 / zeta, y]]))
    return {"c1": C1, "c2": C2}


def fuchsian_from_fn(surface: SurfacePresentation, fn: FNData,
                     check: bool = True) -> Representation:
    """Discrete faithful representation from Fenchel-Nielsen data.

    Implemented charts: the once-punctured torus (one length, one twist,
    one boundary entry) and the thrice-punctured sphere (no interior
    coordinates, three boundary entries).  Peripheral classes realize
    the requested boundary data exactly: length-0 entries become
    parabolic punctures, positive entries boundary geodesics.
    """
    if len(fn.boundary) != surface.punctures:
        raise BadFNData(
            f"need {surface.punctures} boundary entries, got {len(fn.boundary)}")
    if any(b < 0 for b in fn.boundary):
        raise BadFNData("boundary lengths must be nonnegative (0 = cusp)")
    if any(L <= 0 for L in fn.lengths):
        raise BadFNData("interior curve lengths must be positive")

    if (surface.genus, surface.punctures) == (1, 1):
        if len(fn.lengths) != 1 or len(fn.twists) != 1:
            raise BadFNData("once-punctured torus chart is (length, twist)")
        images = _punctured_torus_rep(fn.lengths[0], fn.twists[0], fn.boundary[0])
    elif (surface.genus, surface.punctures) == (0, 3):
        if fn.lengths or fn.twists:
            raise BadFNData("thrice-punctured sphere has no interior coordinates")
        images = _pants_rep(*fn.boundary)
    else:
        raise BadFNData(
            f"no Fenchel-Nielsen chart implemented for (g, n) = "
            f"({surface.genus}, {surface.punctures})")

    rep = Representation(surface, images)
    for i, target in enumerate(fn.boundary):
        cls = classify(rep.peripheral_image(i))
        got = cls.length
        if abs(got - target) > 1e-8 or (target == 0.0 and cls.kind == "Hyperbolic"):
            raise BadFNData(
                f"peripheral {i}: requested length {target}, realized {got}")
    if check:
        discreteness_smoke_test(rep, radius=6)
    return rep


# ---------------------------------------------------------------------------
# word enumeration


def word_ball(surface: SurfacePresentation, radius: int) -> list:
    """All nonempty freely reduced words of length <= radius."""
    letters = list(surface.generators) + [token_inverse(g) for g in surface.generators]
    out: list[tuple] = []
    frontier: list[tuple] = [()]
    for _ in range(radius):
        nxt = []
        for w in frontier:
            for t in letters:
                if w and w[-1] == token_inverse(t):
                    continue
                nxt.append(w + (t,))
        out += nxt
        frontier = nxt
    return out


def ball_images(rep: Representation, radius: int) -> dict:
    """word -> Mobius over the whole reduced ball, by prefix extension."""
    letters = {}
    for g in rep.surface.generators:
        letters[g] = rep.images[g].m
        letters[token_inverse(g)] = rep.images[g].inv().m
    raw: dict[tuple, np.ndarray] = {(): np.eye(2)}
    frontier: list[tuple] = [()]
    for _ in range(radius):
        nxt = []
        for w in frontier:
            base = raw[w]
            for t, m in letters.items():
                if w and w[-1] == token_inverse(t):
                    continue
                raw[w + (t,)] = base @ m
                nxt.append(w + (t,))
        frontier = nxt
    raw.pop(())
    return {w: Mobius(m, unit_det=True) for w, m in raw.items()}


def _cyclic_canonical(word: tuple) -> tuple:
    """Canonical representative under rotation and inversion."""
    candidates = []
    for w in (word, word_inverse(word)):
        for k in range(len(w)):
            candidates.append(w[k:] + w[:k])
    return min(candidates)


def conjugacy_classes(surface: SurfacePresentation, radius: int) -> list:
    """Cyclically reduced words up to length radius, one per class
    (modulo rotation and inversion)."""
    seen = set()
    out = []
    for w in word_ball(surface, radius):
        if len(w) > 1 and w[0] == token_inverse(w[-1]):
            continue  # not cyclically reduced
        c = _cyclic_canonical(w)
        if c not in seen:
            seen.add(c)
            out.append(c)
    return out


def _peripheral_power_forms(surface: SurfacePresentation, radius: int) -> set:
    forms = set()
    for wper in surface.peripheral_words:
        k = 1
        while k * len(wper) <= max(radius, len(wper)):
            forms.add(_cyclic_canonical(reduce_word(wper * k)))
            k += 1
    return forms


def discreteness_smoke_test(rep: Representation, radius: int = 6,
                            collar: float = 1e-3) -> None:
    """Raise if any short non-peripheral class is non-hyperbolic or has
    translation length below the collar bound.  A necessary condition
    for discreteness + faithfulness, cheap enough to run at build time.
    """
    peripheral = _peripheral_power_forms(rep.surface, radius)
    images = ball_images(rep, radius)
    for w in conjugacy_classes(rep.surface, radius):
        if w in peripheral:
            continue
        cls = classify(images[w])
        if cls.kind != "Hyperbolic" or cls.length <= collar:
            raise BadFNData(
                f"representation fails discreteness smoke test: "
                f"word {''.join(w)} is {cls.kind} with length {cls.length:.2e}")


# ---------------------------------------------------------------------------
# Dirichlet domains


@dataclass
class DomainSide:
    """One geodesic side of a Dirichlet polygon, as an arc of the
    bisector circle of (basepoint, word . basepoint) in the disk model
    centered at the basepoint.  Increasing circle angle runs clockwise
    as seen from the polygon, so along the usual counterclockwise
    traversal a side is entered at `end` and exited at `start`."""

    word: tuple
    center: complex  # Euclidean center of the bisector circle, disk model
    radius: float
    arc: tuple  # (phi_start, phi_end), increasing angles on the circle
    start: complex = 0j
    end: complex = 0j


@dataclass
class FundamentalDomain:
    """Dirichlet polygon: ordered sides, vertex list, pairings, area."""

    basepoint: complex
    sides: list
    vertices: list  # (disk point, is_ideal), vertex i joins side i to i+1
    side_pairings: list  # (i_from, i_to, word) with word . side_i = side_j
    area: float
    free_arcs: int  # count of limit-set gaps on the circle at infinity
    depth: int

    def to_halfplane(self, w: complex) -> complex:
        p = self.basepoint
        return (p - np.conj(p) * w) / (1.0 - w)

    def to_disk(self, z: complex) -> complex:
        p = self.basepoint
        return (z - p) / (z - np.conj(p))


def _interval_subtract(segments, lo, hi):
    """Remove the open interval (lo, hi) from each closed segment."""
    out = []
    for a, b in segments:
        if hi <= a or lo >= b:
            out.append((a, b))
            continue
        if lo > a:
            out.append((a, lo))
        if hi < b:
            out.append((hi, b))
    return out


def _active_arcs(k, centers, radii):
    """Angular segments of circle k outside all other circles and inside
    the unit disk.  Vectorized over the other circles."""
    c, r = centers[k], radii[k]
    psi = np.angle(c)
    delta = np.arccos(np.clip(-r / abs(c), -1.0, 1.0))
    segments = [(psi + delta, psi + 2.0 * np.pi - delta)]
    d = c - centers
    absd = np.abs(d)
    with np.errstate(divide="ignore", invalid="ignore"):
        hn = (radii ** 2 - r ** 2 - absd ** 2) / (2.0 * r * absd)
    hn[k] = -2.0
    hn[absd < 1e-14] = -2.0
    if np.any(hn >= 1.0):
        return []  # circle k entirely inside some other disk
    for j in np.flatnonzero(hn > -1.0):
        alpha = float(np.arccos(hn[j]))
        theta = float(np.angle(d[j]))
        lo, hi = theta + alpha, theta + 2.0 * np.pi - alpha
        for shift in (-2.0 * np.pi, 0.0, 2.0 * np.pi):
            segments = _interval_subtract(segments, lo + shift, hi + shift)
        if not segments:
            return []
    # tangency noise: bisectors of parabolic powers graze the polygon at
    # the ideal vertex and leave ~1e-8 rad slivers; genuine sides are
    # orders of magnitude wider
    return [(a, b) for a, b in segments if b - a > 1e-6]


def _domain_sides(rep, basepoint, depth):
    p = complex(basepoint)
    images = ball_images(rep, depth)
    # one entry per group element: shortest (then lexicographically
    # smallest) word wins, and inverse elements get inverse words
    by_key: dict = {}
    for w in sorted(images, key=lambda w: (len(w), w)):
        key = images[w].key(10)
        if key not in by_key:
            by_key[key] = [w, images[w]]
    seen = set()
    for key in list(by_key):
        if key in seen:
            continue
        w, T = by_key[key]
        ik = T.inv().key(10)
        if ik in by_key and ik != key:
            by_key[ik][0] = word_inverse(w)
            seen.add(ik)
        seen.add(key)
    labels, us = [], []
    for w, T in by_key.values():
        q = T(p)
        u = (q - p) / (q - np.conj(p))
        if abs(u) < 1e-12:
            continue  # fixes the basepoint
        labels.append(tuple(w))
        us.append(u)
    us = np.asarray(us)
    centers = us / np.abs(us) ** 2
    radii = np.sqrt(np.clip(np.abs(centers) ** 2 - 1.0, 0.0, None))
    sides = []
    for k in range(len(centers)):
        for a, b in _active_arcs(k, centers, radii):
            s = DomainSide(word=labels[k], center=complex(centers[k]),
                           radius=float(radii[k]), arc=(a, b))
            s.start = s.center + s.radius * np.exp(1j * a)
            s.end = s.center + s.radius * np.exp(1j * b)
            sides.append(s)
    return sides


def dirichlet_domain(rep: Representation, basepoint: complex = 0.5 + 1.2j,
                     depth: int = 6) -> FundamentalDomain:
    """Dirichlet fundamental polygon over a word ball of radius depth.

    Assembled in the disk model centered at the basepoint.  The side set
    must be stable against growing the ball by one (else DepthTooSmall);
    stability is the practical "closed up" certificate.  Quotients with
    funnels legitimately expose free boundary arcs; their area is
    infinite and reported as inf.
    """
    sides = _domain_sides(rep, basepoint, depth)
    sides_next = _domain_sides(rep, basepoint, depth + 1)
    words0 = sorted(s.word for s in sides)
    words1 = sorted(s.word for s in sides_next)
    if words0 != words1:
        raise DepthTooSmall(
            f"polygon not stable at depth {depth}: {len(words0)} sides "
            f"-> {len(words1)} at depth {depth + 1}")
    return _assemble_domain(basepoint, sides, depth)


def _assemble_domain(basepoint, sides, depth):
    p = complex(basepoint)
    if not sides:
        raise DepthTooSmall("no bisectors found (trivial image?)")
    # counterclockwise order around the basepoint; Dirichlet polygons
    # are convex, hence star-shaped from the origin of the disk model
    sides.sort(key=lambda s: np.angle(s.center + s.radius * np.exp(1j * np.mean(s.arc))))
    n = len(sides)
    free_arcs = 0
    vertices = []
    angle_sum = 0.0
    for i, s in enumerate(sides):
        t = sides[(i + 1) % n]
        v1, v2 = s.start, t.end  # exit of side i, entry of side i+1
        gap = abs(v1 - v2)
        on_circle = abs(abs(v1) - 1.0) < 1e-7 and abs(abs(v2) - 1.0) < 1e-7
        if gap < 1e-7:
            v = (v1 + v2) / 2.0
            vertices.append((v, bool(on_circle)))
            if not on_circle:
                # interior angle between the circular arcs; the disk
                # model is conformal, so the Euclidean angle is the
                # hyperbolic one
                turn = np.angle((v - t.center) / (v - s.center))
                angle_sum += np.pi - turn
        elif on_circle:
            free_arcs += 1
            vertices.append((v1, True))
        else:
            raise DepthTooSmall(
                f"polygon gap of size {gap:.2e} away from the circle at infinity")
    area = np.inf if free_arcs else (n - 2) * np.pi - angle_sum
    pairings = []
    index_by_word: dict = {}
    for i, s in enumerate(sides):
        index_by_word.setdefault(s.word, []).append(i)
    for i, s in enumerate(sides):
        winv = word_inverse(s.word)
        if winv not in index_by_word:
            raise DepthTooSmall(f"side {''.join(s.word)} has no partner side")
        pairings.append((i, index_by_word[winv][0], winv))
    return FundamentalDomain(
        basepoint=p, sides=sides, vertices=vertices, side_pairings=pairings,
        area=float(area), free_arcs=free_arcs, depth=depth)


def reduce_to_domain(rep: Representation, domain: FundamentalDomain,
                     z: complex, cap: int = 10000):
    """Greedy nearest-translate descent into the Dirichlet polygon.

    Returns (z0, word) with evaluate(word)(z0) = z and z0 in the closed
    polygon (up to tolerance).
    """
    p = domain.basepoint
    moves = [(word_inverse(s.word), rep(word_inverse(s.word))) for s in domain.sides]
    zc = complex(z)
    applied: list[str] = []
    for _ in range(cap):
        best = None
        best_d = dist(zc, p) - 1e-13
        for w, T in moves:
            d = dist(T(zc), p)
            if d < best_d:
                best_d = d
                best = (w, T)
        if best is None:
            return zc, word_inverse(reduce_word(applied))
        zc = best[1](zc)
        applied = list(best[0]) + applied
    raise ReductionFailed(f"no convergence after {cap} reduction steps")


# ---------------------------------------------------------------------------
# reports


def peripheral_report(rho1: Representation, rho2: Representation) -> dict:
    """Per-puncture length/kind comparison; match means within 1e-6."""
    if rho1.surface != rho2.surface:
        raise SurfaceMismatch("representations live on different surfaces")
    rows = []
    all_match = True
    for i in range(rho1.surface.punctures):
        c1 = classify(rho1.peripheral_image(i))
        c2 = classify(rho2.peripheral_image(i))
        ok = abs(c1.length - c2.length) <= 1e-6
        all_match = all_match and ok
        rows.append({
            "puncture": i,
            "l1": c1.length, "l2": c2.length,
            "kind1": c1.kind, "kind2": c2.kind,
            "match": ok,
        })
    return {"punctures": rows, "match": all_match}


def thurston_estimate(rho1: Representation, rho2: Representation,
                      word_radius: int = 6) -> dict:
    """Lower bound for the asymmetric length-ratio metric.

    Takes the sup over non-peripheral conjugacy classes in the word ball
    of l(rho2(w)) / l(rho1(w)); both critical exponents are fixed to 1,
    so log of the ratio is reported as the distance lower bound.
    """
    if rho1.surface != rho2.surface:
        raise SurfaceMismatch("representations live on different surfaces")
    surface = rho1.surface
    peripheral = _peripheral_power_forms(surface, word_radius)
    img1 = ball_images(rho1, word_radius)
    img2 = ball_images(rho2, word_radius)
    ratio_sup = 0.0
    arg: tuple = ()
    checked = 0
    for w in conjugacy_classes(surface, word_radius):
        if w in peripheral:
            continue
        l1 = classify(img1[w]).length
        if l1 <= 1e-12:
            continue  # unusable class; rho1 is expected Fuchsian
        checked += 1
        l2 = classify(img2[w]).length
        if l2 / l1 > ratio_sup:
            ratio_sup = l2 / l1
            arg = w
    return {
        "ratio_sup": ratio_sup,
        "dTh_lower": float(np.log(ratio_sup)) if ratio_sup > 0 else -np.inf,
        "argmax_word": "".join(arg),
        "classes_checked": checked,
        "word_radius": word_radius,
        "note": "lower bound; critical exponents fixed to 1",
    }
