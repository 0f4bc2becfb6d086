"""Equivariant piecewise-linear harmonic maps into the hyperbolic plane.

A discrete map assigns one image point in the upper half-plane to every
vertex orbit of a truncated mesh; corners of a face get the orbit value
pushed by the deck word of the target group, so equivariance holds by
construction.  The Dirichlet energy of each affine face is computed in
closed form: for an affine map with Jacobian J into (UHP, |dw|^2 / v^2),

    E_face = 1/2 * tr(J^T J) * \int_T V^{-2} dA
           = 1/2 * tr(J^T J) * 2 area(T) * d2(V1, V2, V3),

where V is the (affine) height of the image and d2 is the second divided
difference of -log.  No quadrature error enters; the minimizer of the
total is the discrete harmonic map.  Minimization runs over the free
vertex heights/offsets (heights through their logarithm, which keeps the
iterates in the half-plane) with L-BFGS, plus at most one scalar gauge
describing how the boundary ring slides along its model curve.

The solver works in a "solve chart" where the target's peripheral
holonomy is in normal form: translations z -> z + tau' for parabolic
ends (the target's own horoball normalization, so a target equal to the
source representation is solved in the very chart the mesh was built
in), dilations z -> e^L z for hyperbolic ends (axis on the imaginary
axis).  Downstream consumers can use either chart; conversions are
exact Mobius maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize as _scipy_minimize
from scipy.sparse import csc_matrix as _csc, identity as _speye
from scipy.sparse.linalg import splu as _splu

from .errors import (
    ConfigError,
    DegenerateFace,
    DegenerateInput,
    DivergedToBoundary,
    InsufficientSamples,
    NonConvergence,
    NotHyperbolicMonodromy,
    OutsideTruncation,
    ReductionFailed,
)
from .fuchsian import Representation, evaluate, reduce_word, word_inverse
from .hyperbolic import Mobius, axis_chart, classify
from .meshing import TruncatedMesh, cusp_frame

__all__ = [
    "TwistVector",
    "EquivariantMap",
    "DensityField",
    "HopfField",
    "boundary_data",
    "solve_harmonic",
    "density_field",
    "hopf_field",
    "holomorphy_residual",
    "cusp_decay_fit",
    "split_energies",
    "dirichlet_energy",
    "rep_volume",
    "eval_map",
]


# ---------------------------------------------------------------------------
# exact face integrals
# ---------------------------------------------------------------------------

def _dd_neglog(x, y):
    """First divided difference of -log, stable for close arguments.

    Accepts complex arrays whose tiny imaginary parts carry derivative
    seeds (complex-step rule); only magnitudes steer the branch.  The
    series window is wide (|u| < 3e-3) because the log1p path, while
    fine for the value, pollutes a complex-step seed by ~eps/u^2: the
    real part of complex log1p is only eps/u accurate and the division
    by u amplifies that into the imaginary part once more.  Inside the
    window a Horner polynomial (exact under complex step) is used; its
    truncation error (3e-3)^10/11 is far below double precision.
    """
    u = (y - x) / x
    small = np.abs(u) < 3e-3
    safe = np.where(small, 1.0, u)
    logpart = -np.log1p(safe) / (x * safe)
    # log1p(u)/u = sum_{k>=0} (-u)^k/(k+1), truncated after k = 9
    p = np.full_like(u, 0.1)
    for k in range(9, 0, -1):
        p = 1.0 / k - u * p
    series = -p / x
    return np.where(small, series, logpart)


def _d2_neglog(v1, v2, v3):
    """Second divided difference of -log at a positive triple.

    This is exactly the mean of V^{-2} over a flat triangle whose affine
    height takes the corner values (v1, v2, v3):

        \\int_T V^{-2} dA = 2 * area(T) * _d2_neglog(V1, V2, V3).

    Two branches keep full accuracy: when the triple is spread out the
    nested difference of stable first differences is used (the outer gap
    is at least 20% of scale, so the outer division is safe); clustered
    triples use the series around the arithmetic mean, whose linear term
    vanishes identically.  Vectorized, and complex-step friendly: branch
    predicates look only at real parts, so derivative seeds in the
    imaginary part propagate exactly.
    """
    v = np.stack(np.broadcast_arrays(v1, v2, v3), axis=-1)
    if not np.issubdtype(v.dtype, np.inexact):
        v = v.astype(float)
    order = np.argsort(v.real, axis=-1, kind="stable")
    v = np.take_along_axis(v, order, axis=-1)
    a, b, c = v[..., 0], v[..., 1], v[..., 2]
    mu = (a + b + c) / 3.0
    out = np.empty(mu.shape, dtype=v.dtype)

    wide = (c.real - a.real) > 0.2 * mu.real
    if np.any(wide):
        aw, bw, cw = a[wide], b[wide], c[wide]
        out[wide] = (_dd_neglog(aw, bw) - _dd_neglog(bw, cw)) / (aw - cw)

    narrow = ~wide
    if np.any(narrow):
        an, bn, cn, mun = a[narrow], b[narrow], c[narrow], mu[narrow]
        t1 = an / mun - 1.0
        t2 = bn / mun - 1.0
        t3 = cn / mun - 1.0
        # elementary symmetric functions of the offsets (their sum is 0)
        s2 = -(t1 * t1 + t2 * t2 + t3 * t3) / 2.0
        s3 = (t1 ** 3 + t2 ** 3 + t3 ** 3) / 3.0
        hm1 = np.zeros_like(mun)  # h_1
        hm2 = np.ones_like(mun)   # h_0
        hm3 = np.zeros_like(mun)
        acc = hm2 / 2.0
        for j in range(2, 26):
            h = -s2 * hm2 + s3 * hm3
            acc = acc + (h / (j + 2.0) if j % 2 == 0 else -h / (j + 2.0))
            hm3, hm2, hm1 = hm2, hm1, h
        out[narrow] = acc / (mun * mun)
    return out


_CSTEP = 1e-60


def _d2_neglog_grad(v1, v2, v3):
    """Value of _d2_neglog and its three partials by the complex step."""
    h1 = _CSTEP * v1
    h2 = _CSTEP * v2
    h3 = _CSTEP * v3
    r1 = _d2_neglog(v1 + 1j * h1, v2, v3)
    r2 = _d2_neglog(v1, v2 + 1j * h2, v3)
    r3 = _d2_neglog(v1, v2, v3 + 1j * h3)
    return r1.real, r1.imag / h1, r2.imag / h2, r3.imag / h3


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwistVector:
    """Fractional twisting angles, one per hyperbolic end of the target."""

    theta: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))


@dataclass
class EquivariantMap:
    """A discrete equivariant map from a truncated mesh into UHP.

    ``values`` holds one image point per vertex orbit, in the solve
    chart (the target conjugated by ``frame``).  A face corner whose
    deck word is w is mapped to rho'(w) applied to the orbit value, so
    values at identified vertices are related by the target holonomy
    exactly, not to solver tolerance.  ``values_original`` converts back
    to the chart ``target_rep`` was given in.
    """

    mesh: TruncatedMesh
    target_rep: Representation
    twist: TwistVector
    boundary_mode: str
    frame: Mobius
    values: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def values_original(self) -> np.ndarray:
        return self.frame.inv()(self.values)

    def solve_rep(self) -> Representation:
        """Target representation conjugated into the solve chart."""
        return self.target_rep.conjugated(self.frame)

    def corner_images(self) -> np.ndarray:
        """Image of every face corner in the solve chart, (F, 3) complex."""
        cached = getattr(self, "_corners", None)
        if cached is not None:
            return cached
        rep_s = self.solve_rep()
        mats = np.array([evaluate(rep_s, w).m for w in self.mesh.words])
        cf = mats[self.mesh.face_words]
        wc = self.values[self.mesh.face_dofs]
        W = (cf[..., 0, 0] * wc + cf[..., 0, 1]) / (cf[..., 1, 0] * wc + cf[..., 1, 1])
        self._corners = W
        return W


# ---------------------------------------------------------------------------
# assembled energy
# ---------------------------------------------------------------------------

class _FaceEnergy:
    """Vectorized energy / gradient of a PL map on a fixed mesh.

    The optional per-face 2x2 SPD ``face_metrics`` array G replaces the
    hyperbolic source metric in the strip chart by an arbitrary one:
    the energy weight becomes Mt = G^{-1} sqrt(det G) (identity in the
    conformal case, where the y^{-2} factor of the source cancels).
    """

    def __init__(self, mesh: TruncatedMesh, rep_solve: Representation,
                 face_metrics: Optional[np.ndarray] = None):
        self.mesh = mesh
        self.tri = mesh.face_dofs
        self.flat_tri = self.tri.ravel()
        self.n = mesh.n_dofs

        mats = np.array([evaluate(rep_solve, w).m for w in mesh.words])
        cf = mats[mesh.face_words]
        self.ca = cf[..., 0, 0]
        self.cb = cf[..., 0, 1]
        self.cc = cf[..., 1, 0]
        self.cd = cf[..., 1, 1]

        P = mesh.face_pos
        e1 = P[:, 1] - P[:, 0]
        e2 = P[:, 2] - P[:, 0]
        det = e1.real * e2.imag - e1.imag * e2.real
        if np.any(det <= 0.0):
            raise DegenerateFace("source mesh contains a non-positive face")
        self.area = 0.5 * det
        inv = np.empty((len(P), 2, 2))
        inv[:, 0, 0] = e2.imag
        inv[:, 0, 1] = -e2.real
        inv[:, 1, 0] = -e1.imag
        inv[:, 1, 1] = e1.real
        inv /= det[:, None, None]
        self.einv = inv
        self.source_yc = P.imag.mean(axis=1)

        if face_metrics is None:
            self.mt = None
            self.mass_area = self.area / self.source_yc ** 2
        else:
            g = np.asarray(face_metrics, dtype=float)
            if g.shape != (len(P), 2, 2):
                raise ConfigError("face_metrics must have shape (n_faces, 2, 2)")
            detg = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] * g[:, 1, 0]
            if np.any(detg <= 0.0) or np.any(g[:, 0, 0] <= 0.0):
                raise ConfigError("face metrics must be positive definite")
            sq = np.sqrt(detg)
            ginv = np.empty_like(g)
            ginv[:, 0, 0] = g[:, 1, 1]
            ginv[:, 0, 1] = -g[:, 0, 1]
            ginv[:, 1, 0] = -g[:, 1, 0]
            ginv[:, 1, 1] = g[:, 0, 0]
            ginv /= detg[:, None, None]
            self.mt = ginv * sq[:, None, None]
            self.mass_area = self.area * sq

        mass = np.zeros(self.n)
        np.add.at(mass, self.tri, (self.mass_area / 3.0)[:, None])
        self.mass = mass

    def energy_grad(self, w: np.ndarray):
        """Total energy and the complex gradient dE/dRe(w) + i dE/dIm(w)."""
        wc = w[self.tri]
        den = self.cc * wc + self.cd
        W = (self.ca * wc + self.cb) / den
        V = W.imag
        d2v, g1, g2, g3 = _d2_neglog_grad(V[:, 0], V[:, 1], V[:, 2])
        k2a = 2.0 * self.area

        f1 = W[:, 1] - W[:, 0]
        f2 = W[:, 2] - W[:, 0]
        ei = self.einv
        j11 = f1.real * ei[:, 0, 0] + f2.real * ei[:, 1, 0]
        j12 = f1.real * ei[:, 0, 1] + f2.real * ei[:, 1, 1]
        j21 = f1.imag * ei[:, 0, 0] + f2.imag * ei[:, 1, 0]
        j22 = f1.imag * ei[:, 0, 1] + f2.imag * ei[:, 1, 1]
        if self.mt is None:
            q = j11 * j11 + j12 * j12 + j21 * j21 + j22 * j22
            b11, b12, b21, b22 = j11, j12, j21, j22
        else:
            m11 = self.mt[:, 0, 0]
            m12 = self.mt[:, 0, 1]
            m22 = self.mt[:, 1, 1]
            q = (m11 * (j11 * j11 + j21 * j21)
                 + 2.0 * m12 * (j11 * j12 + j21 * j22)
                 + m22 * (j12 * j12 + j22 * j22))
            b11 = j11 * m11 + j12 * m12
            b12 = j11 * m12 + j12 * m22
            b21 = j21 * m11 + j22 * m12
            b22 = j21 * m12 + j22 * m22

        kd = k2a * d2v
        energy = 0.5 * float(np.dot(q, kd))

        # dE/dF = kd * (J Mt) Einv^T, F the 2x2 of image edge vectors
        g11 = kd * (b11 * ei[:, 0, 0] + b12 * ei[:, 0, 1])
        g12 = kd * (b11 * ei[:, 1, 0] + b12 * ei[:, 1, 1])
        g21 = kd * (b21 * ei[:, 0, 0] + b22 * ei[:, 0, 1])
        g22 = kd * (b21 * ei[:, 1, 0] + b22 * ei[:, 1, 1])
        gf1 = g11 + 1j * g21
        gf2 = g12 + 1j * g22
        qa = 0.5 * q * k2a
        gw = np.empty_like(W)
        gw[:, 0] = -(gf1 + gf2) + 1j * (qa * g1)
        gw[:, 1] = gf1 + 1j * (qa * g2)
        gw[:, 2] = gf2 + 1j * (qa * g3)
        # chain rule through the corner Mobius maps (unit determinant)
        gsrc = np.conj(1.0 / (den * den)) * gw
        gr = np.bincount(self.flat_tri, weights=gsrc.real.ravel(), minlength=self.n)
        gi = np.bincount(self.flat_tri, weights=gsrc.imag.ravel(), minlength=self.n)
        return energy, gr + 1j * gi


def _tension(asm: _FaceEnergy, grad: np.ndarray, w: np.ndarray,
             pinned: np.ndarray) -> float:
    """Sup norm of the discrete tension field over unconstrained vertices.

    The complex energy gradient at a vertex, divided by the vertex mass
    and rescaled by the image height (one target-metric factor), is the
    discrete tension; it vanishes at a discrete harmonic map.
    """
    free = ~pinned
    if not free.any():
        return 0.0
    return float(np.max(np.abs(grad[free]) * w.imag[free] / asm.mass[free]))


# ---------------------------------------------------------------------------
# boundary models and the solve chart
# ---------------------------------------------------------------------------

def _target_frame(mesh: TruncatedMesh, target_rep: Representation):
    """Solve chart for the target: peripheral holonomy in normal form.

    Returns (frame, kind, data).  For a hyperbolic peripheral, data is
    the translation length and the chart carries the axis to the
    imaginary axis, repelling end at 0; for a parabolic one, data is the
    signed ratio of the target's normalized translation width to the
    mesh period (so a target equal to the source gets ratio one *in the
    mesh's own chart*); identity / elliptic ends keep the given chart.
    """
    P = evaluate(target_rep, mesh.peripheral_word)
    cls = classify(P)
    if cls.kind == "Hyperbolic":
        return axis_chart(P).inv(), cls.kind, float(cls.length)
    if cls.kind == "Parabolic":
        N2, _tau2, _w, _d = cusp_frame(target_rep)
        T = N2 @ P @ N2.inv()
        k = float(T.m[0, 1] / T.m[0, 0]) / mesh.tau
        return N2, cls.kind, k
    return Mobius.identity(), cls.kind, None


def _as_twist(theta, kind: str) -> TwistVector:
    if isinstance(theta, TwistVector):
        tv = theta
    elif theta is None:
        tv = TwistVector((0.0,) if kind == "Hyperbolic" else ())
    elif np.isscalar(theta):
        tv = TwistVector((float(theta),))
    else:
        tv = TwistVector(tuple(theta))
    if kind == "Hyperbolic":
        if len(tv.theta) != 1:
            raise ConfigError(
                f"target has one hyperbolic end, need one twist angle, got {tv.theta}")
    elif any(t != 0.0 for t in tv.theta):
        raise ConfigError(
            f"twist angles apply to hyperbolic ends only; peripheral is {kind}")
    return tv


_MODE_ALIASES = {
    "geodesicprojection": "geodesic",
    "geodesic_projection": "geodesic",
    "cuspmodel": "cusp_model",
}
_MODES = ("auto", "geodesic", "cusp_model", "free", "dirichlet")


def _normalize_mode(boundary_mode) -> str:
    m = str(boundary_mode).strip().lower()
    m = _MODE_ALIASES.get(m, m)
    if m not in _MODES:
        raise ConfigError(f"unknown boundary mode {boundary_mode!r}; "
                          f"expected one of {_MODES}")
    return m


def boundary_data(mesh: TruncatedMesh, target_rep: Representation,
                  theta=None) -> list:
    """Sheared geodesic-projection targets for every ring row.

    For a target whose peripheral holonomy is hyperbolic with translation
    length L, the ring vertex at strip coordinate x + i y is sent to the
    axis point at arc length (L / tau) * (x + theta * y) from the chart
    basepoint; the single twist angle theta slides the pattern along the
    axis at a rate growing with the height.  Returns one complex array
    per ring, in the chart of ``target_rep`` itself.
    """
    P = evaluate(target_rep, mesh.peripheral_word)
    cls = classify(P)
    if cls.kind != "Hyperbolic":
        raise NotHyperbolicMonodromy(
            f"boundary model needs hyperbolic peripheral holonomy, got {cls.kind}")
    tv = _as_twist(theta, cls.kind)
    th = tv.theta[0]
    chart = axis_chart(P)
    rate = cls.length / mesh.tau
    return [chart(1j * np.exp(rate * (ring.x + th * ring.y)))
            for ring in mesh.rings]


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

_SMIN, _SMAX = np.log(1e-10), np.log(1e14)


def solve_harmonic(mesh: TruncatedMesh, target_rep: Representation,
                   theta=None, boundary_mode: str = "auto",
                   tol: float = 1e-6, max_iter: int = 60000,
                   face_metrics: Optional[np.ndarray] = None,
                   boundary_values: Optional[np.ndarray] = None,
                   w_init: Optional[np.ndarray] = None) -> EquivariantMap:
    """Minimize the equivariant Dirichlet energy of a PL map into UHP.

    Boundary modes for the truncation ring:

    * ``"geodesic"`` — vertices ride the target peripheral axis at the
      sheared model positions, with one scalar (the offset along the
      axis) left free; requires hyperbolic peripheral holonomy.
    * ``"cusp_model"`` — vertices ride the matching horocyclic line of
      the target cusp, with one scalar (the position along it) free;
      requires parabolic peripheral holonomy.
    * ``"dirichlet"`` — vertices pinned to ``boundary_values`` (one
      point per top-ring vertex, in the target's own chart), or to the
      zero-offset geodesic model when no values are given.
    * ``"free"`` — natural boundary condition; the ring equilibrates.
    * ``"auto"`` — geodesic / cusp_model / free by the peripheral kind.

    Heights are optimized through their logarithm, so iterates stay in
    the half-plane; a run that presses against the generous height guard
    raises DivergedToBoundary, and a final tension residual above
    ``tol`` raises NonConvergence.  The energy and its exact gradient
    are assembled per face; no quadrature error enters.

    Minimization runs L-BFGS until energy differences bottom out in
    rounding (the remaining defect is far smaller than the energy, so
    that happens while the tension is still coarse), then switches to a
    sparse Newton polish: variables couple only across shared faces, so
    the full Hessian is recovered by a handful of colored central
    differences of the gradient and factorized directly.  Steps are
    accepted on gradient-norm decrease, which is immune to the rounding
    floor of the energy, and converge quadratically.

    ``w_init``, when given, overrides the model initial guess with
    per-orbit values in the solve chart (use the ``values`` of a map
    solved on the same mesh to warm-start a nearby problem).
    """
    mode = _normalize_mode(boundary_mode)
    frame, kind, data = _target_frame(mesh, target_rep)
    tv = _as_twist(theta, kind)
    if mode == "auto":
        mode = {"Hyperbolic": "geodesic", "Parabolic": "cusp_model"}.get(kind, "free")
    if mode == "geodesic" and kind != "Hyperbolic":
        raise NotHyperbolicMonodromy(
            f"geodesic boundary mode needs hyperbolic peripheral holonomy, got {kind}")
    if mode == "cusp_model" and kind != "Parabolic":
        raise ConfigError(
            f"cusp_model boundary mode needs parabolic peripheral holonomy, got {kind}")

    rep_s = target_rep.conjugated(frame)
    asm = _FaceEnergy(mesh, rep_s, face_metrics)
    X = mesh.dof_positions

    # model initial guess (exact for a target equal to the source)
    if kind == "Hyperbolic":
        rate = data / mesh.tau
        th = tv.theta[0]
        w0 = 1j * np.exp(rate * (X.real + th * X.imag))
    elif kind == "Parabolic":
        w0 = data * X.real + 1j * (abs(data) * X.imag)
    else:
        w0 = np.full(mesh.n_dofs, 1j)
    if w_init is not None:
        w0 = np.asarray(w_init, dtype=complex)
        if w0.shape != (mesh.n_dofs,):
            raise ConfigError(
                f"w_init must give one value per vertex orbit ({mesh.n_dofs})")
        if np.any(w0.imag <= 0.0):
            raise ConfigError("w_init values must lie in the upper half-plane")
        w0 = w0.copy()

    top = mesh.rings[-1]
    pinned = np.zeros(mesh.n_dofs, dtype=bool)
    gauge = 0
    upin = base = None
    if mode == "geodesic":
        upin = rate * (top.x + tv.theta[0] * mesh.r)
        pinned[top.dofs] = True
        gauge = 1
        w0[top.dofs] = 1j * np.exp(upin)
    elif mode == "cusp_model":
        base = data * top.x + 1j * (abs(data) * mesh.r)
        pinned[top.dofs] = True
        gauge = 1
        w0[top.dofs] = base
    elif mode == "dirichlet":
        if boundary_values is None:
            bv = boundary_data(mesh, target_rep, tv)[-1]
        else:
            bv = np.asarray(boundary_values, dtype=complex)
            if bv.shape != top.dofs.shape:
                raise ConfigError(
                    f"boundary_values must give one point per top-ring vertex "
                    f"({top.dofs.size}), got shape {bv.shape}")
        wpin = frame(bv)
        if np.any(wpin.imag <= 0.0):
            raise ConfigError("boundary values must lie in the upper half-plane")
        pinned[top.dofs] = True
        w0[top.dofs] = wpin

    free = np.where(~pinned)[0]
    nf = free.size
    w_full = w0.astype(complex)

    def unpack(xs):
        w = w_full.copy()
        w[free] = xs[:nf] + 1j * np.exp(xs[nf:2 * nf])
        if gauge:
            g = xs[-1]
            if mode == "geodesic":
                w[top.dofs] = 1j * np.exp(upin + rate * g)
            else:
                w[top.dofs] = base + g
        return w

    state = {"last": np.inf, "trace": []}

    def fun(xs):
        w = unpack(xs)
        e, grad = asm.energy_grad(w)
        parts = [grad.real[free], grad.imag[free] * w.imag[free]]
        if gauge:
            gp = grad[top.dofs]
            wp = w[top.dofs]
            if mode == "geodesic":
                gg = rate * np.sum(gp.real * wp.real + gp.imag * wp.imag)
            else:
                gg = np.sum(gp.real)
            parts.append(np.array([gg]))
        state["last"] = e
        return e, np.concatenate(parts)

    def record(_xk):
        state["trace"].append(state["last"])

    s0 = np.log(np.clip(w0[free].imag, 2e-10, 5e13))
    xs0 = np.concatenate([w0[free].real, s0, np.zeros(gauge)])
    bounds = ([(None, None)] * nf + [(_SMIN, _SMAX)] * nf
              + [(None, None)] * gauge)

    res = _scipy_minimize(
        fun, xs0, jac=True, method="L-BFGS-B", bounds=bounds,
        callback=record,
        options={"maxiter": max_iter, "maxfun": 2 * max_iter,
                 "ftol": 1e-15, "gtol": 1e-12, "maxcor": 20, "maxls": 60})
    total_iters = int(res.nit)
    xs = res.x

    def check_guard(v):
        s = v[nf:2 * nf]
        if s.size and (s.min() < _SMIN + 1e-6 or s.max() > _SMAX - 1e-6):
            raise DivergedToBoundary(
                "a vertex height ran into the guard rails; the boundary "
                "mode does not control this target")

    check_guard(xs)

    def packed_grad(v):
        return fun(v)[1]

    nvar = xs.size
    hstate = {}

    def packed_hessian(v):
        # Packed variables interact only within a face, so the Hessian
        # columns split into groups recoverable by one probe each
        # (distance-2 coloring of the coupling graph).
        if not hstate:
            gauge_col = nvar - 1 if gauge else None
            pos = np.full(mesh.n_dofs, -1)
            pos[free] = np.arange(nf)
            adj = [set() for _ in range(nvar)]
            for fdofs in mesh.face_dofs:
                cols = []
                for dof in fdofs:
                    k = pos[dof]
                    if k >= 0:
                        cols += [k, k + nf]
                    elif gauge_col is not None:
                        cols.append(gauge_col)
                for a in cols:
                    adj[a].update(cols)
            adj = [np.fromiter(sorted(a), dtype=np.intp) for a in adj]
            color = np.full(nvar, -1)
            for k in range(nvar):
                banned = {color[k2] for j in adj[k] for k2 in adj[j]}
                c = 0
                while c in banned:
                    c += 1
                color[k] = c
            hstate["adj"] = adj
            hstate["groups"] = [np.where(color == c)[0]
                                for c in range(color.max() + 1)]
        adj = hstate["adj"]
        h = 1e-6
        rows, cols, vals = [], [], []
        for members in hstate["groups"]:
            probe = np.zeros(nvar)
            probe[members] = 1.0
            column = (packed_grad(v + h * probe)
                      - packed_grad(v - h * probe)) / (2.0 * h)
            for k in members:
                jj = adj[k]
                rows.append(jj)
                cols.append(np.full(jj.size, k))
                vals.append(column[jj])
        Hs = _csc((np.concatenate(vals),
                   (np.concatenate(rows), np.concatenate(cols))),
                  shape=(nvar, nvar))
        return (Hs + Hs.T) * 0.5

    polish = 0
    G = packed_grad(xs)
    gnorm = float(np.linalg.norm(G))
    while True:
        w = unpack(xs)
        energy, grad = asm.energy_grad(w)
        ten = _tension(asm, grad, w, pinned)
        state["trace"].append(energy)
        if ten <= tol:
            break
        if polish >= 30:
            raise NonConvergence(
                f"tension residual {ten:.3e} above tolerance {tol:.1e} "
                f"after {total_iters} iterations and {polish} polish steps")
        Hs = packed_hessian(xs)
        ridge = 1e-10
        while True:
            try:
                lu = _splu((Hs + ridge * _speye(nvar, format="csc")).tocsc())
                break
            except RuntimeError:
                ridge *= 1e4
                if ridge > 1.0:
                    raise NonConvergence(
                        f"tension residual {ten:.3e} above tolerance "
                        f"{tol:.1e}; the polish system is singular")
        step = lu.solve(-G)
        t = 1.0
        while True:
            cand = xs + t * step
            cand[nf:2 * nf] = np.clip(cand[nf:2 * nf], _SMIN, _SMAX)
            g2 = packed_grad(cand)
            gn2 = float(np.linalg.norm(g2))
            if gn2 < (1.0 - 0.25 * t) * gnorm:
                xs, G, gnorm = cand, g2, gn2
                break
            t *= 0.5
            if t < 1e-4:
                raise NonConvergence(
                    f"tension residual {ten:.3e} above tolerance {tol:.1e}; "
                    "the Newton polish cannot reduce the gradient further")
        check_guard(xs)
        polish += 1

    if gauge:
        gname = "axis_offset" if mode == "geodesic" else "line_offset"
        gval = {gname: float(xs[-1])}
    else:
        gval = {}

    emap = EquivariantMap(
        mesh=mesh, target_rep=target_rep, twist=tv, boundary_mode=mode,
        frame=frame, values=w,
        diagnostics={
            "energy": float(energy),
            "tension": float(ten),
            "iterations": total_iters,
            "polish_steps": polish,
            "energy_trace": [float(v) for v in state["trace"]],
            "monodromy": kind,
            "gauge": gval,
            "message": str(getattr(res, "message", "")),
        })
    emap._assembly = asm
    return emap


def _get_assembly(emap: EquivariantMap) -> _FaceEnergy:
    asm = getattr(emap, "_assembly", None)
    if asm is None:
        asm = _FaceEnergy(emap.mesh, emap.solve_rep(), None)
        emap._assembly = asm
    return asm


def dirichlet_energy(emap: EquivariantMap) -> float:
    """Exact Dirichlet energy of the discrete map over the truncation."""
    e, _ = _get_assembly(emap).energy_grad(emap.values)
    return float(e)


# ---------------------------------------------------------------------------
# derived fields
# ---------------------------------------------------------------------------

@dataclass
class DensityField:
    """Per-face densities of a discrete map, centroid convention.

    ``e`` is the energy density with respect to the hyperbolic source
    metric, split as e = H + L with H * L the squared norm of the
    quadratic term ``phi`` (stored as a chart coefficient in the strip);
    ``J`` is the signed Jacobian, ``area`` the hyperbolic face area.
    """

    e: np.ndarray
    H: np.ndarray
    L: np.ndarray
    J: np.ndarray
    phi: np.ndarray
    area: np.ndarray
    source_y: np.ndarray
    image_y: np.ndarray


def _pullback(emap: EquivariantMap):
    """Flat first-fundamental-form data of every face.

    Returns (e11, e12, e22, jac, yc, vc, area_flat) where the e's are
    the entries of J^T J / Vc^2 for the affine face map in the strip
    chart, jac the corresponding determinant, yc / vc the source / image
    centroid heights.
    """
    mesh = emap.mesh
    W = emap.corner_images()
    P = mesh.face_pos
    e1 = P[:, 1] - P[:, 0]
    e2 = P[:, 2] - P[:, 0]
    det = e1.real * e2.imag - e1.imag * e2.real
    f1 = W[:, 1] - W[:, 0]
    f2 = W[:, 2] - W[:, 0]
    i11, i12 = e2.imag / det, -e2.real / det
    i21, i22 = -e1.imag / det, e1.real / det
    j11 = f1.real * i11 + f2.real * i21
    j12 = f1.real * i12 + f2.real * i22
    j21 = f1.imag * i11 + f2.imag * i21
    j22 = f1.imag * i12 + f2.imag * i22
    vc = W.imag.mean(axis=1)
    if not np.all(np.isfinite(vc)) or np.any(vc <= 0.0):
        raise DegenerateFace("image centroid left the upper half-plane")
    s = 1.0 / (vc * vc)
    e11 = (j11 * j11 + j21 * j21) * s
    e12 = (j11 * j12 + j21 * j22) * s
    e22 = (j12 * j12 + j22 * j22) * s
    jac = (j11 * j22 - j12 * j21) * s
    yc = P.imag.mean(axis=1)
    return e11, e12, e22, jac, yc, vc, 0.5 * det


def split_energies(e, phi_norm_sq):
    """Split a density into (H, L): e = H + L, H >= L, H * L = |Phi|^2."""
    e = np.asarray(e, dtype=float)
    p = np.asarray(phi_norm_sq, dtype=float)
    disc = np.sqrt(np.maximum(e * e - 4.0 * p, 0.0))
    H = 0.5 * (e + disc)
    return H, e - H


def density_field(emap: EquivariantMap) -> DensityField:
    """Energy / Jacobian densities of the map, one value per face.

    All densities are evaluated with the affine Jacobian of the face and
    the conformal factor of the image centroid, which is second-order
    accurate against the smooth fields at face centers.
    """
    e11, e12, e22, jac, yc, vc, aflat = _pullback(emap)
    y2 = yc * yc
    e = 0.5 * y2 * (e11 + e22)
    phi = 0.25 * (e11 - e22) - 0.5j * e12
    p2 = (y2 * y2) * (phi.real ** 2 + phi.imag ** 2)
    H, L = split_energies(e, p2)
    return DensityField(e=e, H=H, L=L, J=y2 * jac, phi=phi,
                        area=aflat / y2, source_y=yc, image_y=vc)


def _ring_bands(mesh: TruncatedMesh, yc, weights, values):
    """Weighted means of a per-face quantity between consecutive rings."""
    ys = np.sort(np.array([rr.y for rr in mesh.rings]))
    mids, out = [], []
    for lo, hi in zip(ys[:-1], ys[1:]):
        sel = (yc > lo) & (yc < hi)
        if not np.any(sel):
            continue
        w = weights[sel]
        mids.append(0.5 * (lo + hi))
        out.append((values[sel] * w).sum() / w.sum())
    return np.asarray(mids), np.asarray(out)


@dataclass
class HopfField:
    """Per-face quadratic-differential coefficient with its cusp residue.

    ``phi`` is the chart coefficient in the strip; ``residues`` holds
    the per-puncture residue estimated by fitting the ring-band means of
    phi against a constant plus the leading decaying cylinder mode and
    converting the constant through the period.
    """

    phi: np.ndarray
    residues: tuple
    fit_y: np.ndarray
    fit_values: np.ndarray
    mesh: TruncatedMesh


def hopf_field(emap: EquivariantMap, fit_band=(3.0, None)) -> HopfField:
    """Quadratic term of the pulled-back metric and its cusp residue.

    The residue of phi dz^2 at the puncture is read off through the
    cylinder coordinate: band means of phi over the rings approach a
    constant at the rate of the first decaying mode exp(-2 pi y / tau);
    fitting both and converting the constant by -tau^2 / (4 pi^2) gives
    the residue.  Bands outside [fit_band[0], fit_band[1] or r - 1] are
    left out of the fit (the top rows feel the boundary condition).
    """
    mesh = emap.mesh
    e11, e12, e22, _jac, yc, _vc, aflat = _pullback(emap)
    phi = 0.25 * (e11 - e22) - 0.5j * e12
    mids, band_phi = _ring_bands(mesh, yc, aflat, phi)
    vals = -band_phi * mesh.tau ** 2 / (4.0 * np.pi ** 2)
    lo = fit_band[0]
    hi = fit_band[1] if fit_band[1] is not None else mesh.r - 1.0
    sel = (mids >= lo) & (mids <= hi)
    if sel.sum() < 3:
        raise InsufficientSamples(
            f"need at least 3 ring bands in [{lo}, {hi}] for the residue fit")
    basis = np.stack([np.ones(int(sel.sum())),
                      np.exp(-2.0 * np.pi * mids[sel] / mesh.tau)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, vals[sel], rcond=None)
    return HopfField(phi=phi, residues=(complex(coef[0]),),
                     fit_y=mids, fit_values=vals, mesh=mesh)


def holomorphy_residual(hopf: HopfField) -> float:
    """Mass-weighted mean conjugate-derivative of the Hopf coefficient.

    The coefficient of an exactly harmonic map is holomorphic.  Around
    every vertex orbit the per-face constants of the incident faces are
    transported to the orbit's own chart by the deck words (quadratic
    differentials pull back with the squared derivative) and fit by
    a + b z + c conj(z); |c| is the local defect.  The mean of |c| over
    vertex masses shrinks like the mesh spacing under refinement for a
    solved map, which makes it a practical convergence monitor.
    """
    mesh = hopf.mesh
    phi = hopf.phi
    rep_s = mesh.strip_representation
    mats = np.array([evaluate(rep_s, w).m for w in mesh.words])
    cf = mats[mesh.face_words]
    a_, b_ = cf[..., 0, 0], cf[..., 0, 1]
    c_, d_ = cf[..., 1, 0], cf[..., 1, 1]
    cent = mesh.face_pos.mean(axis=1)[:, None]
    zloc = (d_ * cent - b_) / (a_ - c_ * cent)
    dg = 1.0 / (c_ * zloc + d_) ** 2
    vals = phi[:, None] * dg * dg

    tri = mesh.face_dofs
    n = mesh.n_dofs
    P = mesh.face_pos
    e1 = P[:, 1] - P[:, 0]
    e2 = P[:, 2] - P[:, 0]
    ahyp = 0.5 * (e1.real * e2.imag - e1.imag * e2.real) / P.imag.mean(axis=1) ** 2
    mass = np.zeros(n)
    np.add.at(mass, tri, (ahyp / 3.0)[:, None])

    order = np.argsort(tri.ravel(), kind="stable")
    flat_vert = tri.ravel()[order]
    flat_z = zloc.ravel()[order]
    flat_v = vals.ravel()[order]
    starts = np.searchsorted(flat_vert, np.arange(n + 1))

    resid = np.zeros(n)
    fitted = np.zeros(n, dtype=bool)
    for i in range(n):
        s, t = starts[i], starts[i + 1]
        if t - s < 4:
            continue
        zc = flat_z[s:t]
        zc = zc - zc.mean()
        fv = flat_v[s:t]
        m = t - s
        A = np.zeros((2 * m, 6))
        A[0::2, 0] = 1.0
        A[1::2, 1] = 1.0
        A[0::2, 2] = zc.real
        A[0::2, 3] = -zc.imag
        A[1::2, 2] = zc.imag
        A[1::2, 3] = zc.real
        A[0::2, 4] = zc.real
        A[0::2, 5] = zc.imag
        A[1::2, 4] = -zc.imag
        A[1::2, 5] = zc.real
        rhs = np.empty(2 * m)
        rhs[0::2] = fv.real
        rhs[1::2] = fv.imag
        sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        resid[i] = np.hypot(sol[4], sol[5])
        fitted[i] = True
    if not fitted.any():
        raise InsufficientSamples("no vertex has enough incident faces to fit")
    return float(np.sum(resid[fitted] * mass[fitted]) / np.sum(mass[fitted]))


def cusp_decay_fit(emap: EquivariantMap, fit_band=(3.0, None)) -> dict:
    """Exponential approach of the flat density to its cusp limit.

    In the flat cylinder chart of the cusp the energy density of the
    solved map approaches L^2 (1 + theta^2) / (2 tau^2), L the target
    peripheral translation length; the residual decays exponentially in
    the height.  Band means between rings give the profile; the fit of
    log |profile - limit| against the height returns the decay rate
    ("rate", positive when the law holds), the front factor
    ("amplitude"), the fit quality ("r_squared") and the limit, plus the
    profile table for plotting.
    """
    mesh = emap.mesh
    P = evaluate(emap.target_rep, mesh.peripheral_word)
    cls = classify(P)
    if cls.kind != "Hyperbolic":
        raise NotHyperbolicMonodromy(
            f"decay law needs hyperbolic peripheral holonomy, got {cls.kind}")
    th = emap.twist.theta[0] if emap.twist.theta else 0.0
    limit = cls.length ** 2 * (1.0 + th * th) / (2.0 * mesh.tau ** 2)

    e11, _e12, e22, _jac, yc, _vc, aflat = _pullback(emap)
    eflat = 0.5 * (e11 + e22)
    mids, prof = _ring_bands(mesh, yc, aflat, eflat)
    lo = fit_band[0]
    hi = fit_band[1] if fit_band[1] is not None else mesh.r - 1.0
    sel = (mids >= lo) & (mids <= hi)
    resid = prof[sel] - limit
    good = np.abs(resid) > 1e-14
    x = mids[sel][good]
    if x.size < 3:
        raise InsufficientSamples("too few usable bands for the decay fit")
    ylog = np.log(np.abs(resid[good]))
    slope, intercept = np.polyfit(x, ylog, 1)
    pred = slope * x + intercept
    sst = float(np.sum((ylog - ylog.mean()) ** 2))
    r2 = 1.0 - float(np.sum((ylog - pred) ** 2)) / sst if sst > 0 else 1.0
    return {"rate": float(-slope), "amplitude": float(np.exp(intercept)),
            "r_squared": r2, "limit": float(limit),
            "band_y": mids, "band_density": prof}


def rep_volume(emap: EquivariantMap) -> float:
    """Signed hyperbolic area swept by the map, with multiplicity.

    Per face, the signed flat area of the image triangle times the exact
    mean of V^{-2} over it integrates the pulled-back area form; the sum
    over faces is the integral of the Jacobian over the truncated
    surface.  Orientation-reversing pieces count negatively and a
    constant map contributes zero.
    """
    W = emap.corner_images()
    f1 = W[:, 1] - W[:, 0]
    f2 = W[:, 2] - W[:, 0]
    aimg = 0.5 * (f1.real * f2.imag - f1.imag * f2.real)
    d2 = _d2_neglog(W[:, 0].imag, W[:, 1].imag, W[:, 2].imag)
    return float(np.sum(2.0 * aimg * d2))


# ---------------------------------------------------------------------------
# pointwise evaluation
# ---------------------------------------------------------------------------

def eval_map(emap: EquivariantMap, z: complex) -> complex:
    """Evaluate the interpolated map at a source point.

    The point (in the chart of the source representation the mesh was
    built from) is folded into the fundamental strip by the peripheral
    translation and the floor side pairings, located in a face, linearly
    interpolated in the solve chart and pushed back by the inverse deck
    word, landing in the target's own chart.  Points whose reduction
    ends above the truncation height raise OutsideTruncation.
    """
    mesh = emap.mesh
    zs = complex(mesh.normalizer(complex(z)))
    if zs.imag <= 0.0:
        raise DegenerateInput("point must lie in the open upper half-plane")
    rep_s = mesh.strip_representation
    arcs = [(tuple(w), evaluate(rep_s, tuple(w)))
            for w in mesh.floor_info["arc_words"]]
    zword = mesh.peripheral_word
    zwinv = word_inverse(zword)
    tau = mesh.tau

    word_acc: tuple = ()
    for _ in range(400):
        n = int(np.floor(zs.real / tau))
        if n:
            zs -= n * tau
            word_acc = (zwinv * n if n > 0 else zword * (-n)) + word_acc
        moved = False
        for w, g in arcs:
            c, d = g.m[1, 0], g.m[1, 1]
            if abs(c * zs + d) < 1.0 - 1e-12:
                zs = complex(g(zs))
                word_acc = w + word_acc
                moved = True
                break
        if not moved:
            break
    else:
        raise ReductionFailed("point did not reduce to the fundamental strip")

    if zs.imag > mesh.r + 1e-9:
        raise OutsideTruncation(
            f"reduced height {zs.imag:.4g} lies above the truncation r = {mesh.r}")

    P = mesh.face_pos
    cand = np.where((P.real.min(axis=1) <= zs.real + 1e-9)
                    & (P.real.max(axis=1) >= zs.real - 1e-9)
                    & (P.imag.min(axis=1) <= zs.imag + 1e-9)
                    & (P.imag.max(axis=1) >= zs.imag - 1e-9))[0]
    best, best_min, best_bary = -1, -np.inf, None
    for f in cand:
        p0, p1, p2 = P[f]
        u, v, w_ = p1 - p0, p2 - p0, zs - p0
        det = u.real * v.imag - u.imag * v.real
        l1 = (w_.real * v.imag - w_.imag * v.real) / det
        l2 = (u.real * w_.imag - u.imag * w_.real) / det
        l0 = 1.0 - l1 - l2
        m = min(l0, l1, l2)
        if m > best_min:
            best_min, best, best_bary = m, int(f), (l0, l1, l2)
    # points on the true floor may undershoot the chord of its mesh
    # approximation by O(h^2); clamp those into the nearest face
    if best < 0 or best_min < -0.08:
        raise ReductionFailed(
            "reduced point is not covered by the truncated mesh")
    lam = np.clip(np.array(best_bary), 0.0, None)
    lam /= lam.sum()
    Wc = emap.corner_images()[best]
    wval = lam[0] * Wc[0] + lam[1] * Wc[1] + lam[2] * Wc[2]

    g = evaluate(emap.target_rep.conjugated(emap.frame), reduce_word(word_acc))
    return complex(emap.frame.inv()(g.inv()(wval)))
