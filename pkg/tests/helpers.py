"""Shared helpers for the test suite: random isometries, displacement oracles."""

import numpy as np
from scipy.optimize import minimize

from adsmax.hyperbolic import Mobius, dist, transvection_to


def rotation_about_i(phi):
    c, s = np.cos(phi), np.sin(phi)
    return Mobius(np.array([[c, s], [-s, c]]))


def random_point(rng, box=4.0, ymin=0.1, ymax=8.0):
    return complex(rng.uniform(-box, box), rng.uniform(ymin, ymax))


def random_mobius(rng, box=3.0):
    """Haar-ish random isometry: transvection to a random point, then rotation."""
    p = random_point(rng, box)
    return transvection_to(p) @ rotation_about_i(rng.uniform(0, np.pi))


def random_hyperbolic(rng, trace_lo=2.1, trace_hi=20.0):
    """Random hyperbolic element with |trace| in the given range."""
    t = rng.uniform(trace_lo, trace_hi)
    lam = (t + np.sqrt(t * t - 4.0)) / 2.0
    D = Mobius(np.array([[lam, 0.0], [0.0, 1.0 / lam]]))
    S = random_mobius(rng)
    return S @ D @ S.inv()


def min_displacement(T, starts=4, rng=None):
    """Direct minimization of z -> d(Tz, z) over the plane.

    Independent oracle for the trace formula: the displacement function
    is convex, so a quasi-Newton descent from a few starts finds the
    infimum. Coordinates are (x, log y) to keep iterates in the plane.
    """
    if rng is None:
        rng = np.random.default_rng(0)

    def f(u):
        z = complex(u[0], np.exp(u[1]))
        return dist(T(z), z)

    best = np.inf
    for _ in range(starts):
        u0 = np.array([rng.uniform(-2, 2), rng.uniform(-1, 1)])
        res = minimize(f, u0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 2000})
        best = min(best, res.fun)
    return best
