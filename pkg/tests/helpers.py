"""Independent reference computations shared by several test modules."""
import math
import warnings

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from wmfield.fem1d import eval_fe

GAUSS_POINTS = 8


def composite_gauss_nodes(n_panels, n_points=GAUSS_POINTS):
    """Nodes and weights of a composite Gauss-Legendre rule on [0, 1]."""
    g, w = np.polynomial.legendre.leggauss(n_points)
    left = np.arange(n_panels) / n_panels
    x = (left[:, None] + (g[None, :] + 1) / (2 * n_panels)).ravel()
    wt = np.tile(w / (2 * n_panels), n_panels)
    return x, wt


def quadrature_errors(fe, coeffs, a, n_panels=2**12, chunk=4096):
    """Brute-force ``||Z_h - Z_ref||_L2`` and gradient seminorm per column by composite quadrature.

    ``coeffs`` and ``a`` hold matching columns (finite element coefficients and
    KL coefficients).  Panels are aligned with the mesh, so the piecewise
    polynomial part is integrated exactly; with 8 Gauss points a panel spans at
    most 0.77 rad of the highest mode.
    """
    coeffs = np.atleast_2d(np.asarray(coeffs).T).T
    a = np.atleast_2d(np.asarray(a).T).T
    x, w = composite_gauss_nodes(n_panels)
    j = np.arange(1, a.shape[0] + 1)
    d0 = eval_fe(fe, coeffs, x, 0)
    d1 = eval_fe(fe, coeffs, x, 1)
    for s in range(0, x.size, chunk):
        arg = np.pi * np.outer(x[s:s + chunk], j)
        d0[s:s + chunk] -= (math.sqrt(2) * np.sin(arg)) @ a
        d1[s:s + chunk] -= (math.sqrt(2) * np.pi * j * np.cos(arg)) @ a
    return np.sqrt(w @ d0**2), np.sqrt(w @ d1**2)


def quadrature_error(fe, coeffs, a, derivative=False):
    return float(quadrature_errors(fe, coeffs, a)[1 if derivative else 0][0])


def quad_sine_products(fe, j, derivative):
    """``(phi_i, sqrt(2) sin(j pi x))`` (or derivative pairing) by QUADPACK's oscillatory rule.

    Each basis function is recovered element by element as an explicit
    polynomial by interpolating ``eval_fe`` at ``p + 1`` points.
    """
    omega = j * math.pi
    out = np.zeros(fe.n_dofs)
    with warnings.catch_warnings():
        # tolerances near rounding; agreement is asserted by the callers
        warnings.simplefilter("ignore", IntegrationWarning)
        _accumulate_products(fe, omega, derivative, out)
    return out


def _accumulate_products(fe, omega, derivative, out):
    nodes = fe.mesh.nodes
    p = fe.degree
    for e in range(fe.mesh.n_elements):
        lo, hi = nodes[e], nodes[e + 1]
        t = np.linspace(lo, hi, p + 1)
        mid = 0.5 * (lo + hi)
        for i in range(fe.n_dofs):
            if abs(fe.dof_coords[i] - mid) > fe.h:
                continue
            c = np.zeros(fe.n_dofs)
            c[i] = 1.0
            poly = np.polyfit(t - mid, eval_fe(fe, c, np.clip(t, lo + 1e-300, hi)), p)
            if derivative:
                poly = np.polyder(poly)
                f = lambda x: np.polyval(poly, x - mid)
                val = quad(f, lo, hi, weight="cos", wvar=omega, epsabs=1e-14, epsrel=1e-13)[0]
                out[i] += math.sqrt(2) * omega * val
            else:
                f = lambda x: np.polyval(poly, x - mid)
                val = quad(f, lo, hi, weight="sin", wvar=omega, epsabs=1e-14, epsrel=1e-13)[0]
                out[i] += math.sqrt(2) * val
