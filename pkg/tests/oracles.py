"""Independent reference values used by the tests.

Nothing here imports rgl: the closed forms are written out from the model
formulas, and the cigar distance comes from a graph shortest path.
"""

import math

import numpy as np
from scipy import integrate
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra


# ---------------------------------------------------------------- flat

def flat_l(p, q, tau):
    d = np.asarray(q, float) - np.asarray(p, float)
    return float(d @ d) / (4.0 * tau)


def flat_grad(p, q, tau):
    return (np.asarray(q, float) - np.asarray(p, float)) / (2.0 * tau)


# ---------------------------------------------------------------- round S^2, radius^2 = 1 + 2 tau

def sphere_alpha(tau):
    return math.atan(math.sqrt(2.0 * tau))


def sphere_l_of_speed(speed, tau):
    """l at the end of the radial L-geodesic with |v|_{g(0)} = speed."""
    a = sphere_alpha(tau)
    return 1.0 + a * (speed**2 - 1.0) / math.sqrt(2.0 * tau)


def sphere_J(speed, tau):
    """Jacobian of v -> gamma(tau) in orthonormal frames."""
    a = sphere_alpha(tau)
    rho2 = 1.0 + 2.0 * tau
    if speed == 0.0:
        return 2.0 * rho2 * a * a
    return math.sqrt(2.0) * rho2 * a * math.sin(math.sqrt(2.0) * speed * a) / speed


def sphere_l_at_chart_point(q, tau):
    """l(q, tau) from the stereographic origin; the radial L-geodesic turns
    through the angle sqrt(2) |v| alpha."""
    theta = 2.0 * math.atan(float(np.linalg.norm(q)))
    speed = theta / (math.sqrt(2.0) * sphere_alpha(tau))
    return sphere_l_of_speed(speed, tau)


def sphere_reduced_volume(tau):
    """Integral over the disc before the first conjugate radius."""
    a = sphere_alpha(tau)
    rc = math.pi / (math.sqrt(2.0) * a)
    f = lambda r: math.exp(-sphere_l_of_speed(r, tau)) * sphere_J(r, tau) * r
    val, _ = integrate.quad(f, 0.0, rc, epsabs=1e-13, epsrel=1e-13, limit=200)
    return 2.0 * math.pi * val / tau


def cylinder_reduced_volume(tau):
    """S^2 x R: the line factor contributes sqrt(4 pi)."""
    return sphere_reduced_volume(tau) * math.sqrt(4.0 * math.pi)


# ---------------------------------------------------------------- cigar

def cigar_metric_factor(x, y, tau, a0=1.0):
    return 1.0 / (a0 * math.exp(-4.0 * tau) + x * x + y * y)


def cigar_graph_distance(src, dst, tau, *, half_width=3.0, h=0.05, reach=4):
    """Shortest path on a square lattice whose edges join every node to the
    primitive offsets in a (2 reach + 1)^2 box; each edge is weighted by its
    metric length (3-point Gauss along the chord).  With reach 4 the widest
    angular gap between edge directions is about 14 degrees, which bounds
    the zig-zag excess by 1/cos(7 deg) - 1 < 0.8%."""
    m = int(round(2 * half_width / h)) + 1
    coords = -half_width + h * np.arange(m)
    offs = [(i, j) for i in range(-reach, reach + 1) for j in range(-reach, reach + 1)
            if (i, j) != (0, 0) and math.gcd(abs(i), abs(j)) == 1]
    gx, gw = np.polynomial.legendre.leggauss(3)
    ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    rows, cols, vals = [], [], []
    for di, dj in offs:
        i2, j2 = ii + di, jj + dj
        ok = (i2 >= 0) & (i2 < m) & (j2 >= 0) & (j2 < m)
        a, b = ii[ok], jj[ok]
        x0, y0 = coords[a], coords[b]
        dx, dy = di * h, dj * h
        length = math.hypot(dx, dy)
        w = np.zeros(a.size)
        for s, ws in zip(gx, gw):
            t = 0.5 * (s + 1.0)
            xs, ys = x0 + t * dx, y0 + t * dy
            w += 0.5 * ws * np.sqrt(1.0 / (math.exp(-4.0 * tau) + xs**2 + ys**2))
        rows.append(a * m + b)
        cols.append(i2[ok] * m + j2[ok])
        vals.append(w * length)
    graph = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(m * m, m * m)).tocsr()

    def node(p):
        i = int(round((p[0] + half_width) / h))
        j = int(round((p[1] + half_width) / h))
        return i * m + j

    return float(dijkstra(graph, indices=node(src))[node(dst)])
