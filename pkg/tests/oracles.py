"""Independent reference computations at a = 2 through the tent conjugacy.

With ``x = -cos(pi u)`` the map ``1 - 2x^2`` becomes the full tent map on
[0, 1], so orbits and interval images have closed forms.  Everything here is
evaluated in mpmath at 60 digits and shares no code with the package.
"""

import mpmath as mp

mp.mp.dps = 60


def to_u(x):
    return mp.acos(-mp.mpf(x)) / mp.pi


def to_x(u):
    return -mp.cos(mp.pi * u)


def iterate_x(x, n):
    """``f^n(x)`` via angle doubling: ``f^n(-cos(pi u)) = -cos(2^n pi u)``."""
    return -mp.cos(mp.mpf(2) ** n * mp.pi * to_u(x))


def ptilde(y, cap=500):
    """First j >= 1 with ``|f^j y - f^j 0| >= 1/j^2``."""
    for j in range(1, cap):
        if abs(iterate_x(y, j) - iterate_x(0, j)) >= mp.mpf(1) / (j * j):
            return j
    raise RuntimeError("cap")


def tent(u):
    return 2 * u if u <= mp.mpf(1) / 2 else 2 - 2 * u


def tent_image(lo, hi):
    half = mp.mpf(1) / 2
    a, b = tent(lo), tent(hi)
    if lo < half < hi:
        return min(a, b), mp.mpf(1)
    return min(a, b), max(a, b)


def image_lengths(x_lo, x_hi, n):
    """x-lengths of ``f^j([x_lo, x_hi])`` for j = 0..n."""
    lo, hi = sorted((to_u(x_lo), to_u(x_hi)))
    out = []
    for _ in range(n + 1):
        out.append(abs(to_x(hi) - to_x(lo)))
        lo, hi = tent_image(lo, hi)
    return out


def recovery_time(k, r, cap=200):
    """Last n with every image of (0, e^-k) up to time n of length <= r/2."""
    ls = image_lengths(0, mp.e ** (-k), cap)
    for j, L in enumerate(ls):
        if L > mp.mpf(r) / 2:
            return j - 1
    raise RuntimeError("cap")


def growth_length(k, n):
    return image_lengths(mp.e ** (-(k + 1)), mp.e ** (-k), n)[n]


def lebesgue_survival_rate_exact_hole_0_1(n):
    """Lebesgue measure of points of [-1, 1] surviving n steps with H = (0, 1).

    Survivors up to time n are the tent-coordinate interval [0, 2^-(n+1)], whose
    x-length is 1 - cos(pi 2^-(n+1)); its ratio tends to 1/4.
    """
    return 1 - mp.cos(mp.pi / mp.mpf(2) ** (n + 1))
