#!/usr/bin/env python3
"""Regenerates the frozen kernel oracle tables.

Evaluates the two closed-form kernels with 50-digit arithmetic (mpmath)
on a fixed set of randomly drawn admissible configurations and writes
inputs together with reference values. The Rust acceptance suite reads
these tables and compares the f64 implementations at 1e-10 relative.

Run from this directory:  python3 gen_kernel_tables.py
"""

import random

from mpmath import mp, mpf, sqrt, log, pi

mp.dps = 50

N_CASES = 100
SEED = 20260813


def unit(angle):
    from mpmath import cos, sin

    return (cos(angle), sin(angle))


def draw(rng):
    from mpmath import cos, sin

    while True:
        x = (mpf(rng.uniform(-1, 1)), mpf(rng.uniform(-1, 1)))
        y = (mpf(rng.uniform(-1, 1)), mpf(rng.uniform(-1, 1)))
        r = sqrt((x[0] - y[0]) ** 2 + (x[1] - y[1]) ** 2)
        if mpf("0.05") < r < mpf("1.5"):
            break
    ax = mpf(rng.uniform(0, 6.283185307179586))
    ay = mpf(rng.uniform(0, 6.283185307179586))
    nx = (cos(ax), sin(ax))
    ny = (cos(ay), sin(ay))
    delta = r * (1 + mpf(rng.uniform(0.05, 2.0)))
    return x, y, nx, ny, r, delta


def projections(x, y, nx, ny):
    dx = (x[0] - y[0], x[1] - y[1])
    return (dx[0] * nx[0] + dx[1] * nx[1]) * (dx[0] * ny[0] + dx[1] * ny[1])


def assembly_kernel(x, y, nx, ny, r, delta, dt1, dt2):
    r2 = r * r
    s = sqrt(delta * delta - r2)
    pn = projections(x, y, nx, ny)
    ndot = nx[0] * ny[0] + nx[1] * ny[1]
    a = delta * s / r2
    core = pn / r2 * a + mpf("0.5") * ndot * (log(delta + s) - log(r) - a)
    return core / (2 * pi * dt1 * dt2)


def residual_kernel(x, y, nx, ny, r, delta):
    r2 = r * r
    s = sqrt(delta * delta - r2)
    pn = projections(x, y, nx, ny)
    ndot = nx[0] * ny[0] + nx[1] * ny[1]
    return ((pn / r2 - ndot) * s + delta * delta * pn / (r2 * s)) / r2


def fmt(v):
    return mp.nstr(v, 17, strip_zeros=False)


def main():
    rng = random.Random(SEED)
    with open("kernel_assembly.txt", "w") as f:
        f.write("# x1 x2 y1 y2 nx1 nx2 ny1 ny2 delta dt_test dt_trial value\n")
        for _ in range(N_CASES):
            x, y, nx, ny, r, delta = draw(rng)
            dt1 = mpf(rng.uniform(0.01, 0.3))
            dt2 = mpf(rng.uniform(0.01, 0.3))
            v = assembly_kernel(x, y, nx, ny, r, delta, dt1, dt2)
            row = [x[0], x[1], y[0], y[1], nx[0], nx[1], ny[0], ny[1], delta, dt1, dt2, v]
            f.write(" ".join(fmt(c) for c in row) + "\n")
    with open("kernel_residual.txt", "w") as f:
        f.write("# x1 x2 y1 y2 nx1 nx2 ny1 ny2 delta value\n")
        for _ in range(N_CASES):
            x, y, nx, ny, r, delta = draw(rng)
            v = residual_kernel(x, y, nx, ny, r, delta)
            row = [x[0], x[1], y[0], y[1], nx[0], nx[1], ny[0], ny[1], delta, v]
            f.write(" ".join(fmt(c) for c in row) + "\n")


if __name__ == "__main__":
    main()
