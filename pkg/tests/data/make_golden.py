"""Regenerate the golden trajectories with a standalone copy of each environment's equations.

Run from the repository root: ``python tests/data/make_golden.py``. The
trajectories use fixed initial states and a fixed action script so they do
not depend on the package's RNG or environment code.
"""

import csv
import math
from pathlib import Path

HERE = Path(__file__).parent


def fmt(v):
    return " ".join(repr(float(x)) for x in v)


def write(name, rows):
    with open(HERE / f"golden_{name}.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "s", "a", "r", "s_next", "done"])
        for i, (s, a, r, s2, d) in enumerate(rows):
            w.writerow([i, fmt(s), fmt(a), repr(float(r)), fmt(s2), int(d)])


def actions(n, dim, lo, hi):
    # deterministic, covers clipping: sweeps slightly beyond the bounds
    out = []
    for t in range(n):
        out.append([lo * 1.2 + (hi - lo) * 1.2 * ((0.37 * t + 0.11 * k) % 1.0) for k in range(dim)])
    return out


def mountain_car(x=-0.5, v=0.0, n=300):
    rows = []
    for a in [[0.9 if (t // 40) % 2 else -0.9] for t in range(n)]:
        s = [x, v]
        f = min(max(a[0], -1.0), 1.0)
        v += f * 0.0015 - 0.0025 * math.cos(3 * x)
        v = min(max(v, -0.07), 0.07)
        x = min(max(x + v, -1.2), 0.6)
        if x == -1.2 and v < 0:
            v = 0.0
        done = x >= 0.45 and v >= 0.0
        r = (100.0 if done else 0.0) - 0.1 * f * f
        rows.append((s, [f], r, [x, v], done))
        if done:
            break
    return rows


def pendulum(th=2.5, thdot=0.3, n=60):
    rows = []
    for t, a in enumerate(actions(n, 1, -2.0, 2.0)):
        s = [math.cos(th), math.sin(th), thdot]
        u = min(max(a[0], -2.0), 2.0)
        ang = ((th + math.pi) % (2 * math.pi)) - math.pi
        cost = ang ** 2 + 0.1 * thdot ** 2 + 0.001 * u ** 2
        thdot = min(max(thdot + (15.0 * math.sin(th) + 3.0 * u) * 0.05, -8.0), 8.0)
        th = th + thdot * 0.05
        rows.append((s, [u], -cost, [math.cos(th), math.sin(th), thdot], False))
    return rows


def reacher(n=70):
    x, y = 0.0, 0.0
    rows = []
    for t in range(n):
        a = [1.0, 1.0] if t >= 20 else [-1.3, -0.8]
        a = [min(max(c, -1.0), 1.0) for c in a]
        s = [x, y]
        x = min(max(x + 0.05 * a[0], -2.0), 2.0)
        y = min(max(y + 0.05 * a[1], -2.0), 2.0)
        if math.hypot(x - 1.2, y - 1.2) < 0.15:
            r = 1.0
        elif math.hypot(x + 0.25, y + 0.25) < 0.15:
            r = 0.1
        else:
            r = 0.0
        rows.append((s, a, r, [x, y], False))
    return rows


if __name__ == "__main__":
    write("MountainCarContinuous", mountain_car())
    write("Pendulum", pendulum())
    write("SparseReacher", reacher())
