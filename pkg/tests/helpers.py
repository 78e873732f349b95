"""Random trajectory generators shared by tests."""

import numpy as np

from msoe.oe import TimeDurationGrid, TimeGrid
from msoe.trajectory import Trajectory

STATES = ("1", "2", "3")
MOVES = {"1": ("2", "3"), "2": ("1", "3")}


def random_trajectories(rng, n=100, t_max=45.0, snap=None):
    """Random valid histories over states 1, 2 (transient) and 3 (absorbing).

    With ``snap`` (an array of grid edges) about a third of the times are
    moved onto edges to exercise boundary handling.
    """
    out = []
    for i in range(n):
        R = float(rng.uniform(0.5, t_max))
        k = int(rng.integers(0, 5))
        times = np.sort(rng.uniform(0, R, k))
        if snap is not None:
            hit = rng.random(k) < 0.35
            times[hit] = snap[rng.integers(0, len(snap), hit.sum())]
            times = np.unique(times[times < R])
        state = "1" if rng.random() < 0.8 else "2"
        init = state
        jumps = []
        for t in times:
            if state == "3":
                break
            nxt = MOVES[state][int(rng.integers(0, 2))]
            jumps.append((float(t), state, nxt))
            state = nxt
        out.append(Trajectory(i, init, jumps, R))
    return out


def random_grid(rng):
    t0 = float(rng.choice([0.0, rng.uniform(0, 5)]))
    t_max = float(rng.uniform(15, 45))
    return TimeGrid(t0, t_max, int(rng.integers(1, 50)))


def random_grid2(rng):
    return TimeDurationGrid(random_grid(rng), TimeGrid(0.0, float(rng.uniform(5, 45)), int(rng.integers(1, 20))))
