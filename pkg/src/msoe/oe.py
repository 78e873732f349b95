"""Occurrence/exposure aggregation on equidistant grids and OE rate estimates.

Exposure is computed by exact interval intersection of sojourn segments with
the grid cells; no sub-sampling of time is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .trajectory import Cohort, Trajectory

__all__ = [
    "GridError",
    "TimeGrid",
    "TimeDurationGrid",
    "OETable",
    "OETable2D",
    "RateFit",
    "aggregate_1d",
    "aggregate_2d",
    "oe_rates",
    "rate_ci_theorem_scale",
    "occupation_probability",
    "diagonal_slice",
    "subject_contributions",
    "as_cohort",
]


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """``M`` right-open bins of width ``delta`` covering ``[t0, t_max)``."""

    t0: float
    t_max: float
    M: int

    def __post_init__(self):
        if int(self.M) < 1 or int(self.M) != self.M:
            raise GridError(f"bin count must be a positive integer, got {self.M}")
        if not self.t_max > self.t0:
            raise GridError(f"grid needs t_max > t0, got [{self.t0}, {self.t_max}]")
        object.__setattr__(self, "M", int(self.M))

    @property
    def delta(self) -> float:
        return (self.t_max - self.t0) / self.M

    @property
    def edges(self) -> np.ndarray:
        e = self.t0 + self.delta * np.arange(self.M + 1)
        e[-1] = self.t_max
        return e

    @property
    def midpoints(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    def bin_of(self, t) -> np.ndarray | int:
        """Index of the right-open bin containing ``t``; -1 outside the grid."""
        e = self.edges
        m = np.searchsorted(e, t, side="right") - 1
        m = np.where((m < 0) | (m >= self.M), -1, m)
        return int(m) if np.ndim(m) == 0 else m

    @classmethod
    def with_width(cls, t0: float, t_max: float, delta: float) -> "TimeGrid":
        M = int(round((t_max - t0) / delta))
        if M < 1 or abs(M * delta - (t_max - t0)) > 1e-9 * max(1.0, abs(t_max - t0)):
            raise GridError(f"width {delta} does not divide [{t0}, {t_max}]")
        return cls(t0, t_max, M)


@dataclass(frozen=True)
class TimeDurationGrid:
    time: TimeGrid
    duration: TimeGrid

    @property
    def shape(self) -> tuple[int, int]:
        return self.time.M, self.duration.M


def _transitions_for(cohort: Cohort, transitions) -> list[tuple[str, str]]:
    if transitions is not None:
        trans = [(str(j), str(k)) for j, k in transitions]
    elif cohort.transitions is not None:
        trans = list(cohort.transitions)
    else:
        pairs = sorted(set(zip(cohort.jump_from.tolist(), cohort.jump_to.tolist())))
        trans = [(cohort.states[a], cohort.states[b]) for a, b in pairs]
    for j, k in trans:
        if j not in cohort.index or k not in cohort.index:
            raise GridError(f"transition {j}->{k} uses a state outside {cohort.states}")
    return trans


@dataclass
class OETable:
    """Occurrences per (transition, bin) and exposures per (state, bin)."""

    grid: TimeGrid
    states: tuple[str, ...]
    transitions: list[tuple[str, str]]
    occurrence: np.ndarray
    exposure: np.ndarray
    n_subjects: int

    def O(self, j: str, k: str) -> np.ndarray:
        return self.occurrence[self.transitions.index((j, k))]

    def E(self, j: str) -> np.ndarray:
        return self.exposure[self.states.index(j)]

    def __add__(self, other: "OETable") -> "OETable":
        if (self.grid, self.states, self.transitions) != (other.grid, other.states, other.transitions):
            raise GridError("tables over different grids or transitions cannot be merged")
        return type(self)(
            self.grid,
            self.states,
            self.transitions,
            self.occurrence + other.occurrence,
            self.exposure + other.exposure,
            self.n_subjects + other.n_subjects,
        )


@dataclass
class OETable2D(OETable):
    """As :class:`OETable`, with a trailing duration axis on both arrays."""

    grid: TimeDurationGrid


@dataclass
class RateFit:
    """Piecewise-constant intensity estimates per transition.

    ``rate`` is NaN in undefined cells (zero exposure); the interval arrays
    are NaN there too.  ``occurrence``/``exposure`` hold the (possibly
    pooled) counts each rate was computed from.
    """

    grid: TimeGrid | TimeDurationGrid
    transitions: list[tuple[str, str]]
    rate: np.ndarray
    variance: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    occurrence: np.ndarray
    exposure: np.ndarray
    method: str = "oe"
    level: float = 0.95
    heuristic: bool = False
    meta: dict = field(default_factory=dict)

    def index(self, transition) -> int:
        return self.transitions.index(tuple(map(str, transition)))

    def at(self, transition, t: float, u: float | None = None) -> float:
        """Fitted step function at ``t`` (and ``u`` on 2D grids); NaN if undefined."""
        i = self.index(transition)
        if isinstance(self.grid, TimeDurationGrid):
            m1, m2 = self.grid.time.bin_of(t), self.grid.duration.bin_of(u)
            if m1 < 0 or m2 < 0:
                return float("nan")
            return float(self.rate[i, m1, m2])
        m = self.grid.bin_of(t)
        return float("nan") if m < 0 else float(self.rate[i, m])


# -- aggregation -------------------------------------------------------------


def as_cohort(cohort, states=None, absorbing=()) -> Cohort:
    if isinstance(cohort, Cohort):
        return cohort
    cohort = list(cohort)
    if cohort and not isinstance(cohort[0], Trajectory):
        raise TypeError("expected a Cohort or a sequence of Trajectory")
    return Cohort.from_trajectories(cohort, states=states, absorbing=absorbing)


def _split(a, b, edges):
    """Split intervals ``[a, b)`` at ``edges``.

    Returns ``(owner, bin, lo, hi)`` for every (interval, bin) pair that the
    interval may overlap; lengths ``hi - lo`` can be <= 0 only through
    rounding at a boundary.
    """
    a = np.maximum(a, edges[0])
    b = np.minimum(b, edges[-1])
    ok = np.flatnonzero(b > a)
    a, b = a[ok], b[ok]
    M = len(edges) - 1
    ma = np.clip(np.searchsorted(edges, a, side="right") - 1, 0, M - 1)
    mb = np.clip(np.searchsorted(edges, b, side="left") - 1, 0, M - 1)
    cnt = np.maximum(mb - ma + 1, 1)
    rep = np.repeat(np.arange(len(a)), cnt)
    step = np.arange(rep.size) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    m = ma[rep] + step
    lo = np.maximum(a[rep], edges[m])
    hi = np.minimum(b[rep], edges[m + 1])
    return ok[rep], m, lo, hi


def _transition_codes(cohort: Cohort, trans):
    S = len(cohort.states)
    code = np.full(S * S, -1, dtype=np.int64)
    for i, (j, k) in enumerate(trans):
        code[cohort.index[j] * S + cohort.index[k]] = i
    return code[cohort.jump_from * S + cohort.jump_to]


def _previous_jump_time(cohort: Cohort) -> np.ndarray:
    """Calendar time at which the sojourn ending in each jump started."""
    prev = np.zeros(len(cohort.jump_time))
    if len(prev):
        prev[1:] = cohort.jump_time[:-1]
        first = cohort.offsets[:-1][cohort.n_jumps > 0]
        prev[first] = 0.0
    return prev


def _transient_mask(cohort: Cohort) -> np.ndarray:
    mask = np.ones(len(cohort.states), dtype=bool)
    mask[cohort.absorbing_index] = False
    return mask


def aggregate_1d(cohort, grid: TimeGrid, transitions=None) -> OETable:
    """Occurrence and exposure per bin.

    Exposure is recorded for transient states only; time spent in an
    absorbing state is not at risk of any transition.
    """
    cohort = as_cohort(cohort)
    trans = _transitions_for(cohort, transitions)
    S, M, T = len(cohort.states), grid.M, len(trans)
    edges = grid.edges

    occ = np.zeros((T, M), dtype=np.int64)
    if len(cohort.jump_time):
        code = _transition_codes(cohort, trans)
        m = grid.bin_of(cohort.jump_time)
        keep = (code >= 0) & (m >= 0)
        occ += np.bincount(code[keep] * M + m[keep], minlength=T * M).reshape(T, M)

    _, start, end, state = cohort.segments()
    transient = _transient_mask(cohort)[state]
    owner, m, lo, hi = _split(start[transient], end[transient], edges)
    length = np.maximum(hi - lo, 0.0)
    st = state[transient][owner]
    exp = np.bincount(st * M + m, weights=length, minlength=S * M).reshape(S, M)
    return OETable(grid, cohort.states, trans, occ, exp, len(cohort))


def aggregate_2d(cohort, grid2: TimeDurationGrid, transitions=None) -> OETable2D:
    """Occurrence and exposure per (time bin, duration bin) box.

    Duration is time since the last jump (since entry at 0 before the first
    jump).  Along a sojourn the duration grows at unit rate, so each box
    intersection is an interval in calendar time.
    """
    cohort = as_cohort(cohort)
    trans = _transitions_for(cohort, transitions)
    S, T = len(cohort.states), len(trans)
    M1, M2 = grid2.shape
    tg, ug = grid2.time, grid2.duration
    uedges = ug.edges

    occ = np.zeros((T, M1, M2), dtype=np.int64)
    if len(cohort.jump_time):
        code = _transition_codes(cohort, trans)
        m1 = tg.bin_of(cohort.jump_time)
        m2 = ug.bin_of(cohort.jump_time - _previous_jump_time(cohort))
        keep = (code >= 0) & (m1 >= 0) & (m2 >= 0)
        flat = (code[keep] * M1 + m1[keep]) * M2 + m2[keep]
        occ += np.bincount(flat, minlength=T * M1 * M2).reshape(T, M1, M2)

    _, start, end, state = cohort.segments()
    transient = _transient_mask(cohort)[state]
    start, end, state = start[transient], end[transient], state[transient]
    own1, m1, lo1, hi1 = _split(start, end, tg.edges)
    origin = start[own1]
    # duration pieces, split in duration coordinates then mapped back to calendar time
    own2, m2, _, _ = _split(lo1 - origin, hi1 - origin, uedges)
    origin2 = origin[own2]
    lo = np.maximum(lo1[own2], origin2 + uedges[m2])
    hi = np.minimum(hi1[own2], origin2 + uedges[m2 + 1])
    length = np.maximum(hi - lo, 0.0)
    flat = (state[own1][own2] * M1 + m1[own2]) * M2 + m2
    exp = np.bincount(flat, weights=length, minlength=S * M1 * M2).reshape(S, M1, M2)
    return OETable2D(grid2, cohort.states, trans, occ, exp, len(cohort))


def subject_contributions(cohort, j: str, k: str, t_lo: float, t_hi: float, u_lo=None, u_hi=None):
    """Per-subject occurrence ``X_i`` and exposure ``Y_i`` in one cell.

    The cell is ``[t_lo, t_hi)`` in calendar time, optionally intersected
    with durations in ``[u_lo, u_hi)``.  Summing over subjects gives the
    cell's entries of :func:`aggregate_1d` / :func:`aggregate_2d`.
    """
    cohort = as_cohort(cohort)
    n = len(cohort)
    ji, ki = cohort.index[j], cohort.index[k]
    use_u = u_lo is not None
    sel = (cohort.jump_from == ji) & (cohort.jump_to == ki)
    sel &= (cohort.jump_time >= t_lo) & (cohort.jump_time < t_hi)
    if use_u:
        dur = cohort.jump_time - _previous_jump_time(cohort)
        sel &= (dur >= u_lo) & (dur < u_hi)
    X = np.bincount(cohort.jump_subject()[sel], minlength=n)

    row, start, end, state = cohort.segments()
    keep = state == ji
    row, start, end = row[keep], start[keep], end[keep]
    lo = np.maximum(start, t_lo)
    hi = np.minimum(end, t_hi)
    if use_u:
        lo = np.maximum(lo, start + u_lo)
        hi = np.minimum(hi, start + u_hi)
    Y = np.bincount(row, weights=np.maximum(hi - lo, 0.0), minlength=n)
    return X, Y


# -- estimation ---------------------------------------------------------------


def _z(level: float) -> float:
    if not 0 < level < 1:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    return float(norm.ppf(0.5 + level / 2))


def wald_bounds(rate, occurrence, exposure, level=0.95, scale="linear"):
    """Interval bounds for OE rates; NaN where ``exposure == 0``."""
    z = _z(level)
    O = np.asarray(occurrence, dtype=float)
    E = np.asarray(exposure, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        sd = np.sqrt(O) / E
        if scale == "linear":
            lo = np.maximum(rate - z * sd, 0.0)
            hi = rate + z * sd
        elif scale == "log":
            half = np.where(O > 0, z / np.sqrt(O), 0.0)
            lo = rate * np.exp(-half)
            hi = rate * np.exp(half)
        else:
            raise ValueError(f"interval scale must be 'linear' or 'log', got {scale!r}")
    undefined = ~(E > 0)
    lo = np.where(undefined, np.nan, lo)
    hi = np.where(undefined, np.nan, hi)
    return lo, hi


def oe_rates(table: OETable, level: float = 0.95, scale: str = "linear") -> RateFit:
    """OE rates ``O/E`` with plug-in variance ``O/E**2`` and Wald intervals."""
    O = table.occurrence.astype(float)
    E = np.stack([table.E(j) for j, _ in table.transitions]) if table.transitions else O * 0
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = np.where(E > 0, O / E, np.nan)
        var = np.where(E > 0, O / E**2, np.nan)
    lo, hi = wald_bounds(rate, O, E, level, scale)
    return RateFit(
        grid=table.grid,
        transitions=list(table.transitions),
        rate=rate,
        variance=var,
        ci_lo=lo,
        ci_hi=hi,
        occurrence=table.occurrence.copy(),
        exposure=E,
        method="oe",
        level=level,
        meta={"n_subjects": table.n_subjects, "interval_scale": scale},
    )


def rate_ci_theorem_scale(fit: RateFit, t: float, n: int, transition=None) -> float:
    """Plug-in limit variance ``mu_hat / p_hat`` of ``sqrt(n*delta)*(mu_hat - mu)``,
    with ``p_hat = E / (n * delta)`` from the bin containing ``t``."""
    if not isinstance(fit.grid, TimeGrid):
        raise GridError("theorem-scale variance is defined for 1D time grids")
    i = 0 if transition is None else fit.index(transition)
    m = fit.grid.bin_of(t)
    if m < 0:
        raise GridError(f"t={t} outside the grid [{fit.grid.t0}, {fit.grid.t_max})")
    E = fit.exposure[i, m]
    if not E > 0:
        raise GridError(f"bin {m} containing t={t} has no exposure")
    p_hat = E / (n * fit.grid.delta)
    return float(fit.rate[i, m] / p_hat)


def occupation_probability(cohort, j: str, t: float) -> float:
    """Fraction of subjects in state ``j`` at time ``t`` and still uncensored."""
    cohort = as_cohort(cohort)
    if j not in cohort.index:
        raise KeyError(f"state {j!r} not in {cohort.states}")
    if len(cohort) == 0:
        return float("nan")
    z = cohort.state_at(t)
    return float(np.mean((z == cohort.index[j]) & (cohort.censor >= t)))


def diagonal_slice(fit: RateFit, d: float, transition=None) -> list[tuple[float, float]]:
    """Fitted surface along ``t - u = d`` at time-bin midpoints.

    Points outside the duration grid, outside the admissible region or in
    undefined boxes are skipped.
    """
    if not isinstance(fit.grid, TimeDurationGrid):
        raise GridError("diagonal slices need a time-duration grid")
    if d < 0:
        raise ValueError(f"offset d must be nonnegative, got {d}")
    i = 0 if transition is None else fit.index(transition)
    out = []
    for m1, tm in enumerate(fit.grid.time.midpoints):
        u = tm - d
        if u < 0:
            continue
        m2 = fit.grid.duration.bin_of(u)
        if m2 < 0:
            continue
        r = fit.rate[i, m1, m2]
        if np.isnan(r):
            continue
        out.append((float(tm), float(r)))
    return out
