"""Simulation of censored Markov and semi-Markov jump processes by thinning.

All subjects of a batch are advanced together with numpy.  Each proposal of
subject ``i`` consumes three counter-indexed uniforms from that subject's
key (waiting time, acceptance, destination), so a path depends only on
(master seed, subject id) and never on batch composition or threading.

Bounds come from :func:`~msoe.intensity.local_upper_bound` on look-ahead
windows aligned to multiples of the window width.  For duration-dependent
models the window box also covers the duration range reachable inside the
window.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .intensity import evaluate, local_upper_bound, to_text
from .model import IntensityModel
from .rng import CENSOR_DOMAIN, PATH_DOMAIN, SubjectStream, subject_keys, uniforms
from .trajectory import Cohort, Trajectory

__all__ = [
    "BoundViolation",
    "CensoringSpec",
    "SimConfig",
    "ThinningStats",
    "simulate_path",
    "apply_censoring",
    "draw_censoring",
    "simulate_batch",
    "simulate_cohort",
    "DEFAULT_WINDOW",
]

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 1.0
DEFAULT_CHUNK = 250_000
_SLOTS = 3


class BoundViolation(RuntimeError):
    """An intensity exceeded its thinning bound; signals a bounding bug."""


@dataclass(frozen=True)
class CensoringSpec:
    """Censoring law: ``uniform(lo, hi)``, ``fixed(r)`` or ``none(horizon)``."""

    law: str
    lo: float = 0.0
    hi: float = 0.0
    r: float = 0.0
    horizon: float = 0.0

    def __post_init__(self):
        if self.law == "uniform":
            if not self.lo < self.hi:
                raise ValueError(f"uniform censoring needs lo < hi, got ({self.lo}, {self.hi})")
        elif self.law == "fixed":
            if not self.r > 0:
                raise ValueError(f"fixed censoring time must be positive, got {self.r}")
        elif self.law == "none":
            if not self.horizon > 0:
                raise ValueError(f"administrative horizon must be positive, got {self.horizon}")
        else:
            raise ValueError(f"unknown censoring law {self.law!r}")

    @classmethod
    def uniform(cls, lo, hi):
        return cls("uniform", lo=float(lo), hi=float(hi))

    @classmethod
    def fixed(cls, r):
        return cls("fixed", r=float(r))

    @classmethod
    def none(cls, horizon):
        return cls("none", horizon=float(horizon))

    @property
    def upper(self) -> float:
        return {"uniform": self.hi, "fixed": self.r, "none": self.horizon}[self.law]

    def to_dict(self) -> dict:
        if self.law == "uniform":
            return {"law": "uniform", "lo": self.lo, "hi": self.hi}
        if self.law == "fixed":
            return {"law": "fixed", "r": self.r}
        return {"law": "none", "horizon": self.horizon}


@dataclass(frozen=True)
class SimConfig:
    model: IntensityModel
    initial_state: str
    n: int
    horizon: float
    censoring: CensoringSpec
    master_seed: int
    window: float = DEFAULT_WINDOW

    def __post_init__(self):
        if int(self.n) < 1:
            raise ValueError(f"subject count n must be >= 1, got {self.n}")
        if self.initial_state not in self.model.index:
            raise ValueError(f"initial state {self.initial_state!r} not in the state space")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.horizon < self.censoring.upper:
            raise ValueError(
                f"horizon {self.horizon} is below the censoring upper bound {self.censoring.upper}"
            )
        if not self.window > 0:
            raise ValueError("look-ahead window must be positive")


@dataclass
class ThinningStats:
    proposals: int = 0
    accepted: int = 0
    max_ratio: float = 0.0

    def merge(self, other: "ThinningStats") -> None:
        self.proposals += other.proposals
        self.accepted += other.accepted
        self.max_ratio = max(self.max_ratio, other.max_ratio)


# -- bound tables --------------------------------------------------------------

_BOUND_CACHE: dict = {}


def _bound_tables(model: IntensityModel, window: float, n_windows: int):
    """Exit-intensity bounds per (state, time window[, duration window]).

    Returns ``(table, uses_u)``; ``table`` has shape ``(S, K)`` or
    ``(S, K, K + 2)``.  Absorbing states get 0.
    """
    uses_u = model.kind == "semi_markov" and model.uses_duration
    key = (
        tuple((jk, to_text(e)) for jk, e in sorted(model.transitions.items())),
        model.states,
        uses_u,
        window,
        n_windows,
    )
    if key in _BOUND_CACHE:
        return _BOUND_CACHE[key], uses_u
    S, K = len(model.states), n_windows
    table = np.zeros((S, K, K + 2)) if uses_u else np.zeros((S, K))
    for j in model.states:
        if j in model.absorbing or not model.destinations(j):
            continue
        s = model.index[j]
        expr = model.exit_expression(j)
        for k in range(K):
            t_lo, t_hi = k * window, (k + 1) * window
            if uses_u:
                # duration never exceeds calendar time, so cells l > k + 1 are unreachable
                for l in range(min(k + 2, K + 2)):
                    table[s, k, l] = local_upper_bound(expr, t_lo, t_hi, l * window, (l + 1) * window)
            else:
                table[s, k] = local_upper_bound(expr, t_lo, t_hi)
    _BOUND_CACHE[key] = table
    return table, uses_u


def _rates(model: IntensityModel, state, s, u):
    """Per-destination intensities for subjects in ``state`` at (s, u).

    Returns ``(dest_index_matrix, rate_matrix)`` of shape ``(n, D)`` with
    padding columns of rate 0.
    """
    S = len(model.states)
    dests = [[model.index[k] for k in model.destinations(j)] for j in model.states]
    D = max(1, max(len(d) for d in dests))
    rates = np.zeros((len(state), D))
    dest_idx = np.zeros((len(state), D), dtype=np.int64)
    for si in range(S):
        if not dests[si]:
            continue
        mask = state == si
        if not mask.any():
            continue
        j = model.states[si]
        ss = s[mask]
        uu = u[mask]
        for c, ki in enumerate(dests[si]):
            expr = model.transitions[(j, model.states[ki])]
            rates[mask, c] = evaluate(expr, ss, uu if expr.uses_duration else None)
            dest_idx[mask, c] = ki
    return dest_idx, rates


def simulate_batch(
    model: IntensityModel,
    initial,
    horizons,
    keys,
    window: float = DEFAULT_WINDOW,
    stats: ThinningStats | None = None,
):
    """Simulate one path per key, each stopped at its own horizon.

    Returns ``(row, time, from, to)`` jump arrays ordered by row then time.
    """
    horizons = np.asarray(horizons, dtype=float)
    n = len(horizons)
    keys = np.asarray(keys, dtype=np.uint64)
    initial = np.broadcast_to(np.asarray(initial, dtype=np.int64), (n,)).copy()
    if n == 0:
        e = np.empty(0)
        return e.astype(np.int64), e, e.astype(np.int64), e.astype(np.int64)
    K = max(1, int(math.ceil(float(horizons.max()) / window)))
    table, uses_u = _bound_tables(model, window, K)
    exit_states = np.array(
        [bool(model.destinations(j)) and j not in model.absorbing for j in model.states]
    )

    row = np.flatnonzero(exit_states[initial] & (horizons > 0))
    state = initial[row]
    t = np.zeros(len(row))
    origin = np.zeros(len(row))
    ctr = np.zeros(len(row), dtype=np.uint64)
    wend = np.zeros(len(row))
    bound = np.zeros(len(row))
    need = np.ones(len(row), dtype=bool)
    hor = horizons[row]
    key = keys[row]

    out_row, out_time, out_from, out_to = [], [], [], []
    local = ThinningStats()

    while row.size:
        if need.any():
            idx = np.flatnonzero(need)
            tt = t[idx]
            k = np.floor(tt / window).astype(np.int64)
            k += (k + 1) * window <= tt
            k = np.minimum(k, K - 1)
            wend[idx] = np.minimum((k + 1) * window, hor[idx])
            if uses_u:
                l = np.floor((tt - origin[idx]) / window).astype(np.int64)
                l = np.minimum(l, K)
                bound[idx] = np.maximum(table[state[idx], k, l], table[state[idx], k, l + 1])
            else:
                bound[idx] = table[state[idx], k]
            need[idx] = False

        base = ctr * np.uint64(_SLOTS)
        u1 = uniforms(key, base)
        with np.errstate(divide="ignore"):
            s = t - np.log(u1) / bound
        ctr += np.uint64(1)
        local.proposals += len(row)

        over = s >= wend
        done = over & (wend >= hor)
        adv = over & ~done
        t[adv] = wend[adv]
        need[adv] = True

        prop = np.flatnonzero(~over)
        finished = done
        if prop.size:
            sp = s[prop]
            dest_idx, rates = _rates(model, state[prop], sp, sp - origin[prop])
            cum_all = np.cumsum(rates, axis=1)
            total = cum_all[:, -1]
            ratio = total / bound[prop]
            rmax = float(ratio.max())
            local.max_ratio = max(local.max_ratio, rmax)
            if rmax > 1.0:
                bad = prop[int(np.argmax(ratio))]
                raise BoundViolation(
                    f"thinning bound violated: intensity {total.max():.6g} > bound "
                    f"{bound[bad]:.6g} in state {model.states[state[bad]]} at t={s[bad]:.6g}"
                )
            u2 = uniforms(key[prop], base[prop] + np.uint64(1))
            acc = u2 * bound[prop] < total
            t[prop] = sp
            if acc.any():
                a = prop[acc]
                local.accepted += len(a)
                u3 = uniforms(key[a], base[a] + np.uint64(2)) * total[acc]
                # u3 < total == cum[:, -1], so choice is a valid column with positive rate
                choice = (cum_all[acc] <= u3[:, None]).sum(axis=1)
                to = dest_idx[acc][np.arange(len(a)), choice]
                out_row.append(row[a])
                out_time.append(sp[acc])
                out_from.append(state[a])
                out_to.append(to)
                state[a] = to
                origin[a] = sp[acc]
                need[a] = True
                finished = finished.copy()
                finished[a] = ~exit_states[to]

        keep = ~finished
        if not keep.all():
            row, state, t, origin, ctr = row[keep], state[keep], t[keep], origin[keep], ctr[keep]
            wend, bound, need, hor, key = wend[keep], bound[keep], need[keep], hor[keep], key[keep]

    if stats is not None:
        stats.merge(local)
    if not out_row:
        e = np.empty(0)
        return e.astype(np.int64), e, e.astype(np.int64), e.astype(np.int64)
    r = np.concatenate(out_row)
    order = np.argsort(r, kind="stable")
    return (
        r[order],
        np.concatenate(out_time)[order],
        np.concatenate(out_from)[order],
        np.concatenate(out_to)[order],
    )


def _to_cohort(model, ids, initial, censor, jr, jt, jf, jto) -> Cohort:
    counts = np.bincount(jr, minlength=len(ids))
    return Cohort(
        states=model.states,
        subject_ids=ids,
        initial=np.broadcast_to(initial, (len(ids),)),
        censor=censor,
        offsets=np.concatenate([[0], np.cumsum(counts)]),
        jump_time=jt,
        jump_from=jf,
        jump_to=jto,
        absorbing=model.absorbing,
        transitions=tuple(model.transition_list),
    )


def simulate_path(
    model: IntensityModel,
    initial: str,
    horizon: float,
    stream: SubjectStream,
    window: float = DEFAULT_WINDOW,
) -> Trajectory:
    """Uncensored path on ``[0, horizon]``; ``censor_time`` is set to ``horizon``."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if initial not in model.index:
        raise ValueError(f"unknown initial state {initial!r}")
    jr, jt, jf, jto = simulate_batch(
        model, model.index[initial], [horizon], [stream.key], window=window
    )
    st = model.states
    jumps = tuple((float(a), st[b], st[c]) for a, b, c in zip(jt, jf, jto))
    return Trajectory(stream.subject_id, initial, jumps, float(horizon))


def draw_censoring(spec: CensoringSpec, master_seed: int, subject_ids) -> np.ndarray:
    """Censoring times for the given subjects from their censoring streams."""
    ids = np.asarray(subject_ids, dtype=np.int64)
    if spec.law == "fixed":
        return np.full(len(ids), spec.r)
    if spec.law == "none":
        return np.full(len(ids), spec.horizon)
    keys = subject_keys(master_seed, ids, CENSOR_DOMAIN)
    return spec.lo + (spec.hi - spec.lo) * uniforms(keys, np.zeros(len(ids), dtype=np.uint64))


def apply_censoring(traj: Trajectory, spec: CensoringSpec, stream: SubjectStream | None = None) -> Trajectory:
    """Draw ``R`` (uniform law only needs ``stream``) and truncate jumps at ``R``."""
    if spec.law == "uniform":
        if stream is None:
            raise ValueError("uniform censoring needs a random stream")
        r = spec.lo + (spec.hi - spec.lo) * stream.uniform()
    else:
        r = spec.upper
    r = min(r, traj.censor_time)
    jumps = tuple(j for j in traj.jumps if j[0] < r)
    return Trajectory(traj.subject_id, traj.initial_state, jumps, r)


def simulate_cohort(
    config: SimConfig,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
    stats: ThinningStats | None = None,
    id_offset: int = 0,
) -> Cohort:
    """Simulate ``config.n`` iid censored subjects.

    Subject ``i`` is driven by keys derived from ``(master_seed, i)``.  The
    censoring time is drawn from its own stream, so simulating each path
    only up to its censoring time gives exactly the truncation of the path
    simulated to the full horizon.
    """
    config.model.validate(config.horizon)
    ids = np.arange(id_offset, id_offset + int(config.n), dtype=np.int64)
    censor = draw_censoring(config.censoring, config.master_seed, ids)
    init = config.model.index[config.initial_state]
    bounds = list(range(0, len(ids), chunk_size)) + [len(ids)]
    spans = list(zip(bounds[:-1], bounds[1:]))

    def run(span):
        lo, hi = span
        st = ThinningStats()
        keys = subject_keys(config.master_seed, ids[lo:hi], PATH_DOMAIN)
        jr, jt, jf, jto = simulate_batch(
            config.model, init, censor[lo:hi], keys, window=config.window, stats=st
        )
        return _to_cohort(config.model, ids[lo:hi], init, censor[lo:hi], jr, jt, jf, jto), st

    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, spans))
    else:
        results = [run(sp) for sp in spans]
    if stats is not None:
        for _, st in results:
            stats.merge(st)
    return Cohort.concat([c for c, _ in results])


def simulate_many(model, initial_state, seeds, n, censoring, window=DEFAULT_WINDOW) -> Cohort:
    """Several independent cohorts of size ``n`` in one batch.

    ``seeds[r]`` is the master seed of replication ``r``; subjects of
    replication ``r`` keep ids ``0..n-1`` within that seed, so each block is
    bit-identical to ``simulate_cohort`` with that seed.  Rows are ordered by
    replication.
    """
    seeds = [int(s) for s in seeds]
    reps = len(seeds)
    ids = np.tile(np.arange(n, dtype=np.int64), reps)
    censor = np.concatenate([draw_censoring(censoring, s, np.arange(n)) for s in seeds])
    seed_arr = np.repeat(np.array([s & ((1 << 64) - 1) for s in seeds], dtype=np.uint64), n)
    keys = subject_keys(seed_arr, ids, PATH_DOMAIN)
    init = model.index[initial_state]
    jr, jt, jf, jto = simulate_batch(model, init, censor, keys, window=window)
    return _to_cohort(model, ids, init, censor, jr, jt, jf, jto)
