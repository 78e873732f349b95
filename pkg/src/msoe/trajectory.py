"""Censored event histories: single trajectories and array-backed cohorts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = ["TrajectoryError", "Trajectory", "Cohort"]


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    """One subject's history: initial state, ordered jumps ``(time, from, to)``
    and the censoring time.  Subjects enter at time 0."""

    subject_id: int
    initial_state: str
    jumps: tuple[tuple[float, str, str], ...]
    censor_time: float

    def __post_init__(self):
        object.__setattr__(
            self, "jumps", tuple((float(t), str(a), str(b)) for t, a, b in self.jumps)
        )

    def validate(self, absorbing: Iterable[str] = ()) -> None:
        absorbing = set(absorbing)
        current = self.initial_state
        last = -np.inf
        for time, a, b in self.jumps:
            if not time > last:
                raise TrajectoryError(f"subject {self.subject_id}: jump times not increasing at {time}")
            if time < 0:
                raise TrajectoryError(f"subject {self.subject_id}: negative jump time {time}")
            if a != current:
                raise TrajectoryError(
                    f"subject {self.subject_id}: jump at {time} leaves {a} but current state is {current}"
                )
            if a == b:
                raise TrajectoryError(f"subject {self.subject_id}: self transition {a}->{b} at {time}")
            if a in absorbing:
                raise TrajectoryError(f"subject {self.subject_id}: jump out of absorbing state {a}")
            current, last = b, time
        if not self.censor_time > last:
            raise TrajectoryError(
                f"subject {self.subject_id}: jump at {last} not before censor time {self.censor_time}"
            )

    def state_at(self, t: float) -> str:
        """State at time ``t`` (right-continuous: the state after a jump at ``t``)."""
        state = self.initial_state
        for time, _, b in self.jumps:
            if time <= t:
                state = b
            else:
                break
        return state


@dataclass(frozen=True, eq=False)
class Cohort:
    """Column-oriented storage for many trajectories.

    Jumps of subject ``i`` occupy ``offsets[i]:offsets[i + 1]`` of the jump
    arrays.  States are stored as dense indices into ``states``.
    """

    states: tuple[str, ...]
    subject_ids: np.ndarray
    initial: np.ndarray
    censor: np.ndarray
    offsets: np.ndarray
    jump_time: np.ndarray
    jump_from: np.ndarray
    jump_to: np.ndarray
    absorbing: frozenset[str] = frozenset()
    transitions: tuple[tuple[str, str], ...] | None = None
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "index", {s: i for i, s in enumerate(self.states)})
        object.__setattr__(self, "absorbing", frozenset(self.absorbing))
        for name, dtype in [
            ("subject_ids", np.int64),
            ("initial", np.int64),
            ("censor", np.float64),
            ("offsets", np.int64),
            ("jump_time", np.float64),
            ("jump_from", np.int64),
            ("jump_to", np.int64),
        ]:
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=dtype))
        if self.offsets.shape != (len(self.subject_ids) + 1,):
            raise TrajectoryError("offsets must have length n_subjects + 1")

    def __len__(self) -> int:
        return len(self.subject_ids)

    @property
    def n_jumps(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def absorbing_index(self) -> np.ndarray:
        return np.array(sorted(self.index[s] for s in self.absorbing), dtype=np.int64)

    def trajectory(self, i: int) -> Trajectory:
        lo, hi = self.offsets[i], self.offsets[i + 1]
        st = self.states
        jumps = tuple(
            (float(self.jump_time[q]), st[self.jump_from[q]], st[self.jump_to[q]])
            for q in range(lo, hi)
        )
        return Trajectory(int(self.subject_ids[i]), st[self.initial[i]], jumps, float(self.censor[i]))

    def trajectories(self) -> list[Trajectory]:
        return [self.trajectory(i) for i in range(len(self))]

    @classmethod
    def from_trajectories(
        cls,
        trajectories: Sequence[Trajectory],
        states: Sequence[str] | None = None,
        absorbing: Iterable[str] = (),
        transitions=None,
    ) -> "Cohort":
        if states is None:
            seen: dict[str, None] = {}
            for tr in trajectories:
                seen.setdefault(tr.initial_state)
                for _, a, b in tr.jumps:
                    seen.setdefault(a)
                    seen.setdefault(b)
            states = sorted(seen)
        index = {s: i for i, s in enumerate(states)}
        try:
            initial = [index[tr.initial_state] for tr in trajectories]
            jf = [index[a] for tr in trajectories for _, a, _ in tr.jumps]
            jt = [index[b] for tr in trajectories for _, _, b in tr.jumps]
        except KeyError as exc:
            raise TrajectoryError(f"unknown state label {exc.args[0]!r}") from None
        counts = [len(tr.jumps) for tr in trajectories]
        return cls(
            states=tuple(states),
            subject_ids=[tr.subject_id for tr in trajectories],
            initial=initial,
            censor=[tr.censor_time for tr in trajectories],
            offsets=np.concatenate([[0], np.cumsum(counts, dtype=np.int64)]),
            jump_time=[t for tr in trajectories for t, _, _ in tr.jumps],
            jump_from=jf,
            jump_to=jt,
            absorbing=absorbing,
            transitions=None if transitions is None else tuple(transitions),
        )

    @classmethod
    def concat(cls, parts: Sequence["Cohort"]) -> "Cohort":
        first = parts[0]
        offsets = [np.zeros(1, dtype=np.int64)]
        base = 0
        for p in parts:
            if p.states != first.states:
                raise TrajectoryError("cannot concatenate cohorts over different state spaces")
            offsets.append(p.offsets[1:] + base)
            base += p.offsets[-1]
        return cls(
            states=first.states,
            subject_ids=np.concatenate([p.subject_ids for p in parts]),
            initial=np.concatenate([p.initial for p in parts]),
            censor=np.concatenate([p.censor for p in parts]),
            offsets=np.concatenate(offsets),
            jump_time=np.concatenate([p.jump_time for p in parts]),
            jump_from=np.concatenate([p.jump_from for p in parts]),
            jump_to=np.concatenate([p.jump_to for p in parts]),
            absorbing=first.absorbing,
            transitions=first.transitions,
        )

    def subset(self, rows) -> "Cohort":
        rows = np.asarray(rows, dtype=np.int64)
        counts = self.n_jumps[rows]
        starts = self.offsets[rows]
        q = np.repeat(starts - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts) + np.arange(
            counts.sum()
        )
        return Cohort(
            states=self.states,
            subject_ids=self.subject_ids[rows],
            initial=self.initial[rows],
            censor=self.censor[rows],
            offsets=np.concatenate([[0], np.cumsum(counts)]),
            jump_time=self.jump_time[q],
            jump_from=self.jump_from[q],
            jump_to=self.jump_to[q],
            absorbing=self.absorbing,
            transitions=self.transitions,
        )

    def jump_subject(self) -> np.ndarray:
        """Row index of the subject owning each jump."""
        return np.repeat(np.arange(len(self)), self.n_jumps)

    def segments(self):
        """Sojourn segments ``[start, end)`` per subject, cut at the censor time.

        Returns ``(row, start, end, state)``.  Duration within a segment is
        ``time - start``; before the first jump it equals calendar time since
        subjects enter at 0.
        """
        n = len(self)
        counts = self.n_jumps
        first = self.offsets[:-1] + np.arange(n)
        total = n + len(self.jump_time)
        row = np.repeat(np.arange(n), counts + 1)
        start = np.empty(total)
        state = np.empty(total, dtype=np.int64)
        start[first] = 0.0
        state[first] = self.initial
        jpos = np.arange(len(self.jump_time)) + self.jump_subject() + 1
        start[jpos] = self.jump_time
        state[jpos] = self.jump_to
        end = np.empty(total)
        end[:-1] = start[1:]
        last = first + counts
        end[last] = self.censor
        return row, start, end, state

    def state_at(self, t: float) -> np.ndarray:
        """State index of each subject at time ``t`` (right-continuous)."""
        state = self.initial.copy()
        mask = self.jump_time <= t
        if mask.any():
            owner = self.jump_subject()[mask]
            # jumps are time-ordered within a subject, so the last write wins
            state[owner] = self.jump_to[mask]
        return state

    def validate(self) -> None:
        """Check the trajectory invariants on every subject (vectorized)."""
        n = len(self)
        if np.any(np.diff(self.offsets) < 0):
            raise TrajectoryError("offsets must be non-decreasing")
        owner = self.jump_subject()
        first_jump = self.offsets[:-1][self.n_jumps > 0]
        prev_to = np.empty(len(self.jump_time), dtype=np.int64)
        prev_time = np.full(len(self.jump_time), -np.inf)
        if len(self.jump_time):
            prev_to[1:] = self.jump_to[:-1]
            prev_time[1:] = self.jump_time[:-1]
            prev_to[first_jump] = self.initial[owner[first_jump]]
            prev_time[first_jump] = -np.inf
        bad = np.flatnonzero(self.jump_from != prev_to)
        if bad.size:
            q = bad[0]
            raise TrajectoryError(f"subject {self.subject_ids[owner[q]]}: chain broken at jump time {self.jump_time[q]}")
        bad = np.flatnonzero(~(self.jump_time > prev_time) | (self.jump_time < 0))
        if bad.size:
            raise TrajectoryError(f"subject {self.subject_ids[owner[bad[0]]]}: jump times not increasing")
        bad = np.flatnonzero(self.jump_from == self.jump_to)
        if bad.size:
            raise TrajectoryError(f"subject {self.subject_ids[owner[bad[0]]]}: self transition")
        if self.absorbing:
            bad = np.flatnonzero(np.isin(self.jump_from, self.absorbing_index))
            if bad.size:
                raise TrajectoryError(f"subject {self.subject_ids[owner[bad[0]]]}: jump out of absorbing state")
        if n and len(self.jump_time):
            last = self.offsets[1:][self.n_jumps > 0] - 1
            bad = np.flatnonzero(~(self.jump_time[last] < self.censor[owner[last]]))
            if bad.size:
                raise TrajectoryError(f"subject {self.subject_ids[owner[last[bad[0]]]]}: jump at or after censor time")
