"""Event-history CSV ingestion and CSV/JSON output.

All writers use LF line endings, '.' as decimal separator and a fixed column
order.  Floats are written in shortest round-trip form, undefined values as
``NA``; event times use 9 significant digits.
"""

from __future__ import annotations

import csv
import json
import math
import os
import platform
import sys
from typing import Iterable, Sequence

import numpy as np

from .oe import OETable, RateFit, TimeDurationGrid, as_cohort
from .trajectory import Cohort, Trajectory, TrajectoryError

__all__ = [
    "IngestError",
    "CENS",
    "fmt",
    "write_csv",
    "write_events",
    "ingest_events",
    "read_cohort",
    "write_oe_table",
    "write_ratefit",
    "write_lasso_summary",
    "write_manifest",
    "transition_label",
]

CENS = "CENS"
EVENT_HEADER = ("id", "time", "from", "to")
TIME_DIGITS = 9


class IngestError(ValueError):
    """Malformed event-history file; carries the line and subject id."""

    def __init__(self, message: str, line: int, subject_id=None, path: str = ""):
        self.line = line
        self.subject_id = subject_id
        where = f"{path}:{line}" if path else f"line {line}"
        who = f" (id {subject_id})" if subject_id is not None else ""
        super().__init__(f"{where}{who}: {message}")


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "NA"
    return repr(x)


def transition_label(jk) -> str:
    return f"{jk[0]}->{jk[1]}"


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return path


# -- event histories ----------------------------------------------------------


def _event_rows(cohort: Cohort, digits: int):
    cohort = as_cohort(cohort)
    st = cohort.states
    end_state = cohort.state_at(np.inf)
    for i in range(len(cohort)):
        sid = str(int(cohort.subject_ids[i]))
        for q in range(cohort.offsets[i], cohort.offsets[i + 1]):
            yield sid, f"{cohort.jump_time[q]:.{digits}g}", st[cohort.jump_from[q]], st[cohort.jump_to[q]]
        yield sid, f"{cohort.censor[i]:.{digits}g}", st[end_state[i]], CENS


def write_events(cohort, path: str, digits: int = TIME_DIGITS) -> str:
    """Export ``id,time,from,to`` rows: one per jump and a final ``CENS`` row
    per subject at its censoring time (``from`` is the state occupied then)."""
    return write_csv(path, EVENT_HEADER, _event_rows(cohort, digits))


def ingest_events(path: str) -> list[Trajectory]:
    """Stream an event-history CSV into trajectories.

    Rows must be sorted by (id, time); every id needs a chain of jumps whose
    ``from`` matches the current state and exactly one terminal ``CENS`` row.
    The first row of an id fixes its initial state.  Ids are integers.
    """
    out: list[Trajectory] = []
    seen: set[int] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("empty file, expected header id,time,from,to", 1, path=path) from None
        if tuple(h.strip() for h in header) != EVENT_HEADER:
            raise IngestError(f"header must be id,time,from,to, got {','.join(header)}", 1, path=path)
        cur_id = None
        state = initial = None
        jumps: list = []
        last_time = -math.inf
        closed = True
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise IngestError(f"expected 4 fields, got {len(row)}", line, path=path)
            raw_id, raw_t, a, b = (c.strip() for c in row)
            try:
                sid = int(raw_id)
            except ValueError:
                raise IngestError(f"id {raw_id!r} is not an integer", line, path=path) from None
            try:
                t = float(raw_t)
            except ValueError:
                raise IngestError(f"time {raw_t!r} is not a number", line, sid, path) from None
            if not math.isfinite(t) or t < 0:
                raise IngestError(f"time {raw_t} must be finite and nonnegative", line, sid, path)
            if sid != cur_id:
                if not closed:
                    raise IngestError("previous subject has no CENS row", line, cur_id, path)
                if sid in seen or (cur_id is not None and sid < cur_id):
                    raise IngestError("unsorted input: ids must be increasing and contiguous", line, sid, path)
                seen.add(sid)
                cur_id, state, jumps, last_time, closed = sid, a, [], -math.inf, False
                initial = a
            elif closed:
                if b == CENS:
                    raise IngestError("duplicate CENS row", line, sid, path)
                raise IngestError("row after the CENS row", line, sid, path)
            if a == CENS:
                raise IngestError("'from' cannot be CENS", line, sid, path)
            if a != state:
                raise IngestError(f"inconsistent chain: from={a} but current state is {state}", line, sid, path)
            if not t > last_time:
                raise IngestError(f"unsorted input: time {raw_t} not after {last_time}", line, sid, path)
            if b == CENS:
                out.append(Trajectory(sid, initial, tuple(jumps), t))
                closed = True
            else:
                if a == b:
                    raise IngestError(f"self transition {a}->{b}", line, sid, path)
                jumps.append((t, a, b))
                state = b
            last_time = t
        if not closed:
            raise IngestError("last subject has no CENS row", reader.line_num, cur_id, path)
    return out


def read_cohort(path: str, states=None, absorbing=(), transitions=None) -> Cohort:
    """Ingest a file and pack it as a cohort; jumps out of absorbing states
    are rejected."""
    trajs = ingest_events(path)
    try:
        cohort = Cohort.from_trajectories(trajs, states=states, absorbing=absorbing, transitions=transitions)
        cohort.validate()
    except TrajectoryError as exc:
        raise IngestError(str(exc), 0, path=path) from None
    return cohort


# -- tables and fits ----------------------------------------------------------------


def write_oe_table(table: OETable, path: str) -> str:
    """``transition,bin_index,t_lo,t_hi,occurrence,exposure`` (plus
    ``u_lo,u_hi`` on time-duration grids); exposure is that of the origin
    state."""
    two_d = isinstance(table.grid, TimeDurationGrid)
    header = ["transition", "bin_index", "t_lo", "t_hi"]
    if two_d:
        header += ["u_lo", "u_hi"]
    header += ["occurrence", "exposure"]

    def rows():
        for i, (j, k) in enumerate(table.transitions):
            E = table.E(j)
            if two_d:
                te, ue = table.grid.time.edges, table.grid.duration.edges
                for m1 in range(len(te) - 1):
                    for m2 in range(len(ue) - 1):
                        yield (transition_label((j, k)), m1, te[m1], te[m1 + 1], ue[m2], ue[m2 + 1],
                               table.occurrence[i, m1, m2], E[m1, m2])
            else:
                e = table.grid.edges
                for m in range(len(e) - 1):
                    yield transition_label((j, k)), m, e[m], e[m + 1], table.occurrence[i, m], E[m]

    return write_csv(path, header, rows())


def write_ratefit(fit: RateFit, path: str) -> str:
    """``transition,bin,t_lo,t_hi,rate,variance,ci_lo,ci_hi``; 2D fits add
    ``u_lo,u_hi``, LASSO fits ``method,lambda`` and tree fits
    ``method,leaf_id``."""
    two_d = isinstance(fit.grid, TimeDurationGrid)
    header = ["transition", "bin", "t_lo", "t_hi"]
    if two_d:
        header += ["u_lo", "u_hi"]
    header += ["rate", "variance", "ci_lo", "ci_hi"]
    if fit.method == "lasso":
        header += ["method", "lambda"]
    elif fit.method == "tree":
        header += ["method", "leaf_id"]

    def extra(m):
        if fit.method == "lasso":
            return ["lasso", fmt(fit.meta["lambda"])]
        if fit.method == "tree":
            return ["tree", fmt(int(fit.meta["leaf_id"][m]))]
        return []

    def rows():
        for i, jk in enumerate(fit.transitions):
            label = transition_label(jk)
            if two_d:
                te, ue = fit.grid.time.edges, fit.grid.duration.edges
                for m1 in range(len(te) - 1):
                    for m2 in range(len(ue) - 1):
                        ix = (i, m1, m2)
                        yield [label, m1, te[m1], te[m1 + 1], ue[m2], ue[m2 + 1], fit.rate[ix],
                               fit.variance[ix], fit.ci_lo[ix], fit.ci_hi[ix]]
            else:
                e = fit.grid.edges
                for m in range(len(e) - 1):
                    ix = (i, m)
                    yield [label, m, e[m], e[m + 1], fit.rate[ix], fit.variance[ix], fit.ci_lo[ix],
                           fit.ci_hi[ix]] + extra(m)

    return write_csv(path, header, rows())


def write_lasso_summary(fits, path: str) -> str:
    return write_csv(path, ("lambda", "objective", "df"), ((f.lam, f.objective_value, f.df) for f in fits))


def write_manifest(
    out_dir: str,
    command: str,
    config,
    seed: int | None,
    files: Sequence[str],
    wall_time: float,
    extra: dict | None = None,
) -> str:
    """JSON record of what produced the files in ``out_dir``."""
    import scipy

    from . import __version__

    manifest = {
        "command": command,
        "config_path": None if config is None else os.path.abspath(config.path),
        "config_sha256": None if config is None else config.sha256,
        "config": None if config is None else config.raw,
        "master_seed": seed,
        "versions": {
            "msoe": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "platform": sys.platform,
        "wall_time_s": round(float(wall_time), 3),
        "files": [os.path.basename(f) for f in files],
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
