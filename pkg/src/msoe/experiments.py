"""Monte-Carlo studies of the OE estimator: single-sample fits, the
bias/variance mesh sweep, normal approximation of the normalized error,
asymptotic independence, per-subject moment checks and the semi-Markov
surface.

Replication ``r`` of a study uses the master seed
``derive_seed(seed, tag, M, r)``; subjects inside a replication are keyed by
their index, so every number here is a pure function of (config, seed).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import kstest, norm

from .intensity import evaluate
from .model import IntensityModel
from .oe import (
    RateFit,
    TimeDurationGrid,
    TimeGrid,
    aggregate_1d,
    aggregate_2d,
    diagonal_slice,
    occupation_probability,
    oe_rates,
    subject_contributions,
)
from .rng import derive_seed
from .simulate import CensoringSpec, SimConfig, simulate_cohort, simulate_many

__all__ = [
    "Cell",
    "SweepRow",
    "CLTSample",
    "IndependenceResult",
    "MomentRow",
    "SurfaceResult",
    "replicate_cells",
    "true_rate",
    "single_sample_illustration",
    "bias_variance_sweep",
    "clt_study",
    "independence_check",
    "variance_lemma_check",
    "consistency_study",
    "semimarkov_surface",
    "surface_relative_error",
    "duration_occupation",
    "PAPER_CENSORING",
    "SWEEP_MS",
    "CLT_MS",
]

PAPER_CENSORING = CensoringSpec.uniform(10.0, 40.0)
SWEEP_MS = tuple(range(5, 85, 5))
CLT_MS = (5, 15, 75)
MESH_TAG = "mesh"
# subjects simulated per batch in replicated studies
BATCH_SUBJECTS = 250_000


@dataclass(frozen=True)
class Cell:
    """One estimation cell: transition ``j -> k`` over ``[t_lo, t_hi)``,
    optionally restricted to durations in ``[u_lo, u_hi)``."""

    j: str
    k: str
    t_lo: float
    t_hi: float
    u_lo: float | None = None
    u_hi: float | None = None

    @property
    def width(self) -> float:
        return self.t_hi - self.t_lo

    @classmethod
    def containing(cls, j, k, t, grid: TimeGrid) -> "Cell":
        m = grid.bin_of(t)
        if m < 0:
            raise ValueError(f"t={t} outside the grid")
        e = grid.edges
        return cls(j, k, float(e[m]), float(e[m + 1]))


def true_rate(model: IntensityModel, j: str, k: str, t, u=None):
    return evaluate(model.transitions[(j, k)], t, u)


def replicate_cells(
    model: IntensityModel,
    seeds,
    n: int,
    censoring: CensoringSpec,
    cells,
    initial_state: str = "1",
    workers: int = 1,
    window: float = 1.0,
    extra=None,
):
    """Per-replication occurrence and exposure for each cell.

    Returns arrays ``O, E`` of shape ``(reps, len(cells))``.  ``extra`` is an
    optional callback ``extra(cohort, rep_slice)`` whose results are gathered
    in replication order.
    """
    seeds = list(seeds)
    per_batch = max(1, BATCH_SUBJECTS // max(1, n))
    batches = [seeds[i : i + per_batch] for i in range(0, len(seeds), per_batch)]

    def run(batch):
        cohort = simulate_many(model, initial_state, batch, n, censoring, window=window)
        O = np.zeros((len(batch), len(cells)), dtype=np.int64)
        E = np.zeros((len(batch), len(cells)))
        for c, cell in enumerate(cells):
            X, Y = subject_contributions(cohort, cell.j, cell.k, cell.t_lo, cell.t_hi, cell.u_lo, cell.u_hi)
            O[:, c] = X.reshape(len(batch), n).sum(axis=1)
            E[:, c] = Y.reshape(len(batch), n).sum(axis=1)
        ext = extra(cohort, len(batch)) if extra is not None else None
        return O, E, ext

    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, batches))
    else:
        results = [run(b) for b in batches]
    O = np.concatenate([r[0] for r in results])
    E = np.concatenate([r[1] for r in results])
    if extra is not None:
        return O, E, [r[2] for r in results]
    return O, E


def _paper_grid(M: int, t_max: float = 40.0) -> TimeGrid:
    return TimeGrid(0.0, t_max, M)


# -- single sample --------------------------------------------------------------


def single_sample_illustration(
    model: IntensityModel,
    n: int = 100_000,
    M: int = 40,
    seed: int = 0,
    censoring: CensoringSpec = PAPER_CENSORING,
    horizon: float = 40.0,
    level: float = 0.95,
    workers: int = 1,
):
    """One cohort, OE fit for every transition and the true intensities at
    bin midpoints.  Returns ``(fit, truth)`` with ``truth`` shaped like
    ``fit.rate`` (NaN for duration-dependent intensities)."""
    cohort = simulate_cohort(SimConfig(model, "1", n, horizon, censoring, seed), workers=workers)
    grid = _paper_grid(M, horizon)
    fit = oe_rates(aggregate_1d(cohort, grid), level=level)
    mids = grid.midpoints
    truth = np.full_like(fit.rate, np.nan)
    for i, (j, k) in enumerate(fit.transitions):
        if not model.transitions[(j, k)].uses_duration:
            truth[i] = true_rate(model, j, k, mids)
    return fit, truth


# -- mesh sweep and normal approximation --------------------------------------------


@dataclass
class SweepRow:
    M: int
    delta: float
    var_Z: float
    scaled_abs_bias: float
    reps: int
    n: int
    mean_rate: float
    var_Z_from_rates: float
    n_undefined: int


def _mesh_estimates(model, transition, t0, M, n, reps, seed, censoring, workers, tag=MESH_TAG):
    grid = _paper_grid(M)
    cell = Cell.containing(*transition, t0, grid)
    seeds = [derive_seed(seed, tag, M, r) for r in range(reps)]
    O, E = replicate_cells(model, seeds, n, censoring, [cell], workers=workers)
    O, E = O[:, 0], E[:, 0]
    defined = E > 0
    rates = O[defined] / E[defined]
    return grid.delta, rates, int((~defined).sum())


def bias_variance_sweep(
    model: IntensityModel,
    Ms=SWEEP_MS,
    n: int = 500,
    reps: int = 1000,
    seed: int = 0,
    t0: float = 20.0,
    transition=("1", "2"),
    censoring: CensoringSpec = PAPER_CENSORING,
    workers: int = 1,
) -> list[SweepRow]:
    """Variance of ``Z_n = sqrt(n delta) (mu_hat - mu)`` and the scaled
    absolute bias at ``t0`` for each bin count ``M``.

    ``t0`` on a bin boundary belongs to the right-open bin starting at it.
    Replications with zero exposure in the cell are dropped and counted in
    ``n_undefined``.
    """
    mu = float(true_rate(model, *transition, t0))
    rows = []
    for M in Ms:
        delta, rates, undefined = _mesh_estimates(model, transition, t0, M, n, reps, seed, censoring, workers)
        if rates.size < 2:
            raise ValueError(f"M={M}: fewer than two replications with a defined estimate")
        scale = math.sqrt(n * delta)
        z = scale * (rates - mu)
        rows.append(
            SweepRow(
                M=int(M),
                delta=delta,
                var_Z=float(np.var(z, ddof=1)),
                scaled_abs_bias=float(scale * abs(rates.mean() - mu)),
                reps=int(reps),
                n=int(n),
                mean_rate=float(rates.mean()),
                var_Z_from_rates=float(n * delta * np.var(rates, ddof=1)),
                n_undefined=undefined,
            )
        )
    return rows


@dataclass
class CLTSample:
    M: int
    z_values: np.ndarray
    matched_sd: float
    ks_distance: float
    delta: float = 0.0
    n_undefined: int = 0


def clt_study(
    model: IntensityModel,
    Ms=CLT_MS,
    n: int = 500,
    reps: int = 1000,
    seed: int = 0,
    t0: float = 20.0,
    transition=("1", "2"),
    censoring: CensoringSpec = PAPER_CENSORING,
    workers: int = 1,
) -> list[CLTSample]:
    """Samples of ``Z_n`` per bin count and their Kolmogorov-Smirnov
    distance to a centered normal with the sample standard deviation.

    Uses the same replication streams as :func:`bias_variance_sweep`, so the
    ``Z_n`` at a shared ``M`` coincide.
    """
    if reps < 2:
        raise ValueError("at least two replications are needed to match a variance")
    mu = float(true_rate(model, *transition, t0))
    out = []
    for M in Ms:
        delta, rates, undefined = _mesh_estimates(model, transition, t0, M, n, reps, seed, censoring, workers)
        z = math.sqrt(n * delta) * (rates - mu)
        sd = float(np.std(z, ddof=1))
        ks = float(kstest(z, norm(0.0, sd).cdf).statistic)
        out.append(CLTSample(int(M), z, sd, ks, delta, undefined))
    return out


# -- asymptotic independence --------------------------------------------------------


@dataclass
class IndependenceResult:
    corr: float
    ci_lo: float
    ci_hi: float
    n_valid: int
    cells: tuple


def independence_check(
    model: IntensityModel,
    s: float = 15.0,
    t: float = 25.0,
    M: int = 15,
    n: int = 500,
    reps: int = 2000,
    seed: int = 0,
    transition=("1", "2"),
    duration_bin: tuple[float, float] | None = None,
    censoring: CensoringSpec = PAPER_CENSORING,
    level: float = 0.95,
    workers: int = 1,
) -> IndependenceResult:
    """Correlation across replications of the OE estimates in the bins
    containing ``s`` and ``t``.

    With ``duration_bin=(u_lo, u_hi)`` both cells are restricted to that
    duration bin (semi-Markov variant; the duration bins need not differ).
    """
    grid = _paper_grid(M)
    if grid.bin_of(s) == grid.bin_of(t):
        raise ValueError(f"s={s} and t={t} fall in the same bin; distinct bins are required")
    cells = [Cell.containing(*transition, x, grid) for x in (s, t)]
    if duration_bin is not None:
        u_lo, u_hi = duration_bin
        cells = [Cell(c.j, c.k, c.t_lo, c.t_hi, u_lo, u_hi) for c in cells]
    seeds = [derive_seed(seed, "independence", M, r) for r in range(reps)]
    O, E = replicate_cells(model, seeds, n, censoring, cells, workers=workers)
    ok = np.all(E > 0, axis=1)
    rates = O[ok] / E[ok]
    r = float(np.corrcoef(rates[:, 0], rates[:, 1])[0, 1])
    k = int(ok.sum())
    half = norm.ppf(0.5 + level / 2) / math.sqrt(max(k - 3, 1))
    zr = math.atanh(max(min(r, 1 - 1e-15), -1 + 1e-15))
    return IndependenceResult(r, math.tanh(zr - half), math.tanh(zr + half), k, tuple(cells))


# -- per-subject moments --------------------------------------------------------------


@dataclass
class MomentRow:
    quantity: str
    estimate: float
    std_error: float
    prediction: float

    @property
    def ratio(self) -> float:
        return self.estimate / self.prediction


def duration_occupation(cohort, j: str, t: float, u: float) -> float:
    """Empirical ``P(Z_t = j, U_t <= u, t <= R)``."""
    ji = cohort.index[j]
    z = cohort.state_at(t)
    last = np.zeros(len(cohort))
    mask = cohort.jump_time <= t
    last[cohort.jump_subject()[mask]] = cohort.jump_time[mask]
    dur = t - last
    return float(np.mean((z == ji) & (dur <= u) & (cohort.censor >= t)))


def _moment_rows(X, Y, pred_x, pred_y_mean, pred_y_var):
    n = len(X)
    X = X.astype(float)
    mx, my = X.mean(), Y.mean()
    vx, vy = X.var(ddof=1), Y.var(ddof=1)
    # standard errors of sample variances from fourth central moments
    se_vx = math.sqrt(max(np.mean((X - mx) ** 4) - vx**2, 0.0) / n)
    se_vy = math.sqrt(max(np.mean((Y - my) ** 4) - vy**2, 0.0) / n)
    return [
        MomentRow("mean_X", mx, math.sqrt(vx / n), pred_x),
        MomentRow("var_X", vx, se_vx, pred_x),
        MomentRow("mean_Y", my, math.sqrt(vy / n), pred_y_mean),
        MomentRow("var_Y", vy, se_vy, pred_y_var),
    ]


def variance_lemma_check(
    model: IntensityModel,
    t: float = 20.0,
    delta: float = 0.25,
    n: int = 200_000,
    seed: int = 0,
    transition=("1", "2"),
    censoring: CensoringSpec = PAPER_CENSORING,
    horizon: float = 40.0,
    p_c: float | None = None,
    u: float | None = None,
    delta_u: float | None = None,
    workers: int = 1,
):
    """First-order moments of the per-subject occurrence ``X`` and exposure
    ``Y`` in the cell of width ``delta`` centered at ``t``.

    Markov predictions: ``E X = Var X = delta p mu``, ``E Y = delta p``,
    ``Var Y = delta**2 p``.  With ``u``/``delta_u`` the cell is a
    time-duration box and ``p`` is replaced by ``delta_u`` times the
    duration density of the occupation probability, estimated by a central
    difference with step ``delta_u / 2``.  ``p_c`` overrides the empirical
    occupation probability (e.g. with an analytic value).
    """
    j, k = transition
    cohort = simulate_cohort(SimConfig(model, "1", n, horizon, censoring, seed), workers=workers)
    t_lo, t_hi = t - delta / 2, t + delta / 2
    if u is None:
        X, Y = subject_contributions(cohort, j, k, t_lo, t_hi)
        p = occupation_probability(cohort, j, t) if p_c is None else p_c
        mu = float(true_rate(model, j, k, t))
        rows = _moment_rows(X, Y, delta * p * mu, delta * p, delta**2 * p)
        meta = {"p_c": p, "mu": mu}
    else:
        if delta_u is None:
            raise ValueError("a duration cell needs delta_u")
        X, Y = subject_contributions(cohort, j, k, t_lo, t_hi, u - delta_u / 2, u + delta_u / 2)
        h = delta_u / 2
        if p_c is None:
            dp = (duration_occupation(cohort, j, t, u + h) - duration_occupation(cohort, j, t, u - h)) / (2 * h)
        else:
            dp = p_c
        mu = float(true_rate(model, j, k, t, u))
        a = delta * delta_u
        rows = _moment_rows(X, Y, a * mu * dp, a * dp, delta * a * dp)
        meta = {"d2_p_c": dp, "mu": mu}
    return rows, meta


# -- consistency ----------------------------------------------------------------------------


def consistency_study(
    model: IntensityModel,
    ns=(1_000, 10_000, 100_000),
    reps=(200, 200, 50),
    seed: int = 0,
    t0: float = 20.0,
    c: float = 4.0,
    transition=("1", "2"),
    censoring: CensoringSpec = PAPER_CENSORING,
    workers: int = 1,
) -> list[dict]:
    """RMSE of the OE estimate at ``t0`` with bin width ``c / sqrt(n)``,
    the cell being the grid bin (grid anchored at 0) containing ``t0``."""
    mu = float(true_rate(model, *transition, t0))
    rows = []
    for n, R in zip(ns, reps):
        delta = c / math.sqrt(n)
        m = math.floor(t0 / delta)
        cell = Cell(*transition, m * delta, (m + 1) * delta)
        seeds = [derive_seed(seed, "consistency", n, r) for r in range(R)]
        O, E = replicate_cells(model, seeds, n, censoring, [cell], workers=workers)
        ok = E[:, 0] > 0
        rates = O[ok, 0] / E[ok, 0]
        rows.append(
            {
                "n": int(n),
                "delta": delta,
                "reps": int(R),
                "n_valid": int(ok.sum()),
                "rmse": float(math.sqrt(np.mean((rates - mu) ** 2))),
                "bias": float(rates.mean() - mu),
            }
        )
    return rows


# -- semi-Markov surface ------------------------------------------------------------------


@dataclass
class SurfaceResult:
    fit: RateFit
    truth: np.ndarray
    slices: dict = field(default_factory=dict)


SURFACE_SLICES = ((("1", "2"), 0.0), (("1", "3"), 0.0)) + tuple(
    (("2", "3"), float(d)) for d in (1, 5, 10, 20)
)


def semimarkov_surface(
    model: IntensityModel,
    n: int = 20_000,
    mesh: float = 2.0,
    seed: int = 0,
    horizon: float = 40.0,
    censoring: CensoringSpec = PAPER_CENSORING,
    slices=SURFACE_SLICES,
    level: float = 0.95,
    workers: int = 1,
) -> SurfaceResult:
    """2D OE fit on ``[0, horizon]^2`` boxes of side ``mesh``, the true
    intensity at admissible box centers, and diagonal slices.

    Each slice entry is a list of ``(t, fitted, true)``.
    """
    cohort = simulate_cohort(SimConfig(model, "1", n, horizon, censoring, seed), workers=workers)
    tg = TimeGrid.with_width(0.0, horizon, mesh)
    grid2 = TimeDurationGrid(tg, TimeGrid.with_width(0.0, horizon, mesh))
    fit = oe_rates(aggregate_2d(cohort, grid2), level=level)
    tc = tg.midpoints[:, None]
    uc = grid2.duration.midpoints[None, :]
    truth = np.full_like(fit.rate, np.nan)
    admissible = uc <= tc
    for i, (j, k) in enumerate(fit.transitions):
        truth[i] = np.where(admissible, true_rate(model, j, k, tc, uc), np.nan)
    out = {}
    for trans, d in slices:
        pts = diagonal_slice(fit, d, trans)
        ts = np.array([p[0] for p in pts])
        tr = true_rate(model, *trans, ts, ts - d) if len(pts) else np.empty(0)
        out[(trans, d)] = [(p[0], p[1], float(v)) for p, v in zip(pts, np.atleast_1d(tr))]
    return SurfaceResult(fit, truth, out)


def surface_relative_error(result: SurfaceResult, transition, min_exposure: float = 500.0):
    """Exposure-weighted mean absolute relative error over boxes with
    exposure at least ``min_exposure``; returns ``(error, n_boxes)``."""
    i = result.fit.index(transition)
    E = result.fit.exposure[i]
    ok = (E >= min_exposure) & np.isfinite(result.truth[i]) & np.isfinite(result.fit.rate[i])
    if not ok.any():
        return float("nan"), 0
    rel = np.abs(result.fit.rate[i][ok] - result.truth[i][ok]) / result.truth[i][ok]
    return float(np.sum(E[ok] * rel) / np.sum(E[ok])), int(ok.sum())
