"""Multi-state intensity models and the canonical models used in the experiments."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .intensity import IntensityExpr, evaluate, parse_intensity, sum_exprs, to_text

__all__ = [
    "ModelError",
    "IntensityModel",
    "markov_illness_death",
    "semimarkov_illness_death",
    "MARKOV_EXPRESSIONS",
    "SEMIMARKOV_EXPRESSIONS",
    "DISABILITY_EXPRESSIONS",
    "synthetic_disability",
    "VALIDATION_POINTS",
]

VALIDATION_POINTS = 4096

MARKOV_EXPRESSIONS = {
    # total exit intensities split by the fixed destination probabilities 0.9 / 0.1
    ("1", "2"): "0.9*(0.1 + 0.002*t + 0.05*sin(t/2))",
    ("1", "3"): "0.1*(0.1 + 0.002*t + 0.05*sin(t/2))",
    ("2", "3"): "0.06 + 0.002*t + 0.05*sin(t/2)",
}

SEMIMARKOV_EXPRESSIONS = {
    ("1", "2"): "0.09 + 0.0018*t",
    ("1", "3"): "0.01 + 0.0002*t",
    ("2", "3"): "0.09 + 0.001*t*(1 + 0.1*u) + 0.2/(1 + exp(0.5*(u - 4)))",
}

# active (1) -> disabled (2) -> reactivated (3) on a 4.6-year calendar
# window, with an annual cycle in both intensities
DISABILITY_EXPRESSIONS = {
    ("1", "2"): "0.004 + 0.0005*t + 0.001*sin(6.283185307*t)",
    ("2", "3"): "0.3 + 0.02*t + 0.1*cos(6.283185307*t)",
}


class ModelError(ValueError):
    """Inconsistent state space, transitions or intensity values."""


@dataclass(frozen=True)
class IntensityModel:
    """State space plus one intensity expression per allowed transition.

    States are string labels; ``index`` maps them to dense integers used by
    the array code.
    """

    states: tuple[str, ...]
    transitions: Mapping[tuple[str, str], IntensityExpr]
    absorbing: frozenset[str] = frozenset()
    kind: str = "markov"
    index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(str(s) for s in self.states))
        object.__setattr__(self, "absorbing", frozenset(str(s) for s in self.absorbing))
        object.__setattr__(self, "transitions", dict(self.transitions))
        object.__setattr__(self, "index", {s: i for i, s in enumerate(self.states)})
        if len(self.index) != len(self.states):
            raise ModelError(f"duplicate state labels in {self.states}")
        if self.kind not in ("markov", "semi_markov"):
            raise ModelError(f"kind must be 'markov' or 'semi_markov', got {self.kind!r}")
        unknown = self.absorbing - set(self.states)
        if unknown:
            raise ModelError(f"absorbing states {sorted(unknown)} not in state space")
        for (j, k), expr in self.transitions.items():
            if j not in self.index or k not in self.index:
                raise ModelError(f"transition {j}->{k} references an undeclared state")
            if j == k:
                raise ModelError(f"self transition {j}->{k}")
            if j in self.absorbing:
                raise ModelError(f"transition {j}->{k} leaves absorbing state {j}")
            if self.kind == "markov" and expr.uses_duration:
                raise ModelError(
                    f"markov model, but {j}->{k} intensity '{to_text(expr)}' uses duration u"
                )

    @classmethod
    def from_strings(cls, states, transitions: Mapping, absorbing=(), kind="markov"):
        return cls(
            states=tuple(states),
            transitions={tuple(map(str, jk)): parse_intensity(e) for jk, e in transitions.items()},
            absorbing=frozenset(absorbing),
            kind=kind,
        )

    @property
    def transition_list(self) -> list[tuple[str, str]]:
        """Transitions ordered by (from index, to index)."""
        return sorted(self.transitions, key=lambda jk: (self.index[jk[0]], self.index[jk[1]]))

    def destinations(self, j: str) -> list[str]:
        return [k for (a, k) in self.transition_list if a == j]

    def exit_expression(self, j: str) -> IntensityExpr:
        return sum_exprs(self.transitions[(j, k)] for k in self.destinations(j))

    @property
    def uses_duration(self) -> bool:
        return any(e.uses_duration for e in self.transitions.values())

    def validate(self, horizon: float) -> None:
        """Grid-scan every intensity for finiteness and nonnegativity on
        ``[0, horizon]`` (and ``0 <= u <= t`` for duration-dependent ones)."""
        if horizon <= 0:
            raise ModelError(f"horizon must be positive, got {horizon}")
        side = int(np.sqrt(VALIDATION_POINTS))
        for (j, k), expr in self.transitions.items():
            if expr.uses_duration:
                ts = np.linspace(0.0, horizon, side)
                tt, uu = np.meshgrid(ts, ts, indexing="ij")
                # fold points above the diagonal onto the admissible region
                uu = np.minimum(uu, tt)
                values = evaluate(expr, tt, uu)
            else:
                values = evaluate(expr, np.linspace(0.0, horizon, VALIDATION_POINTS))
            if not np.all(np.isfinite(values)):
                raise ModelError(f"intensity {j}->{k} is not finite on [0, {horizon}]")
            if values.min() < 0:
                raise ModelError(
                    f"intensity {j}->{k} becomes negative ({values.min():.6g}) on [0, {horizon}]"
                )


def markov_illness_death() -> IntensityModel:
    """Three-state Markov model with sinusoidal intensities; state 3 absorbing."""
    return IntensityModel.from_strings(
        ("1", "2", "3"), MARKOV_EXPRESSIONS, absorbing=("3",), kind="markov"
    )


def semimarkov_illness_death() -> IntensityModel:
    """Three-state model whose 2->3 intensity depends on duration."""
    return IntensityModel.from_strings(
        ("1", "2", "3"), SEMIMARKOV_EXPRESSIONS, absorbing=("3",), kind="semi_markov"
    )


def synthetic_disability() -> IntensityModel:
    """Active/disabled/reactivated stand-in for disability-insurance data;
    time is calendar years since the start of observation."""
    return IntensityModel.from_strings(
        ("1", "2", "3"), DISABILITY_EXPRESSIONS, absorbing=("3",), kind="markov"
    )
