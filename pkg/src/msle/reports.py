"""Pass/fail records shared by the metrics and perturbation drivers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np


def default_slack(dt: float, scale: float = 1.0) -> float:
    """Margins below -(10 dt + 1e-12 scale) count as violations."""
    return 10.0 * dt + 1e-12 * scale


def _summary(m: np.ndarray) -> dict:
    if m.size == 0:
        return {"min": None, "mean": None, "max": None}
    return {"min": float(m.min()), "mean": float(m.mean()), "max": float(m.max())}


@dataclass(frozen=True)
class BoundReport:
    """Margins (bound - observed) of a pathwise inequality over many paths."""

    claim: str
    n_paths: int
    n_violations: int
    worst_margin: Optional[float]
    margins: dict
    slack: float
    params: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_margins(cls, claim, margins, slack=0.0, params=None, **extra):
        """NaN margins are dropped (e.g. excluded paths) and counted in extra."""
        m = np.asarray(margins, dtype=float).ravel()
        excluded = int(np.count_nonzero(np.isnan(m)))
        m = m[~np.isnan(m)]
        if excluded:
            extra.setdefault("n_excluded", excluded)
        return cls(
            claim=claim,
            n_paths=int(m.size),
            n_violations=int(np.count_nonzero(m < -slack)),
            worst_margin=float(m.min()) if m.size else None,
            margins=_summary(m),
            slack=float(slack),
            params=dict(params or {}),
            extra=extra,
        )

    @property
    def passed(self) -> bool:
        return self.n_violations == 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["violations"] = d.pop("n_violations")
        d["pass"] = self.passed
        return d


@dataclass(frozen=True)
class TailReport:
    """Deviation frequency against the tail bound, with event frequencies."""

    n_paths: int
    x: float
    phi: float
    zeta: float
    zeta_star: float
    deviation_freq: float
    deviation_se: float
    event_freq: dict
    event_pred: dict
    lemma: BoundReport
    force_bound: BoundReport
    params: dict = field(default_factory=dict)
    notes: tuple = ()

    @property
    def vacuous(self) -> bool:
        return not self.zeta < 1.0

    @property
    def passed(self) -> bool:
        if self.vacuous:
            return True
        return self.deviation_freq <= self.zeta + 2.0 * self.deviation_se

    def event_within(self, name: str, n_se: float = 3.0) -> bool:
        p = self.event_pred[name]
        f = self.event_freq[name]
        se = np.sqrt(max(p * (1.0 - p), 1e-300) / self.n_paths)
        return abs(f - p) <= n_se * se

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vacuous"] = self.vacuous
        d["pass"] = self.passed
        return d


@dataclass(frozen=True)
class HausdorffReport:
    d_H: float
    rhs: float
    theta: float
    epsilon: float
    horizon: float
    hypothesis_verified: bool
    note: str = "hypothesis checked at probes only"

    @property
    def margin(self) -> float:
        return self.rhs - self.d_H

    @property
    def passed(self) -> bool:
        return self.d_H <= self.rhs

    def to_dict(self) -> dict:
        d = asdict(self)
        d["margin"] = self.margin
        d["pass"] = self.passed
        return d
