"""ON-OFF keying detection in per-satellite C/N0 series."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, InsufficientSpan
from .measurements import Label, MeasurementSet

COVERAGE_THRESHOLD_DB = 3.0
SCORE_MIN = 0.6


@dataclass(frozen=True)
class SwitchingPattern:
    period: float = 20_000.0
    duty: float = 0.5
    phase: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.duty < 1.0:
            raise ValueError("duty must lie in (0, 1)")
        if not self.period > 0:
            raise ValueError("period must be positive")

    def is_on(self, epoch_ms):
        t = np.mod(np.asarray(epoch_ms, dtype=float) - self.phase, self.period)
        return t < self.duty * self.period


@dataclass
class DetectionResult:
    detected: bool
    gain_db: float | None
    phase: float
    score: float
    per_epoch_labels: list[Label] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "detected": self.detected,
            "gain_db": self.gain_db,
            "phase_ms": self.phase,
            "score": self.score,
        }


def _corr(x: np.ndarray, on: np.ndarray) -> float:
    n_on = on.sum()
    if n_on == 0 or n_on == len(on):
        return 0.0
    xc = x - x.mean()
    sx = float(np.sqrt(xc @ xc))
    if sx == 0.0:
        return 0.0
    t = on.astype(float)
    tc = t - t.mean()
    return float(xc @ tc / (sx * np.sqrt(tc @ tc)))


def detect_pattern(
    series,
    period: float = 20_000.0,
    duty: float = 0.5,
    threshold_db: float = COVERAGE_THRESHOLD_DB,
    score_min: float = SCORE_MIN,
) -> DetectionResult:
    """Find the phase of a known square-wave switching pattern in a C/N0 series.

    Every phase offset on the sampling grid is scored by the Pearson
    correlation between C/N0 and the ON indicator; the best phase gives the
    ON/OFF split. Detection needs both the dB gain and the score to clear
    their thresholds.

    Parameters
    ----------
    series : sequence of (epoch_ms, cn0_dbhz)
    period : float
        Full ON+OFF cycle in ms.
    duty : float
        ON fraction of the cycle.
    """
    arr = np.asarray(series, dtype=float).reshape(-1, 2)
    t, x = arr[:, 0], arr[:, 1]
    if len(t) < 2 or np.any(np.diff(t) <= 0):
        raise InsufficientSpan("series needs at least two strictly increasing epochs")
    dt = float(np.median(np.diff(t)))
    if t[-1] - t[0] + dt < 2 * period:
        raise InsufficientSpan(
            f"series spans {t[-1] - t[0] + dt:.0f} ms, need two periods ({2 * period:.0f} ms)"
        )
    n_phase = max(1, int(round(period / dt)))
    best_score, best_phase, best_on = -np.inf, 0.0, None
    for k in range(n_phase):
        pat = SwitchingPattern(period, duty, t[0] + k * dt)
        on = pat.is_on(t)
        s = _corr(x, on)
        if s > best_score:
            best_score, best_phase, best_on = s, float(np.mod(t[0] + k * dt, period)), on
    if best_on is None or best_on.all() or not best_on.any():
        return DetectionResult(False, None, best_phase, 0.0, [Label.DIRECT] * len(t))
    gain = float(x[best_on].mean() - x[~best_on].mean())
    detected = gain >= threshold_db and best_score >= score_min
    if detected:
        labels = [Label.SCATTERED if o else Label.DIRECT for o in best_on]
    else:
        labels = [Label.DIRECT] * len(t)
    return DetectionResult(detected, gain if detected else None, best_phase, best_score, labels)


def coverage_gain(series_on, series_off) -> float:
    on = np.asarray(series_on, dtype=float)
    off = np.asarray(series_off, dtype=float)
    if on.size == 0 or off.size == 0:
        raise EmptyInput("coverage gain needs both ON and OFF samples")
    return float(on.mean() - off.mean())


def detect_measurements(
    mset: MeasurementSet,
    period: float = 20_000.0,
    duty: float = 0.5,
    threshold_db: float = COVERAGE_THRESHOLD_DB,
    score_min: float = SCORE_MIN,
) -> tuple[MeasurementSet, dict[int, DetectionResult]]:
    """Run detection on each satellite's unlabeled rows and fill in their labels.

    Satellites whose series is too short are reported as not detected and
    their rows labeled direct.
    """
    results: dict[int, DetectionResult] = {}
    labels: dict[tuple[int, int], Label] = {}
    for svid in mset.svids():
        rows = [m for m in mset.for_svid(svid) if m.scattered is Label.UNKNOWN]
        if not rows:
            continue
        series = [(m.epoch, m.cn0) for m in rows]
        try:
            res = detect_pattern(series, period, duty, threshold_db, score_min)
        except InsufficientSpan:
            res = DetectionResult(False, None, 0.0, 0.0, [Label.DIRECT] * len(rows))
        results[svid] = res
        for m, lab in zip(rows, res.per_epoch_labels):
            labels[(m.epoch, svid)] = lab
    return mset.relabel(labels), results
