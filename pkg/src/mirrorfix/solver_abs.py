"""Absolute positioning with few satellites using virtual satellites.

Rows scattered by a tag are re-attributed to a *virtual satellite*, the point
reflection of the real satellite through the tag, and stacked with the direct
rows in one weighted least-squares problem. The direct and scattered rows get
separate clock-bias columns unless the tag's scatter delay is already known,
in which case it is removed from the scattered pseudoranges and every row
shares one bias.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np

from . import SPEED_OF_LIGHT as C
from .errors import (
    DataError,
    DegenerateGeometry,
    NonConvergence,
    NoPairs,
    SingularNormalMatrix,
    Underdetermined,
)
from .geodesy import EcefPoint, SatelliteTable, range_between
from .measurements import Label, Measurement, MeasurementSet

COND_LIMIT = 1e12


@dataclass(frozen=True)
class TagConfig:
    """Surveyed tag with its scatter delay ``t_s`` (seconds).

    ``t_s`` is one value for every satellite or a mapping svid -> seconds.
    """

    position: EcefPoint
    t_s: float | Mapping[int, float] = 0.0
    t_s_valid: bool = False

    def __post_init__(self):
        if self.t_s_valid:
            vals = self.t_s.values() if isinstance(self.t_s, Mapping) else [self.t_s]
            if any(v < 0 for v in vals):
                raise DataError("scatter delay must be non-negative")

    def delay_for(self, svid: int) -> float:
        if isinstance(self.t_s, Mapping):
            try:
                return float(self.t_s[svid])
            except KeyError:
                raise DataError(f"no scatter delay known for svid {svid}") from None
        return float(self.t_s)


@dataclass(frozen=True)
class VirtualSatellite:
    svid: int
    position: EcefPoint
    source: EcefPoint


def make_virtual_satellite(real: EcefPoint, tag: EcefPoint, svid: int = 0) -> VirtualSatellite:
    """Rotate the satellite 180 degrees about the tag: ``2 * tag - real``."""
    if real == tag:
        raise DegenerateGeometry("satellite coincides with the tag")
    return VirtualSatellite(svid, EcefPoint.from_array(2.0 * tag.array - real.array), real)


def default_variance(cn0: float) -> float:
    """Pseudorange variance (m^2) from C/N0: (0.3 m)^2 * 10^((45 - cn0)/10)."""
    return 0.09 * 10.0 ** ((45.0 - cn0) / 10.0)


@dataclass
class PositionSolution:
    position: EcefPoint
    clock_bias_direct: float
    clock_bias_scattered: float
    iterations: int
    residual_rms: float
    converged: bool
    dop: float
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    design: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)), repr=False)
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    @property
    def scatter_delay(self) -> float:
        return self.clock_bias_scattered - self.clock_bias_direct

    def to_dict(self) -> dict:
        return {
            "position": self.position.to_list(),
            "clock_bias_direct": _json_float(self.clock_bias_direct),
            "clock_bias_scattered": _json_float(self.clock_bias_scattered),
            "iterations": self.iterations,
            "residual_rms": self.residual_rms,
            "converged": self.converged,
            "dop": self.dop,
        }


def _json_float(x: float):
    return None if math.isnan(x) else x


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-4
    max_iter: int = 50
    estimate_ts: bool = False
    warm_start: EcefPoint | None = None
    strict: bool = True


def _check_normal(n: np.ndarray) -> None:
    d = np.sqrt(np.diag(n))
    if np.any(d == 0):
        raise SingularNormalMatrix("a state has no observing row")
    scaled = n / np.outer(d, d)
    if not np.isfinite(scaled).all() or np.linalg.cond(scaled) > COND_LIMIT:
        raise SingularNormalMatrix("normal matrix is singular (collinear geometry)")


def dilution_of_precision(geometry: np.ndarray) -> float:
    """sqrt(trace) of the position block of (G^T G)^-1.

    ``geometry`` rows are ``[-los_x, -los_y, -los_z, bias columns...]``.
    """
    g = np.asarray(geometry, dtype=float)
    n = g.T @ g
    _check_normal(n)
    q = np.linalg.inv(n)
    return float(math.sqrt(np.trace(q[:3, :3])))


def geometry_rows(satellites, receiver: EcefPoint, bias_index=None, n_bias: int = 1) -> np.ndarray:
    """Design-matrix rows for pseudoranges from ``satellites`` seen at ``receiver``."""
    sats = np.array([s.array for s in satellites], dtype=float)
    d = sats - receiver.array
    los = d / np.linalg.norm(d, axis=1)[:, None]
    g = np.zeros((len(sats), 3 + n_bias))
    g[:, :3] = -los
    idx = np.zeros(len(sats), dtype=int) if bias_index is None else np.asarray(bias_index)
    g[np.arange(len(sats)), 3 + idx] = 1.0
    return g


def gauss_newton(
    sat_pos: np.ndarray,
    pseudorange: np.ndarray,
    bias_index: np.ndarray,
    n_bias: int,
    weights: np.ndarray,
    x0: np.ndarray,
    tol: float = 1e-4,
    max_iter: int = 50,
):
    """Iterated WLS for ``rho_i = |sat_i - L| + cb[bias_index_i]``.

    Returns ``(L, cb, iterations, converged, residuals, G)``. Biases are in
    metres (c times seconds).
    """
    m = len(pseudorange)
    if m < 3 + n_bias:
        raise Underdetermined(f"{m} rows for {3 + n_bias} unknowns")
    pos = np.array(x0, dtype=float)
    cb = np.zeros(n_bias)
    w = np.asarray(weights, dtype=float)
    rows = np.arange(m)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        d = sat_pos - pos
        r = np.linalg.norm(d, axis=1)
        if np.any(r == 0):
            raise DegenerateGeometry("receiver estimate coincides with a satellite")
        g = np.zeros((m, 3 + n_bias))
        g[:, :3] = -d / r[:, None]
        g[rows, 3 + bias_index] = 1.0
        dy = pseudorange - (r + cb[bias_index])
        n = g.T @ (w[:, None] * g)
        _check_normal(n)
        step = np.linalg.solve(n, g.T @ (w * dy))
        pos += step[:3]
        cb += step[3:]
        if np.linalg.norm(step[:3]) < tol:
            converged = True
            break
    d = sat_pos - pos
    r = np.linalg.norm(d, axis=1)
    g = np.zeros((m, 3 + n_bias))
    g[:, :3] = -d / r[:, None]
    g[rows, 3 + bias_index] = 1.0
    resid = pseudorange - (r + cb[bias_index])
    return pos, cb, it, converged, resid, g


def solve_position(
    measurements,
    satellites: Mapping[int, EcefPoint],
    tag: TagConfig | None = None,
    variances: Mapping | Callable[[Measurement], float] | None = None,
    options: SolveOptions = SolveOptions(),
) -> PositionSolution:
    """Solve one epoch of direct and tag-scattered pseudoranges.

    Direct (and unlabeled) rows are ranged against the real satellite;
    scattered rows against the satellite's virtual image through the tag.
    With ``tag.t_s_valid`` the scatter delay is subtracted and all rows share
    one clock bias; with ``options.estimate_ts`` scattered rows get their own
    bias column. Rows for satellites missing from ``satellites`` are ignored.

    Raises
    ------
    Underdetermined, SingularNormalMatrix, NonConvergence
    """
    sat_pos, rho, kind, w, svids = [], [], [], [], []
    ts_used = []
    for m in measurements:
        if m.svid not in satellites:
            continue
        sat = satellites[m.svid]
        if m.scattered is Label.SCATTERED:
            if tag is None:
                raise DataError("scattered rows need a tag configuration")
            if tag.t_s_valid:
                ts = tag.delay_for(m.svid)
                ts_used.append(ts)
                rho.append(m.pseudorange - C * ts)
                kind.append(0)
            elif options.estimate_ts:
                rho.append(m.pseudorange)
                kind.append(1)
            else:
                raise DataError("scattered rows need a known t_s or estimate_ts")
            sat = make_virtual_satellite(sat, tag.position, m.svid).position
        else:
            rho.append(m.pseudorange)
            kind.append(0)
        sat_pos.append(sat.array)
        svids.append(m.svid)
        if variances is None:
            var = default_variance(m.cn0)
        elif callable(variances):
            var = variances(m)
        else:
            var = variances[m.key]
        if not var > 0:
            raise DataError(f"non-positive variance for {m.key}")
        w.append(1.0 / var)
    if not rho:
        raise Underdetermined("no usable rows")
    kind = np.array(kind)
    present = sorted(set(kind.tolist()))
    col = {k: i for i, k in enumerate(present)}
    bias_index = np.array([col[k] for k in kind])
    x0 = options.warm_start.array if options.warm_start is not None else np.zeros(3)
    pos, cb, it, converged, resid, g = gauss_newton(
        np.array(sat_pos),
        np.array(rho),
        bias_index,
        len(present),
        np.array(w),
        x0,
        options.tol,
        options.max_iter,
    )
    if not converged and options.strict:
        raise NonConvergence(f"no convergence in {options.max_iter} iterations")
    tb = {k: cb[col[k]] / C for k in present}
    t_b1 = tb.get(0, math.nan)
    if 1 in tb:
        t_b2 = tb[1]
        if 0 not in tb:
            t_b1 = math.nan
    elif ts_used:
        t_b2 = t_b1 + float(np.mean(ts_used))
    else:
        t_b2 = math.nan
    return PositionSolution(
        position=EcefPoint.from_array(pos),
        clock_bias_direct=float(t_b1),
        clock_bias_scattered=float(t_b2),
        iterations=it,
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        converged=converged,
        dop=dilution_of_precision(g),
        residuals=resid,
        design=g,
        weights=np.array(w),
    )


# -- scatter delay ----------------------------------------------------------


class ScatterDelayEstimator:
    """Exponential moving average of t_b2 - t_b1 over measurement pairs."""

    def __init__(self, alpha: float = 0.2, prior: float | None = None):
        if not 0.0 < alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        self.alpha = alpha
        self.value = prior
        self.count = 0

    def update(self, t_b1: float, t_b2: float) -> float:
        diff = t_b2 - t_b1
        if self.value is None:
            self.value = diff
        else:
            self.value += self.alpha * (diff - self.value)
        self.count += 1
        return self.value


def estimate_scatter_delay(pairs, alpha: float = 0.2, prior: float | None = None) -> float:
    pairs = list(pairs)
    if not pairs:
        raise NoPairs("scatter delay needs at least one (t_b1, t_b2) pair")
    est = ScatterDelayEstimator(alpha, prior)
    for t_b1, t_b2 in pairs:
        est.update(t_b1, t_b2)
    return est.value


def scattered_clock_bias(
    pseudorange: float,
    satellite: EcefPoint,
    receiver: EcefPoint,
    tag: EcefPoint | None = None,
) -> float:
    """Clock bias implied by one scattered pseudorange at a known receiver.

    With ``tag`` the range is taken to the virtual satellite, so the
    resulting delay is the one :func:`solve_position` subtracts; without it
    the range is to the real satellite and the delay is the excess of the
    tag path over the direct path.
    """
    sat = satellite if tag is None else make_virtual_satellite(satellite, tag).position
    return (pseudorange - range_between(sat, receiver)) / C


def extract_delay_pairs(
    mset: MeasurementSet,
    constellation: SatelliteTable,
    tag: EcefPoint,
    window_ms: float = 40_000.0,
    virtual: bool = True,
    options: SolveOptions = SolveOptions(),
) -> dict[int, list[tuple[float, float]]]:
    """Pair direct-only fixes with nearby scattered rows of the same satellite.

    Each epoch with enough direct rows is solved for position and ``t_b1``;
    every scattered row within ``window_ms`` of such an epoch yields
    ``t_b2`` against that position. The receiver is assumed static over the
    window.
    """
    fixes: list[tuple[int, EcefPoint, float]] = []
    for epoch in mset.epochs():
        direct = [m for m in mset.at_epoch(epoch) if m.scattered is Label.DIRECT]
        try:
            sol = solve_position(direct, constellation.at(epoch), options=options)
        except DataError:
            continue
        fixes.append((epoch, sol.position, sol.clock_bias_direct))
    if not fixes:
        raise NoPairs("no epoch has enough direct rows for a fix")
    pairs: dict[int, list[tuple[float, float]]] = {}
    fix_epochs = np.array([f[0] for f in fixes])
    for m in mset:
        if m.scattered is not Label.SCATTERED or m.svid not in constellation:
            continue
        k = int(np.argmin(np.abs(fix_epochs - m.epoch)))
        epoch, rx, t_b1 = fixes[k]
        if abs(epoch - m.epoch) > window_ms:
            continue
        sat = constellation.position(m.svid, m.epoch)
        t_b2 = scattered_clock_bias(m.pseudorange, sat, rx, tag if virtual else None)
        pairs.setdefault(m.svid, []).append((t_b1, t_b2))
    if not pairs:
        raise NoPairs("no scattered row falls inside the pairing window")
    return pairs


def estimate_tag_delays(
    mset: MeasurementSet,
    constellation: SatelliteTable,
    tag: EcefPoint,
    window_ms: float = 40_000.0,
    alpha: float = 0.2,
    virtual: bool = True,
) -> TagConfig:
    pairs = extract_delay_pairs(mset, constellation, tag, window_ms, virtual)
    delays = {svid: estimate_scatter_delay(p, alpha) for svid, p in pairs.items()}
    return TagConfig(tag, delays, True)


def solve_epochs(
    mset: MeasurementSet,
    constellation: SatelliteTable,
    tag: TagConfig | None = None,
    options: SolveOptions = SolveOptions(),
) -> list[tuple[int, PositionSolution | DataError]]:
    """Solve every epoch independently; failures are returned, not raised."""
    out = []
    for epoch in mset.epochs():
        try:
            sol = solve_position(mset.at_epoch(epoch), constellation.at(epoch), tag, None, options)
        except DataError as exc:
            out.append((epoch, exc))
            continue
        out.append((epoch, sol))
    return out
