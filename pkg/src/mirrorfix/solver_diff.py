"""Tag-differential positioning from scattered/direct measurement pairs.

Differencing a scattered observation against a direct one of the same
satellite cancels the common errors. What is left depends on the unknown
base vector ``b`` from the tag to the receiver::

    S = Phi_d - dr_T - lambda*dN - |b0| + b0.e  ~=  (b0/|b0| - e).db + c*dT

which is solved for ``db`` and ``c*dT`` by iterated weighted least squares.
The receiver is then ``tag + b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import GPS_L1_WAVELENGTH
from . import SPEED_OF_LIGHT as C
from .errors import (
    CarrierUnlocked,
    DataError,
    NonConvergence,
    NoPairs,
    NotConverged,
    SingularNormalMatrix,
    Underdetermined,
    ZeroBaseVector,
)
from .geodesy import EcefPoint, SatelliteTable, ecef_to_enu, range_between, unit_vector
from .measurements import Label, MeasurementSet, track_ambiguities
from .solver_abs import COND_LIMIT

MODES = ("phase", "pseudorange", "auto")


@dataclass(frozen=True)
class PhasePair:
    svid: int
    phi_direct: float
    phi_scattered: float
    t1: int
    t2: int
    delta_r_tag: float
    delta_n: int
    e: np.ndarray = field(compare=False)
    wavelength: float = GPS_L1_WAVELENGTH
    kind: str = "phase"

    @property
    def phi_d(self) -> float:
        return self.phi_scattered - self.phi_direct

    @property
    def known(self) -> float:
        """Phi_d - dr_T - lambda*dN: everything except the b and dT terms."""
        return self.phi_d - self.delta_r_tag - self.wavelength * self.delta_n


@dataclass
class BaseVectorSolution:
    b: np.ndarray
    delta_t: float
    iterations: int
    converged: bool
    residual_rms: float
    n_pairs: int = 0

    def to_dict(self) -> dict:
        return {
            "b": [float(v) for v in self.b],
            "delta_t": self.delta_t,
            "iterations": self.iterations,
            "converged": self.converged,
            "residual_rms": self.residual_rms,
            "n_pairs": self.n_pairs,
        }


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-4
    max_iter: int = 50
    strict: bool = True


def build_phase_pairs(
    mset: MeasurementSet,
    constellation: SatelliteTable,
    tag: EcefPoint,
    window_ms: float = 2_000.0,
    mode: str = "phase",
) -> list[PhasePair]:
    """Pair every scattered row with the nearest direct row of its satellite.

    ``mode="phase"`` uses accumulated delta range and needs carrier lock on
    both members; ``"pseudorange"`` uses pseudoranges with dN = 0;
    ``"auto"`` uses phase where both members are locked and pseudorange
    otherwise. Rows must already be labeled scattered/direct.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    amb = track_ambiguities(mset)
    pairs: list[PhasePair] = []
    unlocked = 0
    for svid in mset.svids():
        if svid not in constellation:
            continue
        rows = mset.for_svid(svid)
        direct = [m for m in rows if m.scattered is Label.DIRECT]
        scattered = [m for m in rows if m.scattered is Label.SCATTERED]
        if not direct:
            continue
        d_epochs = np.array([m.epoch for m in direct])
        for s in scattered:
            k = int(np.argmin(np.abs(d_epochs - s.epoch)))
            d = direct[k]
            if abs(d.epoch - s.epoch) > window_ms:
                continue
            locked = d.adr_valid and s.adr_valid
            if mode == "phase" and not locked:
                unlocked += 1
                continue
            sat1 = constellation.position(svid, d.epoch)
            sat2 = constellation.position(svid, s.epoch)
            e = unit_vector(sat1, tag)
            dr = range_between(sat2, tag) - range_between(sat1, tag)
            if mode != "pseudorange" and locked:
                dn = amb[s.key].n - amb[d.key].n
                pairs.append(
                    PhasePair(svid, d.adr, s.adr, d.epoch, s.epoch, dr, dn, e, mset.wavelength)
                )
            else:
                pairs.append(
                    PhasePair(
                        svid, d.pseudorange, s.pseudorange, d.epoch, s.epoch, dr, 0, e,
                        mset.wavelength, "pseudorange",
                    )
                )
    if not pairs:
        if unlocked:
            raise CarrierUnlocked("no pair has carrier lock on both members")
        raise NoPairs("no scattered/direct pair within the window")
    return pairs


def residual_and_jacobian(pair: PhasePair, b0) -> tuple[float, np.ndarray]:
    b0 = np.asarray(b0, dtype=float)
    nb = float(np.linalg.norm(b0))
    if nb == 0.0:
        raise ZeroBaseVector("|b| has no gradient at b = 0")
    s = pair.known - nb + float(b0 @ pair.e)
    row = np.empty(4)
    row[:3] = b0 / nb - pair.e
    row[3] = 1.0
    return s, row


def solve_base_vector(
    pairs,
    b_init=(1.0, 1.0, 1.0),
    weights=None,
    options: SolveOptions = SolveOptions(),
) -> BaseVectorSolution:
    """Newton-iterated WLS for the base vector and the differential clock term.

    ``weights`` are inverse variances per pair (default equal weights).
    """
    pairs = list(pairs)
    if len(pairs) < 4:
        raise Underdetermined(f"{len(pairs)} pairs for 4 unknowns")
    w = np.ones(len(pairs)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(pairs),) or np.any(w <= 0):
        raise DataError("weights must be one positive value per pair")
    b = np.asarray(b_init, dtype=float).copy()
    if np.linalg.norm(b) == 0.0:
        raise ZeroBaseVector("b_init must be non-zero")
    known = np.array([p.known for p in pairs])
    e = np.array([p.e for p in pairs])
    cdt = 0.0
    converged = False
    it = 0
    for it in range(1, options.max_iter + 1):
        nb = float(np.linalg.norm(b))
        if nb == 0.0:
            raise ZeroBaseVector("iteration reached b = 0")
        s = known - nb + e @ b
        g = np.empty((len(pairs), 4))
        g[:, :3] = b / nb - e
        g[:, 3] = 1.0
        n = g.T @ (w[:, None] * g)
        d = np.sqrt(np.diag(n))
        if np.any(d == 0) or np.linalg.cond(n / np.outer(d, d)) > COND_LIMIT:
            raise SingularNormalMatrix("pair directions do not span three dimensions")
        x = np.linalg.solve(n, g.T @ (w * s))
        b = b + x[:3]
        cdt = float(x[3])
        if np.linalg.norm(x[:3]) < options.tol:
            converged = True
            break
    if not converged and options.strict:
        raise NonConvergence(f"no convergence in {options.max_iter} iterations")
    resid = known - np.linalg.norm(b) + e @ b - cdt
    return BaseVectorSolution(
        b=b,
        delta_t=cdt / C,
        iterations=it,
        converged=converged,
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        n_pairs=len(pairs),
    )


@dataclass(frozen=True)
class FloorPlanConstraint:
    """Closed convex polygon (east, north metres about ``origin``) plus height band."""

    origin: EcefPoint
    polygon: tuple[tuple[float, float], ...]
    height: tuple[float, float] = (-math.inf, math.inf)

    def __post_init__(self):
        poly = tuple((float(x), float(y)) for x, y in self.polygon)
        object.__setattr__(self, "polygon", poly)
        if len(poly) < 3:
            raise ValueError("floor plan polygon needs at least three vertices")
        if self.height[0] > self.height[1]:
            raise ValueError("empty height interval")
        area2 = sum(x0 * y1 - x1 * y0 for (x0, y0), (x1, y1) in zip(poly, poly[1:] + poly[:1]))
        if area2 == 0:
            raise ValueError("floor plan polygon has zero area")


@dataclass(frozen=True)
class FloorPlanVerdict:
    accepted: bool
    reason: str | None = None


def _inside_convex(pt, poly, eps) -> bool:
    sign = 0
    for (x0, y0), (x1, y1) in zip(poly, poly[1:] + poly[:1]):
        cross = (x1 - x0) * (pt[1] - y0) - (y1 - y0) * (pt[0] - x0)
        if abs(cross) <= eps:
            continue
        s = 1 if cross > 0 else -1
        if sign == 0:
            sign = s
        elif s != sign:
            return False
    return True


def apply_floor_plan(solution: BaseVectorSolution, plan: FloorPlanConstraint) -> FloorPlanVerdict:
    enu = ecef_to_enu(plan.origin + solution.b, plan.origin)
    scale = max(1.0, max(abs(c) for v in plan.polygon for c in v))
    if not _inside_convex(enu[:2], plan.polygon, 1e-9 * scale * scale):
        return FloorPlanVerdict(False, f"horizontal position {enu[:2].round(3).tolist()} outside polygon")
    lo, hi = plan.height
    if enu[2] < lo:
        return FloorPlanVerdict(False, f"height {enu[2]:.3f} m below {lo} m")
    if enu[2] > hi:
        return FloorPlanVerdict(False, f"height {enu[2]:.3f} m above {hi} m")
    return FloorPlanVerdict(True)


def recover_position(tag: EcefPoint, solution: BaseVectorSolution) -> EcefPoint:
    if not solution.converged:
        raise NotConverged("base vector solution did not converge")
    return tag + solution.b


def solve_by_epoch(
    pairs,
    b_init=(1.0, 1.0, 1.0),
    options: SolveOptions = SolveOptions(),
    weights_for=None,
    group_ms: int = 0,
) -> list[tuple[int, BaseVectorSolution | DataError]]:
    """Group pairs by scattered epoch (or ``group_ms`` bins of it) and solve each group.

    Binning assumes the receiver is static within a bin.
    """
    groups: dict[int, list[PhasePair]] = {}
    for p in pairs:
        key = p.t2 - p.t2 % group_ms if group_ms else p.t2
        groups.setdefault(key, []).append(p)
    out = []
    for epoch in sorted(groups):
        grp = groups[epoch]
        w = None if weights_for is None else [weights_for(p) for p in grp]
        try:
            out.append((epoch, solve_base_vector(grp, b_init, w, options)))
        except DataError as exc:
            out.append((epoch, exc))
    return out
