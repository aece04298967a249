"""Deterministic scenario simulator with exact ground truth.

Random numbers come from numpy's ``Generator(PCG64(seed))``. Draw order is
part of the file format (see ``docs/formats.md``): epochs ascending, svids
ascending within an epoch, the direct row before the scattered row, and for
each row three ``standard_normal`` draws in the order pseudorange, carrier
phase, C/N0. A lock run's integer ambiguity is drawn with
``integers(-1_000_000, 1_000_000)`` just before the first row of the run.
Draws happen whether or not a row is finally emitted, so switching
``observation`` mode does not reshuffle the noise.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import GPS_L1_WAVELENGTH
from . import SPEED_OF_LIGHT as C
from .errors import InvalidScenario
from .geodesy import (
    EARTH_RADIUS,
    GPS_ORBIT_RADIUS,
    CircularOrbit,
    EcefPoint,
    SatelliteTable,
    elevation,
    enu_basis,
    enu_to_ecef,
    geodetic_to_ecef,
    range_between,
)
from .measurements import CN0_LIMITS, Label, Measurement, MeasurementSet, serialize_measurements
from .solver_abs import make_virtual_satellite
from .tagdetect import SwitchingPattern

SCHEMA_VERSION = 1
DEFAULT_MASK = math.radians(5.0)
# 9 dB at 2 m falling to 4 dB at 27.7 m.
DEFAULT_ROLLOFF = 5.0 / math.log10(27.7 / 2.0)


def visibility(
    sat: EcefPoint,
    rx: EcefPoint,
    mask: float = DEFAULT_MASK,
    svid: int | None = None,
    blocked=(),
) -> bool:
    """Line of sight clears the spherical Earth and rises above the mask."""
    if svid is not None and svid in blocked:
        return False
    p, d = rx.array, sat.array - rx.array
    dd = float(d @ d)
    if dd == 0.0:
        return False
    t = min(1.0, max(0.0, -float(p @ d) / dd))
    if t > 0.0 and np.linalg.norm(p + t * d) < EARTH_RADIUS * (1.0 - 1e-9):
        return False
    if rx.norm() == 0.0:
        return True
    return elevation(sat, rx) >= mask


def sky_position(origin: EcefPoint, azimuth: float, elev: float, radius: float = GPS_ORBIT_RADIUS) -> EcefPoint:
    """Point at ``radius`` from the Earth's centre seen from ``origin`` at az/el."""
    east, north, up = enu_basis(origin)
    u = math.cos(elev) * (math.sin(azimuth) * east + math.cos(azimuth) * north) + math.sin(elev) * up
    p = origin.array
    # |p + s u| = radius, s > 0
    b = float(p @ u)
    s = -b + math.sqrt(b * b - (float(p @ p) - radius**2))
    return EcefPoint.from_array(p + s * u)


@dataclass(frozen=True)
class CN0Model:
    baseline: float = 35.0
    d0: float = 2.0
    rolloff_db_per_decade: float = DEFAULT_ROLLOFF

    def tag_gain(self, gain_db: float, distance: float) -> float:
        """Gain of the scattered over the direct C/N0 at ``distance`` from the tag."""
        drop = 0.0
        if distance > self.d0:
            drop = self.rolloff_db_per_decade * math.log10(distance / self.d0)
        return max(0.0, gain_db - drop)


@dataclass(frozen=True)
class Noise:
    sigma_pseudorange: float = 3.0
    sigma_phase: float = 0.02
    sigma_cn0: float = 1.0


@dataclass(frozen=True)
class TagSpec:
    position: EcefPoint
    processing_delay: float = 0.0
    pattern: SwitchingPattern = SwitchingPattern()
    gain_db: float = 9.0
    scatter_svids: tuple[int, ...] | None = None


@dataclass(frozen=True)
class Scenario:
    satellites: SatelliteTable
    tag: TagSpec
    trajectory: tuple[tuple[int, EcefPoint], ...]
    clock_bias: float = 0.0
    clock_drift: float = 0.0
    noise: Noise = Noise()
    cn0_model: CN0Model = CN0Model()
    seed: int = 0
    start_ms: int = 0
    step_ms: int = 1000
    count: int = 1
    mask: float = DEFAULT_MASK
    blocked_direct: tuple[int, ...] = ()
    blocked_tag: tuple[int, ...] = ()
    observation: str = "separate"
    labels: str = "truth"
    carrier_lock: bool = True
    wavelength: float = GPS_L1_WAVELENGTH

    def validate(self) -> None:
        if self.step_ms <= 0 or self.count < 1:
            raise InvalidScenario("epochs need step_ms > 0 and count >= 1")
        if not self.trajectory:
            raise InvalidScenario("receiver trajectory is empty")
        if self.observation not in ("separate", "switched"):
            raise InvalidScenario(f"unknown observation mode {self.observation!r}")
        if self.labels not in ("truth", "unknown"):
            raise InvalidScenario(f"unknown labels mode {self.labels!r}")
        if self.tag.processing_delay < 0:
            raise InvalidScenario("tag processing delay must be non-negative")
        n = self.noise
        if min(n.sigma_pseudorange, n.sigma_phase, n.sigma_cn0) < 0:
            raise InvalidScenario("noise sigmas must be non-negative")
        if len(self.satellites) == 0:
            raise InvalidScenario("scenario has no satellites")

    def epochs(self) -> list[int]:
        return [self.start_ms + k * self.step_ms for k in range(self.count)]

    def receiver_at(self, epoch: int) -> EcefPoint:
        traj = self.trajectory
        if len(traj) == 1 or epoch <= traj[0][0]:
            return traj[0][1]
        if epoch >= traj[-1][0]:
            return traj[-1][1]
        for (e0, p0), (e1, p1) in zip(traj, traj[1:]):
            if e0 <= epoch <= e1:
                f = (epoch - e0) / (e1 - e0)
                return EcefPoint.from_array(p0.array + f * (p1.array - p0.array))
        raise AssertionError("unreachable")

    def clock_at(self, epoch: int) -> float:
        return self.clock_bias + self.clock_drift * (epoch - self.start_ms) / 1000.0

    def tag_scatters(self, svid: int) -> bool:
        s = self.tag.scatter_svids
        return s is None or svid in s


@dataclass
class SvTruth:
    range_direct: float
    range_tag_path: float
    t_s: float
    t_s_virtual: float
    direct_visible: bool
    tag_visible: bool


@dataclass
class EpochTruth:
    epoch: int
    receiver: EcefPoint
    t_b: float
    tag_on: bool
    sats: dict[int, SvTruth] = field(default_factory=dict)


@dataclass
class TruthRecord:
    epochs: list[EpochTruth]

    def at(self, epoch: int) -> EpochTruth:
        for e in self.epochs:
            if e.epoch == epoch:
                return e
        raise KeyError(epoch)


def scatter_delay(sat: EcefPoint, tag: EcefPoint, rx: EcefPoint, processing_delay: float = 0.0) -> float:
    """Excess of the tag path over the direct path, in seconds, plus processing."""
    return (range_between(sat, tag) + range_between(tag, rx) - range_between(sat, rx)) / C + processing_delay


def virtual_scatter_delay(sat: EcefPoint, tag: EcefPoint, rx: EcefPoint, processing_delay: float = 0.0) -> float:
    """Excess of the tag path over the range to the virtual satellite."""
    vs = make_virtual_satellite(sat, tag).position
    return (range_between(sat, tag) + range_between(tag, rx) - range_between(vs, rx)) / C + processing_delay


def generate(scenario: Scenario) -> tuple[MeasurementSet, TruthRecord]:
    scenario.validate()
    rng = np.random.Generator(np.random.PCG64(scenario.seed))
    noise = scenario.noise
    tag = scenario.tag
    lam = scenario.wavelength
    rows: list[Measurement] = []
    truth: list[EpochTruth] = []
    ambiguity: dict[int, int] = {}
    for epoch in scenario.epochs():
        rx = scenario.receiver_at(epoch)
        t_b = scenario.clock_at(epoch)
        tag_on = bool(tag.pattern.is_on(epoch))
        et = EpochTruth(epoch, rx, t_b, tag_on)
        seen = set()
        for svid in scenario.satellites:
            sat = scenario.satellites.position(svid, epoch)
            direct_vis = visibility(sat, rx, scenario.mask, svid, scenario.blocked_direct)
            tag_vis = scenario.tag_scatters(svid) and visibility(
                sat, tag.position, scenario.mask, svid, scenario.blocked_tag
            )
            r_direct = range_between(sat, rx)
            d_tag_rx = range_between(tag.position, rx)
            r_path = range_between(sat, tag.position) + d_tag_rx
            et.sats[svid] = SvTruth(
                r_direct,
                r_path,
                scatter_delay(sat, tag.position, rx, tag.processing_delay),
                virtual_scatter_delay(sat, tag.position, rx, tag.processing_delay),
                direct_vis,
                tag_vis,
            )
            emit_s = tag_on and tag_vis
            emit_d = direct_vis and not (emit_s and scenario.observation == "switched")
            if not (direct_vis or emit_s):
                continue
            seen.add(svid)
            if svid not in ambiguity:
                ambiguity[svid] = int(rng.integers(-1_000_000, 1_000_000))
            n_amb = ambiguity[svid]
            for kind in ("D", "S"):
                z = rng.standard_normal(3)
                if kind == "D":
                    if not direct_vis:
                        continue
                    geo = r_direct + C * t_b
                    cn0 = scenario.cn0_model.baseline
                else:
                    if not tag_vis:
                        continue
                    geo = r_path + C * (t_b + tag.processing_delay)
                    cn0 = scenario.cn0_model.baseline + scenario.cn0_model.tag_gain(tag.gain_db, d_tag_rx)
                if (kind == "D" and not emit_d) or (kind == "S" and not emit_s):
                    continue
                label = Label(kind) if scenario.labels == "truth" else Label.UNKNOWN
                rows.append(
                    Measurement(
                        epoch=epoch,
                        svid=svid,
                        cn0=float(np.clip(cn0 + noise.sigma_cn0 * z[2], *CN0_LIMITS)),
                        pseudorange=geo + noise.sigma_pseudorange * z[0],
                        adr=geo + lam * n_amb + noise.sigma_phase * z[1],
                        adr_valid=scenario.carrier_lock,
                        scattered=label,
                    )
                )
        for svid in list(ambiguity):
            if svid not in seen:
                del ambiguity[svid]
        truth.append(et)
    return MeasurementSet(tuple(rows), lam), TruthRecord(truth)


# -- truth CSV -------------------------------------------------------------


def serialize_truth(truth: TruthRecord, svids) -> str:
    svids = sorted(svids)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        ["epoch_ms", "truth_x", "truth_y", "truth_z", "t_b"]
        + [f"t_s_{s}" for s in svids]
        + [f"t_sv_{s}" for s in svids]
    )
    for e in truth.epochs:
        row = [e.epoch] + [repr(v) for v in e.receiver.to_list()] + [repr(e.t_b)]
        row += [repr(e.sats[s].t_s) if s in e.sats else "" for s in svids]
        row += [repr(e.sats[s].t_s_virtual) if s in e.sats else "" for s in svids]
        w.writerow(row)
    return buf.getvalue()


def read_truth_csv(path) -> dict[int, dict]:
    out = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            epoch = int(rec["epoch_ms"])
            out[epoch] = {
                "position": EcefPoint(float(rec["truth_x"]), float(rec["truth_y"]), float(rec["truth_z"])),
                "t_b": float(rec["t_b"]),
                "t_s": {
                    int(k[4:]): float(v) for k, v in rec.items() if k.startswith("t_s_") and v != ""
                },
                "t_sv": {
                    int(k[5:]): float(v) for k, v in rec.items() if k.startswith("t_sv_") and v != ""
                },
            }
    return out


def write_outputs(scenario: Scenario, out_dir) -> dict[str, Path]:
    mset, truth = generate(scenario)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"measurements": out / "measurements.csv", "truth": out / "truth.csv"}
    paths["measurements"].write_bytes(serialize_measurements(mset).encode("utf-8"))
    paths["truth"].write_bytes(serialize_truth(truth, list(scenario.satellites)).encode("utf-8"))
    return paths


# -- scenario JSON ---------------------------------------------------------


def _point(obj, what: str) -> EcefPoint:
    if isinstance(obj, (list, tuple)) and len(obj) == 3:
        return EcefPoint(*(float(v) for v in obj))
    if isinstance(obj, dict) and "lat_deg" in obj:
        return geodetic_to_ecef(
            math.radians(obj["lat_deg"]), math.radians(obj["lon_deg"]), float(obj.get("height_m", 0.0))
        )
    raise InvalidScenario(f"{what}: expected [x, y, z] or {{lat_deg, lon_deg, height_m}}")


def scenario_from_dict(d: dict) -> Scenario:
    try:
        if d.get("schema") != SCHEMA_VERSION:
            raise InvalidScenario(f"scenario schema must be {SCHEMA_VERSION}")
        tag_d = d["tag"]
        tag_pos = _point(tag_d["position"], "tag.position")
        sats = {}
        for s in d["satellites"]:
            svid = int(s["svid"])
            if svid in sats:
                raise InvalidScenario(f"duplicate svid {svid}")
            if "orbit" in s:
                o = s["orbit"]
                sats[svid] = CircularOrbit(
                    radius=float(o.get("radius_m", GPS_ORBIT_RADIUS)),
                    inclination=math.radians(o.get("inclination_deg", 55.0)),
                    raan=math.radians(o.get("raan_deg", 0.0)),
                    phase0=math.radians(o.get("phase0_deg", 0.0)),
                    angular_rate=2.0 * math.pi / float(o.get("period_s", 43_082.0)),
                )
            elif "position" in s:
                sats[svid] = _point(s["position"], f"satellite {svid}")
            elif "az_el_deg" in s:
                az, el = s["az_el_deg"]
                sats[svid] = sky_position(tag_pos, math.radians(az), math.radians(el))
            else:
                raise InvalidScenario(f"satellite {svid} needs orbit, position or az_el_deg")
        pat = tag_d.get("pattern", {})
        tag = TagSpec(
            position=tag_pos,
            processing_delay=float(tag_d.get("processing_delay_s", 0.0)),
            pattern=SwitchingPattern(
                float(pat.get("period_ms", 20_000.0)),
                float(pat.get("duty", 0.5)),
                float(pat.get("phase_ms", 0.0)),
            ),
            gain_db=float(tag_d.get("gain_db", 9.0)),
            scatter_svids=tuple(tag_d["scatter_svids"]) if tag_d.get("scatter_svids") is not None else None,
        )
        rx = d.get("receiver")
        if rx is None:
            traj = ()
        elif "trajectory" in rx:
            traj = tuple((int(p[0]), EcefPoint(*map(float, p[1:4]))) for p in rx["trajectory"])
        elif "enu_from_tag" in rx:
            traj = ((0, enu_to_ecef(rx["enu_from_tag"], tag_pos)),)
        else:
            traj = ((0, _point(rx["position"], "receiver.position")),)
        ep = d.get("epochs", {})
        clk = d.get("clock", {})
        nz = d.get("noise", {})
        cm = d.get("cn0_model", {})
        vis = d.get("visibility", {})
        return Scenario(
            satellites=SatelliteTable(sats),
            tag=tag,
            trajectory=traj,
            clock_bias=float(clk.get("bias_s", 0.0)),
            clock_drift=float(clk.get("drift", 0.0)),
            noise=Noise(
                float(nz.get("sigma_pseudorange", 3.0)),
                float(nz.get("sigma_phase", 0.02)),
                float(nz.get("sigma_cn0", 1.0)),
            ),
            cn0_model=CN0Model(
                float(cm.get("baseline_dbhz", 35.0)),
                float(cm.get("d0_m", 2.0)),
                float(cm.get("rolloff_db_per_decade", DEFAULT_ROLLOFF)),
            ),
            seed=int(d.get("seed", 0)),
            start_ms=int(ep.get("start_ms", 0)),
            step_ms=int(ep.get("step_ms", 1000)),
            count=int(ep.get("count", 1)),
            mask=math.radians(float(vis.get("mask_deg", 5.0))),
            blocked_direct=tuple(vis.get("blocked_direct", ())),
            blocked_tag=tuple(vis.get("blocked_tag", ())),
            observation=d.get("observation", "separate"),
            labels=d.get("labels", "truth"),
            carrier_lock=bool(d.get("carrier_lock", True)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidScenario):
            raise
        raise InvalidScenario(f"bad scenario: {exc!r}") from None


def load_scenario(path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def with_seed(scenario: Scenario, seed: int) -> Scenario:
    return replace(scenario, seed=seed)
