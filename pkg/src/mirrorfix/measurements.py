"""Per-epoch GNSS observations, the canonical CSV format and raw-log conversion.

Canonical CSV (UTF-8, LF, exact header)::

    epoch_ms,svid,cn0_dbhz,pseudorange_m,adr_m,adr_valid,scattered

``scattered`` is one of ``S`` (via tag), ``D`` (direct) or ``U`` (unknown).
Floats are written with ``repr`` so a parse/serialize round trip is bit-exact.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import GPS_L1_WAVELENGTH, SPEED_OF_LIGHT
from .errors import CarrierUnlocked, MalformedRow, SchemaMismatch

CSV_HEADER = ["epoch_ms", "svid", "cn0_dbhz", "pseudorange_m", "adr_m", "adr_valid", "scattered"]
PLAUSIBLE_RANGE = (1.8e7, 3.0e7)
CN0_LIMITS = (0.0, 70.0)


class Label(str, enum.Enum):
    SCATTERED = "S"
    DIRECT = "D"
    UNKNOWN = "U"


@dataclass(frozen=True)
class Measurement:
    epoch: int
    svid: int
    cn0: float
    pseudorange: float
    adr: float = 0.0
    adr_valid: bool = False
    scattered: Label = Label.UNKNOWN

    def __post_init__(self):
        if not CN0_LIMITS[0] <= self.cn0 <= CN0_LIMITS[1]:
            raise ValueError(f"C/N0 {self.cn0} dB-Hz outside {CN0_LIMITS}")
        if not isinstance(self.scattered, Label):
            object.__setattr__(self, "scattered", Label(self.scattered))

    @property
    def plausible(self) -> bool:
        """False for out-of-band pseudoranges, which are kept and flagged."""
        return PLAUSIBLE_RANGE[0] <= self.pseudorange <= PLAUSIBLE_RANGE[1]

    @property
    def key(self) -> tuple[int, int, str]:
        return (self.epoch, self.svid, self.scattered.value)


@dataclass(frozen=True)
class MeasurementSet:
    measurements: tuple[Measurement, ...] = ()
    wavelength: float = GPS_L1_WAVELENGTH

    def __post_init__(self):
        ms = tuple(sorted(self.measurements, key=lambda m: m.key))
        for a, b in zip(ms, ms[1:]):
            if a.key == b.key:
                raise ValueError(f"duplicate measurement {a.key}")
        object.__setattr__(self, "measurements", ms)

    def __len__(self):
        return len(self.measurements)

    def __iter__(self):
        return iter(self.measurements)

    def epochs(self) -> list[int]:
        return sorted({m.epoch for m in self.measurements})

    def svids(self) -> list[int]:
        return sorted({m.svid for m in self.measurements})

    def at_epoch(self, epoch: int) -> list[Measurement]:
        return [m for m in self.measurements if m.epoch == epoch]

    def for_svid(self, svid: int) -> list[Measurement]:
        return [m for m in self.measurements if m.svid == svid]

    def filter(self, pred) -> "MeasurementSet":
        return MeasurementSet(tuple(m for m in self.measurements if pred(m)), self.wavelength)

    def relabel(self, labels: dict[tuple[int, int], Label]) -> "MeasurementSet":
        """Replace the label of unknown rows keyed by (epoch, svid)."""
        out = []
        for m in self.measurements:
            lab = labels.get((m.epoch, m.svid))
            if lab is not None and m.scattered is Label.UNKNOWN:
                m = replace(m, scattered=lab)
            out.append(m)
        return MeasurementSet(tuple(out), self.wavelength)


@dataclass(frozen=True)
class Ambiguity:
    svid: int
    n: int
    reference_epoch: int


def _round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def estimate_ambiguity(m: Measurement, wavelength: float = GPS_L1_WAVELENGTH) -> Ambiguity:
    """Whole-cycle ambiguity N = round((ADR - pseudorange) / wavelength)."""
    if not m.adr_valid:
        raise CarrierUnlocked(f"svid {m.svid} at {m.epoch} ms has no carrier lock")
    return Ambiguity(m.svid, _round_half_away((m.adr - m.pseudorange) / wavelength), m.epoch)


def track_ambiguities(mset: MeasurementSet) -> dict[tuple[int, int, str], Ambiguity]:
    """One ambiguity per continuous carrier-lock run of each satellite.

    Scattered and direct rows of a satellite share the receiver channel, so
    they share the lock run. The run's ambiguity is estimated at its first row
    (direct row preferred on ties) and held until a row reports loss of lock.
    """
    out: dict[tuple[int, int, str], Ambiguity] = {}
    order = {Label.DIRECT: 0, Label.UNKNOWN: 1, Label.SCATTERED: 2}
    for svid in mset.svids():
        rows = sorted(mset.for_svid(svid), key=lambda m: (m.epoch, order[m.scattered]))
        current = None
        for m in rows:
            if not m.adr_valid:
                current = None
                continue
            if current is None:
                current = estimate_ambiguity(m, mset.wavelength)
            out[m.key] = current
    return out


# -- canonical CSV ---------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def serialize_measurements(mset: MeasurementSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for m in mset:
        w.writerow(
            [
                m.epoch,
                m.svid,
                _fmt(m.cn0),
                _fmt(m.pseudorange),
                _fmt(m.adr),
                1 if m.adr_valid else 0,
                m.scattered.value,
            ]
        )
    return buf.getvalue()


def write_measurement_csv(mset: MeasurementSet, path) -> None:
    Path(path).write_bytes(serialize_measurements(mset).encode("utf-8"))


def _parse_bool(s: str) -> bool:
    s = s.strip().lower()
    if s in ("1", "true"):
        return True
    if s in ("0", "false"):
        return False
    raise ValueError(f"bad boolean {s!r}")


def parse_measurement_text(text: str, wavelength: float = GPS_L1_WAVELENGTH) -> MeasurementSet:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != CSV_HEADER:
        raise SchemaMismatch(f"expected header {','.join(CSV_HEADER)}, got {header}")
    rows: dict[tuple, Measurement] = {}
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise MalformedRow(line_no, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
        try:
            m = Measurement(
                epoch=int(row[0]),
                svid=int(row[1]),
                cn0=float(row[2]),
                pseudorange=float(row[3]),
                adr=float(row[4]),
                adr_valid=_parse_bool(row[5]),
                scattered=Label(row[6].strip()),
            )
        except ValueError as exc:
            raise MalformedRow(line_no, str(exc)) from None
        if m.key in rows:
            raise MalformedRow(line_no, f"duplicate (epoch, svid, scattered) {m.key}")
        rows[m.key] = m
    return MeasurementSet(tuple(rows.values()), wavelength)


def parse_measurement_csv(path, wavelength: float = GPS_L1_WAVELENGTH) -> MeasurementSet:
    return parse_measurement_text(Path(path).read_text(encoding="utf-8"), wavelength)


# -- raw smartphone log subset ---------------------------------------------

WEEK_NS = 604_800 * 1_000_000_000
RAW_COLUMNS = [
    "TimeNanos",
    "FullBiasNanos",
    "BiasNanos",
    "TimeOffsetNanos",
    "ReceivedSvTimeNanos",
    "Svid",
    "Cn0DbHz",
    "AccumulatedDeltaRangeMeters",
    "AccumulatedDeltaRangeState",
    "ConstellationType",
]
ADR_STATE_VALID = 1
ADR_STATE_RESET = 2
ADR_STATE_CYCLE_SLIP = 4
CONSTELLATION_GPS = 1
CLOCK_MODELS = ("simple",)


@dataclass(frozen=True)
class SkippedRow:
    line_no: int
    reason: str


@dataclass(frozen=True)
class RawConversion:
    measurements: MeasurementSet
    skipped: tuple[SkippedRow, ...] = field(default=())


def _raw_rows(text: str):
    """Yield (line_no, dict) from a plain CSV or a GnssLogger ``Raw,`` log."""
    lines = text.splitlines()
    header = None
    prefixed = False
    for i, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped.lstrip("#").strip()
            if body.startswith("Raw,"):
                header = next(csv.reader([body]))[1:]
                prefixed = True
            continue
        if header is None:
            header = next(csv.reader([stripped]))
            continue
        fields = next(csv.reader([stripped]))
        if prefixed:
            if fields[0] != "Raw":
                continue
            fields = fields[1:]
        yield i, header, fields


def convert_raw_log(path, clock_model: str = "simple") -> RawConversion:
    """Pseudoranges from raw receive/transmit timestamps.

    ``pseudorange = c * (t_rx - t_tx)`` where ``t_rx`` is the GPS time of week
    of the receive instant and ``t_tx`` the satellite transmit time, with week
    rollover folded back. Rows missing fields, of another constellation, or
    with non-positive time of flight are skipped and reported.
    """
    if clock_model not in CLOCK_MODELS:
        raise ValueError(f"unknown clock model {clock_model!r}")
    text = Path(path).read_text(encoding="utf-8")
    kept: dict[tuple, Measurement] = {}
    skipped: list[SkippedRow] = []
    seen_header = False
    for line_no, header, fields in _raw_rows(text):
        if not seen_header:
            missing = [c for c in RAW_COLUMNS if c not in header]
            if missing:
                raise SchemaMismatch(f"raw log lacks columns {missing}")
            seen_header = True
        rec = dict(zip(header, fields))
        try:
            vals = {c: rec[c].strip() for c in RAW_COLUMNS}
        except KeyError:
            skipped.append(SkippedRow(line_no, "short row"))
            continue
        if any(v == "" for v in vals.values()):
            skipped.append(SkippedRow(line_no, "missing required field"))
            continue
        try:
            if int(vals["ConstellationType"]) != CONSTELLATION_GPS:
                skipped.append(SkippedRow(line_no, "not a GPS measurement"))
                continue
            time_nanos = int(vals["TimeNanos"])
            full_bias = int(vals["FullBiasNanos"])
            frac = float(vals["TimeOffsetNanos"]) - float(vals["BiasNanos"])
            t_tx = int(vals["ReceivedSvTimeNanos"])
            state = int(vals["AccumulatedDeltaRangeState"])
            cn0 = float(vals["Cn0DbHz"])
            adr = float(vals["AccumulatedDeltaRangeMeters"])
            svid = int(vals["Svid"])
        except ValueError as exc:
            skipped.append(SkippedRow(line_no, f"unparseable field: {exc}"))
            continue
        tow = (time_nanos - full_bias) % WEEK_NS
        dt_int = tow - t_tx
        if dt_int < -WEEK_NS // 2:
            dt_int += WEEK_NS
        elif dt_int > WEEK_NS // 2:
            dt_int -= WEEK_NS
        tof_ns = dt_int + frac
        if not tof_ns > 0:
            skipped.append(SkippedRow(line_no, "non-positive time of flight"))
            continue
        if not CN0_LIMITS[0] <= cn0 <= CN0_LIMITS[1]:
            skipped.append(SkippedRow(line_no, "C/N0 out of range"))
            continue
        m = Measurement(
            epoch=(time_nanos + 500_000) // 1_000_000,
            svid=svid,
            cn0=cn0,
            pseudorange=tof_ns * 1e-9 * SPEED_OF_LIGHT,
            adr=adr,
            adr_valid=bool(state & ADR_STATE_VALID)
            and not state & (ADR_STATE_RESET | ADR_STATE_CYCLE_SLIP),
        )
        if m.key in kept:
            skipped.append(SkippedRow(line_no, f"duplicate {m.key}; later row kept"))
        kept[m.key] = m
    if not seen_header:
        raise SchemaMismatch("raw log has no header")
    return RawConversion(MeasurementSet(tuple(kept.values())), tuple(skipped))


def write_raw_log(mset: MeasurementSet, path, gps_week: int = 2300, tow0_ns: int = 0) -> None:
    """Write the raw-log subset the converter reads; labels are not representable."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RAW_COLUMNS)
    for m in mset:
        time_nanos = m.epoch * 1_000_000
        gps_ns = gps_week * WEEK_NS + tow0_ns + time_nanos
        full_bias = time_nanos - gps_ns
        tof = m.pseudorange / SPEED_OF_LIGHT * 1e9
        tof_int = math.floor(tof)
        t_tx = (gps_ns % WEEK_NS - tof_int) % WEEK_NS
        w.writerow(
            [
                time_nanos,
                full_bias,
                _fmt(0.0),
                _fmt(tof - tof_int),
                t_tx,
                m.svid,
                _fmt(m.cn0),
                _fmt(m.adr),
                ADR_STATE_VALID if m.adr_valid else 0,
                CONSTELLATION_GPS,
            ]
        )
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))
