"""Core data model for interval meter readings.

Energy is held as fixed-point milli-kWh integers so that sums, secret
shares, and homomorphic plaintexts are exact. Timestamps are normalized
to UTC epoch seconds at parse time; ISO-8601 (with mandatory ``Z``) is
accepted on input only.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable

MILLI_PER_KWH = 1000

_KWH_RE = re.compile(r"^(-?)(\d+)(?:\.(\d{1,3}))?$")


class MeterDataError(Exception):
    """Base class for ingestion and validation failures."""


class MalformedRow(MeterDataError):
    def __init__(self, line: int, detail: str = ""):
        self.line = line
        super().__init__(f"malformed row at line {line}" + (f": {detail}" if detail else ""))


class NegativeEnergy(MeterDataError):
    def __init__(self, line: int):
        self.line = line
        super().__init__(f"negative energy at line {line}")


class MisalignedTimestamp(MeterDataError):
    def __init__(self, line: int):
        self.line = line
        super().__init__(f"timestamp not aligned to interval at line {line}")


class MixedInterval(MeterDataError):
    def __init__(self, meter_id: str):
        self.meter_id = meter_id
        super().__init__(f"readings for meter {meter_id!r} are not spaced one interval apart")


class EnergyAboveCap(MeterDataError):
    """A reading exceeds the declared per-reading cap (never clipped)."""

    def __init__(self, line: int):
        self.line = line
        super().__init__(f"energy above per-reading cap at line {line}")


@dataclass(frozen=True, order=True)
class EnergyQuantity:
    """Fixed-point energy amount; 1 unit = 0.001 kWh."""

    milli_kwh: int

    @classmethod
    def from_kwh_text(cls, text: str) -> "EnergyQuantity":
        """Parse a decimal kWh string with up to 3 fractional digits, exactly."""
        m = _KWH_RE.match(text.strip())
        if m is None:
            raise ValueError(f"not a kWh decimal with <=3 fractional digits: {text!r}")
        sign = -1 if m.group(1) == "-" else 1
        whole = int(m.group(2))
        frac = (m.group(3) or "").ljust(3, "0")
        return cls(sign * (whole * MILLI_PER_KWH + int(frac)))

    @classmethod
    def from_kwh(cls, kwh: float) -> "EnergyQuantity":
        """Round a float kWh value to the nearest milli-kWh."""
        return cls(round(kwh * MILLI_PER_KWH))

    @property
    def kwh(self) -> float:
        return self.milli_kwh / MILLI_PER_KWH

    def to_kwh_text(self) -> str:
        sign = "-" if self.milli_kwh < 0 else ""
        whole, frac = divmod(abs(self.milli_kwh), MILLI_PER_KWH)
        return f"{sign}{whole}.{frac:03d}"

    def __add__(self, other: "EnergyQuantity") -> "EnergyQuantity":
        return EnergyQuantity(self.milli_kwh + other.milli_kwh)

    def __neg__(self) -> "EnergyQuantity":
        return EnergyQuantity(-self.milli_kwh)


ZERO_ENERGY = EnergyQuantity(0)


@dataclass(frozen=True)
class MeterReading:
    """One interval reading for one (pseudonymous) meter."""

    meter_id: str
    timestamp: int  # UTC epoch seconds
    interval_s: int
    energy: EnergyQuantity

    def __post_init__(self):
        if self.interval_s <= 0:
            raise ValueError("interval_s must be positive")
        if self.energy.milli_kwh < 0:
            raise ValueError("reading energy must be non-negative")
        if self.timestamp % self.interval_s != 0:
            raise ValueError("timestamp must be a multiple of interval_s")


@dataclass(frozen=True)
class ReadingSeries:
    """Ordered readings for one meter; strictly increasing, uniform interval."""

    meter_id: str
    readings: tuple[MeterReading, ...]

    def __post_init__(self):
        prev = None
        for r in self.readings:
            if r.meter_id != self.meter_id:
                raise ValueError("reading meter_id does not match series")
            if prev is not None:
                if r.timestamp <= prev.timestamp:
                    raise ValueError("timestamps must be strictly increasing")
                if r.interval_s != prev.interval_s:
                    raise ValueError("interval_s must be uniform within a series")
            prev = r

    @property
    def interval_s(self) -> int:
        return self.readings[0].interval_s if self.readings else 0

    def __len__(self) -> int:
        return len(self.readings)


@dataclass(frozen=True)
class FeederDataset:
    """A collection of series sharing one interval and a per-reading cap.

    The cap ``delta_max`` is the sensitivity bound the DP mechanisms rely
    on; ingestion rejects readings above it rather than clipping.
    """

    series: tuple[ReadingSeries, ...]
    interval_s: int
    delta_max: EnergyQuantity

    def __post_init__(self):
        if self.interval_s <= 0:
            raise ValueError("interval_s must be positive")
        if self.delta_max.milli_kwh <= 0:
            raise ValueError("delta_max must be positive")
        for s in self.series:
            for r in s.readings:
                if r.interval_s != self.interval_s:
                    raise ValueError("all series must share the dataset interval_s")
                if r.energy.milli_kwh > self.delta_max.milli_kwh:
                    raise ValueError("reading exceeds delta_max")

    def n_readings(self) -> int:
        return sum(len(s) for s in self.series)

    def all_readings(self) -> Iterable[MeterReading]:
        for s in self.series:
            yield from s.readings


def iso_to_epoch(text: str) -> int:
    """ISO-8601 UTC ('Z' suffix required) to epoch seconds."""
    text = text.strip()
    if not text.endswith("Z"):
        raise ValueError("timestamp must be ISO-8601 UTC with Z suffix")
    dt = datetime.fromisoformat(text[:-1] + "+00:00")
    return int(dt.astimezone(timezone.utc).timestamp())


def _parse_timestamp(text: str, line: int) -> int:
    try:
        return iso_to_epoch(text)
    except ValueError as exc:
        raise MalformedRow(line, str(exc)) from None


def parse_csv(text: str | bytes, interval_s: int, delta_max: EnergyQuantity) -> FeederDataset:
    """Parse `meter_id,timestamp,kwh` CSV into a validated dataset.

    One series per distinct meter_id, rows sorted per meter. Interval
    length and the cap come from configuration, never from the data.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    lines = text.splitlines()
    if not lines:
        return FeederDataset(series=(), interval_s=interval_s, delta_max=delta_max)
    if lines[0].strip() != "meter_id,timestamp,kwh":
        raise MalformedRow(1, "missing or wrong header")

    rows: dict[str, list[tuple[int, EnergyQuantity]]] = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != 3:
            raise MalformedRow(lineno, "expected 3 fields")
        meter_id, ts_text, kwh_text = (p.strip() for p in parts)
        if not meter_id:
            raise MalformedRow(lineno, "empty meter_id")
        ts = _parse_timestamp(ts_text, lineno)
        try:
            energy = EnergyQuantity.from_kwh_text(kwh_text)
        except ValueError as exc:
            raise MalformedRow(lineno, str(exc)) from None
        if energy.milli_kwh < 0:
            raise NegativeEnergy(lineno)
        if ts % interval_s != 0:
            raise MisalignedTimestamp(lineno)
        if energy.milli_kwh > delta_max.milli_kwh:
            raise EnergyAboveCap(lineno)
        rows.setdefault(meter_id, []).append((ts, energy))

    series = []
    for meter_id in sorted(rows):
        entries = sorted(rows[meter_id])
        for (t0, _), (t1, _) in zip(entries, entries[1:]):
            if t1 - t0 != interval_s:
                raise MixedInterval(meter_id)
        readings = tuple(
            MeterReading(meter_id=meter_id, timestamp=t, interval_s=interval_s, energy=e)
            for t, e in entries
        )
        series.append(ReadingSeries(meter_id=meter_id, readings=readings))
    return FeederDataset(series=tuple(series), interval_s=interval_s, delta_max=delta_max)


def serialize_csv(dataset: FeederDataset) -> str:
    """Inverse of parse_csv for valid datasets (round-trip identity)."""
    out = io.StringIO()
    out.write("meter_id,timestamp,kwh\n")
    for s in dataset.series:
        for r in s.readings:
            iso = datetime.fromtimestamp(r.timestamp, tz=timezone.utc).strftime(
                "%Y-%m-%dT%H:%M:%SZ"
            )
            out.write(f"{r.meter_id},{iso},{r.energy.to_kwh_text()}\n")
    return out.getvalue()


def interval_totals(dataset: FeederDataset) -> dict[int, EnergyQuantity]:
    """Exact per-timestamp totals over all series (the pre-noise ground truth)."""
    totals: dict[int, int] = {}
    for r in dataset.all_readings():
        totals[r.timestamp] = totals.get(r.timestamp, 0) + r.energy.milli_kwh
    return {t: EnergyQuantity(v) for t, v in sorted(totals.items())}
