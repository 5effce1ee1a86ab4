"""Synthetic campuses with known ground truth, plus brute-force oracles.

Demand is a step-shaped trapezoid: the setback level through hour bin
``ramp_hour``, the operating level over bins ``ramp_hour+1 .. setback_hour``,
then the setback level again. Every signal extraction has a closed-form
answer on this shape, which is what :func:`trapezoid_savings` and
:func:`oracle_kmeans` rely on. Neither oracle imports the code it checks.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import asdict, dataclass, field, fields
from datetime import date, timedelta
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError

SLOTS_PER_DAY = 288
SLOTS_PER_HOUR = 12
MAX_REGULAR_SLOTS = 108  # 540 minutes
MIN_REGULAR_SLOTS = 9  # 45 minutes
DEFAULT_START = date(2019, 7, 9)


@dataclass(frozen=True)
class OccupancySpec:
    arrival_hour: int = 8
    departure_hour: int = 18
    peak_regular: int = 30
    weekend_scale: float = 0.0
    lunch_dip: float = 0.3
    noise_sd: float = 0.05


@dataclass(frozen=True)
class DemandSpec:
    setback_kw: float = 100.0
    operating_kw: float = 400.0
    ramp_hour: int = 5
    setback_hour: int = 21
    seasonal_trend: float = 0.2
    weekend_scale: float = 1.0
    noise_sd: float = 0.02


@dataclass(frozen=True)
class DeviceSpec:
    short_stay_rate: float = 10.0
    stationary_count: int = 3
    external_rate: float = 2.0


@dataclass(frozen=True)
class DefectSpec:
    spike_count: int = 0
    spike_magnitude: float = 5.0
    flatline_runs: int = 0
    flatline_min_h: int = 3
    flatline_max_h: int = 8


@dataclass(frozen=True)
class BuildingSpec:
    building_id: str
    occupancy: OccupancySpec = field(default_factory=OccupancySpec)
    demand: DemandSpec = field(default_factory=DemandSpec)
    devices: DeviceSpec = field(default_factory=DeviceSpec)
    defects: DefectSpec = field(default_factory=DefectSpec)

    def validate(self) -> None:
        o, d, v, x = self.occupancy, self.demand, self.devices, self.defects
        problems = []
        if not self.building_id:
            problems.append("empty building_id")
        if not 0 <= o.arrival_hour < o.departure_hour <= 23:
            problems.append("need 0 <= arrival < departure <= 23")
        elif not 3 <= o.departure_hour - o.arrival_hour <= 14:
            problems.append("occupied span must be 3-14 h")
        if not 0 <= d.ramp_hour < d.setback_hour <= 22:
            problems.append("need 0 <= ramp < setback <= 22")
        if not 0 < d.setback_kw < d.operating_kw:
            problems.append("need 0 < setback_kw < operating_kw")
        if o.peak_regular <= 0:
            problems.append("peak_regular must be positive")
        if min(o.weekend_scale, o.lunch_dip, o.noise_sd, d.seasonal_trend, d.noise_sd,
               v.short_stay_rate, v.stationary_count, v.external_rate, x.spike_count, x.flatline_runs) < 0:
            problems.append("rates, scales and counts must be non-negative")
        if d.weekend_scale <= 0 or x.spike_magnitude <= 0 or not 0 <= d.seasonal_trend < 1:
            problems.append("demand scales must be positive and trend < 1")
        if not 1 <= x.flatline_min_h <= x.flatline_max_h:
            problems.append("need 1 <= flatline_min_h <= flatline_max_h")
        if problems:
            raise ConfigError(f"invalid spec for {self.building_id!r}: " + "; ".join(problems))


@dataclass
class GroundTruth:
    building_id: str
    start: date
    arrival_hour: int
    departure_hour: int
    ramp_hour: int
    setback_hour: int
    setback_kw: np.ndarray
    operating_kw: np.ndarray
    spike_hours: list[int] = field(default_factory=list)
    flatline_runs: list[tuple[int, int]] = field(default_factory=list)
    device_days: pd.DataFrame | None = None

    @property
    def dates(self) -> list[date]:
        return [self.start + timedelta(days=i) for i in range(len(self.setback_kw))]

    def trapezoid(self, day_index: int) -> np.ndarray:
        h = np.arange(24)
        on = (h > self.ramp_hour) & (h <= self.setback_hour)
        return np.where(on, self.operating_kw[day_index], self.setback_kw[day_index])

    def to_dict(self) -> dict:
        return {
            "building_id": self.building_id, "start": self.start.isoformat(),
            "arrival_hour": self.arrival_hour, "departure_hour": self.departure_hour,
            "ramp_hour": self.ramp_hour, "setback_hour": self.setback_hour,
            "setback_kw": [float(v) for v in self.setback_kw],
            "operating_kw": [float(v) for v in self.operating_kw],
            "spike_hours": list(self.spike_hours),
            "flatline_runs": [list(r) for r in self.flatline_runs],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GroundTruth":
        return cls(
            d["building_id"], date.fromisoformat(d["start"]), d["arrival_hour"], d["departure_hour"],
            d["ramp_hour"], d["setback_hour"], np.array(d["setback_kw"]), np.array(d["operating_kw"]),
            list(d["spike_hours"]), [tuple(r) for r in d["flatline_runs"]],
        )


def _hash(*parts) -> str:
    return hashlib.blake2b("|".join(map(str, parts)).encode(), digest_size=10).hexdigest()


def _wap_names(building_id: str, rng: np.random.Generator, n: int = 12) -> list[str]:
    return [f"{building_id}-{1 + i // 4}-{100 * (1 + i // 4) + int(rng.integers(1, 60))}" for i in range(n)]


def _regular_session(o: OccupancySpec, rng: np.random.Generator) -> np.ndarray:
    arr, dep = o.arrival_hour * SLOTS_PER_HOUR, o.departure_hour * SLOTS_PER_HOUR
    span_h = o.departure_hour - o.arrival_hour
    if span_h <= 9:
        start = arr + int(rng.integers(0, SLOTS_PER_HOUR))
        end = dep - int(rng.integers(0, SLOTS_PER_HOUR))
    else:
        # Staggered shifts keep every device within the 540-minute cap.
        start = arr + int(rng.integers(0, SLOTS_PER_HOUR * (span_h - 8)))
        end = min(start + MAX_REGULAR_SLOTS, dep - int(rng.integers(0, SLOTS_PER_HOUR)))
    slots = np.arange(start, end)
    lunch = (slots >= 12 * SLOTS_PER_HOUR) & (slots < 13 * SLOTS_PER_HOUR)
    if rng.random() < o.lunch_dip and lunch.sum() == SLOTS_PER_HOUR and len(slots) - SLOTS_PER_HOUR >= MIN_REGULAR_SLOTS:
        slots = slots[~lunch]
    return slots


def _wifi_events(spec: BuildingSpec, days: int, start: date, rng: np.random.Generator, seed: int):
    o, v = spec.occupancy, spec.devices
    waps = _wap_names(spec.building_id, rng)
    pool = [_hash(seed, spec.building_id, "regular", i) for i in range(int(np.ceil(1.5 * o.peak_regular)) + 1)]
    stationary = [_hash(seed, spec.building_id, "stationary", i) for i in range(v.stationary_count)]
    g_parts, dev_parts, wap_parts, truth = [], [], [], []
    for d in range(days):
        day = start + timedelta(days=d)
        weekend = day.weekday() >= 5
        scale = o.weekend_scale if weekend else 1.0
        base = d * SLOTS_PER_DAY
        n_reg = int(round(o.peak_regular * scale * (1.0 + o.noise_sd * rng.standard_normal())))
        n_reg = min(max(n_reg, 0), len(pool))
        for i in sorted(rng.choice(len(pool), n_reg, replace=False)) if n_reg else []:
            slots = _regular_session(o, rng)
            g_parts.append(base + slots)
            dev_parts.append(np.full(len(slots), pool[i], dtype=object))
            wap_parts.append(np.full(len(slots), waps[int(rng.integers(len(waps)))], dtype=object))
            truth.append((pool[i], day, "regular"))
        for j, dev in enumerate(stationary):
            g_parts.append(base + np.arange(SLOTS_PER_DAY))
            dev_parts.append(np.full(SLOTS_PER_DAY, dev, dtype=object))
            wap_parts.append(np.full(SLOTS_PER_DAY, waps[j % len(waps)], dtype=object))
            truth.append((dev, day, "stationary"))
        for j in range(int(rng.poisson(v.short_stay_rate * (0.1 if weekend else 1.0)))):
            s0 = int(rng.integers(7 * SLOTS_PER_HOUR, 20 * SLOTS_PER_HOUR))
            n = int(rng.integers(1, 9))
            dev = _hash(seed, spec.building_id, "short", d, j)
            g_parts.append(base + np.arange(s0, s0 + n))
            dev_parts.append(np.full(n, dev, dtype=object))
            wap_parts.append(np.full(n, waps[int(rng.integers(len(waps)))], dtype=object))
            truth.append((dev, day, "short_stay"))
        for j in range(int(rng.poisson(v.external_rate))):
            s0 = int(rng.integers(8 * SLOTS_PER_HOUR, 11 * SLOTS_PER_HOUR))
            dev = _hash(seed, spec.building_id, "external", d, j)
            g_parts.append(base + np.arange(s0, s0 + 72))
            dev_parts.append(np.full(72, dev, dtype=object))
            wap_parts.append(np.full(72, f"OUTDOOR-AP-{1 + j % 3}", dtype=object))
            truth.append((dev, day, "external"))
    g = np.concatenate(g_parts) if g_parts else np.array([], dtype=np.int64)
    dev = np.concatenate(dev_parts) if dev_parts else np.array([], dtype=object)
    wap = np.concatenate(wap_parts) if wap_parts else np.array([], dtype=object)
    classes = pd.DataFrame(truth, columns=["device_hash", "date", "device_class"])
    return g, dev, wap, classes


def _meter_readings(spec: BuildingSpec, days: int, rng: np.random.Generator, start: date):
    dm, x = spec.demand, spec.defects
    trend = 1.0 - dm.seasonal_trend * np.arange(days) / max(days - 1, 1)
    weekend = np.array([(start + timedelta(days=d)).weekday() >= 5 for d in range(days)])
    scale = trend * np.where(weekend, dm.weekend_scale, 1.0)
    lo, hi = dm.setback_kw * scale, dm.operating_kw * scale
    hour = np.repeat(np.arange(24), SLOTS_PER_HOUR)
    on = (hour > dm.ramp_hour) & (hour <= dm.setback_hour)
    values = np.where(on[None, :], hi[:, None], lo[:, None]).ravel()
    if dm.noise_sd > 0:
        values = values + rng.normal(0.0, dm.noise_sd * dm.operating_kw, values.shape)
    values = np.round(values, 3)

    n_hours = days * 24
    taken = np.zeros(n_hours, dtype=bool)
    runs = []
    for _ in range(x.flatline_runs):
        for _attempt in range(100):
            length = int(rng.integers(x.flatline_min_h, x.flatline_max_h + 1))
            s = int(rng.integers(1, n_hours - length - 1))
            if not taken[s - 1:s + length + 1].any():
                taken[s - 1:s + length + 1] = True
                values[s * SLOTS_PER_HOUR:(s + length) * SLOTS_PER_HOUR] = 0.0
                runs.append((s, length))
                break
    spikes = []
    for _ in range(x.spike_count):
        for _attempt in range(100):
            h = int(rng.integers(0, n_hours))
            if not taken[h]:
                taken[h] = True
                values[h * SLOTS_PER_HOUR:(h + 1) * SLOTS_PER_HOUR] = round(x.spike_magnitude * hi[h // 24], 3)
                spikes.append(h)
                break
    return values, lo, hi, sorted(spikes), sorted(runs)


def _timestamps(start: date, days: int) -> tuple[np.ndarray, np.ndarray]:
    day_str = np.array([(start + timedelta(days=d)).isoformat() for d in range(days)], dtype=object)
    slot_str = np.array([f" {s // 12:02d}:{5 * (s % 12):02d}:00" for s in range(SLOTS_PER_DAY)], dtype=object)
    return day_str, slot_str


def gen_building(spec: BuildingSpec, days: int, seed: int = 0, start: date = DEFAULT_START):
    """Generate one building's WiFi rows, meter rows and ground truth.

    Returns ``(wifi, meter, truth)``; the frames carry the canonical CSV
    columns with timestamps already formatted.
    """
    spec.validate()
    if days < 1:
        raise ConfigError("days must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([seed, int(_hash(spec.building_id)[:8], 16)]))
    day_str, slot_str = _timestamps(start, days)

    g, dev, wap, classes = _wifi_events(spec, days, start, rng, seed)
    order = np.lexsort((dev.astype(str), g))
    g, dev, wap = g[order], dev[order], wap[order]
    wifi = pd.DataFrame({
        "timestamp": day_str[g // SLOTS_PER_DAY] + slot_str[g % SLOTS_PER_DAY],
        "building_id": spec.building_id, "wap_name": wap, "device_hash": dev,
    })

    values, lo, hi, spikes, runs = _meter_readings(spec, days, rng, start)
    idx = np.arange(days * SLOTS_PER_DAY)
    meter = pd.DataFrame({
        "timestamp": day_str[idx // SLOTS_PER_DAY] + slot_str[idx % SLOTS_PER_DAY],
        "building_id": spec.building_id,
        "demand_kw": [f"{v:.3f}" for v in values],
    })
    truth = GroundTruth(
        spec.building_id, start, spec.occupancy.arrival_hour, spec.occupancy.departure_hour,
        spec.demand.ramp_hour, spec.demand.setback_hour, lo, hi, spikes, runs, classes,
    )
    return wifi, meter, truth


@dataclass
class Campus:
    wifi: pd.DataFrame
    meter: pd.DataFrame
    truths: dict[str, GroundTruth]
    start: date
    days: int
    seed: int


def gen_campus(specs: Sequence[BuildingSpec], days: int, seed: int = 0, start: date = DEFAULT_START) -> Campus:
    ids = [s.building_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate building ids in campus spec")
    parts = [gen_building(s, days, seed, start) for s in specs]
    wifi = pd.concat([p[0] for p in parts], ignore_index=True)
    wifi = wifi.sort_values("timestamp", kind="stable").reset_index(drop=True)
    meter = pd.concat([p[1] for p in parts], ignore_index=True)
    return Campus(wifi, meter, {p[2].building_id: p[2] for p in parts}, start, days, seed)


def write_campus(campus: Campus, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"wifi": out / "wifi.csv", "meter": out / "meter.csv", "truth": out / "truth.json"}
    campus.wifi.to_csv(paths["wifi"], index=False, lineterminator="\n")
    campus.meter.to_csv(paths["meter"], index=False, lineterminator="\n")
    truth = {
        "start": campus.start.isoformat(), "days": campus.days, "seed": campus.seed,
        "buildings": {b: t.to_dict() for b, t in sorted(campus.truths.items())},
    }
    paths["truth"].write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n")
    return paths


def load_truth(path: str | Path) -> dict[str, GroundTruth]:
    data = json.loads(Path(path).read_text())
    return {b: GroundTruth.from_dict(t) for b, t in data["buildings"].items()}


def default_campus() -> list[BuildingSpec]:
    """Five buildings whose occupied windows differ by at most one hour."""
    windows = [(8, 18), (8, 19), (8, 17), (9, 18), (8, 18)]
    return [
        BuildingSpec(
            f"B00{i + 1}",
            OccupancySpec(arrival_hour=a, departure_hour=d),
            DemandSpec(setback_kw=80.0 + 20 * i, operating_kw=350.0 + 40 * i),
            defects=DefectSpec(spike_count=4, flatline_runs=3),
        )
        for i, (a, d) in enumerate(windows)
    ]


def _build_spec(entry: Mapping, defaults: Mapping) -> BuildingSpec:
    sections = {"occupancy": OccupancySpec, "demand": DemandSpec, "devices": DeviceSpec, "defects": DefectSpec}
    kwargs = {}
    for name, cls in sections.items():
        merged = {**defaults.get(name, {}), **entry.get(name, {})}
        unknown = set(merged) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown {name} keys {sorted(unknown)}")
        kwargs[name] = cls(**merged)
    if "building_id" not in entry:
        raise ConfigError("every [[building]] needs a building_id")
    return BuildingSpec(str(entry["building_id"]), **kwargs)


def specs_from_config(cfg: Mapping) -> tuple[list[BuildingSpec], int, int, date]:
    """Read a synth.toml mapping: ``[campus]``, optional ``[defaults.*]`` and
    ``[[building]]`` tables mirroring :class:`BuildingSpec`."""
    campus = cfg.get("campus", {})
    days = int(campus.get("days", 180))
    seed = int(campus.get("seed", 0))
    start = campus.get("start", DEFAULT_START)
    start = date.fromisoformat(start) if isinstance(start, str) else start
    entries = cfg.get("building") or []
    specs = [_build_spec(e, cfg.get("defaults", {})) for e in entries] or default_campus()
    for s in specs:
        s.validate()
    return specs, days, seed, start


def spec_to_dict(spec: BuildingSpec) -> dict:
    return asdict(spec)


# --- oracles ------------------------------------------------------------------

def trapezoid_savings(setback_kw: float, operating_kw: float, ramp: int, setback: int, target) -> float:
    """Closed-form daily savings on a step trapezoid.

    ``target`` is ``(t_s, t_e)``; ``t_s=None`` means unoccupied and
    ``t_e=None`` leaves the evening untouched.
    """
    gap = operating_kw - setback_kw
    t_s, t_e = target
    if t_s is None:
        return gap * (setback - ramp)
    if t_s >= ramp:
        total = gap * (min(t_s, setback) - ramp)
    else:
        total = -gap * (ramp - t_s)
    if t_e is None:
        return total
    if t_e <= setback:
        if setback < 23:
            total += gap * (setback - max(t_e, ramp))
    else:
        total -= gap * (t_e - setback)
    return total


def oracle_savings(truth: GroundTruth, target, days: Sequence[int] | None = None) -> float:
    """Sum of :func:`trapezoid_savings` over the chosen day indices.

    ``target`` is a fixed ``(t_s, t_e)`` pair or a callable
    ``(day_index, date) -> (t_s, t_e)``.
    """
    pick: Callable = target if callable(target) else (lambda i, d: target)
    idx = range(len(truth.setback_kw)) if days is None else days
    return float(sum(
        trapezoid_savings(truth.setback_kw[i], truth.operating_kw[i], truth.ramp_hour, truth.setback_hour,
                          pick(i, truth.start + timedelta(days=i)))
        for i in idx
    ))


def oracle_kmeans(points, k: int) -> tuple[float, np.ndarray]:
    """Exhaustive minimum of the within-cluster sum of squares.

    Enumerates every assignment of at most ``k`` groups (n <= 8, k <= 3) and
    returns the optimal WSS with the group labels that attain it.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim != 2 or not 1 <= len(x) <= 8 or not 1 <= k <= 3:
        raise ValueError("oracle_kmeans handles 1-8 points and k <= 3")
    labelings = np.array(list(itertools.product(range(k), repeat=len(x))))
    onehot = (labelings[:, :, None] == np.arange(k)).astype(float)
    counts = onehot.sum(axis=1)
    sums = np.einsum("mnk,nd->mkd", onehot, x)
    with np.errstate(invalid="ignore", divide="ignore"):
        between = np.where(counts > 0, (sums ** 2).sum(axis=2) / np.maximum(counts, 1), 0.0).sum(axis=1)
    best = labelings[int(np.argmax(between))]
    total = 0.0
    for j in range(k):
        g = x[best == j]
        if len(g):
            total += float(((g - g.mean(axis=0)) ** 2).sum())
    return total, best
