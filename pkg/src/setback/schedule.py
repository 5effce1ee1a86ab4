"""Time signals from representative profiles.

Hours are integer bins 0-23, bin ``h`` covering ``[h:00, h+1:00)``. An
undefined signal is ``None``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import NoRampError

LAST_HOUR = 23


@dataclass(frozen=True)
class ScheduleParams:
    delta: float
    tau: int = 2
    evening_sign: int = -1

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.tau < 0 or int(self.tau) != self.tau:
            raise ValueError(f"tau must be a non-negative integer, got {self.tau}")
        if self.evening_sign not in (-1, 1):
            raise ValueError("evening_sign must be +1 or -1")


@dataclass(frozen=True)
class OccupancySignals:
    t_a: int | None = None
    t_d: int | None = None
    t_s_o: int | None = None
    t_e_o: int | None = None
    unoccupied: bool = False
    open_ended: bool = False


@dataclass(frozen=True)
class DemandSignals:
    t_s_e: int
    t_e_e: int


@dataclass(frozen=True)
class MissWaste:
    waste_h: int
    miss_h: int


def occupied_window(centroid: Sequence[float], delta: float) -> OccupancySignals:
    """First hour strictly above ``delta`` and the first later hour strictly below it."""
    v = np.asarray(centroid, dtype=float)
    above = np.flatnonzero(v > delta)
    if above.size == 0:
        return OccupancySignals(unoccupied=True)
    t_a = int(above[0])
    below = np.flatnonzero(v[t_a + 1:] < delta)
    if below.size == 0:
        return OccupancySignals(t_a=t_a, open_ended=True)
    return OccupancySignals(t_a=t_a, t_d=t_a + 1 + int(below[0]))


def _clamp(h: int) -> int:
    return min(max(h, 0), LAST_HOUR)


def hvac_window(signals: OccupancySignals, tau: int = 2, evening_sign: int = -1) -> OccupancySignals:
    """Shift the occupied window by the thermal lag ``tau``.

    Ramp-up is ``t_a - tau``; setback is ``t_d + evening_sign * tau``. The
    default ``evening_sign=-1`` reproduces the published signal table;
    ``+1`` applies the lag outward on both ends. Results clamp to 0-23.
    """
    if signals.t_a is None:
        return replace(signals, t_s_o=None, t_e_o=None)
    t_e_o = None if signals.t_d is None else _clamp(signals.t_d + evening_sign * tau)
    return replace(signals, t_s_o=_clamp(signals.t_a - tau), t_e_o=t_e_o)


def occupancy_signals(centroid: Sequence[float], params: ScheduleParams) -> OccupancySignals:
    return hvac_window(occupied_window(centroid, params.delta), params.tau, params.evening_sign)


def demand_signals(centroid: Sequence[float]) -> DemandSignals:
    """Ramp-up and setback hours from the steepest rise and fall.

    ``diff[h] = v[h] - v[h+1]``; ramp-up is the most negative entry, setback
    the most positive, both breaking ties toward the earliest hour.
    """
    v = np.asarray(centroid, dtype=float)
    if v.shape != (24,):
        raise ValueError("demand profile must have 24 hourly values")
    diff = v[:-1] - v[1:]
    t_s, t_e = int(np.argmin(diff)), int(np.argmax(diff))
    if t_s >= t_e:
        raise NoRampError(f"no ramp-up before setback (ramp-up {t_s}, setback {t_e})")
    return DemandSignals(t_s, t_e)


def miss_waste(occ: OccupancySignals, dem: DemandSignals) -> MissWaste:
    """Waste: static operation outside the occupant window. Miss: the reverse."""
    if occ.unoccupied or occ.t_s_o is None:
        return MissWaste(dem.t_e_e - dem.t_s_e, 0)
    waste = max(0, occ.t_s_o - dem.t_s_e)
    miss = max(0, dem.t_s_e - occ.t_s_o)
    if occ.t_e_o is None:
        miss += LAST_HOUR - dem.t_e_e
    else:
        waste += max(0, dem.t_e_e - occ.t_e_o)
        miss += max(0, occ.t_e_o - dem.t_e_e)
    return MissWaste(waste, miss)
