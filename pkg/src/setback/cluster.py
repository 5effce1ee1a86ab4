"""Daily profile matrices, KMeans, WSS elbow selection, cluster calendars and
day-group schedule tables."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .preprocess import SEMESTERS, HourlySeries, Kind, NormalizationParams, semester_of

log = logging.getLogger(__name__)

DAY_GROUPS = ("Mon-Thu", "Fri", "Sat-Sun")


def day_group(day: date) -> str:
    wd = day.weekday()
    return DAY_GROUPS[0] if wd <= 3 else DAY_GROUPS[1] if wd == 4 else DAY_GROUPS[2]


def dataset_id(kind: Kind | str, semester: str) -> str:
    """Short dataset name, e.g. ``D-OS`` for summer occupancy."""
    k = "O" if Kind(kind) is Kind.OCCUPANCY else "C"
    return f"D-{k}{semester[0].upper()}"


def profile_name(kind: Kind | str, semester: str, label: int) -> str:
    return f"{dataset_id(kind, semester)}-{label}"


@dataclass(frozen=True)
class DailyProfileMatrix:
    keys: tuple[tuple[str, date], ...]
    values: np.ndarray
    kind: Kind
    semester: str
    norm_params: Mapping[str, NormalizationParams] = field(default_factory=dict)

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[1] != 24 or v.shape[0] != len(self.keys):
            raise ValueError("profile matrix must be n x 24 with one key per row")
        if v.size and (not np.isfinite(v).all() or v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("profile values must be finite and within [0, 1]")

    def __len__(self) -> int:
        return len(self.keys)


def build_profile_matrix(
    series: Mapping[str, HourlySeries],
    split_date: date,
    semester: str,
    kind: Kind,
    norm_params: Mapping[str, NormalizationParams] | None = None,
) -> DailyProfileMatrix:
    """One row per complete (building, day) of ``semester``.

    ``series`` must already be normalized. Days holding any null hour are
    left out. The split date itself belongs to the later semester.
    """
    keys, rows = [], []
    for b in sorted(series):
        s = series[b]
        mat = s.day_matrix()
        complete = s.complete_days()
        for i, d in enumerate(s.dates):
            if complete[i] and semester_of(d, split_date) == semester:
                keys.append((b, d))
                rows.append(mat[i])
    values = np.array(rows, dtype=float).reshape(-1, 24)
    if not keys:
        log.warning("no complete %s days for %s", semester, Kind(kind).value)
    return DailyProfileMatrix(tuple(keys), values, Kind(kind), semester, dict(norm_params or {}))


# --- KMeans -------------------------------------------------------------------

@dataclass(frozen=True)
class ClusterModel:
    """Fitted KMeans model. Labels are 0-based indices into ``centroids``,
    which are ordered by descending peak value."""

    k: int
    centroids: np.ndarray
    labels: np.ndarray
    wss: float
    seed: int
    restarts: int
    n_iter: int = 0


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def wss(centroids: np.ndarray, labels: np.ndarray, x: np.ndarray) -> float:
    """Within-cluster sum of squared distances to the assigned centroids."""
    x = np.asarray(x, dtype=float)
    centroids = np.asarray(centroids, dtype=float)
    labels = np.asarray(labels)
    if x.ndim != 2 or centroids.ndim != 2 or x.shape[1] != centroids.shape[1] or len(labels) != len(x):
        raise ValueError("dimension mismatch between points, centroids and labels")
    return float(((x - centroids[labels]) ** 2).sum())


def model_wss(model: ClusterModel, matrix: DailyProfileMatrix | np.ndarray) -> float:
    x = matrix.values if isinstance(matrix, DailyProfileMatrix) else matrix
    return wss(model.centroids, model.labels, x)


def farthest_point_seeds(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    idx = [int(rng.integers(len(x)))]
    d = ((x - x[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d))
        idx.append(nxt)
        d = np.minimum(d, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[idx].copy()


def _fast_sq_dists(x: np.ndarray, c: np.ndarray, x_sq: np.ndarray) -> np.ndarray:
    """Expanded ||x||^2 - 2 x.c + ||c||^2; used only inside Lloyd iterations."""
    d = x_sq[:, None] - 2.0 * (x @ c.T) + (c * c).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _means(x: np.ndarray, labels: np.ndarray, k: int, old: np.ndarray) -> np.ndarray:
    counts = np.bincount(labels, minlength=k)
    onehot = np.zeros((k, len(x)))
    onehot[labels, np.arange(len(x))] = 1.0
    sums = onehot @ x
    c = old.copy()
    nz = counts > 0
    c[nz] = sums[nz] / counts[nz, None]
    return c


def _repair_empty(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray, k: int) -> None:
    """Give each empty cluster the point farthest from its own centroid."""
    sizes = np.bincount(labels, minlength=k)
    if sizes.all():
        return
    for j in range(k):
        sizes = np.bincount(labels, minlength=k)
        if sizes[j]:
            continue
        d = ((x - centroids[labels]) ** 2).sum(axis=1)
        d[sizes[labels] <= 1] = -1.0
        i = int(np.argmax(d))
        labels[i] = j
        centroids[j] = x[i]


def _transfers(x: np.ndarray, labels: np.ndarray, k: int, max_moves: int) -> tuple[np.ndarray, int]:
    """Greedy single-point transfers until none lowers WSS.

    Moving x from cluster a (size n_a > 1) to b changes WSS by
    n_b/(n_b+1)|x-c_b|^2 - n_a/(n_a-1)|x-c_a|^2. Only the two touched
    clusters are updated per move. Returns the centroids and number of moves.
    """
    sizes = np.bincount(labels, minlength=k).astype(float)
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, labels, x)
    c = sums / np.maximum(sizes, 1)[:, None]
    d = _sq_dists(x, c)
    rows = np.arange(len(x))
    moves = 0
    while moves < max_moves:
        own = sizes[labels]
        with np.errstate(divide="ignore", invalid="ignore"):
            removal = np.where(own > 1, own / (own - 1) * d[rows, labels], -np.inf)
        gain = sizes / (sizes + 1) * d - removal[:, None]
        gain[rows, labels] = np.inf
        i, j = np.unravel_index(np.argmin(gain), gain.shape)
        if not gain[i, j] < -1e-12 * max(1.0, float(d[i].max())):
            break
        src = labels[i]
        labels[i] = j
        for m, sign in ((src, -1.0), (j, 1.0)):
            sizes[m] += sign
            sums[m] += sign * x[i]
            c[m] = sums[m] / sizes[m]
            d[:, m] = ((x - c[m]) ** 2).sum(axis=1)
        moves += 1
    return c, moves


def _lloyd(x: np.ndarray, k: int, centroids: np.ndarray, max_iter: int, tol: float, labels=None):
    """Lloyd iterations from ``centroids`` until the assignment is a fixpoint."""
    centroids = centroids.copy()
    labels = np.full(len(x), -1) if labels is None else labels.copy()
    x_sq = (x * x).sum(axis=1)
    prev = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        new = np.argmin(_fast_sq_dists(x, centroids, x_sq), axis=1)
        _repair_empty(x, new, centroids, k)
        if np.array_equal(new, labels):
            break
        labels = new
        centroids = _means(x, labels, k, centroids)
        cur = wss(centroids, labels, x)
        assert cur <= prev + 1e-9 * max(1.0, abs(prev)), "Lloyd iteration increased WSS"
        if prev - cur < tol:
            break
        prev = cur
    return centroids, labels, it


def _refine(x: np.ndarray, k: int, centroids: np.ndarray, labels: np.ndarray, max_iter: int, tol: float):
    """Alternate single-point transfers and Lloyd until neither improves WSS.
    The result is still an assignment fixpoint with WSS no worse than the input."""
    labels = labels.copy()
    for _ in range(max_iter):
        c, moves = _transfers(x, labels, k, max_moves=len(x) * k)
        if not moves:
            break
        centroids, labels, _ = _lloyd(x, k, c, max_iter, tol, labels)
    return centroids, labels


def _order_by_peak(centroids: np.ndarray, labels: np.ndarray):
    order = np.argsort(-centroids.max(axis=1), kind="stable")
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return centroids[order], remap[labels]


def kmeans(
    matrix: DailyProfileMatrix | np.ndarray,
    k: int,
    restarts: int = 20,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-10,
) -> ClusterModel:
    """Best-of-``restarts`` Lloyd's algorithm with farthest-point seeding,
    each restart followed by single-point transfer refinement.

    Each restart draws its first seed from its own child of
    ``SeedSequence(seed)``, so the result depends only on (data, k, restarts,
    seed). Ties between restarts go to the lowest restart index.
    """
    x = np.asarray(matrix.values if isinstance(matrix, DailyProfileMatrix) else matrix, dtype=float)
    if k < 1:
        raise ValueError("k must be positive")
    if len(x) < k:
        raise DataError(f"cannot form {k} clusters from {len(x)} rows")
    best = None
    refined: dict[bytes, tuple] = {}
    for child in np.random.SeedSequence(seed).spawn(restarts):
        seeds = farthest_point_seeds(x, k, np.random.default_rng(child))
        c, lab, it = _lloyd(x, k, seeds, max_iter, tol)
        key = lab.tobytes()
        if key not in refined:
            refined[key] = _refine(x, k, c, lab, max_iter, tol)
        c, lab = refined[key]
        score = wss(c, lab, x)
        if best is None or score < best[0]:
            best = (score, c, lab, it)
    _, c, lab, it = best
    c, lab = _order_by_peak(c, lab)
    return ClusterModel(k, c, lab, wss(c, lab, x), seed, restarts, it)


def wss_curve(matrix, k_values: Iterable[int], restarts: int = 20, seed: int = 0) -> dict[int, float]:
    n = len(matrix)
    return {k: kmeans(matrix, k, restarts, seed).wss for k in k_values if k <= n}


@dataclass(frozen=True)
class ElbowSelection:
    k: int
    curve: dict[int, float]
    second_diff: dict[int, float]
    violations: tuple[int, ...] = ()
    overridden: bool = False


def select_k(curve: Mapping[int, float], k_override: int | None = None, rel_tol: float = 1e-9) -> ElbowSelection:
    """Pick k at the largest discrete second difference of the WSS curve.

    Near-ties (within ``rel_tol`` of the curve's scale) go to the smaller k.
    ``violations`` lists every k whose WSS exceeds that of k - 1.
    """
    ks = sorted(curve)
    if len(ks) < 3:
        raise ValueError("elbow selection needs at least three curve points")
    if ks != list(range(ks[0], ks[-1] + 1)):
        raise ValueError("WSS curve must cover a contiguous k range")
    w = {k: float(curve[k]) for k in ks}
    violations = tuple(k for k in ks[1:] if w[k] > w[k - 1])
    if violations:
        log.warning("WSS curve increases at k=%s", list(violations))
    sd = {k: w[k - 1] - 2 * w[k] + w[k + 1] for k in ks[1:-1]}
    if k_override is not None:
        return ElbowSelection(int(k_override), w, sd, violations, True)
    scale = max(abs(v) for v in w.values()) or 1.0
    top = max(sd.values())
    chosen = min(k for k, v in sd.items() if v >= top - rel_tol * scale)
    return ElbowSelection(chosen, w, sd, violations)


# --- calendars and schedule tables ------------------------------------------

@dataclass
class ClusterCalendar:
    """Per (building, day) profile label; labels are 1-based (1 = highest peak).

    The semester of an entry follows from its date and ``split_date``.
    """

    kind: Kind
    split_date: date
    entries: dict[tuple[str, date], int] = field(default_factory=dict)

    def semester(self, day: date) -> str:
        return semester_of(day, self.split_date)

    def merge(self, other: "ClusterCalendar") -> "ClusterCalendar":
        if other.kind != self.kind or other.split_date != self.split_date:
            raise ValueError("calendars differ in kind or split date")
        return ClusterCalendar(self.kind, self.split_date, {**self.entries, **other.entries})

    def items(self):
        return sorted(self.entries.items())


def nearest_centroid(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the nearest centroid per row; ties go to the lowest index."""
    return np.argmin(_sq_dists(np.atleast_2d(x), centroids), axis=1)


def assign_calendar(model: ClusterModel, matrix: DailyProfileMatrix, split_date: date) -> ClusterCalendar:
    labels = nearest_centroid(matrix.values, model.centroids) if len(matrix) else np.array([], dtype=int)
    return ClusterCalendar(matrix.kind, split_date, {key: int(l) + 1 for key, l in zip(matrix.keys, labels)})


@dataclass
class ScheduleTable:
    """Most frequent profile label per (building, semester, day group)."""

    rows: dict[tuple[str, str, str], int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def buildings(self) -> list[str]:
        return sorted({b for b, _, _ in self.rows})


def mode_schedule_table(calendar: ClusterCalendar, buildings: Sequence[str] | None = None) -> ScheduleTable:
    groups: dict[tuple[str, str, str], Counter] = {}
    for (b, d), label in calendar.entries.items():
        groups.setdefault((b, calendar.semester(d), day_group(d)), Counter())[label] += 1
    table = ScheduleTable()
    for b in sorted(buildings if buildings is not None else {k[0] for k in groups}):
        for sem in SEMESTERS:
            for g in DAY_GROUPS:
                counts = groups.get((b, sem, g))
                if not counts:
                    msg = f"no {g} days for {b} in {sem}; schedule row omitted"
                    log.warning(msg)
                    table.warnings.append(msg)
                    continue
                top = max(counts.values())
                table.rows[(b, sem, g)] = min(l for l, n in counts.items() if n == top)
    return table
