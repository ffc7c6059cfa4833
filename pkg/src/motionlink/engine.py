"""Correlation engine: activity-based filtering and magnitude-based ranking.

Given the p visual-channel series and the q motion-channel series on a
shared window grid, the engine first keeps only identity candidates whose
label sequence lies within a mismatch budget of the avatar's (normalized
Hamming distance), then ranks the survivors by the best rank correlation
between the avatar's per-position magnitudes and the candidate's motion
magnitudes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    EmptyRanking,
    InsufficientData,
    LengthMismatch,
    UndefinedCorrelation,
)
from .model import (
    ActivityLabel,
    ActivityVectorSeries,
    Channel,
    MotionDataset,
    SensorPosition,
    VisualDataset,
    dumps_canonical,
)

DEFAULT_T_NORM = 0.30
DEFAULT_MIN_OBSERVED_FRACTION = 0.5
_BUDGET_EPS = 1e-9


@dataclass(frozen=True)
class FilterConfig:
    """Filtering knobs: normalized mismatch threshold and an optional
    restricted label set (windows whose labels fall outside it are ignored)."""

    t_norm: float = DEFAULT_T_NORM
    restricted: frozenset[ActivityLabel] | None = None

    def __post_init__(self):
        if not 0.0 <= self.t_norm <= 1.0:
            raise ConfigError(f"t_norm must lie in [0, 1], got {self.t_norm}")
        if self.restricted is not None:
            restricted = frozenset(ActivityLabel(l) for l in self.restricted)
            if not restricted:
                raise ConfigError("restricted label set must be non-empty")
            object.__setattr__(self, "restricted", restricted)


class HammingResult(NamedTuple):
    distance: int
    effective_length: int

    @property
    def normalized(self) -> float:
        return self.distance / self.effective_length if self.effective_length else 0.0


def _codes(seq) -> np.ndarray:
    if isinstance(seq, ActivityVectorSeries):
        return seq.activity_codes()
    return np.asarray([int(ActivityLabel(l)) for l in seq], dtype=np.uint8)


def _restricted_lut(restricted: frozenset[ActivityLabel]) -> np.ndarray:
    lut = np.zeros(len(ActivityLabel), dtype=bool)
    for l in restricted:
        lut[int(l)] = True
    return lut


def hamming_distance(a, b, restricted: frozenset[ActivityLabel] | None = None) -> HammingResult:
    """Mismatch count between two label sequences of equal length.

    With a restricted set, windows where either label falls outside the set
    contribute neither to the distance nor to the effective length.
    """
    ca, cb = _codes(a), _codes(b)
    if ca.size != cb.size:
        raise LengthMismatch(f"sequences of length {ca.size} and {cb.size}")
    if restricted is None:
        return HammingResult(int((ca != cb).sum()), int(ca.size))
    lut = _restricted_lut(restricted)
    counted = lut[ca] & lut[cb]
    return HammingResult(int(((ca != cb) & counted).sum()), int(counted.sum()))


def mismatch_budget(t_norm: float, n_effective: int) -> int:
    """Allowed absolute mismatches: floor(t_norm * n_effective).

    The product is nudged before flooring so that thresholds like 0.30 of 10
    windows give 3, not 2, despite binary float representation.
    """
    if not 0.0 <= t_norm <= 1.0:
        raise ConfigError(f"t_norm must lie in [0, 1], got {t_norm}")
    if n_effective < 0:
        raise DataError(f"n_effective must be >= 0, got {n_effective}")
    return int(math.floor(t_norm * n_effective + _BUDGET_EPS))


@dataclass
class CandidatePairSet:
    """Surviving (avatar, identity) pairs with their Hamming distances."""

    pairs: dict[str, dict[str, int]] = field(default_factory=dict)

    def add(self, avatar_id: str, identity_id: str, distance: int) -> None:
        self.pairs.setdefault(avatar_id, {})[identity_id] = distance

    def candidates(self, avatar_id: str) -> dict[str, int]:
        return self.pairs.get(avatar_id, {})

    def total_pairs(self) -> int:
        return sum(len(v) for v in self.pairs.values())

    def pair_set(self) -> set[tuple[str, str]]:
        return {(a, i) for a, ids in self.pairs.items() for i in ids}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CandidatePairSet):
            return NotImplemented
        return self.pairs == other.pairs


def filter_codes_absolute(v_mat: np.ndarray, m_mat: np.ndarray, t_abs: int):
    """Naive filter over raw code matrices with an absolute budget.

    Returns a list of (identity-index array, distance array) per visual row.
    This is the quadratic-scan reference path: every pair is compared.
    """
    v_mat = np.ascontiguousarray(v_mat, dtype=np.uint8)
    m_mat = np.ascontiguousarray(m_mat, dtype=np.uint8)
    if v_mat.shape[1] != m_mat.shape[1]:
        raise LengthMismatch(f"k mismatch: {v_mat.shape[1]} vs {m_mat.shape[1]}")
    if t_abs < 0:
        raise ConfigError(f"t_abs must be >= 0, got {t_abs}")
    out = []
    for row in v_mat:
        dists = (m_mat != row).sum(axis=1)
        keep = np.flatnonzero(dists <= t_abs)
        out.append((keep, dists[keep].astype(np.int64)))
    return out


def activity_filter(visual: VisualDataset, motion: MotionDataset,
                    config: FilterConfig) -> CandidatePairSet:
    """Keep (avatar, identity) pairs within the normalized mismatch budget.

    All series must share one window grid and one length n.  Cost is
    O(p * q * n): every pair is scanned.  The wildcard index offers the
    same answer in near-linear time for the unrestricted case.
    """
    n_v, n_m = visual.uniform_length(), motion.uniform_length()
    if n_v != n_m:
        raise LengthMismatch(f"visual series have n={n_v}, motion series n={n_m}")
    if visual.window_seconds != motion.window_seconds:
        raise DataError(
            f"window width mismatch: {visual.window_seconds} vs {motion.window_seconds}"
        )
    v_mat = visual.label_matrix()
    m_mat = motion.label_matrix()
    m_ids = motion.source_ids
    result = CandidatePairSet()
    if config.restricted is None:
        budget = mismatch_budget(config.t_norm, n_v)
        for row, avatar_id in zip(v_mat, visual.source_ids):
            dists = (m_mat != row).sum(axis=1)
            keep = np.flatnonzero(dists <= budget)
            for j in keep:
                result.add(avatar_id, m_ids[j], int(dists[j]))
    else:
        lut = _restricted_lut(config.restricted)
        v_in = lut[v_mat]
        m_in = lut[m_mat]
        for row, row_in, avatar_id in zip(v_mat, v_in, visual.source_ids):
            counted = row_in[None, :] & m_in
            dists = ((m_mat != row) & counted).sum(axis=1)
            n_eff = counted.sum(axis=1)
            budgets = np.floor(config.t_norm * n_eff + _BUDGET_EPS).astype(np.int64)
            keep = np.flatnonzero(dists <= budgets)
            for j in keep:
                result.add(avatar_id, m_ids[j], int(dists[j]))
    return result


# ---------------------------------------------------------------------------
# rank correlation

def fractional_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their positions."""
    values = np.asarray(values, dtype=np.float64)
    _, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
    starts = np.cumsum(counts) - counts
    average = starts + (counts + 1) / 2.0
    return average[inverse]


def spearman_rho(x, y) -> float:
    """Spearman rank correlation: Pearson correlation of fractional ranks.

    Ties are handled by average ranks, which reduces to the classic
    1 - 6*sum(d^2) / (n*(n^2-1)) form when no ties are present.  Raises
    InsufficientData below two pairs and UndefinedCorrelation when either
    side has zero rank variance.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"paired vectors required, got {x.shape} and {y.shape}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise DataError("correlation inputs must be finite")
    if x.size < 2:
        raise InsufficientData(f"need at least 2 pairs, got {x.size}")
    rx = fractional_ranks(x)
    ry = fractional_ranks(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelation("an input has zero rank variance")
    return float(dx @ dy / math.sqrt(sxx * syy))


# ---------------------------------------------------------------------------
# ranking

@dataclass(frozen=True)
class RankEntry:
    identity_id: str
    rho: float  # -inf marks a candidate whose correlation was undefined everywhere
    position: SensorPosition


@dataclass(frozen=True)
class RankedIdentityList:
    """Candidates for one avatar, best rho first; ties break on identity id."""

    avatar_id: str
    entries: tuple[RankEntry, ...]

    def top(self) -> RankEntry | None:
        return self.entries[0] if self.entries else None

    def identity_ids(self) -> tuple[str, ...]:
        return tuple(e.identity_id for e in self.entries)


def _best_position(visual_series: ActivityVectorSeries, motion_series: ActivityVectorSeries,
                   min_observed_fraction: float):
    """Best (rho, position) across sensor positions, or None if all skipped.

    Pairwise deletion: windows unobservable for a position are dropped for
    that position only.  Positions with too little coverage are skipped;
    a position whose correlation is undefined scores -inf so it can never
    be preferred over a real correlation.
    """
    m_vals = motion_series.motion_magnitudes.values
    best: tuple[float, SensorPosition] | None = None
    for position in SensorPosition:
        seq = visual_series.magnitude_for(position)
        mask = seq.observed_mask
        n = len(seq)
        if n == 0 or mask.sum() / n < min_observed_fraction or mask.sum() < 2:
            continue
        try:
            rho = spearman_rho(seq.values[mask], m_vals[mask])
        except UndefinedCorrelation:
            rho = float("-inf")
        if best is None or rho > best[0]:
            best = (rho, position)
    return best


def rank_identities(visual_series: ActivityVectorSeries,
                    candidates: Mapping[str, ActivityVectorSeries] | Iterable[ActivityVectorSeries],
                    min_observed_fraction: float = DEFAULT_MIN_OBSERVED_FRACTION,
                    ) -> RankedIdentityList:
    """Rank candidate identities for one avatar by best per-position rho."""
    if not 0.0 <= min_observed_fraction <= 1.0:
        raise ConfigError(
            f"min_observed_fraction must lie in [0, 1], got {min_observed_fraction}"
        )
    if isinstance(candidates, Mapping):
        items = list(candidates.values())
    else:
        items = list(candidates)
    if not items:
        return RankedIdentityList(visual_series.source_id, ())
    entries = []
    for m in items:
        if len(m) != len(visual_series):
            raise LengthMismatch(
                f"{m.source_id}: length {len(m)} vs avatar length {len(visual_series)}"
            )
        best = _best_position(visual_series, m, min_observed_fraction)
        if best is not None:
            entries.append(RankEntry(m.source_id, best[0], best[1]))
    if not entries:
        raise EmptyRanking(
            f"{visual_series.source_id}: every position of every candidate was skipped"
        )
    entries.sort(key=lambda e: (-e.rho, e.identity_id))
    return RankedIdentityList(visual_series.source_id, tuple(entries))


def correlate(visual: VisualDataset, motion: MotionDataset, config: FilterConfig,
              min_observed_fraction: float = DEFAULT_MIN_OBSERVED_FRACTION,
              use_index: bool = False, threads: int = 1) -> list[RankedIdentityList]:
    """Full two-stage pipeline: filter candidates, then rank them.

    Returns one RankedIdentityList per avatar, in dataset order; an avatar
    whose candidate set ends up empty (or all-skipped) gets an empty list,
    the "none correlated" outcome.  With use_index=True the filtering stage
    runs on the wildcard index; results are identical to the naive scan.
    `threads` bounds worker parallelism for the ranking stage; the output
    does not depend on it.
    """
    if use_index:
        if config.restricted is not None:
            raise ConfigError("indexed filtering does not support restricted label sets")
        from .windex import filter_with_index

        n = motion.uniform_length()
        if visual.uniform_length() != n:
            raise LengthMismatch(
                f"visual series have n={visual.uniform_length()}, motion series n={n}"
            )
        pair_set = filter_with_index(visual, motion, mismatch_budget(config.t_norm, n))
    else:
        pair_set = activity_filter(visual, motion, config)

    def rank_one(avatar) -> RankedIdentityList:
        ids = pair_set.candidates(avatar.source_id)
        candidates = [motion[i] for i in sorted(ids)]
        if not candidates:
            return RankedIdentityList(avatar.source_id, ())
        try:
            return rank_identities(avatar, candidates, min_observed_fraction)
        except EmptyRanking:
            return RankedIdentityList(avatar.source_id, ())

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(rank_one, visual))
    return [rank_one(avatar) for avatar in visual]


# ---------------------------------------------------------------------------
# ranking serialization

def ranking_to_dict(ranking: RankedIdentityList,
                    truth: Mapping[str, str] | None = None) -> dict:
    obj = {
        "avatar": ranking.avatar_id,
        "ranking": [
            {
                "identity": e.identity_id,
                "rho": None if math.isinf(e.rho) else e.rho,
                "position": e.position.value,
            }
            for e in ranking.entries
        ],
    }
    if truth is not None:
        if not ranking.entries:
            obj["outcome"] = "none"
        elif truth.get(ranking.avatar_id) == ranking.entries[0].identity_id:
            obj["outcome"] = "correct"
        else:
            obj["outcome"] = "incorrect"
    return obj


def ranking_from_dict(obj: Mapping) -> RankedIdentityList:
    try:
        entries = tuple(
            RankEntry(
                str(e["identity"]),
                float("-inf") if e["rho"] is None else float(e["rho"]),
                SensorPosition(e["position"]),
            )
            for e in obj["ranking"]
        )
        return RankedIdentityList(str(obj["avatar"]), entries)
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"bad ranking object: {exc}") from None


def write_rankings_jsonl(rankings: Sequence[RankedIdentityList], path,
                         truth: Mapping[str, str] | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rankings:
            fh.write(dumps_canonical(ranking_to_dict(r, truth)))
            fh.write("\n")


def read_rankings_jsonl(path) -> list[RankedIdentityList]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(ranking_from_dict(json.loads(line)))
            except (json.JSONDecodeError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return out
