"""Outcome metrics and experiment harnesses built on the correlation engine.

Everything downstream of `correlate` lives here: scoring ranked identity
lists against ground truth, sweeping the (window width, threshold) grid,
shrinking candidate sets with multi-session intersection, deriving the
restricted label set from channel confusion, and the naive-vs-indexed
filtering benchmark.
"""
from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .engine import (
    DEFAULT_MIN_OBSERVED_FRACTION,
    FilterConfig,
    RankEntry,
    RankedIdentityList,
    correlate,
    filter_codes_absolute,
)
from .errors import ConfigError, DataError, MemoryCapExceeded, MissingGroundTruth
from .model import (
    ActivityLabel,
    Channel,
    MotionDataset,
    SensorPosition,
    VisualDataset,
)
from .pipeline import build_series
from .synth import (
    CohortSpec,
    GroundTruth,
    TraceCohort,
    generate_cohort,
    permute_expand,
    train_classifier,
)

__all__ = [
    "Outcome",
    "EvalReport",
    "ScalingRow",
    "DEFAULT_CONFUSION_THRESHOLD",
    "DEFAULT_RESTRICTED_SET",
    "DEFAULT_NAIVE_CUTOFF",
    "evaluate",
    "sweep_parameters",
    "sweep_to_rows",
    "write_sweep_csv",
    "restricted_set_from_confusion",
    "label_agreement",
    "intersect_sessions",
    "bench_matrices",
    "bench_scaling",
    "write_scaling_csv",
    "fit_r2",
]


class Outcome(Enum):
    """Per-avatar result of one correlation run."""

    CORRECT = "correctly_correlated"
    INCORRECT = "incorrectly_correlated"
    NONE = "none_correlated"


@dataclass(frozen=True)
class EvalReport:
    """Scored outcomes for one ranking batch.

    `config` echoes whatever run parameters produced the rankings so a
    report row is self-describing when written out next to others.
    """

    outcomes: Mapping[str, Outcome]
    top_1_rate: float
    top_3_rate: float
    top_k: int
    top_k_rate: float
    config: Mapping[str, object] = field(default_factory=dict)

    def fraction(self, outcome: Outcome) -> float:
        n = len(self.outcomes)
        return sum(1 for o in self.outcomes.values() if o is outcome) / n

    @property
    def fraction_correct(self) -> float:
        return self.fraction(Outcome.CORRECT)

    @property
    def fraction_incorrect(self) -> float:
        return self.fraction(Outcome.INCORRECT)

    @property
    def fraction_none(self) -> float:
        return self.fraction(Outcome.NONE)

    def to_dict(self) -> dict:
        return {
            "top_1_rate": self.top_1_rate,
            "top_3_rate": self.top_3_rate,
            "top_k": self.top_k,
            "top_k_rate": self.top_k_rate,
            "fraction_correct": self.fraction_correct,
            "fraction_incorrect": self.fraction_incorrect,
            "fraction_none": self.fraction_none,
            "outcomes": {a: o.value for a, o in sorted(self.outcomes.items())},
            "config": dict(self.config),
        }


def _truth_mapping(truth) -> Mapping[str, str]:
    if isinstance(truth, GroundTruth):
        return truth.mapping
    return truth


def evaluate(rankings: Sequence[RankedIdentityList], truth, top_k: int = 3,
             *, config: Mapping[str, object] | None = None) -> EvalReport:
    """Score rankings against the avatar-to-identity ground truth.

    An empty ranking is the "none correlated" outcome; otherwise the top
    entry decides correct vs incorrect.  Top-k rates count avatars whose
    true identity appears among the first k entries.
    """
    if top_k < 1:
        raise ConfigError(f"top_k must be >= 1, got {top_k}")
    if not rankings:
        raise DataError("no rankings to evaluate")
    mapping = _truth_mapping(truth)
    outcomes: dict[str, Outcome] = {}
    hits_1 = hits_3 = hits_k = 0
    for ranking in rankings:
        avatar = ranking.avatar_id
        try:
            true_id = mapping[avatar]
        except KeyError:
            raise MissingGroundTruth(f"no ground truth for avatar {avatar!r}") from None
        ids = ranking.identity_ids()
        if not ids:
            outcomes[avatar] = Outcome.NONE
            continue
        outcomes[avatar] = Outcome.CORRECT if ids[0] == true_id else Outcome.INCORRECT
        hits_1 += ids[0] == true_id
        hits_3 += true_id in ids[:3]
        hits_k += true_id in ids[:top_k]
    n = len(rankings)
    return EvalReport(
        outcomes=outcomes,
        top_1_rate=hits_1 / n,
        top_3_rate=hits_3 / n,
        top_k=top_k,
        top_k_rate=hits_k / n,
        config=dict(config) if config else {},
    )


# ---------------------------------------------------------------------------
# (w, t) parameter sweep

def _dataset_for_width(cohort: TraceCohort, w: float, motion_model, visual_model,
                       ) -> tuple[VisualDataset, MotionDataset]:
    motion = MotionDataset(
        build_series(trace, w, motion_model, ident)
        for ident, trace in cohort.motion_traces.items()
    )
    visual = VisualDataset(
        build_series(trace, w, visual_model, avatar)
        for avatar, trace in cohort.keypoint_traces.items()
    )
    return visual, motion


def sweep_parameters(cohort: TraceCohort | CohortSpec, w_values: Sequence[float],
                     t_values: Sequence[float], *,
                     models: Mapping[float, tuple] | None = None,
                     restricted: frozenset[ActivityLabel] | None = None,
                     min_observed_fraction: float = DEFAULT_MIN_OBSERVED_FRACTION,
                     top_k: int = 3,
                     train_seed: int = 0,
                     threads: int = 1) -> dict[tuple[float, float], EvalReport]:
    """Full factorial grid over window width and normalized threshold.

    Given a TraceCohort, series are rebuilt from the raw traces for every
    w, with classifiers trained per width unless `models` supplies a
    (motion, visual) pair for it.  Given a CohortSpec, the cohort is
    regenerated per width with the total recording time held fixed, so
    wider windows mean shorter sequences just as re-windowing would.
    Returns {(w, t): EvalReport}.
    """
    if not w_values or not t_values:
        raise ConfigError("w_values and t_values must be non-empty")
    if any(w <= 0 for w in w_values):
        raise ConfigError("window widths must be positive")
    if any(not 0.0 <= t <= 1.0 for t in t_values):
        raise ConfigError("normalized thresholds must lie in [0, 1]")
    datasets: dict[float, tuple[VisualDataset, MotionDataset]] = {}
    truths: dict[float, GroundTruth] = {}
    if isinstance(cohort, CohortSpec):
        total_seconds = cohort.n_windows * cohort.window_seconds
        for w in w_values:
            n_w = max(1, int(round(total_seconds / w)))
            spec_w = replace(cohort, window_seconds=w, n_windows=n_w)
            visual, motion, truth = generate_cohort(spec_w)
            datasets[w] = (visual, motion)
            truths[w] = truth
    else:
        for w in w_values:
            if models is not None and w in models:
                motion_model, visual_model = models[w]
            else:
                motion_model = train_classifier(Channel.MOTION, w, seed=train_seed)
                visual_model = train_classifier(Channel.VISUAL, w, seed=train_seed)
            datasets[w] = _dataset_for_width(cohort, w, motion_model, visual_model)
            truths[w] = cohort.truth

    positions = [p.value for p in SensorPosition]

    def cell(w: float, t: float) -> EvalReport:
        visual, motion = datasets[w]
        config = FilterConfig(t_norm=t, restricted=restricted)
        rankings = correlate(visual, motion, config, min_observed_fraction)
        echo = {
            "w": w,
            "t_norm": t,
            "restricted": sorted(l.name for l in restricted) if restricted else None,
            "positions": positions,
            "min_observed_fraction": min_observed_fraction,
        }
        return evaluate(rankings, truths[w], top_k, config=echo)

    cells = [(w, t) for w in w_values for t in t_values]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(lambda c: cell(*c), cells))
    else:
        reports = [cell(w, t) for w, t in cells]
    return dict(zip(cells, reports))


def sweep_to_rows(grid: Mapping[tuple[float, float], EvalReport]) -> list[dict]:
    """Long-format rows (one per grid cell) for plotting or CSV export."""
    rows = []
    for (w, t), report in sorted(grid.items()):
        rows.append({
            "w": w,
            "t_norm": t,
            "top_1_rate": report.top_1_rate,
            "top_3_rate": report.top_3_rate,
            "fraction_correct": report.fraction_correct,
            "fraction_incorrect": report.fraction_incorrect,
            "fraction_none": report.fraction_none,
        })
    return rows


SWEEP_FIELDS = ["w", "t_norm", "top_1_rate", "top_3_rate",
                 "fraction_correct", "fraction_incorrect", "fraction_none"]


def write_sweep_csv(grid: Mapping[tuple[float, float], EvalReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        writer.writeheader()
        writer.writerows(sweep_to_rows(grid))


# ---------------------------------------------------------------------------
# restricted label set from channel confusion

DEFAULT_CONFUSION_THRESHOLD = 0.6

# Labels that survive the default threshold under typical channel error
# rates: idle and head rotation confuse too easily across channels.
DEFAULT_RESTRICTED_SET = frozenset({
    ActivityLabel.BODY_ROTATION,
    ActivityLabel.HAND_MOVEMENT,
    ActivityLabel.WALKING,
    ActivityLabel.BENDING,
    ActivityLabel.JUMPING,
    ActivityLabel.OTHER,
})


def label_agreement(cm_pair) -> dict[ActivityLabel, float]:
    """Per-label rate at which both channels report the true label.

    Channels mislabel independently, so the agreement rate for label l is
    the product of the two diagonal entries at l.
    """
    motion_cm, visual_cm = cm_pair
    diag_m = np.diagonal(motion_cm.rows)
    diag_v = np.diagonal(visual_cm.rows)
    return {label: float(diag_m[label.value] * diag_v[label.value])
            for label in ActivityLabel}


def restricted_set_from_confusion(cm_pair, threshold: float = DEFAULT_CONFUSION_THRESHOLD,
                                  ) -> frozenset[ActivityLabel]:
    """Labels whose cross-channel confusion (1 - agreement) stays under
    `threshold`.  Larger thresholds always retain a superset."""
    if not 0.0 < threshold <= 1.0:
        raise ConfigError(f"threshold must lie in (0, 1], got {threshold}")
    agreement = label_agreement(cm_pair)
    return frozenset(label for label, a in agreement.items() if 1.0 - a < threshold)


# ---------------------------------------------------------------------------
# multi-session intersection

def intersect_sessions(session_rankings: Sequence[Sequence[RankedIdentityList]],
                       ) -> list[RankedIdentityList]:
    """Combine rankings of the same avatars across recording sessions.

    A candidate survives only if every session ranked it; survivors are
    re-ordered by mean rho, each keeping the sensor position from its
    best-scoring session.  An empty intersection leaves the avatar with an
    empty ranking.
    """
    if len(session_rankings) < 2:
        raise ConfigError("need at least two sessions to intersect")
    per_session: list[dict[str, RankedIdentityList]] = []
    for rankings in session_rankings:
        per_session.append({r.avatar_id: r for r in rankings})
    avatars = list(per_session[0])
    expected = set(avatars)
    for i, by_avatar in enumerate(per_session[1:], start=2):
        if set(by_avatar) != expected:
            raise DataError(f"session {i} ranks a different avatar set")

    merged: list[RankedIdentityList] = []
    for avatar in avatars:
        entry_maps = [
            {e.identity_id: e for e in by_avatar[avatar].entries}
            for by_avatar in per_session
        ]
        survivors = set(entry_maps[0])
        for m in entry_maps[1:]:
            survivors &= set(m)
        scored = []
        for ident in survivors:
            entries = [m[ident] for m in entry_maps]
            rhos = [e.rho for e in entries]
            best = max(entries, key=lambda e: e.rho)
            scored.append((sum(rhos) / len(rhos), ident, best.position))
        scored.sort(key=lambda item: (-item[0], item[1]))
        merged.append(RankedIdentityList(avatar, tuple(
            RankEntry(ident, rho, position) for rho, ident, position in scored
        )))
    return merged


# ---------------------------------------------------------------------------
# scaling benchmark

DEFAULT_NAIVE_CUTOFF = 10 ** 10  # pair comparisons; naive rows at or past it are skipped


@dataclass(frozen=True)
class ScalingRow:
    """One timing measurement of the filtering stage."""

    p: int
    q: int
    k: int
    t_abs: int
    method: str  # "naive" | "indexed"
    status: str  # "ok" | "skipped" | "refused"
    wall_time_ms: float | None
    pairs_retained: int | None

    def __post_init__(self):
        if self.method not in ("naive", "indexed"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.status not in ("ok", "skipped", "refused"):
            raise ConfigError(f"unknown status {self.status!r}")
        if self.status == "ok":
            if self.wall_time_ms is None or self.wall_time_ms <= 0:
                raise DataError("measured rows need a positive wall time")
            if self.pairs_retained is None or not 0 <= self.pairs_retained <= self.p * self.q:
                raise DataError("pairs_retained must lie in [0, p*q]")

    def to_dict(self) -> dict:
        return {
            "p": self.p, "q": self.q, "k": self.k, "t_abs": self.t_abs,
            "method": self.method, "status": self.status,
            "wall_time_ms": self.wall_time_ms,
            "pairs_retained": self.pairs_retained,
        }


def bench_matrices(p: int, q: int, k: int, *, seed: int = 0, n_base: int = 32,
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Label-code matrices for one benchmark size.

    A small pool of random rows is expanded to p visual and q motion rows
    by row sampling plus per-row permutation, which keeps a realistic label
    mix while making sequences distinct.  The pool rows themselves lead
    both matrices verbatim so the filter always has exact matches to find;
    without them, independent permutations rarely land within a small
    mismatch budget and every probe would come back empty.
    """
    if p < 1 or q < 1 or k < 1:
        raise ConfigError(f"need positive p, q, k; got {p}, {q}, {k}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 97)))
    base = rng.integers(0, len(ActivityLabel), size=(min(n_base, q), k), dtype=np.uint8)
    v_mat = permute_expand(base, p, seed=seed + 1)
    m_mat = permute_expand(base, q, seed=seed + 2)
    v_mat[: min(len(base), p)] = base[: min(len(base), p)]
    m_mat[: len(base)] = base
    return v_mat, m_mat


def _time_naive(v_mat, m_mat, t_abs: int) -> tuple[float, int]:
    start = time.perf_counter()
    out = filter_codes_absolute(v_mat, m_mat, t_abs)
    elapsed = time.perf_counter() - start
    retained = sum(len(keep) for keep, _ in out)
    return elapsed * 1e3, retained


def _time_indexed(v_mat, m_mat, t_abs: int, memory_cap_bytes) -> tuple[float, int]:
    from .windex import WildcardIndex, filter_pairs_indexed

    start = time.perf_counter()
    index = WildcardIndex.build(m_mat, t_abs, memory_cap_bytes=memory_cap_bytes)
    rows, ids, _ = filter_pairs_indexed(v_mat, index)
    elapsed = time.perf_counter() - start
    return elapsed * 1e3, int(rows.size)


def bench_scaling(sizes: Sequence[tuple[int, int]], k: int = 10, t_abs: int = 3,
                  methods: Sequence[str] = ("naive", "indexed"), *,
                  seed: int = 0,
                  naive_cutoff: int = DEFAULT_NAIVE_CUTOFF,
                  memory_cap_bytes: int | None = None) -> list[ScalingRow]:
    """Time the filtering stage per size and method.

    Dataset generation is excluded from the clock.  Naive rows whose p*q
    reaches `naive_cutoff` are emitted with status "skipped"; an index
    build refused by the memory cap becomes status "refused".  The
    retained-pair count is deterministic given the seed; wall times are
    not.
    """
    for method in methods:
        if method not in ("naive", "indexed"):
            raise ConfigError(f"unknown method {method!r}")
    rows: list[ScalingRow] = []
    for p, q in sizes:
        v_mat, m_mat = bench_matrices(p, q, k, seed=seed)
        for method in methods:
            if method == "naive":
                if p * q >= naive_cutoff:
                    rows.append(ScalingRow(p, q, k, t_abs, method, "skipped", None, None))
                    continue
                wall_ms, retained = _time_naive(v_mat, m_mat, t_abs)
            else:
                try:
                    wall_ms, retained = _time_indexed(v_mat, m_mat, t_abs, memory_cap_bytes)
                except MemoryCapExceeded:
                    rows.append(ScalingRow(p, q, k, t_abs, method, "refused", None, None))
                    continue
            rows.append(ScalingRow(p, q, k, t_abs, method, "ok",
                                   max(wall_ms, 1e-6), retained))
    return rows


SCALING_FIELDS = ["p", "q", "k", "t_abs", "method", "status",
                   "wall_time_ms", "pairs_retained"]


def write_scaling_csv(rows: Sequence[ScalingRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SCALING_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row.to_dict())


def fit_r2(x: Sequence[float], y: Sequence[float]) -> float:
    """R-squared of the least-squares line of y against x.

    Pass transformed abscissae to test other shapes, e.g. x = p**2 for a
    quadratic-growth check.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise ConfigError("need at least three (x, y) points")
    coeffs = np.polyfit(x, y, 1)
    pred = np.polyval(coeffs, x)
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return 1.0
    return 1.0 - ss_res / ss_tot
