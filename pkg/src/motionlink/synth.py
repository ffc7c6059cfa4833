"""Synthetic cohorts for exercising the linkage pipeline end to end.

Generates matched pairs of recordings for a population of identities: each
identity follows a per-window activity script with a personal intensity level,
and both channels observe the same underlying behaviour through their own
noise.  Two generation modes exist:

* channel mode (`generate_cohort`): emits activity-vector series directly,
  applying per-channel label confusion and magnitude noise.  Fast; used for
  large populations.
* trace mode (`synthesize_trace_cohort`): emits raw inertial traces and
  keypoint traces that must be run through the feature pipeline.  Slower but
  exercises windowing, classification, and magnitude extraction for real.

All randomness is derived from per-purpose seed streams so that any single
identity's data is reproducible regardless of generation order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .model import (
    ActivityLabel,
    ActivityVectorSeries,
    Channel,
    MagnitudeSeq,
    MotionDataset,
    SensorPosition,
    VisualDataset,
    label_from_token,
)
from .pipeline import (
    DEFAULT_FRAME_RATE,
    GRAVITY,
    KEYPOINT_NAMES,
    SAVGOL_ORDER,
    SAVGOL_WINDOW,
    ClassifierModel,
    ConfusionMatrix,
    KeypointTrace,
    MotionTrace,
    apply_confusion,
    fit_classifier,
    motion_window_features,
    segment_windows,
    visual_window_features,
    _smooth_columns,
)

__all__ = [
    "CohortSpec",
    "GroundTruth",
    "DEFAULT_ACTIVITY_PRIOR",
    "DEFAULT_MAGNITUDE_BASE",
    "generate_cohort",
    "generate_sessions",
    "permute_expand",
    "synthesize_motion_trace",
    "synthesize_keypoint_trace",
    "synthesize_trace_cohort",
    "train_classifier",
    "load_cohort_spec",
    "cohort_spec_to_dict",
    "cohort_spec_from_dict",
]

# Typical per-activity movement energy, in the same unit the motion channel
# reports (mean absolute deviation of acceleration norm from gravity, m/s^2).
DEFAULT_MAGNITUDE_BASE: dict[ActivityLabel, float] = {
    ActivityLabel.IDLE: 0.05,
    ActivityLabel.BODY_ROTATION: 1.2,
    ActivityLabel.HEAD_ROTATION: 0.8,
    ActivityLabel.HAND_MOVEMENT: 1.6,
    ActivityLabel.WALKING: 2.4,
    ActivityLabel.BENDING: 2.0,
    ActivityLabel.JUMPING: 3.2,
    ActivityLabel.OTHER: 1.0,
}

DEFAULT_ACTIVITY_PRIOR: dict[ActivityLabel, float] = {
    ActivityLabel.IDLE: 0.30,
    ActivityLabel.BODY_ROTATION: 0.10,
    ActivityLabel.HEAD_ROTATION: 0.10,
    ActivityLabel.HAND_MOVEMENT: 0.15,
    ActivityLabel.WALKING: 0.15,
    ActivityLabel.BENDING: 0.08,
    ActivityLabel.JUMPING: 0.05,
    ActivityLabel.OTHER: 0.07,
}

# Sub-stream salts; every random draw goes through _rng with one of these so
# identity i's data never depends on how many identities precede it.
_SALT_SCRIPT = 1
_SALT_INTENSITY = 2
_SALT_REALIZE = 3
_SALT_CONF_MOTION = 4
_SALT_CONF_VISUAL = 5
_SALT_MAG_VISUAL = 6
_SALT_OBSERVE = 7
_SALT_PERMUTE = 8
_SALT_TRACE_MOTION = 9
_SALT_TRACE_VISUAL = 10
_SALT_TRAIN = 11

_POSITIONS = tuple(SensorPosition)


def _rng(seed: int, salt: int, index: int = 0, session: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, salt, index, session)))


@dataclass(frozen=True)
class CohortSpec:
    """Parameters of a synthetic population.

    `magnitude_noise_sd` is the standard deviation of the relative noise
    applied when an activity's nominal amplitude is realized per window; the
    realized amplitude is shared by both channels (it is the behaviour), and
    the visual channel adds an independent per-position copy of the same
    noise on top.
    """

    num_identities: int
    n_windows: int
    window_seconds: float = 1.0
    activity_prior: Mapping[ActivityLabel, float] | None = None
    motion_confusion: ConfusionMatrix | None = None
    visual_confusion: ConfusionMatrix | None = None
    magnitude_base: Mapping[ActivityLabel, float] = field(
        default_factory=lambda: dict(DEFAULT_MAGNITUDE_BASE)
    )
    intensity_range: tuple[float, float] = (0.8, 1.6)
    magnitude_noise_sd: float = 0.0
    position_observability: Mapping[SensorPosition, float] | None = None
    seed: int = 0
    shared_script: bool = False

    def __post_init__(self):
        if self.num_identities < 1:
            raise ConfigError("num_identities must be >= 1")
        if self.n_windows < 1:
            raise ConfigError("n_windows must be >= 1")
        if not self.window_seconds > 0:
            raise ConfigError("window_seconds must be positive")
        lo, hi = self.intensity_range
        if not (0 < lo <= hi):
            raise ConfigError("intensity_range must satisfy 0 < low <= high")
        if self.magnitude_noise_sd < 0:
            raise ConfigError("magnitude_noise_sd must be >= 0")
        if self.activity_prior is not None:
            total = math.fsum(self.activity_prior.get(lab, 0.0) for lab in ActivityLabel)
            if abs(total - 1.0) > 1e-9:
                raise ConfigError(f"activity_prior must sum to 1, got {total!r}")
            if any(v < 0 for v in self.activity_prior.values()):
                raise ConfigError("activity_prior entries must be >= 0")
        for lab in ActivityLabel:
            base = self.magnitude_base.get(lab)
            if base is None or base < 0:
                raise ConfigError(f"magnitude_base missing or negative for {lab.token}")
        if self.position_observability is not None:
            for pos, p in self.position_observability.items():
                if not 0.0 <= p <= 1.0:
                    raise ConfigError(f"observability for {pos.value} must be in [0, 1]")

    def prior_vector(self) -> np.ndarray:
        prior = self.activity_prior or DEFAULT_ACTIVITY_PRIOR
        vec = np.array([prior.get(lab, 0.0) for lab in ActivityLabel], dtype=np.float64)
        return vec / vec.sum()

    def observability_vector(self) -> np.ndarray:
        obs = self.position_observability or {}
        return np.array([obs.get(pos, 1.0) for pos in _POSITIONS], dtype=np.float64)


@dataclass(frozen=True)
class GroundTruth:
    """Avatar-to-identity mapping plus the per-identity scripts."""

    mapping: Mapping[str, str]
    scripts: Mapping[str, tuple[ActivityLabel, ...]]

    def identity_for(self, avatar_id: str) -> str:
        try:
            return self.mapping[avatar_id]
        except KeyError:
            raise DataError(f"unknown avatar id {avatar_id!r}") from None

    def to_dict(self) -> dict:
        return {
            "avatars": dict(sorted(self.mapping.items())),
            "scripts": {
                ident: [int(lab) for lab in script]
                for ident, script in sorted(self.scripts.items())
            },
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "GroundTruth":
        try:
            mapping = {str(k): str(v) for k, v in payload["avatars"].items()}
            scripts = {
                str(k): tuple(ActivityLabel(int(c)) for c in v)
                for k, v in payload["scripts"].items()
            }
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed ground truth payload: {exc}") from exc
        return cls(mapping=mapping, scripts=scripts)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GroundTruth":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def identity_id(index: int) -> str:
    return f"u{index:04d}"


def avatar_id(index: int) -> str:
    return f"a{index:04d}"


def _draw_script(spec: CohortSpec, index: int, session: int) -> np.ndarray:
    src = 0 if spec.shared_script else index
    rng = _rng(spec.seed, _SALT_SCRIPT, src, session)
    return rng.choice(8, size=spec.n_windows, p=spec.prior_vector()).astype(np.uint8)


def _intensity(spec: CohortSpec, index: int) -> float:
    # Intensity is a stable trait of the identity: no session salt.
    lo, hi = spec.intensity_range
    return float(_rng(spec.seed, _SALT_INTENSITY, index).uniform(lo, hi))


def _realized_amplitudes(
    spec: CohortSpec, script: np.ndarray, index: int, session: int
) -> np.ndarray:
    base = np.array(
        [spec.magnitude_base[lab] for lab in ActivityLabel], dtype=np.float64
    )
    amps = base[script] * _intensity(spec, index)
    if spec.magnitude_noise_sd > 0:
        eta = _rng(spec.seed, _SALT_REALIZE, index, session).normal(
            0.0, spec.magnitude_noise_sd, size=script.shape
        )
        amps = amps * np.clip(1.0 + eta, 0.0, None)
    return amps


def avatar_permutation(spec: CohortSpec) -> np.ndarray:
    """Avatar j belongs to identity permutation[j]; stable across sessions."""
    return _rng(spec.seed, _SALT_PERMUTE).permutation(spec.num_identities)


def _confuse(
    codes: np.ndarray, matrix: ConfusionMatrix | None, rng: np.random.Generator
) -> tuple[ActivityLabel, ...]:
    labels = tuple(ActivityLabel(int(c)) for c in codes)
    if matrix is None:
        return labels
    return apply_confusion(labels, matrix, rng)


def generate_cohort(
    spec: CohortSpec, session: int = 0
) -> tuple[VisualDataset, MotionDataset, GroundTruth]:
    """Directly emit paired series for every identity.

    The motion series carries the realized amplitudes exactly; the visual
    series carries six per-position copies with independent relative noise
    (same standard deviation as the realization noise) and per-position
    dropout according to `position_observability`.
    """
    scripts = {}
    motion_series = []
    per_identity_visual = {}
    obs = spec.observability_vector()
    for i in range(spec.num_identities):
        ident = identity_id(i)
        script = _draw_script(spec, i, session)
        scripts[ident] = tuple(ActivityLabel(int(c)) for c in script)
        amps = _realized_amplitudes(spec, script, i, session)

        m_labels = _confuse(
            script, spec.motion_confusion, _rng(spec.seed, _SALT_CONF_MOTION, i, session)
        )
        motion_series.append(
            ActivityVectorSeries(
                source_id=ident,
                channel=Channel.MOTION,
                window_seconds=spec.window_seconds,
                activities=m_labels,
                magnitudes={
                    ActivityVectorSeries.MOTION_KEY: MagnitudeSeq(amps.tolist())
                },
            )
        )

        v_labels = _confuse(
            script, spec.visual_confusion, _rng(spec.seed, _SALT_CONF_VISUAL, i, session)
        )
        mag_rng = _rng(spec.seed, _SALT_MAG_VISUAL, i, session)
        if spec.magnitude_noise_sd > 0:
            eps = mag_rng.normal(
                0.0, spec.magnitude_noise_sd, size=(len(_POSITIONS), spec.n_windows)
            )
            v_mags = amps[None, :] * np.clip(1.0 + eps, 0.0, None)
        else:
            v_mags = np.repeat(amps[None, :], len(_POSITIONS), axis=0)
        observed = _rng(spec.seed, _SALT_OBSERVE, i, session).random(
            (len(_POSITIONS), spec.n_windows)
        ) < obs[:, None]
        per_identity_visual[i] = (v_labels, v_mags, observed)

    perm = avatar_permutation(spec)
    visual_series = []
    mapping = {}
    for j in range(spec.num_identities):
        i = int(perm[j])
        aid = avatar_id(j)
        mapping[aid] = identity_id(i)
        v_labels, v_mags, observed = per_identity_visual[i]
        magnitudes = {}
        for p, pos in enumerate(_POSITIONS):
            magnitudes[pos.value] = MagnitudeSeq(
                [
                    float(v_mags[p, t]) if observed[p, t] else None
                    for t in range(spec.n_windows)
                ]
            )
        visual_series.append(
            ActivityVectorSeries(
                source_id=aid,
                channel=Channel.VISUAL,
                window_seconds=spec.window_seconds,
                activities=v_labels,
                magnitudes=magnitudes,
            )
        )

    truth = GroundTruth(mapping=mapping, scripts=scripts)
    return VisualDataset(visual_series), MotionDataset(motion_series), truth


def generate_sessions(
    spec: CohortSpec, n_sessions: int
) -> tuple[list[tuple[VisualDataset, MotionDataset]], GroundTruth]:
    """Independent recording sessions of the same population.

    Identities keep their intensity and the avatar mapping across sessions;
    scripts, noise, and dropout are redrawn per session.
    """
    if n_sessions < 1:
        raise ConfigError("n_sessions must be >= 1")
    out = []
    truth = None
    for s in range(n_sessions):
        visual, motion, t = generate_cohort(spec, session=s)
        out.append((visual, motion))
        if truth is None:
            truth = GroundTruth(mapping=t.mapping, scripts={})
    return out, truth


def permute_expand(
    base_rows: np.ndarray, count: int, seed: int = 0
) -> np.ndarray:
    """Expand a small matrix of label rows into `count` rows by sampling
    rows and permuting each sampled row's entries independently.

    Used to mass-produce distinct sequences with a realistic label mix for
    scaling runs.
    """
    base = np.ascontiguousarray(np.asarray(base_rows, dtype=np.uint8))
    if base.ndim != 2 or base.shape[0] == 0:
        raise ConfigError("base_rows must be a non-empty 2-D array")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 97)))
    picks = rng.integers(0, base.shape[0], size=count)
    order = np.argsort(rng.random((count, base.shape[1])), axis=1)
    return np.take_along_axis(base[picks], order, axis=1)


# --- trace mode -----------------------------------------------------------

# Per-activity oscillation signature for the inertial synthesizer:
# (accel frequency Hz, x weight, y weight, gyro frequency Hz, gyro weights
# xyz).  The vertical acceleration component is calibrated so the window's
# mean absolute deviation from gravity equals the realized amplitude; x/y
# weights stay small so they perturb the norm little.  Frequencies are
# integers so every window of an integral number of seconds covers whole
# cycles, and the (accel, gyro) frequency pair is unique per activity: the
# dominant-frequency features are the only scale-free ones the classifier
# sees, so they must disambiguate on their own.
_MOTION_SIGNATURES: dict[
    ActivityLabel, tuple[float, float, float, float, tuple[float, float, float]]
] = {
    ActivityLabel.IDLE: (1.0, 0.10, 0.10, 1.0, (0.02, 0.02, 0.02)),
    ActivityLabel.BODY_ROTATION: (1.0, 0.30, 0.30, 4.0, (0.10, 0.10, 1.00)),
    ActivityLabel.HEAD_ROTATION: (3.0, 0.15, 0.15, 3.0, (0.15, 1.00, 0.20)),
    ActivityLabel.HAND_MOVEMENT: (5.0, 0.35, 0.10, 5.0, (0.80, 0.25, 0.15)),
    ActivityLabel.WALKING: (2.0, 0.20, 0.10, 2.0, (0.15, 0.15, 0.30)),
    ActivityLabel.BENDING: (1.0, 0.10, 0.35, 6.0, (1.00, 0.10, 0.10)),
    ActivityLabel.JUMPING: (4.0, 0.10, 0.10, 2.0, (0.05, 0.05, 0.05)),
    ActivityLabel.OTHER: (6.0, 0.25, 0.25, 1.0, (0.40, 0.40, 0.40)),
}

# How strongly each keypoint group moves per activity: (head, wrists, hips,
# ankles).  Wrists and hips sit at 1.0 for every activity on purpose: those
# two groups are the proxies the sensor positions read their magnitude
# sequences from, and a per-activity factor there would scramble magnitude
# ranks between the channels.  Head and ankles carry the group contrast the
# classifier works from instead.
_VISUAL_WEIGHTS: dict[ActivityLabel, tuple[float, float, float, float]] = {
    ActivityLabel.IDLE: (0.10, 1.00, 1.00, 0.05),
    ActivityLabel.BODY_ROTATION: (0.55, 1.00, 1.00, 0.15),
    ActivityLabel.HEAD_ROTATION: (1.00, 1.00, 1.00, 0.02),
    ActivityLabel.HAND_MOVEMENT: (0.10, 1.00, 1.00, 0.05),
    ActivityLabel.WALKING: (0.30, 1.00, 1.00, 1.00),
    ActivityLabel.BENDING: (1.00, 1.00, 1.00, 0.05),
    ActivityLabel.JUMPING: (0.80, 1.00, 1.00, 0.80),
    ActivityLabel.OTHER: (0.45, 1.00, 1.00, 0.50),
}

# Keypoint path shape per activity: x/y semi-axes of the oscillation
# ellipse.  A circular path gives near-constant frame steps, an elongated
# one makes step lengths pulse; that spread is part of the feature set.
_VISUAL_ELLIPSE: dict[ActivityLabel, tuple[float, float]] = {
    ActivityLabel.IDLE: (1.00, 1.00),
    ActivityLabel.BODY_ROTATION: (1.00, 1.00),
    ActivityLabel.HEAD_ROTATION: (1.00, 0.45),
    ActivityLabel.HAND_MOVEMENT: (1.00, 0.80),
    ActivityLabel.WALKING: (1.00, 0.30),
    ActivityLabel.BENDING: (0.30, 1.00),
    ActivityLabel.JUMPING: (0.15, 1.00),
    ActivityLabel.OTHER: (0.70, 0.70),
}

_KEYPOINT_GROUP: dict[str, int] = {
    "nose": 0,
    "left_wrist": 1,
    "right_wrist": 1,
    "left_hip": 2,
    "right_hip": 2,
    "left_ankle": 3,
    "right_ankle": 3,
}

# Keypoint acceleration (px/s^2) per unit of realized amplitude.  The
# excursion radius is divided by each activity's frequency-squared and
# path-shape factor below, so the acceleration magnitude the extraction
# recovers is amplitude times this one constant, for every activity.
_ACCEL_PER_UNIT = 400.0


def _ellipse_mean(ex: float, ey: float) -> float:
    theta = np.linspace(0.0, 2.0 * math.pi, 2048, endpoint=False)
    path = np.sqrt((ex * np.sin(theta)) ** 2 + (0.6 * ey * np.cos(theta)) ** 2)
    return float(path.mean())


_ELLIPSE_MEAN = {lab: _ellipse_mean(*_VISUAL_ELLIPSE[lab]) for lab in ActivityLabel}

_REST_POSE: dict[str, tuple[float, float]] = {
    "nose": (320.0, 80.0),
    "left_wrist": (240.0, 300.0),
    "right_wrist": (400.0, 300.0),
    "left_hip": (280.0, 360.0),
    "right_hip": (360.0, 360.0),
    "left_ankle": (285.0, 560.0),
    "right_ankle": (355.0, 560.0),
}


def synthesize_motion_trace(
    script: Sequence[int],
    amplitudes: Sequence[float],
    window_seconds: float,
    rng: np.random.Generator,
    *,
    sample_rate: float = 50.0,
    start_time: float = 0.0,
) -> MotionTrace:
    """Inertial trace acting out `script`, one entry per window.

    Within window t the vertical acceleration oscillates around gravity with
    mean absolute deviation equal to amplitudes[t]; the per-activity
    signature sets the frequency, the lateral leakage, and the gyroscope
    mix.
    """
    script = np.asarray(script, dtype=np.int64)
    amps = np.asarray(amplitudes, dtype=np.float64)
    if script.shape != amps.shape:
        raise DataError("script and amplitudes must have the same length")
    per_win = int(round(window_seconds * sample_rate))
    if per_win < 2:
        raise ConfigError("window too short for the requested sample rate")
    n = len(script)
    dt = window_seconds / per_win
    ts = start_time + np.arange(n * per_win, dtype=np.float64) * dt
    accel = np.zeros((n * per_win, 3), dtype=np.float64)
    gyro = np.zeros((n * per_win, 3), dtype=np.float64)
    tau = np.arange(per_win, dtype=np.float64) * dt
    for t in range(n):
        lab = ActivityLabel(int(script[t]))
        freq, wx, wy, freq_g, gw = _MOTION_SIGNATURES[lab]
        a = amps[t]
        # peak = (pi/2) * amplitude makes mean |sin| come out to `amplitude`
        peak = 0.5 * math.pi * a
        phase = rng.uniform(0.0, 2.0 * math.pi)
        phase_g = rng.uniform(0.0, 2.0 * math.pi)
        arg = 2.0 * math.pi * freq * tau
        arg_g = 2.0 * math.pi * freq_g * tau
        sl = slice(t * per_win, (t + 1) * per_win)
        accel[sl, 0] = peak * wx * np.sin(arg + phase + 1.1)
        accel[sl, 1] = peak * wy * np.cos(arg + phase + 0.4)
        accel[sl, 2] = GRAVITY + peak * np.sin(arg + phase)
        for axis in range(3):
            gyro[sl, axis] = gw[axis] * a * np.sin(arg_g + phase_g + 0.7 * axis)
    return MotionTrace(
        timestamps=ts, accel=accel, gyro=gyro, nominal_interval=dt
    )


def synthesize_keypoint_trace(
    script: Sequence[int],
    amplitudes: Sequence[float],
    window_seconds: float,
    rng: np.random.Generator,
    *,
    frame_rate: float = DEFAULT_FRAME_RATE,
    start_time: float = 0.0,
    keypoint_observability: Mapping[str, float] | None = None,
) -> KeypointTrace:
    """2-D keypoint trace acting out `script`.

    Each keypoint oscillates around its rest position; excursion scales with
    the realized amplitude and the activity's per-group weight, divided by
    the activity's frequency-squared and path-shape factor so the per-window
    acceleration magnitude comes back as amplitude times one constant no
    matter which activity produced it.  Dropout, if requested, is drawn per
    keypoint per window (a whole window of a keypoint disappears at once,
    matching how occlusion behaves).
    """
    script = np.asarray(script, dtype=np.int64)
    amps = np.asarray(amplitudes, dtype=np.float64)
    if script.shape != amps.shape:
        raise DataError("script and amplitudes must have the same length")
    per_win = int(round(window_seconds * frame_rate))
    if per_win < 4:
        raise ConfigError("window too short for the requested frame rate")
    n = len(script)
    dt = window_seconds / per_win
    ts = start_time + np.arange(n * per_win, dtype=np.float64) * dt
    tau = np.arange(per_win, dtype=np.float64) * dt
    obs = keypoint_observability or {}
    # second-central-difference gain of a unit sinusoid at each frequency
    accel_gain = {
        lab: (2.0 * math.sin(math.pi * sig[0] * dt) / dt) ** 2 * _ELLIPSE_MEAN[lab]
        for lab, sig in _MOTION_SIGNATURES.items()
    }
    points: dict[str, np.ndarray] = {}
    for name in KEYPOINT_NAMES:
        rest = _REST_POSE[name]
        group = _KEYPOINT_GROUP[name]
        xy = np.empty((n * per_win, 2), dtype=np.float64)
        p_obs = float(obs.get(name, 1.0))
        for t in range(n):
            lab = ActivityLabel(int(script[t]))
            freq = _MOTION_SIGNATURES[lab][0]
            weight = _VISUAL_WEIGHTS[lab][group]
            ex, ey = _VISUAL_ELLIPSE[lab]
            amp_px = _ACCEL_PER_UNIT * amps[t] * weight / accel_gain[lab]
            phase = rng.uniform(0.0, 2.0 * math.pi)
            arg = 2.0 * math.pi * freq * tau + phase
            sl = slice(t * per_win, (t + 1) * per_win)
            xy[sl, 0] = rest[0] + amp_px * ex * np.sin(arg)
            xy[sl, 1] = rest[1] + amp_px * ey * 0.6 * np.cos(arg)
            if p_obs < 1.0 and rng.random() >= p_obs:
                xy[sl] = np.nan
        points[name] = xy
    return KeypointTrace(timestamps=ts, points=points, frame_rate=frame_rate)


@dataclass(frozen=True)
class TraceCohort:
    motion_traces: Mapping[str, MotionTrace]
    keypoint_traces: Mapping[str, KeypointTrace]
    truth: GroundTruth
    amplitudes: Mapping[str, np.ndarray]


# Which sensor position gates each keypoint's visibility in trace mode.
# Head and ankles are taken as always trackable.
_KEYPOINT_GATE: dict[str, SensorPosition] = {
    "left_wrist": SensorPosition.LEFT_WRIST,
    "right_wrist": SensorPosition.RIGHT_WRIST,
    "left_hip": SensorPosition.LEFT_FRONT_POCKET,
    "right_hip": SensorPosition.RIGHT_FRONT_POCKET,
}


def synthesize_trace_cohort(spec: CohortSpec, session: int = 0) -> TraceCohort:
    """Raw-trace variant of `generate_cohort`.

    Motion traces are keyed by identity id, keypoint traces by avatar id;
    both act out the same script with the same realized amplitudes, through
    independently drawn phases.
    """
    perm = avatar_permutation(spec)
    obs_vec = spec.observability_vector()
    kp_obs = {
        name: float(obs_vec[_POSITIONS.index(gate)])
        for name, gate in _KEYPOINT_GATE.items()
    }
    scripts = {}
    amplitudes = {}
    motion_traces = {}
    keypoint_traces = {}
    for i in range(spec.num_identities):
        ident = identity_id(i)
        script = _draw_script(spec, i, session)
        scripts[ident] = tuple(ActivityLabel(int(c)) for c in script)
        amps = _realized_amplitudes(spec, script, i, session)
        amplitudes[ident] = amps
        motion_traces[ident] = synthesize_motion_trace(
            script,
            amps,
            spec.window_seconds,
            _rng(spec.seed, _SALT_TRACE_MOTION, i, session),
        )
    mapping = {}
    for j in range(spec.num_identities):
        i = int(perm[j])
        aid = avatar_id(j)
        ident = identity_id(i)
        mapping[aid] = ident
        script_codes = np.array([int(lab) for lab in scripts[ident]], dtype=np.int64)
        keypoint_traces[aid] = synthesize_keypoint_trace(
            script_codes,
            amplitudes[ident],
            spec.window_seconds,
            _rng(spec.seed, _SALT_TRACE_VISUAL, i, session),
            keypoint_observability=kp_obs,
        )
    truth = GroundTruth(mapping=mapping, scripts=scripts)
    return TraceCohort(
        motion_traces=motion_traces,
        keypoint_traces=keypoint_traces,
        truth=truth,
        amplitudes=amplitudes,
    )


def train_classifier(
    channel: Channel,
    window_seconds: float = 1.0,
    *,
    seed: int = 0,
    reps: int = 60,
    magnitude_base: Mapping[ActivityLabel, float] | None = None,
    intensity_range: tuple[float, float] = (0.5, 1.6),
) -> ClassifierModel:
    """Fit a window classifier on a synthetic mixed-activity trace.

    Training mirrors the production path end to end: one long trace with
    activities interleaved (so window edges see the same neighbour bleed
    the smoother produces on real input), smoothed and featurized exactly
    as the series builder does.  Each label's amplitudes are drawn around
    that label's typical energy; how hard an activity shakes the sensor is
    part of its signature, so the training distribution has to match per
    label, not globally.
    """
    base = dict(DEFAULT_MAGNITUDE_BASE)
    if magnitude_base is not None:
        base.update(magnitude_base)
    rng = _rng(seed, _SALT_TRAIN, 0, 0 if channel is Channel.MOTION else 1)
    script = np.repeat(np.arange(8, dtype=np.int64), reps)
    rng.shuffle(script)
    lo, hi = intensity_range
    base_vec = np.array([base[lab] for lab in ActivityLabel])
    amps = base_vec[script] * rng.uniform(lo, hi, size=script.size)
    feats = []
    labels = [ActivityLabel(int(c)) for c in script]
    if channel is Channel.MOTION:
        trace = synthesize_motion_trace(script, amps, window_seconds, rng)
        accel = _smooth_columns(trace.accel, SAVGOL_WINDOW, SAVGOL_ORDER)
        gyro = _smooth_columns(trace.gyro, SAVGOL_WINDOW, SAVGOL_ORDER)
        for span in segment_windows(trace, window_seconds):
            sl = slice(span.lo, span.hi)
            feats.append(motion_window_features(accel[sl], gyro[sl]))
    else:
        trace = synthesize_keypoint_trace(script, amps, window_seconds, rng)
        for span in segment_windows(trace, window_seconds):
            feats.append(visual_window_features(trace, span))
    return fit_classifier(np.asarray(feats), labels, channel)


# --- spec (de)serialization ----------------------------------------------


def _label_map_from_json(obj, what: str) -> dict[ActivityLabel, float]:
    if not isinstance(obj, Mapping):
        raise ConfigError(f"{what} must be an object of label token -> number")
    out = {}
    for key, val in obj.items():
        out[label_from_token(str(key))] = float(val)
    return out


def _confusion_from_json(obj, what: str) -> ConfusionMatrix | None:
    if obj is None or obj == "identity":
        return None
    try:
        return ConfusionMatrix(np.asarray(obj, dtype=np.float64))
    except (TypeError, ValueError, DataError) as exc:
        raise ConfigError(f"{what}: {exc}") from exc


def cohort_spec_from_dict(payload: Mapping) -> CohortSpec:
    if not isinstance(payload, Mapping):
        raise ConfigError("cohort spec must be a JSON object")
    known = {
        "num_identities",
        "n_windows",
        "window_seconds",
        "activity_prior",
        "motion_confusion",
        "visual_confusion",
        "magnitude_base",
        "intensity_range",
        "magnitude_noise_sd",
        "position_observability",
        "seed",
        "shared_script",
    }
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown cohort spec keys: {sorted(unknown)}")
    try:
        kwargs: dict = {
            "num_identities": int(payload["num_identities"]),
            "n_windows": int(payload["n_windows"]),
        }
    except KeyError as exc:
        raise ConfigError(f"cohort spec missing required key {exc.args[0]!r}") from exc
    if "window_seconds" in payload:
        kwargs["window_seconds"] = float(payload["window_seconds"])
    if payload.get("activity_prior") is not None:
        kwargs["activity_prior"] = _label_map_from_json(
            payload["activity_prior"], "activity_prior"
        )
    if "motion_confusion" in payload:
        kwargs["motion_confusion"] = _confusion_from_json(
            payload["motion_confusion"], "motion_confusion"
        )
    if "visual_confusion" in payload:
        kwargs["visual_confusion"] = _confusion_from_json(
            payload["visual_confusion"], "visual_confusion"
        )
    if payload.get("magnitude_base") is not None:
        base = dict(DEFAULT_MAGNITUDE_BASE)
        base.update(_label_map_from_json(payload["magnitude_base"], "magnitude_base"))
        kwargs["magnitude_base"] = base
    if "intensity_range" in payload:
        pair = payload["intensity_range"]
        if not isinstance(pair, Sequence) or len(pair) != 2:
            raise ConfigError("intensity_range must be a [low, high] pair")
        kwargs["intensity_range"] = (float(pair[0]), float(pair[1]))
    if "magnitude_noise_sd" in payload:
        kwargs["magnitude_noise_sd"] = float(payload["magnitude_noise_sd"])
    if payload.get("position_observability") is not None:
        obs_in = payload["position_observability"]
        if not isinstance(obs_in, Mapping):
            raise ConfigError("position_observability must be an object")
        obs = {}
        for key, val in obs_in.items():
            try:
                pos = SensorPosition(str(key))
            except ValueError:
                raise ConfigError(f"unknown sensor position {key!r}") from None
            obs[pos] = float(val)
        kwargs["position_observability"] = obs
    if "seed" in payload:
        kwargs["seed"] = int(payload["seed"])
    if "shared_script" in payload:
        kwargs["shared_script"] = bool(payload["shared_script"])
    return CohortSpec(**kwargs)


def cohort_spec_to_dict(spec: CohortSpec) -> dict:
    out: dict = {
        "num_identities": spec.num_identities,
        "n_windows": spec.n_windows,
        "window_seconds": spec.window_seconds,
        "intensity_range": list(spec.intensity_range),
        "magnitude_noise_sd": spec.magnitude_noise_sd,
        "seed": spec.seed,
        "shared_script": spec.shared_script,
    }
    if spec.activity_prior is not None:
        out["activity_prior"] = {
            lab.token: float(p) for lab, p in spec.activity_prior.items()
        }
    out["magnitude_base"] = {
        lab.token: float(v) for lab, v in spec.magnitude_base.items()
    }
    if spec.motion_confusion is not None:
        out["motion_confusion"] = spec.motion_confusion.rows.tolist()
    if spec.visual_confusion is not None:
        out["visual_confusion"] = spec.visual_confusion.rows.tolist()
    if spec.position_observability is not None:
        out["position_observability"] = {
            pos.value: float(p) for pos, p in spec.position_observability.items()
        }
    return out


def load_cohort_spec(path) -> CohortSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cohort spec {path}: invalid JSON ({exc})") from exc
    return cohort_spec_from_dict(payload)
