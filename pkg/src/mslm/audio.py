"""Audio pipeline: noise gate, silence segmentation, pose association, queries.

The noise gate measures the input level as RMS over a trailing 10 ms window
(dB = 20*log10(amplitude)) and drives a gain envelope with three phases:
attack (ramp toward 1 while the level is above threshold), hold (gain pinned
at 1 after the level drops), and release (linear ramp to 0 once the hold
expires).  Output is input times gain, so open-gate audio passes sample-exact.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field

import numpy as np

from .errors import MslmError
from .geometry import GridSpec, Pose, voxel_index
from .heatmap import Heatmap, ScoredPoses, scored_heatmap

RMS_WINDOW_MS = 10.0

DEFAULT_THRESHOLD_DB = -10.0
DEFAULT_ATTACK_MS = 250.0
DEFAULT_HOLD_MS = 1000.0
DEFAULT_RELEASE_MS = 170.0
DEFAULT_SILENCE_THRESHOLD = 0.1
DEFAULT_MIN_SILENCE_MS = 500.0


@dataclass
class AudioTrack:
    samples: np.ndarray      # mono float PCM in [-1, 1]
    sample_rate: float       # Hz
    start_time: float = 0.0  # seconds on the shared odometry clock

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0 + 1e-9:
            raise ValueError("samples must lie in [-1, 1]")


@dataclass
class AudioSegment:
    start_time: float
    end_time: float
    embedding: np.ndarray = None
    pose: Pose = None

    def __post_init__(self):
        if self.end_time <= self.start_time:
            raise ValueError("segment end must be after start")


@dataclass
class PoseFeatureDB:
    """(pose, embedding) entries shared by the area/audio/visual databases."""

    entries: list = field(default_factory=list)  # (position (3,), embedding)

    def __len__(self):
        return len(self.entries)

    def add(self, position: np.ndarray, embedding: np.ndarray):
        self.entries.append((np.asarray(position, dtype=np.float64),
                             np.asarray(embedding, dtype=np.float64)))


def _rms_level(samples: np.ndarray, sample_rate: float) -> np.ndarray:
    """Trailing-window RMS per sample."""
    win = max(1, int(round(sample_rate * RMS_WINDOW_MS / 1000.0)))
    sq = samples * samples
    csum = np.concatenate([[0.0], np.cumsum(sq)])
    n = samples.size
    starts = np.maximum(np.arange(n) - win + 1, 0)
    counts = np.arange(n) - starts + 1
    sums = csum[np.arange(n) + 1] - csum[starts]
    return np.sqrt(sums / counts)


def noise_gate(track: AudioTrack,
               threshold_db: float = DEFAULT_THRESHOLD_DB,
               attack_ms: float = DEFAULT_ATTACK_MS,
               hold_ms: float = DEFAULT_HOLD_MS,
               release_ms: float = DEFAULT_RELEASE_MS) -> AudioTrack:
    """Apply an attack/hold/release gain envelope driven by the input level."""
    if attack_ms < 0 or hold_ms < 0 or release_ms < 0:
        raise ValueError("envelope times must be >= 0")
    x = track.samples
    if x.size == 0:
        return AudioTrack(x.copy(), track.sample_rate, track.start_time)

    sr = track.sample_rate
    threshold_amp = 10.0 ** (threshold_db / 20.0)
    attack_step = 1.0 if attack_ms == 0 else 1000.0 / (attack_ms * sr)
    release_step = 1.0 if release_ms == 0 else 1000.0 / (release_ms * sr)
    hold_samples = int(round(hold_ms / 1000.0 * sr))

    above = _rms_level(x, sr) > threshold_amp
    gain = np.empty_like(x)
    g = 0.0
    hold_left = 0
    for i in range(x.size):
        if above[i]:
            g = min(1.0, g + attack_step)
            hold_left = hold_samples
        elif hold_left > 0:
            hold_left -= 1
        else:
            g = max(0.0, g - release_step)
        gain[i] = g
    return AudioTrack(x * gain, sr, track.start_time)


def split_on_silence(track: AudioTrack,
                     silence_threshold: float = DEFAULT_SILENCE_THRESHOLD,
                     min_silence_ms: float = DEFAULT_MIN_SILENCE_MS) -> list:
    """Maximal loud runs as (start, end) times on the odometry clock.

    A segment opens when |sample| exceeds the threshold and closes once the
    signal stays below it for ``min_silence_ms``.
    """
    if not 0.0 < silence_threshold < 1.0:
        raise ValueError("silence threshold must lie in (0, 1)")
    x = np.abs(track.samples)
    sr = track.sample_rate
    min_gap = max(1, int(round(min_silence_ms / 1000.0 * sr)))

    loud = np.flatnonzero(x > silence_threshold)
    if loud.size == 0:
        return []
    segments = []
    seg_start = loud[0]
    prev = loud[0]
    for i in loud[1:]:
        if i - prev > min_gap:
            segments.append((seg_start, prev))
            seg_start = i
        prev = i
    segments.append((seg_start, prev))
    t0 = track.start_time
    return [(t0 + s / sr, t0 + (e + 1) / sr) for s, e in segments]


class OdometryTimeline:
    """Time-indexed pose stream; lookup snaps to the nearest timestamp."""

    def __init__(self, times, poses):
        self.times = np.asarray(times, dtype=np.float64)
        self.poses = list(poses)
        if self.times.size != len(self.poses):
            raise ValueError("times and poses length mismatch")
        if self.times.size and np.any(np.diff(self.times) < 0):
            raise ValueError("timestamps must be non-decreasing")

    def covers(self, t: float) -> bool:
        return self.times.size > 0 and self.times[0] <= t <= self.times[-1]

    def pose_at(self, t: float) -> Pose:
        if not self.covers(t):
            raise MslmError(f"time {t} outside odometry range")
        i = int(np.argmin(np.abs(self.times - t)))
        return self.poses[i]


def build_audio_db(segments, track: AudioTrack, provider, sound_classes,
                   odometry: OdometryTimeline, spec: GridSpec) -> PoseFeatureDB:
    """Embed each segment and pair it with the pose at the segment start."""
    db = PoseFeatureDB()
    sr = track.sample_rate
    for start, end in segments:
        if not odometry.covers(start):
            raise MslmError(
                f"segment [{start:.3f}, {end:.3f}] outside odometry range"
            )
        i0 = int(round((start - track.start_time) * sr))
        i1 = int(round((end - track.start_time) * sr))
        emb = provider.embed_audio(track.samples[i0:i1], sr, sound_classes)
        pose = odometry.pose_at(start)
        idx = voxel_index(pose.translation, spec)
        if idx is None:
            raise MslmError(f"segment pose {pose.translation} outside grid")
        db.add(np.array(idx, dtype=np.float64), emb)
    return db


def normalized_scores(db: PoseFeatureDB, query_vec: np.ndarray) -> np.ndarray:
    """Cosine scores of a query against the db, min-max normalized to [0, 1].

    A constant score vector (including a single-entry db) normalizes to all
    ones; normalization preserves the argmax.
    """
    q = query_vec / np.linalg.norm(query_vec)
    emb = np.stack([e for _p, e in db.entries])
    emb = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    scores = emb @ q
    lo, hi = scores.min(), scores.max()
    if hi - lo < 1e-12:
        return np.ones_like(scores)
    return (scores - lo) / (hi - lo)


def audio_query_heatmap(db: PoseFeatureDB, query_text: str, provider,
                        eps: float, spec: GridSpec):
    """Heatmap over segment poses scored by text-audio similarity.

    Returns None (no-target) for an empty database.
    """
    if len(db) == 0:
        return None
    q = provider.embed_text([query_text])[0]
    scores = normalized_scores(db, q)
    positions = np.stack([p for p, _e in db.entries])
    return scored_heatmap(ScoredPoses(positions, scores), eps, spec)


def read_wav(path, start_time: float = 0.0) -> AudioTrack:
    """Load a mono or multichannel WAV (PCM16 or float32); channels averaged."""
    with wave.open(str(path), "rb") as wf:
        n = wf.getnframes()
        width = wf.getsampwidth()
        channels = wf.getnchannels()
        rate = wf.getframerate()
        raw = wf.readframes(n)
    if width == 2:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif width == 4:
        data = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    else:
        raise MslmError(f"unsupported WAV sample width {width}")
    if channels > 1:
        data = data.reshape(-1, channels).mean(axis=1)
    return AudioTrack(np.clip(data, -1.0, 1.0), rate, start_time)


def write_wav(track: AudioTrack, path):
    data = np.clip(track.samples, -1.0, 1.0)
    pcm = np.round(data * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(track.sample_rate))
        wf.writeframes(pcm.tobytes())
