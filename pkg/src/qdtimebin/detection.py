"""Detector model and the time-tag wire format.

Tags carry integer picosecond times.  Channel 0 is the XX detector, 1 the X
detector and 2 the laser trigger.
"""

from __future__ import annotations

import io
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .source import Emissions, InvalidParameter

XX_CHANNEL, X_CHANNEL, TRIGGER_CHANNEL = 0, 1, 2
CHANNEL_NAMES = {"XX": XX_CHANNEL, "X": X_CHANNEL, "TRIGGER": TRIGGER_CHANNEL}
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
CSV_HEADER = "channel,time_ps"


class TagFileError(ValueError):
    """A time-tag file that does not follow the ``channel,time_ps`` format."""


@dataclass(frozen=True)
class DetectorConfig:
    efficiency_xx: float = 1.0
    efficiency_x: float = 1.0
    jitter_fwhm: float = 0.34e-9
    dark_rate: float = 0.0
    dead_time: float = 0.0

    def __post_init__(self):
        for name in ("efficiency_xx", "efficiency_x"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidParameter(name, f"must lie in [0, 1], got {value}")
        for name in ("jitter_fwhm", "dark_rate", "dead_time"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise InvalidParameter(name, f"must be finite and >= 0, got {value}")

    def efficiency(self, channel: int) -> float:
        return (self.efficiency_xx, self.efficiency_x)[channel]

    @property
    def jitter_sigma(self) -> float:
        return self.jitter_fwhm / FWHM_PER_SIGMA


@dataclass(frozen=True)
class TimeTags:
    """Columnar time-tag list.

    ``origin`` is the index of the input photon each tag came from, -1 for
    dark counts and trigger tags.
    """

    channel: np.ndarray
    time_ps: np.ndarray
    origin: np.ndarray

    def __len__(self) -> int:
        return int(self.time_ps.size)

    @classmethod
    def empty(cls) -> "TimeTags":
        return cls(np.zeros(0, np.int8), np.zeros(0, np.int64), np.zeros(0, np.int64))

    def sorted(self) -> "TimeTags":
        """Sorted by time, ties by channel; stable otherwise."""
        order = np.lexsort((self.channel, self.time_ps))
        return TimeTags(self.channel[order], self.time_ps[order], self.origin[order])

    def select(self, channel: int) -> np.ndarray:
        return self.time_ps[self.channel == channel]

    def count(self, channel: int) -> int:
        return int(np.count_nonzero(self.channel == channel))


@dataclass(frozen=True)
class PhotonStream:
    """Photons ready for detection: pulse index plus offset within the pulse (s)."""

    pulse: np.ndarray
    offset: np.ndarray
    channel: np.ndarray
    rep_rate: float
    n_pulses: int

    @classmethod
    def from_emissions(cls, em: Emissions, extra_offset: np.ndarray | None = None) -> "PhotonStream":
        offset = em.photon_offset if extra_offset is None else em.photon_offset + extra_offset
        return cls(em.photon_pulse, offset, em.photon_channel, em.rep_rate, em.n_pulses)

    @property
    def size(self) -> int:
        return int(self.pulse.size)


def pulse_time_ps(pulse: np.ndarray, rep_rate: float) -> np.ndarray:
    return np.rint(np.asarray(pulse, dtype=np.float64) * (1e12 / rep_rate)).astype(np.int64)


def merge(*tag_sets: TimeTags) -> TimeTags:
    return TimeTags(
        np.concatenate([t.channel for t in tag_sets]).astype(np.int8),
        np.concatenate([t.time_ps for t in tag_sets]).astype(np.int64),
        np.concatenate([t.origin for t in tag_sets]).astype(np.int64),
    ).sorted()


def _apply_dead_time(tags: TimeTags, dead_ps: int) -> TimeTags:
    keep = np.ones(len(tags), dtype=bool)
    for ch in np.unique(tags.channel):
        idx = np.flatnonzero(tags.channel == ch)
        times = tags.time_ps[idx]
        last = None
        for j, t in zip(idx, times):
            if last is not None and t - last < dead_ps:
                keep[j] = False
            else:
                last = t
    return TimeTags(tags.channel[keep], tags.time_ps[keep], tags.origin[keep])


def detect(photons: PhotonStream, cfg: DetectorConfig, rng: np.random.Generator,
           transmission: np.ndarray | float = 1.0) -> TimeTags:
    """Turn photons into sorted detector tags.

    Each photon survives with probability ``efficiency(channel) *
    transmission``, then receives Gaussian timing jitter and is rounded to
    the picosecond grid.  Dark counts are a homogeneous Poisson process over
    the pulse train on both photon channels.  With a dead time, a tag closer
    than ``dead_time`` to the previous kept tag of its channel is dropped.
    """
    eff = np.where(photons.channel == XX_CHANNEL, cfg.efficiency_xx, cfg.efficiency_x)
    p_keep = eff * np.broadcast_to(np.asarray(transmission, dtype=float), eff.shape)
    keep = rng.random(photons.size) < p_keep
    idx = np.flatnonzero(keep)
    offset = photons.offset[idx]
    if cfg.jitter_fwhm > 0:
        offset = offset + rng.normal(0.0, cfg.jitter_sigma, idx.size)
    times = pulse_time_ps(photons.pulse[idx], photons.rep_rate) + np.rint(offset * 1e12).astype(np.int64)
    tags = [TimeTags(photons.channel[idx].astype(np.int8), np.maximum(times, 0), idx.astype(np.int64))]

    if cfg.dark_rate > 0:
        span_ps = photons.n_pulses * 1e12 / photons.rep_rate
        for ch in (XX_CHANNEL, X_CHANNEL):
            n_dark = rng.poisson(cfg.dark_rate * span_ps * 1e-12)
            t_dark = np.floor(rng.random(n_dark) * span_ps).astype(np.int64)
            tags.append(TimeTags(np.full(n_dark, ch, np.int8), t_dark, np.full(n_dark, -1, np.int64)))

    out = merge(*tags)
    if cfg.dead_time > 0:
        out = _apply_dead_time(out, int(round(cfg.dead_time * 1e12)))
    return out


def emit_trigger_tags(rep_rate: float, n_pulses: int) -> TimeTags:
    """One channel-2 tag per laser pulse at ``k / rep_rate``."""
    times = pulse_time_ps(np.arange(n_pulses), rep_rate)
    return TimeTags(np.full(n_pulses, TRIGGER_CHANNEL, np.int8), times, np.full(n_pulses, -1, np.int64))


def _atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def tags_to_csv(tags: TimeTags) -> str:
    tags = tags.sorted()
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    if len(tags):
        body = np.column_stack([tags.channel.astype(np.int64), tags.time_ps])
        np.savetxt(buf, body, fmt="%d", delimiter=",")
    return buf.getvalue()


def write_tags_csv(path: str | os.PathLike, tags: TimeTags) -> None:
    """Write ``channel,time_ps`` rows sorted by time then channel (atomic replace)."""
    _atomic_write_text(Path(path), tags_to_csv(tags))


def read_tags_csv(path: str | os.PathLike) -> TimeTags:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise TagFileError(f"{path}: expected header {CSV_HEADER!r}, got {header!r}")
        body = fh.read()
    if not body.strip():
        return TimeTags.empty()
    try:
        data = np.loadtxt(io.StringIO(body), dtype=np.int64, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise TagFileError(f"{path}: {exc}") from None
    if data.shape[1] != 2:
        raise TagFileError(f"{path}: expected 2 columns")
    if np.any(data[:, 1] < 0):
        raise TagFileError(f"{path}: negative time stamp")
    if np.any((data[:, 0] < 0) | (data[:, 0] > TRIGGER_CHANNEL)):
        raise TagFileError(f"{path}: unknown channel number")
    return TimeTags(data[:, 0].astype(np.int8), data[:, 1], np.full(data.shape[0], -1, np.int64))
