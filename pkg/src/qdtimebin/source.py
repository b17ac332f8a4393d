"""Monte Carlo model of the biexciton-exciton (XX-X) cascade source.

Each excitation pulse creates ``n ~ Poisson(mean_pairs)`` electron-hole pairs.
Two or more pairs prepare the biexciton, which decays (lifetime ``tau_xx``)
into the exciton, which decays (``tau_x``) to the empty dot; a single pair
prepares the exciton only.  While the pump is still on, i.e. inside a
rectangular window of ``reexcite_window * pulse_fwhm`` after the pulse
start, every emission gives the pump one chance to refill the dot with
probability ``1 - exp(-mean_pairs * remaining_window_fraction)``.  This
re-excitation is what produces extra photons per pulse.

The ``poissonian_reference`` mode emits independent photon pairs with
Poisson statistics per pulse (``P(k >= 1) = poisson_pair_prob``), the
behaviour of a down-conversion source.

Photon channels: 0 = XX photon, 1 = X photon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .qmath import TwoQubitDensity, bell_state
from .streams import substream

XX, X = 0, 1
CHUNK_PULSES = 1 << 18
MAX_SPAN_PS = 2**62
MODES = ("dot", "poissonian_reference")


class InvalidParameter(ValueError):
    """Configuration value outside its allowed domain; ``field`` names it."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class SourceConfig:
    rep_rate: float = 80e6
    pulse_fwhm: float = 100e-12
    mean_pairs: float = 0.5
    tau_xx: float = 0.72e-9
    tau_x: float = 1.25e-9
    fss_period: float = 7.3e-9
    phase_phi0: float = 0.0
    depolarization: float = 0.15
    mode: str = "dot"
    poisson_pair_prob: float = 0.1
    reexcite_window: float = 2.0

    def __post_init__(self):
        for name in ("rep_rate", "tau_xx", "tau_x", "fss_period"):
            value = getattr(self, name)
            if not value > 0:
                raise InvalidParameter(name, f"must be > 0, got {value}")
        if not (self.pulse_fwhm >= 0 and math.isfinite(self.pulse_fwhm)):
            raise InvalidParameter("pulse_fwhm", f"must be finite and >= 0, got {self.pulse_fwhm}")
        if not self.pulse_fwhm < 1.0 / self.rep_rate:
            raise InvalidParameter("pulse_fwhm", "must be shorter than the repetition period")
        if not (self.mean_pairs >= 0 and math.isfinite(self.mean_pairs)):
            raise InvalidParameter("mean_pairs", f"must be finite and >= 0, got {self.mean_pairs}")
        if not 0.0 <= self.depolarization <= 1.0:
            raise InvalidParameter("depolarization", f"must lie in [0, 1], got {self.depolarization}")
        if not 0.0 <= self.poisson_pair_prob < 1.0:
            raise InvalidParameter("poisson_pair_prob", f"must lie in [0, 1), got {self.poisson_pair_prob}")
        if not self.reexcite_window >= 0:
            raise InvalidParameter("reexcite_window", f"must be >= 0, got {self.reexcite_window}")
        if not math.isfinite(self.phase_phi0):
            raise InvalidParameter("phase_phi0", "must be finite")
        if self.mode not in MODES:
            raise InvalidParameter("mode", f"unknown mode {self.mode!r}; expected one of {MODES}")

    @property
    def rep_period(self) -> float:
        return 1.0 / self.rep_rate

    @property
    def pump_window(self) -> float:
        return self.reexcite_window * self.pulse_fwhm


@dataclass(frozen=True)
class PairEmission:
    pulse_index: int
    t_xx: float
    t_x: float
    joint_state: TwoQubitDensity
    complete: bool = True


@dataclass
class EmissionRecord:
    pulse_index: int
    xx_times: list[float] = field(default_factory=list)
    x_times: list[float] = field(default_factory=list)
    pairs: list[PairEmission] = field(default_factory=list)


@dataclass(frozen=True)
class Emissions:
    """Columnar emission record of a pulse train.

    Photon times are offsets in seconds from the start of their pulse; the
    pulse index gives the absolute time ``pulse / rep_rate``.  Photons are
    ordered by (pulse, offset).  ``photon_pair`` indexes the pair arrays for
    photons that belong to a complete XX-X cascade and is -1 otherwise.
    """

    n_pulses: int
    rep_rate: float
    photon_pulse: np.ndarray
    photon_channel: np.ndarray
    photon_offset: np.ndarray
    photon_pair: np.ndarray
    pair_xx: np.ndarray
    pair_x: np.ndarray

    @property
    def n_photons(self) -> int:
        return int(self.photon_pulse.size)

    @property
    def n_pairs(self) -> int:
        return int(self.pair_xx.size)

    @property
    def duration(self) -> float:
        return self.n_pulses / self.rep_rate

    @property
    def pair_pulse(self) -> np.ndarray:
        return self.photon_pulse[self.pair_xx]

    @property
    def pair_delay(self) -> np.ndarray:
        """X emission time minus XX emission time for each pair."""
        return self.photon_offset[self.pair_x] - self.photon_offset[self.pair_xx]

    def absolute_times(self) -> np.ndarray:
        return self.photon_pulse / self.rep_rate + self.photon_offset

    def channel_count(self, channel: int) -> int:
        return int(np.count_nonzero(self.photon_channel == channel))


def cascade_states(config: SourceConfig, x_delay: np.ndarray) -> np.ndarray:
    """Stack of pair density matrices for an array of XX-to-X delays.

    Fine-structure precession advances the ``|VV>`` phase by
    ``2*pi*delay/fss_period``; depolarization mixes in ``I/4``.
    """
    delay = np.asarray(x_delay, dtype=float)
    if np.any(delay < 0):
        raise ValueError("XX-to-X delay must be >= 0")
    phase = config.phase_phi0 + 2.0 * np.pi * delay / config.fss_period
    eps = config.depolarization
    out = np.zeros(delay.shape + (4, 4), dtype=complex)
    coherence = 0.5 * (1.0 - eps) * np.exp(-1j * phase)
    out[..., 0, 0] = 0.5 * (1.0 - eps) + eps / 4
    out[..., 3, 3] = 0.5 * (1.0 - eps) + eps / 4
    out[..., 1, 1] = eps / 4
    out[..., 2, 2] = eps / 4
    out[..., 0, 3] = coherence
    out[..., 3, 0] = np.conj(coherence)
    return out


def cascade_state(config: SourceConfig, x_delay: float) -> TwoQubitDensity:
    """``(1-eps)|bell(phi0 + 2 pi delay / T_fss)><..| + eps I/4``."""
    if x_delay < 0:
        raise ValueError(f"XX-to-X delay must be >= 0, got {x_delay}")
    phase = config.phase_phi0 + 2.0 * math.pi * x_delay / config.fss_period
    bell = bell_state(phase).density().matrix
    eps = config.depolarization
    return TwoQubitDensity((1.0 - eps) * bell + eps * np.eye(4) / 4.0)


def _dot_chunk(cfg: SourceConfig, n: int, rng: np.random.Generator):
    mu = cfg.mean_pairs
    window = cfg.pump_window
    state = np.minimum(rng.poisson(mu, n), 2).astype(np.int8)
    t = np.zeros(n)
    pending = np.full(n, -1, dtype=np.int64)

    pulses, chans, times, pair_xx, pair_x = [], [], [], [], []
    n_emitted = 0
    active = np.flatnonzero(state > 0)
    while active.size:
        s = state[active]
        is_x = s == 1
        t[active] += rng.exponential(size=active.size) * np.where(is_x, cfg.tau_x, cfg.tau_xx)
        ids = n_emitted + np.arange(active.size)
        n_emitted += active.size
        pulses.append(active.copy())
        chans.append(is_x.astype(np.int8))
        times.append(t[active])

        closing = is_x & (pending[active] >= 0)
        pair_xx.append(pending[active[closing]])
        pair_x.append(ids[closing])
        pending[active[is_x]] = -1
        pending[active[~is_x]] = ids[~is_x]
        state[active] -= 1

        if window > 0 and mu > 0:
            remaining = np.clip(window - t[active], 0.0, None) / window
            hit = rng.random(active.size) < -np.expm1(-mu * remaining)
            refilled = active[hit]
            # refilling the exciton to a biexciton breaks the pending cascade
            pending[refilled[state[refilled] == 1]] = -1
            state[refilled] += 1
        active = active[state[active] > 0]

    if not pulses:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.astype(np.int8), np.zeros(0), empty, empty
    return (
        np.concatenate(pulses),
        np.concatenate(chans),
        np.concatenate(times),
        np.concatenate(pair_xx).astype(np.int64),
        np.concatenate(pair_x).astype(np.int64),
    )


def _poisson_chunk(cfg: SourceConfig, n: int, rng: np.random.Generator):
    lam = -math.log1p(-cfg.poisson_pair_prob)
    k = rng.poisson(lam, n)
    pulse = np.repeat(np.arange(n), k)
    m = pulse.size
    t = rng.random(m) * cfg.pulse_fwhm
    pulses = np.concatenate([pulse, pulse])
    chans = np.concatenate([np.zeros(m, np.int8), np.ones(m, np.int8)])
    times = np.concatenate([t, t])
    return pulses, chans, times, np.arange(m), np.arange(m, 2 * m)


def _simulate_chunk(cfg: SourceConfig, first_pulse: int, n: int, rng: np.random.Generator):
    if cfg.mode == "dot":
        pulse, chan, t, pxx, px = _dot_chunk(cfg, n, rng)
    elif cfg.mode == "poissonian_reference":
        pulse, chan, t, pxx, px = _poisson_chunk(cfg, n, rng)
    else:
        raise ValueError(f"invalid source mode {cfg.mode!r}")
    order = np.lexsort((t, pulse))
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    photon_pair = np.full(order.size, -1, dtype=np.int64)
    pxx, px = rank[pxx], rank[px]
    photon_pair[pxx] = np.arange(pxx.size)
    photon_pair[px] = np.arange(px.size)
    return pulse[order] + first_pulse, chan[order], t[order], photon_pair, pxx, px


def _check_span(config: SourceConfig, n_pulses: int) -> None:
    if n_pulses < 0:
        raise ValueError("n_pulses must be >= 0")
    if n_pulses * (1e12 / config.rep_rate) >= MAX_SPAN_PS:
        raise OverflowError(f"{n_pulses} pulses exceed the 2^62 ps time-tag span")


def simulate_emissions(config: SourceConfig, n_pulses: int, seed: int) -> Emissions:
    """Emissions for ``n_pulses`` pulses, deterministic for a given seed.

    Pulses are processed in fixed chunks of ``CHUNK_PULSES``; chunk ``i``
    draws from its own substream, so results do not depend on how the work
    is scheduled.
    """
    _check_span(config, n_pulses)
    parts = []
    for chunk, start in enumerate(range(0, n_pulses, CHUNK_PULSES)):
        n = min(CHUNK_PULSES, n_pulses - start)
        parts.append(_simulate_chunk(config, start, n, substream(seed, "source", chunk)))
    return _merge(config, n_pulses, parts)


def _merge(config: SourceConfig, n_pulses: int, parts) -> Emissions:
    pulses, chans, times, pairs, pxx, px = [], [], [], [], [], []
    photon_base = pair_base = 0
    for pulse, chan, t, photon_pair, a, b in parts:
        pulses.append(pulse)
        chans.append(chan)
        times.append(t)
        pairs.append(np.where(photon_pair >= 0, photon_pair + pair_base, -1))
        pxx.append(a + photon_base)
        px.append(b + photon_base)
        photon_base += pulse.size
        pair_base += a.size
    cat = lambda xs, dtype: np.concatenate(xs).astype(dtype) if xs else np.zeros(0, dtype)  # noqa: E731
    return Emissions(
        n_pulses=n_pulses,
        rep_rate=config.rep_rate,
        photon_pulse=cat(pulses, np.int64),
        photon_channel=cat(chans, np.int8),
        photon_offset=cat(times, float),
        photon_pair=cat(pairs, np.int64),
        pair_xx=cat(pxx, np.int64),
        pair_x=cat(px, np.int64),
    )


def _records(config: SourceConfig, em: Emissions, first_pulse: int) -> Iterator[EmissionRecord]:
    """Per-pulse records of a chunk whose ``photon_pulse`` is chunk-local."""
    bounds = np.searchsorted(em.photon_pulse, np.arange(em.n_pulses + 1))
    period = 1.0 / config.rep_rate
    for local in range(em.n_pulses):
        k = first_pulse + local
        rec = EmissionRecord(pulse_index=k)
        t0 = k * period
        for i in range(bounds[local], bounds[local + 1]):
            t = t0 + float(em.photon_offset[i])
            j = int(em.photon_pair[i])
            if em.photon_channel[i] == XX:
                rec.xx_times.append(t)
                if j < 0:
                    rec.pairs.append(PairEmission(k, t, math.nan, TwoQubitDensity(np.eye(4) / 4), complete=False))
            else:
                rec.x_times.append(t)
                if j >= 0:
                    t_xx = t0 + float(em.photon_offset[em.pair_xx[j]])
                    rec.pairs.append(PairEmission(k, t_xx, t, cascade_state(config, t - t_xx)))
        yield rec


def sample_pulse(config: SourceConfig, rng: np.random.Generator, pulse_index: int = 0) -> EmissionRecord:
    """Emission record of a single excitation pulse firing at ``pulse_index / rep_rate``."""
    em = _merge(config, 1, [_simulate_chunk(config, 0, 1, rng)])
    return next(_records(config, em, pulse_index))


def run_source(config: SourceConfig, n_pulses: int, seed: int) -> Iterator[EmissionRecord]:
    """Per-pulse record stream; pulse ``k`` fires at ``k / rep_rate``.

    Draws the same substreams as :func:`simulate_emissions`.
    """
    if n_pulses < 1:
        raise ValueError("n_pulses must be >= 1")
    _check_span(config, n_pulses)
    for chunk, start in enumerate(range(0, n_pulses, CHUNK_PULSES)):
        n = min(CHUNK_PULSES, n_pulses - start)
        em = _merge(config, n, [_simulate_chunk(config, 0, n, substream(seed, "source", chunk))])
        yield from _records(config, em, start)
