"""Start-stop coincidence histograms and g2(0) extraction."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .detection import TimeTags, _atomic_write_text

DEFAULT_BIN_WIDTH = 128e-12
DEFAULT_RANGE = 100e-9
DEFAULT_SIDE_PEAKS = 6


class EmptyChannelError(ValueError):
    pass


class G2UndefinedError(ValueError):
    """Side peaks are empty, so the normalization of g2(0) is undefined."""


@dataclass(frozen=True)
class CoincidenceHistogram:
    """Counts of ``t_stop - t_start`` in bins centered on multiples of ``bin_width``."""

    bin_width: float
    range: float
    counts: np.ndarray
    start_channel: int
    stop_channel: int
    rep_period: float | None = None

    @property
    def bin_width_ps(self) -> int:
        return int(round(self.bin_width * 1e12))

    @property
    def half_bins(self) -> int:
        return (self.counts.size - 1) // 2

    @property
    def delays_ps(self) -> np.ndarray:
        k = self.half_bins
        return np.arange(-k, k + 1, dtype=np.int64) * self.bin_width_ps

    @property
    def delays(self) -> np.ndarray:
        return self.delays_ps * 1e-12

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("delay_ps,counts\n")
        np.savetxt(buf, np.column_stack([self.delays_ps, self.counts]), fmt="%d", delimiter=",")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        _atomic_write_text(path, self.to_csv())


@dataclass(frozen=True)
class G2Result:
    g2_zero_peak_max: float
    g2_zero_integrated: float
    side_peak_mean_area: float
    central_peak_area: float = 0.0

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in self.__dict__.items())


def histogram_geometry(bin_width: float, range_: float) -> tuple[int, int]:
    """Integer bin width (ps) and number of bins on each side of zero."""
    bw = int(round(bin_width * 1e12))
    if bw <= 0:
        raise ValueError("bin_width must be at least 1 ps")
    r = int(round(range_ * 1e12))
    if bw > r:
        raise ValueError("bin_width must not exceed range")
    return bw, r // bw


def bin_index(delay_ps: np.ndarray, bw: int) -> np.ndarray:
    """Bin of a delay: nearest multiple of ``bw``; half-way delays round away from zero.

    Rounding is odd-symmetric so autocorrelation histograms are exactly
    mirror-symmetric.
    """
    delay_ps = np.asarray(delay_ps)
    return np.sign(delay_ps) * np.floor_divide(np.abs(delay_ps) + bw // 2, bw)


def _pair_delays(start: np.ndarray, stop: np.ndarray, lo: int, hi: int, exclude_self: bool,
                 chunk: int = 1 << 16):
    """Yield delay arrays ``stop - start`` for all pairs with lo <= delay <= hi."""
    for c0 in range(0, start.size, chunk):
        s = start[c0:c0 + chunk]
        first = np.searchsorted(stop, s + lo, side="left")
        last = np.searchsorted(stop, s + hi, side="right")
        n = last - first
        total = int(n.sum())
        if total == 0:
            continue
        rep = np.repeat(np.arange(s.size), n)
        within = np.arange(total) - np.repeat(np.cumsum(n) - n, n)
        j = first[rep] + within
        d = stop[j] - s[rep]
        if exclude_self:
            d = d[j != (c0 + rep)]
        yield d


def build_histogram(tags: TimeTags, start_ch: int, stop_ch: int, bin_width: float = DEFAULT_BIN_WIDTH,
                    range_: float = DEFAULT_RANGE, rep_period: float | None = None) -> CoincidenceHistogram:
    """All-pairs start-stop histogram within ``+-range``.

    Every (start, stop) tag pair whose delay falls in a histogram bin is
    counted, not only the first stop after each start.  For an
    autocorrelation (``start_ch == stop_ch``) a tag is never paired with
    itself.
    """
    bw, k = histogram_geometry(bin_width, range_)
    counts = np.zeros(2 * k + 1, dtype=np.int64)
    start = np.sort(tags.time_ps[tags.channel == start_ch])
    stop = np.sort(tags.time_ps[tags.channel == stop_ch])
    if start.size and stop.size:
        hi = (k + 1) * bw - bw // 2 - 1
        lo = -hi
        for d in _pair_delays(start, stop, lo, hi, exclude_self=start_ch == stop_ch):
            counts += np.bincount(bin_index(d, bw) + k, minlength=counts.size)
    return CoincidenceHistogram(bw * 1e-12, k * bw * 1e-12, counts, start_ch, stop_ch, rep_period)


def peak_windows(hist: CoincidenceHistogram) -> np.ndarray:
    """Peak number of every bin (nearest multiple of the repetition period)."""
    if hist.rep_period is None:
        raise ValueError("histogram has no repetition period")
    period_ps = hist.rep_period * 1e12
    return np.floor(hist.delays_ps / period_ps + 0.5).astype(np.int64)


def g2_zero(hist: CoincidenceHistogram, n_side_peaks: int = DEFAULT_SIDE_PEAKS) -> G2Result:
    """Normalized zero-delay peak from a pulsed correlation histogram.

    Each peak window is one repetition period wide and centered on ``k *
    rep_period``; the central peak is compared to the mean of the
    ``n_side_peaks`` peaks on either side, both by area and by bin maximum.
    """
    if hist.rep_period is None:
        raise ValueError("histogram has no repetition period")
    if (n_side_peaks + 0.5) * hist.rep_period > hist.range + 0.5 * hist.bin_width:
        raise ValueError("histogram range does not cover the requested side peaks")
    k = peak_windows(hist)
    side = [j for j in range(-n_side_peaks, n_side_peaks + 1) if j != 0]
    areas = np.array([hist.counts[k == j].sum() for j in side], dtype=float)
    maxima = np.array([hist.counts[k == j].max() for j in side], dtype=float)
    central = hist.counts[k == 0]
    mean_area = float(areas.mean())
    if mean_area <= 0 or maxima.mean() <= 0:
        raise G2UndefinedError("side peaks are empty; g2(0) undefined")
    return G2Result(
        g2_zero_peak_max=float(central.max()) / float(maxima.mean()),
        g2_zero_integrated=float(central.sum()) / mean_area,
        side_peak_mean_area=mean_area,
        central_peak_area=float(central.sum()),
    )
