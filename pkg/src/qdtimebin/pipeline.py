"""End-to-end runs: emissions -> (interface) -> detection -> post-selected pair ensemble,
plus the kinetics and arrival-time analyses used by the reproduction report.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import curve_fit

from .correlate import G2Result, build_histogram, g2_zero
from .detection import (
    TRIGGER_CHANNEL,
    X_CHANNEL,
    XX_CHANNEL,
    DetectorConfig,
    PhotonStream,
    TimeTags,
    detect,
    emit_trigger_tags,
    merge,
)
from .interface import (
    InterfaceConfig,
    conditional_pair_states,
    convert_stack,
    sample_pair_categories,
    single_photon_readout,
)
from .source import Emissions, SourceConfig, cascade_states, simulate_emissions
from .streams import substream
from .tomography import (
    Discrimination,
    PairEnsemble,
    ReconstructionResult,
    TomographyPlan,
    TomographySettingCount,
    bootstrap_errors,
    coincidence_pairs,
    mle_reconstruct,
    simulate_counts,
    timebin_discriminate,
)

I4 = np.eye(4, dtype=complex) / 4


# -- polarization -------------------------------------------------------------

def detect_emissions(em: Emissions, detector: DetectorConfig, seed: int, key: int = 0,
                     extra_offset: np.ndarray | None = None, transmission=1.0,
                     triggers: bool = False) -> TimeTags:
    tags = detect(PhotonStream.from_emissions(em, extra_offset), detector,
                  substream(seed, "detection", key), transmission)
    if triggers:
        tags = merge(tags, emit_trigger_tags(em.rep_rate, em.n_pulses))
    return tags


def _same_pair(em: Emissions, o1: np.ndarray, o2: np.ndarray) -> np.ndarray:
    ok = (o1 >= 0) & (o2 >= 0)
    p1 = np.where(ok, em.photon_pair[np.maximum(o1, 0)], -1)
    p2 = np.where(ok, em.photon_pair[np.maximum(o2, 0)], -2)
    return ok & (p1 >= 0) & (p1 == p2)


def polarization_ensemble(em: Emissions, source: SourceConfig, detector: DetectorConfig,
                          plan: TomographyPlan, seed: int) -> PairEnsemble:
    """All XX-X coincidences with ``0 <= t_X - t_XX <= window`` on detected tags.

    A coincidence of the two photons of one cascade contributes the cascade
    state at its true emission delay; any other coincidence (multi-photon
    or dark count) contributes ``I/4``.
    """
    tags = detect_emissions(em, detector, seed, key=0)
    a, b = coincidence_pairs(tags, int(round(plan.coincidence_window * 1e12)))
    o1, o2 = tags.origin[a], tags.origin[b]
    same = _same_pair(em, o1, o2)
    pairs = em.photon_pair[o1[same]]
    state_sum = cascade_states(source, em.pair_delay[pairs]).sum(axis=0)
    state_sum = state_sum + np.count_nonzero(~same) * I4
    return PairEnsemble(state_sum, int(a.size), em.duration, int(same.sum()))


# -- time-bin -----------------------------------------------------------------

@dataclass(frozen=True)
class TimebinRun:
    ensemble: PairEnsemble
    tags: TimeTags
    discrimination: Discrimination
    photon_category: np.ndarray
    photon_survived: np.ndarray


def _survival(em: Emissions, source: SourceConfig, interface: InterfaceConfig, rng: np.random.Generator):
    """Forward-pass survival per photon, plus the time-bin populations it leaves behind.

    The forward filter is diagonal in H/V, so for a pair the four
    survive/absorb branches depend only on the H/V populations of its
    state.  Photons outside complete pairs are unpolarized.
    """
    f = interface.forward_filter()
    g = np.abs(np.diag(f)) ** 2  # survival probability for H, V
    n = em.n_photons
    survived = rng.random(n) < g.mean()
    bin_pops = np.tile([0.5 * g[0], 0.5 * g[1]], (n, 1))

    pair_states = cascade_states(source, em.pair_delay)
    if em.n_pairs:
        pops = np.real(np.diagonal(pair_states, axis1=-2, axis2=-1)).reshape(-1, 2, 2)  # [pair, a, b]
        w = np.stack([1.0 - g, g])  # [survive?, pol]
        branch = np.einsum("sa,tb,nab->nst", w, w, pops).reshape(-1, 4)  # s1, s2 in {0, 1}
        cdf = np.cumsum(branch, axis=1)
        cdf /= cdf[:, -1:]
        idx = np.minimum((rng.random(em.n_pairs)[:, None] > cdf).sum(axis=1), 3)
        s1, s2 = idx // 2, idx % 2
        survived[em.pair_xx] = s1 == 1
        survived[em.pair_x] = s2 == 1
        # populations of a lone survivor given its partner was absorbed
        bin_pops[em.pair_xx] = np.einsum("a,b,nab->na", g, 1.0 - g, pops)
        bin_pops[em.pair_x] = np.einsum("a,b,nab->nb", 1.0 - g, g, pops)
        both = (s1 == 1) & (s2 == 1)
    else:
        both = np.zeros(0, dtype=bool)
    return survived, bin_pops, pair_states, both


def timebin_run(em: Emissions, source: SourceConfig, interface: InterfaceConfig,
                detector: DetectorConfig, plan: TomographyPlan, seed: int) -> TimebinRun:
    """Forward pass, return-pass categories, detection and middle-window post-selection."""
    rng = substream(seed, "interface")
    survived, bin_pops, pair_states, both = _survival(em, source, interface, rng)

    # single photons: category probabilities p_e/2, 1/2, p_l/2
    pe = bin_pops[:, 0] / bin_pops.sum(axis=1)
    u = rng.random(em.n_photons)
    category = np.where(u < 0.5 * pe, 0, np.where(u < 0.5 * pe + 0.5, 1, 2)).astype(np.int64)

    rho_tb = np.zeros((0, 4, 4), dtype=complex)
    if em.n_pairs:
        rho_tb = convert_stack(pair_states, interface)
        c1, c2 = sample_pair_categories(rho_tb[both], rng)
        category[em.pair_xx[both]] = c1
        category[em.pair_x[both]] = c2

    tags = detect_emissions(em, detector, seed, key=1, extra_offset=category * interface.delta_t,
                            transmission=survived.astype(float), triggers=True)
    disc = timebin_discriminate(tags, interface.delta_t, plan.coincidence_window, plan.category_margin)

    o1, o2 = tags.origin[disc.pair_xx], tags.origin[disc.pair_x]
    same = _same_pair(em, o1, o2)
    pairs = em.photon_pair[o1[same]]
    state_sum = np.zeros((4, 4), dtype=complex)
    if pairs.size:
        state_sum += conditional_pair_states(rho_tb[pairs], category[o1[same]], category[o2[same]],
                                             interface).sum(axis=0)
    other1, other2 = o1[~same], o2[~same]
    r1 = single_photon_readout(np.where(other1 >= 0, category[np.maximum(other1, 0)], 1))
    r2 = single_photon_readout(np.where(other2 >= 0, category[np.maximum(other2, 0)], 1))
    if other1.size:
        state_sum += np.einsum("nab,ncd->acbd", r1, r2).reshape(4, 4)
    ensemble = PairEnsemble(state_sum, int(o1.size), em.duration, int(same.sum()))
    return TimebinRun(ensemble, tags, disc, category, survived)


# -- tomography driver ---------------------------------------------------------

@dataclass
class TomographyRun:
    mode: str
    counts: list[TomographySettingCount]
    result: ReconstructionResult
    ensemble: PairEnsemble


def reconstruct(counts, plan: TomographyPlan, seed: int, bootstrap: bool = True) -> ReconstructionResult:
    result = mle_reconstruct(counts, mode=plan.mode)
    if bootstrap:
        errs = bootstrap_errors(counts, plan.bootstrap_resamples, seed, mode=plan.mode, init=result.rho)
        result.sigma_c, result.sigma_f = errs.sigma_c, errs.sigma_f
    return result


def run_tomography(em: Emissions, source: SourceConfig, interface: InterfaceConfig, detector: DetectorConfig,
                   plan: TomographyPlan, seed: int, noiseless: bool = False,
                   bootstrap: bool = True) -> TomographyRun:
    if plan.mode == "polarization":
        ensemble = polarization_ensemble(em, source, detector, plan, seed)
    else:
        ensemble = timebin_run(em, source, interface, detector, plan, seed).ensemble
    counts = simulate_counts(ensemble, plan, seed, noiseless=noiseless)
    return TomographyRun(plan.mode, counts, reconstruct(counts, plan, seed, bootstrap), ensemble)


# -- correlation and kinetics --------------------------------------------------

G2_KINDS = {"x_auto": (X_CHANNEL, X_CHANNEL), "xx_auto": (XX_CHANNEL, XX_CHANNEL), "cross": (XX_CHANNEL, X_CHANNEL)}


def g2_suite(source: SourceConfig, detector: DetectorConfig, n_pulses: int, seed: int) -> dict[str, G2Result]:
    """X auto-, XX auto- and XX-X cross-correlation g2(0) of one simulated run."""
    em = simulate_emissions(source, n_pulses, seed)
    tags = detect_emissions(em, detector, seed)
    out = {}
    for name, (a, b) in G2_KINDS.items():
        hist = build_histogram(tags, a, b, rep_period=source.rep_period)
        out[name] = g2_zero(hist)
    return out


def trigger_delays(tags: TimeTags, channel: int) -> np.ndarray:
    """Delay (s) of each tag of ``channel`` after the latest trigger."""
    trig = tags.select(TRIGGER_CHANNEL)
    t = tags.select(channel)
    j = np.searchsorted(trig, t, side="right") - 1
    return (t[j >= 0] - trig[j[j >= 0]]) * 1e-12


@dataclass(frozen=True)
class LifetimeFit:
    tau_xx: float
    tau_xx_err: float
    tau_x: float
    tau_x_err: float


def _fit_decay(delays: np.ndarray, t_min: float, t_max: float, bin_width: float, fixed_tau: float | None = None):
    edges = np.arange(t_min, t_max + bin_width / 2, bin_width)
    counts, _ = np.histogram(delays, edges)
    t = 0.5 * (edges[1:] + edges[:-1]) - t_min
    sigma = np.sqrt(np.maximum(counts, 1.0))
    a0 = max(float(counts[0]), 1.0)
    if fixed_tau is None:
        def model(t, a, tau):
            return a * np.exp(-t / tau)
        p0 = [a0, 1e-9]
    else:
        # the X decay follows the XX decay: a rising term with the XX lifetime
        def model(t, a, tau, b):
            return a * np.exp(-t / tau) + b * np.exp(-t / fixed_tau)
        p0 = [a0, 1e-9, 0.0]
    p, cov = curve_fit(model, t, counts, p0=p0, sigma=sigma, absolute_sigma=True, maxfev=20000)
    return float(p[1]), float(np.sqrt(cov[1, 1]))


def fit_lifetimes(tags: TimeTags, jitter_fwhm: float = 0.0, bin_width: float = 32e-12,
                  t_max: float = 10e-9) -> LifetimeFit:
    """Exponential fits to the trigger-referenced decay histograms.

    Fits start two jitter widths after the peak so the instrument response
    no longer shapes the curve.
    """
    start = 2.0 * jitter_fwhm
    d_xx = trigger_delays(tags, XX_CHANNEL)
    d_x = trigger_delays(tags, X_CHANNEL)
    peak_xx = float(np.median(d_xx[d_xx < 2e-9])) if d_xx.size else 0.0
    tau_xx, err_xx = _fit_decay(d_xx, max(peak_xx, 0.0) + start, t_max, bin_width)
    tau_x, err_x = _fit_decay(d_x, max(peak_xx, 0.0) + start, t_max, bin_width, fixed_tau=tau_xx)
    return LifetimeFit(tau_xx, err_xx, tau_x, err_x)


@dataclass(frozen=True)
class PowerSweep:
    mean_pairs: np.ndarray
    xx_counts: np.ndarray
    x_counts: np.ndarray
    exponent_xx: float
    exponent_x: float


def _loglog_slope(x: np.ndarray, n: np.ndarray) -> float:
    ok = n > 0
    # Poisson weights: sigma(log n) = 1/sqrt(n)
    return float(np.polyfit(np.log(x[ok]), np.log(n[ok]), 1, w=np.sqrt(n[ok]))[0])


def power_sweep(source: SourceConfig, mean_pairs=(0.01, 0.02, 0.05, 0.1), n_pulses: int = 2_000_000,
                seed: int = 0) -> PowerSweep:
    """Emitted XX and X photon counts versus mean pair number, with log-log slopes."""
    mus = np.asarray(mean_pairs, dtype=float)
    xx, x = [], []
    for i, mu in enumerate(mus):
        em = simulate_emissions(replace(source, mean_pairs=float(mu)), n_pulses, seed + i)
        xx.append(em.channel_count(XX_CHANNEL))
        x.append(em.channel_count(X_CHANNEL))
    xx, x = np.array(xx, float), np.array(x, float)
    return PowerSweep(mus, xx, x, _loglog_slope(mus, xx), _loglog_slope(mus, x))


@dataclass(frozen=True)
class ThreePeaks:
    areas: np.ndarray
    centroids: np.ndarray

    @property
    def fractions(self) -> np.ndarray:
        return self.areas / self.areas.sum()

    @property
    def spacing(self) -> float:
        return float(np.mean(np.diff(self.centroids)))

    def ratio_sigma(self) -> np.ndarray:
        """Binomial standard error of each peak's area fraction."""
        f = self.fractions
        return np.sqrt(f * (1 - f) / self.areas.sum())


def three_peak_analysis(run: TimebinRun, channel: int = XX_CHANNEL) -> ThreePeaks:
    """Areas and centroids of the three return-pass arrival peaks of one photon channel."""
    sel = (run.tags.channel == channel) & (run.discrimination.category >= 0)
    cat = run.discrimination.category[sel]
    delay = run.discrimination.trigger_delay_ps[sel] * 1e-12
    areas = np.array([np.count_nonzero(cat == k) for k in range(3)], dtype=float)
    centroids = np.array([delay[cat == k].mean() if areas[k] else np.nan for k in range(3)])
    return ThreePeaks(areas, centroids)

