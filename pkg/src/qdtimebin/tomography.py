"""Sixteen-setting two-photon tomography: count simulation, linear inversion,
maximum-likelihood reconstruction and bootstrap error bars.

The maximum-likelihood fit parametrizes ``rho = L L^+ / Tr(L L^+)`` with a
lower-triangular ``L`` (real diagonal, 16 real parameters) and minimizes

    sum_i (N p_i(rho) - n_i)^2 / (2 N p_i(rho)),   p_i = Tr(rho M_i),

with the scale ``N`` fixed so that the expected total equals the observed
total.  The minimization is a Nelder-Mead simplex restarted from its own
optimum until the relative cost change drops below ``rtol``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .detection import TRIGGER_CHANNEL, X_CHANNEL, XX_CHANNEL, TimeTags, _atomic_write_text
from .interface import InterfaceConfig, effective_timebin_projector
from .qmath import (
    ANALYZERS,
    TwoQubitDensity,
    TwoQubitState,
    bell_state,
    concurrence,
    fidelity,
    projector_matrix,
)
from .source import InvalidParameter
from .streams import substream

SETTINGS: tuple[tuple[str, str], ...] = tuple(
    (a, b) for a in "HVDL" for b in "HVDL"
)
DEFAULT_INTEGRATION_TIME = {"polarization": 300.0, "timebin": 1800.0}
MODES = ("polarization", "timebin")

_PAULI = [
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
]
# orthonormal Hermitian operator basis: Tr(G_j G_k) = delta_jk
_GAMMA = np.array([np.kron(a, b) / 2.0 for a in _PAULI for b in _PAULI])
_TRIL = np.tril_indices(4, -1)
_DIAG = np.diag_indices(4)


class BootstrapError(RuntimeError):
    """Too many bootstrap resamples failed to converge."""


@dataclass(frozen=True)
class TomographyPlan:
    integration_time: float | None = None
    coincidence_window: float = 3e-9
    mode: str = "polarization"
    photon_efficiency: float = 4.4e-3
    bootstrap_resamples: int = 100
    category_margin: float = 0.5e-9
    settings: tuple[tuple[str, str], ...] = SETTINGS

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidParameter("mode", f"unknown tomography mode {self.mode!r}; expected one of {MODES}")
        if tuple(map(tuple, self.settings)) != SETTINGS:
            raise InvalidParameter("settings", "the measurement set is fixed to the 16 standard settings")
        if not self.coincidence_window > 0:
            raise InvalidParameter("coincidence_window", "must be > 0")
        if self.integration_time is not None and not self.integration_time > 0:
            raise InvalidParameter("integration_time", "must be > 0")
        if not 0.0 < self.photon_efficiency <= 1.0:
            raise InvalidParameter("photon_efficiency", "must lie in (0, 1]")
        if self.bootstrap_resamples < 100:
            raise InvalidParameter("bootstrap_resamples", "must be >= 100")
        if not self.category_margin >= 0:
            raise InvalidParameter("category_margin", "must be >= 0")

    @property
    def effective_integration_time(self) -> float:
        if self.integration_time is not None:
            return self.integration_time
        return DEFAULT_INTEGRATION_TIME[self.mode]


@dataclass(frozen=True)
class TomographySettingCount:
    setting: tuple[str, str]
    coincidences: int

    def __post_init__(self):
        if self.coincidences < 0:
            raise ValueError("coincidence counts must be non-negative")
        a, b = self.setting
        if a not in ANALYZERS or b not in ANALYZERS:
            raise ValueError(f"unknown analyzer labels {self.setting}")


@dataclass
class ReconstructionResult:
    rho: TwoQubitDensity
    concurrence: float
    fidelity_best: float
    best_phase: float
    likelihood: float
    converged: bool
    sigma_c: float = 0.0
    sigma_f: float = 0.0
    n_evaluations: int = 0
    history: list[float] = field(default_factory=list, repr=False)

    def metrics(self) -> dict[str, object]:
        return {
            "concurrence": self.concurrence,
            "fidelity_best": self.fidelity_best,
            "best_phase_rad": self.best_phase,
            "sigma_c": self.sigma_c,
            "sigma_f": self.sigma_f,
            "converged": self.converged,
        }

    def report(self) -> str:
        lines = [self.rho.to_text()]
        for k, v in self.metrics().items():
            lines.append(f"{k}={str(v).lower() if isinstance(v, bool) else repr(float(v))}\n")
        return "".join(lines)


@dataclass(frozen=True)
class BootstrapResult:
    sigma_c: float
    sigma_f: float
    n_resamples: int
    n_failed: int


# -- measurement operators -------------------------------------------------

def measurement_operators(mode: str = "polarization", theta_back: float = 0.0) -> np.ndarray:
    """(16, 4, 4) operators assumed by the reconstruction for each setting.

    In time-bin mode the analyzers are read through the nominal mapping
    V -> early, H -> late with return-pass phase ``theta_back``.
    """
    if mode == "polarization":
        return np.array([projector_matrix(a, b) for a, b in SETTINGS])
    if mode == "timebin":
        cfg = InterfaceConfig(theta_back=theta_back)
        return np.array([effective_timebin_projector(a, b, cfg).matrix for a, b in SETTINGS])
    raise ValueError(f"unknown tomography mode {mode!r}")


def basis_label_for(mode: str) -> str:
    return "timebin" if mode == "timebin" else "polarization"


def _count_vector(counts) -> np.ndarray:
    if len(counts) and isinstance(counts[0], TomographySettingCount):
        by_setting = {c.setting: c.coincidences for c in counts}
        if set(by_setting) != set(SETTINGS):
            raise ValueError("counts must cover exactly the 16 tomography settings")
        return np.array([by_setting[s] for s in SETTINGS], dtype=float)
    vec = np.asarray(counts, dtype=float).reshape(-1)
    if vec.size != 16:
        raise ValueError(f"expected 16 counts, got {vec.size}")
    if np.any(vec < 0):
        raise ValueError("counts must be non-negative")
    return vec


def as_setting_counts(values: Sequence[float]) -> list[TomographySettingCount]:
    return [TomographySettingCount(s, int(v)) for s, v in zip(SETTINGS, values)]


def probabilities(rho: np.ndarray, operators: np.ndarray) -> np.ndarray:
    """``Tr(rho M_i)`` for each operator."""
    return np.real(np.einsum("jk,ikj->i", rho, operators))


def expected_counts(rho: TwoQubitDensity | np.ndarray, operators: np.ndarray, total: float) -> np.ndarray:
    """Noiseless counts proportional to ``Tr(rho M_i)`` summing to ``total``."""
    if isinstance(rho, TwoQubitState):
        rho = rho.density()
    m = rho.matrix if isinstance(rho, TwoQubitDensity) else np.asarray(rho)
    p = probabilities(m, operators)
    return total * p / p.sum()


# -- linear inversion --------------------------------------------------------

def linear_reconstruct(counts, operators: np.ndarray | None = None, mode: str = "polarization") -> TwoQubitDensity:
    """Linear-inversion estimate; Hermitian with unit trace but not necessarily positive."""
    n = _count_vector(counts)
    if n.sum() <= 0:
        raise ValueError("total counts must be positive")
    ops = measurement_operators(mode) if operators is None else operators
    a = np.real(np.einsum("ijk,lkj->il", ops, _GAMMA))
    if np.linalg.cond(a) > 1e12:
        raise np.linalg.LinAlgError("measurement operators are not informationally complete")
    x = np.linalg.solve(a, n)
    m = np.einsum("l,ljk->jk", x, _GAMMA)
    m = m / np.real(np.trace(m))
    return TwoQubitDensity(0.5 * (m + m.conj().T), basis_label_for(mode), check=False)


# -- maximum likelihood --------------------------------------------------------

def params_to_matrix(t: np.ndarray) -> np.ndarray:
    lower = np.zeros((4, 4), dtype=complex)
    lower[_DIAG] = t[:4]
    lower[_TRIL] = t[4:10] + 1j * t[10:16]
    m = lower @ lower.conj().T
    return m / np.real(np.trace(m))


def matrix_to_params(rho: np.ndarray, floor: float = 1e-9) -> np.ndarray:
    """Cholesky parameters of ``rho`` after clamping its spectrum to ``>= floor``."""
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    w = np.clip(w, floor, None)
    m = (v * w) @ v.conj().T
    m /= np.real(np.trace(m))
    lower = np.linalg.cholesky(m)
    return np.concatenate([np.real(lower[_DIAG]), np.real(lower[_TRIL]), np.imag(lower[_TRIL])])


def _param_basis() -> np.ndarray:
    """(16, 4, 4) complex matrices ``E_k`` with ``L = sum_k t_k E_k``."""
    basis = np.zeros((16, 4, 4), dtype=complex)
    for k, (i, j) in enumerate(zip(*_DIAG)):
        basis[k, i, j] = 1.0
    for k, (i, j) in enumerate(zip(*_TRIL)):
        basis[4 + k, i, j] = 1.0
        basis[10 + k, i, j] = 1j
    return basis


_E = _param_basis()


class _Cost:
    """Weighted least-squares cost as a function of the Cholesky parameters.

    ``Tr(L L^+ M_i) = t^T Q_i t`` with ``Q_i[k, l] = Re Tr(E_k E_l^+ M_i)``
    and ``Tr(L L^+) = |t|^2``, so each evaluation is two small products.
    """

    def __init__(self, n: np.ndarray, operators: np.ndarray):
        self.n = n
        self.total = n.sum()
        q = np.real(np.einsum("kab,lcb,ica->ikl", _E, _E.conj(), operators))
        self.q = np.ascontiguousarray(0.5 * (q + np.swapaxes(q, 1, 2)).reshape(-1, 16))
        self.m = len(operators)
        self.evaluations = 0

    def __call__(self, t: np.ndarray) -> float:
        self.evaluations += 1
        p = (self.q @ t).reshape(self.m, 16) @ t
        nbar = np.maximum(p * (self.total / p.sum()), 1e-12 * self.total)
        return float(np.sum((nbar - self.n) ** 2 / (2.0 * nbar)))


def _initial_simplex(x0: np.ndarray, scale: float) -> np.ndarray:
    step = scale * max(1.0, float(np.max(np.abs(x0))))
    return np.vstack([x0, x0 + step * np.eye(x0.size)])


def _simplex_fit(cost: _Cost, x0: np.ndarray, rtol: float, max_evals: int, history: list[float]):
    """Restarted Nelder-Mead until a restart changes the cost by less than ``rtol``.

    The change is measured relative to ``max(cost, 1)``: the cost is half a
    chi-square, so differences far below one count are statistically void
    and a noiseless fit (cost -> 0) still terminates.
    """
    x, fx = x0, cost(x0)
    history.append(fx)
    scale = 0.05
    converged = False

    def record(xk):
        f = cost(xk)
        if f <= history[-1]:
            history.append(f)

    while cost.evaluations < max_evals:
        res = minimize(
            cost, x, method="Nelder-Mead", callback=record,
            options={
                "initial_simplex": _initial_simplex(x, scale),
                "maxfev": max(1, max_evals - cost.evaluations),
                "xatol": np.inf,
                "fatol": rtol * max(fx, 1.0),
                "adaptive": True,
            },
        )
        change = max(fx - float(res.fun), 0.0) / max(fx, 1.0)
        if res.fun < fx:
            x, fx = res.x, float(res.fun)
            if fx < history[-1]:
                history.append(fx)
        if change < rtol:
            converged = True
            break
        scale = max(scale * 0.3, 1e-6)
    return x, fx, converged


def best_phase_fidelity(rho: TwoQubitDensity, grid: int = 720) -> tuple[float, float]:
    """Maximum of ``F(rho, (|00> + e^{i phi}|11>)/sqrt(2))`` over ``phi``.

    Coarse grid search followed by bounded scalar refinement.  Returns
    ``(fidelity, phase)`` with the phase folded to ``(-pi, pi]``.
    """
    label = rho.basis_label
    phases = np.linspace(-np.pi, np.pi, grid, endpoint=False)
    m = rho.matrix
    f = 0.5 * np.real(m[0, 0] + m[3, 3]) + np.real(np.exp(1j * phases) * m[0, 3])
    i = int(np.argmax(f))
    step = 2 * np.pi / grid
    res = minimize_scalar(lambda p: -fidelity(rho, bell_state(p, label)),
                          bounds=(phases[i] - step, phases[i] + step), method="bounded",
                          options={"xatol": 1e-10})
    phase = float(res.x)
    phase = math.atan2(math.sin(phase), math.cos(phase))
    if phase <= -math.pi:
        phase += 2 * math.pi
    return fidelity(rho, bell_state(phase, label)), phase


def mle_reconstruct(counts, operators: np.ndarray | None = None, mode: str = "polarization",
                    init: TwoQubitDensity | None = None, rtol: float = 1e-10,
                    max_evals: int = 100_000) -> ReconstructionResult:
    """Physical maximum-likelihood state for 16 coincidence counts.

    Starts from ``init`` when given, otherwise from the clamped linear
    inversion and from ``I/4``, keeping the better optimum.  When the
    evaluation budget runs out the best iterate is returned with
    ``converged=False``.
    """
    n = _count_vector(counts)
    if n.sum() <= 0:
        raise ValueError("counts must not all be zero")
    ops = measurement_operators(mode) if operators is None else np.asarray(operators)
    label = basis_label_for(mode)

    if init is not None:
        starts = [matrix_to_params(init.matrix)]
    else:
        starts = [matrix_to_params(linear_reconstruct(n, ops, mode).matrix),
                  matrix_to_params(np.eye(4) / 4)]

    best = None
    total_evals = 0
    for x0 in starts:
        cost = _Cost(n, ops)
        history: list[float] = []
        x, fx, ok = _simplex_fit(cost, x0, rtol, max(1, max_evals - total_evals), history)
        total_evals += cost.evaluations
        if best is None or fx < best[1]:
            best = (x, fx, ok, history)
        if total_evals >= max_evals:
            break
    x, fx, ok, history = best
    rho = TwoQubitDensity(params_to_matrix(x), label)
    f_best, phase = best_phase_fidelity(rho)
    return ReconstructionResult(
        rho=rho,
        concurrence=concurrence(rho),
        fidelity_best=f_best,
        best_phase=phase,
        likelihood=fx,
        converged=ok and total_evals < max_evals,
        n_evaluations=total_evals,
        history=history,
    )


def bootstrap_errors(counts, n_resamples: int = 100, seed: int = 0, operators: np.ndarray | None = None,
                     mode: str = "polarization", init: TwoQubitDensity | None = None,
                     max_failed_fraction: float = 0.1) -> BootstrapResult:
    """Poisson-resampling standard deviations of concurrence and best-phase fidelity.

    Resample ``i`` draws from substream ``("bootstrap", i)``, so results are
    independent of evaluation order.
    """
    if n_resamples < 100:
        raise ValueError("n_resamples must be >= 100")
    n = _count_vector(counts)
    ops = measurement_operators(mode) if operators is None else operators
    if init is None:
        init = mle_reconstruct(n, ops, mode).rho
    cs, fs, failed = [], [], 0
    for i in range(n_resamples):
        rng = substream(seed, "bootstrap", i)
        resample = rng.poisson(n)
        if resample.sum() == 0:
            failed += 1
            continue
        res = mle_reconstruct(resample, ops, mode, init=init)
        if not res.converged:
            failed += 1
        cs.append(res.concurrence)
        fs.append(res.fidelity_best)
    if failed > max_failed_fraction * n_resamples:
        raise BootstrapError(f"{failed} of {n_resamples} bootstrap fits did not converge")
    return BootstrapResult(float(np.std(cs, ddof=1)), float(np.std(fs, ddof=1)), n_resamples, failed)


# -- count simulation ----------------------------------------------------------

@dataclass(frozen=True)
class PairEnsemble:
    """Sum of the (normalized) two-photon states of all post-selected coincidences.

    ``state_sum`` lives in the frame the analyzers act on: polarization for
    polarization tomography, and the polarization leaving the return pass
    for time-bin tomography.
    """

    state_sum: np.ndarray
    n_coincidences: int
    duration: float
    n_true_pairs: int = 0

    @classmethod
    def from_state(cls, rho: TwoQubitDensity | np.ndarray, n_coincidences: int, duration: float = 1.0):
        m = rho.matrix if isinstance(rho, TwoQubitDensity) else np.asarray(rho, dtype=complex)
        return cls(m * n_coincidences, n_coincidences, duration, n_coincidences)

    def mean_state(self) -> np.ndarray:
        return self.state_sum / max(self.n_coincidences, 1)


def simulate_counts(ensemble: PairEnsemble, plan: TomographyPlan, seed: int,
                    noiseless: bool = False) -> list[TomographySettingCount]:
    """Coincidences per setting for the plan's integration time.

    The mean for setting ``(a, b)`` is ``T_int / T_sim * eta^2 *
    sum_pairs Tr(rho_pair P_a (x) P_b)``; counts are Poisson draws from it
    (or the rounded means when ``noiseless``).
    """
    scale = plan.effective_integration_time / ensemble.duration * plan.photon_efficiency ** 2
    ops = measurement_operators("polarization")
    means = scale * np.clip(probabilities(ensemble.state_sum, ops), 0.0, None)
    if noiseless:
        values = np.rint(means)
    else:
        values = substream(seed, "counts", MODES.index(plan.mode)).poisson(means)
    return as_setting_counts(values)


def counts_to_csv(counts: Sequence[TomographySettingCount]) -> str:
    buf = io.StringIO()
    buf.write("setting_a,setting_b,coincidences\n")
    for c in counts:
        buf.write(f"{c.setting[0]},{c.setting[1]},{c.coincidences}\n")
    return buf.getvalue()


def write_counts_csv(path, counts: Sequence[TomographySettingCount]) -> None:
    _atomic_write_text(path, counts_to_csv(counts))


def read_counts_csv(path) -> list[TomographySettingCount]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "setting_a,setting_b,coincidences":
            raise ValueError(f"{path}: unexpected header {header!r}")
        rows = [ln.strip().split(",") for ln in fh if ln.strip()]
    counts = [TomographySettingCount((a, b), int(n)) for a, b, n in rows]
    _count_vector(counts)
    return counts


# -- time-bin discrimination ---------------------------------------------------

@dataclass(frozen=True)
class Discrimination:
    """Arrival categories per tag (-1: trigger, outside, or rejected) and retained pairs."""

    category: np.ndarray
    trigger_delay_ps: np.ndarray
    pair_xx: np.ndarray
    pair_x: np.ndarray


def coincidence_pairs(tags: TimeTags, window_ps: int, start_ch: int = XX_CHANNEL, stop_ch: int = X_CHANNEL,
                      start_mask: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Tag-index pairs (start, stop) with ``0 <= t_stop - t_start <= window_ps``."""
    start_idx = np.flatnonzero(tags.channel == start_ch)
    if start_mask is not None:
        start_idx = start_idx[start_mask[start_idx]]
    stop_idx = np.flatnonzero(tags.channel == stop_ch)
    stop_t = tags.time_ps[stop_idx]
    order = np.argsort(stop_t, kind="stable")
    stop_idx, stop_t = stop_idx[order], stop_t[order]
    s = tags.time_ps[start_idx]
    first = np.searchsorted(stop_t, s, side="left")
    last = np.searchsorted(stop_t, s + window_ps, side="right")
    n = last - first
    rep = np.repeat(np.arange(start_idx.size), n)
    within = np.arange(int(n.sum())) - np.repeat(np.cumsum(n) - n, n)
    return start_idx[rep], stop_idx[first[rep] + within]


def timebin_discriminate(tags: TimeTags, delta_t: float, window: float = 3e-9, margin: float = 0.5e-9,
                         guard: float = 0.0, reject_ambiguous: bool = False,
                         trigger_channel: int = TRIGGER_CHANNEL) -> Discrimination:
    """Assign photons to the three return-pass arrival categories and post-select pairs.

    A photon arriving ``d`` after the latest trigger is put in category
    ``floor((d + margin) / delta_t)``, i.e. windows ``[k dt - margin,
    (k+1) dt - margin)``, where the margin absorbs timing jitter ahead of the
    decay.  ``d`` is measured from the latest trigger at or before ``t +
    margin``, so such early photons are not attributed to the previous pulse.  Photons within ``guard`` of a window edge are ambiguous and are
    discarded when ``reject_ambiguous`` is set.

    Retained pairs are XX photons of the middle category together with every
    X photon arriving 0 to ``window`` after them; an X photon follows its XX
    partner by the exciton decay time, so this selects the X photon's middle
    category relative to the XX photon.
    """
    if not np.all(np.diff(tags.time_ps) >= 0):
        raise ValueError("tags must be time-sorted")
    dt_ps = delta_t * 1e12
    trig = tags.time_ps[tags.channel == trigger_channel]
    if trig.size == 0:
        raise ValueError("time-bin discrimination needs trigger tags")
    photon = tags.channel != trigger_channel
    margin_ps = int(round(margin * 1e12))
    # a photon up to ``margin`` ahead of a trigger belongs to that trigger's pulse
    j = np.searchsorted(trig, tags.time_ps + margin_ps, side="right") - 1
    valid = photon & (j >= 0)
    delay = np.where(valid, tags.time_ps - trig[np.maximum(j, 0)], -margin_ps - 1)
    pos = (delay + margin_ps) / dt_ps
    cat = np.floor(pos).astype(np.int64)
    cat = np.where(valid & (cat >= 0) & (cat <= 2), cat, -1)
    if guard > 0:
        edge = np.minimum(pos - np.floor(pos), np.ceil(pos) - pos) * dt_ps
        ambiguous = (cat >= 0) & (edge < guard * 1e12)
        if reject_ambiguous:
            cat = np.where(ambiguous, -1, cat)
    cat = cat.astype(np.int8)
    pxx, px = coincidence_pairs(tags, int(round(window * 1e12)), start_mask=cat == 1)
    return Discrimination(cat, delay, pxx, px)


__all__ = [
    "SETTINGS", "TomographyPlan", "TomographySettingCount", "ReconstructionResult", "BootstrapResult",
    "BootstrapError", "PairEnsemble", "Discrimination", "measurement_operators", "expected_counts",
    "linear_reconstruct", "mle_reconstruct", "bootstrap_errors", "best_phase_fidelity", "simulate_counts",
    "timebin_discriminate", "coincidence_pairs", "read_counts_csv", "write_counts_csv", "counts_to_csv",
]
