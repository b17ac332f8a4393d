"""Unbalanced Mach-Zehnder polarization/time-bin interface.

Forward pass: the H component takes the short path (early bin), the V
component the long path (late bin, extra phase ``theta_fwd``); a polarizer
behind the second PBS projects every photon onto ``polarizer_angle``.

Backward pass (analysis): the now diagonally polarized photon is split
again; its short/long choice on the way back shifts the arrival by 0 or
``delta_t``.  Three arrival categories result per photon:

* 0 ``short_short``: early bin, short path back, leaves H polarized
* 1 ``cross``: early bin via the long path (V, phase ``theta_back``) or late
  bin via the short path (H); the two are indistinguishable in time
* 2 ``long_long``: late bin, long path back, leaves V polarized

The per-photon Kraus operators of the three categories map time-bin space
(e, l) onto polarization (H, V) and sum to the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .qmath import AnalyzerLike, TwoQubitDensity, analyzer
from .source import InvalidParameter

CATEGORIES = ("short_short", "cross", "long_long")
SHORT_SHORT, CROSS, LONG_LONG = 0, 1, 2


@dataclass(frozen=True)
class InterfaceConfig:
    delta_t: float = 4.3e-9
    theta_fwd: float = 0.35 * math.pi
    theta_back: float = 0.0845 * math.pi
    polarizer_angle: float = 45.0
    transmission_short: float = 1.0
    transmission_long: float = 1.0

    def __post_init__(self):
        if not self.delta_t > 0:
            raise InvalidParameter("delta_t", f"must be > 0, got {self.delta_t}")
        for name in ("transmission_short", "transmission_long"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidParameter(name, f"must lie in [0, 1], got {value}")
        for name in ("theta_fwd", "theta_back", "polarizer_angle"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParameter(name, "must be finite")

    @property
    def sigma(self) -> float:
        """Pair phase added to the ``|ll>`` term by the forward pass."""
        return 2.0 * self.theta_fwd

    def forward_filter(self) -> np.ndarray:
        """Single-photon forward map (H, V) -> (e, l), including polarizer and path losses."""
        a = math.radians(self.polarizer_angle)
        return np.diag([
            math.cos(a) * math.sqrt(self.transmission_short),
            math.sin(a) * math.sqrt(self.transmission_long) * np.exp(1j * self.theta_fwd),
        ])

    def photon_transmission(self) -> float:
        """Survival probability of an unpolarized photon through the forward pass."""
        f = self.forward_filter()
        return float(0.5 * np.real(np.trace(f.conj().T @ f)))

    def readout_map(self, theta_back: float | None = None) -> np.ndarray:
        """(e, l) -> (H, V) map of the cross category: ``|e> -> e^{i theta}|V>``, ``|l> -> |H>``."""
        th = self.theta_back if theta_back is None else theta_back
        return np.array([[0.0, 1.0], [np.exp(1j * th), 0.0]], dtype=complex)

    def category_kraus(self) -> np.ndarray:
        """(3, 2, 2) Kraus operators of the backward pass, indexed by category."""
        ph = np.exp(1j * self.theta_back)
        k = np.zeros((3, 2, 2), dtype=complex)
        k[SHORT_SHORT, 0, 0] = 1.0
        k[CROSS] = self.readout_map()
        k[LONG_LONG, 1, 1] = ph
        return k / math.sqrt(2.0)


@dataclass(frozen=True)
class TimeBinPhoton:
    """Single photon after the forward pass (polarization fixed by the polarizer)."""

    nominal_time: float
    bin_amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.bin_amplitudes, dtype=complex).reshape(2)
        norm = np.linalg.norm(amps)
        if norm == 0:
            raise ValueError("bin amplitudes cannot both be zero")
        amps = amps / norm
        amps.setflags(write=False)
        object.__setattr__(self, "bin_amplitudes", amps)


@dataclass(frozen=True)
class BackwardPassOutcome:
    category: str
    arrival_time: float


def convert(rho_pol: TwoQubitDensity, cfg: InterfaceConfig) -> tuple[TwoQubitDensity, float]:
    """Forward pass on a photon pair.

    Returns the normalized time-bin state and the pair transmission.  With a
    45 degree polarizer and equal path transmissions the map is a unitary
    relabeling times a scalar, so concurrence is unchanged.
    """
    if rho_pol.basis_label != "polarization":
        raise ValueError(f"convert expects a polarization-basis state, got {rho_pol.basis_label!r}")
    f = np.kron(cfg.forward_filter(), cfg.forward_filter())
    out = f @ rho_pol.matrix @ f.conj().T
    transmission = float(np.real(np.trace(out)))
    if transmission <= 0:
        raise ValueError("no transmission through the interface for this state")
    out = out / transmission
    return TwoQubitDensity(0.5 * (out + out.conj().T), "timebin"), transmission


def convert_stack(states: np.ndarray, cfg: InterfaceConfig) -> np.ndarray:
    """Vectorized :func:`convert` for an (N, 4, 4) stack; returns normalized states."""
    f = np.kron(cfg.forward_filter(), cfg.forward_filter())
    out = f @ states @ f.conj().T
    tr = np.real(np.trace(out, axis1=-2, axis2=-1))
    return out / tr[..., None, None]


def category_probabilities(bin_amplitudes) -> np.ndarray:
    """Arrival-category probabilities for a photon with (e, l) amplitudes."""
    amps = np.asarray(bin_amplitudes, dtype=complex)
    pe, pl = np.abs(amps) ** 2 / np.sum(np.abs(amps) ** 2)
    return np.array([0.5 * pe, 0.5, 0.5 * pl])


def backward_pass_category(photon: TimeBinPhoton, cfg: InterfaceConfig,
                           rng: np.random.Generator) -> BackwardPassOutcome:
    """Sample the arrival category of one photon on the return pass."""
    probs = category_probabilities(photon.bin_amplitudes)
    c = int(rng.choice(3, p=probs))
    return BackwardPassOutcome(CATEGORIES[c], photon.nominal_time + c * cfg.delta_t)


def sample_pair_categories(rho_tb: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Jointly sample both photons' categories for a stack of time-bin pair states.

    Category probabilities depend only on the bin populations:
    ``K_ss^+K_ss = |e><e|/2``, ``K_x^+K_x = I/2``, ``K_ll^+K_ll = |l><l|/2``.
    """
    pops = np.real(np.diagonal(rho_tb, axis1=-2, axis2=-1)).reshape(-1, 2, 2)  # [n, bin1, bin2]
    weight = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]) * 0.5  # [category, bin]
    joint = np.einsum("ia,jb,nab->nij", weight, weight, pops).reshape(-1, 9)
    joint = np.clip(joint, 0.0, None)
    cdf = np.cumsum(joint, axis=1)
    cdf /= cdf[:, -1:]
    u = rng.random(joint.shape[0])
    idx = np.minimum((u[:, None] > cdf).sum(axis=1), 8)
    return idx // 3, idx % 3


def sample_single_categories(n: int, rng: np.random.Generator) -> np.ndarray:
    """Categories for photons with no partner (reduced state I/2): 1/4, 1/2, 1/4."""
    return rng.choice(3, size=n, p=[0.25, 0.5, 0.25])


def conditional_pair_states(rho_tb: np.ndarray, c1: np.ndarray, c2: np.ndarray,
                            cfg: InterfaceConfig) -> np.ndarray:
    """Normalized polarization states after the return pass given both categories."""
    k = cfg.category_kraus()
    kk = np.einsum("nab,ncd->nacbd", k[c1], k[c2]).reshape(-1, 4, 4)
    out = kk @ rho_tb @ np.conj(np.swapaxes(kk, -1, -2))
    tr = np.real(np.trace(out, axis1=-2, axis2=-1))
    return out / tr[:, None, None]


def single_photon_readout(category: np.ndarray) -> np.ndarray:
    """Polarization state of an unpartnered photon (reduced state I/2) per category."""
    out = np.zeros(np.shape(category) + (2, 2), dtype=complex)
    out[category == SHORT_SHORT] = np.diag([1.0, 0.0])
    out[category == CROSS] = np.eye(2) / 2
    out[category == LONG_LONG] = np.diag([0.0, 1.0])
    return out


def effective_timebin_projector(a: AnalyzerLike, b: AnalyzerLike, cfg: InterfaceConfig | None = None,
                                theta_back: float | None = None) -> TwoQubitDensity:
    """Time-bin operator measured by polarization analyzers ``a, b`` in the cross category."""
    cfg = cfg or InterfaceConfig()
    w = cfg.readout_map(theta_back)
    pa = analyzer(a).projector()
    pb = analyzer(b).projector()
    ea = w.conj().T @ pa @ w
    eb = w.conj().T @ pb @ w
    return TwoQubitDensity(np.kron(ea, eb), "timebin")
