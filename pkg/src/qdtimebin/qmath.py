"""Two-qubit linear algebra, polarization analyzers and entanglement measures.

Basis ordering is fixed to ``|00>, |01>, |10>, |11>`` where the first qubit is
the XX photon and the second the X photon.  In the polarization basis 0 = H and
1 = V; in the time-bin basis 0 = early (e) and 1 = late (l).

Circular polarization convention (global): ``R = (H + iV)/sqrt(2)`` and
``L = (H - iV)/sqrt(2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

SQRT1_2 = 1.0 / math.sqrt(2.0)

BASIS_LABELS = {
    "polarization": ("HH", "HV", "VH", "VV"),
    "timebin": ("ee", "el", "le", "ll"),
}

PHYSICAL_ATOL = 1e-9
NORM_ATOL = 1e-12

SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SPIN_FLIP = np.kron(SIGMA_Y, SIGMA_Y)


class NonPhysicalStateError(ValueError):
    """Raised when a density matrix violates Hermiticity, trace or positivity."""


def _check_basis(label: str) -> str:
    if label not in BASIS_LABELS:
        raise ValueError(f"unknown basis label {label!r}; expected one of {sorted(BASIS_LABELS)}")
    return label


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=complex, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TwoQubitState:
    """Normalized pure two-qubit state.

    The amplitudes are normalized on construction; a zero vector is rejected.
    """

    amplitudes: np.ndarray
    basis_label: str = "polarization"

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.shape != (4,):
            raise ValueError(f"expected 4 amplitudes, got shape {amps.shape}")
        if not np.all(np.isfinite(amps)):
            raise ValueError("amplitudes must be finite")
        norm = np.linalg.norm(amps)
        if norm == 0.0:
            raise ValueError("cannot normalize the zero vector")
        object.__setattr__(self, "amplitudes", _frozen(amps / norm))
        _check_basis(self.basis_label)

    def density(self) -> "TwoQubitDensity":
        a = self.amplitudes
        return TwoQubitDensity(np.outer(a, a.conj()), self.basis_label)


@dataclass(frozen=True)
class TwoQubitDensity:
    """4x4 two-qubit density matrix.

    With ``check=True`` (the default) the matrix must be Hermitian, have unit
    trace and no eigenvalue below ``-PHYSICAL_ATOL``.  Reconstruction by linear
    inversion builds instances with ``check=False``; use :attr:`is_physical`
    to inspect them.
    """

    matrix: np.ndarray
    basis_label: str = "polarization"
    check: bool = True

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (4, 4):
            raise ValueError(f"density matrix must be 4x4, got {m.shape}")
        object.__setattr__(self, "matrix", _frozen(m))
        _check_basis(self.basis_label)
        if self.check:
            problem = _physicality_problem(m)
            if problem:
                raise NonPhysicalStateError(problem)

    @property
    def is_physical(self) -> bool:
        return _physicality_problem(self.matrix) is None

    def eigenvalues(self) -> np.ndarray:
        """Ascending eigenvalues of the Hermitian part."""
        m = self.matrix
        return np.linalg.eigvalsh(0.5 * (m + m.conj().T))

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def trace_distance(self, other: "TwoQubitDensity") -> float:
        diff = self.matrix - other.matrix
        return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))

    def with_basis(self, basis_label: str) -> "TwoQubitDensity":
        return TwoQubitDensity(self.matrix, basis_label, check=self.check)

    def to_text(self) -> str:
        lines = [f"basis={self.basis_label}"]
        for row in self.matrix:
            lines.append(" ".join(_format_complex(z) for z in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, check: bool = True) -> "TwoQubitDensity":
        rows = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        if len(rows) != 5 or not rows[0].startswith("basis="):
            raise ValueError("expected a 'basis=<label>' header followed by 4 matrix rows")
        label = rows[0].split("=", 1)[1].strip()
        matrix = np.array([[complex(tok) for tok in row.split()] for row in rows[1:]])
        return cls(matrix, label, check=check)


def _format_complex(z: complex) -> str:
    # shortest repr that round-trips exactly through complex()
    return f"{float(z.real)!r}{float(z.imag):+}j"


def _physicality_problem(m: np.ndarray) -> str | None:
    if not np.all(np.isfinite(m)):
        return "matrix has non-finite entries"
    herm_err = float(np.max(np.abs(m - m.conj().T)))
    if herm_err > PHYSICAL_ATOL:
        return f"matrix is not Hermitian (max deviation {herm_err:.3g})"
    tr = complex(np.trace(m))
    if abs(tr - 1.0) > PHYSICAL_ATOL:
        return f"trace is {tr.real:.12g}, expected 1"
    lam_min = float(np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0])
    if lam_min < -PHYSICAL_ATOL:
        return f"negative eigenvalue {lam_min:.3g}"
    return None


@dataclass(frozen=True)
class Analyzer:
    label: str
    jones: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "jones", _frozen(np.asarray(self.jones, dtype=complex).reshape(2)))

    def projector(self) -> np.ndarray:
        return np.outer(self.jones, self.jones.conj())


ANALYZERS = {
    "H": Analyzer("H", [1.0, 0.0]),
    "V": Analyzer("V", [0.0, 1.0]),
    "D": Analyzer("D", [SQRT1_2, SQRT1_2]),
    "A": Analyzer("A", [SQRT1_2, -SQRT1_2]),
    "R": Analyzer("R", [SQRT1_2, 1j * SQRT1_2]),
    "L": Analyzer("L", [SQRT1_2, -1j * SQRT1_2]),
}

AnalyzerLike = Union[Analyzer, str]


def analyzer(a: AnalyzerLike) -> Analyzer:
    if isinstance(a, Analyzer):
        return a
    try:
        return ANALYZERS[a]
    except KeyError:
        raise ValueError(f"unknown analyzer label {a!r}; expected one of {''.join(ANALYZERS)}") from None


def bell_state(phase: float, basis_label: str = "polarization") -> TwoQubitState:
    """``(|00> + exp(i*phase)|11>)/sqrt(2)``."""
    if not math.isfinite(phase):
        raise ValueError("phase must be finite")
    return TwoQubitState([SQRT1_2, 0.0, 0.0, SQRT1_2 * np.exp(1j * phase)], basis_label)


def projector_matrix(a: AnalyzerLike, b: AnalyzerLike) -> np.ndarray:
    return np.kron(analyzer(a).projector(), analyzer(b).projector())


def projector(a: AnalyzerLike, b: AnalyzerLike) -> TwoQubitDensity:
    """Rank-1 projector ``|a><a| (x) |b><b|`` (first analyzer acts on the XX photon)."""
    return TwoQubitDensity(projector_matrix(a, b))


def werner(p: float, phase: float = 0.0, basis_label: str = "polarization") -> TwoQubitDensity:
    """``p |bell(phase)><bell(phase)| + (1 - p) I/4``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"Werner weight p={p} outside [0, 1]")
    bell = bell_state(phase, basis_label).density().matrix
    return TwoQubitDensity(p * bell + (1.0 - p) * np.eye(4) / 4.0, basis_label)


def _require_physical(rho: TwoQubitDensity) -> np.ndarray:
    problem = _physicality_problem(rho.matrix)
    if problem:
        raise NonPhysicalStateError(problem)
    return rho.matrix


def fidelity(rho: TwoQubitDensity, psi: TwoQubitState) -> float:
    """``<psi|rho|psi>``."""
    m = _require_physical(rho)
    a = psi.amplitudes
    value = complex(a.conj() @ m @ a)
    return float(min(1.0, max(0.0, value.real)))


def concurrence(rho: TwoQubitDensity) -> float:
    """Two-qubit concurrence via the spin-flipped state.

    With ``rho = X X^+`` (``X = V sqrt(w)`` from the eigendecomposition), the
    square roots ``lambda_i`` of the eigenvalues of ``rho (sy x sy) rho*
    (sy x sy)`` are the singular values of ``X^+ (sy x sy) X*``.  This is the
    Hermitian similarity ``sqrt(rho) rho~ sqrt(rho)`` in factored form; it
    avoids square roots of round-off eigenvalues, so pure states give C to
    machine precision.
    """
    m = _require_physical(rho)
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    x = v * np.sqrt(np.clip(w, 0.0, None))
    lam = np.linalg.svd(x.conj().T @ SPIN_FLIP @ x.conj(), compute_uv=False)
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def is_unitary(u: np.ndarray, atol: float = 1e-10) -> bool:
    u = np.asarray(u, dtype=complex)
    return u.ndim == 2 and u.shape[0] == u.shape[1] and np.allclose(u @ u.conj().T, np.eye(u.shape[0]), atol=atol)


def relabel_basis(rho: TwoQubitDensity, mapping: np.ndarray, basis_label: str | None = None) -> TwoQubitDensity:
    """Conjugate ``rho`` by a unitary basis map.

    ``mapping`` is either a 2x2 single-qubit unitary applied to both photons or
    a full 4x4 unitary.  The result carries ``basis_label`` (default: unchanged).
    """
    u = np.asarray(mapping, dtype=complex)
    if u.shape == (2, 2):
        u = np.kron(u, u)
    if u.shape != (4, 4) or not is_unitary(u):
        raise ValueError("basis map must be a 2x2 or 4x4 unitary")
    out = u @ rho.matrix @ u.conj().T
    return TwoQubitDensity(out, basis_label or rho.basis_label, check=rho.check)


def swap_hv() -> np.ndarray:
    return np.array([[0, 1], [1, 0]], dtype=complex)


def random_density(rng: np.random.Generator, rank: int = 4, basis_label: str = "polarization") -> TwoQubitDensity:
    """Random state from the induced (Ginibre) measure."""
    g = rng.normal(size=(4, rank)) + 1j * rng.normal(size=(4, rank))
    m = g @ g.conj().T
    return TwoQubitDensity(m / np.trace(m).real, basis_label)


def random_local_unitary(rng: np.random.Generator) -> np.ndarray:
    def haar2():
        z = (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))) / math.sqrt(2)
        q, r = np.linalg.qr(z)
        d = np.diag(r)
        return q * (d / np.abs(d))

    return np.kron(haar2(), haar2())
