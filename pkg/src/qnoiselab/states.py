"""Dense density-matrix substrate for small labeled qubit registers.

Tensor ordering: the qubit at position ``p`` of ``register.labels`` is the
``p``-th Kronecker factor (position 0 is the leftmost / most significant
factor).  Every subset operation addresses qubits by label; raw axis
arithmetic stays inside this module.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_TOL = 1e-9
NORM_TOL = 1e-10
DEFAULT_STATE_CAP = 12

PAULIS = np.array(
    [
        [[1, 0], [0, 1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)


class QuantumStateError(ValueError):
    """Raised when a state or register violates its invariants."""


class LabelCollisionError(QuantumStateError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class QubitRegister:
    labels: tuple

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 1:
            raise QuantumStateError("a register needs at least one qubit")
        if len(set(labels)) != len(labels):
            raise LabelCollisionError(f"duplicate labels in {labels}")

    @classmethod
    def of(cls, n: int) -> "QubitRegister":
        return cls(tuple(range(n)))

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return 2**self.n

    def positions(self, labels: Iterable[Hashable]) -> list[int]:
        """Positions of ``labels`` in this register, in the order given."""
        out = []
        for lab in labels:
            try:
                out.append(self.labels.index(lab))
            except ValueError:
                raise QuantumStateError(f"unknown qubit label {lab!r}") from None
        return out

    def sub(self, labels: Iterable[Hashable]) -> "QubitRegister":
        """Sub-register holding ``labels`` in register order."""
        keep = set(labels)
        self.positions(keep)
        return QubitRegister(tuple(lab for lab in self.labels if lab in keep))

    def __len__(self):
        return self.n


def as_labels(x) -> tuple:
    """Normalize a single label or a collection of labels to a tuple."""
    if isinstance(x, (list, tuple, set, frozenset)):
        return tuple(x)
    return (x,)


@dataclass(frozen=True)
class PureState:
    register: QubitRegister
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _frozen(np.asarray(self.amplitudes).reshape(-1))
        if amps.shape != (self.register.dim,):
            raise QuantumStateError(
                f"expected {self.register.dim} amplitudes, got {amps.shape[0]}"
            )
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > NORM_TOL:
            raise QuantumStateError(f"state norm^2 is {norm}, not 1")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_vector(cls, vec, register: QubitRegister | None = None, normalize=False):
        vec = np.asarray(vec, dtype=complex).reshape(-1)
        if register is None:
            register = QubitRegister.of(_nqubits(vec.shape[0]))
        if normalize:
            vec = vec / np.linalg.norm(vec)
        return cls(register, vec)

    @classmethod
    def basis(cls, bits: Sequence[int], register: QubitRegister | None = None):
        register = register or QubitRegister.of(len(bits))
        vec = np.zeros(register.dim, dtype=complex)
        vec[int("".join(str(b) for b in bits), 2)] = 1.0
        return cls(register, vec)

    def density(self) -> "DensityOperator":
        return DensityOperator(self.register, np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True)
class DensityOperator:
    register: QubitRegister
    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix)
        d = self.register.dim
        if m.shape != (d, d):
            raise QuantumStateError(f"expected {d}x{d} matrix, got {m.shape}")
        if np.max(np.abs(m - m.conj().T)) > HERMITIAN_TOL:
            raise QuantumStateError("density matrix is not Hermitian")
        tr = np.trace(m).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise QuantumStateError(f"density matrix has trace {tr}")
        lam_min = np.linalg.eigvalsh(m)[0]
        if lam_min < -PSD_TOL:
            raise QuantumStateError(f"density matrix has eigenvalue {lam_min}")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_matrix(cls, m, register: QubitRegister | None = None):
        m = np.asarray(m, dtype=complex)
        register = register or QubitRegister.of(_nqubits(m.shape[0]))
        return cls(register, m)

    @classmethod
    def maximally_mixed(cls, register: QubitRegister | int):
        if isinstance(register, int):
            register = QubitRegister.of(register)
        return cls(register, np.eye(register.dim) / register.dim)

    @property
    def n(self) -> int:
        return self.register.n

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


def _nqubits(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 2 or 2**n != dim:
        raise QuantumStateError(f"dimension {dim} is not a power of two >= 2")
    return n


def as_density(state) -> DensityOperator:
    if isinstance(state, DensityOperator):
        return state
    if isinstance(state, PureState):
        return state.density()
    raise TypeError(f"expected a PureState or DensityOperator, got {type(state).__name__}")


def tensor_product(a, b) -> DensityOperator:
    """Kronecker product of two states on disjoint registers."""
    a, b = as_density(a), as_density(b)
    common = set(a.register.labels) & set(b.register.labels)
    if common:
        raise LabelCollisionError(f"registers share labels {sorted(map(str, common))}")
    reg = QubitRegister(a.register.labels + b.register.labels)
    return DensityOperator(reg, np.kron(a.matrix, b.matrix))


def partial_trace_matrix(m: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Reduce ``m`` on subsystems of sizes ``dims`` to the positions ``keep``.

    Kept subsystems appear in the order of ``keep``.
    """
    k = len(dims)
    t = np.asarray(m).reshape(tuple(dims) * 2)
    keep = list(keep)
    drop = [i for i in range(k) if i not in keep]
    row = list(range(k))
    col = [i + k for i in range(k)]
    for i in drop:
        col[i] = row[i]
    out = [row[i] for i in keep] + [col[i] for i in keep]
    dk = int(np.prod([dims[i] for i in keep])) if keep else 1
    return np.einsum(t, row + col, out).reshape(dk, dk)


def partial_trace(rho, keep) -> DensityOperator:
    """Reduced state on the labels in ``keep`` (result in register order)."""
    rho = as_density(rho)
    keep = as_labels(keep)
    if len(keep) == 0:
        raise QuantumStateError("partial trace needs a nonempty set of qubits to keep")
    sub = rho.register.sub(keep)
    pos = rho.register.positions(sub.labels)
    m = partial_trace_matrix(rho.matrix, [2] * rho.n, pos)
    return DensityOperator(sub, m)


def entropy_of_spectrum(lam: np.ndarray) -> float:
    lam = np.asarray(lam, dtype=float)
    if lam.size and lam.min() < -PSD_TOL:
        raise QuantumStateError(f"negative eigenvalue {lam.min()} beyond tolerance")
    lam = lam[lam > 0]
    return float(max(0.0, -np.sum(lam * np.log2(lam))))


def matrix_entropy(m: np.ndarray) -> float:
    """Von Neumann entropy in bits of a raw Hermitian PSD matrix."""
    return entropy_of_spectrum(np.linalg.eigvalsh(m))


def von_neumann_entropy(rho) -> float:
    return matrix_entropy(as_density(rho).matrix)


def trace_distance_matrix(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(a - b))))


def trace_distance(rho, sigma) -> float:
    rho, sigma = as_density(rho), as_density(sigma)
    if rho.register != sigma.register:
        raise QuantumStateError("trace distance needs states on the same register")
    return trace_distance_matrix(rho.matrix, sigma.matrix)


def pauli_matrix(index: Sequence[int]) -> np.ndarray:
    """Tensor product of single-qubit Paulis, 0=I, 1=X, 2=Y, 3=Z."""
    out = np.ones((1, 1), dtype=complex)
    for i in index:
        if i not in (0, 1, 2, 3):
            raise ValueError(f"Pauli index entries must be in 0..3, got {i}")
        out = np.kron(out, PAULIS[i])
    return out


def pauli_weight(index: Sequence[int]) -> int:
    return sum(1 for i in index if i != 0)


def pauli_coefficients(m: np.ndarray) -> np.ndarray:
    """Coefficients ``tr(sigma_I m) / 2^n`` as an array of shape ``(4,) * n``.

    ``m == sum_I c[I] * pauli_matrix(I)``.
    """
    m = np.asarray(m, dtype=complex)
    n = _nqubits(m.shape[0])
    order = [ax for q in range(n) for ax in (q, n + q)]
    t = m.reshape((2,) * (2 * n)).transpose(order).reshape((4,) * n)
    # _PAULI_DUAL[i, 2r+c] = (sigma_i)[c, r] / 2
    for q in range(n):
        t = np.moveaxis(np.tensordot(_PAULI_DUAL, t, axes=([1], [q])), 0, q)
    return t


_PAULI_DUAL = np.transpose(PAULIS, (0, 2, 1)).reshape(4, 4) / 2


def haar_unitary(dim: int, rng) -> np.ndarray:
    """Haar-distributed unitary via QR of a complex Ginibre matrix (Mezzadri)."""
    rng = np.random.default_rng(rng)
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def haar_state(dim: int, rng) -> np.ndarray:
    rng = np.random.default_rng(rng)
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def random_product_state(register: QubitRegister | int, rng) -> PureState:
    """Tensor product of independent Haar-random single-qubit pure states."""
    if isinstance(register, int):
        register = QubitRegister.of(register)
    rng = np.random.default_rng(rng)
    vec = np.ones(1, dtype=complex)
    for _ in range(register.n):
        vec = np.kron(vec, haar_state(2, rng))
    return PureState(register, vec / np.linalg.norm(vec))


def random_density(register: QubitRegister | int, rng, rank: int | None = None) -> DensityOperator:
    """Random mixed state from the induced (Hilbert-Schmidt) measure."""
    if isinstance(register, int):
        register = QubitRegister.of(register)
    rng = np.random.default_rng(rng)
    d = register.dim
    k = rank or d
    g = rng.standard_normal((d, k)) + 1j * rng.standard_normal((d, k))
    m = g @ g.conj().T
    return DensityOperator(register, m / np.trace(m).real)


def random_pure_state(register: QubitRegister | int, rng) -> PureState:
    if isinstance(register, int):
        register = QubitRegister.of(register)
    return PureState(register, haar_state(register.dim, rng))


def bell_state(register: QubitRegister | None = None) -> PureState:
    return PureState.from_vector(np.array([1, 0, 0, 1]) / np.sqrt(2), register)


def ghz_state(n: int, register: QubitRegister | None = None) -> PureState:
    v = np.zeros(2**n, dtype=complex)
    v[0] = v[-1] = 1 / np.sqrt(2)
    return PureState.from_vector(v, register or QubitRegister.of(n))


def product_pure_state(vectors: Sequence[np.ndarray], register: QubitRegister | None = None) -> PureState:
    vec = np.ones(1, dtype=complex)
    for v in vectors:
        v = np.asarray(v, dtype=complex)
        vec = np.kron(vec, v / np.linalg.norm(v))
    return PureState.from_vector(vec, register)


def is_product_pure(state, tol: float = 1e-9) -> bool:
    """True when every single-qubit marginal is pure."""
    rho = as_density(state)
    for lab in rho.register.labels:
        if von_neumann_entropy(partial_trace(rho, [lab])) > tol:
            return False
    return True


def apply_local_matrix(op: np.ndarray, vec_or_mat: np.ndarray, n: int, positions: Sequence[int], *, side="both"):
    """Apply ``op`` (acting on ``positions``) to a state vector or a density matrix.

    For a matrix input ``side`` selects left multiplication, right
    multiplication by ``op^dagger``, or conjugation (``"both"``).
    """
    k = len(positions)
    opt = np.asarray(op).reshape((2,) * (2 * k))
    x = np.asarray(vec_or_mat)
    if x.ndim == 1:
        t = x.reshape((2,) * n)
        t = np.tensordot(opt, t, axes=(list(range(k, 2 * k)), list(positions)))
        t = np.moveaxis(t, list(range(k)), list(positions))
        return t.reshape(-1)
    t = x.reshape((2,) * (2 * n))
    if side in ("both", "left"):
        t = np.tensordot(opt, t, axes=(list(range(k, 2 * k)), list(positions)))
        t = np.moveaxis(t, list(range(k)), list(positions))
    if side in ("both", "right"):
        cols = [n + p for p in positions]
        t = np.tensordot(t, opt.conj(), axes=(cols, list(range(k, 2 * k))))
        t = np.moveaxis(t, list(range(2 * n - k, 2 * n)), cols)
    return t.reshape(2**n, 2**n)
