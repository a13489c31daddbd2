"""Quantum channels as Kraus families, simple collapse errors and Pauli spectra.

Three concrete shapes share one interface:

* :class:`QuantumChannel` holds an explicit Kraus list.
* :class:`ProductChannel` is a tensor product of channels on disjoint qubits.
* :class:`MixtureChannel` is a convex combination of channels.

Structured channels materialize their Kraus family lazily, so spectra and
actions of n = 10 iid channels never touch 4^n operators.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .states import (
    PAULIS,
    DensityOperator,
    QubitRegister,
    apply_local_matrix,
    as_density,
    as_labels,
    pauli_coefficients,
    pauli_matrix,
)

TP_TOL = 1e-9
MASK_TOL = 1e-12
SUPEROP_CAP = 6
KRAUS_ELEMENT_CAP = 2**26


class ChannelError(ValueError):
    pass


def _register(reg: QubitRegister | int) -> QubitRegister:
    return QubitRegister.of(reg) if isinstance(reg, int) else reg


class QuantumChannel:
    """Completely positive trace-preserving map ``rho -> sum_k A_k rho A_k^dagger``."""

    def __init__(self, register: QubitRegister | int, kraus: Iterable[np.ndarray], provenance: Mapping | None = None, check: bool = True):
        self.register = _register(register)
        ops = []
        d = self.register.dim
        for a in kraus:
            a = np.array(a, dtype=complex)
            if a.shape != (d, d):
                raise ChannelError(f"Kraus operator of shape {a.shape}, expected {(d, d)}")
            a.setflags(write=False)
            ops.append(a)
        if not ops:
            raise ChannelError("a channel needs at least one Kraus operator")
        self._kraus = tuple(ops)
        self.provenance = dict(provenance or {})
        if check:
            self.check_trace_preserving()

    @property
    def n(self) -> int:
        return self.register.n

    @property
    def dim(self) -> int:
        return self.register.dim

    @property
    def kraus(self) -> tuple[np.ndarray, ...]:
        return self._kraus

    @property
    def kraus_count(self) -> int:
        return len(self._kraus)

    def check_trace_preserving(self, tol: float = TP_TOL):
        s = sum(a.conj().T @ a for a in self.kraus)
        err = float(np.max(np.abs(s - np.eye(self.dim))))
        if err > tol:
            raise ChannelError(f"channel is not trace preserving (deviation {err:.3g})")

    # Linear action on arbitrary operators; no state validation.
    def _apply_matrix(self, m: np.ndarray) -> np.ndarray:
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for a in self.kraus:
            out += a @ m @ a.conj().T
        return out

    def _pauli_masses(self) -> np.ndarray:
        masses = np.zeros((4,) * self.n)
        for a in self.kraus:
            masses += np.abs(pauli_coefficients(a)) ** 2
        return masses

    def _weight_masses(self) -> np.ndarray:
        masses = self._pauli_masses()
        weights = _pauli_weight_grid(self.n)
        return np.bincount(weights.reshape(-1), weights=masses.reshape(-1), minlength=self.n + 1)

    def _qubit_errors(self) -> np.ndarray:
        masses = self._pauli_masses()
        out = np.empty(self.n)
        for q in range(self.n):
            out[q] = masses.sum(axis=tuple(i for i in range(self.n) if i != q))[1:].sum()
        return out

    def __call__(self, rho):
        return apply(self, rho)

    def __repr__(self):
        kind = self.provenance.get("constructor", type(self).__name__)
        return f"<{type(self).__name__} {kind} on {self.n} qubit(s)>"


def _pauli_weight_grid(n: int) -> np.ndarray:
    grid = np.zeros((4,) * n, dtype=int)
    for q in range(n):
        shape = [1] * n
        shape[q] = 4
        grid = grid + (np.arange(4) != 0).astype(int).reshape(shape)
    return grid


def _embed(op: np.ndarray, n: int, positions: Sequence[int]) -> np.ndarray:
    eye = np.eye(2**n, dtype=complex)
    return apply_local_matrix(op, eye, n, positions, side="left")


class ProductChannel(QuantumChannel):
    """Tensor product of channels acting on disjoint label sets; identity elsewhere."""

    def __init__(self, register, factors: Sequence[tuple[Sequence, QuantumChannel]], provenance=None):
        self.register = _register(register)
        self.provenance = dict(provenance or {})
        used: set = set()
        fs = []
        for labels, ch in factors:
            labels = as_labels(labels)
            if len(labels) != ch.n:
                raise ChannelError(f"factor on {ch.n} qubits placed on {len(labels)} labels")
            if used & set(labels):
                raise ChannelError(f"factors overlap on {sorted(map(str, used & set(labels)))}")
            used |= set(labels)
            fs.append((labels, tuple(self.register.positions(labels)), ch))
        self.factors = tuple(fs)

    @cached_property
    def _kraus(self):
        count = math.prod(ch.kraus_count for _, _, ch in self.factors) if self.factors else 1
        if count * self.dim**2 > KRAUS_ELEMENT_CAP:
            raise ChannelError(f"refusing to materialize {count} Kraus operators of dimension {self.dim}")
        ops = [np.eye(self.dim, dtype=complex)]
        for _, pos, ch in self.factors:
            local = [_embed(a, self.n, pos) for a in ch.kraus]
            ops = [b @ a for a in ops for b in local]
        return tuple(ops)

    @property
    def kraus_count(self):
        return math.prod(ch.kraus_count for _, _, ch in self.factors) if self.factors else 1

    def _apply_matrix(self, m):
        for _, pos, ch in self.factors:
            if isinstance(ch, (ProductChannel, MixtureChannel)):
                m = _apply_structured_local(ch, m, self.n, pos)
                continue
            out = np.zeros_like(m, dtype=complex)
            for a in ch.kraus:
                out += apply_local_matrix(a, m, self.n, pos)
            m = out
        return np.asarray(m, dtype=complex)

    def _weight_masses(self):
        f = np.array([1.0])
        for _, _, ch in self.factors:
            f = np.convolve(f, ch._weight_masses())
        out = np.zeros(self.n + 1)
        out[: f.size] = f
        return out

    def _qubit_errors(self):
        out = np.zeros(self.n)
        for _, pos, ch in self.factors:
            out[list(pos)] = ch._qubit_errors()
        return out

    def _pauli_masses(self):
        t = np.ones(())
        axis_pos: list[int] = []
        for _, pos, ch in self.factors:
            t = np.multiply.outer(t, ch._pauli_masses())
            axis_pos.extend(pos)
        for p in range(self.n):
            if p not in axis_pos:
                t = np.multiply.outer(t, np.array([1.0, 0.0, 0.0, 0.0]))
                axis_pos.append(p)
        return t.transpose([axis_pos.index(p) for p in range(self.n)])


def _apply_structured_local(ch: QuantumChannel, m, n, pos):
    """Apply a structured sub-channel living on positions ``pos`` of an n-qubit matrix."""
    if isinstance(ch, MixtureChannel):
        return sum(w * _apply_structured_local(c, m, n, pos) for w, c in ch.components)
    if isinstance(ch, ProductChannel):
        for _, sub, c in ch.factors:
            m = _apply_structured_local(c, m, n, [pos[i] for i in sub])
        return m
    out = np.zeros_like(m, dtype=complex)
    for a in ch.kraus:
        out += apply_local_matrix(a, m, n, pos)
    return out


class MixtureChannel(QuantumChannel):
    """Convex combination ``sum_i w_i E_i``; Kraus family is the union of ``sqrt(w_i) K``."""

    def __init__(self, register, components: Sequence[tuple[float, QuantumChannel]], provenance=None):
        self.register = _register(register)
        self.provenance = dict(provenance or {})
        comps = []
        for w, ch in components:
            if w < -MASK_TOL:
                raise ChannelError(f"negative mixture weight {w}")
            if ch.register != self.register:
                raise ChannelError("mixture components must share the register")
            if w > 0:
                comps.append((float(w), ch))
        if not comps:
            raise ChannelError("mixture has no positive-weight component")
        total = sum(w for w, _ in comps)
        if abs(total - 1.0) > 1e-9:
            raise ChannelError(f"mixture weights sum to {total}")
        self.components = tuple(comps)

    @cached_property
    def _kraus(self):
        count = self.kraus_count
        if count * self.dim**2 > KRAUS_ELEMENT_CAP:
            raise ChannelError(f"refusing to materialize {count} Kraus operators of dimension {self.dim}")
        return tuple(np.sqrt(w) * a for w, ch in self.components for a in ch.kraus)

    @property
    def kraus_count(self):
        return sum(ch.kraus_count for _, ch in self.components)

    def _apply_matrix(self, m):
        return sum(w * ch._apply_matrix(m) for w, ch in self.components)

    def _weight_masses(self):
        return sum(w * ch._weight_masses() for w, ch in self.components)

    def _qubit_errors(self):
        return sum(w * ch._qubit_errors() for w, ch in self.components)

    def _pauli_masses(self):
        return sum(w * ch._pauli_masses() for w, ch in self.components)


def apply(channel: QuantumChannel, rho) -> DensityOperator:
    rho = as_density(rho)
    if rho.register != channel.register:
        raise ChannelError("channel and state live on different registers")
    return DensityOperator(rho.register, channel._apply_matrix(rho.matrix))


def explicit(channel: QuantumChannel) -> QuantumChannel:
    """Plain Kraus-list copy of a structured channel."""
    return QuantumChannel(channel.register, channel.kraus, channel.provenance)


# ---------------------------------------------------------------------------
# constructors

def identity_channel(register) -> QuantumChannel:
    register = _register(register)
    return QuantumChannel(register, [np.eye(register.dim)], {"constructor": "identity"})


def unitary_channel(u: np.ndarray, register=None) -> QuantumChannel:
    u = np.asarray(u, dtype=complex)
    register = _register(register if register is not None else int(np.log2(u.shape[0])))
    return QuantumChannel(register, [u], {"constructor": "unitary"})


def _single_collapse() -> QuantumChannel:
    return QuantumChannel(1, PAULIS / 2, {"constructor": "collapse"})


def single_qubit_depolarizing(t: float) -> QuantumChannel:
    """With probability ``t`` replace the qubit by I/2."""
    if not 0 <= t <= 1:
        raise ChannelError(f"collapse probability {t} outside [0, 1]")
    ops = [np.sqrt(1 - 3 * t / 4) * PAULIS[0]] + [np.sqrt(t / 4) * p for p in PAULIS[1:]]
    return QuantumChannel(1, ops, {"constructor": "depolarizing", "t": t})


def collapse_channel(register, k) -> ProductChannel:
    """W_k: reset qubit ``k`` to the maximally mixed state."""
    register = _register(register)
    register.positions([k])
    return ProductChannel(register, [((k,), _single_collapse())], {"constructor": "collapse", "qubit": k})


def iid_depolarizing(register, t: float) -> ProductChannel:
    register = _register(register)
    single = single_qubit_depolarizing(t)
    return ProductChannel(
        register,
        [((lab,), single) for lab in register.labels],
        {"constructor": "iid_depolarizing", "t": t},
    )


def global_depolarizing(register, p: float) -> QuantumChannel:
    """rho -> (1-p) rho + p tr(rho) I/d, via the full Pauli twirl."""
    register = _register(register)
    d = register.dim
    ops = []
    for idx in itertools.product(range(4), repeat=register.n):
        coeff = np.sqrt(1 - p + p / d**2) if not any(idx) else np.sqrt(p) / d
        ops.append(coeff * pauli_matrix(idx))
    return QuantumChannel(register, ops, {"constructor": "global_depolarizing", "p": p})


def mask_channel(register, mask: Sequence[int]) -> QuantumChannel:
    """E_x: collapse exactly the qubits where ``mask`` is 1."""
    register = _register(register)
    w = _single_collapse()
    factors = [((lab,), w) for lab, bit in zip(register.labels, mask) if bit]
    return ProductChannel(register, factors, {"constructor": "mask", "mask": list(map(int, mask))})


def simple_error_channel(dist: "ErrorMaskDistribution", register=None) -> QuantumChannel:
    """E_D = sum_x D(x) E_x; masks of zero probability are dropped."""
    register = _register(register if register is not None else dist.n)
    if register.n != dist.n:
        raise ChannelError("mask length does not match the register")
    comps = [(p, mask_channel(register, x)) for x, p in dist.items() if p > 0]
    prov = {"constructor": "simple", "table": dist.to_dict()}
    if len(comps) == 1:
        ch = comps[0][1]
        ch.provenance = prov
    else:
        ch = MixtureChannel(register, comps, prov)
    ch.mask_distribution = dist
    return ch


def collapse_profile_channel(profile: "CollapseProfile", register) -> QuantumChannel:
    """E_f: draw t from the profile, then collapse each qubit independently with probability t."""
    register = _register(register)
    comps = [(w, iid_depolarizing(register, t)) for t, w in zip(profile.points, profile.weights) if w > 0]
    prov = {"constructor": "collapse_profile", "points": list(profile.points), "weights": list(profile.weights)}
    if len(comps) == 1:
        ch = comps[0][1]
        ch.provenance = prov
    else:
        ch = MixtureChannel(register, comps, prov)
    if register.n <= ErrorMaskDistribution.MAX_N:
        ch.mask_distribution = profile.mask_distribution(register.n)
    return ch


def tensor_channels(e1: QuantumChannel, e2: QuantumChannel) -> ProductChannel:
    reg = QubitRegister(e1.register.labels + e2.register.labels)
    return ProductChannel(reg, [(e1.register.labels, e1), (e2.register.labels, e2)], {"constructor": "tensor"})


def compose(e1: QuantumChannel, e2: QuantumChannel) -> QuantumChannel:
    """The channel ``rho -> e1(e2(rho))``."""
    if e1.register != e2.register:
        raise ChannelError("cannot compose channels on different registers")
    ops = [a @ b for a in e1.kraus for b in e2.kraus]
    return QuantumChannel(e1.register, ops, {"constructor": "compose"})


def remix_kraus(channel: QuantumChannel, isometry: np.ndarray) -> QuantumChannel:
    """Kraus family ``B_j = sum_i V[j, i] A_i`` for an isometry ``V`` (V^dagger V = I)."""
    v = np.asarray(isometry, dtype=complex)
    ops = np.array(channel.kraus)
    if v.shape[1] != ops.shape[0]:
        raise ChannelError("isometry width must equal the Kraus count")
    new = np.tensordot(v, ops, axes=([1], [0]))
    return QuantumChannel(channel.register, list(new), {"constructor": "remix"})


# ---------------------------------------------------------------------------
# mask distributions and collapse profiles

class ErrorMaskDistribution:
    """Explicit probability table over 0-1 masks, stored as an array of shape (2,)*n."""

    MAX_N = 12

    def __init__(self, table: np.ndarray):
        table = np.asarray(table, dtype=float)
        if table.ndim == 1:
            n = int(table.size).bit_length() - 1
            table = table.reshape((2,) * n)
        n = table.ndim
        if n < 1 or table.shape != (2,) * n:
            raise ChannelError(f"mask table must have shape (2,)*n, got {table.shape}")
        if n > self.MAX_N:
            raise ChannelError(f"explicit mask tables are capped at n={self.MAX_N}")
        if table.min() < -MASK_TOL:
            raise ChannelError(f"negative mask probability {table.min()}")
        if abs(table.sum() - 1.0) > MASK_TOL:
            raise ChannelError(f"mask probabilities sum to {table.sum()}")
        table = np.clip(table, 0.0, None)
        table.setflags(write=False)
        self.table = table

    @property
    def n(self) -> int:
        return self.table.ndim

    @classmethod
    def from_dict(cls, n: int, probs: Mapping[Sequence[int] | str, float]):
        table = np.zeros((2,) * n)
        for mask, p in probs.items():
            if isinstance(mask, str):
                mask = [int(c) for c in mask]
            table[tuple(mask)] += p
        return cls(table)

    @classmethod
    def point(cls, mask: Sequence[int]):
        return cls.from_dict(len(mask), {tuple(mask): 1.0})

    @classmethod
    def product(cls, rates: Sequence[float]):
        table = np.ones(())
        for r in rates:
            table = np.multiply.outer(table, np.array([1 - r, r]))
        return cls(table)

    @classmethod
    def all_or_nothing(cls, n: int, t: float):
        """All zeros with probability 1-t, all ones with probability t."""
        return cls.from_dict(n, {(0,) * n: 1 - t, (1,) * n: t})

    @classmethod
    def from_weight_classes(cls, q: Sequence[float]):
        """Permutation-symmetric table giving total mass ``q[k]`` to weight class k."""
        q = np.asarray(q, dtype=float)
        n = q.size - 1
        w = _mask_weight_grid(n)
        per_mask = q / np.array([math.comb(n, k) for k in range(n + 1)])
        return cls(per_mask[w])

    def items(self):
        flat = self.table.reshape(-1)
        n = self.n
        for idx in range(flat.size):
            yield tuple(int(b) for b in format(idx, f"0{n}b")), float(flat[idx])

    def to_dict(self) -> dict[str, float]:
        return {"".join(map(str, x)): p for x, p in self.items() if p > 0}

    def rate(self, k: int) -> float:
        return float(self.marginal([k]).table[1])

    def rates(self) -> np.ndarray:
        return np.array([self.rate(k) for k in range(self.n)])

    def pair_moment(self, j: int, k: int) -> float:
        return float(self.marginal([j, k]).table[1, 1])

    def correlation(self, j: int, k: int) -> float:
        return mask_correlation(self, j, k)

    def marginal(self, positions: Sequence[int]) -> "ErrorMaskDistribution":
        positions = list(positions)
        drop = tuple(i for i in range(self.n) if i not in positions)
        t = self.table.sum(axis=drop) if drop else self.table
        # axes are now in increasing original order; reorder to ``positions``
        kept = sorted(positions)
        t = np.transpose(t, [kept.index(p) for p in positions])
        return ErrorMaskDistribution(t)

    def weight_distribution(self) -> np.ndarray:
        w = _mask_weight_grid(self.n)
        return np.bincount(w.reshape(-1), weights=self.table.reshape(-1), minlength=self.n + 1)

    def tail(self, threshold: float) -> float:
        """Prob(sum x_i > threshold), strict."""
        f = self.weight_distribution()
        return float(f[np.arange(self.n + 1) > threshold].sum())

    def __repr__(self):
        return f"ErrorMaskDistribution(n={self.n})"


def _mask_weight_grid(n: int) -> np.ndarray:
    grid = np.zeros((2,) * n, dtype=int)
    for q in range(n):
        shape = [1] * n
        shape[q] = 2
        grid = grid + np.arange(2).reshape(shape)
    return grid


def mask_rate(dist: ErrorMaskDistribution, k: int) -> float:
    return dist.rate(k)


def mask_correlation(dist: ErrorMaskDistribution, j: int, k: int) -> float:
    """Pearson correlation of the events x_j = 1 and x_k = 1 (0 at degenerate marginals)."""
    if j == k:
        raise ChannelError("correlation needs two distinct qubits")
    pj, pk = dist.rate(j), dist.rate(k)
    var = pj * (1 - pj) * pk * (1 - pk)
    if var <= MASK_TOL**2:
        return 0.0
    c = (dist.pair_moment(j, k) - pj * pk) / math.sqrt(var)
    return float(min(1.0, max(-1.0, c)))


@dataclass(frozen=True)
class CollapseProfile:
    """Finite distribution f over collapse probabilities t in [0, 1]."""

    points: tuple
    weights: tuple

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        ws = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", ws)
        if len(pts) != len(ws) or not pts:
            raise ChannelError("profile needs matching, nonempty points and weights")
        if any(not 0 <= p <= 1 for p in pts):
            raise ChannelError("collapse probabilities must lie in [0, 1]")
        if any(w < 0 for w in ws) or abs(sum(ws) - 1) > 1e-12:
            raise ChannelError("profile weights must be a probability vector")

    @classmethod
    def point(cls, t: float):
        return cls((t,), (1.0,))

    @classmethod
    def all_or_nothing(cls, t: float):
        return cls((0.0, 1.0), (1 - t, t))

    def rate(self) -> float:
        """R(f): the per-qubit amount of error."""
        return float(sum(p * w for p, w in zip(self.points, self.weights)))

    def weight_distribution(self, n: int) -> np.ndarray:
        from scipy.stats import binom

        k = np.arange(n + 1)
        return sum(w * binom.pmf(k, n, p) for p, w in zip(self.points, self.weights))

    def mask_distribution(self, n: int) -> ErrorMaskDistribution:
        table = sum(w * ErrorMaskDistribution.product([p] * n).table for p, w in zip(self.points, self.weights))
        return ErrorMaskDistribution(table)


# ---------------------------------------------------------------------------
# Pauli weight spectra

@dataclass(frozen=True)
class WeightSpectrum:
    n: int
    f: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float).copy()
        if f.shape != (self.n + 1,):
            raise ChannelError(f"spectrum of length {f.shape} for n={self.n}")
        if f.min() < -1e-12:
            raise ChannelError(f"negative spectral mass {f.min()}")
        f = np.clip(f, 0.0, None)
        if abs(f.sum() - 1) > 1e-9:
            raise ChannelError(f"spectrum sums to {f.sum()}")
        f.setflags(write=False)
        object.__setattr__(self, "f", f)

    @property
    def rate(self) -> float:
        """Average amount of error per qubit, sum_w f(w) w / n."""
        return float(np.dot(self.f, np.arange(self.n + 1)) / self.n)

    @property
    def mean_weight(self) -> float:
        return float(np.dot(self.f, np.arange(self.n + 1)))

    def tail(self, w: float) -> float:
        """f(>= w)."""
        return float(self.f[np.arange(self.n + 1) >= w - 1e-12].sum())

    def pairs(self) -> list[tuple[int, float]]:
        return [(w, float(v)) for w, v in enumerate(self.f)]


def pauli_weight_spectrum(channel: QuantumChannel) -> WeightSpectrum:
    """Weight distribution f(w) = sum_{|I| = w} sum_k |tr(sigma_I A_k)/2^n|^2."""
    f = channel._weight_masses()
    if abs(f.sum() - 1) > TP_TOL:
        raise ChannelError(f"Pauli masses sum to {f.sum()}; channel is not trace preserving")
    return WeightSpectrum(channel.n, f)


def mask_weight_spectrum(dist: ErrorMaskDistribution) -> WeightSpectrum:
    """Distribution of the number of collapsed qubits |x|."""
    return WeightSpectrum(dist.n, dist.weight_distribution())


def per_qubit_error(channel: QuantumChannel, k) -> float:
    pos = channel.register.positions([k])[0]
    return float(channel._qubit_errors()[pos])


def error_rate(channel: QuantumChannel) -> float:
    return float(np.mean(channel._qubit_errors()))


# ---------------------------------------------------------------------------
# dilation and superoperators

@dataclass(frozen=True)
class Dilation:
    isometry: np.ndarray
    system: QubitRegister
    environment: QubitRegister

    @property
    def joint(self) -> QubitRegister:
        return QubitRegister(self.system.labels + self.environment.labels)

    def evolve(self, rho) -> DensityOperator:
        """V rho V^dagger on system + environment (environment starts in |0>)."""
        rho = as_density(rho)
        v = self.isometry
        return DensityOperator(self.joint, v @ rho.matrix @ v.conj().T)


def stinespring_dilation(channel: QuantumChannel, env_prefix: str = "env") -> Dilation:
    """Isometry V = sum_k A_k (x) |k>_env with the environment padded to whole qubits."""
    m = channel.kraus_count
    env_n = max(1, math.ceil(math.log2(m))) if m > 1 else 1
    d, de = channel.dim, 2**env_n
    v = np.zeros((d * de, d), dtype=complex)
    for k, a in enumerate(channel.kraus):
        v[k::de, :] = a
    env = QubitRegister(tuple(f"{env_prefix}{i}" for i in range(env_n)))
    if set(env.labels) & set(channel.register.labels):
        raise ChannelError("environment labels collide with system labels")
    return Dilation(v, channel.register, env)


def superoperator_matrix(channel: QuantumChannel, cap: int = SUPEROP_CAP) -> np.ndarray:
    """Matrix S with vec(E(rho)) = S vec(rho) for row-major vec."""
    if channel.n > cap:
        raise ChannelError(f"superoperator form capped at n={cap}")
    d = channel.dim
    s = np.zeros((d * d, d * d), dtype=complex)
    if isinstance(channel, (ProductChannel, MixtureChannel)) and channel.kraus_count > 4 * d * d:
        for j in range(d * d):
            e = np.zeros(d * d, dtype=complex)
            e[j] = 1
            s[:, j] = channel._apply_matrix(e.reshape(d, d)).reshape(-1)
        return s
    for a in channel.kraus:
        s += np.kron(a, a.conj())
    return s


def unitary_superoperator(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    return np.kron(u, u.conj())


def choi_from_superoperator(s: np.ndarray) -> np.ndarray:
    """Choi matrix J = sum_ij |i><j| (x) E(|i><j|), for row-major superoperators."""
    d = int(round(math.sqrt(s.shape[0])))
    # S[(a,b),(i,j)] = <a|E(|i><j|)|b>;  J[(i,a),(j,b)] = S[(a,b),(i,j)]
    return s.reshape(d, d, d, d).transpose(2, 0, 3, 1).reshape(d * d, d * d)


def channel_from_superoperator(s: np.ndarray, register, tol: float = 1e-12, provenance=None) -> QuantumChannel:
    register = _register(register)
    d = register.dim
    j = choi_from_superoperator(s)
    j = (j + j.conj().T) / 2
    lam, vecs = np.linalg.eigh(j)
    if lam.min() < -1e-8:
        raise ChannelError(f"superoperator is not completely positive (Choi eigenvalue {lam.min():.3g})")
    ops = []
    for val, vec in zip(lam[::-1], vecs.T[::-1]):
        if val <= tol:
            continue
        # vec indexed by (i, a): A[a, i] = sqrt(val) vec[(i, a)]
        ops.append(np.sqrt(val) * vec.reshape(d, d).T)
    return QuantumChannel(register, ops, provenance or {"constructor": "superoperator"}, check=False)


# ---------------------------------------------------------------------------
# serialization

SCHEMA_VERSION = 1


def _encode_matrix(m: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(m)]


def _decode_matrix(rows) -> np.ndarray:
    a = np.asarray(rows, dtype=float)
    return a[..., 0] + 1j * a[..., 1]


def _jsonable(x: Any):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


def channel_to_dict(channel: QuantumChannel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "n": channel.n,
        "labels": list(channel.register.labels),
        "kraus": [_encode_matrix(a) for a in channel.kraus],
        "provenance": _jsonable(channel.provenance),
    }


def channel_from_dict(doc: Mapping) -> QuantumChannel:
    labels = doc.get("labels") or list(range(doc["n"]))
    register = QubitRegister(tuple(labels))
    if register.n != doc["n"]:
        raise ChannelError("label list does not match register size")
    return QuantumChannel(register, [_decode_matrix(a) for a in doc["kraus"]], doc.get("provenance"))


def channel_to_json(channel: QuantumChannel, **kw) -> str:
    return json.dumps(channel_to_dict(channel), **kw)


def channel_from_json(text: str) -> QuantumChannel:
    return channel_from_dict(json.loads(text))
