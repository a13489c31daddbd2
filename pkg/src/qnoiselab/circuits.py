"""Noisy unprotected circuits: exact simulation, propagated error, Ising masks,
commutator diagnostics and the rate / repetition experiments."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.stats import linregress

from .channels import (
    CollapseProfile,
    ErrorMaskDistribution,
    QuantumChannel,
    SUPEROP_CAP,
    _decode_matrix,
    _encode_matrix,
    channel_from_superoperator,
    collapse_profile_channel,
    identity_channel,
    iid_depolarizing,
    simple_error_channel,
    superoperator_matrix,
    unitary_superoperator,
)
from .states import (
    DEFAULT_STATE_CAP,
    DensityOperator,
    PureState,
    QubitRegister,
    apply_local_matrix,
    haar_unitary,
    trace_distance_matrix,
)

UNITARY_TOL = 1e-10
SCHEMA_VERSION = 1


class CircuitError(ValueError):
    pass


@dataclass(frozen=True)
class Gate:
    qubits: tuple
    unitary: np.ndarray

    def __post_init__(self):
        q = tuple(int(i) for i in self.qubits)
        u = np.array(self.unitary, dtype=complex)
        if not 1 <= len(q) <= 2 or len(set(q)) != len(q):
            raise CircuitError(f"gates act on one or two distinct qubits, got {q}")
        if u.shape != (2 ** len(q),) * 2:
            raise CircuitError(f"gate on {len(q)} qubit(s) needs a {2 ** len(q)}x{2 ** len(q)} matrix")
        if np.max(np.abs(u @ u.conj().T - np.eye(u.shape[0]))) > UNITARY_TOL:
            raise CircuitError("gate matrix is not unitary")
        u.setflags(write=False)
        object.__setattr__(self, "qubits", q)
        object.__setattr__(self, "unitary", u)


@dataclass(frozen=True)
class Circuit:
    n: int
    layers: tuple = ()

    def __post_init__(self):
        layers = tuple(tuple(layer) for layer in self.layers)
        for i, layer in enumerate(layers):
            seen: set = set()
            for g in layer:
                if seen & set(g.qubits):
                    raise CircuitError(f"layer {i} has overlapping gates")
                if max(g.qubits) >= self.n:
                    raise CircuitError(f"gate on qubit {max(g.qubits)} outside a {self.n}-qubit register")
                seen |= set(g.qubits)
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def register(self) -> QubitRegister:
        return QubitRegister.of(self.n)

    def layer_unitary(self, i: int) -> np.ndarray:
        u = np.eye(2**self.n, dtype=complex)
        for g in self.layers[i]:
            u = apply_local_matrix(g.unitary, u, self.n, g.qubits, side="left")
        return u

    def unitary(self) -> np.ndarray:
        u = np.eye(2**self.n, dtype=complex)
        for i in range(self.depth):
            u = self.layer_unitary(i) @ u
        return u

    def interaction_edges(self) -> set:
        return {tuple(sorted(g.qubits)) for layer in self.layers for g in layer if len(g.qubits) == 2}

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "n": self.n,
            "layers": [
                [{"qubits": list(g.qubits), "unitary": _encode_matrix(g.unitary)} for g in layer]
                for layer in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Circuit":
        layers = [
            [Gate(tuple(g["qubits"]), _decode_matrix(g["unitary"])) for g in layer]
            for layer in doc["layers"]
        ]
        return cls(int(doc["n"]), layers)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "Circuit":
        return cls.from_dict(json.loads(text))


def random_circuit(n: int, depth: int, entangling_fraction: float = 0.5, seed=None) -> Circuit:
    """Layers of Haar-random gates on a random disjoint matching covering every qubit.

    Walking a random qubit order, each still-unpaired qubit starts a
    two-qubit gate with the next one with probability ``entangling_fraction``.
    """
    if n < 1 or depth < 0:
        raise CircuitError("need n >= 1 and depth >= 0")
    if not 0 <= entangling_fraction <= 1:
        raise CircuitError("entangling fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    layers = []
    for _ in range(depth):
        order = list(rng.permutation(n))
        layer = []
        while order:
            q = order.pop(0)
            if order and rng.random() < entangling_fraction:
                r = order.pop(0)
                layer.append(Gate((q, r), haar_unitary(4, rng)))
            else:
                layer.append(Gate((q,), haar_unitary(2, rng)))
        layers.append(layer)
    return Circuit(n, layers)


def empty_circuit(n: int, depth: int) -> Circuit:
    return Circuit(n, [[] for _ in range(depth)])


# ---------------------------------------------------------------------------
# noise models

NOISE_KINDS = ("iid-depolarizing", "simple", "collapse-profile", "ising-graph", "none")


@dataclass
class NoiseModel:
    kind: str
    params: dict = field(default_factory=dict)
    placement: str = "after-each-layer"

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise CircuitError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if self.kind == "iid-depolarizing" and not 0 <= self.params.get("t", -1) <= 1:
            raise CircuitError("iid-depolarizing needs 0 <= t <= 1")

    @classmethod
    def iid(cls, t: float):
        return cls("iid-depolarizing", {"t": float(t)})

    @classmethod
    def simple(cls, dist: ErrorMaskDistribution):
        return cls("simple", {"distribution": dist})

    @classmethod
    def profile(cls, profile: CollapseProfile):
        return cls("collapse-profile", {"profile": profile})

    def channel(self, register: QubitRegister | int) -> QuantumChannel:
        if isinstance(register, int):
            register = QubitRegister.of(register)
        if self.kind == "none":
            return identity_channel(register)
        if self.kind == "iid-depolarizing":
            return iid_depolarizing(register, self.params["t"])
        if self.kind == "collapse-profile":
            return collapse_profile_channel(self.params["profile"], register)
        dist = self.params["distribution"]
        if dist.n != register.n:
            raise CircuitError(f"mask distribution on {dist.n} qubits used on {register.n}")
        return simple_error_channel(dist, register)

    def describe(self) -> dict:
        out = {"kind": self.kind, "placement": self.placement}
        for k, v in self.params.items():
            if isinstance(v, ErrorMaskDistribution):
                out[k] = v.to_dict()
            elif isinstance(v, CollapseProfile):
                out[k] = {"points": list(v.points), "weights": list(v.weights)}
            else:
                out[k] = v
        return out


def ising_mask_distribution(
    n: int,
    couplings: Mapping[tuple, float],
    fields: Sequence[float] | None = None,
    base_rate: float | None = None,
) -> tuple[ErrorMaskDistribution, np.ndarray]:
    """D(x) proportional to exp(sum_ij J_ij x_i x_j + sum_i h_i x_i) over 0-1 masks.

    When ``base_rate`` is given, a common shift of the fields is found by
    bracketing root search so the mean per-qubit rate matches it within 1e-6.
    Returns the table and the fields actually used.
    """
    if n > ErrorMaskDistribution.MAX_N:
        raise CircuitError(f"Ising mask tables are capped at n={ErrorMaskDistribution.MAX_N}")
    h0 = np.zeros(n) if fields is None else np.asarray(fields, dtype=float)
    masks = np.array(list(itertools.product((0, 1), repeat=n)), dtype=float)
    energy = np.zeros(len(masks))
    for (i, j), jij in couplings.items():
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise CircuitError(f"bad coupling edge {(i, j)}")
        energy += jij * masks[:, i] * masks[:, j]
    weight = masks.sum(axis=1)

    def table_for(shift):
        logp = energy + masks @ (h0 + shift)
        logp -= logp.max()
        p = np.exp(logp)
        return p / p.sum()

    shift = 0.0
    if base_rate is not None:
        if not 0 < base_rate < 1:
            raise CircuitError("base rate must lie strictly between 0 and 1")
        span = 40.0 + sum(abs(v) for v in couplings.values()) + float(np.abs(h0).sum())
        g = lambda s: float(table_for(s) @ weight) / n - base_rate
        if g(-span) > 0 or g(span) < 0:
            raise CircuitError("base rate cannot be reached by shifting the fields")
        shift = brentq(g, -span, span, xtol=1e-13, rtol=1e-14)
    return ErrorMaskDistribution(table_for(shift).reshape((2,) * n)), h0 + shift


def ising_noise(n, couplings, fields=None, base_rate=None) -> NoiseModel:
    dist, h = ising_mask_distribution(n, couplings, fields, base_rate)
    return NoiseModel(
        "ising-graph",
        {
            "distribution": dist,
            "couplings": {f"{i}-{j}": v for (i, j), v in couplings.items()},
            "fields": h.tolist(),
            "base_rate": base_rate,
        },
    )


def circuit_interaction_graph(circuit: Circuit) -> set:
    return circuit.interaction_edges()


def ising_noise_from_circuit(circuit: Circuit, imperfection: Mapping[tuple, float], base_rate: float, default_coupling=0.0) -> NoiseModel:
    """Ising mask noise whose graph is the circuit's two-qubit gate graph.

    ``imperfection`` maps an edge to its coupling; edges missing from the
    map get ``default_coupling``.
    """
    couplings = {}
    for e in sorted(circuit.interaction_edges()):
        couplings[e] = imperfection.get(e, imperfection.get(e[::-1], default_coupling))
    return ising_noise(circuit.n, couplings, None, base_rate)


# ---------------------------------------------------------------------------
# simulation

@dataclass
class Trajectory:
    ideal: list
    noisy: list
    distances: list

    @property
    def depth(self) -> int:
        return len(self.ideal) - 1


def _noise_channel(noise, register):
    if noise is None:
        return None
    if isinstance(noise, QuantumChannel):
        return noise
    return noise.channel(register)


def simulate(circuit: Circuit, noise=None, input_state: PureState | None = None, cap: int = DEFAULT_STATE_CAP) -> Trajectory:
    """Exact evolution of the ideal pure state and the noisy density matrix side by side."""
    n = circuit.n
    if n > cap:
        raise CircuitError(f"state simulation capped at n={cap}")
    reg = circuit.register
    psi = (input_state or PureState.basis([0] * n, reg)).amplitudes
    sigma = np.outer(psi, psi.conj())
    channel = _noise_channel(noise, reg)
    ideal = [PureState(reg, psi)]
    noisy = [DensityOperator(reg, sigma)]
    dists = [0.0]
    for layer in circuit.layers:
        for g in layer:
            psi = apply_local_matrix(g.unitary, psi, n, g.qubits)
            sigma = apply_local_matrix(g.unitary, sigma, n, g.qubits)
        if channel is not None:
            sigma = channel._apply_matrix(sigma)
        sigma = (sigma + sigma.conj().T) / 2
        ideal.append(PureState(reg, psi / np.linalg.norm(psi)))
        noisy.append(DensityOperator(reg, sigma))
        dists.append(trace_distance_matrix(np.outer(psi, psi.conj()), sigma))
    return Trajectory(ideal, noisy, dists)


def monte_carlo_trajectories(circuit: Circuit, channel: QuantumChannel, psi0: np.ndarray, shots: int, rng) -> np.ndarray:
    """Quantum-trajectory unravelling: sample one Kraus branch per layer with the Born weights.

    Returns the final normalized state vectors, shape (shots, 2^n).
    """
    rng = np.random.default_rng(rng)
    n = circuit.n
    layers = [circuit.layer_unitary(i) for i in range(circuit.depth)]
    kraus = np.array(channel.kraus)
    out = np.empty((shots, 2**n), dtype=complex)
    for s in range(shots):
        psi = np.asarray(psi0, dtype=complex)
        for u in layers:
            branches = kraus @ (u @ psi)
            w = np.einsum("ki,ki->k", branches.conj(), branches).real
            k = rng.choice(len(w), p=w / w.sum())
            psi = branches[k] / math.sqrt(w[k])
        out[s] = psi
    return out


def accumulated_error_channel(circuit: Circuit, noise=None, cap: int = SUPEROP_CAP) -> QuantumChannel:
    """E_eff with superoperator S_noisy S_ideal^{-1}: the propagated error of the whole run."""
    n = circuit.n
    if n > cap:
        raise CircuitError(f"superoperator extraction capped at n={cap}")
    reg = circuit.register
    channel = _noise_channel(noise, reg)
    d2 = 4**n
    if channel is None or circuit.depth == 0:
        return identity_channel(reg)
    s_noise = superoperator_matrix(channel, cap)
    s_noisy = np.eye(d2, dtype=complex)
    u_total = np.eye(2**n, dtype=complex)
    for i in range(circuit.depth):
        u = circuit.layer_unitary(i)
        s_noisy = s_noise @ unitary_superoperator(u) @ s_noisy
        u_total = u @ u_total
    s_eff = s_noisy @ unitary_superoperator(u_total).conj().T
    eff = channel_from_superoperator(s_eff, reg, provenance={"constructor": "accumulated_error", "depth": circuit.depth})
    eff.check_trace_preserving(1e-8)
    return eff


# ---------------------------------------------------------------------------
# commutator diagnostics

def commutator_diagnostic(channel: QuantumChannel, u: np.ndarray, cap: int = SUPEROP_CAP) -> float:
    """||E' U' - U' E'||_HS with E' the unit-HS-norm superoperator and U' = U (x) conj(U)."""
    s = superoperator_matrix(channel, cap)
    s = s / np.linalg.norm(s)
    su = unitary_superoperator(u)
    return float(np.linalg.norm(s @ su - su @ s))


def rank_one_commutator(dim: int, rng) -> float:
    """||A D - D A||_HS for a Haar unitary A and a random unit-HS-norm rank-one D."""
    rng = np.random.default_rng(rng)
    a = haar_unitary(dim, rng)
    x = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    y = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    d = np.outer(x, y.conj())
    d /= np.linalg.norm(d)
    return float(np.linalg.norm(a @ d - d @ a))


def stabilizing_unitary(rho, rng, tol: float = 1e-9) -> np.ndarray:
    """Random U with U rho U^dagger = rho: block-Haar inside the eigenspaces of rho."""
    rng = np.random.default_rng(rng)
    m = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho)
    lam, vec = np.linalg.eigh(m)
    blocks = []
    start = 0
    for i in range(1, len(lam) + 1):
        if i == len(lam) or lam[i] - lam[start] > tol:
            blocks.append((start, i))
            start = i
    inner = np.zeros((len(lam), len(lam)), dtype=complex)
    for a, b in blocks:
        inner[a:b, a:b] = haar_unitary(b - a, rng)
    return vec @ inner @ vec.conj().T


def stabilizer_commutation_sweep(rho, channels: Mapping[str, QuantumChannel], seed=0, samples: int = 20, alpha: float = 0.1) -> dict:
    """Commutator diagnostics of each channel against random unitaries that stabilize ``rho``."""
    if rho.n > 4:
        raise CircuitError("stabilizer sweep is capped at n=4")
    rng = np.random.default_rng(seed)
    us = [stabilizing_unitary(rho, rng) for _ in range(samples)]
    bound = (1 - alpha) * math.sqrt(2)
    report = {"alpha": alpha, "bound": bound, "samples": samples, "channels": {}}
    for name, ch in channels.items():
        vals = [commutator_diagnostic(ch, u) for u in us]
        report["channels"][name] = {
            "values": vals,
            "max": max(vals),
            "mean": float(np.mean(vals)),
            "within_bound": max(vals) <= bound,
        }
    return report


def past_future_commutators(circuit: Circuit, noise, cap: int = SUPEROP_CAP) -> list[float]:
    """Exploratory: commutator between accumulated noisy past and ideal future at each cut."""
    reg = circuit.register
    channel = _noise_channel(noise, reg)
    s_noise = superoperator_matrix(channel, cap)
    layers = [unitary_superoperator(circuit.layer_unitary(i)) for i in range(circuit.depth)]
    out = []
    past = np.eye(4**circuit.n, dtype=complex)
    for cut in range(circuit.depth):
        past = s_noise @ layers[cut] @ past
        future = np.eye(4**circuit.n, dtype=complex)
        for s in layers[cut + 1 :]:
            future = s @ future
        p = past / np.linalg.norm(past)
        out.append(float(np.linalg.norm(p @ future - future @ p)))
    return out


# ---------------------------------------------------------------------------
# experiments

def rate_scaling_experiment(
    n_values: Iterable[int],
    noise: NoiseModel,
    depth: int,
    seed=0,
    entangling_fraction: float = 0.5,
    gates: bool = True,
    input_state: str = "zeros",
) -> dict:
    """Per-layer noise displacement d(N(sigma), sigma) as a function of register size."""
    rows = []
    for n in n_values:
        if n > DEFAULT_STATE_CAP:
            raise CircuitError(f"n={n} exceeds the state cap")
        cseed = np.random.SeedSequence([int(seed), int(n)])
        circ = random_circuit(n, depth, entangling_fraction, cseed) if gates else empty_circuit(n, depth)
        reg = circ.register
        ch = noise.channel(reg)
        psi = PureState.basis([0] * n, reg).amplitudes
        sigma = np.outer(psi, psi.conj())
        incs = []
        for layer in circ.layers:
            for g in layer:
                sigma = apply_local_matrix(g.unitary, sigma, n, g.qubits)
            after = ch._apply_matrix(sigma)
            incs.append(trace_distance_matrix(after, sigma))
            sigma = after
        rows.append({
            "n": n,
            "increments": incs,
            "first_increment": incs[0] if incs else 0.0,
            "mean_increment": float(np.mean(incs)) if incs else 0.0,
        })
    fit = None
    if len(rows) >= 2:
        xs = [r["n"] for r in rows]
        ys = [r["mean_increment"] for r in rows]
        if np.ptp(ys) > 0:
            lr = linregress(xs, ys)
            fit = {"slope": float(lr.slope), "intercept": float(lr.intercept), "r2": float(lr.rvalue**2)}
        else:
            fit = {"slope": 0.0, "intercept": float(ys[0]), "r2": 1.0}
    return {"noise": noise.describe(), "depth": depth, "gates": gates, "rows": rows, "fit": fit}


def logdepth_repetition_experiment(depth: int, t: float, repetitions: int, trials: int, seed=0) -> dict:
    """All-or-nothing collapse per cycle; does at least one of R runs finish with no collapse?"""
    rng = np.random.default_rng(seed)
    successes = 0
    chunk = max(1, 2_000_000 // max(1, repetitions * max(depth, 1)))
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        if depth == 0:
            clean = np.ones((m, repetitions), dtype=bool)
        else:
            clean = (rng.random((m, repetitions, depth)) >= t).all(axis=2)
        successes += int(clean.any(axis=1).sum())
        done += m
    freq = successes / trials
    p = 1 - (1 - (1 - t) ** depth) ** repetitions
    sd = math.sqrt(p * (1 - p) / trials)
    z = (freq - p) / sd if sd > 0 else (0.0 if freq == p else math.inf)
    return {
        "depth": depth, "t": t, "repetitions": repetitions, "trials": trials,
        "frequency": freq, "analytic": p, "binomial_sd": sd, "z": z,
        "within_3sd": abs(freq - p) <= 3 * sd,
    }
