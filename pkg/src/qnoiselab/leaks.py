"""Entropy functionals: information leaks, pairwise and emergent entanglement,
max-entropy censorship, and per-cell leak-versus-entanglement diagnostics.

All entropies are in bits.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .channels import (
    ErrorMaskDistribution,
    QuantumChannel,
    apply,
    stinespring_dilation,
)
from .states import (
    DensityOperator,
    PureState,
    QuantumStateError,
    QubitRegister,
    as_density,
    as_labels,
    entropy_of_spectrum,
    is_product_pure,
    matrix_entropy,
    partial_trace,
    partial_trace_matrix,
    pauli_matrix,
    von_neumann_entropy,
)

VACUITY_THRESHOLD = 1e-6
LEAK_THRESHOLD = 1e-6
EE_COMPONENT_CAP = 16
EE_RESTARTS = 20
EE_BUDGET = 200_000
COMPLETION_TOL = 1e-6
COMPLETION_MAX_ITER = 10_000
COMPLETION_CAP = 5

_LN2 = math.log(2)


class LeakPreconditionError(QuantumStateError):
    """The reference state is not a tensor-product pure state."""


class UnsupportedChannelError(TypeError):
    pass


class CompletionError(RuntimeError):
    def __init__(self, message, dual_gap):
        super().__init__(message)
        self.dual_gap = dual_gap


def _require_product(tau):
    if not is_product_pure(tau):
        raise LeakPreconditionError("leak measures are defined against tensor-product pure states")


def leak(channel: QuantumChannel, A, tau) -> float:
    """L_E(A; tau) = S(E(tau)|_A)."""
    _require_product(tau)
    out = apply(channel, tau)
    return von_neumann_entropy(partial_trace(out, as_labels(A)))


def _leaks_from_output(out: DensityOperator, a, b):
    la = von_neumann_entropy(partial_trace(out, as_labels(a)))
    lb = von_neumann_entropy(partial_trace(out, as_labels(b)))
    lab = von_neumann_entropy(partial_trace(out, as_labels(a) + as_labels(b)))
    return la, lb, lab


def pair_leak_correlation(channel: QuantumChannel, a, b, tau) -> float:
    """EL_E(a, b; tau) = L(a) + L(b) - L({a, b})."""
    if set(as_labels(a)) & set(as_labels(b)):
        raise ValueError("leak correlation needs disjoint qubits")
    _require_product(tau)
    la, lb, lab = _leaks_from_output(apply(channel, tau), a, b)
    return la + lb - lab


def mutual_information(rho, a, b) -> float:
    rho = as_density(rho)
    sa = von_neumann_entropy(partial_trace(rho, as_labels(a)))
    sb = von_neumann_entropy(partial_trace(rho, as_labels(b)))
    sab = von_neumann_entropy(partial_trace(rho, as_labels(a) + as_labels(b)))
    return sa + sb - sab


def environment_leak(channel: QuantumChannel, A) -> float:
    """L'(A): mutual information between A and the dilation environment.

    The system starts maximally mixed on A and in |0> elsewhere; the
    environment starts in |0...0>.
    """
    A = as_labels(A)
    reg = channel.register
    reg.positions(A)
    m = np.ones((1, 1), dtype=complex)
    for lab in reg.labels:
        m = np.kron(m, np.eye(2) / 2 if lab in A else np.diag([1.0, 0.0]))
    dil = stinespring_dilation(channel)
    joint = dil.evolve(DensityOperator(reg, m))
    return mutual_information(joint, A, dil.environment.labels)


def bipartite_mutual_information(m: np.ndarray, da: int, db: int) -> float:
    """S(a) + S(b) - S(ab) of a raw (da*db)-dimensional matrix."""
    sa = matrix_entropy(partial_trace_matrix(m, [da, db], [0]))
    sb = matrix_entropy(partial_trace_matrix(m, [da, db], [1]))
    return sa + sb - matrix_entropy(m)


def ent_pair(rho, a, b) -> float:
    """ENT(rho; a, b).  ``a`` and ``b`` may be single labels or disjoint label groups (qudits)."""
    if set(as_labels(a)) & set(as_labels(b)):
        raise ValueError("ENT needs disjoint qubits")
    return mutual_information(rho, a, b)


# ---------------------------------------------------------------------------
# emergent entanglement

@dataclass
class DecompositionCandidate:
    """Pure-state decomposition ``sum_k p_k |psi_k><psi_k|`` of a two-qudit state."""

    weights: np.ndarray
    states: np.ndarray
    dims: tuple

    def reconstruct(self) -> np.ndarray:
        return np.einsum("k,ki,kj->ij", self.weights, self.states, self.states.conj())

    def ent_values(self) -> np.ndarray:
        da, db = self.dims
        out = []
        for psi in self.states:
            s = np.linalg.svd(psi.reshape(da, db), compute_uv=False) ** 2
            out.append(2 * entropy_of_spectrum(s / s.sum()))
        return np.array(out)

    def average_ent(self) -> float:
        return float(np.dot(self.weights, self.ent_values()))


@dataclass
class EmergentEntanglement:
    value: float
    candidate: DecompositionCandidate
    evaluations: int
    restarts: int
    eigen_value: float
    budget_exhausted: bool = False


def _components_value_grad(x, b, k, r, da, db):
    """Average pure-state ENT of the decomposition given by isometry polar(X), and its gradient."""
    xm = (x[: k * r] + 1j * x[k * r :]).reshape(k, r)
    w, v = np.linalg.eigh(xm.conj().T @ xm)
    w = np.maximum(w, 1e-300)
    t = (v / np.sqrt(w)) @ v.conj().T
    u = xm @ t
    psi = (u @ b.T).reshape(k, da, db)
    lu, s, lvh = np.linalg.svd(psi, full_matrices=False)
    s2 = s**2
    p = s2.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ls = np.where(s2 > 1e-300, np.log(s2), 0.0)
        lp = np.where(p > 1e-300, np.log(p), 0.0)
    # p * H(s2 / p) in nats, summed; ENT = 2 H for pure states
    value = 2 / _LN2 * float((-(s2 * ls).sum(axis=1) + p * lp).sum())
    coef = np.where(s2 > 1e-300, (lp[:, None] - ls) * s, 0.0)
    g_psi = (4 / _LN2) * np.einsum("kai,ki,kib->kab", lu, coef, lvh).reshape(k, -1)
    g_u = g_psi @ b.conj()
    # chain rule through the polar factor u = x (x^H x)^(-1/2)
    cp = v.conj().T @ (g_u.conj().T @ xm) @ v
    wi = 1 / np.sqrt(w)
    dw = w[:, None] - w[None, :]
    close = np.abs(dw) <= 1e-12 * np.maximum(w[:, None], w[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        div = np.where(close, -0.5 * w[:, None] ** -1.5, (wi[:, None] - wi[None, :]) / dw)
    rr = v @ (div * cp.T).T @ v.conj().T
    gam = g_u @ t + xm @ (rr + rr.conj().T)
    return value, np.concatenate([gam.real.ravel(), gam.imag.ravel()]), u


def _candidate_from_isometry(u, b, da, db) -> DecompositionCandidate:
    psi = u @ b.T
    p = np.sum(np.abs(psi) ** 2, axis=1)
    keep = p > 1e-14
    p, psi = p[keep], psi[keep]
    return DecompositionCandidate(p / p.sum(), psi / np.sqrt(p)[:, None], (da, db))


def emergent_entanglement(
    rho_ab,
    dims: tuple | None = None,
    *,
    budget: int = EE_BUDGET,
    restarts: int = EE_RESTARTS,
    components: int = EE_COMPONENT_CAP,
    seed=0,
) -> EmergentEntanglement:
    """Lower bound on EE(rho; a, b) = max over pure decompositions of the average ENT.

    Decompositions are parametrized by isometries acting on the eigenvector
    purification; each restart runs L-BFGS on the isometry with an exact
    gradient.  ``rho_ab`` is a two-qubit :class:`DensityOperator` or a raw
    matrix with ``dims = (da, db)``.
    """
    if isinstance(rho_ab, (DensityOperator, PureState)):
        rho = as_density(rho_ab)
        if rho.n != 2 and dims is None:
            raise ValueError("pass dims for registers other than two qubits")
        m = rho.matrix
        dims = dims or (2, 2)
    else:
        m = np.asarray(rho_ab, dtype=complex)
        dims = dims or (2, 2)
    da, db = dims
    if m.shape != (da * db, da * db):
        raise ValueError(f"state of shape {m.shape} does not match dims {dims}")
    if da * db > 16:
        raise ValueError("emergent entanglement is limited to 4x4 qudit pairs")

    lam, vec = np.linalg.eigh((m + m.conj().T) / 2)
    keep = lam > 1e-12
    lam, vec = lam[keep], vec[:, keep]
    lam = lam / lam.sum()
    r = lam.size
    b = vec * np.sqrt(lam)
    eigen = _candidate_from_isometry(np.eye(r), b, da, db)
    eigen_value = eigen.average_ent()
    best_value, best = eigen_value, eigen
    if r == 1:
        return EmergentEntanglement(best_value, best, 1, 0, eigen_value)

    k = max(r, min(components, r * r))
    rng = np.random.default_rng(seed)
    used = 0
    done = 0

    def objective(x):
        val, grad, _ = _components_value_grad(x, b, k, r, da, db)
        return -val, -grad

    starts = [np.concatenate([np.eye(k, r).ravel(), np.zeros(k * r)])]
    starts += [rng.standard_normal(2 * k * r) for _ in range(restarts)]
    for x0 in starts:
        if used >= budget:
            break
        res = minimize(
            objective,
            x0,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": 300, "maxfun": max(1, budget - used), "gtol": 1e-8, "ftol": 1e-11},
        )
        used += res.nfev
        done += 1
        val, _, u = _components_value_grad(res.x, b, k, r, da, db)
        if val > best_value:
            cand = _candidate_from_isometry(u, b, da, db)
            if np.max(np.abs(cand.reconstruct() - m)) <= 1e-8:
                best_value, best = cand.average_ent(), cand
    return EmergentEntanglement(best_value, best, used, done, eigen_value, used >= budget)


# ---------------------------------------------------------------------------
# max-entropy completion (censorship functional)

@dataclass
class Completion:
    rho_star: DensityOperator
    value: float
    entropy: float
    residual: float
    iterations: int


def _low_weight_paulis(m: int):
    idx = [I for I in itertools.product(range(4), repeat=m) if 0 < sum(1 for i in I if i) < m]
    return idx, np.array([pauli_matrix(I) for I in idx]) if idx else np.zeros((0, 2**m, 2**m))


def max_entropy_completion(rho, A=None, *, tol: float = COMPLETION_TOL, max_iter: int = COMPLETION_MAX_ITER) -> Completion:
    """Maximum-entropy state sharing every proper-subset marginal with ``rho`` on ``A``.

    Returns the completion and ENT(rho; A) = S(rho*) - S(rho|_A).  The
    completion is exp(H)/Z with H spanned by Paulis of weight < |A|; the
    dual log Z(theta) - <theta, b> is minimized by L-BFGS using its exact
    gradient <sigma_I>_theta - b_I.
    """
    rho = as_density(rho)
    if A is not None:
        rho = partial_trace(rho, as_labels(A))
    m = rho.n
    if m > COMPLETION_CAP:
        raise ValueError(f"max-entropy completion is capped at {COMPLETION_CAP} qubits")
    s_rho = von_neumann_entropy(rho)
    if m == 1:
        # only the trace is constrained
        star = DensityOperator.maximally_mixed(rho.register)
        return Completion(star, 1.0 - s_rho, 1.0, 0.0, 0)

    _, paulis = _low_weight_paulis(m)
    flat = paulis.reshape(len(paulis), -1)
    target = (flat @ rho.matrix.T.reshape(-1)).real

    def state(theta):
        h = np.tensordot(theta, paulis, axes=1)
        w, v = np.linalg.eigh(h)
        top = w.max()
        e = np.exp(w - top)
        z = e.sum()
        return (v * (e / z)) @ v.conj().T, top + math.log(z)

    def dual(theta):
        st, logz = state(theta)
        grad = (flat @ st.T.reshape(-1)).real - target
        return logz - theta @ target, grad

    res = minimize(
        dual,
        np.zeros(len(paulis)),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": 1e-14, "ftol": 0.0, "maxcor": 50},
    )
    star_m, _ = state(res.x)
    star_m = (star_m + star_m.conj().T) / 2
    residual = _marginal_residual(star_m, rho.matrix, m)
    if residual > tol:
        gap = float(np.max(np.abs(dual(res.x)[1])))
        raise CompletionError(f"max-entropy completion did not converge (marginal residual {residual:.3g})", gap)
    star = DensityOperator(rho.register, star_m)
    s_star = von_neumann_entropy(star)
    return Completion(star, s_star - s_rho, s_star, residual, int(res.nit))


def _marginal_residual(a: np.ndarray, b: np.ndarray, m: int) -> float:
    worst = 0.0
    for q in range(m):
        keep = [i for i in range(m) if i != q]
        da = partial_trace_matrix(a, [2] * m, keep)
        db = partial_trace_matrix(b, [2] * m, keep)
        worst = max(worst, float(np.max(np.abs(da - db))))
    return worst


def censorship(rho, A=None) -> float:
    """ENT(rho; A)."""
    return max_entropy_completion(rho, A).value


def tilde_ent(rho) -> float:
    """Sum of ENT(rho|_B; B) over subsets B with |B| >= 2 (singletons contribute 0)."""
    rho = as_density(rho)
    if rho.n > 4:
        raise ValueError("tilde-ENT is capped at 4 qubits")
    total = 0.0
    for size in range(2, rho.n + 1):
        for B in itertools.combinations(rho.register.labels, size):
            total += max_entropy_completion(rho, B).value
    return total


# ---------------------------------------------------------------------------
# multi-qubit leak correlation over the simple family

@dataclass
class MultiLeak:
    value: float
    leak: float
    max_leak: float
    best_table: ErrorMaskDistribution
    shift: float


def _mask_distribution_of(source) -> ErrorMaskDistribution:
    if isinstance(source, ErrorMaskDistribution):
        return source
    dist = getattr(source, "mask_distribution", None)
    if dist is None:
        raise UnsupportedChannelError("multi-qubit leak correlation needs a simple (mask-mixture) channel")
    return dist


def _masked_outputs(tau_marginals: Sequence[np.ndarray]) -> np.ndarray:
    """Output state on A for every mask x: tensor of (I/2 if x_k else tau_k)."""
    m = len(tau_marginals)
    outs = []
    for x in itertools.product((0, 1), repeat=m):
        mat = np.ones((1, 1), dtype=complex)
        for bit, t in zip(x, tau_marginals):
            mat = np.kron(mat, np.eye(2) / 2 if bit else t)
        outs.append(mat)
    return np.array(outs)


def multi_leak_correlation(source, A, tau=None, n: int | None = None) -> MultiLeak:
    """EL(A) = -L(A) + max L_{E*}(A) over simple channels whose masks agree on proper subsets of A.

    Mask tables on A that agree with D on every proper subset differ from D
    only along the parity character (-1)^{|x|}; the leak is concave along
    that line, so a bounded scalar search finds the maximum.
    """
    dist = _mask_distribution_of(source)
    register = getattr(source, "register", None) or QubitRegister.of(n or dist.n)
    A = as_labels(A)
    if len(A) > 4:
        raise ValueError("multi-qubit leak correlation is capped at |A| = 4")
    pos = register.positions(A)
    if tau is None:
        tau = PureState.basis([0] * register.n, register)
    _require_product(tau)
    marg = [partial_trace(tau, [lab]).matrix for lab in A]
    outs = _masked_outputs(marg)
    base = dist.marginal(pos).table.reshape(-1)
    m = len(A)
    parity = np.array([(-1) ** sum(x) for x in itertools.product((0, 1), repeat=m)], dtype=float)

    def leak_of(table):
        return matrix_entropy(np.tensordot(table, outs, axes=1))

    lo = -float(np.min(base[parity > 0]))
    hi = float(np.min(base[parity < 0]))
    l0 = leak_of(base)
    best_z, best = 0.0, l0
    if hi - lo > 1e-15:
        res = minimize_scalar(lambda z: -leak_of(base + z * parity), bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        for z in (res.x, lo, hi):
            val = leak_of(np.clip(base + z * parity, 0, None))
            if val > best:
                best_z, best = float(z), val
    table = np.clip(base + best_z * parity, 0, None)
    return MultiLeak(best - l0, l0, best, ErrorMaskDistribution(table / table.sum()), best_z)


# ---------------------------------------------------------------------------
# leak-versus-entanglement cells

@dataclass
class ConjectureACell:
    L_a: float
    L_b: float
    EL: float
    ENT: float
    EE: float
    ratio_plain: float | None
    ratio_scaled: float | None
    verdict: str
    thresholds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def classify_cell(L_a, L_b, EL, ENT, *, vacuity=VACUITY_THRESHOLD, leak_threshold=LEAK_THRESHOLD):
    if ENT < vacuity or min(L_a, L_b) < leak_threshold:
        return "vacuous"
    if EL <= leak_threshold:
        return "violates positivity of K"
    return "consistent"


def conjectureA_evaluate(channel, rho, tau, a, b, *, ee_seed=0, ee_budget=EE_BUDGET, ee_restarts=EE_RESTARTS) -> ConjectureACell:
    """Both sides of EL(a,b) >= K(L(a), L(b)) * ENT for one (channel, rho, tau, pair)."""
    _require_product(tau)
    out = apply(channel, tau)
    la, lb, lab = _leaks_from_output(out, a, b)
    el = la + lb - lab
    rho = as_density(rho)
    ent = ent_pair(rho, a, b)
    pair = partial_trace(rho, as_labels(a) + as_labels(b))
    if pair.n == 2:
        ee = emergent_entanglement(pair, seed=ee_seed, budget=ee_budget, restarts=ee_restarts).value
    else:
        ee = float("nan")
    verdict = classify_cell(la, lb, el, ent)
    plain = scaled = None
    if ent >= VACUITY_THRESHOLD:
        plain = el / ent
        if min(la, lb) >= LEAK_THRESHOLD:
            scaled = el / (ent * min(la, lb) ** 2)
    return ConjectureACell(
        la, lb, el, ent, ee, plain, scaled, verdict,
        {"vacuity": VACUITY_THRESHOLD, "leak": LEAK_THRESHOLD},
    )


@dataclass
class P1sReport:
    A: tuple
    EL: float
    ENT: float
    EE: float | None
    min_leak: float
    ratio: float | None
    ratio_scaled: float | None
    leaks: dict

    def to_dict(self) -> dict:
        d = asdict(self)
        d["A"] = list(self.A)
        d["leaks"] = {str(k): v for k, v in self.leaks.items()}
        return d


def relation_p1s_evaluate(channel, rho, A, tau=None, *, ee_seed=0) -> P1sReport:
    """Record EL(A), ENT(rho; A) and the leak-scaled ratio for a simple channel (evidence, not a test)."""
    A = as_labels(A)
    register = channel.register
    if tau is None:
        tau = PureState.basis([0] * register.n, register)
    ml = multi_leak_correlation(channel, A, tau)
    out = apply(channel, tau)
    leaks = {lab: von_neumann_entropy(partial_trace(out, [lab])) for lab in A}
    ent = max_entropy_completion(rho, A).value
    ee = None
    if len(A) == 2:
        ee = emergent_entanglement(partial_trace(rho, A), seed=ee_seed).value
    lmin = min(leaks.values())
    ratio = ml.value / ent if ent >= VACUITY_THRESHOLD else None
    scaled = ratio / lmin**2 if ratio is not None and lmin >= LEAK_THRESHOLD else None
    return P1sReport(A, ml.value, ent, ee, lmin, ratio, scaled, leaks)
