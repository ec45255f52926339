"""Per-UT rates, the weighted sum-rate objective and its analytic gradient.

Optimization runs on the negated objective in nats; reported sum rates are in
bits. Desired and interfering amplitudes are accumulated in the complex domain
(one K x |U_l| product per BS), which is numerically identical to evaluating
the real-embedded forms; the test suite cross-checks both routes and validates
the gradient against central finite differences.
"""

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet, ClusterMap
from .embedding import PrecoderState, unstack

_LN2 = math.log(2.0)


@dataclass
class Weights:
    """Nonnegative per-UT rate weights, at least one positive."""

    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if self.w.ndim != 1:
            raise ValueError("weights must be a vector of length K")
        if not np.all(np.isfinite(self.w)) or np.any(self.w < 0):
            raise ValueError("weights must be finite and nonnegative")
        if not np.any(self.w > 0):
            raise ValueError("at least one weight must be positive")

    @classmethod
    def uniform(cls, n_ut: int, value: float = 1.0) -> "Weights":
        return cls(w=np.full(n_ut, float(value)))


@dataclass
class OpCounter:
    """Complex multiply-add counter attributable to gradient evaluation."""

    multiply_adds: int = 0

    def add(self, n: int) -> None:
        self.multiply_adds += int(n)

    def reset(self) -> None:
        self.multiply_adds = 0


@dataclass
class RateTerms:
    """Per-UT signal power a, interference-plus-noise r, and derived rates."""

    a: np.ndarray
    r: np.ndarray
    b: np.ndarray  # (1 + a/r)^(-1)
    rate_nats: np.ndarray
    rate_bits: np.ndarray

    def __post_init__(self):
        if np.any(self.a < 0) or np.any(self.r <= 0):
            raise ValueError("signal power must be >= 0 and interference+noise > 0")
        if np.any(self.b <= 0) or np.any(self.b > 1.0 + 1e-12):
            raise ValueError("b must lie in (0, 1]")


def amplitude_matrix(
    state: PrecoderState,
    ch: ChannelSet,
    counter: OpCounter | None = None,
) -> np.ndarray:
    """A[k, t] = sum_{m in B_t} h_{m,k}^H p_{m,t} for the current precoder."""
    lay = state.layout
    n_ut = ch.n_ut
    if lay.n_bs != ch.n_bs or lay.n_ut != n_ut:
        raise ValueError("state layout does not match the channel set")
    amps = np.zeros((n_ut, n_ut), dtype=complex)
    cblocks = state.complex_blocks()
    for l, rows in enumerate(lay.bs_rows):
        n_l = rows.stop - rows.start
        if n_l == 0:
            continue
        amps[:, lay.bs_uts[l]] += ch.entries[l].conj() @ cblocks[rows].T
        if counter is not None:
            counter.add(n_ut * lay.M_t * n_l)
    return amps


def terms_from_amplitudes(amps: np.ndarray, noise_power: float) -> RateTerms:
    a = np.abs(np.diag(amps)) ** 2
    total = np.sum(np.abs(amps) ** 2, axis=1)
    r = total - a + noise_power
    b = r / (r + a)
    rate_nats = np.log1p(a / r)
    return RateTerms(a=a, r=r, b=b, rate_nats=rate_nats, rate_bits=rate_nats / _LN2)


def rate_terms(state: PrecoderState, ch: ChannelSet, clusters: ClusterMap) -> RateTerms:
    """Evaluate a_k, r_k, b_k and the per-UT rates for a precoder."""
    _check_clusters(state, clusters)
    return terms_from_amplitudes(amplitude_matrix(state, ch), ch.noise_power)


def wsr(state: PrecoderState, ch: ChannelSet, clusters: ClusterMap, weights: Weights) -> float:
    """Weighted sum rate in bits."""
    terms = rate_terms(state, ch, clusters)
    return float(np.dot(weights.w, terms.rate_bits))


def g_value(state: PrecoderState, ch: ChannelSet, clusters: ClusterMap, weights: Weights) -> float:
    """Negated weighted sum rate in nats; the quantity every solver minimizes."""
    terms = rate_terms(state, ch, clusters)
    return -float(np.dot(weights.w, terms.rate_nats))


def _gradient_blocks(
    state: PrecoderState,
    ch: ChannelSet,
    weights: Weights,
    amps: np.ndarray,
    terms: RateTerms,
    counter: OpCounter | None,
) -> np.ndarray:
    """Real gradient blocks of g_value, shaped like state.blocks.

    Per active pair (l, k) the complex form is
        -(alpha_k + beta_k) * A[k,k] * h_{l,k} + sum_t beta_t * A[t,k] * h_{l,t}
    with alpha = 2 w b / r and beta = 2 w a b / r^2; the real block is its
    [Re; Im] stacking. The factor 2 makes this the exact gradient of the
    real-embedded objective (validated against finite differences).
    """
    lay = state.layout
    w = weights.w
    alpha = 2.0 * w * terms.b / terms.r
    beta = 2.0 * w * terms.a * terms.b / terms.r**2
    out = np.zeros((lay.n_blocks, lay.block_len))
    m = lay.M_t
    for l, rows in enumerate(lay.bs_rows):
        n_l = rows.stop - rows.start
        if n_l == 0:
            continue
        cols = lay.bs_uts[l]
        h_l = ch.entries[l]
        cross = h_l.T @ (beta[:, None] * amps[:, cols])  # (M_t, n_l)
        diag_coef = (alpha[cols] + beta[cols]) * amps[cols, cols]
        grad_c = (cross - diag_coef[None, :] * h_l[cols].T).T  # (n_l, M_t)
        out[rows, :m] = grad_c.real
        out[rows, m:] = grad_c.imag
        if counter is not None:
            counter.add(ch.n_ut * m * n_l + m * n_l)
    return out


def gradient(
    state: PrecoderState,
    ch: ChannelSet,
    clusters: ClusterMap,
    weights: Weights,
    counter: OpCounter | None = None,
) -> PrecoderState:
    """Analytic gradient of g_value with respect to the stacked real precoder."""
    _check_clusters(state, clusters)
    amps = amplitude_matrix(state, ch, counter)
    if counter is not None:
        counter.add(ch.n_ut * ch.n_ut)  # |A|^2 energies feeding a, r, b
    terms = terms_from_amplitudes(amps, ch.noise_power)
    blocks = _gradient_blocks(state, ch, weights, amps, terms, counter)
    return PrecoderState(state.layout, blocks, copy=False)


def central_difference(f, x: np.ndarray, eps: float) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a flat vector."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for j in range(x.size):
        step = np.zeros_like(x)
        step[j] = eps
        grad[j] = (f(x + step) - f(x - step)) / (2.0 * eps)
    return grad


def fd_gradient(
    state: PrecoderState,
    ch: ChannelSet,
    clusters: ClusterMap,
    weights: Weights,
    eps: float = 1e-5,
) -> PrecoderState:
    """Finite-difference oracle for the gradient, independent of the analytic path."""
    lay = state.layout

    def f(vec):
        return g_value(unstack(vec, lay), ch, clusters, weights)

    grad = central_difference(f, state.blocks.ravel(), eps)
    return PrecoderState(lay, grad.reshape(lay.n_blocks, lay.block_len), copy=False)


def _check_clusters(state: PrecoderState, clusters: ClusterMap) -> None:
    if state.layout.n_bs != clusters.n_bs or state.layout.n_ut != clusters.n_ut:
        raise ValueError("state layout does not match the cluster map")


@dataclass
class ObjectiveEval:
    """One full objective evaluation at a state."""

    g_value: float  # negated weighted sum rate, nats
    wsr_bits: float
    grad: PrecoderState
    terms: RateTerms


class WsrObjective:
    """Bundles channels, clusters and weights for repeated solver evaluations.

    evaluate() shares one amplitude matrix between the rate terms and the
    gradient and increments grad_evals; value() is the cheap rate-only path
    used by line searches.
    """

    def __init__(
        self,
        ch: ChannelSet,
        clusters: ClusterMap,
        weights: Weights,
        counter: OpCounter | None = None,
    ):
        if weights.w.size != ch.n_ut:
            raise ValueError("need one weight per UT")
        self.ch = ch
        self.clusters = clusters
        self.weights = weights
        self.counter = counter
        self.grad_evals = 0

    def terms(self, state: PrecoderState) -> RateTerms:
        return terms_from_amplitudes(amplitude_matrix(state, self.ch), self.ch.noise_power)

    def value(self, state: PrecoderState) -> float:
        terms = self.terms(state)
        return -float(np.dot(self.weights.w, terms.rate_nats))

    def wsr_bits(self, state: PrecoderState) -> float:
        terms = self.terms(state)
        return float(np.dot(self.weights.w, terms.rate_bits))

    def evaluate(self, state: PrecoderState) -> ObjectiveEval:
        amps = amplitude_matrix(state, self.ch, self.counter)
        if self.counter is not None:
            self.counter.add(self.ch.n_ut * self.ch.n_ut)
        terms = terms_from_amplitudes(amps, self.ch.noise_power)
        blocks = _gradient_blocks(state, self.ch, self.weights, amps, terms, self.counter)
        self.grad_evals += 1
        return ObjectiveEval(
            g_value=-float(np.dot(self.weights.w, terms.rate_nats)),
            wsr_bits=float(np.dot(self.weights.w, terms.rate_bits)),
            grad=PrecoderState(state.layout, blocks, copy=False),
            terms=terms,
        )
