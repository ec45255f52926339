"""Reference solvers: RZF initialization, iterative WMMSE, and GD/NAGD.

WMMSE alternates closed-form receiver and weight updates with a Gauss-Seidel
sweep of per-BS precoder solves; each BS shares one nonnegative power
multiplier found by bisection. GD and NAGD run Armijo backtracking on the
negated objective and renormalize to the per-BS power budget after every
accepted step so all solvers are compared on the same feasible set.
"""

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet, ClusterMap
from .embedding import (
    BlockLayout,
    PowerBudget,
    PrecoderState,
    bs_block_norms,
    renormalize_power,
)
from .objective import (
    Weights,
    WsrObjective,
    amplitude_matrix,
    terms_from_amplitudes,
)
from .symplectic import SolveResult, SymplecticStepRecord


class BisectionError(RuntimeError):
    """Raised when the power multiplier cannot be bracketed or is ill-posed."""


@dataclass
class LineSearchConfig:
    """Armijo backtracking parameters."""

    alpha0: float = 1.0
    backtrack: float = 0.5
    c1: float = 1e-4
    max_backtracks: int = 30

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be > 0")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        if not 0 < self.c1 < 1:
            raise ValueError("c1 must lie in (0, 1)")
        if self.max_backtracks < 1:
            raise ValueError("max_backtracks must be >= 1")


@dataclass
class WmmseState:
    """Receiver coefficients, MMSE weights and per-BS power multipliers."""

    u: np.ndarray  # (K,) complex receive coefficients
    W: np.ndarray  # (K,) MMSE weights, >= 1
    lam: np.ndarray  # (B,) bisection multipliers, >= 0

    def __post_init__(self):
        if np.any(self.W < 1.0 - 1e-9):
            raise ValueError("MMSE weights must be >= 1")
        if np.any(self.lam < 0):
            raise ValueError("power multipliers must be nonnegative")


def rzf_init(
    ch: ChannelSet,
    clusters: ClusterMap,
    rho: PowerBudget,
    alpha_reg: float | None = None,
) -> PrecoderState:
    """Per-BS regularized zero-forcing directions scaled to full power.

    p_{l,k} ~ (sum_{j in U_l} h_{l,j} h_{l,j}^H + alpha I)^(-1) h_{l,k}, each
    BS block group scaled so its power equals rho_l. alpha defaults to
    |U_l| * sigma_z^2 / rho_l per BS.
    """
    if alpha_reg is not None and not alpha_reg > 0:
        raise ValueError("alpha_reg must be > 0")
    layout = BlockLayout(clusters, ch.M_t)
    cblocks = np.zeros((layout.n_blocks, ch.M_t), dtype=complex)
    for l, rows in enumerate(layout.bs_rows):
        n_l = rows.stop - rows.start
        if n_l == 0:
            continue
        cols = layout.bs_uts[l]
        h_cols = ch.entries[l][cols].T  # (M_t, n_l), columns h_{l,k}
        reg = alpha_reg if alpha_reg is not None else n_l * ch.noise_power / rho.rho[l]
        gram = h_cols @ h_cols.conj().T
        dirs = np.linalg.solve(gram + reg * np.eye(ch.M_t), h_cols)
        power = float(np.sum(np.abs(dirs) ** 2))
        cblocks[rows] = (dirs * math.sqrt(rho.rho[l] / power)).T
    return PrecoderState.from_complex(layout, cblocks)


def bisect_power(power_fn, rho_l: float, tol: float = 1e-10, max_doublings: int = 64) -> float:
    """Find lam >= 0 with |power(lam) - rho_l| <= tol * rho_l.

    power must be strictly decreasing in lam; returns 0 when the unconstrained
    point is already feasible.
    """
    if not rho_l > 0:
        raise ValueError("rho_l must be > 0")
    p0 = power_fn(0.0)
    if p0 <= rho_l * (1.0 + tol):
        return 0.0
    lo, p_lo = 0.0, p0
    hi = 1.0
    increases = 0
    for _ in range(max_doublings):
        p_hi = power_fn(hi)
        if np.isfinite(p_lo) and p_hi > p_lo * (1.0 + 1e-9):
            increases += 1
            if increases >= 2:
                raise BisectionError(
                    f"power is not decreasing: power({lo}) = {p_lo}, power({hi}) = {p_hi}"
                )
        if p_hi <= rho_l:
            break
        lo, p_lo = hi, p_hi
        hi *= 2.0
    else:
        raise BisectionError(
            f"failed to bracket the power multiplier within {max_doublings} doublings: "
            f"power({hi / 2.0}) = {p_lo}, target {rho_l}"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        pm = power_fn(mid)
        if abs(pm - rho_l) <= tol * rho_l:
            return mid
        if pm > rho_l:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, hi):
            break
    return hi  # bracket collapsed; hi is on the feasible side


def wmmse_step(
    state: PrecoderState,
    ch: ChannelSet,
    clusters: ClusterMap,
    rho: PowerBudget,
    weights: Weights,
    power_tol: float = 1e-10,
):
    """One WMMSE outer iteration.

    Returns (new_state, WmmseState, wsr_bits) with wsr_bits evaluated at the
    new precoder. Receiver coefficients and weights are held fixed while the
    per-BS solves sweep in ascending BS order using the latest precoders.
    """
    layout = state.layout
    w = weights.w
    sigma2 = ch.noise_power

    amps = amplitude_matrix(state, ch)
    a = np.abs(np.diag(amps)) ** 2
    total = np.sum(np.abs(amps) ** 2, axis=1)
    r = total - a + sigma2
    r_check = total + sigma2  # full received energy
    u = np.conj(np.diag(amps)) / r_check
    big_w = 1.0 + a / r
    coef = w * big_w * np.abs(u) ** 2

    cblocks = state.complex_blocks().copy()
    amps_live = amps.copy()
    lam_out = np.zeros(layout.n_bs)
    for l, rows in enumerate(layout.bs_rows):
        n_l = rows.stop - rows.start
        if n_l == 0:
            continue
        cols = layout.bs_uts[l]
        h_l = ch.entries[l]  # (K, M_t)
        contrib = h_l.conj() @ cblocks[rows].T  # (K, n_l)
        cross = amps_live[:, cols] - contrib  # amplitudes excluding BS l
        desired = (w * big_w * np.conj(u))[cols][None, :] * h_l[cols].T
        rhs = desired - h_l.T @ (coef[:, None] * cross)  # (M_t, n_l)
        gram = (h_l.T * coef) @ h_l.conj()
        gram = 0.5 * (gram + gram.conj().T)
        evals, vecs = np.linalg.eigh(gram)
        evals = np.maximum(evals, 0.0)
        z = vecs.conj().T @ rhs
        z2 = np.abs(z) ** 2

        def power(lam_val, z2=z2, evals=evals):
            denom = (evals[:, None] + lam_val) ** 2
            with np.errstate(divide="ignore", invalid="ignore"):
                terms = np.where(z2 > 0.0, z2 / denom, 0.0)
            return float(np.sum(terms))

        lam_l = bisect_power(power, float(rho.rho[l]), power_tol)
        new_blocks = vecs @ (z / (evals + lam_l)[:, None])  # (M_t, n_l)
        amps_live[:, cols] += h_l.conj() @ new_blocks - contrib
        cblocks[rows] = new_blocks.T
        lam_out[l] = lam_l

    new_state = PrecoderState.from_complex(layout, cblocks)
    terms = terms_from_amplitudes(amplitude_matrix(new_state, ch), sigma2)
    wsr_bits = float(np.dot(w, terms.rate_bits))
    return new_state, WmmseState(u=u, W=big_w, lam=lam_out), wsr_bits


def wmmse_iterate(
    state: PrecoderState,
    ch: ChannelSet,
    clusters: ClusterMap,
    rho: PowerBudget,
    weights: Weights,
    n_iters: int,
    power_tol: float = 1e-10,
):
    """Run n_iters WMMSE outer iterations; returns (state, per-iteration WSR)."""
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    wsr_trace = np.zeros(n_iters)
    for i in range(n_iters):
        state, _, wsr_bits = wmmse_step(state, ch, clusters, rho, weights, power_tol)
        wsr_trace[i] = wsr_bits
    return state, wsr_trace


def _armijo(objective, layout, base_blocks, f0, grad_blocks, gnorm2, start, ls, rho):
    """Backtracking search along -grad; returns (alpha, state) or (None, None).

    With a power budget the sufficient-decrease test is applied to the
    renormalized candidate (projection-arc search), so every accepted iterate
    itself satisfies g(p_new) <= g(p) - c1 * alpha * ||grad||^2; testing the
    raw candidate lets renormalization undo the guaranteed decrease and
    destabilizes the momentum variant. The search starts from the caller's
    warm-started step, never above it.
    """
    alpha = start
    for _ in range(ls.max_backtracks):
        cand = PrecoderState(layout, base_blocks - alpha * grad_blocks, copy=False)
        if rho is not None:
            cand = renormalize_power(cand, rho)
        if objective.value(cand) <= f0 - ls.c1 * alpha * gnorm2:
            return alpha, cand
        alpha *= ls.backtrack
    return None, None


def _descent_record(wsr_bits, alpha, state, rho):
    residual = None
    if rho is not None:
        powers = bs_block_norms(state)
        mask = state.layout.nonempty_bs
        residual = (
            float(np.max(np.abs(powers[mask] - rho.rho[mask]) / rho.rho[mask]))
            if mask.any()
            else 0.0
        )
    return SymplecticStepRecord(
        lam=None,
        mu=None,
        delta=None,
        h_used=alpha,
        hamiltonian=None,
        wsr_bits=wsr_bits,
        constraint_residual=residual,
        hidden_residual=None,
    )


def gd_solve(
    init: PrecoderState,
    objective: WsrObjective,
    rho: PowerBudget | None = None,
    ls: LineSearchConfig | None = None,
    max_iters: int = 100,
    rel_tol: float = 1e-5,
) -> SolveResult:
    """Steepest descent with Armijo backtracking.

    With a power budget, every accepted step is renormalized to full per-BS
    power; rho=None runs the plain unconstrained descent (used by the
    quadratic convergence checks).
    """
    ls = ls if ls is not None else LineSearchConfig()
    layout = init.layout
    p = renormalize_power(init, rho) if rho is not None else init
    ev = objective.evaluate(p)
    best_wsr, best_state = ev.wsr_bits, p
    prev_wsr = ev.wsr_bits
    start = ls.alpha0
    consec_failures = 0
    trace = []
    recent = deque(maxlen=3)
    converged = False
    for _ in range(max_iters):
        grad_blocks = ev.grad.blocks
        gnorm2 = float(np.sum(grad_blocks**2))
        if gnorm2 == 0.0:
            converged = True
            break
        alpha, cand = _armijo(objective, layout, p.blocks, ev.g_value, grad_blocks, gnorm2, start, ls, rho)
        if cand is None:
            start *= 0.5
            consec_failures += 1
            trace.append(_descent_record(prev_wsr, 0.0, p, rho))
            recent.clear()
            if consec_failures >= 10:
                break  # stalled line search
            continue
        consec_failures = 0
        start = min(ls.alpha0, alpha / ls.backtrack)  # warm start, one notch above
        p = cand
        ev = objective.evaluate(p)
        trace.append(_descent_record(ev.wsr_bits, alpha, p, rho))
        if ev.wsr_bits > best_wsr:
            best_wsr, best_state = ev.wsr_bits, p
        rel = abs(ev.wsr_bits - prev_wsr) / max(abs(prev_wsr), 1e-300)
        prev_wsr = ev.wsr_bits
        recent.append(rel)
        if len(recent) == 3 and all(x < rel_tol for x in recent):
            converged = True
            break
    return SolveResult(precoder=best_state, trace=trace, converged=converged, iterations=len(trace))


def nagd_solve(
    init: PrecoderState,
    objective: WsrObjective,
    rho: PowerBudget | None = None,
    mu_momentum: float = 0.9,
    ls: LineSearchConfig | None = None,
    max_iters: int = 100,
    rel_tol: float = 1e-5,
) -> SolveResult:
    """Momentum extrapolation followed by an Armijo gradient step.

    The gradient and the Armijo condition are taken at the extrapolated point
    p + mu (p - p_prev); the first iteration has no predecessor so it matches
    plain descent, and mu_momentum = 0 reproduces the gd_solve iterates. An
    extrapolated step that would lower the WSR triggers an adaptive restart:
    the momentum memory is dropped and the iteration falls back to a plain
    gradient step from the current point, so the trace stays monotone.
    """
    if not 0.0 <= mu_momentum < 1.0:
        raise ValueError("mu_momentum must lie in [0, 1)")
    ls = ls if ls is not None else LineSearchConfig()
    layout = init.layout
    p = renormalize_power(init, rho) if rho is not None else init
    p_prev = p
    best_wsr = objective.wsr_bits(p)
    best_state = p
    prev_wsr = best_wsr
    start = ls.alpha0
    consec_failures = 0
    trace = []
    recent = deque(maxlen=3)
    converged = False
    for _ in range(max_iters):
        step = None  # (alpha, state, wsr)
        if mu_momentum > 0.0 and p_prev is not p:
            y_blocks = p.blocks + mu_momentum * (p.blocks - p_prev.blocks)
            y = PrecoderState(layout, y_blocks, copy=False)
            ev_y = objective.evaluate(y)
            grad_blocks = ev_y.grad.blocks
            gnorm2 = float(np.sum(grad_blocks**2))
            if gnorm2 > 0.0:
                alpha, cand = _armijo(
                    objective, layout, y.blocks, ev_y.g_value, grad_blocks, gnorm2, start, ls, rho
                )
                if cand is not None:
                    wsr_cand = objective.wsr_bits(cand)
                    if wsr_cand >= prev_wsr - 1e-12 * max(1.0, abs(prev_wsr)):
                        step = (alpha, cand, wsr_cand)
        if step is None:
            # first iteration, failed extrapolation, or adaptive restart
            ev_p = objective.evaluate(p)
            grad_blocks = ev_p.grad.blocks
            gnorm2 = float(np.sum(grad_blocks**2))
            if gnorm2 == 0.0:
                converged = True
                break
            alpha, cand = _armijo(
                objective, layout, p.blocks, ev_p.g_value, grad_blocks, gnorm2, start, ls, rho
            )
            if cand is None:
                start *= 0.5
                consec_failures += 1
                p_prev = p
                trace.append(_descent_record(prev_wsr, 0.0, p, rho))
                recent.clear()
                if consec_failures >= 10:
                    break
                continue
            step = (alpha, cand, objective.wsr_bits(cand))
        consec_failures = 0
        alpha, cand, wsr_now = step
        start = min(ls.alpha0, alpha / ls.backtrack)  # warm start, one notch above
        p_prev = p
        p = cand
        trace.append(_descent_record(wsr_now, alpha, p, rho))
        if wsr_now > best_wsr:
            best_wsr, best_state = wsr_now, p
        rel = abs(wsr_now - prev_wsr) / max(abs(prev_wsr), 1e-300)
        prev_wsr = wsr_now
        recent.append(rel)
        if len(recent) == 3 and all(x < rel_tol for x in recent):
            converged = True
            break
    return SolveResult(precoder=best_state, trace=trace, converged=converged, iterations=len(trace))
