"""
EM inference on the Jensen lower bound of the regularized log-likelihood.

Each iteration computes the responsibilities (E-step) and then updates, in
order, u, v, w, eta and beta (M-step). Every block update is the exact
maximizer of the bound given the other blocks, so the objective never
decreases.
"""

from __future__ import annotations

import csv
import io
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import bisect

from .errors import DynRecipError, EmptyNetworkError, ValidationError
from .model import (Hyperparams, ModelParams, NetworkStats, Variant, stats_objective)
from .temporal_graph import TemporalNetwork

_log = logging.getLogger(__name__)

BETA_FLOOR = float(np.finfo(float).eps)


class DegenerateFitWarning(UserWarning):
    """A parameter could not be identified from the data and was set to a floor."""


@dataclass
class VariationalState:
    """Responsibilities, one row per event ``A_hat_ij(t) > 0``."""

    t: np.ndarray
    i: np.ndarray
    j: np.ndarray
    weight: np.ndarray
    rec: np.ndarray
    rho1: np.ndarray
    rho2: np.ndarray
    phi: np.ndarray  # (n_events, K, K)


@dataclass
class FitResult:
    params: ModelParams
    objective_trace: List[float]
    n_iterations: int
    restart_seed: Tuple[int, int]
    converged: bool
    restart_objectives: List[float] = field(default_factory=list)
    zero_denominators: int = 0

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    def trace_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["iteration", "objective"])
        for it, val in enumerate(self.objective_trace, start=1):
            wr.writerow([it, repr(float(val))])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------

def _e_step(stats: NetworkStats, params: ModelParams) -> VariationalState:
    prod, lam = stats.event_rates(params)
    recip = params.eta * stats.ev_r
    denom = lam + recip
    K = params.K
    with np.errstate(divide="ignore", invalid="ignore"):
        rho1 = np.where(denom > 0, lam / denom, 1.0)
        phi = np.where(lam[:, None, None] > 0, prod / lam[:, None, None], 1.0 / K ** 2)
    rho2 = 1.0 - rho1
    return VariationalState(stats.ev_t, stats.ev_i, stats.ev_j, stats.ev_w, stats.ev_r,
                            rho1, rho2, phi)


def e_step(net: TemporalNetwork, params: ModelParams) -> VariationalState:
    """Responsibilities that make the lower bound tight at ``params``."""
    return _e_step(NetworkStats.build(net, params.rec_lag), params)


# ---------------------------------------------------------------------------
# M-step
# ---------------------------------------------------------------------------

def _scatter(index: np.ndarray, values: np.ndarray, size: int) -> np.ndarray:
    """Sum rows of ``values`` (n, K) into ``size`` bins given by ``index``."""
    out = np.empty((size, values.shape[1]))
    for k in range(values.shape[1]):
        out[:, k] = np.bincount(index, weights=values[:, k], minlength=size)
    return out


def _ratio(num, den, counter):
    den = np.asarray(den, dtype=float)
    zero = den <= 0
    if zero.any():
        counter[0] += int(zero.sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(zero, 0.0, num / np.where(zero, 1.0, den))


def _numerators(stats: NetworkStats, state: VariationalState, per_step: bool):
    q = (state.weight * state.rho1)[:, None, None] * state.phi
    qu = q.sum(axis=2)
    qv = q.sum(axis=1)
    S, N = stats.n_steps, stats.n_nodes
    if per_step:
        nu = _scatter(state.t * N + state.i, qu, S * N).reshape(S, N, -1)
        nv = _scatter(state.t * N + state.j, qv, S * N).reshape(S, N, -1)
    else:
        nu = _scatter(state.i, qu, N)
        nv = _scatter(state.j, qv, N)
    K = q.shape[1]
    nw = _scatter(state.t, q.reshape(len(q), K * K), S).reshape(S, K, K)
    neta = float((state.weight * state.rho2).sum())
    return nu, nv, nw, neta


def _fast_numerators(stats: NetworkStats, params: ModelParams, factors, per_step: bool):
    """Same quantities as :func:`_numerators` without materializing ``phi``.

    ``rho1 * phi_kq = u_ik v_jq w_kq / (lambda + eta R)``, so every numerator is
    a weighted product of the per-event factors.
    """
    Ue, Ve, uw, wv, lam = factors
    denom = lam + params.eta * stats.ev_r
    S, N, K = stats.n_steps, stats.n_nodes, params.K
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(lam > 0, stats.ev_w / denom, 0.0)
    qu = c[:, None] * Ue * wv
    qv = c[:, None] * Ve * uw
    W = params.expanded(S)[2]
    nw = np.empty((S, K, K))
    for t, sl in enumerate(stats.slices):
        nw[t] = ((c[sl, None] * Ue[sl]).T @ Ve[sl]) * W[t]
    # lambda = 0 events: uniform phi, full weight on the community part iff denom = 0
    degenerate = (lam <= 0) & (denom <= 0)
    if degenerate.any():
        extra = np.where(degenerate, stats.ev_w, 0.0) / K ** 2
        qu = qu + extra[:, None] * K
        qv = qv + extra[:, None] * K
        nw += np.bincount(stats.ev_t, weights=extra, minlength=S)[:, None, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        rho2 = np.where(denom > 0, params.eta * stats.ev_r / denom, 0.0)
    neta = float((stats.ev_w * rho2).sum())
    if per_step:
        nu = _scatter(stats.ev_t * N + stats.ev_i, qu, S * N).reshape(S, N, K)
        nv = _scatter(stats.ev_t * N + stats.ev_j, qv, S * N).reshape(S, N, K)
    else:
        nu = _scatter(stats.ev_i, qu, N)
        nv = _scatter(stats.ev_j, qv, N)
    return nu, nv, nw, neta


def beta_constants(stats: NetworkStats, params: ModelParams, per_step: bool = False):
    """``(C1, C2, C3)`` of the beta stationarity condition, summed over ``t >= 1``.

    C1 counts new-edge and removal events, C2 is the total rate
    ``sum lambda + eta R`` and C3 counts persisting edges. With ``per_step``
    arrays over ``t = 1..T`` are returned instead.
    """
    c1 = stats.n_new[1:] + stats.n_removed[1:]
    c2 = stats.total_rate(params)[1:]
    c3 = stats.n_persist[1:]
    if per_step:
        return c1, c2, c3
    return float(c1.sum()), float(c2.sum()), float(c3.sum())


def solve_beta(c1: float, c2: float, c3: float) -> float:
    """Root in (0, 1] of ``C1 - beta C2 - beta / (1 - beta) C3``.

    Bracketed bisection; ``C1 / C2`` (capped at 1) when ``C3 = 0``. With no
    transition events (``C1 = 0``) the data carry no information on beta and
    the machine-epsilon floor is returned with a warning.
    """
    if c1 <= 0:
        warnings.warn("no edge appearance/removal events: beta set to floor",
                      DegenerateFitWarning, stacklevel=2)
        return BETA_FLOOR
    if c3 <= 0:
        return 1.0 if c2 <= c1 else c1 / c2

    def f(b):
        return c1 - b * c2 - b / (1.0 - b) * c3

    hi = np.nextafter(1.0, 0.0)
    root = bisect(f, 0.0, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps, maxiter=200)
    return float(min(max(root, BETA_FLOOR), 1.0))


def _update_beta(stats: NetworkStats, params: ModelParams):
    if stats.n_steps < 2:
        return params.beta
    if params.variant is Variant.FULL_DYN:
        c1, c2, c3 = beta_constants(stats, params, per_step=True)
        out = np.ones(stats.n_steps)
        out[1:] = [solve_beta(a, b, c) for a, b, c in zip(c1, c2, c3)]
        return out
    return solve_beta(*beta_constants(stats, params))


def update_beta(net: TemporalNetwork, params: ModelParams):
    """Maximize the objective over beta with everything else fixed.

    Returns a scalar, or for full-dyn an array with one value per step
    (entry 0 fixed at 1).
    """
    if net.n_steps < 2:
        raise ValidationError("beta needs at least one transition (T >= 1)")
    return _update_beta(NetworkStats.build(net, params.rec_lag), params)


def _m_step(stats: NetworkStats, state, params: ModelParams,
            hyper: Hyperparams, fix_eta: Optional[float] = None) -> Tuple[ModelParams, int]:
    """``state`` is a VariationalState or the tuple returned by ``event_factors``."""
    S = stats.n_steps
    var = params.variant
    zero = [0]
    per_step = var is Variant.FULL_DYN
    if isinstance(state, VariationalState):
        nu, nv, nw, neta = _numerators(stats, state, per_step)
    else:
        nu, nv, nw, neta = _fast_numerators(stats, params, state, per_step)
    _, _, _, bh = params.expanded(S)

    if var is Variant.FULL_DYN:
        u = params.u.copy()
        v = params.v.copy()
        w = params.w.copy()
        for t in range(S):
            u[t] = _ratio(nu[t], bh[t] * stats.row_sum(t, v[t]) @ w[t].T, zero)
            v[t] = _ratio(nv[t], bh[t] * stats.col_sum(t, u[t]) @ w[t], zero)
            w[t] = _ratio(nw[t], bh[t] * stats.pair_sum(t, u[t], v[t]), zero)
    else:
        am1, b = hyper.a - 1.0, hyper.b
        W = np.broadcast_to(params.w, (S,) + params.w.shape[-2:])
        if stats.observed is None:
            wsum = np.tensordot(bh, W, axes=1)
            den_u = stats.row_sum(0, params.v) @ wsum.T
        else:
            den_u = sum(bh[t] * stats.row_sum(t, params.v) @ W[t].T for t in range(S))
        u = (am1 + nu) / (b + den_u)
        if stats.observed is None:
            den_v = stats.col_sum(0, u) @ wsum
        else:
            den_v = sum(bh[t] * stats.col_sum(t, u) @ W[t] for t in range(S))
        v = (am1 + nv) / (b + den_v)
        if var is Variant.W_DYN:
            w = np.empty_like(params.w)
            for t in range(S):
                w[t] = _ratio(nw[t], bh[t] * stats.pair_sum(t, u, v), zero)
        else:
            if stats.observed is None:
                den_w = bh.sum() * stats.pair_sum(0, u, v)
            else:
                den_w = sum(bh[t] * stats.pair_sum(t, u, v) for t in range(S))
            w = _ratio(nw.sum(axis=0), den_w, zero)

    if fix_eta is not None:
        eta = float(fix_eta)
    else:
        den_eta = float((bh[1:] * stats.r_sum[1:]).sum())
        eta = float(_ratio(neta, den_eta, zero))

    new = params.with_(u=u, v=v, w=w, eta=eta)
    new = new.with_(beta=_update_beta(stats, new))
    return new, zero[0]


def _public_m_step(net, state, params, hyper, expected: Variant, fix_eta=None):
    if params.variant is not expected:
        raise ValidationError(f"params are {params.variant.value}, expected {expected.value}")
    stats = NetworkStats.build(net, params.rec_lag)
    return _m_step(stats, state, params, hyper, fix_eta)[0]


def m_step_w_static(net, state, params, hyper, fix_eta=None) -> ModelParams:
    """Closed-form updates with static u, v, w, eta, beta."""
    return _public_m_step(net, state, params, hyper, Variant.W_STATIC, fix_eta)


def m_step_w_dyn(net, state, params, hyper, fix_eta=None) -> ModelParams:
    """Closed-form updates with static u, v and per-step w(t)."""
    return _public_m_step(net, state, params, hyper, Variant.W_DYN, fix_eta)


def m_step_full_dyn(net, state, params, hyper, fix_eta=None) -> ModelParams:
    """Per-step u(t), v(t), w(t), beta(t) (no priors) with a global eta."""
    return _public_m_step(net, state, params, hyper, Variant.FULL_DYN, fix_eta)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def initialize(net: TemporalNetwork, K: int, variant, rng: np.random.Generator,
               rec_lag: int = 1, fix_eta: Optional[float] = None) -> ModelParams:
    """Random starting point.

    u, v ~ U(0, 1); w diagonal ~ 0.2 K / N * U(0, 1), off-diagonal ten times
    smaller; eta ~ U(0, 1); beta ~ U(0.05, 0.95). A single snapshot carries
    no information on beta, which is then fixed at 1.
    """
    variant = Variant.parse(variant)
    N, S = net.n_nodes, net.n_steps
    lead = (S,) if variant is Variant.FULL_DYN else ()
    u = rng.random(lead + (N, K))
    v = rng.random(lead + (N, K))
    wlead = () if variant is Variant.W_STATIC else (S,)
    scale = 0.2 * K / max(N, 1)
    w = rng.random(wlead + (K, K)) * scale
    off = ~np.eye(K, dtype=bool)
    w[..., off] *= 0.1
    eta = rng.uniform(0.0, 1.0)
    beta = rng.uniform(0.05, 0.95)
    if fix_eta is not None:
        eta = float(fix_eta)
    if S == 1:
        beta = 1.0
    if variant is Variant.FULL_DYN:
        beta = np.full(S, beta)
        beta[0] = 1.0
    return ModelParams(variant, u, v, w, eta, beta, rec_lag)


def _run(stats: NetworkStats, hyper: Hyperparams, params: ModelParams,
         fix_eta: Optional[float]):
    trace = []
    zeros = 0
    coincide = 0
    last_check = None
    converged = False
    factors = stats.event_factors(params)
    for it in range(1, hyper.max_iter + 1):
        params, nz = _m_step(stats, factors, params, hyper, fix_eta)
        zeros += nz
        factors = stats.event_factors(params)
        obj = stats_objective(stats, params, hyper, lam=factors[-1])
        if not np.isfinite(obj):
            return None, trace, zeros, False
        trace.append(obj)
        if it % hyper.check_every == 0:
            if last_check is not None and \
                    abs(obj - last_check) <= hyper.tolerance * max(abs(last_check), 1e-300):
                coincide += 1
            else:
                coincide = 0
            last_check = obj
            if coincide >= hyper.decision_window:
                converged = True
                break
    return params, trace, zeros, converged


def fit(net: TemporalNetwork, hyper: Hyperparams, variant="w-dyn", rec_lag: int = 1,
        fix_eta: Optional[float] = None, init: Optional[ModelParams] = None,
        observed: Optional[np.ndarray] = None, n_jobs: int = 1) -> FitResult:
    """Fit the model by EM with ``hyper.n_restarts`` random restarts.

    Parameters
    ----------
    net : TemporalNetwork
        Preprocessed network; snapshots after the first are used as binary.
    hyper : Hyperparams
        Number of communities, prior and convergence settings, base seed.
    variant : {"w-dyn", "w-static", "full-dyn"}
    rec_lag : int
        1 if the reciprocal edge enters from the previous step, 0 if from the
        same step.
    fix_eta : float, optional
        Keep eta fixed at this value (0 gives the no-reciprocity ablation).
    init : ModelParams, optional
        Start every restart from these parameters instead of a random draw.
    observed : ndarray, optional
        ``(S, N, N)`` mask of entries used for training (cross-validation).
    n_jobs : int
        Restarts run concurrently on this many threads (0 = one per restart).

    Returns
    -------
    FitResult
        The restart with the highest final objective (lowest index on ties).
    """
    variant = Variant.parse(variant)
    if net.n_nodes == 0:
        raise EmptyNetworkError("cannot fit a network without nodes")
    if init is not None and (init.variant is not variant or init.rec_lag != rec_lag):
        raise ValidationError("init params disagree with the requested variant/rec_lag")
    stats = NetworkStats.build(net, rec_lag, observed)

    def one(r):
        seed = (int(hyper.seed), r)
        rng = np.random.default_rng(seed)
        p0 = init if init is not None else initialize(net, hyper.K, variant, rng, rec_lag, fix_eta)
        if fix_eta is not None:
            p0 = p0.with_(eta=float(fix_eta))
        params, trace, zeros, conv = _run(stats, hyper, p0, fix_eta)
        if params is None:
            _log.warning("restart %d aborted: non-finite objective", r)
        return seed, params, trace, zeros, conv

    restarts = range(hyper.n_restarts)
    if n_jobs == 1 or hyper.n_restarts == 1:
        runs = [one(r) for r in restarts]
    else:
        workers = hyper.n_restarts if n_jobs <= 0 else n_jobs
        with ThreadPoolExecutor(max_workers=workers) as ex:
            runs = list(ex.map(one, restarts))

    best = None
    finals = []
    for seed, params, trace, zeros, conv in runs:
        final = trace[-1] if params is not None and trace else -np.inf
        finals.append(final)
        if params is None:
            continue
        _log.debug("restart %s: objective %.6f after %d iterations", seed, final, len(trace))
        if best is None or final > best.objective:
            best = FitResult(params, trace, len(trace), seed, conv, zero_denominators=zeros)
    if best is None:
        raise DynRecipError("every restart produced a non-finite objective")
    best.restart_objectives = finals
    return best
