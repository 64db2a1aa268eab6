"""
Pure functions of the dynamic reciprocity model.

An ordered pair ``(i, j)``, ``i != j``, receives edges at rate

    lambda_ij(t) + eta * A_ji(t - 1),   lambda_ij(t) = sum_kq u_ik v_jq w_kq(t)

and an existing edge is removed with probability ``beta`` per step. The
initial snapshot is Poisson with mean ``lambda_ij(0)``; later snapshots are
treated as binary and follow the four-case transition kernel returned by
:func:`transition_probs`.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .errors import ValidationError
from .temporal_graph import TemporalNetwork

LOG_FLOOR = 1e-12


class Variant(str, enum.Enum):
    W_DYN = "w-dyn"
    W_STATIC = "w-static"
    FULL_DYN = "full-dyn"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for v in cls:
            if key in (v.value, v.name.lower().replace("_", "-")):
                return v
        raise ValidationError(f"unknown variant {value!r}; expected one of {[v.value for v in cls]}")


@dataclass(frozen=True)
class Hyperparams:
    """Gamma prior and EM control settings."""

    K: int
    a: float = 1.5
    b: float = 10.0
    tolerance: float = 1e-4
    max_iter: int = 500
    decision_window: int = 10
    check_every: int = 10
    n_restarts: int = 5
    seed: int = 0

    def __post_init__(self):
        if int(self.K) < 1:
            raise ValidationError(f"K must be >= 1, got {self.K}")
        if self.a < 1:
            raise ValidationError(f"prior shape a must be >= 1, got {self.a}")
        if self.b <= 0:
            raise ValidationError(f"prior rate b must be > 0, got {self.b}")
        if self.tolerance <= 0 or self.max_iter < 1 or self.n_restarts < 1:
            raise ValidationError("tolerance, max_iter and n_restarts must be positive")
        if self.decision_window < 1 or self.check_every < 1:
            raise ValidationError("decision_window and check_every must be positive")


@dataclass(frozen=True)
class TransitionProbs:
    p00: float
    p01: float
    p10: float
    p11: float


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Latent state of one model variant.

    Shapes (``S`` = number of snapshots, ``N`` nodes, ``K`` communities):

    - w-static: u, v ``(N, K)``; w ``(K, K)``; scalar beta
    - w-dyn: u, v ``(N, K)``; w ``(S, K, K)``; scalar beta
    - full-dyn: u, v ``(S, N, K)``; w ``(S, K, K)``; beta ``(S,)`` with entry 0 unused

    For steps past the last stored one, the dynamic blocks reuse the last
    step (this is how one-step-ahead forecasts are scored).
    """

    variant: Variant
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    eta: float
    beta: Union[float, np.ndarray]
    rec_lag: int = 1

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        w = np.asarray(self.w, dtype=float)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "eta", float(self.eta))
        if self.variant is Variant.FULL_DYN:
            object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).reshape(-1))
        else:
            object.__setattr__(self, "beta", float(self.beta))
        self._check()

    def _check(self):
        var, u, v, w = self.variant, self.u, self.v, self.w
        dyn_u = var is Variant.FULL_DYN
        if u.ndim != (3 if dyn_u else 2) or u.shape != v.shape:
            raise ValidationError(f"u/v shapes {u.shape}/{v.shape} invalid for {var.value}")
        K = u.shape[-1]
        if var is Variant.W_STATIC:
            if w.shape != (K, K):
                raise ValidationError(f"w must have shape {(K, K)} for w-static, got {w.shape}")
        else:
            if w.ndim != 3 or w.shape[1:] != (K, K):
                raise ValidationError(f"w must have shape (S, {K}, {K}), got {w.shape}")
            if dyn_u and (u.shape[0] != w.shape[0] or self.beta.shape != (w.shape[0],)):
                raise ValidationError("full-dyn u, v, w and beta must share the step axis")
        if self.rec_lag not in (0, 1):
            raise ValidationError(f"rec_lag must be 0 or 1, got {self.rec_lag}")
        if (u < 0).any() or (v < 0).any() or (w < 0).any() or self.eta < 0:
            raise ValidationError("u, v, w and eta must be non-negative")
        betas = np.atleast_1d(self.beta)
        if (betas < 0).any() or (betas > 1).any():
            raise ValidationError("beta must lie in [0, 1]")

    # -- shape helpers ------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return self.u.shape[-2]

    @property
    def K(self) -> int:
        return self.u.shape[-1]

    @property
    def n_steps(self) -> Optional[int]:
        """Number of stored steps, ``None`` for w-static."""
        return None if self.variant is Variant.W_STATIC else self.w.shape[0]

    def _clip(self, t: int) -> int:
        if t < 0:
            raise ValidationError(f"negative step {t}")
        return min(t, self.w.shape[0] - 1)

    def u_at(self, t: int) -> np.ndarray:
        return self.u[self._clip(t)] if self.variant is Variant.FULL_DYN else self.u

    def v_at(self, t: int) -> np.ndarray:
        return self.v[self._clip(t)] if self.variant is Variant.FULL_DYN else self.v

    def w_at(self, t: int) -> np.ndarray:
        return self.w if self.variant is Variant.W_STATIC else self.w[self._clip(t)]

    def beta_at(self, t: int) -> float:
        """Removal probability applied at step ``t >= 1``."""
        if self.variant is Variant.FULL_DYN:
            return float(self.beta[max(1, self._clip(t))]) if len(self.beta) > 1 else 1.0
        return float(self.beta)

    def beta_hat(self, t: int) -> float:
        return 1.0 if t == 0 else self.beta_at(t)

    @property
    def mu(self):
        """Continuous-time removal rate ``-log(1 - beta)``."""
        b = np.asarray(self.beta)
        if (b >= 1).any():
            raise ValidationError("mu is infinite for beta = 1")
        out = -np.log1p(-b)
        return float(out) if out.ndim == 0 else out

    def lambda_matrix(self, t: int) -> np.ndarray:
        """Dense community rates ``lambda_ij(t)`` (diagonal included)."""
        return self.u_at(t) @ self.w_at(t) @ self.v_at(t).T

    def expanded(self, n_steps: int):
        """Per-step views ``(U, V, W, betas)`` with leading axis ``n_steps``."""
        N, K = self.n_nodes, self.K
        if self.variant is Variant.FULL_DYN:
            U, V = self.u, self.v
            betas = self.beta.copy()
        else:
            U = np.broadcast_to(self.u, (n_steps, N, K))
            V = np.broadcast_to(self.v, (n_steps, N, K))
            betas = np.full(n_steps, self.beta)
        W = np.broadcast_to(self.w, (n_steps, K, K)) if self.variant is Variant.W_STATIC else self.w
        if U.shape[0] != n_steps or W.shape[0] != n_steps:
            raise ValidationError(f"parameters cover {W.shape[0]} steps, network has {n_steps}")
        betas = np.asarray(betas, dtype=float)
        betas[0] = 1.0
        return U, V, W, betas

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        def arr(x):
            x = np.asarray(x, dtype=float)
            return {"shape": list(x.shape), "data": x.ravel(order="C").tolist()}

        beta = arr(self.beta) if self.variant is Variant.FULL_DYN else float(self.beta)
        return {
            "variant": self.variant.value,
            "rec_lag": int(self.rec_lag),
            "n_nodes": int(self.n_nodes),
            "K": int(self.K),
            "eta": float(self.eta),
            "beta": beta,
            "u": arr(self.u),
            "v": arr(self.v),
            "w": arr(self.w),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        def arr(x):
            return np.asarray(x["data"], dtype=float).reshape(x["shape"])

        beta = d["beta"]
        beta = arr(beta) if isinstance(beta, dict) else float(beta)
        return cls(Variant.parse(d["variant"]), arr(d["u"]), arr(d["v"]), arr(d["w"]),
                   float(d["eta"]), beta, int(d.get("rec_lag", 1)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# scalar pieces
# ---------------------------------------------------------------------------

def lambda0(params: ModelParams, i: int, j: int, t: int = 0) -> float:
    """Community part of the rate, ``sum_kq u_ik v_jq w_kq(t)``."""
    N = params.n_nodes
    if not (0 <= i < N and 0 <= j < N):
        raise ValidationError(f"node index out of range for N={N}")
    return float(params.u_at(t)[i] @ params.w_at(t) @ params.v_at(t)[j])


def transition_probs(lambda0: float, eta: float, a_rec: float, beta: float) -> TransitionProbs:
    """Kernel weights for ``A_ij(t-1) -> A_ij(t)`` with ``M = lambda0 + eta * a_rec``."""
    if min(lambda0, eta, a_rec, beta) < 0 or beta > 1:
        raise ValidationError("transition inputs must be non-negative with beta in [0, 1]")
    bm = beta * (lambda0 + eta * a_rec)
    e = math.exp(-bm)
    return TransitionProbs(p00=e, p01=bm * e, p10=beta * e, p11=(1.0 - beta) * e)


def expected_edge(params: ModelParams, prev_A_ij: int, prev_A_ji: float,
                  i: int, j: int, t: int) -> float:
    """Forecast score ``E[A_ij(t)]`` given the previous snapshot.

    ``beta * (lambda_ij(t) + eta * A_ji(t-1))`` (clamped to [0, 1]) for an
    absent edge and ``1 - beta`` for an existing one.
    """
    if t < 1:
        raise ValidationError("expected_edge needs a previous snapshot (t >= 1)")
    beta = params.beta_at(t)
    if prev_A_ij > 0:
        return 1.0 - beta
    score = beta * (lambda0(params, i, j, t) + params.eta * prev_A_ji)
    return min(max(score, 0.0), 1.0)


def expected_edge_matrix(params: ModelParams, prev, t: int) -> np.ndarray:
    """Vectorized :func:`expected_edge` over all pairs; ``prev`` is ``A(t-1)``."""
    if t < 1:
        raise ValidationError("expected_edge needs a previous snapshot (t >= 1)")
    prev = prev.toarray() if sp.issparse(prev) else np.asarray(prev)
    prev = (prev > 0).astype(float)
    beta = params.beta_at(t)
    new = np.clip(beta * (params.lambda_matrix(t) + params.eta * prev.T), 0.0, 1.0)
    return np.where(prev > 0, 1.0 - beta, new)


# ---------------------------------------------------------------------------
# sufficient statistics
# ---------------------------------------------------------------------------

def _binary(m: sp.spmatrix) -> sp.csr_matrix:
    b = sp.csr_matrix(m, dtype=np.float64, copy=True)
    b.data[:] = 1.0
    b.eliminate_zeros()
    return b


@dataclass
class NetworkStats:
    """Everything the likelihood and EM need from a network.

    ``observed`` (optional, shape ``(S, N, N)``) marks the entries whose
    factors enter the likelihood; masked entries are dropped from every sum.
    Without it every ordered pair ``i != j`` is observed.

    Events are the entries with ``A_hat_ij(t) > 0``, where
    ``A_hat(0) = A(0)`` (weighted) and ``A_hat(t) = A(t) (1 - A(t-1))``.
    """

    n_nodes: int
    n_steps: int
    rec_lag: int
    ev_t: np.ndarray
    ev_i: np.ndarray
    ev_j: np.ndarray
    ev_w: np.ndarray
    ev_r: np.ndarray
    n_new: np.ndarray
    n_removed: np.ndarray
    n_persist: np.ndarray
    r_sum: np.ndarray
    log_fact0: float
    observed: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def build(cls, net: TemporalNetwork, rec_lag: int = 1,
              observed: Optional[np.ndarray] = None) -> "NetworkStats":
        if rec_lag not in (0, 1):
            raise ValidationError(f"rec_lag must be 0 or 1, got {rec_lag}")
        N, S = net.n_nodes, net.n_steps
        if observed is not None:
            observed = np.asarray(observed, dtype=float)
            if observed.shape != (S, N, N):
                raise ValidationError(f"observed mask must have shape {(S, N, N)}")
            observed = observed.copy()
            idx = np.arange(N)
            observed[:, idx, idx] = 0.0

        def mask(m, t):
            m = sp.csr_matrix(m)
            m = m - sp.diags(m.diagonal()) if N else m
            if observed is not None:
                m = m.multiply(observed[t]).tocsr()
            m.eliminate_zeros()
            return m.tocoo()

        ev = []
        n_new = np.zeros(S)
        n_removed = np.zeros(S)
        n_persist = np.zeros(S)
        r_sum = np.zeros(S)
        B = [_binary(m) for m in net.snapshots]

        a0 = mask(sp.csr_matrix(net.snapshots[0], dtype=np.float64), 0)
        ev.append((np.zeros(a0.nnz, dtype=np.int64), a0.row, a0.col, a0.data, np.zeros(a0.nnz)))
        n_new[0] = a0.data.sum()
        log_fact0 = float(gammaln(a0.data + 1.0).sum())

        for t in range(1, S):
            rec = (B[t - 1] if rec_lag == 1 else B[t]).T.tocsr()
            new = B[t] - B[t].multiply(B[t - 1])
            new_c = mask(new, t)
            r_at = np.asarray(rec[new_c.row, new_c.col]).ravel() if new_c.nnz else np.zeros(0)
            ev.append((np.full(new_c.nnz, t, dtype=np.int64), new_c.row, new_c.col,
                       new_c.data, r_at))
            n_new[t] = new_c.data.sum()
            n_removed[t] = mask(B[t - 1] - B[t - 1].multiply(B[t]), t).data.sum()
            n_persist[t] = mask(B[t - 1].multiply(B[t]), t).data.sum()
            r_sum[t] = mask(rec, t).data.sum()

        cat = [np.concatenate(x) for x in zip(*ev)]
        return cls(N, S, rec_lag, cat[0].astype(np.int64), cat[1].astype(np.int64),
                   cat[2].astype(np.int64), cat[3].astype(float), cat[4].astype(float),
                   n_new, n_removed, n_persist, r_sum, log_fact0, observed)

    @property
    def n_events(self) -> int:
        return len(self.ev_t)

    # -- pair sums over observed entries -----------------------------------

    def row_sum(self, t: int, Y: np.ndarray) -> np.ndarray:
        """``sum_j O_ij(t) Y_j`` for every ``i``."""
        if self.observed is None:
            return Y.sum(axis=0)[None, :] - Y
        return self.observed[t] @ Y

    def col_sum(self, t: int, X: np.ndarray) -> np.ndarray:
        """``sum_i O_ij(t) X_i`` for every ``j``."""
        if self.observed is None:
            return X.sum(axis=0)[None, :] - X
        return self.observed[t].T @ X

    def pair_sum(self, t: int, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """``sum_ij O_ij(t) X_i^T Y_j`` as a K x K matrix."""
        if self.observed is None:
            return np.outer(X.sum(axis=0), Y.sum(axis=0)) - X.T @ Y
        return X.T @ (self.observed[t] @ Y)

    def event_factors(self, params: ModelParams):
        """Per-event ``u_i``, ``v_j``, ``u_i w(t)``, ``w(t) v_j`` (each (n, K)) and ``lambda`` (n,)."""
        U, V, W, _ = params.expanded(self.n_steps)
        if params.variant is Variant.FULL_DYN:
            Ue, Ve = U[self.ev_t, self.ev_i], V[self.ev_t, self.ev_j]
        else:
            Ue, Ve = params.u[self.ev_i], params.v[self.ev_j]
        uw = np.empty_like(Ue)
        wv = np.empty_like(Ve)
        for t, sl in enumerate(self.slices):
            uw[sl] = Ue[sl] @ W[t]
            wv[sl] = Ve[sl] @ W[t].T
        return Ue, Ve, uw, wv, np.einsum("ek,ek->e", uw, Ve)

    def event_rates(self, params: ModelParams):
        """Per-event ``u_ik v_jq w_kq(t)`` products (n, K, K) and ``lambda`` (n,)."""
        U, V, W, _ = params.expanded(self.n_steps)
        Ue = U[self.ev_t, self.ev_i]
        Ve = V[self.ev_t, self.ev_j]
        prod = Ue[:, :, None] * Ve[:, None, :] * W[self.ev_t]
        return prod, prod.sum(axis=(1, 2))

    @property
    def slices(self):
        bounds = np.searchsorted(self.ev_t, np.arange(self.n_steps + 1))
        return [slice(bounds[t], bounds[t + 1]) for t in range(self.n_steps)]

    def total_rate(self, params: ModelParams) -> np.ndarray:
        """Per-step ``sum_ij O_ij(t) (lambda_ij(t) + eta R_ij(t))``."""
        U, V, W, _ = params.expanded(self.n_steps)
        out = np.empty(self.n_steps)
        shared = None
        if self.observed is None and params.variant is not Variant.FULL_DYN:
            shared = self.pair_sum(0, params.u, params.v)
        for t in range(self.n_steps):
            P = shared if shared is not None else self.pair_sum(t, U[t], V[t])
            out[t] = (W[t] * P).sum() + params.eta * self.r_sum[t]
        return out


def _check_dims(net: TemporalNetwork, params: ModelParams):
    if params.n_nodes != net.n_nodes:
        raise ValidationError(f"params have {params.n_nodes} nodes, network has {net.n_nodes}")
    if params.n_steps is not None and params.n_steps != net.n_steps:
        raise ValidationError(f"params cover {params.n_steps} steps, network has {net.n_steps}")


def _xlogy(x, y, floor):
    y = np.maximum(y, floor) if floor > 0 else y
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x == 0, 0.0, x * np.log(y))
    return out


def stats_log_likelihood(stats: NetworkStats, params: ModelParams, floor: float = 0.0,
                         lam: Optional[np.ndarray] = None) -> float:
    if lam is None:
        lam = stats.event_factors(params)[-1]
    _, _, _, betas = params.expanded(stats.n_steps)
    rate = stats.total_rate(params)
    ll = -(betas * rate).sum()
    ll += _xlogy(stats.ev_w, lam + params.eta * stats.ev_r, floor).sum()
    ll -= stats.log_fact0
    b = betas[1:]
    ll += _xlogy(stats.n_new[1:] + stats.n_removed[1:], b, floor).sum()
    ll += _xlogy(stats.n_persist[1:], 1.0 - b, floor).sum()
    return float(ll)


def log_likelihood(net: TemporalNetwork, params: ModelParams, floor: float = 0.0,
                   observed: Optional[np.ndarray] = None) -> float:
    """Exact log-probability of all snapshots.

    Poisson terms for ``A(0)`` plus, for ``t >= 1`` on the binarized
    snapshots, ``log p`` of the observed transition of every ordered pair.
    ``floor`` > 0 clamps every log argument from below.
    """
    _check_dims(net, params)
    stats = NetworkStats.build(net, params.rec_lag, observed)
    return stats_log_likelihood(stats, params, floor)


def log_prior(params: ModelParams, hyper: Hyperparams, floor: float = LOG_FLOOR) -> float:
    """Gamma(a, b) log-density terms for u and v (zero for full-dyn)."""
    if params.variant is Variant.FULL_DYN:
        return 0.0
    a, b = hyper.a, hyper.b
    out = 0.0
    for x in (params.u, params.v):
        if a != 1:
            out += (a - 1) * np.log(np.maximum(x, floor)).sum()
        out -= b * x.sum()
    return float(out)


def stats_objective(stats: NetworkStats, params: ModelParams, hyper: Hyperparams,
                    lam: Optional[np.ndarray] = None) -> float:
    return stats_log_likelihood(stats, params, LOG_FLOOR, lam) + log_prior(params, hyper)


def regularized_objective(net: TemporalNetwork, params: ModelParams, hyper: Hyperparams,
                          observed: Optional[np.ndarray] = None) -> float:
    """Log-likelihood plus Gamma-prior terms for u and v, logs floored at 1e-12."""
    _check_dims(net, params)
    stats = NetworkStats.build(net, params.rec_lag, observed)
    return stats_objective(stats, params, hyper)
