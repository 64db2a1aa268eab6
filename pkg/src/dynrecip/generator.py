"""
Sampling synthetic dynamic networks from the model.

The initial snapshot is Poisson with mean ``lambda_ij(0)`` (no reciprocity).
At each later step an existing edge survives with probability ``1 - beta``;
an absent edge appears with probability ``1 - exp(-beta (lambda_ij(t) + eta A_ji(t-1)))``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .model import ModelParams, Variant
from .temporal_graph import TemporalNetwork

ASSORTATIVE = "assortative"
DISASSORTATIVE = "disassortative"


def default_schedule(T: int) -> Tuple[str, ...]:
    """Assortative up to step 3, disassortative afterwards."""
    return tuple(ASSORTATIVE if t <= 3 else DISASSORTATIVE for t in range(T + 1))


@dataclass
class GeneratorConfig:
    n_nodes: int = 500
    K: int = 3
    avg_degree: float = 5.0
    eta: float = 0.5
    beta: float = 0.2
    T: int = 6
    structure_schedule: Optional[Sequence[str]] = None
    ratio: float = 10.0  # c_in / c_out
    binarize: bool = True
    seed: int = 0
    params: Optional[ModelParams] = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValidationError("n_nodes must be >= 1")
        if self.K < 1:
            raise ValidationError("K must be >= 1")
        if self.params is None and self.K > self.n_nodes:
            raise ValidationError(f"K={self.K} exceeds n_nodes={self.n_nodes}")
        if not 0 <= self.beta <= 1:
            raise ValidationError(f"beta must lie in [0, 1], got {self.beta}")
        if self.eta < 0:
            raise ValidationError(f"eta must be non-negative, got {self.eta}")
        if self.T < 0:
            raise ValidationError("T must be non-negative")
        if self.avg_degree < 0 or self.ratio <= 0:
            raise ValidationError("avg_degree must be >= 0 and ratio > 0")
        if self.structure_schedule is None:
            self.structure_schedule = default_schedule(self.T)
        self.structure_schedule = tuple(self.structure_schedule)
        if len(self.structure_schedule) != self.T + 1:
            raise ValidationError("structure_schedule needs one entry per step 0..T")
        bad = set(self.structure_schedule) - {ASSORTATIVE, DISASSORTATIVE}
        if bad:
            raise ValidationError(f"unknown structure tags {sorted(bad)}")

    @property
    def membership_mode(self) -> str:
        return "explicit" if self.params is not None else "hard-equal-size"

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("params")
        d["structure_schedule"] = list(self.structure_schedule)
        d["membership_mode"] = self.membership_mode
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def block_sizes(n: int, K: int) -> np.ndarray:
    return np.array([n // K + (1 if k < n % K else 0) for k in range(K)])


def planted_params(cfg: GeneratorConfig) -> ModelParams:
    """Hard equal-size blocks with a per-step assortative/disassortative affinity.

    ``w(t)`` has ``c_in`` on the diagonal and ``c_out = c_in / ratio`` off it
    (swapped for disassortative steps). ``c_in`` is chosen so that the
    expected out-degree of ``A(0)`` over pairs ``i != j`` equals
    ``cfg.avg_degree``.
    """
    if cfg.params is not None:
        raise ValidationError("planted_params requires hard-equal-size membership")
    N, K = cfg.n_nodes, cfg.K
    sizes = block_sizes(N, K)
    labels = np.repeat(np.arange(K), sizes)
    u = np.zeros((N, K))
    u[np.arange(N), labels] = 1.0
    # ordered pairs i != j between blocks k and q
    pairs = np.outer(sizes, sizes) - np.diag(sizes)

    def pattern(tag):
        eye = np.eye(K, dtype=bool)
        if tag == ASSORTATIVE:
            return np.where(eye, 1.0, 1.0 / cfg.ratio)
        return np.where(eye, 1.0 / cfg.ratio, 1.0)

    w0 = pattern(cfg.structure_schedule[0])
    mass = (w0 * pairs).sum()
    c_in = cfg.avg_degree * N / mass if mass > 0 else 0.0
    w = np.stack([c_in * pattern(tag) for tag in cfg.structure_schedule])
    return ModelParams(Variant.W_DYN, u, u.copy(), w, cfg.eta, cfg.beta, rec_lag=1)


def _offdiag(n: int) -> np.ndarray:
    return ~np.eye(n, dtype=bool)


def sample_initial(params: ModelParams, seed=None, binarize: bool = True) -> sp.csr_matrix:
    """Independent Poisson draws with mean ``lambda_ij(0)`` for every ``i != j``."""
    rng = np.random.default_rng(seed)
    lam = params.lambda_matrix(0)
    a = rng.poisson(np.where(_offdiag(len(lam)), lam, 0.0))
    if binarize:
        a = np.minimum(a, 1)
    return sp.csr_matrix(a)


def step(prev, params: ModelParams, t: int, seed=None) -> sp.csr_matrix:
    """Draw ``A(t)`` from ``A(t-1)``.

    Existing edges survive with probability ``1 - beta``; absent ones appear
    with probability ``1 - exp(-beta M)``, ``M = lambda_ij(t) + eta A_ji(t-1)``.
    Survival and appearance are exclusive within a step.
    """
    if t < 1:
        raise ValidationError("step needs t >= 1")
    rng = np.random.default_rng(seed)
    prev = prev.toarray() if sp.issparse(prev) else np.asarray(prev)
    prev = prev > 0
    n = prev.shape[0]
    beta = params.beta_at(t)
    rate = beta * (params.lambda_matrix(t) + params.eta * prev.T)
    p_new = -np.expm1(-rate)
    draw = rng.random((n, n))
    nxt = np.where(prev, draw < 1.0 - beta, draw < p_new) & _offdiag(n)
    return sp.csr_matrix(nxt.astype(np.int64))


def sample_network(params: ModelParams, T: int, seed=None, binarize: bool = True) -> TemporalNetwork:
    """Chain :func:`sample_initial` and ``T`` calls to :func:`step`."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(T + 1)
    snaps = [sample_initial(params, children[0], binarize)]
    for t in range(1, T + 1):
        snaps.append(step(snaps[-1], params, t, children[t]))
    return TemporalNetwork(params.n_nodes, tuple(snaps))


def generate(cfg: GeneratorConfig) -> Tuple[TemporalNetwork, ModelParams]:
    """Sample a network and return it with the generating parameters."""
    params = cfg.params if cfg.params is not None else planted_params(cfg)
    if cfg.params is not None:
        if params.n_steps is not None and params.n_steps < cfg.T + 1:
            raise ValidationError("explicit params cover fewer steps than cfg.T + 1")
    net = sample_network(params, cfg.T, cfg.seed, cfg.binarize)
    return net, params
