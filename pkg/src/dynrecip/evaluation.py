"""
Forecast AUC, held-out cross-validation, the eta = 0 ablation comparison and
reciprocity reproduction studies.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .em import BETA_FLOOR, FitResult, fit
from .errors import UndefinedAUCError, ValidationError
from .generator import GeneratorConfig, generate, sample_network
from .model import Hyperparams, ModelParams, Variant, expected_edge_matrix
from .temporal_graph import TemporalNetwork, reciprocity_series

_log = logging.getLogger(__name__)


def auc(scores, labels=None) -> float:
    """Mann-Whitney AUC; ties between a positive and a negative count 1/2.

    ``scores`` is either a sequence of ``(score, label)`` pairs or, with
    ``labels`` given, an array of scores.
    """
    if labels is None:
        pairs = np.asarray(list(scores), dtype=float).reshape(-1, 2)
        scores, labels = pairs[:, 0], pairs[:, 1]
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels) > 0
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _offdiag(n):
    return ~np.eye(n, dtype=bool)


def forecast_scores(params: ModelParams, net: TemporalNetwork, t: int):
    """Scores and labels of every ordered pair ``i != j`` at step ``t``."""
    if not 1 <= t < net.n_steps:
        raise ValidationError(f"forecast step must lie in [1, {net.T}], got {t}")
    scores = expected_edge_matrix(params, net.snapshots[t - 1], t)
    labels = net.snapshots[t].toarray() > 0
    mask = _offdiag(net.n_nodes)
    return scores[mask], labels[mask]


def forecast_auc(net: TemporalNetwork, hyper: Hyperparams, variant="w-dyn", t: int = 1,
                 rec_lag: int = 1, fix_eta: Optional[float] = None, return_fit: bool = False,
                 n_jobs: int = 1):
    """Fit on ``A(0..t-1)`` and score ``A(t)``.

    Parameters for step ``t`` are taken from the last fitted step ``t - 1``.
    """
    if t < 1:
        raise ValidationError("AUC cannot be computed for the first step (t = 0)")
    if t > net.T:
        raise ValidationError(f"t={t} is beyond the last snapshot {net.T}")
    res = fit(net.truncated(t), hyper, variant, rec_lag=rec_lag, fix_eta=fix_eta, n_jobs=n_jobs)
    score = auc(*forecast_scores(res.params, net, t))
    return (score, res) if return_fit else score


# ---------------------------------------------------------------------------
# ablation benchmark
# ---------------------------------------------------------------------------

def _compensated_mean_std(x: np.ndarray, axis=0):
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    mean = np.apply_along_axis(math.fsum, axis, x) / n
    dev = x - np.expand_dims(mean, axis)
    var = np.apply_along_axis(math.fsum, axis, dev * dev) / n
    return mean, np.sqrt(var)


def win_counts(a: np.ndarray, b: np.ndarray) -> Tuple[int, int, int]:
    """(wins of a, wins of b, ties) with strict comparison."""
    a, b = np.asarray(a), np.asarray(b)
    return int((a > b).sum()), int((a < b).sum()), int((a == b).sum())


@dataclass
class AUCReport:
    """Per-sample forecast AUCs of the full model and the eta = 0 ablation."""

    steps: List[int]
    full: np.ndarray  # (n_samples, n_steps)
    ablation: np.ndarray
    variant: str = "w-dyn"

    @property
    def n_samples(self) -> int:
        return self.full.shape[0]

    def wins(self) -> np.ndarray:
        """Per sample and step: 1 full wins, 0 ablation wins, 0.5 tie."""
        return np.where(self.full > self.ablation, 1.0,
                        np.where(self.full < self.ablation, 0.0, 0.5))

    def win_rate(self) -> np.ndarray:
        return self.wins().mean(axis=0)

    def summary(self) -> dict:
        fm, fs = _compensated_mean_std(self.full)
        am, as_ = _compensated_mean_std(self.ablation)
        out = {"variant": self.variant, "n_samples": self.n_samples, "steps": {}}
        for k, t in enumerate(self.steps):
            w, l, ti = win_counts(self.full[:, k], self.ablation[:, k])
            out["steps"][str(t)] = {
                "auc_full_mean": fm[k], "auc_full_std": fs[k],
                "auc_ablation_mean": am[k], "auc_ablation_std": as_[k],
                "full_wins": w, "ablation_wins": l, "ties": ti,
                "win_rate_full": float(self.win_rate()[k]),
            }
        return out

    def rows(self, experiment: str = "forecast_auc"):
        for s in range(self.n_samples):
            for k, t in enumerate(self.steps):
                yield (experiment, t, s, "auc_full", float(self.full[s, k]))
                yield (experiment, t, s, "auc_eta0", float(self.ablation[s, k]))
                yield (experiment, t, s, "full_wins", float(self.wins()[s, k]))


def compare_ablation(net: TemporalNetwork, hyper: Hyperparams, variant="w-dyn",
                     steps: Optional[Sequence[int]] = None, rec_lag: int = 1):
    """Forecast AUC of the full model and of the eta = 0 ablation at each step."""
    steps = list(range(1, net.n_steps)) if steps is None else list(steps)
    full = [forecast_auc(net, hyper, variant, t, rec_lag) for t in steps]
    abl = [forecast_auc(net, hyper, variant, t, rec_lag, fix_eta=0.0) for t in steps]
    return np.array(full), np.array(abl)


def forecast_benchmark(cfg: GeneratorConfig, hyper: Hyperparams, n_samples: int = 20,
                       variant="w-dyn", steps: Optional[Sequence[int]] = None,
                       progress=None) -> AUCReport:
    """Synthetic forecast experiment: ``n_samples`` networks, sample ``s`` seeded ``cfg.seed + s``."""
    steps = list(range(1, cfg.T + 1)) if steps is None else list(steps)
    full = np.empty((n_samples, len(steps)))
    abl = np.empty_like(full)
    for s in range(n_samples):
        c = GeneratorConfig(**{**cfg.__dict__, "seed": cfg.seed + s,
                               "structure_schedule": cfg.structure_schedule})
        net, _ = generate(c)
        full[s], abl[s] = compare_ablation(net, hyper, variant, steps)
        if progress is not None:
            progress(s, full[s], abl[s])
    return AUCReport(steps, full, abl, Variant.parse(variant).value)


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------

@dataclass
class CVMask:
    """Fold id of every entry ``(t, i, j)``; -1 on the diagonal."""

    fold_id: np.ndarray
    n_folds: int

    def observed(self, fold: int) -> np.ndarray:
        return ((self.fold_id >= 0) & (self.fold_id != fold)).astype(float)

    def held_out(self, fold: int) -> np.ndarray:
        return self.fold_id == fold

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_id[self.fold_id >= 0], minlength=self.n_folds)


def make_cv_mask(n_nodes: int, n_steps: int, n_folds: int = 5, seed=0) -> CVMask:
    """Uniformly random partition of all entries into folds of near-equal size."""
    if n_folds < 2:
        raise ValidationError("cross-validation needs n_folds >= 2")
    rng = np.random.default_rng(seed)
    off = np.broadcast_to(_offdiag(n_nodes), (n_steps, n_nodes, n_nodes))
    n = int(off.sum())
    folds = np.empty(n, dtype=np.int64)
    folds[rng.permutation(n)] = np.arange(n) % n_folds
    fold_id = np.full((n_steps, n_nodes, n_nodes), -1, dtype=np.int64)
    fold_id[off] = folds
    return CVMask(fold_id, n_folds)


def _entry_scores(params: ModelParams, net: TemporalNetwork) -> np.ndarray:
    """Score of every entry: ``P(A_ij(0) > 0)`` at t=0, the forecast score afterwards."""
    S, N = net.n_steps, net.n_nodes
    out = np.empty((S, N, N))
    out[0] = -np.expm1(-params.lambda_matrix(0))
    for t in range(1, S):
        out[t] = expected_edge_matrix(params, net.snapshots[t - 1], t)
    return out


@dataclass
class CVResult:
    fold_auc: List[Optional[float]]
    mask: CVMask = field(repr=False)

    @property
    def mean_auc(self) -> float:
        vals = [a for a in self.fold_auc if a is not None]
        return float(np.mean(vals)) if vals else float("nan")


def cross_validate(net: TemporalNetwork, hyper: Hyperparams, variant="w-dyn",
                   n_folds: int = 5, seed=0, rec_lag: int = 1,
                   fix_eta: Optional[float] = None) -> CVResult:
    """Held-out AUC with entries ``A_ij(t)`` masked fold by fold.

    Masked entries drop out of every likelihood sum during training; folds
    without positives (or negatives) are skipped with a warning.
    """
    mask = make_cv_mask(net.n_nodes, net.n_steps, n_folds, seed)
    labels = net.dense() > 0
    out = []
    for f in range(n_folds):
        res = fit(net, hyper, variant, rec_lag=rec_lag, fix_eta=fix_eta,
                  observed=mask.observed(f))
        held = mask.held_out(f)
        y = labels[held]
        if y.all() or not y.any():
            _log.warning("fold %d skipped: held-out entries are single-class", f)
            out.append(None)
            continue
        out.append(auc(_entry_scores(res.params, net)[held], y))
    return CVResult(out, mask)


def select_K(net: TemporalNetwork, K_values: Iterable[int], hyper: Hyperparams,
             variant="w-dyn", n_folds: int = 5, seed=0, rec_lag: int = 1):
    """Mean CV-AUC for each K and the best K (lowest K on ties)."""
    scores = {}
    for K in K_values:
        h = Hyperparams(**{**hyper.__dict__, "K": int(K)})
        scores[int(K)] = cross_validate(net, h, variant, n_folds, seed, rec_lag).mean_auc
    best = max(scores, key=lambda k: (scores[k], -k))
    return best, scores


# ---------------------------------------------------------------------------
# reciprocity reproduction
# ---------------------------------------------------------------------------

@dataclass
class ReciprocityStudy:
    real: np.ndarray  # (S,)
    samples: np.ndarray  # (n_samples, S)
    params: ModelParams = field(repr=False)
    degenerate: bool = False

    @property
    def mean(self) -> np.ndarray:
        return _compensated_mean_std(self.samples)[0]

    @property
    def std(self) -> np.ndarray:
        return _compensated_mean_std(self.samples)[1]

    def table(self) -> List[Tuple[float, float, float]]:
        return list(zip(self.real.tolist(), self.mean.tolist(), self.std.tolist()))

    def within(self, k: float = 3.0) -> np.ndarray:
        return np.abs(self.real - self.mean) <= k * self.std

    def rows(self, experiment: str = "reciprocity"):
        for t, val in enumerate(self.real):
            yield (experiment, t, "real", "reciprocity", float(val))
        for s, row in enumerate(self.samples):
            for t, val in enumerate(row):
                yield (experiment, t, s, "reciprocity", float(val))

    def summary(self) -> dict:
        return {
            "degenerate_fit": self.degenerate,
            "eta": self.params.eta,
            "beta": np.asarray(self.params.beta).tolist(),
            "steps": {str(t): {"real": r, "mean": m, "std": s}
                      for t, (r, m, s) in enumerate(self.table())},
        }


def reciprocity_study(net: TemporalNetwork, hyper: Hyperparams, variant="w-dyn",
                      n_samples: int = 5, seed=0, rec_lag: int = 1,
                      fix_eta: Optional[float] = None,
                      params: Optional[ModelParams] = None) -> ReciprocityStudy:
    """Fit, resample ``n_samples`` networks from the fit, compare per-step reciprocity."""
    if params is None:
        params = fit(net, hyper, variant, rec_lag=rec_lag, fix_eta=fix_eta).params
    seeds = np.random.SeedSequence(seed).spawn(n_samples)
    samples = np.array([reciprocity_series(sample_network(params, net.T, s))
                        for s in seeds])
    degenerate = net.T >= 1 and bool(np.min(np.atleast_1d(params.beta)[-net.T:]) <= BETA_FLOOR)
    if degenerate:
        _log.warning("beta at its floor: resampled dynamics are frozen")
    return ReciprocityStudy(reciprocity_series(net), samples, params, degenerate)


# ---------------------------------------------------------------------------
# report output
# ---------------------------------------------------------------------------

CSV_HEADER = ("experiment", "t", "sample", "metric", "value")


def long_csv(rows: Iterable[tuple]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_HEADER)
    for r in rows:
        wr.writerow([r[0], r[1], r[2], r[3], repr(float(r[4]))])
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


def summary_json(summary: dict) -> str:
    return json.dumps(_jsonable(summary), indent=1, sort_keys=True)
