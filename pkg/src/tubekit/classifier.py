"""Action-specific linear SVMs over fused appearance + motion features.

Each action gets its own model trained on ground-truth regions (positives)
against proposals overlapping that action's ground truth by less than
``neg_overlap`` (negatives), with hard negative mining.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Mapping, Sequence

import numpy as np

from tubekit.errors import InvalidInputError, TrainingError
from tubekit.geometry import boxes_to_array, pairwise_iou

if TYPE_CHECKING:
    from tubekit.corpus_io import Corpus

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class ActionModel:
    action: str
    w: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64).ravel()
        self.b = float(self.b)
        if not (np.all(np.isfinite(self.w)) and math.isfinite(self.b)):
            raise InvalidInputError(f"model {self.action!r} has non-finite parameters")

    @property
    def dim(self) -> int:
        return len(self.w)

    def __eq__(self, other):
        if not isinstance(other, ActionModel):
            return NotImplemented
        return self.action == other.action and self.b == other.b and np.array_equal(self.w, other.w)


@dataclass(frozen=True)
class TrainConfig:
    neg_overlap: float = 0.3
    C: float = 1.0
    hnm_rounds: int = 5
    initial_neg_per_pos: int = 10
    seed: int = 0
    # inner dual coordinate descent
    max_epochs: int = 10000
    tol: float = 1e-4

    def __post_init__(self):
        if not (0.0 <= self.neg_overlap < 1.0):
            raise InvalidInputError(f"neg_overlap must lie in [0, 1), got {self.neg_overlap}")
        if not self.C > 0:
            raise InvalidInputError(f"C must be positive, got {self.C}")
        if self.hnm_rounds < 1:
            raise InvalidInputError(f"hnm_rounds must be >= 1, got {self.hnm_rounds}")
        if self.initial_neg_per_pos < 1:
            raise InvalidInputError(f"initial_neg_per_pos must be >= 1, got {self.initial_neg_per_pos}")


@dataclass
class MiningRound:
    active_negatives: int
    new_violators: int
    epochs: int
    objective_entry: float
    objective_exit: float


@dataclass
class TrainingLog:
    """What happened during hard negative mining, for diagnostics and tests."""

    rounds: List[MiningRound] = field(default_factory=list)
    converged: bool = False
    active: np.ndarray | None = None  # indices into the negative set, in admission order


def fuse(phi_s, phi_m) -> np.ndarray:
    """Concatenate appearance then motion features into one vector."""
    s = np.asarray(phi_s, dtype=np.float64).ravel()
    m = np.asarray(phi_m, dtype=np.float64).ravel()
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(m))):
        raise InvalidInputError("feature vectors must be finite")
    return np.concatenate([s, m])


def score_region(model: ActionModel, phi) -> float:
    phi = np.asarray(phi, dtype=np.float64).ravel()
    if phi.shape[0] != model.dim:
        raise InvalidInputError(f"feature dim {phi.shape[0]} does not match model {model.action!r} dim {model.dim}")
    return float(np.dot(model.w, phi) + model.b)


def score_vector(models: Mapping[str, ActionModel], phi, actions: Sequence[str]) -> Dict[str, float]:
    """Per-action scores for one region, keyed in vocabulary order."""
    missing = [a for a in actions if a not in models]
    if missing:
        raise InvalidInputError(f"no model for actions {missing}")
    return {a: score_region(models[a], phi) for a in actions}


def score_matrix(model: ActionModel, X) -> np.ndarray:
    """Scores for every row of X (N, D); each entry equals score_region on that row."""
    X = np.asarray(X, dtype=np.float64).reshape(-1, model.dim)
    return np.array([np.dot(model.w, x) + model.b for x in X], dtype=np.float64)


def assign_training_labels(corpus: "Corpus", action: str, neg_overlap: float = 0.3):
    """Split corpus features into positives and negatives for one action.

    Positives are the features of proposals coinciding with a ground-truth box
    of ``action``. Negatives are proposals whose best IoU with that action's
    ground truth in the same frame is below ``neg_overlap``. Everything else is
    left out. Returns two (n, D) arrays.
    """
    if action not in corpus.actions:
        raise InvalidInputError(f"unknown action {action!r}")
    pos, neg = [], []
    n_gt = 0
    matched_gt = 0
    for (video, frame), props in corpus.proposals.items():
        gt = corpus.gt_boxes(video, frame, action)
        n_gt += len(gt)
        props = [p for p in props if (video, frame, p.region_id) in corpus.features]
        if not props:
            continue
        if gt:
            ov = pairwise_iou(boxes_to_array(p.box for p in props), boxes_to_array(gt))
            best = ov.max(axis=1)
        else:
            best = np.zeros(len(props))
        gt_set = set(gt)
        for p, o in zip(props, best):
            phi = corpus.fused_feature(video, frame, p.region_id)
            if p.box in gt_set:
                pos.append(phi)
                matched_gt += 1
            elif o < neg_overlap:
                neg.append(phi)
    if not pos:
        raise TrainingError(f"no positive examples for action {action!r}")
    if matched_gt < n_gt:
        logger.warning("action %s: %d of %d ground-truth boxes have no feature record", action, n_gt - matched_gt, n_gt)
    dim = len(pos[0])
    return np.array(pos).reshape(-1, dim), np.array(neg).reshape(-1, dim)


def hinge_objective(w_aug: np.ndarray, X_aug: np.ndarray, y: np.ndarray, C: float) -> float:
    """0.5 * ||(w, b)||^2 + C * sum(max(0, 1 - y * (X_aug @ (w, b))))."""
    margins = 1.0 - y * (X_aug @ w_aug)
    return 0.5 * float(w_aug @ w_aug) + C * float(np.maximum(0.0, margins).sum())


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def _dual_cd(X, y, C, alpha, w, rng, max_epochs, tol):
    """Dual coordinate descent with shrinking for the L1-loss linear SVM.

    The bias is folded into X as a constant column. Updates ``alpha`` and ``w``
    in place and returns (epochs, converged). Converged means the spread of
    projected gradients over all coordinates fell below ``tol``.
    """
    n = X.shape[0]
    qdiag = np.einsum("ij,ij->i", X, X)
    rows = list(X)
    active = np.arange(n)
    pg_max_old, pg_min_old = math.inf, -math.inf
    for epoch in range(1, max_epochs + 1):
        pg_max, pg_min = -math.inf, math.inf
        keep = []
        for i in active[rng.permutation(len(active))]:
            xi = rows[i]
            yi = y[i]
            g = yi * float(np.dot(w, xi)) - 1.0
            a = alpha[i]
            if a <= 0.0:
                if g > pg_max_old:
                    continue
                pg = min(g, 0.0)
            elif a >= C:
                if g < pg_min_old:
                    continue
                pg = max(g, 0.0)
            else:
                pg = g
            keep.append(i)
            if pg > pg_max:
                pg_max = pg
            if pg < pg_min:
                pg_min = pg
            if pg != 0.0:
                new = min(max(a - g / qdiag[i], 0.0), C)
                if new != a:
                    w += (new - a) * yi * xi
                    alpha[i] = new
        if not keep:
            pg_max = pg_min = 0.0
        if pg_max - pg_min < tol:
            if len(active) == n:
                return epoch, True
            # re-check every coordinate before declaring convergence
            active = np.arange(n)
            pg_max_old, pg_min_old = math.inf, -math.inf
            continue
        active = np.sort(np.array(keep, dtype=np.int64))
        pg_max_old = pg_max if pg_max > 0 else math.inf
        pg_min_old = pg_min if pg_min < 0 else -math.inf
    return max_epochs, False


def train_svm_logged(positives, negatives, config: TrainConfig = TrainConfig(), action: str = ""):
    """Train with hard negative mining; returns (ActionModel, TrainingLog)."""
    P = np.asarray(positives, dtype=np.float64)
    N = np.asarray(negatives, dtype=np.float64)
    if P.ndim != 2 or len(P) == 0:
        raise TrainingError(f"action {action!r}: need at least one positive example")
    if N.ndim != 2 or len(N) == 0:
        raise TrainingError(f"action {action!r}: need at least one negative example")
    if P.shape[1] != N.shape[1]:
        raise TrainingError(f"action {action!r}: positive dim {P.shape[1]} != negative dim {N.shape[1]}")
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(N))):
        raise TrainingError(f"action {action!r}: non-finite features")

    rng = np.random.default_rng(config.seed)
    Pa, Na = _augment(P), _augment(N)
    n_init = min(config.initial_neg_per_pos * len(P), len(N))
    active = np.sort(rng.choice(len(N), size=n_init, replace=False))
    in_active = np.zeros(len(N), dtype=bool)
    in_active[active] = True

    log = TrainingLog()
    w = np.zeros(Pa.shape[1])
    alpha_pos = np.zeros(len(P))
    alpha_neg = np.zeros(len(N))
    for rnd in range(1, config.hnm_rounds + 1):
        X = np.vstack([Pa, Na[active]])
        y = np.concatenate([np.ones(len(P)), -np.ones(len(active))])
        alpha = np.concatenate([alpha_pos, alpha_neg[active]])
        # warm start: w is consistent with alpha because inactive negatives hold alpha = 0
        w_entry = w.copy()
        obj_entry = hinge_objective(w_entry, X, y, config.C)
        epochs, ok = _dual_cd(X, y, config.C, alpha, w, rng, config.max_epochs, config.tol)
        if not ok:
            raise TrainingError(
                f"action {action!r}: dual coordinate descent did not converge in {config.max_epochs} epochs "
                f"(round {rnd}, {len(P)} positives, {len(active)} active negatives, tol {config.tol})"
            )
        obj_exit = hinge_objective(w, X, y, config.C)
        if obj_exit > obj_entry:
            w, obj_exit = w_entry, obj_entry
            alpha = np.concatenate([alpha_pos, alpha_neg[active]])
        alpha_pos = alpha[: len(P)]
        alpha_neg[active] = alpha[len(P):]

        scores = Na @ w
        violators = np.flatnonzero((scores > -1.0) & ~in_active)
        log.rounds.append(MiningRound(len(active), len(violators), epochs, obj_entry, obj_exit))
        logger.info("action %s round %d: %d active negatives, %d new violators, %d epochs",
                    action, rnd, len(active), len(violators), epochs)
        if len(violators) == 0:
            log.converged = True
            break
        if rnd == config.hnm_rounds:
            break
        in_active[violators] = True
        active = np.concatenate([active, violators])
    log.active = active
    return ActionModel(action, w[:-1].copy(), float(w[-1])), log


def train_svm(positives, negatives, config: TrainConfig = TrainConfig(), action: str = "") -> ActionModel:
    """Train a linear SVM for one action with hard negative mining.

    Minimizes 0.5 * ||(w, b)||^2 + C * sum(hinge) with the bias folded in as a
    constant feature. Mining starts from a seeded random subset of
    ``initial_neg_per_pos * len(positives)`` negatives and, after each solve,
    admits every negative scoring above -1. Deterministic given ``config.seed``.
    """
    return train_svm_logged(positives, negatives, config, action)[0]
