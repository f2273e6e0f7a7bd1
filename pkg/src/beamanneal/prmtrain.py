"""Reward-model objective and trainer.

Two loss terms over per-state candidate groups: a binary cross-entropy
"value" term against the soft rollout rewards, and a margin-gated pairwise
"rank" term over candidates whose target rewards differ by more than a
margin. Both average per group and then across groups, so states with many
candidates do not dominate. Gradients are analytic end to end and checked
against central finite differences in the test suite.

Training is deterministic given the config seed: plain mini-batch gradient
descent with a fixed learning rate over shuffled state groups, never
splitting a group across batches (the rank term needs groups intact).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from beamanneal.datagen import Dataset
from beamanneal.errors import TrainingDivergedError, UsageError
from beamanneal.scorer import FeatureConfig, ScorerModel, featurize
from beamanneal.seeding import TAG_TRAIN, hash_u64

_CLAMP = 1e-12
_MARGIN_GUARD = 1e-12  # float-noise guard; keeps "not strictly above" exact

LABEL_MODES = ("soft", "hard")


@dataclass(frozen=True)
class TrainingConfig:
    lam: float = 0.1
    delta: float = 0.3
    epochs: int = 2
    batch_size: int = 16
    learning_rate: float = 0.3
    label_mode: str = "soft"
    hard_threshold: float = 0.5
    include_rank: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise UsageError("lam must be >= 0")
        if not (0.0 <= self.delta < 1.0):
            raise UsageError("delta must lie in [0, 1)")
        if not (0.0 < self.hard_threshold < 1.0):
            raise UsageError("hard_threshold must lie in (0, 1)")
        if self.label_mode not in LABEL_MODES:
            raise UsageError(f"unknown label mode {self.label_mode!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise UsageError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise UsageError("learning_rate must be >= 0")

    @property
    def effective_lam(self) -> float:
        return self.lam if self.include_rank else 0.0


@dataclass
class Group:
    """All candidates of one (problem, step) state."""

    key: tuple[str, int]
    features: np.ndarray
    targets: np.ndarray


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    value_loss: float
    rank_loss: float
    total_loss: float


@dataclass(frozen=True)
class CalibrationBin:
    lower: float
    upper: float
    count: int
    mean_prediction: float
    mean_target: float


@dataclass
class ScorerMetrics:
    value_loss: float
    pairwise_accuracy: float | None
    pair_count: int
    calibration_bins: list[CalibrationBin] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Losses


def _check_groups(predictions, targets):
    if len(predictions) != len(targets) or not predictions:
        raise UsageError("predictions and targets must be nonempty and aligned")
    for p, t in zip(predictions, targets):
        if len(p) != len(t) or len(p) == 0:
            raise UsageError("each group must be nonempty with matching shapes")


def value_loss(predictions, targets) -> float:
    """Mean over states of mean over candidates of binary cross-entropy."""
    _check_groups(predictions, targets)
    per_state = []
    for preds, targs in zip(predictions, targets):
        p = np.clip(np.asarray(preds, dtype=np.float64), _CLAMP, 1.0 - _CLAMP)
        r = np.asarray(targs, dtype=np.float64)
        bce = -(r * np.log(p) + (1.0 - r) * np.log(1.0 - p))
        per_state.append(float(bce.mean()))
    return float(np.mean(per_state))


def pair_set(targets, delta: float) -> list[tuple[int, int]]:
    """Ordered index pairs whose target gap strictly exceeds ``delta``."""
    r = [float(v) for v in targets]
    n = len(r)
    return [
        (m, k)
        for m in range(n)
        for k in range(n)
        if (r[m] - r[k]) > delta + _MARGIN_GUARD
    ]


def rank_loss(predictions, targets, delta: float) -> float:
    """Mean over states of mean pairwise -log sigmoid(pred gap).

    States with no qualifying pair contribute zero; they stay in the outer
    mean unless every state is empty, in which case the loss is zero.
    """
    _check_groups(predictions, targets)
    per_state = []
    any_pairs = False
    for preds, targs in zip(predictions, targets):
        pairs = pair_set(targs, delta)
        if not pairs:
            per_state.append(0.0)
            continue
        any_pairs = True
        p = np.asarray(preds, dtype=np.float64)
        terms = [float(np.logaddexp(0.0, -(p[m] - p[k]))) for m, k in pairs]
        per_state.append(float(np.mean(terms)))
    if not any_pairs:
        return 0.0
    return float(np.mean(per_state))


def total_loss(value: float, rank: float, lam: float) -> float:
    return value + lam * rank


def apply_label_mode(targets, config: TrainingConfig) -> np.ndarray:
    """Soft mode is the identity; hard mode binarizes above the threshold."""
    arr = np.asarray(targets, dtype=np.float64)
    if config.label_mode == "soft":
        return arr.copy()
    return (arr > config.hard_threshold).astype(np.float64)


# ---------------------------------------------------------------------------
# Analytic gradient


def _forward_concat(model: ScorerModel, groups: list[Group]):
    x = np.concatenate([g.features for g in groups], axis=0)
    rhat, activations = model.forward(x)
    slices = []
    offset = 0
    for g in groups:
        slices.append(slice(offset, offset + len(g.targets)))
        offset += len(g.targets)
    return rhat, activations, slices


def loss_gradient(
    model: ScorerModel,
    groups: list[Group],
    config: TrainingConfig,
) -> tuple[np.ndarray, float, float]:
    """Gradient of value + lam*rank over the batch, plus both loss values."""
    if not groups:
        raise UsageError("gradient needs a nonempty batch")
    lam = config.effective_lam
    rhat, activations, slices = _forward_concat(model, groups)
    n_groups = len(groups)
    dz = np.zeros_like(rhat)
    drhat_rank = np.zeros_like(rhat)

    value_terms = []
    rank_terms = []
    any_pairs = False
    for g, sl in zip(groups, slices):
        p = rhat[sl]
        r = np.asarray(g.targets, dtype=np.float64)
        clamped = np.clip(p, _CLAMP, 1.0 - _CLAMP)
        bce = -(r * np.log(clamped) + (1.0 - r) * np.log(1.0 - clamped))
        value_terms.append(float(bce.mean()))
        inside = (p > _CLAMP) & (p < 1.0 - _CLAMP)
        dz[sl] += np.where(inside, p - r, 0.0) / (n_groups * len(r))

        pairs = pair_set(g.targets, config.delta)
        if not pairs:
            rank_terms.append(0.0)
            continue
        any_pairs = True
        terms = []
        weight = 1.0 / (n_groups * len(pairs))
        for m, k in pairs:
            d = p[m] - p[k]
            terms.append(float(np.logaddexp(0.0, -d)))
            coeff = (1.0 / (1.0 + math.exp(-d))) - 1.0  # sigmoid(d) - 1
            drhat_rank[sl.start + m] += coeff * weight
            drhat_rank[sl.start + k] -= coeff * weight
        rank_terms.append(float(np.mean(terms)))

    value = float(np.mean(value_terms))
    rank = float(np.mean(rank_terms)) if any_pairs else 0.0
    if lam != 0.0 and any_pairs:
        dz += lam * drhat_rank * rhat * (1.0 - rhat)
    grad = model.backward(activations, dz)
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise TrainingDivergedError(f"non-finite gradient at weight {bad}", epoch=-1, batch=-1)
    return grad, value, rank


# ---------------------------------------------------------------------------
# Dataset plumbing and the trainer


def prepare_groups(dataset: Dataset, feature_config: FeatureConfig) -> list[Group]:
    """Featurize a dataset into per-(problem, step) groups, sorted by key."""
    grouped = dataset.groups()
    out = []
    for key in sorted(grouped):
        members = grouped[key]
        feats = np.stack(
            [
                featurize(
                    feature_config,
                    step_index=t.step_index,
                    state_text=t.state_text,
                    action_text=t.action_text,
                    action_tokens=t.action_tokens,
                )
                for t in members
            ]
        )
        targets = np.array([t.reward for t in members], dtype=np.float64)
        out.append(Group(key=key, features=feats, targets=targets))
    return out


def _losses_over(model: ScorerModel, groups: list[Group], config: TrainingConfig):
    rhat, _, slices = _forward_concat(model, groups)
    preds = [rhat[sl] for sl in slices]
    targs = [g.targets for g in groups]
    v = value_loss(preds, targs)
    r = rank_loss(preds, targs, config.delta)
    return v, r, total_loss(v, r, config.effective_lam)


def train(
    dataset: Dataset,
    config: TrainingConfig,
    feature_config: FeatureConfig | None = None,
    hidden_dims: tuple[int, ...] = (32,),
) -> tuple[ScorerModel, list[EpochStats]]:
    """Fit a scorer on a triplet dataset; returns per-epoch loss history."""
    if feature_config is None:
        feature_config = FeatureConfig(segment_length=dataset.segment_length)
    groups = prepare_groups(dataset, feature_config)
    if not groups:
        raise UsageError("dataset has no groups")
    if config.include_rank and not any(len(g.targets) >= 2 for g in groups):
        raise UsageError("rank loss needs at least one multi-candidate group")
    for g in groups:
        g.targets = apply_label_mode(g.targets, config)

    model = ScorerModel.initialize(
        feature_config, hidden_dims, seed=hash_u64(config.seed, TAG_TRAIN)
    )
    rng = np.random.default_rng(hash_u64(config.seed, TAG_TRAIN, 1))
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(groups))
        for batch_no, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [groups[i] for i in order[start : start + config.batch_size]]
            grad, v, r = loss_gradient(model, batch, config)
            if not math.isfinite(total_loss(v, r, config.effective_lam)):
                raise TrainingDivergedError(
                    f"non-finite loss (value={v}, rank={r})", epoch=epoch, batch=batch_no
                )
            model.weights = model.weights - config.learning_rate * grad
        v, r, tot = _losses_over(model, groups, config)
        history.append(EpochStats(epoch=epoch + 1, value_loss=v, rank_loss=r, total_loss=tot))
    return model, history


def history_to_csv(history: list[EpochStats]) -> str:
    lines = ["epoch,value_loss,rank_loss,total"]
    for h in history:
        lines.append(f"{h.epoch},{h.value_loss!r},{h.rank_loss!r},{h.total_loss!r}")
    return "\n".join(lines) + "\n"


def evaluate_scorer(
    model: ScorerModel,
    dataset: Dataset,
    delta: float = 0.3,
) -> ScorerMetrics:
    """Held-out metrics: value loss, margin-pair ranking accuracy, calibration.

    Ranking credit is 1 for a correctly ordered pair, 0.5 for a tie. The
    value loss is always computed against the dataset's soft rewards.
    """
    if not dataset.triplets:
        raise UsageError("held-out dataset is empty")
    groups = prepare_groups(dataset, model.feature_config)
    rhat, _, slices = _forward_concat(model, groups)
    preds = [rhat[sl] for sl in slices]
    targs = [g.targets for g in groups]
    v = value_loss(preds, targs)

    credit = 0.0
    pairs_total = 0
    for p, t in zip(preds, targs):
        for m, k in pair_set(t, delta):
            pairs_total += 1
            if p[m] > p[k]:
                credit += 1.0
            elif p[m] == p[k]:
                credit += 0.5
    accuracy = credit / pairs_total if pairs_total else None

    flat_p = np.concatenate(preds)
    flat_t = np.concatenate(targs)
    bins = []
    for b in range(10):
        lo, hi = b / 10.0, (b + 1) / 10.0
        mask = (flat_p >= lo) & (flat_p < hi) if b < 9 else (flat_p >= lo) & (flat_p <= hi)
        if mask.any():
            bins.append(
                CalibrationBin(
                    lower=lo,
                    upper=hi,
                    count=int(mask.sum()),
                    mean_prediction=float(flat_p[mask].mean()),
                    mean_target=float(flat_t[mask].mean()),
                )
            )
    return ScorerMetrics(
        value_loss=v,
        pairwise_accuracy=accuracy,
        pair_count=pairs_total,
        calibration_bins=bins,
    )
