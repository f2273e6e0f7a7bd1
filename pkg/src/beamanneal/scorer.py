"""Feature-hashing MLP scorer used as the learned reward model.

The featurizer maps a (state, candidate action) pair to a fixed vector:
a few scalars, a step-index one-hot, hashed character n-grams of the
action and state texts, and per-segment history hashes. Feature blocks are
L2-normalized independently so no block swamps the others. Hashing goes
through the compiled kernel when available.

The model itself is a small tanh MLP ending in a sigmoid, with weights in
one flat float64 vector so gradient checking and checkpointing stay simple.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from beamanneal.errors import DataFormatError, UsageError
from beamanneal.kernels import hash_text64, ngram_counts_into

CHECKPOINT_FORMAT_VERSION = 1

_SALT_ACTION = 0xA371
_SALT_STATE = 0x57A7E
_SALT_HISTORY = 0x41157


@dataclass(frozen=True)
class FeatureConfig:
    """Shape of the deterministic featurization."""

    step_slots: int = 21
    action_ngram_dim: int = 96
    state_ngram_dim: int = 64
    history_dim: int = 32
    ngram_min: int = 2
    ngram_max: int = 4
    segment_length: int = 30

    def __post_init__(self):
        if min(self.step_slots, self.action_ngram_dim, self.state_ngram_dim, self.history_dim) < 1:
            raise UsageError("all feature block sizes must be >= 1")
        if not (1 <= self.ngram_min <= self.ngram_max):
            raise UsageError("bad n-gram range")

    @property
    def dim(self) -> int:
        return 4 + self.step_slots + self.action_ngram_dim + self.state_ngram_dim + self.history_dim


def _l2_normalize(block: np.ndarray) -> None:
    norm = math.sqrt(float(block @ block))
    if norm > 0.0:
        block /= norm


def featurize(
    config: FeatureConfig,
    step_index: int,
    state_text: str,
    action_text: str,
    action_tokens: int,
) -> np.ndarray:
    out = np.zeros(config.dim, dtype=np.float64)
    slot = min(step_index, config.step_slots - 1)
    out[0] = 1.0
    out[1] = slot / config.step_slots
    out[2] = min(1.0, action_tokens / config.segment_length)
    out[3] = min(1.0, len(state_text) / 1000.0)
    base = 4
    out[base + slot] = 1.0
    base += config.step_slots
    block = out[base : base + config.action_ngram_dim]
    ngram_counts_into(action_text, config.ngram_min, config.ngram_max, _SALT_ACTION, block)
    _l2_normalize(block)
    base += config.action_ngram_dim
    block = out[base : base + config.state_ngram_dim]
    ngram_counts_into(state_text, config.ngram_min, config.ngram_max, _SALT_STATE, block)
    _l2_normalize(block)
    base += config.state_ngram_dim
    block = out[base : base + config.history_dim]
    for i, line in enumerate(state_text.split("\n")):
        if line:
            block[hash_text64(line, _SALT_HISTORY + i) % config.history_dim] += 1.0
    _l2_normalize(block)
    return out


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class ScorerModel:
    """Tanh MLP over hashed features; output squashed to (0, 1)."""

    def __init__(self, feature_config: FeatureConfig, hidden_dims: tuple[int, ...], weights: np.ndarray):
        self.feature_config = feature_config
        self.hidden_dims = tuple(int(h) for h in hidden_dims)
        if any(h < 1 for h in self.hidden_dims):
            raise UsageError("hidden dims must be >= 1")
        expected = self.param_count(feature_config.dim, self.hidden_dims)
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (expected,):
            raise UsageError(f"weights must have shape ({expected},), got {weights.shape}")
        self.weights = weights

    # -- layout --------------------------------------------------------------

    @staticmethod
    def layer_dims(feature_dim: int, hidden_dims: tuple[int, ...]) -> list[int]:
        return [feature_dim, *hidden_dims, 1]

    @classmethod
    def param_count(cls, feature_dim: int, hidden_dims: tuple[int, ...]) -> int:
        dims = cls.layer_dims(feature_dim, hidden_dims)
        return sum(dims[i + 1] * dims[i] + dims[i + 1] for i in range(len(dims) - 1))

    def _views(self, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        dims = self.layer_dims(self.feature_config.dim, self.hidden_dims)
        views = []
        offset = 0
        for i in range(len(dims) - 1):
            n_out, n_in = dims[i + 1], dims[i]
            w = flat[offset : offset + n_out * n_in].reshape(n_out, n_in)
            offset += n_out * n_in
            b = flat[offset : offset + n_out]
            offset += n_out
            views.append((w, b))
        return views

    @classmethod
    def initialize(
        cls,
        feature_config: FeatureConfig,
        hidden_dims: tuple[int, ...] = (32,),
        seed: int = 0,
    ) -> "ScorerModel":
        rng = np.random.default_rng(seed)
        dims = cls.layer_dims(feature_config.dim, hidden_dims)
        chunks = []
        for i in range(len(dims) - 1):
            n_out, n_in = dims[i + 1], dims[i]
            chunks.append(rng.normal(0.0, 1.0 / math.sqrt(n_in), size=n_out * n_in))
            chunks.append(np.zeros(n_out))
        return cls(feature_config, tuple(hidden_dims), np.concatenate(chunks))

    # -- forward/backward ------------------------------------------------------

    def forward(self, features: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Predictions plus the activation cache needed by :meth:`backward`."""
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        layers = self._views(self.weights)
        activations = [x]
        h = x
        for w, b in layers[:-1]:
            h = np.tanh(h @ w.T + b)
            activations.append(h)
        w_out, b_out = layers[-1]
        z = (h @ w_out.T + b_out)[:, 0]
        rhat = _sigmoid(z)
        return rhat, activations

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.forward(features)[0]

    def backward(self, activations: list[np.ndarray], dz: np.ndarray) -> np.ndarray:
        """Gradient of a loss wrt the flat weights, given dL/d(output logit)."""
        layers = self._views(self.weights)
        grad = np.zeros_like(self.weights)
        grad_views = self._views(grad)
        dz = np.asarray(dz, dtype=np.float64)

        w_out, _ = layers[-1]
        gw_out, gb_out = grad_views[-1]
        h_last = activations[-1]
        gw_out += dz[None, :] @ h_last
        gb_out += dz.sum()
        dh = dz[:, None] @ w_out
        for idx in range(len(layers) - 2, -1, -1):
            w, _ = layers[idx]
            gw, gb = grad_views[idx]
            h_out = activations[idx + 1]
            dzl = dh * (1.0 - h_out * h_out)
            gw += dzl.T @ activations[idx]
            gb += dzl.sum(axis=0)
            dh = dzl @ w
        return grad

    # -- scoring convenience -----------------------------------------------------

    def predict_fields(self, step_index: int, state_text: str, action_text: str, action_tokens: int) -> float:
        x = featurize(self.feature_config, step_index, state_text, action_text, action_tokens)
        return float(self.predict(x)[0])

    def predict_fields_batch(self, rows: list[dict]) -> np.ndarray:
        if not rows:
            return np.zeros(0)
        x = np.stack([featurize(self.feature_config, **row) for row in rows])
        return self.predict(x)


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(model: ScorerModel, path) -> None:
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "feature_config": asdict(model.feature_config),
        "hidden_dims": list(model.hidden_dims),
        "weights": base64.b64encode(
            model.weights.astype("<f8").tobytes()
        ).decode("ascii"),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> ScorerModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"checkpoint is not JSON: {exc}") from exc
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise DataFormatError(
            f"checkpoint version {doc.get('format_version')!r} unsupported"
        )
    try:
        feature_config = FeatureConfig(**doc["feature_config"])
        hidden_dims = tuple(doc["hidden_dims"])
        raw = base64.b64decode(doc["weights"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"bad checkpoint contents: {exc}") from exc
    weights = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return ScorerModel(feature_config, hidden_dims, weights)
