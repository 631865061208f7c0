"""Small trainable encoder: sparse input -> hidden layer (tanh or relu, with
inverted dropout) -> linear embedding, plus a sigmoid classifier head.

Forward and backward passes are written out by hand; the backward pass is
validated against central finite differences (see gradcheck). Dropout is
applied to the hidden activations only, with surviving units scaled by
1/(1 - rate) so evaluation mode needs no rescaling.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import Sample
from .mathops import make_rng, sigmoid

__all__ = [
    "CheckpointError",
    "EncoderConfig",
    "EncoderState",
    "ForwardTrace",
    "ParameterGradients",
    "backward",
    "classify",
    "forward",
    "init_state",
    "load_checkpoint",
    "save_checkpoint",
    "state_from_payload",
    "state_to_payload",
]

_ACTIVATIONS = ("tanh", "relu")
_CHECKPOINT_FORMAT = "knnmlc-encoder"
_CHECKPOINT_VERSION = 1
_PARAM_NAMES = ("w_in", "b_in", "w_emb", "b_emb", "w_clf", "b_clf")


class CheckpointError(ValueError):
    """Raised for unreadable or wrong-format checkpoint files."""


@dataclass
class EncoderConfig:
    input_dim: int
    hidden_dim: int
    embed_dim: int
    num_classes: int
    activation: str = "tanh"
    dropout_rate: float = 0.1

    def validate(self) -> None:
        if min(self.input_dim, self.hidden_dim, self.embed_dim, self.num_classes) < 1:
            raise ValueError("all encoder dimensions must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}, got {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")


@dataclass
class EncoderState:
    """All trainable parameters plus the hyperparameters that shape them.

    w_in: (hidden, input), w_emb: (embed, hidden), w_clf: (C, embed);
    biases match their layer's output dimension.
    """

    config: EncoderConfig
    w_in: np.ndarray
    b_in: np.ndarray
    w_emb: np.ndarray
    b_emb: np.ndarray
    w_clf: np.ndarray
    b_clf: np.ndarray
    init_seed: int = 0

    def param_items(self):
        return [(name, getattr(self, name)) for name in _PARAM_NAMES]

    def copy(self) -> "EncoderState":
        return EncoderState(
            config=self.config,
            init_seed=self.init_seed,
            **{name: getattr(self, name).copy() for name in _PARAM_NAMES},
        )


@dataclass
class ParameterGradients:
    w_in: np.ndarray
    b_in: np.ndarray
    w_emb: np.ndarray
    b_emb: np.ndarray
    w_clf: np.ndarray
    b_clf: np.ndarray

    @classmethod
    def zeros_like(cls, state: EncoderState) -> "ParameterGradients":
        return cls(**{name: np.zeros_like(arr) for name, arr in state.param_items()})

    def param_items(self):
        return [(name, getattr(self, name)) for name in _PARAM_NAMES]


@dataclass
class ForwardTrace:
    """Everything the backward pass needs: inputs, pre-activations,
    activations, the dropout mask (already scaled by 1/(1-rate); all-ones when
    dropout is off), the embedding, and the classifier logits."""

    feat_idx: np.ndarray
    feat_val: np.ndarray
    pre_hidden: np.ndarray
    hidden: np.ndarray
    mask: np.ndarray
    embedding: np.ndarray
    logits: np.ndarray


def init_state(config: EncoderConfig, seed: int = 0) -> EncoderState:
    """Uniform +-1/sqrt(fan_in) initialization for every tensor, seeded."""
    config.validate()
    rng = make_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return EncoderState(
        config=config,
        w_in=uniform((config.hidden_dim, config.input_dim), config.input_dim),
        b_in=uniform(config.hidden_dim, config.input_dim),
        w_emb=uniform((config.embed_dim, config.hidden_dim), config.hidden_dim),
        b_emb=uniform(config.embed_dim, config.hidden_dim),
        w_clf=uniform((config.num_classes, config.embed_dim), config.embed_dim),
        b_clf=uniform(config.num_classes, config.embed_dim),
        init_seed=seed,
    )


def _feature_arrays(sample: Sample, input_dim: int):
    if not sample.features:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    idx = np.fromiter(sample.features.keys(), dtype=np.int64, count=len(sample.features))
    if idx.size and (idx.min() < 0 or idx.max() >= input_dim):
        raise ValueError(
            f"feature index out of range for input_dim={input_dim}: {int(idx.max())}"
        )
    val = np.fromiter(sample.features.values(), dtype=np.float64, count=len(sample.features))
    return idx, val


def forward(
    state: EncoderState,
    sample: Sample,
    dropout_mode: str = "off",
    rng: np.random.Generator | None = None,
    mask_override: np.ndarray | None = None,
) -> ForwardTrace:
    """Run the network on one sample.

    dropout_mode "off" is fully deterministic; "on" draws one Bernoulli mask
    over the hidden units from ``rng`` (or uses ``mask_override``, which is
    how the gradient check freezes masks).
    """
    cfg = state.config
    idx, val = _feature_arrays(sample, cfg.input_dim)

    pre_hidden = state.b_in + state.w_in[:, idx] @ val
    if cfg.activation == "tanh":
        hidden = np.tanh(pre_hidden)
    else:
        hidden = np.maximum(pre_hidden, 0.0)

    if mask_override is not None:
        mask = np.asarray(mask_override, dtype=np.float64)
        if mask.shape != hidden.shape:
            raise ValueError(f"mask shape {mask.shape} != hidden shape {hidden.shape}")
    elif dropout_mode == "on" and cfg.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("dropout_mode='on' requires an rng")
        keep = rng.random(cfg.hidden_dim) >= cfg.dropout_rate
        mask = keep.astype(np.float64) / (1.0 - cfg.dropout_rate)
    elif dropout_mode in ("on", "off"):
        mask = np.ones(cfg.hidden_dim, dtype=np.float64)
    else:
        raise ValueError(f"dropout_mode must be 'on' or 'off', got {dropout_mode!r}")

    dropped = hidden * mask
    embedding = state.b_emb + state.w_emb @ dropped
    logits = state.b_clf + state.w_clf @ embedding
    return ForwardTrace(
        feat_idx=idx,
        feat_val=val,
        pre_hidden=pre_hidden,
        hidden=hidden,
        mask=mask,
        embedding=embedding,
        logits=logits,
    )


def classify(trace: ForwardTrace) -> np.ndarray:
    """Per-class probabilities: elementwise sigmoid of the logits."""
    return sigmoid(trace.logits)


def backward(
    state: EncoderState,
    trace: ForwardTrace,
    grad_embedding: np.ndarray | None = None,
    grad_logits: np.ndarray | None = None,
    into: ParameterGradients | None = None,
) -> ParameterGradients:
    """Reverse-mode gradients for every parameter, given upstream gradients on
    the embedding (contrastive path) and/or the logits (classification path).

    When ``into`` is provided, gradients are accumulated in place (used by the
    trainer to sum over a batch); otherwise a fresh buffer is returned.
    """
    cfg = state.config
    grads = into if into is not None else ParameterGradients.zeros_like(state)

    d_embedding = np.zeros(cfg.embed_dim) if grad_embedding is None else np.asarray(
        grad_embedding, dtype=np.float64
    )
    if d_embedding.shape != (cfg.embed_dim,):
        raise ValueError(f"grad_embedding shape {d_embedding.shape} != ({cfg.embed_dim},)")
    if grad_logits is not None:
        d_logits = np.asarray(grad_logits, dtype=np.float64)
        if d_logits.shape != (cfg.num_classes,):
            raise ValueError(f"grad_logits shape {d_logits.shape} != ({cfg.num_classes},)")
        grads.w_clf += np.outer(d_logits, trace.embedding)
        grads.b_clf += d_logits
        d_embedding = d_embedding + state.w_clf.T @ d_logits

    grads.w_emb += np.outer(d_embedding, trace.hidden * trace.mask)
    grads.b_emb += d_embedding
    d_dropped = state.w_emb.T @ d_embedding
    d_hidden = d_dropped * trace.mask
    if cfg.activation == "tanh":
        d_pre = d_hidden * (1.0 - trace.hidden**2)
    else:
        d_pre = d_hidden * (trace.pre_hidden > 0.0)

    grads.b_in += d_pre
    if trace.feat_idx.size:
        grads.w_in[:, trace.feat_idx] += np.outer(d_pre, trace.feat_val)
    return grads


def state_to_payload(state: EncoderState) -> dict:
    """JSON-ready dict holding dims, hyperparameters, and all tensors.
    float64 values round-trip exactly because json uses shortest-repr
    formatting."""
    cfg = state.config
    return {
        "format": _CHECKPOINT_FORMAT,
        "version": _CHECKPOINT_VERSION,
        "dims": {
            "input_dim": cfg.input_dim,
            "hidden_dim": cfg.hidden_dim,
            "embed_dim": cfg.embed_dim,
            "num_classes": cfg.num_classes,
        },
        "activation": cfg.activation,
        "dropout_rate": cfg.dropout_rate,
        "init_seed": state.init_seed,
        "params": {name: arr.tolist() for name, arr in state.param_items()},
    }


def save_checkpoint(state: EncoderState, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(state_to_payload(state), fh)


_PARAM_SHAPES = {
    "w_in": lambda c: (c.hidden_dim, c.input_dim),
    "b_in": lambda c: (c.hidden_dim,),
    "w_emb": lambda c: (c.embed_dim, c.hidden_dim),
    "b_emb": lambda c: (c.embed_dim,),
    "w_clf": lambda c: (c.num_classes, c.embed_dim),
    "b_clf": lambda c: (c.num_classes,),
}


def state_from_payload(payload: dict, source: str = "<payload>") -> EncoderState:
    if not isinstance(payload, dict) or payload.get("format") != _CHECKPOINT_FORMAT:
        raise CheckpointError(f"{source}: wrong or missing format marker")
    if payload.get("version") != _CHECKPOINT_VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {payload.get('version')!r}")
    try:
        dims = payload["dims"]
        config = EncoderConfig(
            input_dim=int(dims["input_dim"]),
            hidden_dim=int(dims["hidden_dim"]),
            embed_dim=int(dims["embed_dim"]),
            num_classes=int(dims["num_classes"]),
            activation=payload["activation"],
            dropout_rate=float(payload["dropout_rate"]),
        )
        config.validate()
        params = {}
        for name in _PARAM_NAMES:
            arr = np.asarray(payload["params"][name], dtype=np.float64)
            expected = _PARAM_SHAPES[name](config)
            if arr.shape != expected:
                raise CheckpointError(
                    f"{source}: parameter {name} has shape {arr.shape}, expected {expected}"
                )
            params[name] = arr
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{source}: malformed checkpoint ({exc})") from exc
    return EncoderState(config=config, init_seed=int(payload.get("init_seed", 0)), **params)


def load_checkpoint(path) -> EncoderState:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: not a valid checkpoint ({exc})") from exc
    return state_from_payload(payload, source=str(path))
