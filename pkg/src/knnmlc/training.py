"""Minibatch training loop: duplicated dropout-augmented batches, hand-rolled
Adam with bias correction, validation-based model selection, and resumable
checkpoints.

Each iteration draws N samples (shuffled epochs without replacement), runs
them through the encoder twice with independent dropout masks, sums binary
cross entropy over all 2N classifier outputs, adds alpha times the
contrastive loss over the 2N embeddings, backpropagates both paths, and takes
one Adam step. The state with the best validation micro-F1 (classifier-only,
threshold 0.5) is kept as the result.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .encoder import (
    CheckpointError,
    EncoderConfig,
    EncoderState,
    ForwardTrace,
    ParameterGradients,
    backward,
    classify,
    forward,
    init_state,
    state_from_payload,
    state_to_payload,
)
from .losses import (
    CONTRASTIVE_VARIANTS,
    BatchViews,
    bce_loss,
    contrastive_embedding_grads,
    contrastive_loss,
    total_loss,
)
from .mathops import make_rng
from .metrics import confusion, micro_prf

__all__ = [
    "AdamState",
    "TrainConfig",
    "Trainer",
    "adam_step",
    "batch_gradients",
    "batch_objective",
    "train",
]

_TRAINER_FORMAT = "knnmlc-trainer"
_TRAINER_VERSION = 1


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 5e-5
    alpha: float = 0.1
    tau1: float = 0.05
    max_iters: int = 500
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    variant: str = "dcl"
    dropout_rate: float | None = None  # None -> keep the encoder config's rate
    eval_every: int = 0  # 0 -> validate once per epoch

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be >= 0")
        if self.alpha < 0.0:
            raise ValueError("alpha must be >= 0")
        if self.tau1 <= 0.0:
            raise ValueError("tau1 must be > 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.variant not in CONTRASTIVE_VARIANTS:
            raise ValueError(f"variant must be one of {CONTRASTIVE_VARIANTS}")
        if not 0.0 < self.adam_beta1 < 1.0 or not 0.0 < self.adam_beta2 < 1.0:
            raise ValueError("adam betas must lie in (0, 1)")
        if self.adam_eps <= 0.0:
            raise ValueError("adam_eps must be > 0")
        if self.dropout_rate is not None and not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.eval_every < 0:
            raise ValueError("eval_every must be >= 0")


@dataclass
class AdamState:
    """First/second moment buffers per parameter tensor plus the step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, state: EncoderState) -> "AdamState":
        return cls(
            m={name: np.zeros_like(arr) for name, arr in state.param_items()},
            v={name: np.zeros_like(arr) for name, arr in state.param_items()},
        )


def adam_step(
    state: EncoderState,
    grads: ParameterGradients,
    adam: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> EncoderState:
    """One bias-corrected Adam update, applied to the state in place."""
    b1, b2 = betas
    adam.step += 1
    t = adam.step
    for name, theta in state.param_items():
        g = getattr(grads, name)
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {name} shape {theta.shape}")
        m = adam.m[name]
        v = adam.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        theta -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def _batch_traces(state, views, rng=None, masks=None, dropout_mode="on"):
    traces: list[ForwardTrace] = []
    for i, sample in enumerate(views):
        override = None if masks is None else masks[i]
        traces.append(forward(state, sample, dropout_mode=dropout_mode, rng=rng, mask_override=override))
    return traces


def _batch_losses(state, views, traces, tau1, variant):
    labels = np.stack([s.labels for s in views])
    embeddings = np.stack([t.embedding for t in traces])
    bce_total = 0.0
    logit_grads = []
    for i, trace in enumerate(traces):
        loss_i, grad_i = bce_loss(classify(trace), labels[i])
        bce_total += loss_i
        logit_grads.append(grad_i)
    con, grad_sims = contrastive_loss(BatchViews(embeddings, labels), tau1, variant)
    return bce_total, con, embeddings, grad_sims, logit_grads


def batch_objective(state, views, masks, alpha, tau1, variant="dcl") -> float:
    """Total loss of a duplicated batch under fixed dropout masks. This is the
    scalar the finite-difference gradient check perturbs; it never touches the
    backward pass."""
    traces = _batch_traces(state, views, masks=masks)
    bce_total, con, _, _, _ = _batch_losses(state, views, traces, tau1, variant)
    return total_loss(bce_total, con, alpha)


def batch_gradients(state, views, alpha, tau1, variant="dcl", rng=None, masks=None):
    """Forward the 2N views, evaluate both objectives, and backpropagate both
    paths into one accumulated parameter gradient.

    Returns (bce, con, total, grads, masks_used).
    """
    traces = _batch_traces(state, views, rng=rng, masks=masks)
    bce_total, con, embeddings, grad_sims, logit_grads = _batch_losses(
        state, views, traces, tau1, variant
    )
    if alpha > 0.0:
        emb_grads = alpha * contrastive_embedding_grads(embeddings, grad_sims)
    else:
        emb_grads = np.zeros_like(embeddings)
    grads = ParameterGradients.zeros_like(state)
    for i, trace in enumerate(traces):
        backward(state, trace, grad_embedding=emb_grads[i], grad_logits=logit_grads[i], into=grads)
    return bce_total, con, total_loss(bce_total, con, alpha), grads, [t.mask for t in traces]


def classifier_micro_f1(state: EncoderState, samples, threshold: float = 0.5) -> float:
    """Micro-F1 of dropout-off classifier predictions thresholded at 0.5."""
    gold = np.stack([s.labels for s in samples])
    pred = np.stack(
        [(classify(forward(state, s, dropout_mode="off")) >= threshold).astype(np.int8) for s in samples]
    )
    return micro_prf(confusion(gold, pred))[2]


class Trainer:
    """Owns the encoder state, Adam buffers, RNG, and epoch bookkeeping.

    All randomness flows through one seeded generator in a fixed order
    (epoch shuffle, then one mask per view), so equal seeds give bit-identical
    trajectories and a saved checkpoint resumes exactly where it left off.
    """

    def __init__(self, train_samples, valid_samples, state: EncoderState, cfg: TrainConfig):
        cfg.validate()
        if not train_samples:
            raise ValueError("training set must be nonempty")
        if cfg.dropout_rate is not None:
            state.config.dropout_rate = cfg.dropout_rate
        self.train_samples = list(train_samples)
        self.valid_samples = list(valid_samples or [])
        self.state = state
        self.cfg = cfg
        self.adam = AdamState.zeros_like(state)
        self.rng = make_rng(cfg.seed)
        self.iteration = 0
        self.history: list[dict] = []
        self._order = np.empty(0, dtype=np.int64)
        self._cursor = 0
        self._best_state: EncoderState | None = None
        self._best_f1 = -1.0
        self._best_iteration = 0

    @property
    def eval_interval(self) -> int:
        if self.cfg.eval_every > 0:
            return self.cfg.eval_every
        return max(1, len(self.train_samples) // min(self.cfg.batch_size, len(self.train_samples)))

    def _next_batch(self):
        n = len(self.train_samples)
        size = min(self.cfg.batch_size, n)
        if self._cursor + size > self._order.size:
            self._order = self.rng.permutation(n)
            self._cursor = 0
        idx = self._order[self._cursor : self._cursor + size]
        self._cursor += size
        return [self.train_samples[i] for i in idx]

    def _validate(self) -> float:
        f1 = classifier_micro_f1(self.state, self.valid_samples)
        if f1 > self._best_f1:
            self._best_f1 = f1
            self._best_state = self.state.copy()
            self._best_iteration = self.iteration
        return f1

    def step(self) -> dict:
        batch = self._next_batch()
        views = batch + batch
        bce, con, total, grads, _ = batch_gradients(
            self.state,
            views,
            alpha=self.cfg.alpha,
            tau1=self.cfg.tau1,
            variant=self.cfg.variant,
            rng=self.rng,
        )
        adam_step(
            self.state,
            grads,
            self.adam,
            lr=self.cfg.learning_rate,
            betas=(self.cfg.adam_beta1, self.cfg.adam_beta2),
            eps=self.cfg.adam_eps,
        )
        self.iteration += 1
        record = {"iteration": self.iteration, "bce": bce, "con": con, "total": total}
        if self.valid_samples and self.iteration % self.eval_interval == 0:
            record["valid_micro_f1"] = self._validate()
        self.history.append(record)
        return record

    def run(self, num_iters: int | None = None) -> list[dict]:
        target = self.cfg.max_iters if num_iters is None else self.iteration + num_iters
        while self.iteration < target:
            self.step()
        # one closing validation so the final state is always considered, but
        # only once the configured run is complete (otherwise resuming from a
        # mid-run checkpoint would diverge from an uninterrupted run)
        if (
            self.valid_samples
            and self.iteration >= self.cfg.max_iters
            and self.history
            and "valid_micro_f1" not in self.history[-1]
        ):
            self.history[-1]["valid_micro_f1"] = self._validate()
        return self.history

    def best_state(self) -> EncoderState:
        """State with the best validation micro-F1; the current state when no
        validation ever ran."""
        if self._best_state is None:
            return self.state
        return self._best_state

    @property
    def best_validation_f1(self) -> float | None:
        return None if self._best_f1 < 0 else self._best_f1

    # -- checkpointing ----------------------------------------------------

    def save_checkpoint(self, path) -> None:
        payload = {
            "format": _TRAINER_FORMAT,
            "version": _TRAINER_VERSION,
            "config": asdict(self.cfg),
            "iteration": self.iteration,
            "encoder": state_to_payload(self.state),
            "adam": {
                "step": self.adam.step,
                "m": {k: v.tolist() for k, v in self.adam.m.items()},
                "v": {k: v.tolist() for k, v in self.adam.v.items()},
            },
            "rng_state": self.rng.bit_generator.state,
            "order": self._order.tolist(),
            "cursor": self._cursor,
            "best": {
                "micro_f1": self._best_f1,
                "iteration": self._best_iteration,
                "encoder": None if self._best_state is None else state_to_payload(self._best_state),
            },
            "history": self.history,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)

    @classmethod
    def load_checkpoint(cls, path, train_samples, valid_samples) -> "Trainer":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CheckpointError(f"{path}: not a valid trainer checkpoint ({exc})") from exc
        if not isinstance(payload, dict) or payload.get("format") != _TRAINER_FORMAT:
            raise CheckpointError(f"{path}: wrong or missing format marker")
        if payload.get("version") != _TRAINER_VERSION:
            raise CheckpointError(f"{path}: unsupported version {payload.get('version')!r}")
        cfg = TrainConfig(**payload["config"])
        state = state_from_payload(payload["encoder"], source=str(path))
        trainer = cls(train_samples, valid_samples, state, cfg)
        trainer.iteration = int(payload["iteration"])
        trainer.adam.step = int(payload["adam"]["step"])
        for name in trainer.adam.m:
            trainer.adam.m[name] = np.asarray(payload["adam"]["m"][name], dtype=np.float64)
            trainer.adam.v[name] = np.asarray(payload["adam"]["v"][name], dtype=np.float64)
        trainer.rng.bit_generator.state = payload["rng_state"]
        trainer._order = np.asarray(payload["order"], dtype=np.int64)
        trainer._cursor = int(payload["cursor"])
        trainer._best_f1 = float(payload["best"]["micro_f1"])
        trainer._best_iteration = int(payload["best"]["iteration"])
        if payload["best"]["encoder"] is not None:
            trainer._best_state = state_from_payload(payload["best"]["encoder"], source=str(path))
        trainer.history = list(payload["history"])
        return trainer


def train(train_samples, valid_samples, encoder_config: EncoderConfig, cfg: TrainConfig):
    """Train from a fresh seeded initialization; returns (best_state, history)."""
    state = init_state(encoder_config, seed=cfg.seed)
    trainer = Trainer(train_samples, valid_samples, state, cfg)
    history = trainer.run()
    return trainer.best_state(), history
