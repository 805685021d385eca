"""Self-distillation: train a ternary student against its frozen teacher.

The teacher is the original full-precision encoder; the student is a copy
whose linear layers run in ternary mode. Targets are the teacher's raw
outputs on unlabeled vectors, the loss is MSE, and the optimizer is Adam
with a step learning-rate schedule: lr(epoch) = lr_initial *
lr_factor ** floor(epoch / lr_step_epochs). All parameters train (norms and
biases included); only linear weights go through the straight-through path.

Also provides the synthetic cluster-embedding task used as the desk-scale
benchmark: K Gaussian prototypes in input space, unit-norm code vectors in
output space, and a briefly fitted full-precision teacher whose embeddings
make nearest-neighbor retrieval meaningful.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor
from .encoder import EncoderConfig, EncoderModel, architecture_parity
from .rng import Rng


@dataclass
class TrainConfig:
    beta: float = 2.0
    epochs: int = 5
    lr_initial: float = 1e-3
    lr_step_epochs: int = 2
    lr_factor: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.lr_initial <= 0:
            raise ValueError(f"lr_initial must be positive, got {self.lr_initial}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr_step_epochs < 1:
            raise ValueError(f"lr_step_epochs must be >= 1, got {self.lr_step_epochs}")
        if not 0 < self.lr_factor <= 1:
            raise ValueError(f"lr_factor must be in (0, 1], got {self.lr_factor}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def initialize(cls, params: dict[str, np.ndarray], beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            beta1=beta1, beta2=beta2, eps=eps,
        )


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over all elements of squared difference, and its gradient."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    loss = float((diff * diff).mean())
    grad = (2.0 / diff.size * diff).astype(pred.dtype)
    return loss, grad


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Step schedule: lr_initial * lr_factor ** floor(epoch / lr_step_epochs)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return config.lr_initial * config.lr_factor ** (epoch // config.lr_step_epochs)


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray], lr: float) -> None:
    """One bias-corrected Adam update, in place on params and state."""
    if set(params) != set(grads):
        raise ValueError("params and grads carry different keys")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {k}")
        m = state.m[k]
        v = state.v[k]
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    batch: int
    loss: float
    lr: float


@dataclass
class DistillResult:
    student: EncoderModel
    batch_log: list[LossRecord]
    epoch_losses: list[float]


def holdout_split(data: np.ndarray, seed: int, fraction: float = 0.1):
    """Seeded shuffle then split into (train, heldout); heldout gets the fraction."""
    n = data.shape[0]
    n_held = max(1, int(round(n * fraction)))
    if n_held >= n:
        raise ValueError("dataset too small to split")
    perm = Rng(seed).permutation(n)
    return data[perm[n_held:]], data[perm[:n_held]]


def distill(teacher: EncoderModel, student: EncoderModel, data: np.ndarray,
            config: TrainConfig) -> DistillResult:
    """Fit the student to the teacher's outputs over the given vectors.

    Per batch: teacher forward (no gradients) -> target, student forward ->
    prediction, MSE, student backward, Adam step at the epoch's scheduled
    rate. Batch order reshuffles each epoch from the run seed, so the whole
    trajectory is reproducible.
    """
    data = tensor.as_matrix(data, "data")
    if not architecture_parity(teacher, student):
        raise ValueError("teacher and student architectures differ")
    if data.shape[1] != teacher.config.input_dim:
        raise ValueError(f"data width {data.shape[1]} != input_dim {teacher.config.input_dim}")
    n = data.shape[0]
    rng = Rng(config.seed)
    params = student.parameters()
    state = AdamState.initialize(params, config.adam_beta1, config.adam_beta2,
                                 config.adam_eps)
    batch_log: list[LossRecord] = []
    epoch_losses: list[float] = []
    for epoch in range(config.epochs):
        lr = lr_at(config, epoch)
        perm = rng.permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, config.batch_size)):
            xb = data[perm[start:start + config.batch_size]]
            target = teacher.forward(xb)
            pred = student.forward(xb)
            loss, dpred = mse_loss(pred, target)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch} batch {b}")
            student.backward(dpred)
            adam_step(state, params, student.gradients(), lr)
            batch_log.append(LossRecord(epoch, b, loss, lr))
            losses.append(loss)
        epoch_losses.append(float(np.mean(losses)))
    return DistillResult(student, batch_log, epoch_losses)


def teacher_student_mse(teacher: EncoderModel, student, data: np.ndarray) -> float:
    """MSE between the two models' embeddings of the same vectors."""
    loss, _ = mse_loss(student.forward(data), teacher.forward(data))
    return loss


# -- synthetic benchmark task ------------------------------------------------

@dataclass
class TaskSpec:
    num_clusters: int
    num_points: int
    noise: float = 0.25
    seed: int = 0
    teacher_epochs: int = 10
    teacher_lr: float = 1e-3
    teacher_batch_size: int = 128

    def __post_init__(self):
        if self.num_clusters < 2:
            raise ValueError(f"need at least 2 clusters, got {self.num_clusters}")
        if self.num_points < self.num_clusters:
            raise ValueError("need at least one point per cluster")
        if self.noise <= 0:
            raise ValueError(f"noise must be positive, got {self.noise}")


@dataclass
class SyntheticTask:
    inputs: np.ndarray          # (N, input_dim) float32
    labels: np.ndarray          # (N,) int64 cluster ids
    codes: np.ndarray = field(repr=False, default=None)  # (K, output_dim) unit rows


def make_synthetic_task(config: EncoderConfig, spec: TaskSpec) -> SyntheticTask:
    """Clustered inputs plus per-cluster unit-norm target codes."""
    rng = Rng(spec.seed)
    k, n = spec.num_clusters, spec.num_points
    prototypes = rng.normals(k * config.input_dim).reshape(k, config.input_dim)
    codes = rng.normals(k * config.output_dim).reshape(k, config.output_dim)
    codes /= np.linalg.norm(codes, axis=1, keepdims=True)
    labels = np.arange(n, dtype=np.int64) % k
    noise = rng.normals(n * config.input_dim, sigma=spec.noise)
    inputs = prototypes[labels] + noise.reshape(n, config.input_dim)
    return SyntheticTask(inputs.astype(tensor.FLOAT), labels,
                         codes.astype(tensor.FLOAT))


def make_synthetic_teacher(config: EncoderConfig,
                           spec: TaskSpec) -> tuple[EncoderModel, SyntheticTask]:
    """Build the cluster task and fit a full-precision teacher on it.

    The teacher regresses inputs onto their cluster codes, which pulls
    same-cluster embeddings together and makes retrieval over them
    meaningful. Returns the teacher and the task (inputs plus ground-truth
    cluster labels).
    """
    task = make_synthetic_task(config, spec)
    teacher = EncoderModel.init(config)
    targets = task.codes[task.labels]
    _fit_regression(teacher, task.inputs, targets, epochs=spec.teacher_epochs,
                    lr=spec.teacher_lr, batch_size=spec.teacher_batch_size,
                    seed=spec.seed + 1)
    return teacher, task


def _fit_regression(model: EncoderModel, x: np.ndarray, y: np.ndarray,
                    epochs: int, lr: float, batch_size: int, seed: int) -> None:
    rng = Rng(seed)
    params = model.parameters()
    state = AdamState.initialize(params)
    n = x.shape[0]
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            pred = model.forward(x[idx])
            _, dpred = mse_loss(pred, y[idx])
            model.backward(dpred)
            adam_step(state, params, model.gradients(), lr)
