"""Residual-MLP embedding encoder with switchable linear-layer precision.

Every linear layer runs in one of two modes:

* ``full``: the forward pass applies the stored float32 weight directly.
* ``ternary``: each forward pass recomputes the threshold from the live
  weight, partitions it to trits, and applies gamma * trits. The backward
  pass is straight-through: the partition's Jacobian is treated as the
  identity and gamma as a constant, so the weight gradient is gamma times
  the gradient that arrives at the effective-weight slot. Bias gradients
  are always exact.

gamma deliberately receives no gradient; it is re-derived from the weights
at every step and frozen only at export time.

The architecture is an input projection, ``num_blocks`` residual blocks
(layer_norm -> linear -> gelu -> linear -> residual add), and an output
projection, with an optional L2 normalization switch used at retrieval
time (off during training, where the loss runs on raw outputs).
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor
from .packed import PackedTernaryMatrix, pack, packed_gemm
from .rng import Rng
from .ternary import DEFAULT_BETA, compute_threshold, ternarize

MODE_FULL = "full_precision"
MODE_TERNARY = "ternary"


@dataclass
class EncoderConfig:
    input_dim: int
    hidden_dim: int
    output_dim: int
    num_blocks: int
    seed: int = 0

    def __post_init__(self):
        for field in ("input_dim", "hidden_dim", "output_dim", "num_blocks"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be >= 1, got {getattr(self, field)}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**{k: int(d[k]) for k in ("input_dim", "hidden_dim", "output_dim",
                                             "num_blocks", "seed")})


class LinearLayer:
    """y = x @ W_eff.T + b where W_eff is W or gamma * f(W | gamma)."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray,
                 mode: str = MODE_FULL, beta: float = DEFAULT_BETA):
        if mode not in (MODE_FULL, MODE_TERNARY):
            raise ValueError(f"unknown mode {mode!r}")
        self.weight = np.ascontiguousarray(weight, dtype=weight.dtype)
        self.bias = np.ascontiguousarray(bias, dtype=bias.dtype)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("weight must be (out, in) and bias (out,)")
        self.mode = mode
        self.beta = float(beta)
        self.grad_weight: np.ndarray | None = None
        self.grad_bias: np.ndarray | None = None
        self._cache = None

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    def effective_weight(self) -> tuple[np.ndarray, float | None]:
        """Weight the forward pass applies, plus gamma in ternary mode."""
        if self.mode == MODE_FULL:
            return self.weight, None
        t = ternarize(self.weight, compute_threshold(self.weight, self.beta))
        return t.dense(), t.gamma  # gamma as rounded to the stored precision

    def ternary_export(self, bias: bool = True) -> PackedTernaryMatrix:
        gamma = compute_threshold(self.weight, self.beta)
        return pack(ternarize(self.weight, gamma), self.bias if bias else None)

    def forward(self, x: np.ndarray) -> np.ndarray:
        w_eff, gamma = self.effective_weight()
        self._cache = (x, w_eff, gamma)
        return tensor.matmul(x, w_eff.T) + self.bias

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        x, w_eff, gamma = self._cache
        dw_eff = tensor.matmul(dy.T, x)
        if self.mode == MODE_TERNARY:
            # straight-through: identity Jacobian for the partition, gamma constant
            self.grad_weight = (np.float64(gamma) * dw_eff).astype(dw_eff.dtype)
        else:
            self.grad_weight = dw_eff
        self.grad_bias = dy.sum(axis=0, dtype=np.float64).astype(dy.dtype)
        return tensor.matmul(dy, w_eff)


class ResidualBlock:
    """layer_norm -> fc1 -> gelu -> fc2 -> residual add."""

    def __init__(self, ln_gain, ln_shift, fc1: LinearLayer, fc2: LinearLayer):
        self.ln_gain = ln_gain
        self.ln_shift = ln_shift
        self.fc1 = fc1
        self.fc2 = fc2
        self.grad_ln_gain = None
        self.grad_ln_shift = None
        self._cache = None

    def forward(self, h: np.ndarray) -> np.ndarray:
        u, ln_cache = tensor.layer_norm_with_cache(h, self.ln_gain, self.ln_shift)
        a1 = self.fc1.forward(u)
        z = tensor.gelu(a1)
        a2 = self.fc2.forward(z)
        self._cache = (ln_cache, a1)
        return h + a2

    def backward(self, dh_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        ln_cache, a1 = self._cache
        dz = self.fc2.backward(dh_out)
        da1 = dz * tensor.gelu_grad(a1)
        du = self.fc1.backward(da1)

        normed, inv_std = ln_cache
        du64 = du.astype(np.float64)
        gain64 = self.ln_gain.astype(np.float64)
        self.grad_ln_gain = (du64 * normed).sum(axis=0).astype(self.ln_gain.dtype)
        self.grad_ln_shift = du64.sum(axis=0).astype(self.ln_shift.dtype)
        dnormed = du64 * gain64
        mean_dn = dnormed.mean(axis=1, keepdims=True)
        mean_dn_n = (dnormed * normed).mean(axis=1, keepdims=True)
        dh_ln = (inv_std * (dnormed - mean_dn - normed * mean_dn_n)).astype(dh_out.dtype)
        return dh_out + dh_ln


class EncoderModel:
    def __init__(self, config: EncoderConfig, input_proj: LinearLayer,
                 blocks: list[ResidualBlock], output_proj: LinearLayer,
                 normalize: bool = False):
        self.config = config
        self.input_proj = input_proj
        self.blocks = blocks
        self.output_proj = output_proj
        self.normalize = normalize
        self._cache = None

    @classmethod
    def init(cls, config: EncoderConfig) -> "EncoderModel":
        """Seeded Gaussian init, std 1/sqrt(fan_in); biases zero, gains one."""
        rng = Rng(config.seed)

        def linear(out_dim, in_dim):
            w = tensor.gaussian_fill(rng, out_dim, in_dim, sigma=in_dim ** -0.5)
            return LinearLayer(w, np.zeros(out_dim, dtype=tensor.FLOAT))

        input_proj = linear(config.hidden_dim, config.input_dim)
        blocks = []
        for _ in range(config.num_blocks):
            blocks.append(ResidualBlock(
                np.ones(config.hidden_dim, dtype=tensor.FLOAT),
                np.zeros(config.hidden_dim, dtype=tensor.FLOAT),
                linear(config.hidden_dim, config.hidden_dim),
                linear(config.hidden_dim, config.hidden_dim),
            ))
        output_proj = linear(config.output_dim, config.hidden_dim)
        return cls(config, input_proj, blocks, output_proj)

    # -- structure walkers -------------------------------------------------

    def linear_layers(self) -> list[tuple[str, LinearLayer]]:
        layers = [("input_proj", self.input_proj)]
        for i, blk in enumerate(self.blocks):
            layers.append((f"blocks.{i}.fc1", blk.fc1))
            layers.append((f"blocks.{i}.fc2", blk.fc2))
        layers.append(("output_proj", self.output_proj))
        return layers

    def parameters(self) -> dict[str, np.ndarray]:
        """Ordered name -> live array mapping (optimizers update in place)."""
        params: dict[str, np.ndarray] = {}
        params["input_proj.weight"] = self.input_proj.weight
        params["input_proj.bias"] = self.input_proj.bias
        for i, blk in enumerate(self.blocks):
            params[f"blocks.{i}.ln_gain"] = blk.ln_gain
            params[f"blocks.{i}.ln_shift"] = blk.ln_shift
            params[f"blocks.{i}.fc1.weight"] = blk.fc1.weight
            params[f"blocks.{i}.fc1.bias"] = blk.fc1.bias
            params[f"blocks.{i}.fc2.weight"] = blk.fc2.weight
            params[f"blocks.{i}.fc2.bias"] = blk.fc2.bias
        params["output_proj.weight"] = self.output_proj.weight
        params["output_proj.bias"] = self.output_proj.bias
        return params

    def gradients(self) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {}
        grads["input_proj.weight"] = self.input_proj.grad_weight
        grads["input_proj.bias"] = self.input_proj.grad_bias
        for i, blk in enumerate(self.blocks):
            grads[f"blocks.{i}.ln_gain"] = blk.grad_ln_gain
            grads[f"blocks.{i}.ln_shift"] = blk.grad_ln_shift
            grads[f"blocks.{i}.fc1.weight"] = blk.fc1.grad_weight
            grads[f"blocks.{i}.fc1.bias"] = blk.fc1.grad_bias
            grads[f"blocks.{i}.fc2.weight"] = blk.fc2.grad_weight
            grads[f"blocks.{i}.fc2.bias"] = blk.fc2.grad_bias
        grads["output_proj.weight"] = self.output_proj.grad_weight
        grads["output_proj.bias"] = self.output_proj.grad_bias
        if any(g is None for g in grads.values()):
            raise RuntimeError("gradients requested before a backward pass")
        return grads

    # -- compute -----------------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ValueError(
                f"input must be (n, {self.config.input_dim}), got {x.shape}")
        h = self.input_proj.forward(x)
        for blk in self.blocks:
            h = blk.forward(h)
        out = self.output_proj.forward(h)
        if self.normalize:
            out, norm_cache = _l2_normalize_with_cache(out)
        else:
            norm_cache = None
        self._cache = norm_cache
        return out

    def backward(self, d_out: np.ndarray) -> dict[str, np.ndarray]:
        if self.output_proj._cache is None:
            raise RuntimeError("backward called before forward")
        if self.normalize:
            d_out = _l2_normalize_backward(d_out, self._cache)
        dh = self.output_proj.backward(d_out)
        for blk in reversed(self.blocks):
            dh = blk.backward(dh)
        self.input_proj.backward(dh)
        return self.gradients()

    # -- precision switching and export -------------------------------------

    def clone(self) -> "EncoderModel":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "EncoderModel":
        """Clone with every parameter cast; used for numeric verification."""
        m = self.clone()
        for layer in (m.input_proj, m.output_proj, *(b.fc1 for b in m.blocks),
                      *(b.fc2 for b in m.blocks)):
            layer.weight = layer.weight.astype(dtype)
            layer.bias = layer.bias.astype(dtype)
        for blk in m.blocks:
            blk.ln_gain = blk.ln_gain.astype(dtype)
            blk.ln_shift = blk.ln_shift.astype(dtype)
        return m


def replace_linears(model: EncoderModel, mode: str, beta: float = DEFAULT_BETA) -> EncoderModel:
    """Switch every linear layer's mode in place; weights are untouched."""
    if mode not in (MODE_FULL, MODE_TERNARY):
        raise ValueError(f"unknown mode {mode!r}")
    for _, layer in model.linear_layers():
        layer.mode = mode
        layer.beta = float(beta)
    return model


def export_packed(model: EncoderModel) -> list[PackedTernaryMatrix]:
    """Freeze gamma per linear layer and pack the trits, biases included."""
    for name, layer in model.linear_layers():
        if layer.mode != MODE_TERNARY:
            raise ValueError(f"layer {name} is not in ternary mode")
    return [layer.ternary_export() for _, layer in model.linear_layers()]


class PackedEncoder:
    """Frozen inference-only encoder running every linear via the bit-plane kernel."""

    def __init__(self, config: EncoderConfig, packed_layers: list[PackedTernaryMatrix],
                 ln_params: list[tuple[np.ndarray, np.ndarray]], normalize: bool = False):
        if len(packed_layers) != 2 * config.num_blocks + 2:
            raise ValueError("wrong number of packed layers for the architecture")
        if len(ln_params) != config.num_blocks:
            raise ValueError("wrong number of layer-norm parameter pairs")
        self.config = config
        self.packed_layers = packed_layers
        self.ln_params = ln_params
        self.normalize = normalize

    @classmethod
    def from_model(cls, model: EncoderModel) -> "PackedEncoder":
        ln = [(blk.ln_gain.copy(), blk.ln_shift.copy()) for blk in model.blocks]
        return cls(model.config, export_packed(model), ln, model.normalize)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=tensor.FLOAT)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ValueError(
                f"input must be (n, {self.config.input_dim}), got {x.shape}")
        layers = iter(self.packed_layers)
        h = packed_gemm(next(layers), x.T).T
        for gain, shift in self.ln_params:
            u = tensor.layer_norm(h, gain, shift)
            a1 = packed_gemm(next(layers), u.T).T
            z = tensor.gelu(a1)
            h = h + packed_gemm(next(layers), z.T).T
        out = packed_gemm(next(layers), h.T).T
        if self.normalize:
            out, _ = _l2_normalize_with_cache(out)
        return out


def _l2_normalize_with_cache(x: np.ndarray):
    x64 = x.astype(np.float64)
    norms = np.sqrt((x64 * x64).sum(axis=1, keepdims=True))
    safe = np.where(norms > 0.0, norms, 1.0)
    y = (x64 / safe).astype(x.dtype)
    return y, (y.astype(np.float64), safe)


def _l2_normalize_backward(dy: np.ndarray, cache) -> np.ndarray:
    y64, norms = cache
    dy64 = dy.astype(np.float64)
    inner = (dy64 * y64).sum(axis=1, keepdims=True)
    return ((dy64 - y64 * inner) / norms).astype(dy.dtype)


def model_digest(model: EncoderModel) -> str:
    """SHA-256 over parameter names and raw bytes; detects any weight drift."""
    h = hashlib.sha256()
    for name, arr in model.parameters().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def architecture_parity(a: EncoderModel, b: EncoderModel) -> bool:
    """True when both models expose identical parameter names and shapes."""
    pa, pb = a.parameters(), b.parameters()
    return list(pa) == list(pb) and all(pa[k].shape == pb[k].shape for k in pa)


def config_digest(config: EncoderConfig) -> str:
    return hashlib.sha256(json.dumps(config.to_dict(), sort_keys=True).encode()).hexdigest()
