"""Dense-network primitives, flat parameter storage, clipping and AdamW.

Everything is float64. Networks operate on a flat :class:`ParamVector` whose
named segments are views into one contiguous array, so gradients, optimizer
moments and checkpoints can treat a whole model as a single vector.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigurationError, UpdateSkipped

ACTIVATIONS = ("tanh",)


class ParamVector:
    """Flat float64 array plus a name -> (offset, shape) layout.

    Segments returned by ``self[name]`` are writable views into ``values``.
    """

    __slots__ = ("values", "layout")

    def __init__(self, values: np.ndarray, layout: Mapping[str, tuple[int, tuple[int, ...]]]):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1:
            raise ConfigurationError("ParamVector values must be one-dimensional")
        end = 0
        for name, (offset, shape) in layout.items():
            if offset != end:
                raise ConfigurationError(f"segment {name!r} does not start at offset {end}")
            end = offset + int(np.prod(shape, dtype=np.int64))
        if end != values.size:
            raise ConfigurationError(f"layout covers {end} entries but values has {values.size}")
        self.values = values
        self.layout = dict(layout)

    @classmethod
    def from_segments(cls, segments: Mapping[str, np.ndarray]) -> "ParamVector":
        layout = {}
        offset = 0
        parts = []
        for name, arr in segments.items():
            arr = np.asarray(arr, dtype=np.float64)
            layout[name] = (offset, tuple(arr.shape))
            offset += arr.size
            parts.append(arr.ravel())
        values = np.concatenate(parts) if parts else np.zeros(0)
        return cls(values, layout)

    @classmethod
    def concat(cls, parts: Mapping[str, "ParamVector"]) -> "ParamVector":
        """Join several vectors, prefixing each segment name with ``key.``."""
        segments = {}
        for prefix, pv in parts.items():
            for name in pv.layout:
                segments[f"{prefix}.{name}"] = pv[name]
        return cls.from_segments(segments)

    def __getitem__(self, name: str) -> np.ndarray:
        offset, shape = self.layout[name]
        size = int(np.prod(shape, dtype=np.int64))
        return self.values[offset:offset + size].reshape(shape)

    def __len__(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        return f"ParamVector(size={self.values.size}, segments={list(self.layout)})"

    def subset(self, prefix: str) -> "ParamVector":
        """View of all segments named ``prefix.*`` with the prefix stripped."""
        dot = prefix + "."
        names = [n for n in self.layout if n.startswith(dot)]
        if not names:
            raise KeyError(prefix)
        start = self.layout[names[0]][0]
        layout = {}
        end = start
        for n in names:
            offset, shape = self.layout[n]
            if offset != end:
                raise ConfigurationError(f"segments under {prefix!r} are not contiguous")
            layout[n[len(dot):]] = (offset - start, shape)
            end = offset + int(np.prod(shape, dtype=np.int64))
        return ParamVector(self.values[start:end], layout)

    def span(self, prefix: str) -> slice:
        """Slice of ``values`` occupied by the ``prefix.*`` segments."""
        sub = self.subset(prefix)
        start = self.layout[prefix + "." + next(iter(sub.layout))][0]
        return slice(start, start + sub.values.size)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.values.shape:
            raise ConfigurationError(
                f"shape mismatch: {values.shape} vs {self.values.shape}")
        return ParamVector(values, self.layout)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(np.zeros_like(self.values), self.layout)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def same_layout(self, other: "ParamVector") -> bool:
        return self.layout == other.layout

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def digest(self) -> str:
        """SHA-256 over layout and raw little-endian bytes."""
        h = hashlib.sha256()
        for name, (offset, shape) in self.layout.items():
            h.update(f"{name}:{offset}:{shape};".encode())
        h.update(self.values.astype("<f8").tobytes())
        return h.hexdigest()


def check_same_shape(a: ParamVector, b: ParamVector, what: str = "parameters") -> None:
    if a.values.shape != b.values.shape:
        raise ConfigurationError(
            f"{what} shape mismatch: {a.values.shape} vs {b.values.shape}")


def sum_params(grads: Iterable[ParamVector], like: ParamVector) -> ParamVector:
    """Fixed-order pairwise sum; returns zeros shaped like ``like`` when empty."""
    items = [g.values for g in grads]
    for v in items:
        if v.shape != like.values.shape:
            raise ConfigurationError(f"gradient shape {v.shape} != {like.values.shape}")
    if not items:
        return like.zeros_like()
    while len(items) > 1:
        paired = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            paired.append(items[-1])
        items = paired
    return like.with_values(items[0].copy())


# --------------------------------------------------------------------------
# MLPs


@dataclass(frozen=True)
class MlpSpec:
    """Fully connected network shape.

    ``hidden_widths`` may be empty, which gives a single affine layer.
    ``activate_output`` applies the activation after the final layer too; the
    policy trunk uses that to produce an activated last-layer embedding.
    """

    input_dim: int
    hidden_widths: tuple[int, ...]
    output_dim: int
    activation: str = "tanh"
    activate_output: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or self.output_dim < 1 or any(w < 1 for w in self.hidden_widths):
            raise ConfigurationError(f"MLP widths must be positive: {self}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_widths, self.output_dim)

    @property
    def num_layers(self) -> int:
        return len(self.hidden_widths) + 1

    def layout_shapes(self) -> dict[str, tuple[int, ...]]:
        w = self.widths
        shapes = {}
        for i in range(self.num_layers):
            shapes[f"W{i}"] = (w[i], w[i + 1])
            shapes[f"b{i}"] = (w[i + 1],)
        return shapes

    @property
    def param_count(self) -> int:
        w = self.widths
        return sum(w[i] * w[i + 1] + w[i + 1] for i in range(self.num_layers))


def init_mlp(spec: MlpSpec, rng: np.random.Generator, output_scale: float = 1.0) -> ParamVector:
    """Gaussian weights with variance 1/fan_in, zero biases.

    ``output_scale`` multiplies the last layer's weights.
    """
    segments = {}
    last = spec.num_layers - 1
    for name, shape in spec.layout_shapes().items():
        if name.startswith("W"):
            w = rng.standard_normal(shape) / np.sqrt(shape[0])
            if int(name[1:]) == last:
                w = w * output_scale
            segments[name] = w
        else:
            segments[name] = np.zeros(shape)
    return ParamVector.from_segments(segments)


def _check_mlp(spec: MlpSpec, params: ParamVector, x: np.ndarray) -> None:
    if x.shape[-1] != spec.input_dim:
        raise ConfigurationError(f"input has {x.shape[-1]} features, spec expects {spec.input_dim}")
    shapes = spec.layout_shapes()
    if len(params.layout) != len(shapes) or any(
            params.layout.get(n, (0, None))[1] != s for n, s in shapes.items()):
        raise ConfigurationError("parameters do not match the MLP spec layout")


def _forward_all(spec: MlpSpec, params: ParamVector, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    h = x
    last = spec.num_layers - 1
    for i in range(spec.num_layers):
        h = h @ params[f"W{i}"] + params[f"b{i}"]
        if i < last or spec.activate_output:
            h = np.tanh(h)
        acts.append(h)
    return acts


def mlp_forward(spec: MlpSpec, params: ParamVector, x) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    _check_mlp(spec, params, x)
    single = x.ndim == 1
    out = _forward_all(spec, params, x[None, :] if single else x)[-1]
    return out[0] if single else out


def mlp_backward(spec: MlpSpec, params: ParamVector, x, cotangent) -> tuple[ParamVector, np.ndarray]:
    """Gradients of ``<cotangent, output>`` w.r.t. parameters and input.

    For a batch, parameter gradients are summed over rows and the input
    gradient keeps one row per input.
    """
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(cotangent, dtype=np.float64)
    _check_mlp(spec, params, x)
    if c.shape[-1] != spec.output_dim or c.ndim != x.ndim:
        raise ConfigurationError(f"cotangent shape {c.shape} does not match output_dim {spec.output_dim}")
    single = x.ndim == 1
    if single:
        x, c = x[None, :], c[None, :]
    if c.shape[0] != x.shape[0]:
        raise ConfigurationError("cotangent and input batch sizes differ")
    acts = _forward_all(spec, params, x)
    grad = params.zeros_like()
    last = spec.num_layers - 1
    delta = c
    for i in range(last, -1, -1):
        if i < last or spec.activate_output:
            delta = delta * (1.0 - acts[i + 1] ** 2)
        grad[f"W{i}"][...] = acts[i].T @ delta
        grad[f"b{i}"][...] = delta.sum(axis=0)
        delta = delta @ params[f"W{i}"].T
    return grad, (delta[0] if single else delta)


# --------------------------------------------------------------------------
# Probabilities


def softmax(logits) -> np.ndarray:
    """Softmax along the last axis with max-subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0 or z.shape[-1] == 0:
        raise ConfigurationError("softmax of an empty vector")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0 or z.shape[-1] == 0:
        raise ConfigurationError("log_softmax of an empty vector")
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def log_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = -np.logaddexp(0.0, -x)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# Clipping and AdamW


def _nonfinite_diagnostic(pv: ParamVector) -> dict:
    bad = ~np.isfinite(pv.values)
    segments = [n for n in pv.layout if not np.all(np.isfinite(pv[n]))]
    return {"nonfinite": int(bad.sum()), "segments": segments}


def clip_global_norm(grads: ParamVector, max_norm: float) -> ParamVector:
    """Scale ``grads`` down so its L2 norm is at most ``max_norm``."""
    if not max_norm > 0:
        raise ConfigurationError(f"max_norm must be positive, got {max_norm}")
    if not np.all(np.isfinite(grads.values)):
        diag = _nonfinite_diagnostic(grads)
        raise UpdateSkipped(f"non-finite gradient entries in {diag['segments']}", diag)
    norm = grads.norm()
    if norm <= max_norm:
        return grads
    return grads.with_values(grads.values * (max_norm / norm))


@dataclass(frozen=True)
class AdamWHyper:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    maximize: bool = False


@dataclass(frozen=True)
class OptimizerState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    hyper: AdamWHyper = field(default_factory=AdamWHyper)

    @classmethod
    def init(cls, params: ParamVector, hyper: AdamWHyper | None = None) -> "OptimizerState":
        n = params.values.size
        return cls(np.zeros(n), np.zeros(n), 0, hyper or AdamWHyper())


def adamw_step(state: OptimizerState, params: ParamVector, grads: ParamVector
               ) -> tuple[ParamVector, OptimizerState]:
    """One decoupled-weight-decay Adam update; inputs are not modified.

    With ``hyper.maximize`` the step ascends ``grads`` instead of descending.
    """
    n = params.values.size
    if grads.values.size != n or state.first_moment.size != n or state.second_moment.size != n:
        raise ConfigurationError("optimizer, parameter and gradient sizes disagree")
    hp = state.hyper
    g = -grads.values if hp.maximize else grads.values
    t = state.step_count + 1
    m = hp.beta1 * state.first_moment + (1.0 - hp.beta1) * g
    v = hp.beta2 * state.second_moment + (1.0 - hp.beta2) * g * g
    m_hat = m / (1.0 - hp.beta1 ** t)
    v_hat = v / (1.0 - hp.beta2 ** t)
    p = params.values * (1.0 - hp.learning_rate * hp.weight_decay)
    p = p - hp.learning_rate * m_hat / (np.sqrt(v_hat) + hp.eps)
    return params.with_values(p), replace(state, first_moment=m, second_moment=v, step_count=t)


# --------------------------------------------------------------------------
# Stacked MLPs: N independent networks of one spec, evaluated together.
# Segments carry a leading ensemble axis: W{i} is (N, fan_in, fan_out).


def init_stacked_mlp(spec: MlpSpec, n: int, rng: np.random.Generator) -> ParamVector:
    members = [init_mlp(spec, rng) for _ in range(n)]
    segments = {}
    for name, shape in spec.layout_shapes().items():
        segments[name] = (np.stack([m[name] for m in members]) if members
                          else np.zeros((0, *shape)))
    return ParamVector.from_segments(segments)


def stacked_member(spec: MlpSpec, stacked: ParamVector, index: int) -> ParamVector:
    """Copy of one member's parameters in plain MLP layout."""
    return ParamVector.from_segments({n: stacked[n][index] for n in spec.layout_shapes()})


def _stacked_forward_all(spec: MlpSpec, stacked: ParamVector, x: np.ndarray) -> list[np.ndarray]:
    # x: (S, in) shared by all members
    acts = [x]
    h = x
    last = spec.num_layers - 1
    for i in range(spec.num_layers):
        w = stacked[f"W{i}"]
        h = (np.einsum("sd,ndh->nsh", h, w) if i == 0 else np.matmul(h, w))
        h = h + stacked[f"b{i}"][:, None, :]
        if i < last or spec.activate_output:
            h = np.tanh(h)
        acts.append(h)
    return acts


def stacked_mlp_forward(spec: MlpSpec, stacked: ParamVector, x: np.ndarray) -> np.ndarray:
    """Outputs of every member on a shared batch: shape (N, S, output_dim)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ConfigurationError(f"expected (S, {spec.input_dim}) input, got {x.shape}")
    return _stacked_forward_all(spec, stacked, x)[-1]


def stacked_mlp_backward(spec: MlpSpec, stacked: ParamVector, x: np.ndarray,
                         cotangent: np.ndarray) -> ParamVector:
    """Per-member parameter gradients of ``sum <cotangent[n], output[n]>``."""
    x = np.asarray(x, dtype=np.float64)
    acts = _stacked_forward_all(spec, stacked, x)
    grad = stacked.zeros_like()
    last = spec.num_layers - 1
    delta = np.asarray(cotangent, dtype=np.float64)
    for i in range(last, -1, -1):
        if i < last or spec.activate_output:
            delta = delta * (1.0 - acts[i + 1] ** 2)
        if i == 0:
            grad[f"W{i}"][...] = np.einsum("sd,nsh->ndh", acts[0], delta)
        else:
            grad[f"W{i}"][...] = np.matmul(acts[i].transpose(0, 2, 1), delta)
        grad[f"b{i}"][...] = delta.sum(axis=1)
        if i > 0:
            delta = np.matmul(delta, stacked[f"W{i}"].transpose(0, 2, 1))
    return grad
