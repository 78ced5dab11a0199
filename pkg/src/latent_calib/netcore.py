"""Minimal dense-network engine.

Dense layers with ReLU/identity activations, inverted-dropout masks,
reverse-mode gradients and an Adam optimizer, all on float64 numpy
arrays. This is deliberately small: it supports exactly the MLP chains
the rest of the package needs, and nothing else.

Conventions
-----------
* Row vectors: a batch of n inputs is an ``(n, d)`` array; single
  vectors are ``(1, d)``.
* Weights are ``(in_dim, out_dim)``, biases ``(1, out_dim)``, so a layer
  computes ``act(x @ W + b)``.
* Dropout is *inverted*: retained entries are scaled by ``1/keep_rate``
  at mask time, so ``keep_rate=1`` is an exact no-op and the expected
  pre-activation does not depend on the keep rate.
* Any NaN/Inf in activations or gradients raises
  :class:`~latent_calib.errors.NumericalError` instead of propagating.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .rngs import seed_sequence
from .validation import check_finite, check_keep_rate

RELU = "relu"
IDENTITY = "identity"
_ACTIVATIONS = (RELU, IDENTITY)


@dataclass
class DenseLayer:
    """A fully connected layer: ``act(x @ weights + biases)``."""

    weights: np.ndarray  # (in_dim, out_dim)
    biases: np.ndarray   # (1, out_dim)
    activation: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64).reshape(1, -1)
        if self.weights.ndim != 2:
            raise ValueError("weights must be 2-D (in_dim, out_dim)")
        if self.biases.shape[1] != self.weights.shape[1]:
            raise ValueError(
                f"bias width {self.biases.shape[1]} does not match "
                f"weight out_dim {self.weights.shape[1]}"
            )
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.biases.copy(),
                          self.activation)


@dataclass
class DropoutMask:
    """Binary retain-mask for one layer's input, with inverted scaling.

    ``mask`` has one row per input row (or a single broadcast row); each
    entry is 0 or 1. Retained activations are multiplied by
    ``1/keep_rate`` so the masked input is unbiased.
    """

    keep_rate: float
    mask: np.ndarray  # (n_rows, width) of {0.0, 1.0}

    def __post_init__(self):
        self.keep_rate = check_keep_rate(self.keep_rate)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.mask.ndim == 1:
            self.mask = self.mask.reshape(1, -1)

    @property
    def scaling(self) -> float:
        return 1.0 / self.keep_rate

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Elementwise mask + scale; broadcasts a single-row mask."""
        if self.mask.shape[0] not in (1, x.shape[0]):
            raise ValueError(
                f"mask has {self.mask.shape[0]} rows, input has {x.shape[0]}"
            )
        if self.width != x.shape[1]:
            raise ValueError(
                f"mask width {self.width} does not match input width "
                f"{x.shape[1]}"
            )
        return x * (self.mask * self.scaling)


def sample_mask(keep_rate: float, width: int, rng, n_rows: int = 1
                ) -> DropoutMask:
    """Sample a DropoutMask with iid Bernoulli(keep_rate) retain bits.

    ``rng`` may be a :class:`numpy.random.Generator` or an int seed;
    the draw is deterministic given the generator state.
    """
    keep_rate = check_keep_rate(keep_rate)
    if width < 1 or n_rows < 1:
        raise ValueError("width and n_rows must be positive")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if keep_rate == 1.0:
        bits = np.ones((n_rows, width))
    else:
        bits = (rng.random((n_rows, width)) < keep_rate).astype(np.float64)
    return DropoutMask(keep_rate, bits)


@dataclass
class _AdamState:
    """Per-parameter first/second moment accumulators plus step count."""

    m: list  # [(mW, mb), ...] aligned with layers
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, layers) -> "_AdamState":
        m = [(np.zeros_like(l.weights), np.zeros_like(l.biases))
             for l in layers]
        v = [(np.zeros_like(l.weights), np.zeros_like(l.biases))
             for l in layers]
        return cls(m=m, v=v, t=0)


@dataclass
class Network:
    """An MLP: ordered dense layers plus optimizer state and init seed.

    Consecutive layer dimensions must chain. The instance is
    single-writer during training; forward passes on frozen parameters
    are pure.
    """

    layers: list[DenseLayer]
    rng_seed: int = 0
    _adam: _AdamState | None = field(default=None, repr=False)

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )

    @classmethod
    def build(cls, dims: list[int], activations: list[str] | None = None,
              seed: int = 0) -> "Network":
        """He-uniform (ReLU) / Xavier-uniform (identity) initialized MLP.

        ``dims`` is ``[d_in, h1, ..., d_out]``; default activations are
        ReLU on hidden layers and identity on the output layer.
        """
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        n_layers = len(dims) - 1
        if activations is None:
            activations = [RELU] * (n_layers - 1) + [IDENTITY]
        if len(activations) != n_layers:
            raise ValueError("one activation per layer required")
        rng = np.random.default_rng(seed_sequence(seed, "init"))
        layers = []
        for i in range(n_layers):
            fan_in, fan_out = dims[i], dims[i + 1]
            if activations[i] == RELU:
                limit = np.sqrt(6.0 / fan_in)
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            layers.append(DenseLayer(w, np.zeros((1, fan_out)),
                                     activations[i]))
        return cls(layers=layers, rng_seed=int(seed))

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def input_widths(self) -> list[int]:
        """Input width of every layer, for mask sampling."""
        return [l.in_dim for l in self.layers]

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [l.out_dim for l in self.layers]

    def copy(self) -> "Network":
        return Network([l.copy() for l in self.layers], self.rng_seed)

    def forward(self, x: np.ndarray, masks: list[DropoutMask] | None = None
                ) -> np.ndarray:
        """Run the network; with masks, each layer input is masked first."""
        out, _ = self.forward_cached(x, masks)
        return out

    def forward_cached(self, x: np.ndarray,
                       masks: list[DropoutMask] | None = None):
        """Forward pass that also returns the cache needed by backward.

        The cache holds, per layer, the (masked, scaled) layer input and
        the pre-activation; it is only valid for the masks it was built
        with.
        """
        a = np.asarray(x, dtype=np.float64)
        if a.ndim == 1:
            a = a.reshape(1, -1)
        if a.shape[1] != self.in_dim:
            raise ValueError(
                f"input width {a.shape[1]} does not match network input "
                f"dim {self.in_dim}"
            )
        if masks is not None and len(masks) != len(self.layers):
            raise ValueError(
                f"need one mask per layer ({len(self.layers)}), "
                f"got {len(masks)}"
            )
        cache = []
        for i, layer in enumerate(self.layers):
            if masks is not None:
                a = masks[i].apply(a)
            pre = a @ layer.weights + layer.biases
            cache.append((a, pre))
            if layer.activation == RELU:
                a = np.maximum(pre, 0.0)
            else:
                a = pre
            if not np.all(np.isfinite(a)):
                raise NumericalError(
                    f"non-finite activation after layer {i} "
                    f"({layer.in_dim}x{layer.out_dim} {layer.activation})"
                )
        return a, _ForwardCache(entries=cache, masks=masks)

    def backward(self, loss_grad_at_output: np.ndarray,
                 cache: "_ForwardCache"):
        """Gradients of a scalar loss w.r.t. every weight and bias.

        ``loss_grad_at_output`` is dL/d(output), shape (n, out_dim),
        summed over the n rows exactly as the loss sums over them.
        Returns ``(grads, grad_input)`` where grads is a list of
        ``(dW, db)`` aligned with the layers. Dropout masks gate the
        gradients exactly as they gated the activations.
        """
        if cache.entries is None or len(cache.entries) != len(self.layers):
            raise ValueError("stale or mismatched forward cache")
        delta = np.asarray(loss_grad_at_output, dtype=np.float64)
        if delta.ndim == 1:
            delta = delta.reshape(1, -1)
        last_input, last_pre = cache.entries[-1]
        if delta.shape != last_pre.shape:
            raise ValueError(
                f"loss gradient shape {delta.shape} does not match network "
                f"output shape {last_pre.shape}"
            )
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.layers)
        masks = cache.masks
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            a_in, pre = cache.entries[i]
            if layer.activation == RELU:
                delta = delta * (pre > 0.0)
            dw = a_in.T @ delta
            db = delta.sum(axis=0, keepdims=True)
            grads[i] = (dw, db)
            delta = delta @ layer.weights.T
            if masks is not None:
                delta = masks[i].apply(delta)
        for i, (dw, db) in enumerate(grads):
            if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
                raise NumericalError(f"non-finite gradient at layer {i}")
        return grads, delta

    def adam_step(self, grads, learning_rate: float,
                  beta1: float = 0.9, beta2: float = 0.999,
                  eps: float = 1e-8) -> "Network":
        """Apply one Adam update; advances the optimizer state."""
        if len(grads) != len(self.layers):
            raise ValueError("gradient list does not match layer count")
        for i, ((dw, db), layer) in enumerate(zip(grads, self.layers)):
            if dw.shape != layer.weights.shape or db.shape != layer.biases.shape:
                raise ValueError(f"gradient shape mismatch at layer {i}")
            if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
                raise NumericalError(f"non-finite gradient at layer {i}")
        if self._adam is None:
            self._adam = _AdamState.zeros_like(self.layers)
        st = self._adam
        st.t += 1
        bc1 = 1.0 - beta1 ** st.t
        bc2 = 1.0 - beta2 ** st.t
        for i, (layer, (dw, db)) in enumerate(zip(self.layers, grads)):
            for (param, grad, m, v) in (
                (layer.weights, dw, st.m[i][0], st.v[i][0]),
                (layer.biases, db, st.m[i][1], st.v[i][1]),
            ):
                m *= beta1
                m += (1.0 - beta1) * grad
                v *= beta2
                v += (1.0 - beta2) * np.square(grad)
                param -= learning_rate * (m / bc1) / (np.sqrt(v / bc2) + eps)
        return self

    def reset_optimizer(self) -> None:
        self._adam = None


@dataclass
class _ForwardCache:
    entries: list  # [(masked_input, preactivation), ...]
    masks: list[DropoutMask] | None


def sample_layer_masks(net: Network, keep_rate: float, rng,
                       n_rows: int = 1,
                       include_input: bool = True) -> list[DropoutMask]:
    """One mask per layer input, drawn in layer order from ``rng``.

    With ``include_input=False`` the first layer receives an all-ones
    mask (dropout applied only before hidden/output layers).
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    masks = []
    for i, width in enumerate(net.input_widths()):
        if i == 0 and not include_input:
            masks.append(DropoutMask(1.0, np.ones((1, width))))
        else:
            masks.append(sample_mask(keep_rate, width, rng, n_rows=n_rows))
    return masks
