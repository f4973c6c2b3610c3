"""Minimal dense networks with reverse-mode gradients, Adam and soft target updates.

All parameters of a :class:`DenseNet` live in one flat vector; per-layer
weights and biases are views into it.  That keeps Adam, soft updates and
checkpointing to a handful of vectorized operations.

Batches are row-major: an input of shape ``(batch, in_dim)`` produces an
output of shape ``(batch, out_dim)``.  A 1-D input is treated as a batch of
one and the output is returned 1-D as well.
"""

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "CHECKPOINT_FORMAT",
    "CHECKPOINT_VERSION",
    "CheckpointError",
    "LayerSpec",
    "DenseNet",
    "TargetPair",
    "mlp_spec",
    "init_net",
    "forward",
    "backward",
    "adam_step",
    "soft_update",
    "save_checkpoint",
    "load_checkpoint",
]

ACTIVATIONS = ("relu", "sigmoid", "linear")
CHECKPOINT_FORMAT = "mecoffload-densenet"
CHECKPOINT_VERSION = "1"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class CheckpointError(ValueError):
    """Unreadable, mismatched or corrupted checkpoint."""


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ValueError(f"layer dimensions must be positive, got {self.in_dim}->{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")


def mlp_spec(in_dim, hidden, out_dim, out_activation="linear", aux_dim=0, aux_inject=None):
    """Build a layer list for ``in_dim -> hidden... -> out_dim``.

    With ``aux_inject=k`` the input width of layer ``k`` grows by ``aux_dim``
    so an auxiliary vector can be concatenated there.
    """
    dims = [in_dim, *hidden, out_dim]
    layers = []
    for i in range(len(dims) - 1):
        extra = aux_dim if aux_inject == i else 0
        act = out_activation if i == len(dims) - 2 else "relu"
        layers.append(LayerSpec(dims[i] + extra, dims[i + 1], act))
    return layers


class DenseNet:
    """Fully connected network with an optional auxiliary input at one layer."""

    def __init__(self, layers, aux_inject=None):
        layers = [l if isinstance(l, LayerSpec) else LayerSpec(*l) for l in layers]
        if not layers:
            raise ValueError("a network needs at least one layer")
        if aux_inject is not None:
            if not 1 <= aux_inject < len(layers):
                raise ValueError(f"aux_inject={aux_inject} does not name a hidden-fed layer")
            if layers[aux_inject].in_dim <= layers[aux_inject - 1].out_dim:
                raise ValueError("aux-injected layer must be wider than its predecessor's output")
        for i in range(1, len(layers)):
            expect = layers[i - 1].out_dim
            if i == aux_inject:
                expect = layers[i].in_dim
            if layers[i].in_dim != expect:
                raise ValueError(f"layer {i} input width {layers[i].in_dim} != {expect}")
        self.layers = layers
        self.aux_inject = aux_inject

        self._slices = []
        offset = 0
        for l in layers:
            w = slice(offset, offset + l.in_dim * l.out_dim)
            offset = w.stop
            b = slice(offset, offset + l.out_dim)
            offset = b.stop
            self._slices.append((w, b))
        self.params = np.zeros(offset)
        self.adam_m = np.zeros(offset)
        self.adam_v = np.zeros(offset)
        self.adam_t = 0
        self.version = 0

    @property
    def n_params(self):
        return self.params.size

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    @property
    def aux_dim(self):
        if self.aux_inject is None:
            return 0
        k = self.aux_inject
        return self.layers[k].in_dim - self.layers[k - 1].out_dim

    def weights(self, i):
        l = self.layers[i]
        return self.params[self._slices[i][0]].reshape(l.in_dim, l.out_dim)

    def biases(self, i):
        return self.params[self._slices[i][1]]

    def layer_view(self, flat, i):
        """Split a flat parameter-shaped vector into the (weights, biases) of layer ``i``."""
        l = self.layers[i]
        w, b = self._slices[i]
        return flat[w].reshape(l.in_dim, l.out_dim), flat[b]

    def same_architecture(self, other):
        return self.layers == other.layers and self.aux_inject == other.aux_inject

    def copy(self):
        return copy.deepcopy(self)

    def touch(self):
        self.version += 1

    def __call__(self, x, aux=None):
        return forward(self, x, aux)[0]

    def __repr__(self):
        arch = " -> ".join(str(l.out_dim) for l in self.layers)
        return f"DenseNet({self.input_dim} -> {arch}, aux_inject={self.aux_inject})"


def init_net(layers, rng, aux_inject=None, final_scale=3e-3):
    """Create a network with hidden layers uniform in +-1/sqrt(fan_in) and the
    output layer uniform in +-final_scale; Adam state zeroed."""
    net = DenseNet(layers, aux_inject=aux_inject)
    last = len(net.layers) - 1
    for i, l in enumerate(net.layers):
        bound = final_scale if i == last else 1.0 / np.sqrt(l.in_dim)
        W, b = net.layer_view(net.params, i)
        W[...] = rng.uniform(-bound, bound, size=W.shape)
        b[...] = rng.uniform(-bound, bound, size=b.shape)
    return net


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


@dataclass
class _Cache:
    net_id: int
    version: int
    squeeze: bool
    inputs: list
    outputs: list


def forward(net, x, aux=None):
    """Evaluate the network; returns ``(output, cache)``."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != net.input_dim:
        raise ValueError(f"input width {x.shape[1]} != network input {net.input_dim}")
    if (aux is None) != (net.aux_inject is None):
        raise ValueError("aux input must be given exactly when the network has aux_inject")
    if aux is not None:
        aux = np.asarray(aux, dtype=float)
        if aux.ndim == 1:
            aux = aux[None, :]
        if aux.shape != (x.shape[0], net.aux_dim):
            raise ValueError(f"aux shape {aux.shape} != {(x.shape[0], net.aux_dim)}")

    inputs, outputs = [], []
    h = x
    for i, l in enumerate(net.layers):
        if i == net.aux_inject:
            h = np.concatenate([h, aux], axis=1)
        W, b = net.layer_view(net.params, i)
        inputs.append(h)
        h = _activate(h @ W + b, l.activation)
        outputs.append(h)
    cache = _Cache(id(net), net.version, squeeze, inputs, outputs)
    return (h[0] if squeeze else h), cache


def backward(net, cache, grad_out):
    """Reverse-mode pass for ``sum(output * grad_out)``.

    Returns ``(param_grads, grad_x, grad_aux)``; ``param_grads`` is flat with
    the same layout as ``net.params`` and ``grad_aux`` is ``None`` when the
    network has no auxiliary input.
    """
    if cache.net_id != id(net) or cache.version != net.version:
        raise ValueError("stale or foreign forward cache")
    g = np.asarray(grad_out, dtype=float)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.outputs[-1].shape:
        raise ValueError(f"grad_out shape {g.shape} != output shape {cache.outputs[-1].shape}")

    grads = np.zeros_like(net.params)
    grad_aux = None
    for i in range(len(net.layers) - 1, -1, -1):
        l = net.layers[i]
        y = cache.outputs[i]
        if l.activation == "relu":
            g = g * (y > 0)
        elif l.activation == "sigmoid":
            g = g * y * (1.0 - y)
        W, _ = net.layer_view(net.params, i)
        gW, gb = net.layer_view(grads, i)
        gW[...] = cache.inputs[i].T @ g
        gb[...] = g.sum(axis=0)
        g = g @ W.T
        if i == net.aux_inject:
            split = net.layers[i - 1].out_dim
            grad_aux = g[:, split:]
            g = g[:, :split]
    if cache.squeeze:
        g = g[0]
        grad_aux = None if grad_aux is None else grad_aux[0]
    return grads, g, grad_aux


def adam_step(net, grads, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """One bias-corrected Adam descent step on ``net`` in place."""
    grads = np.asarray(grads, dtype=float)
    if grads.shape != net.params.shape:
        raise ValueError(f"gradient shape {grads.shape} != parameter shape {net.params.shape}")
    net.adam_t += 1
    t = net.adam_t
    net.adam_m *= beta1
    net.adam_m += (1.0 - beta1) * grads
    net.adam_v *= beta2
    net.adam_v += (1.0 - beta2) * grads * grads
    m_hat = net.adam_m / (1.0 - beta1**t)
    v_hat = net.adam_v / (1.0 - beta2**t)
    net.params -= lr * m_hat / (np.sqrt(v_hat) + eps)
    net.touch()


class TargetPair:
    """A learned network and its slowly tracking target copy."""

    def __init__(self, learned, target=None):
        if target is None:
            target = learned.copy()
        if not learned.same_architecture(target):
            raise ValueError("learned and target networks differ in architecture")
        self.learned = learned
        self.target = target

    def __repr__(self):
        return f"TargetPair({self.learned!r})"


def soft_update(pair, tau):
    """Move every target parameter to ``tau * learned + (1 - tau) * target``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if not pair.learned.same_architecture(pair.target):
        raise ValueError("learned and target networks differ in architecture")
    tgt = pair.target.params
    tgt *= 1.0 - tau
    tgt += tau * pair.learned.params
    pair.target.touch()


def _net_to_dict(net):
    layers = []
    for i, l in enumerate(net.layers):
        W, b = net.layer_view(net.params, i)
        mW, mb = net.layer_view(net.adam_m, i)
        vW, vb = net.layer_view(net.adam_v, i)
        layers.append(
            {
                "in_dim": l.in_dim,
                "out_dim": l.out_dim,
                "activation": l.activation,
                "weights": W.tolist(),
                "biases": b.tolist(),
                "adam_m": np.concatenate([mW.ravel(), mb]).tolist(),
                "adam_v": np.concatenate([vW.ravel(), vb]).tolist(),
            }
        )
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "aux_inject": net.aux_inject,
        "adam_t": net.adam_t,
        "layers": layers,
    }


def _net_from_dict(doc):
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not a dense-network checkpoint (format field missing or wrong)")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {doc.get('version')!r} is not supported (expected {CHECKPOINT_VERSION!r})"
        )
    try:
        specs = [LayerSpec(int(l["in_dim"]), int(l["out_dim"]), l["activation"]) for l in doc["layers"]]
        net = DenseNet(specs, aux_inject=doc.get("aux_inject"))
        for i, (l, spec) in enumerate(zip(doc["layers"], specs)):
            W, b = net.layer_view(net.params, i)
            w_arr = np.array(l["weights"], dtype=float)
            b_arr = np.array(l["biases"], dtype=float)
            if w_arr.shape != W.shape or b_arr.shape != b.shape:
                raise CheckpointError(
                    f"layer {i}: array shapes {w_arr.shape}/{b_arr.shape} do not match "
                    f"declared {spec.in_dim}x{spec.out_dim}"
                )
            W[...] = w_arr
            b[...] = b_arr
            for name, flat in (("adam_m", net.adam_m), ("adam_v", net.adam_v)):
                arr = np.array(l[name], dtype=float)
                if arr.shape != (W.size + b.size,):
                    raise CheckpointError(f"layer {i}: {name} has shape {arr.shape}, expected {(W.size + b.size,)}")
                mW, mb = net.layer_view(flat, i)
                mW[...] = arr[: W.size].reshape(W.shape)
                mb[...] = arr[W.size :]
        net.adam_t = int(doc["adam_t"])
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if net.adam_t < 0:
        raise CheckpointError("negative Adam step counter")
    return net


def save_checkpoint(net, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_net_to_dict(net), indent=1) + "\n")


def load_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid checkpoint text ({exc})") from exc
    return _net_from_dict(doc)
