"""MLP topology, fake-quantized forward/backward, and the .qnn model file.

The benchmark network is a sequential stack: an 8-bit input quantizer,
then per hidden width a block of FullyConnected -> BatchNorm -> quantized
HardTanh -> Dropout, then a final FullyConnected producing 10 raw logits.

Training-time inference is fake-quantized: FC layers materialize
dequantized weights (codes * scale as float64), activations snap to their
threshold grid, and all arithmetic stays in float64. The integer-only path
is produced separately by compilation (see streamline module).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container
from .errors import FormatError, ShapeError
from .numerics import Rng, matmul
from .quantizers import (
    dequantize,
    hardtanh_thresholds,
    quantize_weights,
    ste_backward,
    threshold_indices,
)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

INPUT_QUANT = "input_quant"
FC = "fc"
BATCHNORM = "batchnorm"
QUANT_ACT = "quant_act"
DROPOUT = "dropout"


@dataclass
class LayerSpec:
    kind: str
    in_features: int = 0
    out_features: int = 0
    weight_bits: int = 0
    act_bits: int = 0
    dropout_p: float = 0.0
    channels: int = 0
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("batch-norm epsilon must be positive")
        if np.any(self.running_var < 0):
            raise ValueError("running variance must be nonnegative")


@dataclass
class NetworkSpec:
    name: str
    a_bits: int
    w_bits: int
    layers: list[LayerSpec]
    params: dict[str, np.ndarray]
    seed: int = 0

    def fc_layers(self) -> list[tuple[int, LayerSpec]]:
        return [(i, l) for i, l in enumerate(self.layers) if l.kind == FC]

    def bn_params(self, index: int) -> BatchNormParams:
        p = self.params
        return BatchNormParams(
            gamma=p[f"bn{index}.gamma"],
            beta=p[f"bn{index}.beta"],
            running_mean=p[f"bn{index}.running_mean"],
            running_var=p[f"bn{index}.running_var"],
            eps=self.layers[index].eps,
        )


def build_mlp(
    a_bits: int,
    w_bits: int,
    hidden=(64, 64),
    in_features: int = 1024,
    out_classes: int = 10,
    dropout_p: float = 0.2,
    seed: int = 0,
) -> NetworkSpec:
    """Build the named AxWy network with fresh seeded parameters.

    Hidden activations carry a_bits, all FC weights carry w_bits, the input
    quantizer is fixed at 8 unsigned bits. Weights initialize uniform in
    [-1/sqrt(fan_in), +1/sqrt(fan_in)] from the given seed; biases start at
    zero and batch norms at identity.
    """
    if not 2 <= a_bits <= 8:
        raise ValueError(f"activation bit width must be in [2, 8], got {a_bits}")
    if not 2 <= w_bits <= 8:
        raise ValueError(f"weight bit width must be in [2, 8], got {w_bits}")
    if not 0.0 <= dropout_p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {dropout_p}")
    if len(hidden) == 0:
        raise ValueError("need at least one hidden layer")

    rng = Rng(seed)
    layers: list[LayerSpec] = [LayerSpec(kind=INPUT_QUANT, act_bits=8)]
    params: dict[str, np.ndarray] = {}
    prev = in_features
    for width in hidden:
        layers.append(LayerSpec(kind=FC, in_features=prev, out_features=width, weight_bits=w_bits))
        fc_idx = len(layers) - 1
        bound = 1.0 / np.sqrt(prev)
        params[f"fc{fc_idx}.weight"] = rng.uniform_like(-bound, bound, (prev, width))
        params[f"fc{fc_idx}.bias"] = np.zeros(width, dtype=np.float64)
        layers.append(LayerSpec(kind=BATCHNORM, channels=width))
        bn_idx = len(layers) - 1
        params[f"bn{bn_idx}.gamma"] = np.ones(width, dtype=np.float64)
        params[f"bn{bn_idx}.beta"] = np.zeros(width, dtype=np.float64)
        params[f"bn{bn_idx}.running_mean"] = np.zeros(width, dtype=np.float64)
        params[f"bn{bn_idx}.running_var"] = np.ones(width, dtype=np.float64)
        layers.append(LayerSpec(kind=QUANT_ACT, act_bits=a_bits))
        layers.append(LayerSpec(kind=DROPOUT, dropout_p=dropout_p))
        prev = width
    layers.append(LayerSpec(kind=FC, in_features=prev, out_features=out_classes, weight_bits=w_bits))
    fc_idx = len(layers) - 1
    bound = 1.0 / np.sqrt(prev)
    params[f"fc{fc_idx}.weight"] = rng.uniform_like(-bound, bound, (prev, out_classes))
    params[f"fc{fc_idx}.bias"] = np.zeros(out_classes, dtype=np.float64)

    return NetworkSpec(
        name=f"A{a_bits}W{w_bits}",
        a_bits=a_bits,
        w_bits=w_bits,
        layers=layers,
        params=params,
        seed=seed,
    )


def _input_codes(batch: np.ndarray) -> np.ndarray:
    """8-bit input codes: round-half-even of 255*x, clamped to [0, 255]."""
    return np.clip(np.round(batch * 255.0), 0, 255)


def run_forward(
    net: NetworkSpec,
    batch: np.ndarray,
    mode: str = "eval",
    rng: Rng | None = None,
    want_cache: bool = False,
    capture_indices: bool = False,
    quantize: bool = True,
):
    """Single forward pass through the stack.

    Returns (logits, caches, captures). caches hold per-layer intermediates
    for run_backward when want_cache is set; captures collect the level
    index array emitted by each quantized activation when capture_indices
    is set (used by the compile-time equivalence check).

    Train mode uses batch statistics in BatchNorm (and updates the running
    estimates in net.params) and applies inverted dropout from rng. Eval
    mode is a pure function of (params, batch). With quantize=False the
    quantizers become pass-throughs (identity input, float weights, plain
    clipped HardTanh), which is the configuration the finite-difference
    gradient check runs on.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"batch must be 2-D (n, features), got shape {x.shape}")
    first_fc = next(l for l in net.layers if l.kind == FC)
    if x.shape[1] != first_fc.in_features:
        raise ShapeError(f"batch features {x.shape[1]} != network input {first_fc.in_features}")

    caches: list[tuple] = []
    captures: list[np.ndarray] = []
    n = x.shape[0]

    for i, layer in enumerate(net.layers):
        if layer.kind == INPUT_QUANT:
            if quantize:
                x = _input_codes(x) / 255.0
            caches.append((INPUT_QUANT,))
        elif layer.kind == FC:
            w = net.params[f"fc{i}.weight"]
            b = net.params[f"fc{i}.bias"]
            if quantize:
                w_eff = dequantize(quantize_weights(w, layer.weight_bits))
            else:
                w_eff = w
            y = matmul(x, w_eff) + b
            caches.append((FC, i, x, w_eff))
            x = y
        elif layer.kind == BATCHNORM:
            gamma = net.params[f"bn{i}.gamma"]
            beta = net.params[f"bn{i}.beta"]
            if mode == "train":
                mu = x.mean(axis=0)
                var = ((x - mu) ** 2).mean(axis=0)
                inv_std = 1.0 / np.sqrt(var + layer.eps)
                xhat = (x - mu) * inv_std
                m = layer.momentum
                unbiased = var * n / (n - 1) if n > 1 else var
                net.params[f"bn{i}.running_mean"] = (1 - m) * net.params[f"bn{i}.running_mean"] + m * mu
                net.params[f"bn{i}.running_var"] = (1 - m) * net.params[f"bn{i}.running_var"] + m * unbiased
            else:
                inv_std = 1.0 / np.sqrt(net.params[f"bn{i}.running_var"] + layer.eps)
                xhat = (x - net.params[f"bn{i}.running_mean"]) * inv_std
            caches.append((BATCHNORM, i, xhat, inv_std, gamma))
            x = gamma * xhat + beta
        elif layer.kind == QUANT_ACT:
            caches.append((QUANT_ACT, i, x))
            if quantize:
                ts = hardtanh_thresholds(layer.act_bits)
                idx = threshold_indices(x, ts)
                if capture_indices:
                    captures.append(idx)
                x = ts.levels[idx]
            else:
                x = np.clip(x, -1.0, 1.0)
        elif layer.kind == DROPOUT:
            if mode == "train" and layer.dropout_p > 0.0:
                if rng is None:
                    raise ValueError("train-mode forward with dropout needs an Rng")
                keep = rng.uniform_like(0.0, 1.0, x.shape) >= layer.dropout_p
                scale = 1.0 / (1.0 - layer.dropout_p)
                caches.append((DROPOUT, i, keep, scale))
                x = x * keep * scale
            else:
                caches.append((DROPOUT, i, None, 1.0))
        else:
            raise FormatError(f"unknown layer kind {layer.kind!r}")

    if not want_cache:
        caches = []
    return x, caches, captures


def forward(net: NetworkSpec, batch: np.ndarray, mode: str = "eval", rng: Rng | None = None) -> np.ndarray:
    """Logits for a batch. See run_forward for mode semantics."""
    logits, _, _ = run_forward(net, batch, mode=mode, rng=rng)
    return logits


def run_backward(net: NetworkSpec, caches: list[tuple], grad_logits: np.ndarray) -> dict[str, np.ndarray]:
    """Backpropagate grad_logits through cached intermediates.

    Weight quantizers use the identity straight-through estimator (the full
    gradient lands on the latent float weights); activation quantizers use
    the clipped straight-through rule.
    """
    g = np.asarray(grad_logits, dtype=np.float64)
    grads: dict[str, np.ndarray] = {}
    for cache in reversed(caches):
        kind = cache[0]
        if kind == FC:
            _, i, x, w_eff = cache
            grads[f"fc{i}.weight"] = matmul(x.T, g)
            grads[f"fc{i}.bias"] = g.sum(axis=0)
            g = matmul(g, w_eff.T)
        elif kind == BATCHNORM:
            _, i, xhat, inv_std, gamma = cache
            n = xhat.shape[0]
            grads[f"bn{i}.gamma"] = (g * xhat).sum(axis=0)
            grads[f"bn{i}.beta"] = g.sum(axis=0)
            dxhat = g * gamma
            g = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        elif kind == QUANT_ACT:
            _, i, x_in = cache
            g = ste_backward(x_in, g)
        elif kind == DROPOUT:
            _, i, keep, scale = cache
            if keep is not None:
                g = g * keep * scale
        elif kind == INPUT_QUANT:
            break
    return grads


def networks_equal(a: NetworkSpec, b: NetworkSpec) -> bool:
    """Structural and bit-level parameter equality."""
    if (a.name, a.a_bits, a.w_bits, a.seed) != (b.name, b.a_bits, b.w_bits, b.seed):
        return False
    if a.layers != b.layers:
        return False
    if a.params.keys() != b.params.keys():
        return False
    return all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)


def _layer_to_line(layer: LayerSpec) -> str:
    if layer.kind == INPUT_QUANT:
        return f"input_quant bits={layer.act_bits}"
    if layer.kind == FC:
        return f"fc in={layer.in_features} out={layer.out_features} wbits={layer.weight_bits}"
    if layer.kind == BATCHNORM:
        return (
            f"batchnorm channels={layer.channels} eps={container.format_float(layer.eps)}"
            f" momentum={container.format_float(layer.momentum)}"
        )
    if layer.kind == QUANT_ACT:
        return f"quant_act bits={layer.act_bits}"
    if layer.kind == DROPOUT:
        return f"dropout p={container.format_float(layer.dropout_p)}"
    raise ValueError(f"unknown layer kind {layer.kind!r}")


def _layer_from_line(line: str) -> LayerSpec:
    fields = line.split()
    kind = fields[0]
    kv = {}
    for f in fields[1:]:
        if "=" not in f:
            raise FormatError(f"malformed layer attribute {f!r} in {line!r}")
        k, v = f.split("=", 1)
        kv[k] = v
    try:
        if kind == "input_quant":
            return LayerSpec(kind=INPUT_QUANT, act_bits=int(kv["bits"]))
        if kind == "fc":
            return LayerSpec(
                kind=FC,
                in_features=int(kv["in"]),
                out_features=int(kv["out"]),
                weight_bits=int(kv["wbits"]),
            )
        if kind == "batchnorm":
            return LayerSpec(
                kind=BATCHNORM,
                channels=int(kv["channels"]),
                eps=float(kv["eps"]),
                momentum=float(kv["momentum"]),
            )
        if kind == "quant_act":
            return LayerSpec(kind=QUANT_ACT, act_bits=int(kv["bits"]))
        if kind == "dropout":
            return LayerSpec(kind=DROPOUT, dropout_p=float(kv["p"]))
    except (KeyError, ValueError) as e:
        raise FormatError(f"bad layer line {line!r}: {e}") from e
    raise FormatError(f"unknown layer kind in line {line!r}")


def model_manifest_pairs(net: NetworkSpec) -> dict[str, str]:
    pairs = {
        "kind": "model",
        "name": net.name,
        "a_bits": str(net.a_bits),
        "w_bits": str(net.w_bits),
        "seed": str(net.seed),
        "integer": "false",
    }
    for i, layer in enumerate(net.layers):
        pairs[f"layer.{i}"] = _layer_to_line(layer)
    return pairs


def save_model(net: NetworkSpec, path) -> None:
    container.save_container(path, model_manifest_pairs(net), net.params)


def network_from_manifest(manifest: container.Manifest) -> NetworkSpec:
    name = manifest.require("name")
    a_bits = int(manifest.require("a_bits"))
    w_bits = int(manifest.require("w_bits"))
    seed = int(manifest.get("seed", "0"))
    if name != f"A{a_bits}W{w_bits}":
        raise FormatError(f"name {name!r} does not encode a_bits={a_bits}, w_bits={w_bits}")
    layers = []
    i = 0
    while f"layer.{i}" in manifest.pairs:
        layers.append(_layer_from_line(manifest.pairs[f"layer.{i}"]))
        i += 1
    if not layers:
        raise FormatError("model has no layers")
    params = {k: v for k, v in manifest.arrays.items() if not k.startswith(("adam.", "history."))}
    net = NetworkSpec(name=name, a_bits=a_bits, w_bits=w_bits, layers=layers, params=params, seed=seed)
    _validate_network(net)
    return net


def load_model(path) -> NetworkSpec:
    manifest = container.load_container(path)
    kind = manifest.get("kind", "model")
    if kind not in ("model", "checkpoint"):
        raise FormatError(f"expected a model container, found kind={kind!r}")
    return network_from_manifest(manifest)


def _validate_network(net: NetworkSpec) -> None:
    prev_out = None
    for i, layer in enumerate(net.layers):
        if layer.kind == FC:
            w = net.params.get(f"fc{i}.weight")
            b = net.params.get(f"fc{i}.bias")
            if w is None or b is None:
                raise FormatError(f"missing parameters for fc layer {i}")
            if w.size != layer.in_features * layer.out_features:
                raise FormatError(f"fc{i}.weight has {w.size} values, expected {layer.in_features * layer.out_features}")
            net.params[f"fc{i}.weight"] = w.reshape(layer.in_features, layer.out_features)
            if b.size != layer.out_features:
                raise FormatError(f"fc{i}.bias has {b.size} values, expected {layer.out_features}")
            if prev_out is not None and layer.in_features != prev_out:
                raise FormatError(f"fc layer {i} expects {layer.in_features} inputs, previous produced {prev_out}")
            prev_out = layer.out_features
        elif layer.kind == BATCHNORM:
            for field_name in ("gamma", "beta", "running_mean", "running_var"):
                arr = net.params.get(f"bn{i}.{field_name}")
                if arr is None or arr.size != layer.channels:
                    raise FormatError(f"bn{i}.{field_name} missing or wrong size")
            if prev_out is not None and layer.channels != prev_out:
                raise FormatError(f"batchnorm layer {i} has {layer.channels} channels, previous produced {prev_out}")
