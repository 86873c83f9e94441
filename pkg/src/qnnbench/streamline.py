"""Compile a trained quantized net into an integer-only inference graph.

Each hidden block FC -> BatchNorm -> quantized HardTanh collapses into an
integer matrix of weight codes plus per-channel integer thresholds on the
raw accumulator. The algebra, per output channel j of a layer whose inputs
are integer codes n_i with real value alpha*n_i + beta:

    pre-activation v_j = s_w*(alpha*acc_j + beta*R_j) + bias_j      (FC)
                   z_j = a_j*v_j + b_j = G_j*acc_j + H_j            (folded BN)

with acc_j = sum_i n_i*C[i,j] (codes C, scale s_w) and R_j = sum_i C[i,j].
The activation's level index is the count of thresholds t_k strictly below
z_j, which over integer accumulators reduces to acc_j > T_k for integer
T_k = floor((t_k - H_j)/G_j). Channels with G_j < 0 reverse the level order:
their sorted thresholds use T_k = ceil(.)-1 together with a flip flag
(index = count from the top). The final FC keeps a real output affine so
logits stay recoverable; argmax never needs it on-device.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import container, model
from .errors import CompileError, DegenerateChannelError, FormatError
from .quantizers import QuantizedTensor, hardtanh_thresholds, quantize_weights

INPUT_BITS = 8


@dataclass
class AffineParams:
    """Per-channel y = scale*x + bias."""

    scale: np.ndarray
    bias: np.ndarray


@dataclass
class IntegerLayer:
    weight_codes: np.ndarray          # int64 (in_features, out_features)
    acc_bits: int
    thresholds: np.ndarray | None     # int64 (out_features, 2^a - 1), ascending rows
    flip: np.ndarray | None           # bool (out_features,) — reversed level order
    n_levels: int                     # 2^a for hidden layers, 0 for the output FC

    @property
    def in_features(self) -> int:
        return self.weight_codes.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight_codes.shape[1]


@dataclass
class IntegerNetwork:
    name: str
    a_bits: int
    w_bits: int
    layers: list[IntegerLayer]
    output_affine: AffineParams
    input_bits: int = INPUT_BITS
    saturation_warnings: list[str] = field(default_factory=list)


def fold_batchnorm(bn: model.BatchNormParams) -> AffineParams:
    """Eval-mode BatchNorm as per-channel affine: a = gamma/sqrt(var+eps)."""
    scale = bn.gamma / np.sqrt(bn.running_var + bn.eps)
    return AffineParams(scale=scale, bias=bn.beta - scale * bn.running_mean)


def push_affine_into_thresholds(aff: AffineParams, thresholds: np.ndarray):
    """Rewrite thresholds of z = a*x + b as thresholds on x.

    Returns (per_channel_thresholds (C, m) ascending, flip (C,)). Negative
    scales reverse the threshold order; the flip flag records that the level
    index must be counted from the top so the composed mapping
    apply(x, t') == apply(a*x + b, t) still holds.
    """
    if np.any(aff.scale == 0.0):
        dead = np.flatnonzero(aff.scale == 0.0)
        raise DegenerateChannelError(f"zero batch-norm scale in channel(s) {dead.tolist()}")
    t = np.asarray(thresholds, dtype=np.float64)
    pushed = (t[None, :] - aff.bias[:, None]) / aff.scale[:, None]
    flip = aff.scale < 0.0
    pushed[flip] = pushed[flip, ::-1]
    return pushed, flip


def integerize_thresholds(real_thresholds: np.ndarray, weight_scale: float, input_scale: float = 1.0, flip=None):
    """Express real thresholds in accumulator units with the strict-greater compare.

    The accumulator carries value weight_scale*input_scale per unit. For
    integer accumulators, acc*s > t  <=>  acc > floor(t/s) on normal
    channels; flipped channels need acc >= t/s, i.e. acc > ceil(t/s)-1 —
    the two rules differ only at exact-integer ratios, where rounding to
    the wrong side is the classic off-by-one.
    """
    acc_scale = weight_scale * input_scale
    if acc_scale <= 0:
        raise ValueError(f"accumulator scale must be positive, got {acc_scale}")
    tau = np.asarray(real_thresholds, dtype=np.float64) / acc_scale
    if flip is None:
        out = np.floor(tau)
    else:
        out = np.where(np.asarray(flip)[..., None], np.ceil(tau) - 1.0, np.floor(tau))
    return out.astype(np.int64)


def _accumulator_range(codes: np.ndarray, code_max: int):
    """Exact per-channel [lo, hi] of sum_i n_i*C[i,j] over n_i in [0, code_max]."""
    lo = code_max * np.minimum(codes, 0).sum(axis=0)
    hi = code_max * np.maximum(codes, 0).sum(axis=0)
    return lo, hi


def _accumulator_bits(in_features: int, w_bits: int, input_bits: int, lo, hi) -> int:
    """Conservative width formula, widened if the exact interval demands it."""
    formula = int(np.ceil(np.log2(in_features))) + (w_bits - 1) + input_bits
    bits = formula
    while int(lo.min()) < -(2 ** (bits - 1)) or int(hi.max()) > 2 ** (bits - 1) - 1:
        bits += 1
    return bits


def _quantized_fc(net: model.NetworkSpec, index: int) -> tuple[QuantizedTensor, np.ndarray]:
    layer = net.layers[index]
    q = quantize_weights(net.params[f"fc{index}.weight"], layer.weight_bits)
    return q, net.params[f"fc{index}.bias"]


def streamline(net) -> IntegerNetwork:
    """Full compile pass: fold BN, push affines, integerize, erase dropout."""
    if isinstance(net, IntegerNetwork):
        raise CompileError("network is already integer (streamlining is not idempotent)")
    # expected shape: input_quant, then (fc, batchnorm, quant_act[, dropout])*, final fc
    kinds = [l.kind for l in net.layers]
    if not kinds or kinds[0] != model.INPUT_QUANT:
        raise CompileError(f"first layer must be input_quant, found {kinds[0] if kinds else 'nothing'}")
    seq = [(i, l) for i, l in enumerate(net.layers) if l.kind != model.DROPOUT]

    out_layers: list[IntegerLayer] = []
    warnings: list[str] = []
    alpha, beta = 1.0 / 255.0, 0.0        # input codes: x = n/255
    code_max = 255
    pos = 1
    while pos < len(seq):
        fc_i, fc = seq[pos]
        if fc.kind != model.FC:
            prev_kind = seq[pos - 1][1].kind
            raise CompileError(f"expected fc after {prev_kind}, found {fc.kind} (layer {fc_i})")
        q, bias = _quantized_fc(net, fc_i)
        codes = q.codes.astype(np.int64)
        row_sum = codes.sum(axis=0)
        a_scale = q.scale * alpha                       # v = a_scale*acc + bias_vec
        bias_vec = q.scale * beta * row_sum + bias
        lo, hi = _accumulator_range(codes, code_max)
        acc_bits = _accumulator_bits(fc.in_features, fc.weight_bits, int(np.log2(code_max + 1)), lo, hi)

        if pos + 1 == len(seq):
            # final FC: logits = a_scale*acc + bias_vec, recovered on the host
            out_layers.append(
                IntegerLayer(
                    weight_codes=codes,
                    acc_bits=acc_bits,
                    thresholds=None,
                    flip=None,
                    n_levels=0,
                )
            )
            affine = AffineParams(
                scale=np.full(fc.out_features, a_scale, dtype=np.float64),
                bias=np.asarray(bias_vec, dtype=np.float64),
            )
            return IntegerNetwork(
                name=net.name,
                a_bits=net.a_bits,
                w_bits=net.w_bits,
                layers=out_layers,
                output_affine=affine,
                saturation_warnings=warnings,
            )

        bn_i, bn = seq[pos + 1]
        if bn.kind != model.BATCHNORM:
            raise CompileError(f"expected batchnorm after fc (layer {fc_i}), found {bn.kind} (layer {bn_i})")
        qa_i, qa = seq[pos + 2] if pos + 2 < len(seq) else (None, None)
        if qa is None or qa.kind != model.QUANT_ACT:
            found = qa.kind if qa is not None else "end of network"
            raise CompileError(f"expected quant_act after batchnorm (layer {bn_i}), found {found}")

        # thresholds move through BN first (t -> thresholds on v), then the
        # FC bias shifts them, and the residual scale s_w*alpha integerizes
        folded = fold_batchnorm(net.bn_params(bn_i))
        ts = hardtanh_thresholds(qa.act_bits)
        pushed, flip = push_affine_into_thresholds(folded, ts.thresholds)
        integer_t = integerize_thresholds(pushed - bias_vec[:, None], q.scale, alpha, flip)

        # clamp thresholds to the reachable accumulator interval; a threshold
        # at lo-1 always passes, one at hi never does (saturated channel)
        below = integer_t < (lo[:, None] - 1)
        above = integer_t > hi[:, None]
        if below.any() or above.any():
            for ch in np.flatnonzero(below.any(axis=1) | above.any(axis=1)):
                warnings.append(
                    f"layer {fc_i} channel {ch}: thresholds clamped to accumulator range"
                    f" [{lo[ch]}, {hi[ch]}]"
                )
            integer_t = np.clip(integer_t, lo[:, None] - 1, hi[:, None])

        out_layers.append(
            IntegerLayer(
                weight_codes=codes,
                acc_bits=acc_bits,
                thresholds=integer_t,
                flip=flip,
                n_levels=2**qa.act_bits,
            )
        )
        n_levels = 2**qa.act_bits
        alpha, beta = 2.0 / (n_levels - 1), -1.0        # level value = alpha*index - 1
        code_max = n_levels - 1
        pos += 3
    raise CompileError("network ends without a final fc layer")


def integer_forward(inet: IntegerNetwork, input_codes: np.ndarray, capture_indices: bool = False):
    """Integer-only inference over uint8/level-index codes.

    Returns (logits, captures); logits come from the host-side output affine.
    """
    x = np.asarray(input_codes, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != inet.layers[0].in_features:
        raise ValueError(f"input codes must be (n, {inet.layers[0].in_features}), got {x.shape}")
    captures = []
    for layer in inet.layers:
        acc = np.matmul(x, layer.weight_codes)          # exact in int64
        if layer.thresholds is None:
            logits = inet.output_affine.scale * acc + inet.output_affine.bias
            return logits, captures
        m = layer.n_levels - 1
        idx = np.empty_like(acc)
        for j in range(layer.out_features):
            count = np.searchsorted(layer.thresholds[j], acc[:, j], side="left")
            idx[:, j] = m - count if layer.flip[j] else count
        if capture_indices:
            captures.append(idx)
        x = idx
    raise CompileError("integer network has no output layer")


@dataclass
class EquivalenceReport:
    n_inputs: int
    hidden_mismatches: int
    argmax_mismatches: int
    details: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.hidden_mismatches == 0 and self.argmax_mismatches == 0


def verify_equivalence(net: model.NetworkSpec, inet: IntegerNetwork, inputs: np.ndarray, max_details: int = 64) -> EquivalenceReport:
    """Compare the integer path against the reference quantized forward.

    Hidden activation level indices must be bit-equal and the output argmax
    identical, input by input. Mismatches are reported (layer, channel,
    input index), never raised.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    report = EquivalenceReport(n_inputs=inputs.shape[0], hidden_mismatches=0, argmax_mismatches=0)
    if inputs.shape[0] == 0:
        return report
    ref_logits, _, ref_idx = model.run_forward(net, inputs, mode="eval", capture_indices=True)
    codes = np.clip(np.round(inputs * 255.0), 0, 255).astype(np.int64)
    int_logits, int_idx = integer_forward(inet, codes, capture_indices=True)
    for layer_no, (a, b) in enumerate(zip(ref_idx, int_idx)):
        diff = a != b
        if diff.any():
            report.hidden_mismatches += int(diff.sum())
            for row, ch in zip(*np.nonzero(diff)):
                if len(report.details) >= max_details:
                    break
                report.details.append(
                    {
                        "kind": "hidden",
                        "layer": int(layer_no),
                        "channel": int(ch),
                        "input": int(row),
                        "reference": int(a[row, ch]),
                        "integer": int(b[row, ch]),
                    }
                )
    ref_arg = np.argmax(ref_logits, axis=1)
    int_arg = np.argmax(int_logits, axis=1)
    diff = ref_arg != int_arg
    report.argmax_mismatches = int(diff.sum())
    for row in np.nonzero(diff)[0]:
        if len(report.details) >= max_details:
            break
        report.details.append(
            {
                "kind": "argmax",
                "layer": len(inet.layers) - 1,
                "channel": -1,
                "input": int(row),
                "reference": int(ref_arg[row]),
                "integer": int(int_arg[row]),
            }
        )
    return report


# --- serialization ---------------------------------------------------------

def save_integer_network(inet: IntegerNetwork, path) -> None:
    pairs = {
        "kind": "integer_network",
        "integer": "true",
        "name": inet.name,
        "a_bits": str(inet.a_bits),
        "w_bits": str(inet.w_bits),
        "input_bits": str(inet.input_bits),
        "n_layers": str(len(inet.layers)),
    }
    arrays = {}
    for i, layer in enumerate(inet.layers):
        pairs[f"layer.{i}"] = (
            f"intfc in={layer.in_features} out={layer.out_features}"
            f" acc_bits={layer.acc_bits} levels={layer.n_levels}"
        )
        arrays[f"l{i}.codes"] = layer.weight_codes.astype(np.int32)
        if layer.thresholds is not None:
            if np.any(layer.thresholds > np.iinfo(np.int32).max) or np.any(
                layer.thresholds < np.iinfo(np.int32).min
            ):
                raise CompileError(f"layer {i} thresholds exceed the signed 32-bit storage format")
            arrays[f"l{i}.thresholds"] = layer.thresholds.astype(np.int32)
            arrays[f"l{i}.flip"] = layer.flip.astype(np.int32)
    arrays["out.scale"] = inet.output_affine.scale
    arrays["out.bias"] = inet.output_affine.bias
    for w_i, w in enumerate(inet.saturation_warnings):
        pairs[f"warning.{w_i}"] = w
    container.save_container(path, pairs, arrays)


def load_integer_network(path) -> IntegerNetwork:
    manifest = container.load_container(path)
    if manifest.get("integer") != "true":
        raise FormatError(f"{path} is not an integer network")
    n_layers = int(manifest.require("n_layers"))
    layers = []
    for i in range(n_layers):
        fields = dict(f.split("=") for f in manifest.require(f"layer.{i}").split()[1:])
        in_f, out_f = int(fields["in"]), int(fields["out"])
        levels = int(fields["levels"])
        codes = manifest.arrays[f"l{i}.codes"].astype(np.int64).reshape(in_f, out_f)
        if levels > 0:
            thresholds = manifest.arrays[f"l{i}.thresholds"].astype(np.int64).reshape(out_f, levels - 1)
            flip = manifest.arrays[f"l{i}.flip"].astype(bool)
        else:
            thresholds, flip = None, None
        layers.append(
            IntegerLayer(
                weight_codes=codes,
                acc_bits=int(fields["acc_bits"]),
                thresholds=thresholds,
                flip=flip,
                n_levels=levels,
            )
        )
    affine = AffineParams(scale=manifest.arrays["out.scale"], bias=manifest.arrays["out.bias"])
    warnings = []
    i = 0
    while f"warning.{i}" in manifest.pairs:
        warnings.append(manifest.pairs[f"warning.{i}"])
        i += 1
    return IntegerNetwork(
        name=manifest.require("name"),
        a_bits=int(manifest.require("a_bits")),
        w_bits=int(manifest.require("w_bits")),
        layers=layers,
        output_affine=affine,
        input_bits=int(manifest.get("input_bits", "8")),
        saturation_warnings=warnings,
    )
