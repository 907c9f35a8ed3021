"""3-level 3D U-Net over a 2-channel input (PET + prostate contour).

Encoder levels hold two conv blocks each, the bottleneck two, decoder
levels three, and a final 1x1x1 conv block with sigmoid output: 18 conv
blocks in total. Channels double per level from ``base_channels``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class UNetConfig:
    in_channels: int = 2
    base_channels: int = 32
    levels: int = 3
    out_channels: int = 1

    def validate(self):
        if self.in_channels < 1 or self.base_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")


class Model:
    """Parameter container plus the forward graph builder.

    ``params`` maps names to trainable tensors; ``bn_stats`` holds the
    batch-norm running mean/var arrays (mutated during training-mode
    forward passes). Read-only during inference, single-writer during
    training.
    """

    def __init__(self, config, params, bn_stats, dtype):
        self.config = config
        self.params = params
        self.bn_stats = bn_stats
        self.dtype = dtype

    def parameter_count(self):
        return sum(p.data.size for p in self.params.values())

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()


def _conv_block_params(rng, name, cin, cout, k, params, bn_stats, dtype):
    fan_in = cin * k ** 3
    bound = np.sqrt(6.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(cout, cin, k, k, k))
    params[f"{name}.weight"] = Tensor(w.astype(dtype), requires_grad=True)
    params[f"{name}.bias"] = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
    params[f"{name}.gamma"] = Tensor(np.ones(cout, dtype=dtype), requires_grad=True)
    params[f"{name}.beta"] = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
    bn_stats[f"{name}.running_mean"] = np.zeros(cout, dtype=dtype)
    bn_stats[f"{name}.running_var"] = np.ones(cout, dtype=dtype)


def _up_params(rng, name, cin, cout, params, dtype):
    fan_in = cin * 8
    bound = np.sqrt(6.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(cin, cout, 2, 2, 2))
    params[f"{name}.weight"] = Tensor(w.astype(dtype), requires_grad=True)
    params[f"{name}.bias"] = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)


def _channel_plan(config):
    enc = [config.base_channels * 2 ** l for l in range(config.levels)]
    bottleneck = config.base_channels * 2 ** config.levels
    return enc, bottleneck


def build(config, seed, dtype=np.float32):
    """Create a model with He-uniform (fan-in) seeded initialization."""
    config.validate()
    rng = np.random.default_rng(seed)
    params, bn_stats = {}, {}
    enc_ch, bott_ch = _channel_plan(config)

    cin = config.in_channels
    for l, cout in enumerate(enc_ch):
        _conv_block_params(rng, f"enc{l}.conv0", cin, cout, 3, params, bn_stats, dtype)
        _conv_block_params(rng, f"enc{l}.conv1", cout, cout, 3, params, bn_stats, dtype)
        cin = cout

    _conv_block_params(rng, "bottleneck.conv0", cin, bott_ch, 3, params, bn_stats, dtype)
    _conv_block_params(rng, "bottleneck.conv1", bott_ch, bott_ch, 3, params, bn_stats, dtype)

    cin = bott_ch
    for l in reversed(range(config.levels)):
        skip = enc_ch[l]
        _up_params(rng, f"dec{l}.up", cin, skip, params, dtype)
        _conv_block_params(rng, f"dec{l}.conv0", 2 * skip, skip, 3, params, bn_stats, dtype)
        _conv_block_params(rng, f"dec{l}.conv1", skip, skip, 3, params, bn_stats, dtype)
        _conv_block_params(rng, f"dec{l}.conv2", skip, skip, 3, params, bn_stats, dtype)
        cin = skip

    _conv_block_params(rng, "final.conv", enc_ch[0], config.out_channels, 1,
                       params, bn_stats, dtype)
    # start from a near-empty prediction: biasing the output logits
    # negative keeps dice-loss training out of the half-on plateau
    params["final.conv.beta"].data[:] = -3.0
    return Model(config, params, bn_stats, dtype)


def _conv_block(model, name, x, training, trace):
    p, s = model.params, model.bn_stats
    k = p[f"{name}.weight"].shape[2]
    pad = 1 if k == 3 else 0
    out = ad.conv3d(x, p[f"{name}.weight"], p[f"{name}.bias"], padding=pad)
    out = ad.batchnorm3d(out, p[f"{name}.gamma"], p[f"{name}.beta"],
                         s[f"{name}.running_mean"], s[f"{name}.running_var"],
                         training=training)
    if trace is not None:
        trace.append(("conv_block", k))
    return out


def forward(model, x, training=False, _trace=None):
    """Run the network on a (1, 2, D, H, W) tensor, returning voxelwise
    probabilities of the same spatial shape.

    Channel 0 is the normalized PET, channel 1 the binary prostate mask.
    D, H, W must be divisible by 2**levels.
    """
    if x.data.ndim != 5:
        raise ValueError(f"input must be 5-D (B,C,D,H,W), got {x.data.ndim}-D")
    if x.shape[1] != model.config.in_channels:
        raise ValueError(
            f"input has {x.shape[1]} channels, model expects {model.config.in_channels}")
    div = 2 ** model.config.levels
    for axis, extent in zip("zyx", x.shape[2:]):
        if extent % div != 0:
            raise ValueError(
                f"spatial extent on axis {axis} ({extent}) not divisible by {div}")

    skips = []
    h = x
    for l in range(model.config.levels):
        h = _conv_block(model, f"enc{l}.conv0", h, training, _trace)
        h = _conv_block(model, f"enc{l}.conv1", h, training, _trace)
        skips.append(h)
        h, _ = ad.maxpool3d(h)
        if _trace is not None:
            _trace.append(("maxpool", 2))

    h = _conv_block(model, "bottleneck.conv0", h, training, _trace)
    h = _conv_block(model, "bottleneck.conv1", h, training, _trace)

    for l in reversed(range(model.config.levels)):
        p = model.params
        h = ad.conv_transpose3d(h, p[f"dec{l}.up.weight"], p[f"dec{l}.up.bias"])
        if _trace is not None:
            _trace.append(("conv_transpose", 2))
        h = ad.concat_channels(skips[l], h)
        if _trace is not None:
            _trace.append(("concat", None))
        h = _conv_block(model, f"dec{l}.conv0", h, training, _trace)
        h = _conv_block(model, f"dec{l}.conv1", h, training, _trace)
        h = _conv_block(model, f"dec{l}.conv2", h, training, _trace)

    h = _conv_block(model, "final.conv", h, training, _trace)
    return ad.sigmoid(h)


def census(model):
    """Count the network's building blocks by tracing a small forward pass."""
    div = 2 ** model.config.levels
    probe = Tensor(np.zeros((1, model.config.in_channels, div, div, div),
                            dtype=model.dtype))
    trace = []
    forward(model, probe, training=False, _trace=trace)
    return {
        "conv_blocks": sum(1 for op, _ in trace if op == "conv_block"),
        "conv_blocks_3x3x3": sum(1 for op, k in trace if op == "conv_block" and k == 3),
        "conv_blocks_1x1x1": sum(1 for op, k in trace if op == "conv_block" and k == 1),
        "max_pools": sum(1 for op, _ in trace if op == "maxpool"),
        "transposed_convs": sum(1 for op, _ in trace if op == "conv_transpose"),
        "concatenations": sum(1 for op, _ in trace if op == "concat"),
    }


def predict_mask(prob, prostate_mask, threshold=0.5):
    """Binary tumour mask: probability above threshold AND inside the prostate."""
    if prob.shape != prostate_mask.shape:
        raise ValueError(
            f"shape mismatch: prob {prob.shape} vs prostate {prostate_mask.shape}")
    out = (prob.data > threshold) & (prostate_mask.data > 0)
    return ad.LabelTensor(out.astype(prob.dtype))
