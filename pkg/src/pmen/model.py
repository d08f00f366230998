"""The double-input enhancement network and its fusion variants.

Topology (all convs 3x3 "same", C feature maps unless noted):

  frame stream : conv(1->C) + ReLU, then R residual blocks
                 (block = conv->BN->ReLU->conv->BN, identity add, ReLU)
  mask stream  : AF only — same topology on the 1-channel mask
  fusion       : AF = elementwise add of the two stream outputs
                 CF = one stream whose stem conv reads the 2-channel
                      concat of frame and mask
                 EF = mask through three conv+ReLU layers, added to the
                      frame stream right after its stem
  tail         : conv(C->C)+ReLU (enhancement), conv(C->C)+ReLU (mapping),
                 conv(C->1) linear (reconstruction)
  global skip  : output = reconstruction + input frame plane

The topology is fixed, so backward passes are hand-wired in exact
reverse order rather than derived from a graph.
"""

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .masks import BOUNDARY, MASK_KINDS, MEAN, Mask

SINGLE = "single"
AF = "af"
CF = "cf"
EF = "ef"
VARIANTS = (SINGLE, AF, CF, EF)


@dataclass
class ArchConfig:
    variant: str = SINGLE
    num_res_blocks: int = 2
    channels: int = 64
    kernel: int = 3
    global_skip: bool = True
    mask_kind: str = MEAN

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.num_res_blocks < 1:
            raise ConfigError(f"num_res_blocks must be >= 1, got {self.num_res_blocks}")
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel must be odd and >= 1, got {self.kernel}")
        if self.mask_kind not in MASK_KINDS:
            raise ConfigError(f"unknown mask kind {self.mask_kind!r}, expected one of {MASK_KINDS}")

    @property
    def needs_mask(self) -> bool:
        return self.variant != SINGLE

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "num_res_blocks": self.num_res_blocks,
            "channels": self.channels,
            "kernel": self.kernel,
            "global_skip": self.global_skip,
            "mask_kind": self.mask_kind,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**d)


class ConvLayer:
    def __init__(self, name: str, cin: int, cout: int, kernel: int, rng, dtype,
                 zero_init: bool = False):
        self.name = name
        # fan-in-scaled uniform init (He-style for ReLU nets), zero bias;
        # the reconstruction layer is zero-initialized instead so a
        # global-skip model starts as an exact identity
        fan_in = cin * kernel * kernel
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(cout, cin, kernel, kernel))
        if zero_init:
            w = np.zeros_like(w)
        self.params = ops.ConvParams(
            weights=w.astype(dtype), bias=np.zeros(cout, dtype=dtype)
        )
        self._x = None
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return ops.conv2d_forward(x, self.params)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad_x, gw, gb = ops.conv2d_backward(self._x, self.params, grad_out)
        self.grads = {f"{self.name}.weight": gw, f"{self.name}.bias": gb}
        return grad_x

    def named_params(self):
        yield f"{self.name}.weight", self.params.weights
        yield f"{self.name}.bias", self.params.bias

    def named_arrays(self):
        yield from self.named_params()

    def set_param(self, name: str, value: np.ndarray):
        if name.endswith(".weight"):
            self.params.weights = value
        else:
            self.params.bias = value


class BatchNormLayer:
    def __init__(self, name: str, channels: int, dtype):
        self.name = name
        self.params = ops.BatchNormParams(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )
        self._x = None
        self._stats = None
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, mode: str) -> np.ndarray:
        self._x = x
        y, self._stats = ops.batchnorm_forward(x, self.params, mode)
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad_x, gg, gb = ops.batchnorm_backward(self._x, self.params, self._stats, grad_out)
        self.grads = {f"{self.name}.gamma": gg, f"{self.name}.beta": gb}
        return grad_x

    def named_params(self):
        yield f"{self.name}.gamma", self.params.gamma
        yield f"{self.name}.beta", self.params.beta

    def named_arrays(self):
        yield from self.named_params()
        yield f"{self.name}.running_mean", self.params.running_mean
        yield f"{self.name}.running_var", self.params.running_var

    def set_param(self, name: str, value: np.ndarray):
        attr = name.rsplit(".", 1)[1]
        setattr(self.params, attr, value)


class ResBlock:
    """conv -> BN -> ReLU -> conv -> BN, identity add, trailing ReLU."""

    def __init__(self, name: str, channels: int, kernel: int, rng, dtype):
        self.conv1 = ConvLayer(f"{name}.conv1", channels, channels, kernel, rng, dtype)
        self.bn1 = BatchNormLayer(f"{name}.bn1", channels, dtype)
        self.conv2 = ConvLayer(f"{name}.conv2", channels, channels, kernel, rng, dtype)
        self.bn2 = BatchNormLayer(f"{name}.bn2", channels, dtype)
        self._pre1 = None
        self._sum = None

    def forward(self, x: np.ndarray, mode: str) -> np.ndarray:
        h = self.bn1.forward(self.conv1.forward(x), mode)
        self._pre1 = h
        h = ops.relu_forward(h)
        h = self.bn2.forward(self.conv2.forward(h), mode)
        self._sum = ops.add_forward(x, h)
        return ops.relu_forward(self._sum)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        g = ops.relu_backward(self._sum, grad_out)
        g_skip, g_branch = ops.add_backward(g)
        g_branch = self.conv2.backward(self.bn2.backward(g_branch))
        g_branch = ops.relu_backward(self._pre1, g_branch)
        g_branch = self.conv1.backward(self.bn1.backward(g_branch))
        return g_skip + g_branch

    def layers(self):
        return (self.conv1, self.bn1, self.conv2, self.bn2)


class Stream:
    """Stem conv+ReLU followed by residual blocks, on 1 or 2 input channels."""

    def __init__(self, name: str, cin: int, arch: ArchConfig, rng, dtype):
        self.stem = ConvLayer(f"{name}.stem.conv", cin, arch.channels, arch.kernel, rng, dtype)
        self.blocks = [
            ResBlock(f"{name}.block{i + 1}", arch.channels, arch.kernel, rng, dtype)
            for i in range(arch.num_res_blocks)
        ]
        self._stem_pre = None

    def forward_stem(self, x: np.ndarray) -> np.ndarray:
        self._stem_pre = self.stem.forward(x)
        return ops.relu_forward(self._stem_pre)

    def forward_blocks(self, x: np.ndarray, mode: str) -> np.ndarray:
        for block in self.blocks:
            x = block.forward(x, mode)
        return x

    def forward(self, x: np.ndarray, mode: str) -> np.ndarray:
        return self.forward_blocks(self.forward_stem(x), mode)

    def backward_blocks(self, grad: np.ndarray) -> np.ndarray:
        for block in reversed(self.blocks):
            grad = block.backward(grad)
        return grad

    def backward_stem(self, grad: np.ndarray) -> np.ndarray:
        return self.stem.backward(ops.relu_backward(self._stem_pre, grad))

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return self.backward_stem(self.backward_blocks(grad))

    def layers(self):
        yield self.stem
        for block in self.blocks:
            yield from block.layers()


class Model:
    """One network variant: architecture plus its ordered named parameters."""

    def __init__(self, arch: ArchConfig, seed: int = 0, dtype=np.float32):
        self.arch = arch
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        stem_cin = 2 if arch.variant == CF else 1
        self.frame_stream = Stream("frame", stem_cin, arch, rng, dtype)
        self.mask_stream = Stream("mask", 1, arch, rng, dtype) if arch.variant == AF else None
        if arch.variant == EF:
            self.ef_convs = [
                ConvLayer(f"ef.conv{i + 1}", 1 if i == 0 else arch.channels, arch.channels,
                          arch.kernel, rng, dtype)
                for i in range(3)
            ]
        else:
            self.ef_convs = None
        self.tail_enhance = ConvLayer("tail.enhance.conv", arch.channels, arch.channels,
                                      arch.kernel, rng, dtype)
        self.tail_mapping = ConvLayer("tail.mapping.conv", arch.channels, arch.channels,
                                      arch.kernel, rng, dtype)
        self.tail_recon = ConvLayer("tail.recon.conv", arch.channels, 1, arch.kernel, rng, dtype,
                                    zero_init=arch.global_skip)
        self._cache = None

    # -- structure walks ------------------------------------------------

    def _layers(self):
        yield from self.frame_stream.layers()
        if self.mask_stream is not None:
            yield from self.mask_stream.layers()
        if self.ef_convs is not None:
            yield from self.ef_convs
        yield self.tail_enhance
        yield self.tail_mapping
        yield self.tail_recon

    def named_params(self):
        """Trainable parameters, in deterministic build order."""
        for layer in self._layers():
            yield from layer.named_params()

    def named_arrays(self):
        """All state tensors: parameters plus batch-norm running statistics."""
        for layer in self._layers():
            yield from layer.named_arrays()

    def set_param(self, name: str, value: np.ndarray):
        prefix = name.rsplit(".", 1)[0]
        for layer in self._layers():
            if layer.name == prefix:
                layer.set_param(name, value)
                return
        raise ConfigError(f"model has no parameter named '{name}'")

    def set_array(self, name: str, value: np.ndarray):
        """Like set_param but also accepts running statistics."""
        self.set_param(name, value)

    def parameter_count(self) -> int:
        return sum(int(arr.size) for _, arr in self.named_params())

    # -- forward / backward ---------------------------------------------

    def forward(self, frame: np.ndarray, mask: np.ndarray | None = None,
                mode: str = "train") -> np.ndarray:
        """Run the network on normalized [0,1] planes of shape (N, 1, H, W)."""
        if mode not in ("train", "infer"):
            raise ConfigError(f"unknown mode {mode!r}")
        if frame.ndim != 4 or frame.shape[1] != 1:
            raise ShapeError(f"forward: frame must be (N, 1, H, W), got {frame.shape}")
        if self.arch.needs_mask:
            if mask is None:
                raise ConfigError(f"variant '{self.arch.variant}' requires a mask input")
            if mask.shape != frame.shape:
                raise ShapeError(f"forward: mask shape {mask.shape} != frame shape {frame.shape}")
        elif mask is not None:
            mask = None  # single-input: mask ignored

        variant = self.arch.variant
        cache: dict = {"frame": frame}
        if variant == SINGLE:
            fused = self.frame_stream.forward(frame, mode)
        elif variant == AF:
            f = self.frame_stream.forward(frame, mode)
            m = self.mask_stream.forward(mask, mode)
            fused = ops.add_forward(f, m)
        elif variant == CF:
            fused = self.frame_stream.forward(ops.concat_channels(frame, mask), mode)
        else:  # EF
            m = mask
            pre_acts = []
            for conv in self.ef_convs:
                pre = conv.forward(m)
                pre_acts.append(pre)
                m = ops.relu_forward(pre)
            cache["ef_pre"] = pre_acts
            stem_out = self.frame_stream.forward_stem(frame)
            fused_in = ops.add_forward(stem_out, m)
            fused = self.frame_stream.forward_blocks(fused_in, mode)

        pre_e = self.tail_enhance.forward(fused)
        t = ops.relu_forward(pre_e)
        pre_m = self.tail_mapping.forward(t)
        t = ops.relu_forward(pre_m)
        out = self.tail_recon.forward(t)
        if self.arch.global_skip:
            out = ops.add_forward(out, frame)
        cache["pre_e"] = pre_e
        cache["pre_m"] = pre_m
        self._cache = cache
        if mode == "infer":
            return np.clip(out, 0.0, 1.0)
        return out

    def backward(self, grad_output: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients for the latest train-mode forward."""
        if self._cache is None:
            raise ConfigError("backward called before forward")
        cache = self._cache
        g = grad_output  # global skip adds grad to the input plane, no params there
        g = self.tail_recon.backward(g)
        g = self.tail_mapping.backward(ops.relu_backward(cache["pre_m"], g))
        g = self.tail_enhance.backward(ops.relu_backward(cache["pre_e"], g))

        variant = self.arch.variant
        if variant == SINGLE:
            self.frame_stream.backward(g)
        elif variant == AF:
            gf, gm = ops.add_backward(g)
            self.frame_stream.backward(gf)
            self.mask_stream.backward(gm)
        elif variant == CF:
            self.frame_stream.backward(g)  # concat split ends at the input planes
        else:  # EF
            g = self.frame_stream.backward_blocks(g)
            g_stem, g_mask = ops.add_backward(g)
            self.frame_stream.backward_stem(g_stem)
            for conv, pre in zip(reversed(self.ef_convs), reversed(cache["ef_pre"])):
                g_mask = conv.backward(ops.relu_backward(pre, g_mask))

        grads: dict[str, np.ndarray] = {}
        for layer in self._layers():
            grads.update(layer.grads)
        return grads


def build_model(arch: ArchConfig, seed: int = 0, dtype=np.float32) -> Model:
    """Deterministically construct a model: same (arch, seed) gives identical parameters."""
    return Model(arch, seed=seed, dtype=dtype)


def enhance_frame(model: Model, decoded: np.ndarray, mask: Mask | None = None) -> np.ndarray:
    """Enhance one decoded 8-bit luma frame, fully convolutionally."""
    if decoded.ndim != 2:
        raise ShapeError(f"enhance_frame: expected (H, W) luma plane, got shape {decoded.shape}")
    mask_plane = None
    if model.arch.needs_mask:
        if mask is None:
            raise ConfigError(f"variant '{model.arch.variant}' requires a mask")
        if mask.kind != model.arch.mask_kind:
            raise ConfigError(
                f"mask kind '{mask.kind}' does not match model mask kind '{model.arch.mask_kind}'"
            )
        if mask.values.shape != decoded.shape:
            raise ShapeError(
                f"enhance_frame: mask shape {mask.values.shape} != frame shape {decoded.shape}"
            )
        mask_plane = mask.values.astype(model.dtype)[None, None]
    x = (decoded.astype(model.dtype) / 255.0)[None, None]
    y = model.forward(x, mask_plane, mode="infer")[0, 0]
    return np.clip(np.rint(y * 255.0), 0, 255).astype(np.uint8)
