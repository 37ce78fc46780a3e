"""
Micro-encoders: a conv backbone with projector and predictor heads.

The backbone is a stack of conv3x3 -> batch norm -> relu blocks. Its last map
is mean-pooled and fed to the projector MLP; in the without-negatives regime
the predictor side adds a residual predictor MLP whose final layer starts at
zero, so a freshly initialised predictor is the identity.

Parameters live in an `EncoderParams`: named learnable Tensors plus named
batch-norm running buffers (plain arrays, never differentiated).
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from . import ops
from .errors import ContractError
from .objectives import WITHOUT_NEG
from .tensor import DTYPES, Tensor, no_grad

PREDICTOR = "predictor"
TARGET = "target"


@dataclass
class ArchSpec:
    """Backbone and head sizes for one regime."""

    regime: str = WITHOUT_NEG
    input_size: int = 32
    channels: Tuple[int, ...] = (8, 16, 32, 64)
    strides: Tuple[int, ...] = (2, 2, 2, 2)
    intermediate_block: int = 3
    final_block: int = 4
    proj_hidden: int = 128
    proj_dim: int = 64
    pred_hidden: int = 32
    predictor_head: bool = True
    stop_gradient: bool = True
    bn_momentum: float = 0.1
    precision: str = "float32"

    @classmethod
    def from_config(cls, model) -> "ArchSpec":
        """Build from a `ModelConfig` section (or any object with the same fields)."""
        return cls(
            regime=model.regime,
            input_size=model.input_size,
            channels=tuple(model.channels),
            strides=tuple(model.strides),
            intermediate_block=model.intermediate_block,
            final_block=model.final_block,
            proj_hidden=model.proj_hidden,
            proj_dim=model.proj_dim,
            pred_hidden=model.pred_hidden,
            predictor_head=model.predictor_head,
            stop_gradient=model.stop_gradient,
            bn_momentum=model.bn_momentum,
            precision=model.precision,
        )

    @property
    def depth(self) -> int:
        return len(self.channels)

    @property
    def proj_layers(self) -> int:
        return 3 if self.regime == WITHOUT_NEG else 2

    @property
    def has_predictor(self) -> bool:
        return self.regime == WITHOUT_NEG and self.predictor_head

    @property
    def dtype(self):
        return DTYPES[self.precision]

    def feature_size(self, block: int, input_size: Optional[int] = None,
                     stride_one_from: Optional[int] = None) -> int:
        """Spatial side of block `block` (1-based) for a square input."""
        size = self.input_size if input_size is None else input_size
        for b in range(1, block + 1):
            stride = 1 if stride_one_from is not None and b >= stride_one_from else self.strides[b - 1]
            size = (size + 2 - 3) // stride + 1
        return size


class EncoderParams:
    """Named learnable tensors plus batch-norm running buffers.

    Args:
        tensors: Parameter name -> Tensor (requires_grad on the learnable side)
        buffers: Buffer name -> running statistic array
    """

    def __init__(self, tensors: Dict[str, Tensor], buffers: Dict[str, np.ndarray]):
        self.tensors = dict(tensors)
        self.buffers = dict(buffers)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> List[str]:
        return list(self.tensors)

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self.tensors.items()}

    def subset(self, names: Iterable[str]) -> Dict[str, Tensor]:
        return {name: self.tensors[name] for name in names}

    def copy(self, requires_grad: Optional[bool] = None, drop_predictor: bool = False,
             dtype=None) -> "EncoderParams":
        """Deep copy; optionally frozen, without the predictor head, or cast."""
        tensors = {}
        for name, t in self.tensors.items():
            if drop_predictor and name.startswith("predictor."):
                continue
            flag = t.requires_grad if requires_grad is None else requires_grad
            data = t.data.astype(dtype) if dtype is not None else t.data.copy()
            tensors[name] = Tensor(data, requires_grad=flag, name=name)
        buffers = {}
        for name, b in self.buffers.items():
            if drop_predictor and name.startswith("predictor."):
                continue
            buffers[name] = b.astype(dtype) if dtype is not None else b.copy()
        return EncoderParams(tensors, buffers)

    def assign(self, values: Dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place, keeping each tensor's dtype."""
        for name, value in values.items():
            if name not in self.tensors:
                raise ContractError(f"unknown parameter '{name}'")
            current = self.tensors[name]
            if np.shape(value) != current.shape:
                raise ContractError(f"parameter '{name}' has shape {current.shape}, got {np.shape(value)}")
            current.data = np.ascontiguousarray(np.asarray(value, dtype=current.dtype))

    def clear_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None


def _normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)


def _add_bn(tensors, buffers, prefix, width, dtype):
    tensors[f"{prefix}.bn.gamma"] = np.ones(width, dtype=dtype)
    tensors[f"{prefix}.bn.beta"] = np.zeros(width, dtype=dtype)
    buffers[f"{prefix}.bn.running_mean"] = np.zeros(width, dtype=dtype)
    buffers[f"{prefix}.bn.running_var"] = np.ones(width, dtype=dtype)


def _projector_widths(arch: ArchSpec) -> List[Tuple[int, int]]:
    widths = [arch.channels[-1]] + [arch.proj_hidden] * (arch.proj_layers - 1) + [arch.proj_dim]
    return list(zip(widths[:-1], widths[1:]))


def init_encoder_params(arch: ArchSpec, rng: np.random.Generator) -> EncoderParams:
    """Fan-in scaled normal weights, zero biases, unit BN scale, zero-init predictor output."""
    dtype = arch.dtype
    tensors: Dict[str, np.ndarray] = {}
    buffers: Dict[str, np.ndarray] = {}

    in_ch = 3
    for b, out_ch in enumerate(arch.channels, start=1):
        prefix = f"backbone.{b}"
        tensors[f"{prefix}.conv.weight"] = _normal(rng, (out_ch, in_ch, 3, 3), in_ch * 9, dtype)
        tensors[f"{prefix}.conv.bias"] = np.zeros(out_ch, dtype=dtype)
        _add_bn(tensors, buffers, prefix, out_ch, dtype)
        in_ch = out_ch

    layers = _projector_widths(arch)
    for i, (fan_in, fan_out) in enumerate(layers):
        prefix = f"projector.{i}"
        tensors[f"{prefix}.weight"] = _normal(rng, (fan_in, fan_out), fan_in, dtype)
        tensors[f"{prefix}.bias"] = np.zeros(fan_out, dtype=dtype)
        # Hidden layers of the 3-layer projector are normalised; the 2-layer head is plain.
        if i < len(layers) - 1 and arch.proj_layers == 3:
            _add_bn(tensors, buffers, prefix, fan_out, dtype)

    if arch.has_predictor:
        tensors["predictor.0.weight"] = _normal(rng, (arch.proj_dim, arch.pred_hidden), arch.proj_dim, dtype)
        tensors["predictor.0.bias"] = np.zeros(arch.pred_hidden, dtype=dtype)
        _add_bn(tensors, buffers, "predictor.0", arch.pred_hidden, dtype)
        tensors["predictor.1.weight"] = np.zeros((arch.pred_hidden, arch.proj_dim), dtype=dtype)
        tensors["predictor.1.bias"] = np.zeros(arch.proj_dim, dtype=dtype)

    return EncoderParams({name: Tensor(value, requires_grad=True, name=name) for name, value in tensors.items()},
                         buffers)


def _batch_norm(x: Tensor, params: EncoderParams, prefix: str, training: bool, momentum: float) -> Tensor:
    return ops.batch_norm(
        x, params[f"{prefix}.bn.gamma"], params[f"{prefix}.bn.beta"],
        params.buffers[f"{prefix}.bn.running_mean"], params.buffers[f"{prefix}.bn.running_var"],
        training=training, momentum=momentum)


def backbone_forward(x: Tensor, params: EncoderParams, arch: ArchSpec, training: bool = True,
                     upto: Optional[int] = None, stride_one_from: Optional[int] = None) -> List[Tensor]:
    """Run blocks 1..upto on an NCHW tensor and return every block map."""
    upto = arch.depth if upto is None else upto
    maps = []
    for b in range(1, upto + 1):
        stride = 1 if stride_one_from is not None and b >= stride_one_from else arch.strides[b - 1]
        prefix = f"backbone.{b}"
        x = ops.conv2d(x, params[f"{prefix}.conv.weight"], params[f"{prefix}.conv.bias"], stride=stride, pad=1)
        x = ops.relu(_batch_norm(x, params, prefix, training, arch.bn_momentum))
        maps.append(x)
    return maps


def project(pooled: Tensor, params: EncoderParams, arch: ArchSpec, training: bool = True) -> Tensor:
    layers = len(_projector_widths(arch))
    x = pooled
    for i in range(layers):
        prefix = f"projector.{i}"
        x = ops.linear(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"])
        if i < layers - 1:
            if f"{prefix}.bn.gamma" in params:
                x = _batch_norm(x, params, prefix, training, arch.bn_momentum)
            x = ops.relu(x)
    return x


def predict(z: Tensor, params: EncoderParams, arch: ArchSpec, training: bool = True) -> Tensor:
    """Residual predictor z + mlp(z)."""
    h = ops.linear(z, params["predictor.0.weight"], params["predictor.0.bias"])
    h = ops.relu(_batch_norm(h, params, "predictor.0", training, arch.bn_momentum))
    return ops.add(z, ops.linear(h, params["predictor.1.weight"], params["predictor.1.bias"]))


@dataclass
class FeaturePyramid:
    """Per-block feature maps (N, C, h, w) and the unit-norm embedding (N, D)."""

    block_maps: List[Tensor]
    embedding: Tensor
    intermediate_block: int = 3
    final_block: int = 4
    tags: Dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.tags:
            self.tags = {self.intermediate_block: "intermediate", self.final_block: "final"}

    @property
    def intermediate(self) -> Tensor:
        return self.block_maps[self.intermediate_block - 1]

    @property
    def final(self) -> Tensor:
        return self.block_maps[self.final_block - 1]


def frames_to_tensor(frames: Union[np.ndarray, Tensor], dtype) -> Tensor:
    """N x H x W x 3 rasters become a constant NCHW tensor; NCHW tensors pass through."""
    if isinstance(frames, Tensor):
        if frames.ndim != 4 or frames.shape[1] != 3:
            raise ContractError(f"expected an N x 3 x H x W tensor, got {frames.shape}")
        return frames
    array = np.asarray(frames)
    if array.ndim == 3:
        array = array[None]
    if array.ndim != 4 or array.shape[-1] != 3:
        raise ContractError(f"expected N x H x W x 3 rasters, got {array.shape}")
    return Tensor(np.ascontiguousarray(array.transpose(0, 3, 1, 2)), dtype=dtype)


def encode(frames: Union[np.ndarray, Tensor], params: EncoderParams, side: str, arch: ArchSpec,
           training: bool = True) -> FeaturePyramid:
    """Encode a batch of training-resolution frames for one side of the pair.

    Args:
        frames: N x S x S x 3 rasters (or an N x 3 x S x S tensor)
        params: Parameters for this side
        side: "predictor" or "target"
        arch: Architecture; S must equal `arch.input_size`
        training: Use batch statistics in normalisation layers

    Returns:
        FeaturePyramid; on the target side every output is a constant when
        `arch.stop_gradient` is on
    """
    if side not in (PREDICTOR, TARGET):
        raise ContractError(f"unknown side '{side}'")
    x = frames_to_tensor(frames, params.dtype)
    if x.shape[2:] != (arch.input_size, arch.input_size):
        raise ContractError(f"frames must be {arch.input_size}x{arch.input_size}, got {x.shape[2]}x{x.shape[3]}")

    detach = side == TARGET and arch.stop_gradient

    def run() -> Tuple[List[Tensor], Tensor]:
        maps = backbone_forward(x, params, arch, training)
        z = project(ops.mean_pool(maps[-1]), params, arch, training)
        if side == PREDICTOR and arch.has_predictor and "predictor.0.weight" in params:
            z = predict(z, params, arch, training)
        return maps, ops.l2_normalize(z, axis=1)

    if detach:
        with no_grad():
            maps, embedding = run()
        maps = [ops.stop_gradient(m) for m in maps]
        embedding = ops.stop_gradient(embedding)
    else:
        maps, embedding = run()
    return FeaturePyramid(block_maps=maps, embedding=embedding,
                          intermediate_block=arch.intermediate_block, final_block=arch.final_block)


def extract_block_maps(frames: np.ndarray, params: EncoderParams, arch: ArchSpec, block: int,
                       stride_one_from: Optional[int] = None, batch_size: int = 16) -> np.ndarray:
    """Inference features of one block at any resolution.

    Blocks numbered >= `stride_one_from` run with stride 1 and unchanged weights.
    Normalisation uses running statistics.

    Returns:
        (N, C, h, w) float64 array
    """
    if not 1 <= block <= arch.depth:
        raise ContractError(f"block must lie in 1..{arch.depth}, got {block}")
    frames = np.asarray(frames)
    if frames.ndim == 3:
        frames = frames[None]
    outputs = []
    with no_grad():
        for start in range(0, frames.shape[0], batch_size):
            x = frames_to_tensor(frames[start:start + batch_size], params.dtype)
            maps = backbone_forward(x, params, arch, training=False, upto=block, stride_one_from=stride_one_from)
            outputs.append(maps[-1].data.astype(np.float64))
    return np.concatenate(outputs, axis=0)


def embed_frames(frames: np.ndarray, params: EncoderParams, arch: ArchSpec) -> np.ndarray:
    """Target-side embeddings in evaluation mode, for probes such as `embedding_std`."""
    with no_grad():
        pyramid = encode(frames, params, TARGET, arch, training=False)
    return pyramid.embedding.data.astype(np.float64)


def parameter_norms(params: EncoderParams) -> Dict[str, float]:
    return {name: float(np.linalg.norm(t.data)) for name, t in params.tensors.items()}

