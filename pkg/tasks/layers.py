# tasks/layers.py

from dataclasses import dataclass
from typing import Dict, List, Mapping, Tuple

import numpy as np

from autodiff.errors import ShapeMismatchError
from autodiff.functional import conv2d, upsample_nearest
from autodiff.tensor import Tensor, concatenate, matmul, relu


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform in ±√(1/fan_in)."""
    limit = np.sqrt(1.0 / fan_in)
    return rng.uniform(-limit, limit, shape)


@dataclass(frozen=True)
class ConvLayer:
    name: str
    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1

    def init(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        fan_in = self.kernel * self.kernel * self.in_channels
        return {
            f"{self.name}.weight": uniform_init(rng, (self.kernel, self.kernel, self.in_channels, self.out_channels), fan_in),
            f"{self.name}.bias": np.zeros(self.out_channels),
        }

    def __call__(self, params: Mapping[str, Tensor], x: Tensor) -> Tensor:
        return conv2d(x, params[f"{self.name}.weight"], params[f"{self.name}.bias"], stride=self.stride, padding=self.kernel // 2)


@dataclass(frozen=True)
class DenseLayer:
    name: str
    in_features: int
    out_features: int

    def init(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        return {
            f"{self.name}.weight": uniform_init(rng, (self.in_features, self.out_features), self.in_features),
            f"{self.name}.bias": np.zeros(self.out_features),
        }

    def __call__(self, params: Mapping[str, Tensor], x: Tensor) -> Tensor:
        return matmul(x, params[f"{self.name}.weight"]) + params[f"{self.name}.bias"]


class EncoderDecoder:
    """
    Three-level convolutional encoder (the last two levels stride 2) with a
    nearest-upsampling decoder and skip connections, ending in a 1×1 head.

    Input height and width must be divisible by 4.
    """

    def __init__(self, prefix: str, in_channels: int, out_channels: int, width: int = 8):
        c = width
        self.prefix = prefix
        self.out_channels = out_channels
        self.width = width
        self.enc1 = ConvLayer(f"{prefix}.enc1", in_channels, c)
        self.enc2 = ConvLayer(f"{prefix}.enc2", c, 2 * c, stride=2)
        self.enc3 = ConvLayer(f"{prefix}.enc3", 2 * c, 2 * c, stride=2)
        self.dec2 = ConvLayer(f"{prefix}.dec2", 4 * c, 2 * c)
        self.dec1 = ConvLayer(f"{prefix}.dec1", 3 * c, c)
        self.head = ConvLayer(f"{prefix}.head", c, out_channels, kernel=1)

    @property
    def layers(self) -> List[ConvLayer]:
        return [self.enc1, self.enc2, self.enc3, self.dec2, self.dec1, self.head]

    @property
    def bottleneck_channels(self) -> int:
        return 2 * self.width

    def init(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        params: Dict[str, np.ndarray] = {}
        for layer in self.layers:
            params.update(layer.init(rng))
        return params

    def __call__(self, params: Mapping[str, Tensor], x: Tensor) -> Tuple[Tensor, Tensor]:
        """Returns (head output at full resolution, bottleneck features at quarter resolution)."""
        h, w = x.shape[:2]
        if h % 4 or w % 4:
            raise ShapeMismatchError(f"encoder-decoder input must have sides divisible by 4, got {h}x{w}")
        e1 = relu(self.enc1(params, x))
        e2 = relu(self.enc2(params, e1))
        e3 = relu(self.enc3(params, e2))
        d2 = relu(self.dec2(params, concatenate([upsample_nearest(e3, 2), e2], axis=-1)))
        d1 = relu(self.dec1(params, concatenate([upsample_nearest(d2, 2), e1], axis=-1)))
        return self.head(params, d1), e3


def image_input(*images: np.ndarray) -> Tensor:
    """Channel-concatenated constant input tensor."""
    return Tensor(np.concatenate([np.asarray(image, dtype=np.float64) for image in images], axis=-1))
