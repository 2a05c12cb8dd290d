"""Small configurable CNN producing the feature maps every head consumes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError


@dataclass(frozen=True)
class BackboneConfig:
    """Conv stages as (out_channels, kernel_size, stride) triples.

    Convolutions are same-padded, so the output spatial size is the input
    side divided by the product of strides.
    """

    stages: tuple = ((16, 3, 2), (32, 3, 2))
    input_side: int = 64

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("backbone needs at least one stage")
        for ch, k, s in self.stages:
            if k % 2 == 0 or k < 1:
                raise ConfigError(f"kernel sizes must be odd, got {k}")
            if ch < 1 or s < 1:
                raise ConfigError(f"invalid stage ({ch}, {k}, {s})")

    @property
    def feature_side(self) -> int:
        side = self.input_side
        for _, _, s in self.stages:
            side = (side + s - 1) // s
        return side

    @property
    def num_channels(self) -> int:
        return self.stages[-1][0]

    def validate_for_regions(self, region_sizes) -> None:
        if self.feature_side < max(region_sizes):
            raise ConfigError(
                f"feature side {self.feature_side} is smaller than the "
                f"largest region size {max(region_sizes)}")


def init_backbone(config: BackboneConfig, rng: np.random.Generator) -> dict:
    """He fan-in initialization for weights, zero biases."""
    params: dict[str, Tensor] = {}
    cin = 3
    for i, (cout, k, _) in enumerate(config.stages):
        fan_in = k * k * cin
        w = rng.standard_normal((k, k, cin, cout)) * np.sqrt(2.0 / fan_in)
        params[f"backbone.conv{i}.w"] = Tensor(w, requires_grad=True)
        params[f"backbone.conv{i}.b"] = Tensor(np.zeros(cout), requires_grad=True)
        cin = cout
    return params


def backbone_forward(images: Tensor, params: dict,
                     config: BackboneConfig) -> Tensor:
    """Map an (N, H, W, 3) image batch to (N, h, w, num_channels) features."""
    x = images
    for i, (_, _, stride) in enumerate(config.stages):
        x = ad.conv2d(x, params[f"backbone.conv{i}.w"],
                      params[f"backbone.conv{i}.b"], stride=stride)
        x = ad.relu(x)
    return x
