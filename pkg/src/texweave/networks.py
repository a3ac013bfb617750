"""The four trainable networks.

Two residual encoder-decoder generators: G maps defective images into
the mask domain (and normal images into the invisible pattern), F maps
mask-domain images back to the image domain. Two PatchGAN
discriminators: D_Y judges mask-domain outputs, D_X judges recovered
images. Both domains are 3-channel in [-1, 1]; binary masks shown to
D_Y are channel-replicated and encoded {-1, +1}.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError


@dataclass(frozen=True)
class GeneratorSpec:
    base_channels: int = 64
    residual_blocks: int = 9
    in_channels: int = 3
    out_channels: int = 3

    @classmethod
    def toy(cls) -> "GeneratorSpec":
        return cls(base_channels=16, residual_blocks=4)

    def validate(self) -> None:
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.residual_blocks < 0:
            raise ConfigError(f"residual_blocks must be >= 0, got {self.residual_blocks}")


@dataclass(frozen=True)
class DiscriminatorSpec:
    base_channels: int = 64
    layers: int = 4
    in_channels: int = 3

    @classmethod
    def toy(cls) -> "DiscriminatorSpec":
        return cls(base_channels=16)

    def validate(self) -> None:
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.layers < 2:
            raise ConfigError(f"layers must be >= 2, got {self.layers}")


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.block(x)


class ResnetGenerator(nn.Module):
    """7x7 stem, two stride-2 downsamplers, residual trunk, two upsamplers, tanh.

    `forward_calls` counts forward passes; inference uses it to prove the
    single-pass contract.
    """

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        self.forward_calls = 0

        base = spec.base_channels
        layers: list[nn.Module] = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(spec.in_channels, base, kernel_size=7),
            nn.InstanceNorm2d(base),
            nn.ReLU(inplace=True),
        ]
        channels = base
        for _ in range(2):
            layers += [
                nn.Conv2d(channels, channels * 2, kernel_size=3, stride=2, padding=1),
                nn.InstanceNorm2d(channels * 2),
                nn.ReLU(inplace=True),
            ]
            channels *= 2
        layers += [ResidualBlock(channels) for _ in range(spec.residual_blocks)]
        for _ in range(2):
            layers += [
                nn.ConvTranspose2d(
                    channels, channels // 2, kernel_size=3, stride=2, padding=1, output_padding=1
                ),
                nn.InstanceNorm2d(channels // 2),
                nn.ReLU(inplace=True),
            ]
            channels //= 2
        layers += [
            nn.ReflectionPad2d(3),
            nn.Conv2d(channels, spec.out_channels, kernel_size=7),
            nn.Tanh(),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.forward_calls += 1
        return self.model(x)

    def reset_forward_calls(self) -> None:
        self.forward_calls = 0


class PatchDiscriminator(nn.Module):
    """PatchGAN: a grid of real/fake logits, one per receptive-field patch.

    `layers` 4x4 conv blocks (all but the last at stride 2), then a final
    1-channel 4x4 conv. Sigmoid is applied at loss time, not here.
    """

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        spec.validate()
        self.spec = spec

        blocks: list[nn.Module] = [
            nn.Conv2d(spec.in_channels, spec.base_channels, kernel_size=4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        ]
        channels = spec.base_channels
        for i in range(1, spec.layers):
            stride = 2 if i < spec.layers - 1 else 1
            blocks += [
                nn.Conv2d(channels, channels * 2, kernel_size=4, stride=stride, padding=1),
                nn.InstanceNorm2d(channels * 2),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            channels *= 2
        blocks.append(nn.Conv2d(channels, 1, kernel_size=4, stride=1, padding=1))
        self.model = nn.Sequential(*blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x)


def _init_weights(module: nn.Module, generator: torch.Generator) -> None:
    for sub in module.modules():
        if isinstance(sub, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                sub.weight.normal_(0.0, 0.02, generator=generator)
                if sub.bias is not None:
                    sub.bias.zero_()


def build_generator(spec: GeneratorSpec, init_seed: int = 0) -> ResnetGenerator:
    """Construct a generator with N(0, 0.02) weights and zero biases."""
    net = ResnetGenerator(spec)
    gen = torch.Generator().manual_seed(int(init_seed))
    _init_weights(net, gen)
    return net


def build_discriminator(spec: DiscriminatorSpec, init_seed: int = 0) -> PatchDiscriminator:
    """Construct a patch discriminator with N(0, 0.02) weights and zero biases."""
    net = PatchDiscriminator(spec)
    gen = torch.Generator().manual_seed(int(init_seed))
    _init_weights(net, gen)
    return net


def patch_grid_side(resolution: int, layers: int) -> int:
    """Spatial side of the discriminator's logit map for a square input."""
    side = resolution
    for i in range(layers):
        stride = 2 if i < layers - 1 else 1
        side = (side + 2 * 1 - 4) // stride + 1
    return (side + 2 * 1 - 4) // 1 + 1
