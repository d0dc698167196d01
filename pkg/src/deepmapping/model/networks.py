"""L-Net (scan -> pose) and M-Net (global coordinate -> occupancy probability).

Both networks take coordinates divided by a fixed ``scale`` (pixels per
network unit) and the L-Net multiplies its translation outputs back by the
same factor, so pose translations leave the network in pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor
from ..autodiff import ops

PROB_EPS = 1e-7

FULL_LNET_CONV = (64, 128, 1024)
FULL_LNET_FC = (512, 256)
FULL_MNET_HIDDEN = (64, 512, 512, 256, 128)


def kaiming_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _bias(rng: np.random.Generator, fan_in: int, n: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=n)


class Module:
    params: dict[str, Tensor]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + name: t for name, t in self.params.items()}

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def _add(self, name: str, values: np.ndarray) -> Tensor:
        tensor = Tensor(values, requires_grad=True, name=name)
        self.params[name] = tensor
        return tensor


def mlp_layers(module: Module, prefix: str, rng, widths: tuple[int, ...]) -> list[tuple[Tensor, Tensor]]:
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        w = module._add(f"{prefix}{i}.weight", kaiming_uniform(rng, fan_in, (fan_in, fan_out)))
        b = module._add(f"{prefix}{i}.bias", _bias(rng, fan_in, fan_out))
        layers.append((w, b))
    return layers


def run_mlp(x: Tensor, layers, activation=ops.relu, last_activation: bool = False) -> Tensor:
    for i, (w, b) in enumerate(layers):
        hidden = i < len(layers) - 1 or last_activation
        if hidden and activation is ops.relu:
            x = ops.linear(x, w, b, activation="relu")
        else:
            x = ops.linear(x, w, b)
            if hidden:
                x = activation(x)
    return x


@dataclass(frozen=True)
class LNetConfig:
    variant: str = "conv"
    conv: tuple[int, ...] = FULL_LNET_CONV
    fc: tuple[int, ...] = FULL_LNET_FC
    kernel: int = 3
    dilation: int = 2
    scale: float = 1.0
    zero_output: bool = False


class LNet(Module):
    """Pose regressor shared across scans.

    ``conv``: C(n)... 1D dilated convolutions over beam order, global max-pool
    over beams, FC head.  ``pointwise``: the same widths as a per-point shared
    MLP followed by the max-pool and FC head (order invariant).
    """

    def __init__(self, cfg: LNetConfig, rng: np.random.Generator, dim: int = 2):
        if cfg.variant not in ("conv", "pointwise"):
            raise ValueError(f"unknown L-Net variant {cfg.variant!r}")
        self.cfg = cfg
        self.dim = dim
        self.params = {}
        self.conv_layers = []
        self.point_layers = []
        if cfg.variant == "conv":
            c_in = dim
            for i, c_out in enumerate(cfg.conv):
                fan_in = c_in * cfg.kernel
                w = self._add(f"conv{i}.weight", kaiming_uniform(rng, fan_in, (cfg.kernel, c_in, c_out)))
                b = self._add(f"conv{i}.bias", _bias(rng, fan_in, c_out))
                self.conv_layers.append((w, b))
                c_in = c_out
        else:
            self.point_layers = mlp_layers(self, "point", rng, (dim,) + tuple(cfg.conv))
        self.head = mlp_layers(self, "fc", rng, (cfg.conv[-1],) + tuple(cfg.fc) + (3,))
        if cfg.zero_output:
            w, b = self.head[-1]
            w.data[...] = 0.0
            b.data[...] = 0.0

    def __call__(self, scans) -> Tensor:
        return self.forward(scans)

    def forward(self, scans) -> Tensor:
        """(K, N, 2) local scans -> (K, 3) poses ``(tx, ty, alpha)`` in pixels/radians."""
        pts = scans.data if isinstance(scans, Tensor) else np.asarray(scans, dtype=np.float64)
        if pts.ndim == 2:
            pts = pts[None]
        if pts.ndim != 3 or pts.shape[2] != self.dim:
            raise ValueError(f"L-Net expects (K, N, {self.dim}) scans, got shape {pts.shape}")
        k, n, _ = pts.shape
        x = pts / self.cfg.scale
        if self.cfg.variant == "conv":
            h = Tensor(x)
            for w, b in self.conv_layers:
                h = ops.conv1d(h, w, b, dilation=self.cfg.dilation, activation="relu")
            feat = ops.max(h, axis=1)
        else:
            h = run_mlp(Tensor(x.reshape(k * n, self.dim)), self.point_layers, last_activation=True)
            feat = ops.max(ops.reshape(h, (k, n, h.shape[-1])), axis=1)
        out = run_mlp(feat, self.head)
        if self.cfg.scale == 1.0:
            return out
        return ops.mul(out, np.array([self.cfg.scale, self.cfg.scale, 1.0]))


@dataclass(frozen=True)
class MNetConfig:
    hidden: tuple[int, ...] = FULL_MNET_HIDDEN
    scale: float = 1.0


class MNet(Module):
    """Continuous occupancy map ``R^2 -> (0, 1)``: ReLU MLP with sigmoid output."""

    def __init__(self, cfg: MNetConfig, rng: np.random.Generator, dim: int = 2):
        self.cfg = cfg
        self.dim = dim
        self.params = {}
        self.layers = mlp_layers(self, "fc", rng, (dim,) + tuple(cfg.hidden) + (1,))

    def __call__(self, points) -> Tensor:
        return self.forward(points)

    def logits(self, points) -> Tensor:
        if isinstance(points, Tensor):
            x = points if self.cfg.scale == 1.0 else ops.mul(points, 1.0 / self.cfg.scale)
        else:
            x = Tensor(np.asarray(points, dtype=np.float64) / self.cfg.scale)
        if x.data.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"M-Net expects (M, {self.dim}) points, got shape {x.shape}")
        return ops.reshape(ops.mlp(x, self.layers), (x.shape[0],))

    def forward(self, points) -> Tensor:
        """Occupancy probabilities clamped to ``[1e-7, 1 - 1e-7]``."""
        return ops.clamp(ops.sigmoid(self.logits(points)), PROB_EPS, 1.0 - PROB_EPS)

    def zero_output(self) -> None:
        """Make the map constant at 0.5 (used by tests and diagnostics)."""
        w, b = self.layers[-1]
        w.data[...] = 0.0
        b.data[...] = 0.0
