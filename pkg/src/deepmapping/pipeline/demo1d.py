"""One-dimensional illustration of optimizing through an over-parameterized network.

Objective ``L(x) = x^2 / 2 + 5 sin(10 x) + 20 sin(x)`` is minimized either
directly by gradient descent on ``x`` or by gradient descent on the
parameters and input of a small ELU network ``x = f_theta(z)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, backward, ops
from ..model.networks import _bias, kaiming_uniform

DEMO_WIDTHS = (1, 10, 20, 30, 40, 1)


def objective(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * x + 5.0 * np.sin(10.0 * x) + 20.0 * np.sin(x)


def objective_grad(x):
    x = np.asarray(x, dtype=np.float64)
    return x + 50.0 * np.cos(10.0 * x) + 20.0 * np.cos(x)


def objective_tensor(x: Tensor) -> Tensor:
    return ops.mul(ops.square(x), 0.5) + ops.mul(ops.sin(ops.mul(x, 10.0)), 5.0) + ops.mul(ops.sin(x), 20.0)


@dataclass
class Demo1DResult:
    x_trace: np.ndarray
    z_trace: np.ndarray
    net_x_trace: np.ndarray
    final_direct: float
    final_network: float
    x0: float
    z0: float
    seed: int

    @property
    def direct_range(self) -> tuple[float, float]:
        return float(self.x_trace.min()), float(self.x_trace.max())

    @property
    def network_range(self) -> tuple[float, float]:
        return float(self.net_x_trace.min()), float(self.net_x_trace.max())

    def network_range_contains_direct(self) -> bool:
        """Network range is a superset of the direct range and strictly wider."""
        (dlo, dhi), (nlo, nhi) = self.direct_range, self.network_range
        return nlo <= dlo and nhi >= dhi and (nhi - nlo) > (dhi - dlo)


class DemoNet:
    def __init__(self, rng: np.random.Generator, widths=DEMO_WIDTHS):
        self.layers = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            w = Tensor(kaiming_uniform(rng, fan_in, (fan_in, fan_out)), requires_grad=True)
            b = Tensor(_bias(rng, fan_in, fan_out), requires_grad=True)
            self.layers.append((w, b))

    def parameters(self) -> list[Tensor]:
        return [t for pair in self.layers for t in pair]

    def __call__(self, z: Tensor) -> Tensor:
        h = ops.reshape(z, (1, 1))
        for i, (w, b) in enumerate(self.layers):
            h = ops.linear(h, w, b)
            if i < len(self.layers) - 1:
                h = ops.elu(h)
        return ops.reshape(h, ())


def demo_1d(iterations: int = 1000, lr: float = 2e-4, seed: int = 0) -> Demo1DResult:
    """Run both optimizers from the same starting point ``x0 = f_theta0(z0)``.

    ``z0`` is drawn from a standard normal with the same generator that
    initializes the network.  Trace entry ``i`` is the iterate visited
    before update ``i``, so each trace has ``iterations`` entries.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = np.random.default_rng(seed)
    net = DemoNet(rng)
    z = Tensor(rng.standard_normal(), requires_grad=True)
    params = net.parameters() + [z]
    x0 = float(net(z).data)
    z0 = float(z.data)

    x_trace = np.empty(iterations)
    x = x0
    for i in range(iterations):
        x_trace[i] = x
        x = x - lr * float(objective_grad(x))

    z_trace = np.empty(iterations)
    net_x_trace = np.empty(iterations)
    for i in range(iterations):
        z_trace[i] = float(z.data)
        xt = net(z)
        net_x_trace[i] = float(xt.data)
        backward(objective_tensor(xt))
        for p in params:
            p.data -= lr * p.grad
            p.grad = None
    final_x = float(net(z).data)
    return Demo1DResult(
        x_trace=x_trace,
        z_trace=z_trace,
        net_x_trace=net_x_trace,
        final_direct=float(objective(x)),
        final_network=float(objective(final_x)),
        x0=x0,
        z0=z0,
        seed=seed,
    )


def demo_summary(results: list[Demo1DResult]) -> dict[str, float]:
    n = len(results)
    if n == 0:
        raise ValueError("demo_summary: no results")
    better = sum(r.final_network <= r.final_direct for r in results)
    wider = sum(r.network_range_contains_direct() for r in results)
    return {"seeds": n, "network_not_worse": better, "network_range_wider": wider,
            "network_not_worse_frac": better / n, "network_range_wider_frac": wider / n,
            "median_final_direct": float(np.median([r.final_direct for r in results])),
            "median_final_network": float(np.median([r.final_network for r in results]))}


__all__ = ["Demo1DResult", "DemoNet", "demo_1d", "demo_summary", "objective", "objective_grad"]
