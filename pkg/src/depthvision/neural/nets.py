"""U-Net generator, PatchGAN discriminator and residual refiner."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .ops import ShapeError, conv_out_size

INIT_STD = 0.02
DOWN_K, DOWN_S, DOWN_P = 4, 2, 1


@dataclass(frozen=True)
class NetConfig:
    """Architecture of all three networks; stored verbatim in weight files."""

    image_size: int = 64
    gen_base: int = 16
    gen_depth: int = 3
    gen_max_mult: int = 8
    disc_base: int = 16
    disc_layers: int = 2
    refiner_width: int = 8
    refiner_iterations: int = 3
    dtype: str = "float32"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**d)


def truncated_normal(rng: np.random.Generator, shape, std=INIT_STD, dtype="float64"):
    """Normal(0, std) redrawn until every sample lies within two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


class Module:
    """Holds named parameters in declaration order."""

    def __init__(self):
        self.params: dict[str, ag.Tensor] = {}

    def _conv(self, name, cout, cin, k, rng, dtype, transposed=False):
        shape = (cin, cout, k, k) if transposed else (cout, cin, k, k)
        self.params[name + ".w"] = ag.parameter(truncated_normal(rng, shape, dtype=dtype))
        self.params[name + ".b"] = ag.parameter(np.zeros(cout, dtype=dtype))

    def p(self, name):
        return self.params[name + ".w"], self.params[name + ".b"]

    def parameters(self) -> list[ag.Tensor]:
        return list(self.params.values())

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}


class GeneratorNet(Module):
    def __init__(self, cfg: NetConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        dt = cfg.dtype
        self.widths = [cfg.gen_base * min(2 ** i, cfg.gen_max_mult) for i in range(cfg.gen_depth)]
        cin = 1
        for i, w in enumerate(self.widths):
            self._conv(f"enc{i}", w, cin, DOWN_K, rng, dt)
            cin = w
        for i in reversed(range(cfg.gen_depth)):
            cout = 3 if i == 0 else self.widths[i - 1]
            # decoder input: bottleneck, or previous decoder output concatenated with its skip
            cin = self.widths[i] if i == cfg.gen_depth - 1 else 2 * self.widths[i]
            self._conv(f"dec{i}", cout, cin, DOWN_K, rng, dt, transposed=True)

    def check_input(self, shape):
        if len(shape) != 4 or shape[1] != 1:
            raise ShapeError(f"generator expects (N, 1, H, W), got {shape}")
        m = 2 ** self.cfg.gen_depth
        if shape[2] % m or shape[3] % m:
            raise ShapeError(f"spatial size {shape[2]}x{shape[3]} not divisible by {m}")

    def __call__(self, x: ag.Tensor) -> ag.Tensor:
        self.check_input(x.shape)
        skips = []
        h = x
        for i in range(self.cfg.gen_depth):
            h = ag.leaky_relu(ag.conv2d(h, *self.p(f"enc{i}"), DOWN_S, DOWN_P))
            skips.append(h)
        for i in reversed(range(self.cfg.gen_depth)):
            if i < self.cfg.gen_depth - 1:
                h = ag.cat([h, skips[i]])
            h = ag.conv_transpose2d(h, *self.p(f"dec{i}"), DOWN_S, DOWN_P)
            h = ag.tanh(h) if i == 0 else ag.relu(h)
        return h


class DiscriminatorNet(Module):
    """Stride-2 conv stack with LeakyReLU, then a stride-1 conv to one logit per patch."""

    def __init__(self, cfg: NetConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        cin = 4
        for i in range(cfg.disc_layers):
            w = cfg.disc_base * min(2 ** i, 8)
            self._conv(f"d{i}", w, cin, DOWN_K, rng, cfg.dtype)
            cin = w
        self._conv("out", 1, cin, DOWN_K, rng, cfg.dtype)

    def output_size(self, n: int) -> int:
        for _ in range(self.cfg.disc_layers):
            n = conv_out_size(n, DOWN_K, DOWN_S, DOWN_P)
        return conv_out_size(n, DOWN_K, 1, DOWN_P)

    def receptive_field(self) -> int:
        rf = DOWN_K
        for _ in range(self.cfg.disc_layers):
            rf = (rf - 1) * DOWN_S + DOWN_K
        return rf

    def __call__(self, depth: ag.Tensor, rgb: ag.Tensor) -> ag.Tensor:
        if depth.shape[0] != rgb.shape[0] or depth.shape[2:] != rgb.shape[2:]:
            raise ShapeError(f"depth {depth.shape} and rgb {rgb.shape} disagree")
        if depth.shape[1] != 1 or rgb.shape[1] != 3:
            raise ShapeError(f"expected 1+3 channels, got {depth.shape[1]}+{rgb.shape[1]}")
        h = ag.cat([depth, rgb])
        for i in range(self.cfg.disc_layers):
            h = ag.leaky_relu(ag.conv2d(h, *self.p(f"d{i}"), DOWN_S, DOWN_P))
        return ag.conv2d(h, *self.p("out"), 1, DOWN_P)


class RefinerNet(Module):
    """Three 3x3 convs (ReLU, ReLU, tanh) predicting a bounded residual."""

    def __init__(self, cfg: NetConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        w = cfg.refiner_width
        self._conv("r0", w, 4, 3, rng, cfg.dtype)
        self._conv("r1", w, w, 3, rng, cfg.dtype)
        self._conv("r2", 3, w, 3, rng, cfg.dtype)

    def __call__(self, rgb: ag.Tensor, depth: ag.Tensor) -> ag.Tensor:
        h = ag.cat([rgb, depth])
        h = ag.relu(ag.conv2d(h, *self.p("r0"), 1, 1))
        h = ag.relu(ag.conv2d(h, *self.p("r1"), 1, 1))
        return ag.tanh(ag.conv2d(h, *self.p("r2"), 1, 1))


def refine(refiner: RefinerNet, rgb: ag.Tensor, depth: ag.Tensor, iterations: int = 3) -> ag.Tensor:
    """``x <- clamp(x + refiner(x, depth), -1, 1)`` repeated with shared weights."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    x = rgb
    for _ in range(iterations):
        x = ag.clamp(ag.add(x, refiner(x, depth)))
    return x


class Nets:
    """Generator, discriminator and refiner built from one seed."""

    def __init__(self, cfg: NetConfig = NetConfig(), seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.generator = GeneratorNet(cfg, rng)
        self.discriminator = DiscriminatorNet(cfg, rng)
        self.refiner = RefinerNet(cfg, rng)

    def modules(self) -> dict[str, Module]:
        return {"generator": self.generator, "discriminator": self.discriminator, "refiner": self.refiner}

    def synthesize(self, depth: ag.Tensor, refine_iterations: int | None = None) -> ag.Tensor:
        it = self.cfg.refiner_iterations if refine_iterations is None else refine_iterations
        return refine(self.refiner, self.generator(depth), depth, it)

    def generate(self, depth: np.ndarray, refine_iterations: int | None = None) -> np.ndarray:
        """Inference on an ``(N, 1, H, W)`` array in [-1, 1]; returns ``(N, 3, H, W)``."""
        x = ag.Tensor(np.asarray(depth, dtype=self.cfg.dtype))
        return self.synthesize(x, refine_iterations).data
