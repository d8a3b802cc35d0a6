"""Joint adversarial + L1 training of generator, refiner and discriminator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .nets import Nets
from .optim import Adam, AdamState


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_l1: float = 100.0
    adversarial: float = 1.0

    def __post_init__(self):
        if self.lambda_l1 < 0 or self.adversarial < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class LossRecord:
    step: int
    d_loss: float
    g_adv: float
    g_l1: float


class GanTrainer:
    """Owns the optimizers; the refiner shares the generator's optimizer."""

    def __init__(self, nets: Nets, weights: LossWeights = LossWeights(), lr: float = 2e-4,
                 g_state: AdamState | None = None, d_state: AdamState | None = None):
        self.nets = nets
        self.weights = weights
        g_params = nets.generator.parameters() + nets.refiner.parameters()
        self.opt_g = Adam(g_params, g_state)
        self.opt_d = Adam(nets.discriminator.parameters(), d_state)
        if g_state is None:
            self.opt_g.state.lr = lr
        if d_state is None:
            self.opt_d.state.lr = lr
        self.step_index = 0

    def train_step(self, depth: np.ndarray, target: np.ndarray) -> LossRecord:
        if depth.shape[0] == 0:
            raise ValueError("empty batch")
        dt = self.nets.cfg.dtype
        d = ag.Tensor(np.asarray(depth, dtype=dt))
        y = ag.Tensor(np.asarray(target, dtype=dt))
        disc = self.nets.discriminator

        fake = self.nets.synthesize(d)

        self.opt_d.zero_grad()
        real_loss = ag.bce_with_logits(disc(d, y), 1.0)
        fake_loss = ag.bce_with_logits(disc(d, fake.detach()), 0.0)
        d_loss = ag.scale(ag.add(real_loss, fake_loss), 0.5)
        d_val = float(d_loss.data)
        self._check(d_val, "discriminator")
        d_loss.backward()
        self.opt_d.step()

        self.opt_g.zero_grad()
        g_adv = ag.bce_with_logits(disc(d, fake), 1.0)
        g_l1 = ag.l1(fake, y)
        total = ag.add(ag.scale(g_adv, self.weights.adversarial), ag.scale(g_l1, self.weights.lambda_l1))
        self._check(float(total.data), "generator")
        total.backward()
        self.opt_g.step()
        self.opt_d.zero_grad()

        rec = LossRecord(self.step_index, d_val, float(g_adv.data), float(g_l1.data))
        self.step_index += 1
        return rec

    def _check(self, value: float, which: str):
        if not math.isfinite(value):
            raise TrainingDiverged(f"training diverged at step {self.step_index} ({which} loss {value})")


def gan_train_step(depth, target, trainer: GanTrainer) -> LossRecord:
    return trainer.train_step(depth, target)


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches; reshuffles every epoch."""
    while True:
        perm = rng.permutation(n)
        for i in range(0, n - batch_size + 1 if n >= batch_size else 1, batch_size):
            yield perm[i:i + batch_size]


def train(nets: Nets, depth: np.ndarray, target: np.ndarray, steps: int, batch_size: int = 16,
          seed: int = 0, weights: LossWeights = LossWeights(), lr: float = 2e-4,
          trainer: GanTrainer | None = None, callback=None) -> list[LossRecord]:
    """Run ``steps`` training steps over paired ``(N,1,H,W)`` / ``(N,3,H,W)`` arrays."""
    trainer = trainer or GanTrainer(nets, weights, lr)
    rng = np.random.default_rng(seed)
    batches = iterate_batches(depth.shape[0], min(batch_size, depth.shape[0]), rng)
    history = []
    for _ in range(steps):
        idx = next(batches)
        rec = trainer.train_step(depth[idx], target[idx])
        history.append(rec)
        if callback is not None:
            callback(rec)
    return history


def l1_error(nets: Nets, depth: np.ndarray, target: np.ndarray, refine_iterations: int | None = None,
             batch_size: int = 16) -> float:
    """Mean absolute error of the synthesized images against targets, in [-1, 1] units."""
    total = 0.0
    for i in range(0, depth.shape[0], batch_size):
        out = nets.generate(depth[i:i + batch_size], refine_iterations)
        total += float(np.abs(out.astype(np.float64) - target[i:i + batch_size]).sum())
    return total / target.size


def mean_logits(nets: Nets, depth: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    """Mean discriminator logit on real and on synthesized pairs."""
    dt = nets.cfg.dtype
    d = ag.Tensor(np.asarray(depth, dtype=dt))
    real = nets.discriminator(d, ag.Tensor(np.asarray(target, dtype=dt))).data.mean()
    fake = nets.discriminator(d, ag.Tensor(nets.generate(depth))).data.mean()
    return float(real), float(fake)
