"""DDPM machinery over action sequences: the squared-cosine schedule, forward noising, and ancestral sampling.

All tensors are ``torch.float64``. Step indices run from 1 (least noisy) to ``K``; index 0 is the clean sample.

"""

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import torch
from torch import Tensor

from .errors import FlonavError

COSINE_OFFSET = 0.008
MAX_BETA = 0.999


class ScheduleError(FlonavError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Coefficient table of a ``K``-step diffusion process; every tensor has ``K + 1`` entries."""

    alpha_bar: Tensor
    alpha: Tensor
    beta: Tensor
    sigma: Tensor

    @property
    def steps(self) -> int:
        return len(self.alpha_bar) - 1

    def check_step(self, k: int, lowest: int = 1):
        if not lowest <= k <= self.steps:
            raise ScheduleError(f"diffusion step {k} is outside [{lowest}, {self.steps}]")

    def eq1_coefficients(self, k: int) -> Tuple[float, float, float]:
        """``(scale, noise_weight, sigma)`` of one reverse step written as ``scale * (a - noise_weight * eps) + sigma * z``."""
        self.check_step(k)
        alpha_k = float(self.alpha[k])
        return (
            1.0 / math.sqrt(alpha_k),
            (1.0 - alpha_k) / math.sqrt(1.0 - float(self.alpha_bar[k])),
            float(self.sigma[k]),
        )


def square_cosine_schedule(steps: int, offset: float = COSINE_OFFSET, max_beta: float = MAX_BETA) -> NoiseSchedule:
    """Builds the squared-cosine schedule.

    Per-step ``beta`` values come from ``f(t) = cos^2((t + s) / (1 + s) * pi / 2)`` and are clipped to
    ``max_beta``; ``alpha_bar`` is the running product of ``1 - beta``, so it equals ``f(k / K) / f(0)`` wherever
    no clipping happened. The last step always clips, since ``f(1)`` is zero: for ``K = 10`` that leaves
    ``alpha_bar_K = alpha_bar_9 * (1 - max_beta)``, about 2.4e-5.

    """
    if steps < 1:
        raise ScheduleError(f"a schedule needs at least one step, got {steps}")

    def f(t: float) -> float:
        return math.cos((t + offset) / (1 + offset) * math.pi / 2) ** 2

    betas = [0.0]
    for k in range(1, steps + 1):
        betas.append(min(1.0 - f(k / steps) / f((k - 1) / steps), max_beta))
    alpha_bar = [1.0]
    for k in range(1, steps + 1):
        alpha_bar.append(alpha_bar[-1] * (1.0 - betas[k]))
    sigma = [0.0]
    for k in range(1, steps + 1):
        sigma.append(math.sqrt(betas[k] * (1.0 - alpha_bar[k - 1]) / (1.0 - alpha_bar[k])))
    return NoiseSchedule(
        alpha_bar=torch.tensor(alpha_bar, dtype=torch.float64),
        alpha=torch.tensor([1.0 - beta for beta in betas], dtype=torch.float64),
        beta=torch.tensor(betas, dtype=torch.float64),
        sigma=torch.tensor(sigma, dtype=torch.float64),
    )


Step = Union[int, Tensor]


def _gather(table: Tensor, k: Step, like: Tensor) -> Tensor:
    """Per-sample coefficients shaped to broadcast against ``like``."""
    if isinstance(k, Tensor) and k.ndim > 0:
        return table[k].reshape(-1, *([1] * (like.ndim - 1)))
    return table[int(k)]


def _check_steps(k: Step, sched: NoiseSchedule, lowest: int):
    if isinstance(k, Tensor):
        if k.numel() and (int(k.min()) < lowest or int(k.max()) > sched.steps):
            raise ScheduleError(f"diffusion steps must lie in [{lowest}, {sched.steps}]")
    else:
        sched.check_step(k, lowest)


def forward_noise(a0: Tensor, k: Step, eps: Tensor, sched: NoiseSchedule) -> Tensor:
    """``sqrt(alpha_bar_k) * a0 + sqrt(1 - alpha_bar_k) * eps``; ``k`` may be a per-sample tensor."""
    _check_steps(k, sched, lowest=0)
    alpha_bar = _gather(sched.alpha_bar, k, a0)
    return torch.sqrt(alpha_bar) * a0 + torch.sqrt(1.0 - alpha_bar) * eps


def predict_clean(a_k: Tensor, k: Step, eps: Tensor, sched: NoiseSchedule) -> Tensor:
    """Inverts :func:`forward_noise` for a known noise sample."""
    _check_steps(k, sched, lowest=0)
    alpha_bar = _gather(sched.alpha_bar, k, a_k)
    return (a_k - torch.sqrt(1.0 - alpha_bar) * eps) / torch.sqrt(alpha_bar)


def reverse_step(a_k: Tensor, eps_hat: Tensor, k: int, z: Optional[Tensor], sched: NoiseSchedule) -> Tensor:
    """One ancestral sampling step from ``a^k`` to ``a^{k-1}``; the noise ``z`` is ignored at ``k = 1``."""
    scale, noise_weight, sigma = sched.eq1_coefficients(k)
    mean = scale * (a_k - noise_weight * eps_hat)
    if k == 1 or z is None:
        return mean
    return mean + sigma * z


Denoiser = Callable[[Tensor, int, Tensor], Tensor]
"""``(noisy actions, step, condition) -> predicted noise``"""


def sample(
    denoiser: Denoiser,
    condition: Tensor,
    sched: NoiseSchedule,
    generator: torch.Generator,
    shape: Sequence[int] = (32, 2),
) -> Tensor:
    """Draws ``a^K`` from a standard normal and denoises it down to ``a^0``."""
    a = torch.randn(tuple(shape), generator=generator, dtype=torch.float64)
    for k in range(sched.steps, 0, -1):
        eps_hat = denoiser(a, k, condition)
        z = torch.randn(tuple(shape), generator=generator, dtype=torch.float64) if k > 1 else None
        a = reverse_step(a, eps_hat, k, z, sched)
    return a
