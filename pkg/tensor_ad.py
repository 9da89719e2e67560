# tensor_ad.py
"""
Differentiable building blocks for the networks, on torch autograd in float64.

The tape is torch's autograd graph; gradients accumulate into `.grad`.
Everything here is functional so the same ops serve the model classes, the
gradient checks and the tests.
"""

import math
from typing import Callable, Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch.optim.lr_scheduler import MultiStepLR

from exceptions import InvalidInputException, ShapeMismatchException
from logging_config import get_logger
from settings import HINTS_TORCH_THREADS

logger = get_logger(__name__)

DTYPE = torch.float64

torch.set_default_dtype(DTYPE)
torch.set_num_threads(HINTS_TORCH_THREADS)


def to_tensor(values, requires_grad: bool = False) -> torch.Tensor:
    tensor = torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=DTYPE)
    if requires_grad:
        tensor = tensor.clone().requires_grad_(True)
    return tensor


def seed_everything(seed: int) -> torch.Generator:
    """Seed torch's global RNG, enable deterministic kernels, return a dedicated generator."""
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


# ============== Ops ==============

ACTIVATIONS: Dict[str, Callable[[torch.Tensor], torch.Tensor]] = {
    "tanh": torch.tanh,
    "sin": torch.sin,
    "relu": torch.relu,
    "identity": lambda x: x,
}


def activation(name: str) -> Callable[[torch.Tensor], torch.Tensor]:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise InvalidInputException("activation", f"unknown activation '{name}'") from None


def dense(x: torch.Tensor, W: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Affine map x·Wᵀ + b with W of shape (out, in)."""
    if x.shape[-1] != W.shape[1]:
        raise ShapeMismatchException("dense", f"(..., {W.shape[1]})", tuple(x.shape))
    return F.linear(x, W, b)


def softmax_rows(Z: torch.Tensor) -> torch.Tensor:
    return torch.softmax(Z, dim=-1)


def masked_attention(V: torch.Tensor, M: torch.Tensor) -> torch.Tensor:
    """softmax((V·Vᵀ + M)/√N)·V over the last two axes; no learned projections."""
    n = V.shape[-2]
    if M.shape[-2:] != (n, n):
        raise ShapeMismatchException("masked_attention", (n, n), tuple(M.shape))
    scores = (V @ V.transpose(-1, -2) + M) / math.sqrt(n)
    return softmax_rows(scores) @ V


def conv2d(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor = None, stride: int = 2) -> torch.Tensor:
    """Valid-padding cross-correlation; x is (batch, channels, H, W)."""
    kernel = weight.shape[-1]
    if x.shape[-1] < kernel or x.shape[-2] < kernel:
        raise ShapeMismatchException("conv2d", f"spatial size >= {kernel}", tuple(x.shape[-2:]))
    return F.conv2d(x, weight, bias, stride=stride)


def conv_output_size(size: int, kernel: int = 3, stride: int = 2) -> int:
    return (size - kernel) // stride + 1


# ============== Optimizer ==============

class AdamState:
    """Adam moments plus the step-decay learning-rate schedule."""

    def __init__(self, params: Iterable[torch.nn.Parameter], lr: float = 1e-4,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 decay_epoch: int = 800, decay_factor: float = 0.5):
        self.params: List[torch.Tensor] = list(params)
        self.optimizer = torch.optim.Adam(self.params, lr=lr, betas=betas, eps=eps)
        self.scheduler = MultiStepLR(self.optimizer, milestones=[decay_epoch], gamma=decay_factor)
        self.step_count = 0

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def end_epoch(self) -> None:
        self.scheduler.step()


def adam_step(params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor], state: AdamState) -> None:
    """Apply one Adam update with explicitly supplied gradients (in place)."""
    if len(params) != len(grads):
        raise ShapeMismatchException("adam_step", len(params), len(grads))
    for p, g in zip(params, grads):
        p.grad = g.detach().clone()
    state.optimizer.step()
    state.step_count += 1


# ============== Gradient check ==============

def finite_difference_check(fn: Callable[..., torch.Tensor],
                            inputs: Union[torch.Tensor, Sequence[torch.Tensor]],
                            eps: float = 1e-6) -> float:
    """
    Largest norm-wise relative error between the autograd Jacobian of `fn`
    and a central-difference Jacobian, over all inputs.
    """
    if isinstance(inputs, torch.Tensor):
        inputs = (inputs,)
    inputs = tuple(x.detach().to(DTYPE) for x in inputs)

    analytic = torch.autograd.functional.jacobian(fn, inputs)
    worst = 0.0
    for index, x in enumerate(inputs):
        out_shape = fn(*inputs).shape
        numeric = torch.zeros(out_shape + x.shape, dtype=DTYPE)
        flat = numeric.reshape(int(np.prod(out_shape)) if out_shape else 1, -1)
        for k in range(x.numel()):
            bumped_up = list(inputs)
            bumped_down = list(inputs)
            up = x.clone().reshape(-1)
            down = x.clone().reshape(-1)
            up[k] += eps
            down[k] -= eps
            bumped_up[index] = up.reshape(x.shape)
            bumped_down[index] = down.reshape(x.shape)
            with torch.no_grad():
                diff = (fn(*bumped_up) - fn(*bumped_down)) / (2 * eps)
            flat[:, k] = diff.reshape(-1)
        auto = analytic[index].reshape(numeric.shape)
        scale = max(float(torch.linalg.norm(numeric)), 1e-300)
        worst = max(worst, float(torch.linalg.norm(auto - numeric)) / scale)
    return worst
