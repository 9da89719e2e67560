# deeponet.py
"""
DeepONet variants used as the learned part of the hybrid solver.

Each variant is a pair of real-output branch/trunk networks combined as
N = N_real + i·N_imag:

    masked       attention over [f, d, O] with the geometry key mask, dense branch
    non_masked   same network with the mask switched off
    vanilla      CNN branch on f over the unit square, plain (x, y) trunk
    ga_vanilla   CNN branch on zero-padded f plus the binary domain image
"""

from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from exceptions import InvalidInputException, ShapeMismatchException
from geometry import Geometry, SensorSet
from logging_config import get_logger
from pydantic_models import ModelConfig
from tensor_ad import DTYPE, activation, conv2d, conv_output_size, dense, masked_attention, to_tensor

logger = get_logger(__name__)

LOSS_FLOOR = 1e-12


def _uniform_init(module: nn.Module, generator: torch.Generator) -> None:
    # uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias
    for layer in module.modules():
        if isinstance(layer, (nn.Linear, nn.Conv2d)):
            fan_in = layer.weight[0].numel()
            bound = 1.0 / np.sqrt(fan_in)
            with torch.no_grad():
                layer.weight.uniform_(-bound, bound, generator=generator)
                if layer.bias is not None:
                    layer.bias.uniform_(-bound, bound, generator=generator)


class Mlp(nn.Module):
    """Dense stack; hidden layers use the activation, the last layer is linear."""

    def __init__(self, widths: Sequence[int], activation_name: str):
        super().__init__()
        self.layers = nn.ModuleList(nn.Linear(a, b, dtype=DTYPE) for a, b in zip(widths[:-1], widths[1:]))
        self.activation_name = activation_name

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        act = activation(self.activation_name)
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = dense(x, layer.weight, layer.bias)
            if i < last:
                x = act(x)
        return x


class AttentionBranch(nn.Module):
    """Masked attention over sensor features, per-sensor channel collapse, dense stack."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.channels = config.dim + 2
        self.collapse_mode = config.collapse
        self.collapse = nn.Linear(self.channels, 1, dtype=DTYPE) if config.collapse == "learned" else None
        self.mlp = Mlp(config.branch_widths, config.branch_activation)

    def forward(self, f: torch.Tensor, features: "SensorTensors") -> torch.Tensor:
        batch = f.shape[0]
        geometry_features = features.geometry_channels.expand(batch, -1, -1)
        V = torch.cat([f.unsqueeze(-1), geometry_features], dim=-1)
        attended = masked_attention(V, features.M)
        if self.collapse is not None:
            z = dense(attended, self.collapse.weight, self.collapse.bias).squeeze(-1)
        else:
            z = attended.sum(dim=-1)
        # rows of masked sensors are dropped before the dense stack
        z = torch.where(features.keep, z, torch.zeros((), dtype=DTYPE))
        return self.mlp(z)


class ConvStack(nn.Module):
    """3x3 stride-2 valid convolutions with ReLU; 15 -> 7 -> 3 -> 1."""

    def __init__(self, channels: Sequence[int], side: int = 15):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv2d(a, b, kernel_size=3, stride=2, dtype=DTYPE) for a, b in zip(channels[:-1], channels[1:])
        )
        for _ in self.convs:
            side = conv_output_size(side)
        if side < 1:
            raise InvalidInputException("conv_channels", "too many stride-2 layers for a 15x15 input")
        self.out_features = channels[-1] * side * side

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.convs:
            x = torch.relu(conv2d(x, conv.weight, conv.bias, stride=2))
        return x.flatten(start_dim=1)


class CnnBranch(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.variant = config.variant
        self.twin = config.variant == "ga_vanilla" and config.ga_encoding == "twin"
        channels = list(config.conv_channels)
        if config.variant == "ga_vanilla" and not self.twin:
            channels[0] = 2
        self.cnn = ConvStack(channels)
        self.domain_cnn = ConvStack(config.conv_channels) if self.twin else None
        expected = self.cnn.out_features * (2 if self.twin else 1)
        if config.branch_widths[0] != expected:
            raise InvalidInputException("branch_widths", f"CNN head must start at width {expected}")
        self.mlp = Mlp(config.branch_widths, config.branch_activation)

    def forward(self, f: torch.Tensor, features: "SensorTensors") -> torch.Tensor:
        side = int(round(np.sqrt(f.shape[-1])))
        image = f.reshape(f.shape[0], 1, side, side)
        if self.variant == "ga_vanilla":
            image = torch.where(features.keep.reshape(1, 1, side, side), image, torch.zeros((), dtype=DTYPE))
            domain = features.domain_image.expand(f.shape[0], 1, side, side)
            if self.twin:
                hidden = torch.cat([self.cnn(image), self.domain_cnn(domain)], dim=-1)
            else:
                hidden = self.cnn(torch.cat([image, domain], dim=1))
        else:
            hidden = self.cnn(image)
        return self.mlp(hidden)


class RealDeepOnet(nn.Module):
    """One real-output branch/trunk pair."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        if config.variant in ("masked", "non_masked"):
            self.branch = AttentionBranch(config)
        else:
            self.branch = CnnBranch(config)
        self.trunk = Mlp(config.trunk_widths, config.trunk_activation)


@dataclass
class SensorTensors:
    """Torch view of a SensorSet as seen by one variant."""
    geometry_channels: torch.Tensor
    M: torch.Tensor
    keep: torch.Tensor
    domain_image: torch.Tensor

    @classmethod
    def build(cls, sensors: SensorSet, variant: str) -> "SensorTensors":
        n = sensors.n_sensors
        channels = to_tensor(np.column_stack([sensors.d, sensors.O])).unsqueeze(0)
        if variant == "masked":
            M = to_tensor(sensors.M)
            keep = torch.as_tensor(sensors.unmasked)
        else:
            M = torch.zeros((n, n), dtype=DTYPE)
            keep = torch.ones(n, dtype=torch.bool)
        if variant == "ga_vanilla":
            keep = torch.as_tensor(sensors.unmasked)
        side = int(round(np.sqrt(n)))
        image = to_tensor(sensors.unmasked.astype(np.float64))
        if side * side == n:
            image = image.reshape(1, 1, side, side)
        return cls(channels, M, keep, image)


class DeepOnetModel:
    """Real and imaginary networks, their config and training metadata."""

    def __init__(self, config: ModelConfig, seed: Optional[int] = None):
        self.config = config
        generator = torch.Generator()
        generator.manual_seed(config.seed if seed is None else seed)
        self.real = RealDeepOnet(config)
        self.imag = RealDeepOnet(config)
        _uniform_init(self.real, generator)
        _uniform_init(self.imag, generator)
        self.metadata: Dict[str, object] = {}
        self.input_scale = 1.0
        self.output_scale = 1.0
        self.branch_passes = 0
        self.trunk_passes = 0

    @property
    def variant(self) -> str:
        return self.config.variant

    @property
    def uses_distance(self) -> bool:
        return self.config.variant in ("masked", "non_masked")

    def networks(self) -> Tuple[RealDeepOnet, RealDeepOnet]:
        return self.real, self.imag

    def parameters(self) -> Iterator[nn.Parameter]:
        yield from self.real.parameters()
        yield from self.imag.parameters()

    def named_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {}
        for prefix, net in (("real", self.real), ("imag", self.imag)):
            for name, value in net.state_dict().items():
                arrays[f"{prefix}.{name}"] = value.detach().cpu().numpy()
        arrays["scale.input"] = np.array([self.input_scale])
        arrays["scale.output"] = np.array([self.output_scale])
        return arrays

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for prefix, net in (("real", self.real), ("imag", self.imag)):
            state = {
                name[len(prefix) + 1:]: torch.as_tensor(value, dtype=DTYPE)
                for name, value in arrays.items() if name.startswith(prefix + ".")
            }
            net.load_state_dict(state)
        self.set_scaling(
            float(np.asarray(arrays.get("scale.input", 1.0)).reshape(-1)[0]),
            float(np.asarray(arrays.get("scale.output", 1.0)).reshape(-1)[0]),
        )

    def set_scaling(self, input_scale: float, output_scale: float) -> None:
        """
        Fix the units the networks work in.

        The branch sees f / input_scale and the combined output is multiplied
        by output_scale, so both nets train on order-one values whatever the
        amplitude of the data.
        """
        for name, value in (("input_scale", input_scale), ("output_scale", output_scale)):
            if not np.isfinite(value) or value <= 0.0:
                raise InvalidInputException(name, f"must be finite and positive, got {value}")
        self.input_scale = float(input_scale)
        self.output_scale = float(output_scale)

    def sensor_tensors(self, sensors: SensorSet) -> SensorTensors:
        if sensors.n_sensors != self.config.n_sensors:
            raise ShapeMismatchException("sensors", self.config.n_sensors, sensors.n_sensors)
        return SensorTensors.build(sensors, self.config.variant)

    # ============== Forward passes ==============

    def branch_forward(self, f, sensors: SensorSet, features: Optional[SensorTensors] = None
                       ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Branch outputs (real, imag) of shape (p,) for one input or (B, p) for a batch.

        `f` is expected zero-extended to all sensors already.
        """
        f = f if isinstance(f, torch.Tensor) else to_tensor(f)
        single = f.dim() == 1
        f = f.unsqueeze(0) if single else f
        if f.shape[-1] != self.config.n_sensors:
            raise ShapeMismatchException("branch_forward", self.config.n_sensors, f.shape[-1])
        features = features or self.sensor_tensors(sensors)
        f = f / self.input_scale
        out_real = self.real.branch(f, features)
        out_imag = self.imag.branch(f, features)
        self.branch_passes += f.shape[0]
        if single:
            return out_real[0], out_imag[0]
        return out_real, out_imag

    def trunk_inputs(self, y, dist=None) -> torch.Tensor:
        y = np.asarray(y, dtype=np.float64).reshape(-1, self.config.dim)
        if not self.uses_distance:
            return to_tensor(y)
        if dist is None:
            raise InvalidInputException("dist", f"variant '{self.variant}' needs the signed distance of each query")
        return to_tensor(np.column_stack([y, np.asarray(dist, dtype=np.float64).reshape(-1)]))

    def trunk_forward(self, y, dist=None) -> Tuple[torch.Tensor, torch.Tensor]:
        """Trunk outputs (real, imag), each of shape (Q, p)."""
        inputs = y if isinstance(y, torch.Tensor) else self.trunk_inputs(y, dist)
        self.trunk_passes += inputs.shape[0]
        return self.real.trunk(inputs), self.imag.trunk(inputs)

    def combine(self, branch: Tuple[torch.Tensor, torch.Tensor],
                trunk: Tuple[torch.Tensor, torch.Tensor]) -> Tuple[torch.Tensor, torch.Tensor]:
        """Inner products over the basis axis, in output units; batch axes of the branch are kept."""
        scale = self.output_scale
        return scale * (branch[0] @ trunk[0].T), scale * (branch[1] @ trunk[1].T)

    def evaluate(self, f_sensors, sensors: SensorSet, query_points,
                 geometry: Optional[Geometry] = None, query_dist=None) -> np.ndarray:
        """
        Complex network output at query points for one input function.

        Args:
            f_sensors: zero-extended values at the sensors
            query_points: (Q, dim) points in [0,1]^dim
            geometry: used for the distance feature when query_dist is not given
        """
        points = np.asarray(query_points, dtype=np.float64).reshape(-1, self.config.dim)
        if np.any(points < 0.0) or np.any(points > 1.0):
            raise InvalidInputException("query_points", "query points must lie in the unit box")
        if self.uses_distance and query_dist is None:
            if geometry is None:
                raise InvalidInputException("geometry", "geometry or query_dist is required")
            query_dist = geometry.sdf(points)
        with torch.no_grad():
            branch = self.branch_forward(f_sensors, sensors)
            trunk = self.trunk_forward(points, query_dist)
            real, imag = self.combine(branch, trunk)
        return real.numpy() + 1j * imag.numpy()


@dataclass
class TrainingGroup:
    """Samples sharing one geometry: inputs at sensors, targets at the unknowns."""
    features: SensorTensors
    f: torch.Tensor
    trunk_inputs: torch.Tensor
    u_real: torch.Tensor
    u_imag: torch.Tensor

    @property
    def size(self) -> int:
        return self.f.shape[0]

    def subset(self, index: torch.Tensor) -> "TrainingGroup":
        return TrainingGroup(self.features, self.f[index], self.trunk_inputs, self.u_real[index], self.u_imag[index])


def per_sample_loss(model: DeepOnetModel, group: TrainingGroup) -> torch.Tensor:
    """(|Re N - Re u|² + |Im N - Im u|²) / (|u|² + 1e-12) for each sample of a group."""
    f = group.f / model.input_scale
    b_real = model.real.branch(f, group.features)
    b_imag = model.imag.branch(f, group.features)
    t_real = model.real.trunk(group.trunk_inputs)
    t_imag = model.imag.trunk(group.trunk_inputs)
    pred_real, pred_imag = model.combine((b_real, b_imag), (t_real, t_imag))
    error = ((pred_real - group.u_real) ** 2).sum(dim=-1) + ((pred_imag - group.u_imag) ** 2).sum(dim=-1)
    norm = (group.u_real ** 2).sum(dim=-1) + (group.u_imag ** 2).sum(dim=-1)
    return error / (norm + LOSS_FLOOR)


def training_loss(model: DeepOnetModel, groups: List[TrainingGroup]) -> torch.Tensor:
    """Mean relative squared error over every sample of every group."""
    losses = [per_sample_loss(model, group) for group in groups if group.size > 0]
    if not losses:
        raise InvalidInputException("batch", "empty training batch")
    return torch.cat(losses).mean()
