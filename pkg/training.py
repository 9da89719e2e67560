# training.py
"""
Training loop for the DeepONet variants and HNET1 model files.
"""

from typing import List, Optional, Tuple

import numpy as np
import torch
from tqdm import tqdm

from datagen import Dataset
from deeponet import DeepOnetModel, TrainingGroup, training_loss
from exceptions import InvalidInputException, TrainingDivergedException
from logging_config import get_logger, log_operation
from pydantic_models import ModelConfig, TrainingConfig
from serialization import read_artifact, write_artifact
from settings import HINTS_PROGRESS
from tensor_ad import AdamState, seed_everything, to_tensor

logger = get_logger(__name__)

MODEL_MAGIC = b"HNET1"
MODEL_VERSION = 1


def training_groups(model: DeepOnetModel, dataset: Dataset) -> List[TrainingGroup]:
    """Torch tensors for every dataset group the model is meant to train on."""
    allowed = model.config.training_geometries
    groups = []
    for group in dataset.groups:
        if allowed and group.geometry_spec.kind not in allowed:
            continue
        if group.size == 0:
            continue
        sensors = group.sensors(dataset.spec)
        dist = group.geometry.sdf(group.coords) if model.uses_distance else None
        groups.append(TrainingGroup(
            features=model.sensor_tensors(sensors),
            f=to_tensor(group.f_sensors),
            trunk_inputs=model.trunk_inputs(group.coords, dist),
            u_real=to_tensor(group.u.real),
            u_imag=to_tensor(group.u.imag),
        ))
    if not groups:
        raise InvalidInputException("dataset", f"no training samples for variant '{model.variant}'")
    return groups


def fit_scaling(model: DeepOnetModel, groups: List[TrainingGroup]) -> Tuple[float, float]:
    """
    Set the model's input and output scales to the RMS of the training data.

    Inputs are measured over unmasked sensors only; zero data keeps scale 1.
    """
    f_values = torch.cat([group.f[:, group.features.domain_image.reshape(-1) > 0].reshape(-1) for group in groups])
    u_values = torch.cat([torch.sqrt(group.u_real ** 2 + group.u_imag ** 2).reshape(-1) for group in groups])
    input_scale = float(torch.sqrt((f_values ** 2).mean())) if f_values.numel() else 0.0
    output_scale = float(torch.sqrt((u_values ** 2).mean())) if u_values.numel() else 0.0
    model.set_scaling(input_scale if input_scale > 0.0 else 1.0, output_scale if output_scale > 0.0 else 1.0)
    logger.debug(f"Scaling: input {model.input_scale:.3e}, output {model.output_scale:.3e}")
    return model.input_scale, model.output_scale


def _split_batch(groups: List[TrainingGroup], offsets: np.ndarray, batch: torch.Tensor) -> List[TrainingGroup]:
    parts = []
    for gi, group in enumerate(groups):
        in_group = (batch >= offsets[gi]) & (batch < offsets[gi + 1])
        local = batch[in_group] - int(offsets[gi])
        if local.numel():
            parts.append(group.subset(local))
    return parts


@log_operation("train")
def train(model_cfg: ModelConfig, dataset: Dataset, training_cfg: Optional[TrainingConfig] = None,
          seed: Optional[int] = None) -> Tuple[DeepOnetModel, List[float]]:
    """
    Fit a model with shuffled mini-batches and Adam.

    Returns:
        The trained model and the per-epoch mean loss

    Raises:
        TrainingDivergedException: a batch loss became non-finite
    """
    training_cfg = training_cfg or TrainingConfig()
    seed = training_cfg.seed if seed is None else seed
    generator = seed_everything(seed)

    model = DeepOnetModel(model_cfg, seed=seed)
    groups = training_groups(model, dataset)
    fit_scaling(model, groups)
    offsets = np.concatenate([[0], np.cumsum([group.size for group in groups])])
    total = int(offsets[-1])

    state = AdamState(
        model.parameters(),
        lr=training_cfg.learning_rate,
        decay_epoch=training_cfg.decay_epoch,
        decay_factor=training_cfg.decay_factor,
    )
    curve: List[float] = []
    epochs = tqdm(
        range(1, training_cfg.epochs + 1), desc=f"train {model_cfg.variant}",
        disable=None if HINTS_PROGRESS else True,
    )
    for epoch in epochs:
        permutation = torch.randperm(total, generator=generator)
        epoch_loss = 0.0
        for batch_index, start in enumerate(range(0, total, training_cfg.batch_size)):
            batch = permutation[start:start + training_cfg.batch_size]
            loss = training_loss(model, _split_batch(groups, offsets, batch))
            value = float(loss.detach())
            if not np.isfinite(value):
                raise TrainingDivergedException(epoch, batch_index, value)
            state.optimizer.zero_grad()
            loss.backward()
            state.optimizer.step()
            state.step_count += 1
            epoch_loss += value * batch.numel()
        state.end_epoch()
        curve.append(epoch_loss / total)
        epochs.set_postfix(loss=f"{curve[-1]:.3e}")
        if epoch % 100 == 0:
            logger.debug(f"epoch {epoch}: loss {curve[-1]:.4e}, lr {state.lr:.1e}")

    model.metadata = {
        "dataset_hash": dataset.content_hash,
        "epochs": training_cfg.epochs,
        "final_loss": curve[-1],
        "seed": seed,
        "loss_curve": curve,
    }
    logger.info(
        f"Trained {model_cfg.variant} for {training_cfg.epochs} epochs, final loss {curve[-1]:.4e}",
        extra={"variant": model_cfg.variant, "samples": total}
    )
    return model, curve


# ============== HNET1 files ==============

@log_operation("save_model")
def save_model(model: DeepOnetModel, path) -> str:
    manifest = {
        "format": "HNET1",
        "variant": model.variant,
        "config": model.config.model_dump(),
        "seed": model.metadata.get("seed", model.config.seed),
        "dataset_hash": model.metadata.get("dataset_hash", ""),
        "epochs": model.metadata.get("epochs", 0),
        "final_loss": model.metadata.get("final_loss"),
        "loss_curve": model.metadata.get("loss_curve", []),
    }
    return write_artifact(path, MODEL_MAGIC, MODEL_VERSION, manifest, model.named_arrays())


@log_operation("load_model")
def load_model(path) -> DeepOnetModel:
    manifest, arrays = read_artifact(path, MODEL_MAGIC, MODEL_VERSION)
    model = DeepOnetModel(ModelConfig(**manifest["config"]))
    model.load_arrays(arrays)
    model.metadata = {
        key: manifest[key] for key in ("dataset_hash", "epochs", "final_loss", "seed", "loss_curve", "content_hash")
        if key in manifest
    }
    return model
