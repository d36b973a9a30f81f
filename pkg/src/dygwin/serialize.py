"""Bridging model parameter containers and checkpoint files."""

from __future__ import annotations

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import DataError
from .tensor import Tensor


def load_named_state(params: dict[str, Tensor], state: dict[str, np.ndarray],
                     strict: bool = True) -> None:
    """Copy checkpoint arrays into parameter tensors, validating shapes."""
    for name, tensor in params.items():
        if name not in state:
            if strict:
                raise DataError(f"checkpoint missing parameter {name!r}")
            continue
        arr = state[name]
        if tuple(arr.shape) != tensor.shape:
            raise DataError(f"checkpoint shape {arr.shape} != {tensor.shape} for {name!r}")
        tensor.values = arr.astype(tensor.dtype, copy=True)


def load_encoder_state(encoder, state: dict[str, np.ndarray], prefix: str = "encoder") -> None:
    load_named_state(encoder.named(prefix), state)


def save_model(path, encoder=None, decoder=None, predictor=None) -> None:
    params: dict[str, Tensor] = {}
    if encoder is not None:
        params.update(encoder.named("encoder"))
    if decoder is not None:
        params.update(decoder.named("decoder"))
    if predictor is not None:
        params.update(predictor.named("predictor"))
    save_checkpoint(path, params)


def load_model_state(path) -> dict[str, np.ndarray]:
    return load_checkpoint(path)
