import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from src.errors import ConfigError, MissingTensorError, NumericError, ShapeConflictError
from src.schemas import TrainConfig
from src.tensor import Tensor

logger = logging.getLogger(__name__)

MOMENT_PREFIXES = ("optim.m.", "optim.v.")
STEP_KEY = "optim.step"


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step decay: lr0 · decay^floor(epoch / step)."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * cfg.lr_decay ** (epoch // cfg.lr_step)


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros(cls, params: Mapping[str, Tensor]) -> "AdamState":
        return cls(
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
        )

    def to_tensors(self) -> Dict[str, np.ndarray]:
        tensors: Dict[str, np.ndarray] = {}
        for name, moment in self.m.items():
            tensors[f"optim.m.{name}"] = moment
        for name, moment in self.v.items():
            tensors[f"optim.v.{name}"] = moment
        tensors[STEP_KEY] = np.asarray(self.t, dtype=np.float32)
        return tensors

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray], params: Mapping[str, Tensor]) -> "AdamState":
        state = cls(t=int(np.asarray(tensors.get(STEP_KEY, 0))))
        for name, p in params.items():
            for prefix, target in zip(MOMENT_PREFIXES, (state.m, state.v)):
                key = prefix + name
                if key not in tensors:
                    raise MissingTensorError(f"optimizer state lacks {key!r}")
                if tensors[key].shape != p.shape:
                    raise ShapeConflictError(f"{key!r} has shape {tensors[key].shape}, parameter is {p.shape}")
                target[name] = np.array(tensors[key], dtype=p.dtype)
        return state


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    cfg: TrainConfig,
) -> None:
    """
    One bias-corrected Adam update, applied in place to `params` and `state`.

    Every gradient is checked before anything changes, so a non-finite value
    leaves parameters, moments and the step counter untouched.
    """
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeConflictError(f"gradient for {name} has shape {g.shape}, parameter is {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}")

    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    correction1 = 1.0 - b1 ** state.t
    correction2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name].astype(p.dtype, copy=False)
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m.astype(p.dtype, copy=False)
        state.v[name] = v.astype(p.dtype, copy=False)
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + cfg.eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)


def clip_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale all gradients together when their joint L2 norm exceeds max_norm; returns the norm."""
    norm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if norm > max_norm:
        factor = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * factor
    return norm
