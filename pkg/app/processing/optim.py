"""Optimizer construction, learning-rate schedule and gradient clipping."""
import logging
import math
from typing import Dict, Iterable, List
import torch
import torch.nn as nn
from app.models import OptimConfig

logger = logging.getLogger(__name__)

_NORM_TYPES = (nn.LayerNorm, nn.GroupNorm, nn.BatchNorm1d, nn.BatchNorm2d)


def no_decay_names(model: nn.Module) -> List[str]:
    """Names of biases and normalization parameters, which are excluded from weight decay."""
    names = []
    for module_name, module in model.named_modules():
        for param_name, _ in module.named_parameters(recurse=False):
            full = f"{module_name}.{param_name}" if module_name else param_name
            if isinstance(module, _NORM_TYPES) or param_name.endswith("bias"):
                names.append(full)
    return names


def parameter_groups(model: nn.Module, weight_decay: float) -> List[Dict]:
    skip = set(no_decay_names(model))
    decay, no_decay = [], []
    for name, param in model.named_parameters():
        if not param.requires_grad:
            continue
        (no_decay if name in skip else decay).append(param)
    return [
        {"params": decay, "weight_decay": weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]


def build_optimizer(model: nn.Module, ocfg: OptimConfig) -> torch.optim.AdamW:
    """AdamW over two parameter groups; the initial lr is set by the schedule each step."""
    return torch.optim.AdamW(
        parameter_groups(model, ocfg.weight_decay),
        lr=ocfg.lr,
        betas=(ocfg.beta1, ocfg.beta2),
        eps=ocfg.eps,
    )


def lr_at(step: int, ocfg: OptimConfig) -> float:
    """
    Linear warmup from 0 to lr, then cosine annealing to 0 at `total_steps`.
    Raises:
        ValueError: If step is negative.
    """
    if step < 0:
        raise ValueError(f"Step must be non-negative, got {step}.")
    if step < ocfg.warmup_steps:
        return ocfg.lr * step / ocfg.warmup_steps
    span = max(ocfg.total_steps - ocfg.warmup_steps, 1)
    progress = min((step - ocfg.warmup_steps) / span, 1.0)
    return ocfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def global_grad_norm(parameters: Iterable[torch.Tensor]) -> float:
    grads = [p.grad.detach() for p in parameters if p.grad is not None]
    if not grads:
        return 0.0
    return float(torch.linalg.vector_norm(torch.stack([torch.linalg.vector_norm(g) for g in grads])))


def clip_gradients(model: nn.Module, max_norm: float) -> float:
    """Clips the global gradient norm in place and returns the norm before clipping."""
    return float(torch.nn.utils.clip_grad_norm_(model.parameters(), max_norm))
