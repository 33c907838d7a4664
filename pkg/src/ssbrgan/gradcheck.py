"""Central finite-difference checks of the custom loss gradients (64-bit)."""

from __future__ import annotations

import numpy as np
import torch

from .ssbr import SsbrNet, loss_anat, loss_norm, loss_order
from .translate import loss_acl

STEP = 1e-5
TOLERANCE = 1e-4


def numerical_gradient(f, x: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of the scalar function ``f`` at ``x`` (float64)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return grad


def analytic_gradient(f, x: np.ndarray) -> np.ndarray:
    t = torch.tensor(x, dtype=torch.float64, requires_grad=True)
    f(t).backward()
    return t.grad.numpy()


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def _check(f, x) -> float:
    num = numerical_gradient(lambda v: float(f(torch.from_numpy(v))), x)
    return relative_error(analytic_gradient(f, x), num)


def check_ssbr_losses(n_trials: int = 10, seed: int = 0, k: int = 3, p: int = 6) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    worst = {"order": 0.0, "norm": 0.0, "anat": 0.0}
    for _ in range(n_trials):
        scores = rng.uniform(-1, 1, size=(k, p))
        deltas = torch.from_numpy(rng.uniform(0, 1, size=(k, p - 1)))
        worst["order"] = max(worst["order"], _check(loss_order, scores))
        worst["norm"] = max(worst["norm"], _check(loss_norm, scores))
        worst["anat"] = max(worst["anat"], _check(lambda s: loss_anat(s, deltas), scores))
    return worst


def tiny_ssbr(seed: int = 0) -> SsbrNet:
    torch.manual_seed(seed)
    net = SsbrNet(depth=2, base_channels=4).double().eval()
    for prm in net.parameters():
        prm.requires_grad_(False)
    return net


def check_acl(n_trials: int = 10, seed: int = 0, j: int = 2, size: int = 12) -> float:
    """Gradient of the anatomical constraint loss with respect to the fake pixels."""
    rng = np.random.default_rng(seed)
    net = tiny_ssbr(seed)
    worst = 0.0
    for _ in range(n_trials):
        real = torch.from_numpy(rng.uniform(-1, 1, size=(j, size, size)))
        fake = rng.uniform(-1, 1, size=(j, size, size))
        worst = max(worst, _check(lambda x: loss_acl(net, real, x), fake))
    return worst


def run_all(n_trials: int = 10, seed: int = 0) -> dict[str, float]:
    out = check_ssbr_losses(n_trials, seed)
    out["acl"] = check_acl(n_trials, seed)
    return out
