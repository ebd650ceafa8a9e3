import numpy as np
import torch


def central_difference_grad(fn, x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Numerical gradient of scalar fn(x) by central differences, element by element."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = float(fn(x))
            flat[i] = orig - eps
            lo = float(fn(x))
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = max(float(a.norm()), float(b.norm()), 1e-12)
    return float((a - b).norm()) / denom


def softmax_oracle(logits: np.ndarray) -> np.ndarray:
    """Row softmax computed independently with numpy."""
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)
