"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, record_relu_signs


def _signs_match(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def gradcheck(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    return_details: bool = False,
):
    """Compare analytic gradients of scalar ``f()`` with central differences.

    ``params`` must be float64 leaves requiring grad. Each scalar is perturbed
    by ``±step``; if any ReLU pre-activation changes sign under either
    perturbation the scalar is excluded (the function is not differentiable
    across a kink). The error for one parameter tensor is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`` in the
    2-norm over its included entries; the maximum over tensors is returned.
    """
    for p in params:
        if p.dtype != np.float64:
            raise TypeError(f"gradcheck needs float64 parameters, got {p.dtype}")
        p.grad = None
    with record_relu_signs() as base_signs:
        loss = f()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    details = {}
    excluded = 0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        num = np.zeros(flat.size)
        keep = np.ones(flat.size, dtype=bool)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            with record_relu_signs() as s_plus:
                f_plus = float(f().data)
            flat[i] = orig - step
            with record_relu_signs() as s_minus:
                f_minus = float(f().data)
            flat[i] = orig
            if not (_signs_match(base_signs, s_plus) and _signs_match(base_signs, s_minus)):
                keep[i] = False
                continue
            num[i] = (f_plus - f_minus) / (2.0 * step)
        excluded += int((~keep).sum())
        a = ga.reshape(-1)[keep]
        n = num[keep]
        denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
        err = float(np.linalg.norm(a - n) / denom) if a.size else 0.0
        details[getattr(p, "name", str(id(p)))] = err
        worst = max(worst, err)
        p.grad = None
    if return_details:
        return worst, {"per_parameter": details, "excluded": excluded}
    return worst
