"""Finite-difference verification of reverse-mode gradients.

Run in float64: central differences with step 1e-5 resolve roughly 10
significant digits, so a correct backward pass lands well under the 1e-4
relative-error gate while a transposed or missing term fails by orders of
magnitude.
"""

import numpy as np

from .errors import ParameterError


def finite_difference_grad(loss_fn, tensor, eps=1e-5):
    """Central-difference gradient of ``loss_fn()`` w.r.t. one tensor.

    ``loss_fn`` must rebuild its graph from the tensor's current data on
    every call; the tensor is perturbed in place and restored.
    """
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        hi = float(loss_fn().item())
        flat[k] = orig - eps
        lo = float(loss_fn().item())
        flat[k] = orig
        gflat[k] = (hi - lo) / (2.0 * eps)
    return grad


def check_gradients(loss_fn, params, eps=1e-5, floor=1e-3):
    """Compare backward() gradients of a scalar loss against central
    differences.

    params: dict of name -> Tensor with requires_grad=True.  Returns a dict
    of name -> max relative error, where the error of each element is
    |analytic - numeric| / max(|analytic|, |numeric|, floor).
    """
    if not params:
        raise ParameterError("no parameters to check")
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {}
    for name, p in params.items():
        analytic[name] = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
    errors = {}
    for name, p in params.items():
        numeric = finite_difference_grad(loss_fn, p, eps=eps)
        a = analytic[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        errors[name] = float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0
    return errors
