"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


def relative_error(analytic, numeric):
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)`` (0 when both vanish)."""
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return 0.0 if den == 0.0 else float(num / den)


def numeric_grad(fn, arrays, name, h=1e-5):
    """d fn(arrays) / d arrays[name] by central differences; ``fn`` returns a float."""
    base = arrays[name]
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = base[idx]
        base[idx] = orig + h
        up = fn(arrays)
        base[idx] = orig - h
        down = fn(arrays)
        base[idx] = orig
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def check_gradients(build, arrays, h=1e-5):
    """Compare analytic and numeric gradients of a scalar-valued graph.

    ``build`` maps a dict of leaf Tensors to a scalar Tensor.  Returns a dict
    of per-array relative errors.
    """
    leaves = {k: Tensor(v.copy(), requires_grad=True) for k, v in arrays.items()}
    backward(build(leaves))
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}

    def value(arrs):
        return float(build({k: Tensor(v) for k, v in arrs.items()}).data)

    work = {k: v.copy() for k, v in arrays.items()}
    return {k: relative_error(analytic[k], numeric_grad(value, work, k, h)) for k in arrays}
