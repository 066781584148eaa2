"""Adam with bias correction over name-keyed parameter dicts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient for parameter {name!r}; step aborted")
        self.name = name


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = None
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params, grads):
        """Return a new parameter dict updated by one Adam step.

        Parameters without an entry in ``grads`` are carried over unchanged and
        their moments are left alone.  Nothing is modified if any gradient is
        non-finite.
        """
        for name, g in grads.items():
            if name not in params:
                raise KeyError(f"gradient for unknown parameter {name!r}")
            if g.shape != params[name].shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(name)
        scale = 1.0
        if self.clip_norm is not None:
            total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > self.clip_norm:
                scale = self.clip_norm / total

        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        new = dict(params)
        for name in sorted(grads):
            g = grads[name] * scale if scale != 1.0 else grads[name]
            m = self.m.get(name)
            v = self.v.get(name)
            if m is None:
                m = np.zeros_like(params[name])
                v = np.zeros_like(params[name])
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            new[name] = params[name] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return new

    def state_arrays(self):
        out = {}
        for name in self.m:
            out[f"adam.m/{name}"] = self.m[name]
            out[f"adam.v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays, step_count):
        self.m = {k[len("adam.m/"):]: v for k, v in arrays.items() if k.startswith("adam.m/")}
        self.v = {k[len("adam.v/"):]: v for k, v in arrays.items() if k.startswith("adam.v/")}
        self.step_count = int(step_count)
