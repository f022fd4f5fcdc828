from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingDivergence

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    """First/second moments and step counts keyed by parameter name."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: dict = field(default_factory=dict)

    def ensure(self, name, shape):
        if name not in self.m or self.m[name].shape != shape:
            self.m[name] = np.zeros(shape)
            self.v[name] = np.zeros(shape)
            self.step[name] = 0

    def select_rows(self, prefix: str, index):
        """Keep / duplicate rows (axis 0) of every buffer under ``prefix``."""
        for name in list(self.m):
            if name.startswith(prefix):
                self.m[name] = self.m[name][index]
                self.v[name] = self.v[name][index]


def adam_step(params: dict, grads: dict, state: AdamState, lr, renormalize=("rotations",)):
    """Bias-corrected Adam update applied in place to ``params``.

    ``lr`` is a float or a dict keyed like ``params`` whose values broadcast
    against the parameter. Keys whose last component is listed in
    ``renormalize`` are projected back to unit quaternions row-wise.
    """
    for name, g in grads.items():
        if name not in params:
            continue
        g = np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence(name, f"non-finite gradient for parameter group '{name}'")
        p = params[name]
        state.ensure(name, p.shape)
        m, v = state.m[name], state.v[name]
        m *= BETA1
        m += (1 - BETA1) * g
        v *= BETA2
        v += (1 - BETA2) * g * g
        state.step[name] += 1
        t = state.step[name]
        rate = lr[name] if isinstance(lr, dict) else lr
        m_hat = m / (1 - BETA1 ** t)
        v_hat = v / (1 - BETA2 ** t)
        p -= rate * m_hat / (np.sqrt(v_hat) + EPS)
        if name.rsplit(".", 1)[-1] in renormalize:
            p /= np.linalg.norm(p, axis=-1, keepdims=True)
    return params, state
