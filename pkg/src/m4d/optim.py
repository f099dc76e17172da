"""Adam over named parameter groups, with row surgery for densify/prune."""

from __future__ import annotations

import numpy as np

from . import quat

# groups whose rows are unit quaternions on the last axis
QUAT_GROUPS = ("quat0", "basis_quat")


class Adam:
    """Standard Adam (bias-corrected) applied in place to named arrays.

    One global step counter; lazily allocated moment buffers per group.
    A group whose gradient contains a non-finite value is skipped for
    that step and the (step, group) pair is recorded in ``skipped``.
    Quaternion groups are renormalized after every update so downstream
    code never sees drifting norms.
    """

    def __init__(self, lrs: dict[str, float], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lrs = dict(lrs)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0
        self.skipped: list[tuple[int, str]] = []

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            lr = self.lrs[name]
            if not np.all(np.isfinite(g)):
                self.skipped.append((t, name))
                continue
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
            v = self.v.get(name)
            if v is None:
                v = self.v[name] = np.zeros_like(p)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if name in QUAT_GROUPS:
                p[...] = quat.normalize(p)

    # --------------------------------------------- row surgery / snapshots

    def extend_rows(self, name: str, n_new: int) -> None:
        """Zero-pad a group's moments after rows were appended to it."""
        for buf in (self.m, self.v):
            if name in buf:
                pad = np.zeros((n_new,) + buf[name].shape[1:])
                buf[name] = np.concatenate([buf[name], pad], axis=0)

    def select_rows(self, name: str, keep: np.ndarray) -> None:
        """Filter a group's moments after rows were pruned from it."""
        for buf in (self.m, self.v):
            if name in buf:
                buf[name] = buf[name][keep]

    def snapshot(self) -> dict:
        return {
            "m": {k: a.copy() for k, a in self.m.items()},
            "v": {k: a.copy() for k, a in self.v.items()},
            "step_count": self.step_count,
            "lrs": dict(self.lrs),
        }

    def restore(self, snap: dict) -> None:
        self.m = {k: a.copy() for k, a in snap["m"].items()}
        self.v = {k: a.copy() for k, a in snap["v"].items()}
        self.step_count = snap["step_count"]
        self.lrs = dict(snap["lrs"])

    def halve_lrs(self) -> None:
        self.lrs = {k: 0.5 * lr for k, lr in self.lrs.items()}
