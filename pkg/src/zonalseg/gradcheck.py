"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e < self.tol for e in self.errors.values())

    def __str__(self) -> str:
        lines = [f"{name}: {err:.3e}" for name, err in self.errors.items()]
        status = "PASS" if self.passed else "FAIL"
        return f"grad_check {status} (tol {self.tol:g}, max {self.max_error:.3e})\n" + "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``, zero when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def grad_check(
    loss_fn: Callable[[], Tensor],
    wrt: Mapping[str, Tensor],
    tol: float = 1e-4,
    step: float = 1e-3,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backprop gradients against central differences.

    ``loss_fn`` must rebuild the graph from the current values of the tensors
    in ``wrt`` and return a scalar; it has to be deterministic. The caller is
    responsible for the dtype (float64 is expected for tight tolerances).
    When ``max_entries`` is set, only that many randomly chosen entries of
    each tensor are perturbed and the error is measured on those entries.
    """
    for t in wrt.values():
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {name: (t.grad if t.grad is not None else np.zeros_like(t.data)).astype(np.float64) for name, t in wrt.items()}

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for name, t in wrt.items():
        flat = t.data.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            picks = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        else:
            picks = np.arange(flat.size)
        numeric = np.empty(len(picks), dtype=np.float64)
        for slot, i in enumerate(picks):
            original = flat[i]
            flat[i] = original + step
            plus = float(loss_fn().data)
            flat[i] = original - step
            minus = float(loss_fn().data)
            flat[i] = original
            numeric[slot] = (plus - minus) / (2 * step)
        report.errors[name] = relative_error(analytic[name].reshape(-1)[picks], numeric)
    for t in wrt.values():
        t.grad = None
    return report
