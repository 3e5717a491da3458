"""Central finite-difference check of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, OracleError
from .tensorcore import Tensor, backward, no_grad, record_kinks

DENOM_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    n_checked: int
    n_excluded: int


def _evaluate(build_fn, arrays):
    with no_grad(), record_kinks() as kinks:
        out = build_fn(*[Tensor(a) for a in arrays])
    return out.item(), kinks


def _same_branch(k1, k2) -> bool:
    return len(k1) == len(k2) and all(np.array_equal(a, b) for a, b in zip(k1, k2))


def grad_check(
    build_fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients of `build_fn(*tensors)` against central differences.

    Elements whose +h/-h evaluations land on different sides of an L1 or
    smooth-L1 kink are skipped; the subgradient there is a convention, not
    a derivative.
    """
    if not 0 < h <= 1e-2:
        raise DomainError("finite-difference step must lie in (0, 1e-2]")
    arrays = [np.array(a, dtype=np.float64) for a in inputs]

    base, base_kinks = _evaluate(build_fn, arrays)
    again, _ = _evaluate(build_fn, arrays)
    if base != again:
        raise OracleError("build_fn is not deterministic")

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build_fn(*leaves)
    if loss.requires_grad:
        backward(loss)
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

    worst = 0.0
    checked = excluded = 0
    for arr, grad in zip(arrays, analytic):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp, kp = _evaluate(build_fn, arrays)
            flat[i] = orig - h
            fm, km = _evaluate(build_fn, arrays)
            flat[i] = orig
            if not (_same_branch(kp, km) and _same_branch(kp, base_kinks)):
                excluded += 1
                continue
            num = (fp - fm) / (2.0 * h)
            err = abs(num - gflat[i]) / max(abs(num), abs(gflat[i]), DENOM_FLOOR)
            worst = max(worst, err)
            checked += 1
    return GradCheckReport(max_rel_err=worst, passed=worst <= tol, n_checked=checked, n_excluded=excluded)
