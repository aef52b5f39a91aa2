"""
Finite-difference oracle for the analytic gradients
"""

import logging
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

SELECTIONS = ("random", "largest")


def finite_diff_grad(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> Tensor:
    """Central differences (f(x + eps e_i) - f(x - eps e_i)) / 2 eps for every element of x"""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x.data = np.ascontiguousarray(x.data)
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            out[i] = _central_difference(lambda: f(x).item(), flat, i, eps)
    return Tensor(grad)


def _central_difference(evaluate: Callable[[], float], flat: np.ndarray, i: int, eps: float) -> float:
    original = flat[i]
    flat[i] = original + eps
    plus = evaluate()
    flat[i] = original - eps
    minus = evaluate()
    flat[i] = original
    return (plus - minus) / (2.0 * eps)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """||a - n|| / max(||a|| + ||n||, floor)

    The floor keeps near-zero gradients from turning rounding noise into a
    large relative error.
    """
    diff = np.linalg.norm(np.ravel(analytic) - np.ravel(numeric))
    scale = max(np.linalg.norm(np.ravel(analytic)) + np.linalg.norm(np.ravel(numeric)), floor)
    return float(diff / scale)


def _pick_indices(
    grad: np.ndarray, samples: Optional[int], select: str, rng: np.random.Generator
) -> Sequence[int]:
    if samples is None or grad.size <= samples:
        return range(grad.size)
    if select == "largest":
        # stable sort so ties resolve to the lowest flat index
        order = np.argsort(-np.abs(grad), kind="stable")[:samples]
        return sorted(order.tolist())
    return sorted(rng.choice(grad.size, size=samples, replace=False).tolist())


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Tuple[str, Tensor]],
    eps: float = 1e-5,
    samples_per_tensor: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    select: str = "random",
    floor: float = 1e-10,
) -> Dict[str, float]:
    """Compare backward() against central differences for every named tensor

    loss_fn rebuilds the scalar loss from the current tensor values. With
    samples_per_tensor set, only that many entries per tensor are perturbed:
    drawn with rng when select is "random", or the entries with the largest
    analytic |grad| when select is "largest". Returns one relative error per
    name, each computed with relative_error(..., floor).
    """
    if select not in SELECTIONS:
        raise ValueError(f"select must be one of {SELECTIONS}, got {select!r}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    named = list(params)
    for _, tensor in named:
        tensor.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for name, t in named}

    rng = rng if rng is not None else np.random.default_rng(0)
    errors: Dict[str, float] = {}
    with no_grad():
        for name, tensor in named:
            tensor.data = np.ascontiguousarray(tensor.data)
            flat = tensor.data.reshape(-1)
            grad = analytic[name].reshape(-1)
            indices = _pick_indices(grad, samples_per_tensor, select, rng)
            numeric = np.array([_central_difference(lambda: loss_fn().item(), flat, i, eps) for i in indices])
            errors[name] = relative_error(grad[list(indices)], numeric, floor)
            logger.debug(f"gradient check {name}: rel err {errors[name]:.3e} over {len(numeric)} entries")
    return errors
