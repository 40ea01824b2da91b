"""Coupled Newton-Schulz square-root iteration and its reverse-mode gradient.

Forward: pre-normalize P by its trace so the iteration converges, run the
coupled updates

    Y_k = 0.5 * Y_{k-1} (3I - Z_{k-1} Y_{k-1})
    Z_k = 0.5 * (3I - Z_{k-1} Y_{k-1}) Z_{k-1}

from Y_0 = A = P / tr(P), Z_0 = I, and post-compensate Q = sqrt(tr(P)) Y_N.

Backward: reverse-mode product rule through every iteration, then compose
the trace pre-normalization and post-compensation terms. The per-iteration
recursions are derived mechanically from the two update equations:

    dY_{k-1} = 1.5 dY_k - 0.5 (dY_k Y^T Z^T + Z^T Y^T dY_k + Z^T dZ_k Z^T)
    dZ_{k-1} = 1.5 dZ_k - 0.5 (dZ_k Z^T Y^T + Y^T Z^T dZ_k + Y^T dY_k Y^T)

with Y = Y_{k-1}, Z = Z_{k-1}. Validated against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import FeatureMatrix, SymPsdMatrix, apply_centering
from .errors import DomainError, InvalidInputError, NumericalFailureError

DEFAULT_ITERATIONS = 5

_DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class NewtonSchulzTrace:
    """Everything the backward pass needs: both iterate sequences and tr(P)."""

    y_seq: tuple = field()
    z_seq: tuple = field()
    trace_p: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.y_seq) - 1

    @property
    def d(self) -> int:
        return self.y_seq[0].shape[0]

    @property
    def normalized_input(self) -> np.ndarray:
        return self.y_seq[0]

    @property
    def final_y(self) -> np.ndarray:
        return self.y_seq[-1]


def ns_forward(p: SymPsdMatrix, iterations: int) -> tuple[SymPsdMatrix, NewtonSchulzTrace]:
    """Approximate principal square root of ``p`` with the full iterate trace.

    Raises:
        DomainError: tr(P) <= 0, so the pre-normalization is undefined.
        NumericalFailureError: an iterate exceeded the divergence guard.
    """
    if iterations < 1:
        raise InvalidInputError(f"need at least one iteration, got {iterations}")
    trace_p = p.trace()
    if trace_p <= 0.0:
        raise DomainError(f"trace pre-normalization needs tr(P) > 0, got {trace_p:.3e}")
    d = p.d
    a = p.data / trace_p
    # any PSD input with unit trace satisfies ||A - I||_F <= sqrt(d); a
    # violation means an indefinite matrix slipped past construction
    if np.linalg.norm(a - np.eye(d)) >= np.sqrt(d) + 1.0:
        raise DomainError("trace-normalized input is too far from identity to be PSD")
    eye3 = 3.0 * np.eye(d, dtype=a.dtype)

    y = a.copy()
    z = np.eye(d, dtype=a.dtype)
    y_seq = [y]
    z_seq = [z]
    for k in range(iterations):
        t = 0.5 * (eye3 - z @ y)
        y = y @ t
        z = t @ z
        if np.abs(y).max() > _DIVERGENCE_LIMIT or not np.all(np.isfinite(y)):
            raise NumericalFailureError(
                f"Newton-Schulz iterate diverged at step {k + 1}",
                step=k + 1,
                max_entry=float(np.abs(y).max()),
            )
        y_seq.append(y)
        z_seq.append(z)

    q = np.sqrt(trace_p) * y_seq[-1]
    trace = NewtonSchulzTrace(tuple(y_seq), tuple(z_seq), trace_p)
    return SymPsdMatrix(0.5 * (q + q.T)), trace


def ns_backward(trace: NewtonSchulzTrace, grad_q: np.ndarray) -> np.ndarray:
    """Gradient of a scalar loss with respect to P, given its gradient at Q.

    Reverse-propagates through every iteration of the trace, then adds the
    trace-normalization term -(1/tr(P)^2) tr(dA^T P) I + (1/tr(P)) dA and the
    post-compensation term (1/(2 sqrt(tr(P)))) tr(dQ^T Y_N) I.
    """
    grad_q = np.asarray(grad_q, dtype=np.float64)
    d = trace.d
    if grad_q.shape != (d, d):
        raise InvalidInputError(
            f"gradient shape {grad_q.shape} does not match trace dimension {d}"
        )
    t = trace.trace_p
    sqrt_t = np.sqrt(t)

    dy = sqrt_t * grad_q
    dz = np.zeros((d, d))
    for k in range(trace.iterations, 0, -1):
        y = trace.y_seq[k - 1]
        z = trace.z_seq[k - 1]
        yt = y.T
        zt = z.T
        dy_next = 1.5 * dy - 0.5 * (dy @ yt @ zt + zt @ yt @ dy + zt @ dz @ zt)
        dz_next = 1.5 * dz - 0.5 * (dz @ zt @ yt + yt @ zt @ dz + yt @ dy @ yt)
        dy, dz = dy_next, dz_next
    da = dy  # Y_0 = A; Z_0 = I is constant so dz is dropped

    # d tr(P) contributions from A = P / tr(P) and Q = sqrt(tr(P)) Y_N
    p = trace.normalized_input * t
    trace_term = -np.sum(da * p) / (t * t) + np.sum(grad_q * trace.final_y) / (2.0 * sqrt_t)
    return da / t + trace_term * np.eye(d)


def ns_gradient_of_x(grad_p: np.ndarray, x: FeatureMatrix) -> np.ndarray:
    """Chain the covariance gradient back to the features: (G + G^T) X Ibar."""
    grad_p = np.asarray(grad_p, dtype=np.float64)
    d = x.d
    if grad_p.shape != (d, d):
        raise InvalidInputError(
            f"covariance gradient shape {grad_p.shape} does not match d={d}"
        )
    return apply_centering((grad_p + grad_p.T) @ x.data)
