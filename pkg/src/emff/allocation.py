"""Closed-form amplitude pairs that realise a prescribed dipole force term.

Given ``r`` and a target ``f_star``, :func:`amplitude_pair` returns ``(c1, c2)``
with ``dipole_force_f(r, c1, c2) == f_star``.  The pair is built in a frame whose
first axis is ``r/|r|`` and whose first two axes span ``{r, f_star}``.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .amff import AmplitudeSet
from .model import DomainError, FormationState, pair_distances, pair_index

_DEGENERATE = 1e-12


class AllocationResult(NamedTuple):
    c1: np.ndarray
    c2: np.ndarray


def _frame(e1: np.ndarray, f: np.ndarray, cross: np.ndarray, phi2: float, fn: float) -> np.ndarray:
    if phi2 > _DEGENERATE * fn:
        e2 = f - (f @ e1) * e1
        e2 /= np.linalg.norm(e2)
        return np.array([e1, e2, cross / np.linalg.norm(cross)])
    # f_star parallel to r: a_y = b_y = 0, any orthonormal completion works
    axis = np.zeros(3)
    axis[np.argmin(np.abs(e1))] = 1.0
    e2 = axis - (axis @ e1) * e1
    e2 /= np.linalg.norm(e2)
    return np.array([e1, e2, np.cross(e1, e2)])


def amplitude_pair(r, f_star) -> AllocationResult:
    r = np.asarray(r, dtype=float)
    f = np.asarray(f_star, dtype=float)
    rn = float(np.linalg.norm(r))
    if rn <= 0.0:
        raise DomainError("allocation undefined at r = 0")
    fn = float(np.linalg.norm(f))
    if fn == 0.0:
        return AllocationResult(np.zeros(3), np.zeros(3))

    # everything below is divided through by |r|: s = r.f/|r|, phi_k/|r|
    e1 = r / rn
    s = float(e1 @ f)
    cross = np.cross(e1, f)
    phi2 = float(np.linalg.norm(cross))  # |r|^2|f|^2 - (r.f)^2 = |r x f|^2
    phi1 = float(np.sqrt(fn * fn + phi2 * phi2))
    sg = float(np.sign(s))
    sg2 = 1.0 if phi2 > 0.0 else 0.0
    if sg != 0.0:
        phi3 = phi1
        gap1 = gap3 = 2.0 * phi2 * phi2 / (phi1 + abs(s))  # phi - |s| without cancellation
    else:
        phi3 = 2.0 * np.sqrt(2.0) * fn
        gap1, gap3 = phi1, phi3

    ax = -0.5 * sg * np.sqrt(abs(s) + phi1)
    ay = sg2 / np.sqrt(2.0) * np.sqrt(gap3)
    bx = 0.5 * np.sqrt(abs(s) + phi3)
    by = -sg * sg2 / np.sqrt(2.0) * np.sqrt(gap1)

    rot = _frame(e1, f, cross, phi2, fn)
    return AllocationResult(rot.T @ np.array([ax, ay, 0.0]), rot.T @ np.array([bx, by, 0.0]))


def allocate_all(state: FormationState, nu) -> AmplitudeSet:
    """Amplitudes for every ordered pair from the per-pair force targets.

    For the stored pair ``(i, j), i < j`` with target ``f_ij`` on ``r_ij``, the
    lower-index satellite drives ``c1`` and the higher-index one ``c2``, so
    ``dipole_force_f(r_ij, p_ij, p_ji) == f_ij``.
    """
    idx = pair_index(state.n)
    nu = np.asarray(nu, dtype=float).reshape(len(idx), 3)
    pair_distances(state)
    rel, _ = state.relative()
    p = np.zeros((state.n, state.n, 3))
    for k, (i, j) in enumerate(idx.pairs):
        p[i, j], p[j, i] = amplitude_pair(rel[k], nu[k])
    return AmplitudeSet(p)


def psi(r, f_star, eps1: float, eps2: float) -> float:
    """Smooth upper bound on the squared amplitude norms of the pair."""
    r = np.asarray(r, dtype=float)
    f = np.asarray(f_star, dtype=float)
    rn = np.linalg.norm(r, axis=-1)
    if np.any(rn <= 0.0):
        raise DomainError("psi undefined at r = 0")
    if eps1 <= 0 or eps2 <= 0:
        raise ValueError("eps1 and eps2 must be positive")
    s = np.sum(r * f, axis=-1) / rn
    # sqrt(2|r|^2|f|^2 - (r.f)^2 + eps2 |r|^2) / |r|, with the |r| divided through
    root = np.sqrt(np.maximum(2.0 * np.sum(f * f, axis=-1) - s * s, 0.0) + eps2)
    return -0.25 * s * np.tanh(s / eps1) + root


def psi_gradients(r: np.ndarray, f: np.ndarray, eps1: float, eps2: float):
    """Value of ``psi`` and its partials w.r.t. ``r`` and ``f`` (row-wise for (P, 3) inputs)."""
    rn = np.linalg.norm(r, axis=-1, keepdims=True)
    s = np.sum(r * f, axis=-1, keepdims=True) / rn
    root = np.sqrt(np.maximum(2.0 * np.sum(f * f, axis=-1, keepdims=True) - s * s, 0.0) + eps2)
    th = np.tanh(s / eps1)
    value = -0.25 * s * th + root
    dpsi_ds = -0.25 * (th + (s / eps1) * (1.0 - th * th)) - s / root
    ds_dr = f / rn - s * r / rn**2
    ds_df = r / rn
    grad_r = dpsi_ds * ds_dr
    grad_f = dpsi_ds * ds_df + 2.0 * f / root
    return value[..., 0], grad_r, grad_f
