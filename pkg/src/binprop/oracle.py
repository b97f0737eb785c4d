"""Slow reference implementations on plain +/-1 integers.

Nothing here touches the packed kernels: vectors are lists or int arrays of
+/-1 and every product is an explicit loop or an exhaustive enumeration.
Tests compare the packed paths against these.
"""

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

MAX_ENUMERATION_COLUMNS = 20
_ENUMERATION_CHUNK = 1 << 16
_GRID_POINT_LIMIT = 250_000


def _ints(values) -> List[int]:
    return [int(v) for v in values]


def _matrix(values) -> List[List[int]]:
    return [_ints(row) for row in values]


def sign(z: int) -> int:
    return 1 if z >= 0 else -1


def naive_dot(a, b) -> int:
    a, b = _ints(a), _ints(b)
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} != {len(b)}")
    total = 0
    for x, y in zip(a, b):
        total += x * y
    return total


def naive_matvec(W, a) -> List[int]:
    return [naive_dot(row, a) for row in _matrix(W)]


def naive_gated_transpose(W, g, b) -> List[int]:
    """``v_j = sum_i g_i b_i W_ij`` with ``g`` in {0, 1}."""
    W, g, b = _matrix(W), _ints(g), _ints(b)
    if not (len(W) == len(g) == len(b)):
        raise ValueError("W rows, gate and target lengths differ")
    cols = len(W[0]) if W else 0
    out = [0] * cols
    for i, row in enumerate(W):
        if g[i]:
            for j in range(cols):
                out[j] += b[i] * row[j]
    return out


def naive_outer(u, v) -> List[List[int]]:
    return [[x * y for y in _ints(v)] for x in _ints(u)]


def gated_objective(W, g, b, a) -> int:
    """``<b, W a>_g = sum_i g_i b_i (W a)_i``."""
    z = naive_matvec(W, a)
    return sum(gi * bi * zi for gi, bi, zi in zip(_ints(g), _ints(b), z))


def _vertices(start: int, stop: int, k: int) -> np.ndarray:
    index = np.arange(start, stop, dtype=np.int64)
    return ((index[:, None] >> np.arange(k)) & 1).astype(np.int64) * 2 - 1


def exhaustive_argmax_gated(W, g, b) -> Tuple[int, np.ndarray]:
    """Maximum of the gated objective over all 2^K_a vertices, and every maximizer.

    Maximizers come back as rows of a +/-1 array, in enumeration order.
    """
    W = np.asarray(W, dtype=np.int64)
    k = W.shape[1]
    if k > MAX_ENUMERATION_COLUMNS:
        raise ValueError(f"{k} columns exceed the enumeration bound of {MAX_ENUMERATION_COLUMNS}")
    weights = np.asarray(g, dtype=np.int64) * np.asarray(b, dtype=np.int64)

    best = None
    winners: List[np.ndarray] = []
    for start in range(0, 1 << k, _ENUMERATION_CHUNK):
        a = _vertices(start, min(start + _ENUMERATION_CHUNK, 1 << k), k)
        values = (a @ W.T) @ weights
        top = int(values.max())
        if best is None or top > best:
            best, winners = top, []
        if top == best:
            winners.append(a[values == best])
    return best, np.concatenate(winners)


def is_maximizer(a, maximizers: np.ndarray) -> bool:
    return bool(np.any(np.all(maximizers == np.asarray(a, dtype=np.int64), axis=1)))


def _visible(H) -> List[List[int]]:
    return [[1 if h >= 0 else -1 for h in row] for row in _matrix(H)]


@dataclass
class NaiveTrace:
    pre: List[List[int]] = field(default_factory=list)
    activations: List[List[int]] = field(default_factory=list)
    logits: List[int] = field(default_factory=list)


def naive_forward(hidden: Sequence, prototypes, a0) -> NaiveTrace:
    """Feedforward pass from hidden weight matrices, one sample, element by element."""
    trace = NaiveTrace()
    a = _ints(a0)
    for H in hidden:
        z = naive_matvec(_visible(H), a)
        a = [sign(v) for v in z]
        trace.pre.append(z)
        trace.activations.append(a)
    trace.logits = naive_matvec(prototypes, a)
    return trace


@dataclass
class NaiveRnnTrace:
    pre: List[List[int]] = field(default_factory=list)
    states: List[List[int]] = field(default_factory=list)
    z_y: List[int] = field(default_factory=list)
    s_y: List[int] = field(default_factory=list)
    logits: List[int] = field(default_factory=list)


def naive_rnn_forward(H_xs, H_ss, H_sy, prototypes, sequence) -> NaiveRnnTrace:
    """Recurrent pass from the all-+1 state, one sample, element by element."""
    W_xs, W_ss, W_sy = _visible(H_xs), _visible(H_ss), _visible(H_sy)
    trace = NaiveRnnTrace()
    s = [1] * len(W_ss)
    for a in sequence:
        x_part = naive_matvec(W_xs, a)
        s_part = naive_matvec(W_ss, s)
        z = [p + q for p, q in zip(x_part, s_part)]
        s = [sign(v) for v in z]
        trace.pre.append(z)
        trace.states.append(s)
    trace.z_y = naive_matvec(W_sy, s)
    trace.s_y = [sign(v) for v in trace.z_y]
    trace.logits = naive_matvec(prototypes, trace.s_y)
    return trace


def naive_temporal_update(targets: Sequence, inputs: Sequence, mask) -> List[List[int]]:
    """``M * sum_t s*_t x_t^T`` for one sample, masking after the temporal sum."""
    total = None
    for s_star, x in zip(targets, inputs):
        outer = naive_outer(s_star, x)
        total = outer if total is None else [[p + q for p, q in zip(r, o)] for r, o in zip(total, outer)]
    return [[v if m else 0 for v in row] for row, m in zip(total, _ints(mask))]


@dataclass
class CorrectnessCheck:
    ok: bool
    details: List[str] = field(default_factory=list)


def check_local_correctness(H_before, H_after, a_prev, a_star_j: int, j: int, bound: int) -> CorrectnessCheck:
    """Check the exact effect of one winner update on row ``j``.

    The hidden alignment ``a*_j (H_j . a_prev)`` must grow by exactly
    ``2 * fan_in`` and every entry must move by ``2 a*_j a_prev_i``.
    """
    before = _ints(np.asarray(H_before)[j])
    after = _ints(np.asarray(H_after)[j])
    a_prev = _ints(a_prev)
    if any(abs(h) >= bound for h in after):
        raise ValueError(f"row {j} touched the saturation bound; the check does not apply")

    details = []
    u, u_new = naive_dot(before, a_prev), naive_dot(after, a_prev)
    if a_star_j * u_new - a_star_j * u != 2 * len(a_prev):
        details.append(f"alignment moved {a_star_j * (u_new - u)}, expected {2 * len(a_prev)}")
    for i, (h, h_new, x) in enumerate(zip(before, after, a_prev)):
        if h_new - h != 2 * a_star_j * x:
            details.append(f"entry ({j}, {i}) moved {h_new - h}, expected {2 * a_star_j * x}")
    return CorrectnessCheck(not details, details)


def relaxation_integrality_check(W, g, b, resolution: float = 0.1) -> bool:
    """True when no point of a grid over [-1, 1]^K beats the best vertex.

    When every coordinate of ``W^T (g * b)`` is nonzero, a grid point may only
    tie the optimum if it is itself a vertex. Large grids fall back to an
    exact per-coordinate maximum, which is valid because the objective is linear.
    """
    W = np.asarray(W, dtype=np.int64)
    k = W.shape[1]
    best, _ = exhaustive_argmax_gated(W, g, b)
    v = np.array(naive_gated_transpose(W, g, b), dtype=np.float64)
    axis = np.linspace(-1.0, 1.0, int(round(2 / resolution)) + 1)
    strict = bool(np.all(v != 0))
    tol = 1e-9

    if axis.size ** k <= _GRID_POINT_LIMIT:
        grid = np.stack(np.meshgrid(*([axis] * k), indexing="ij"), axis=-1).reshape(-1, k)
        values = grid @ v
        if np.any(values > best + tol):
            return False
        if strict:
            ties = grid[values >= best - tol]
            return bool(np.all(np.isclose(np.abs(ties), 1.0)))
        return True

    per_coordinate = np.outer(v, axis)
    top = per_coordinate.max(axis=1)
    if top.sum() > best + tol:
        return False
    if strict:
        for j in range(k):
            arg = axis[np.isclose(per_coordinate[j], top[j])]
            if not np.all(np.isclose(np.abs(arg), 1.0)):
                return False
    return True
