"""Assignment matrices: construction, privacy check and text serialization.

An assignment matrix ``A`` is an ``L x N`` 0/1 matrix; row ``l`` lists the
clients aggregated together in test group ``l``. The server only ever sees
group aggregates, so the matrix must not let any single client's model be
recovered as a linear combination of group aggregates. Equivalently, no
standard basis vector ``e_n`` may lie in the rational row space of ``A``.
"""

from __future__ import annotations

import io
from fractions import Fraction

import numpy as np

from .. import _rng
from ..errors import ConfigurationError, ConstructionError

MAX_ATTEMPTS = 10_000


def rref(A):
    """Reduced row echelon form of an integer matrix over the rationals.

    Returns ``(rows, pivots)`` where ``rows`` holds the nonzero rows as lists
    of :class:`fractions.Fraction`.
    """
    M = [[Fraction(int(v)) for v in row] for row in np.asarray(A)]
    n_rows = len(M)
    n_cols = len(M[0]) if M else 0
    pivots = []
    r = 0
    for c in range(n_cols):
        p = next((i for i in range(r, n_rows) if M[i][c] != 0), None)
        if p is None:
            continue
        M[r], M[p] = M[p], M[r]
        inv = 1 / M[r][c]
        M[r] = [v * inv for v in M[r]]
        for i in range(n_rows):
            if i != r and M[i][c] != 0:
                f = M[i][c]
                M[i] = [a - f * b for a, b in zip(M[i], M[r])]
        pivots.append(c)
        r += 1
        if r == n_rows:
            break
    return M[:r], pivots


def isolated_clients(A):
    """Clients ``n`` whose basis vector ``e_n`` lies in the row space of ``A``.

    With ``A`` in reduced row echelon form, ``e_n`` is in the row space iff
    some reduced row equals ``e_n``: a non-pivot ``n`` gives all-zero
    coefficients, and a pivot ``n`` forces the coefficient vector to select
    exactly the row carrying that pivot.
    """
    rows, pivots = rref(A)
    return [p for row, p in zip(rows, pivots) if sum(1 for v in row if v != 0) == 1]


def privacy_ok(A):
    return not isolated_clients(A)


def validate(A, k=None, check_privacy=True):
    """Return a list of human-readable problems; empty means valid."""
    A = np.asarray(A)
    problems = []
    if A.ndim != 2 or A.size == 0:
        return ["matrix must be a nonempty 2-D array"]
    if not np.isin(A, (0, 1)).all():
        return ["entries must be 0 or 1"]
    if k is not None and not np.all(A.sum(axis=1) == k):
        problems.append(f"row weights differ from k={k}")
    uncovered = np.flatnonzero(A.sum(axis=0) == 0)
    if uncovered.size:
        problems.append(f"clients {uncovered.tolist()} are in no group")
    if len({row.tobytes() for row in A.astype(np.int8)}) != A.shape[0]:
        problems.append("duplicate rows")
    if check_privacy:
        iso = isolated_clients(A)
        if iso:
            problems.append(f"row space isolates clients {iso}")
    return problems


def build_assignment(N, L, k, seed, strategy="prefixed", round_index=0, max_attempts=MAX_ATTEMPTS):
    """Rejection-sample an ``L x N`` matrix with row weight ``k``.

    ``strategy="same"`` ignores ``round_index`` so every round gets the same
    matrix; ``"prefixed"`` derives an independent matrix per round index.
    Candidates must cover every client, have distinct rows and pass
    :func:`privacy_ok`.
    """
    if strategy not in ("same", "prefixed"):
        raise ConfigurationError(f"unknown matrix strategy {strategy!r}")
    if not 2 <= k < N:
        raise ConfigurationError(f"group size k={k} must satisfy 2 <= k < N={N}")
    if L * k < N:
        raise ConfigurationError(f"L*k={L * k} cannot cover N={N} clients")
    rng = _rng.derive_rng(seed, _rng.MATRIX, round_index if strategy == "prefixed" else 0)
    for _ in range(max_attempts):
        A = np.zeros((L, N), dtype=np.int8)
        for row in A:
            row[rng.choice(N, size=k, replace=False)] = 1
        if not validate(A, k):
            return A
    raise ConstructionError(
        f"no valid {L}x{N} assignment matrix with k={k} after {max_attempts} attempts"
    )


def dumps(A):
    A = np.asarray(A)
    ks = set(A.sum(axis=1).tolist())
    k = ks.pop() if len(ks) == 1 else 0
    buf = io.StringIO()
    buf.write(f"{A.shape[0]} {A.shape[1]} {k}\n")
    for row in A:
        buf.write(" ".join(str(int(v)) for v in row) + "\n")
    return buf.getvalue()


def loads(text):
    """Parse ``"L N k"`` followed by ``L`` rows of ``N`` space-separated bits.

    ``k`` may be 0 for matrices with unequal row weights.
    """
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not lines or len(lines[0]) != 3:
        raise ConfigurationError("first line must be 'L N k'")
    try:
        L, N, k = (int(v) for v in lines[0])
        A = np.array([[int(v) for v in ln] for ln in lines[1:]], dtype=np.int8)
    except ValueError as exc:
        raise ConfigurationError(f"malformed matrix file: {exc}") from None
    if A.shape != (L, N):
        raise ConfigurationError(f"header says {L}x{N}, body is {A.shape[0]}x{A.shape[1] if A.ndim == 2 else 0}")
    if not np.isin(A, (0, 1)).all():
        raise ConfigurationError("entries must be 0 or 1")
    if k and not np.all(A.sum(axis=1) == k):
        raise ConfigurationError(f"row weights do not match k={k}")
    return A


def read(path):
    with open(path) as fh:
        return loads(fh.read())


def write(path, A):
    with open(path, "w") as fh:
        fh.write(dumps(A))


# three overlapping groups over five clients; passes every check
FIVE_CLIENT_EXAMPLE = np.array([[1, 0, 1, 1, 0],
                                [0, 1, 0, 1, 1],
                                [1, 0, 0, 1, 1]], dtype=np.int8)
