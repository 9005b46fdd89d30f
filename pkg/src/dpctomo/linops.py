"""Matrix-free linear operators with explicit adjoints.

Every operator is a real map between flat float64 vectors and exposes the
pair ``apply`` / ``apply_transpose``.  Operators are immutable after
construction; compositions keep references to their factors, so a product
like ``compose(D, R)`` is applied factor by factor and the product matrix
is never materialized.

``densify`` probes an operator with basis vectors and is the universal
small-instance oracle used throughout the test suite.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def as_vector(x, size: int, what: str = "input") -> np.ndarray:
    """Validate and convert ``x`` to a float64 vector of length ``size``."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != size:
        raise ShapeMismatchError(
            f"{what}: expected a vector of length {size}, got shape {arr.shape}"
        )
    return arr


class LinearOperator:
    """A real ``rows``-by-``cols`` linear map with an explicit transpose map.

    Subclasses implement ``apply`` (forward) and ``apply_transpose``
    (adjoint).  Both must act on 1-D float64 vectors and must satisfy the
    adjoint identity ``<apply(x), y> == <x, apply_transpose(y)>`` up to
    rounding; the test suite checks this for every operator type.

    Instances hold no mutable state after construction, so a single
    operator may be applied concurrently from multiple threads.
    """

    def __init__(self, rows: int, cols: int):
        rows, cols = int(rows), int(cols)
        if rows < 1 or cols < 1:
            raise ValueError(f"operator shape must be positive, got ({rows}, {cols})")
        self._rows = rows
        self._cols = cols

    @property
    def rows(self) -> int:
        return self._rows

    @property
    def cols(self) -> int:
        return self._cols

    @property
    def shape(self) -> tuple[int, int]:
        return self._rows, self._cols

    def apply(self, x) -> np.ndarray:
        raise NotImplementedError

    def apply_transpose(self, y) -> np.ndarray:
        raise NotImplementedError

    def __matmul__(self, x):
        return self.apply(x)

    def __repr__(self):
        return f"<{type(self).__name__} {self._rows}x{self._cols}>"


class IdentityOperator(LinearOperator):
    def __init__(self, n: int):
        super().__init__(n, n)

    def apply(self, x):
        return as_vector(x, self.cols, repr(self)).copy()

    def apply_transpose(self, y):
        return as_vector(y, self.rows, repr(self)).copy()


class MatrixOperator(LinearOperator):
    """Dense matrix wrapped as an operator (row-major float64 storage)."""

    def __init__(self, matrix):
        a = np.array(matrix, dtype=np.float64, order="C", copy=True)
        if a.ndim != 2:
            raise ValueError(f"expected a 2-D matrix, got ndim={a.ndim}")
        a.setflags(write=False)
        super().__init__(a.shape[0], a.shape[1])
        self.matrix = a

    def apply(self, x):
        return self.matrix @ as_vector(x, self.cols, repr(self))

    def apply_transpose(self, y):
        return self.matrix.T @ as_vector(y, self.rows, repr(self))


class ComposedOperator(LinearOperator):
    """Product ``left @ right``, applied factor by factor."""

    def __init__(self, left: LinearOperator, right: LinearOperator):
        if left.cols != right.rows:
            raise ShapeMismatchError(
                f"cannot compose {left!r} with {right!r}: "
                f"inner dimensions {left.cols} != {right.rows}"
            )
        super().__init__(left.rows, right.cols)
        self.left = left
        self.right = right

    def apply(self, x):
        return self.left.apply(self.right.apply(x))

    def apply_transpose(self, y):
        return self.right.apply_transpose(self.left.apply_transpose(y))


class KronBlockOperator(LinearOperator):
    """Kronecker product of an ``l``-fold identity with a square block.

    Applies the ``k``-by-``k`` block independently to each of ``l``
    contiguous length-``k`` segments of the input vector.
    """

    def __init__(self, block, l: int):
        b = np.array(block, dtype=np.float64, order="C", copy=True)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValueError(f"block must be square, got shape {b.shape}")
        if int(l) < 1:
            raise ValueError(f"number of blocks must be >= 1, got {l}")
        b.setflags(write=False)
        k = b.shape[0]
        super().__init__(k * int(l), k * int(l))
        self.block = b
        self.k = k
        self.l = int(l)

    def apply(self, x):
        segs = as_vector(x, self.cols, repr(self)).reshape(self.l, self.k)
        return (segs @ self.block.T).ravel()

    def apply_transpose(self, y):
        segs = as_vector(y, self.rows, repr(self)).reshape(self.l, self.k)
        return (segs @ self.block).ravel()


def compose(left: LinearOperator, right: LinearOperator) -> ComposedOperator:
    """Operator product with shape check; raises ShapeMismatchError on mismatch."""
    return ComposedOperator(left, right)


def kron_identity_blocks(block, l: int) -> KronBlockOperator:
    """Blockwise operator applying ``block`` to each of ``l`` segments."""
    return KronBlockOperator(block, l)


def densify(op: LinearOperator) -> np.ndarray:
    """Materialize an operator column by column with basis-vector probes."""
    cols = np.empty((op.rows, op.cols))
    e = np.zeros(op.cols)
    for j in range(op.cols):
        e[j] = 1.0
        cols[:, j] = op.apply(e)
        e[j] = 0.0
    return cols
