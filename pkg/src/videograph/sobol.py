"""Sobol quasi-random sequence via the Gray-code construction.

Direction numbers come from the classic published Joe-Kuo table (primitive
polynomial plus initial values m_i per dimension), bundled below for the
first 64 dimensions. The all-zero first point of the raw sequence is skipped
so consumers never receive a degenerate sample.
"""

from __future__ import annotations

import numpy as np

_BITS = 32
_SCALE = float(2 ** _BITS)

# (primitive polynomial with leading/trailing coefficient bits, initial m_i)
# per dimension; dimension 1 is the degenerate polynomial with all m_i = 1.
_DIRECTION_TABLE = (
    (1, (1,)),
    (3, (1,)),
    (7, (1, 3)),
    (11, (1, 3, 1)),
    (13, (1, 1, 1)),
    (19, (1, 1, 3, 3)),
    (25, (1, 3, 5, 13)),
    (37, (1, 1, 5, 5, 17)),
    (41, (1, 1, 5, 5, 5)),
    (47, (1, 1, 7, 11, 19)),
    (55, (1, 1, 5, 1, 1)),
    (59, (1, 1, 1, 3, 11)),
    (61, (1, 3, 5, 5, 31)),
    (67, (1, 3, 3, 9, 7, 49)),
    (91, (1, 1, 1, 15, 21, 21)),
    (97, (1, 3, 1, 13, 27, 49)),
    (103, (1, 1, 1, 15, 7, 5)),
    (109, (1, 3, 1, 15, 13, 25)),
    (115, (1, 1, 5, 5, 19, 61)),
    (131, (1, 3, 7, 11, 23, 15, 103)),
    (137, (1, 3, 7, 13, 13, 15, 69)),
    (143, (1, 1, 3, 13, 7, 35, 63)),
    (145, (1, 3, 5, 9, 1, 25, 53)),
    (157, (1, 3, 1, 13, 9, 35, 107)),
    (167, (1, 3, 1, 5, 27, 61, 31)),
    (171, (1, 1, 5, 11, 19, 41, 61)),
    (185, (1, 3, 5, 3, 3, 13, 69)),
    (191, (1, 1, 7, 13, 1, 19, 1)),
    (193, (1, 3, 7, 5, 13, 19, 59)),
    (203, (1, 1, 3, 9, 25, 29, 41)),
    (211, (1, 3, 5, 13, 23, 1, 55)),
    (213, (1, 3, 7, 3, 13, 59, 17)),
    (229, (1, 3, 1, 3, 5, 53, 69)),
    (239, (1, 1, 5, 5, 23, 33, 13)),
    (241, (1, 1, 7, 7, 1, 61, 123)),
    (247, (1, 1, 7, 9, 13, 61, 49)),
    (253, (1, 3, 3, 5, 3, 55, 33)),
    (285, (1, 3, 1, 15, 31, 13, 49, 245)),
    (299, (1, 3, 5, 15, 31, 59, 63, 97)),
    (301, (1, 3, 1, 11, 11, 11, 77, 249)),
    (333, (1, 3, 1, 11, 27, 43, 71, 9)),
    (351, (1, 1, 7, 15, 21, 11, 81, 45)),
    (355, (1, 3, 7, 3, 25, 31, 65, 79)),
    (357, (1, 3, 1, 1, 19, 11, 3, 205)),
    (361, (1, 1, 5, 9, 19, 21, 29, 157)),
    (369, (1, 3, 7, 11, 1, 33, 89, 185)),
    (391, (1, 3, 3, 3, 15, 9, 79, 71)),
    (397, (1, 3, 7, 11, 15, 39, 119, 27)),
    (425, (1, 1, 3, 1, 11, 31, 97, 225)),
    (451, (1, 1, 1, 3, 23, 43, 57, 177)),
    (463, (1, 3, 7, 7, 17, 17, 37, 71)),
    (487, (1, 3, 1, 5, 27, 63, 123, 213)),
    (501, (1, 1, 3, 5, 11, 43, 53, 133)),
    (529, (1, 3, 5, 5, 29, 17, 47, 173, 479)),
    (539, (1, 3, 3, 11, 3, 1, 109, 9, 69)),
    (545, (1, 1, 1, 5, 17, 39, 23, 5, 343)),
    (557, (1, 3, 1, 5, 25, 15, 31, 103, 499)),
    (563, (1, 1, 1, 11, 11, 17, 63, 105, 183)),
    (601, (1, 1, 5, 11, 9, 29, 97, 231, 363)),
    (607, (1, 1, 5, 15, 19, 45, 41, 7, 383)),
    (617, (1, 3, 7, 7, 31, 19, 83, 137, 221)),
    (623, (1, 1, 1, 3, 23, 15, 111, 223, 83)),
    (631, (1, 1, 5, 13, 31, 15, 55, 25, 161)),
    (637, (1, 1, 3, 13, 25, 47, 39, 87, 257)),
)

MAX_DIMENSION = len(_DIRECTION_TABLE)


def _direction_integers(dim_index: int) -> np.ndarray:
    """Direction integers v_k (scaled by 2**_BITS) for one dimension."""
    poly, m_init = _DIRECTION_TABLE[dim_index]
    degree = max(poly.bit_length() - 1, 1)
    m = list(m_init)
    if dim_index == 0:
        m = [1] * _BITS
    else:
        # recurrence over GF(2): m_k = XOR of shifted earlier terms; the
        # interior coefficient a_i is bit (degree - i) of the polynomial
        a = [(poly >> (degree - i)) & 1 for i in range(1, degree)]
        while len(m) < _BITS:
            k = len(m)
            new = m[k - degree] ^ (m[k - degree] << degree)
            for i, coef in enumerate(a, start=1):
                if coef:
                    new ^= m[k - i] << i
            m.append(new)
    return np.array([m[k] << (_BITS - 1 - k) for k in range(_BITS)], dtype=np.uint64)


class SobolSequence:
    """Deterministic low-discrepancy points in [0, 1)**dimension."""

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ValueError(f"dimension must be >= 1, got {dimension}")
        if dimension > MAX_DIMENSION:
            raise ValueError(
                f"dimension {dimension} exceeds the bundled direction-number table ({MAX_DIMENSION})")
        self.dimension = dimension
        self._v = np.stack([_direction_integers(j) for j in range(dimension)])
        self._state = np.zeros(dimension, dtype=np.uint64)
        self._index = 0  # points generated so far, zero point excluded

    def next_point(self) -> np.ndarray:
        """Next point of the sequence; the initial all-zero point is skipped."""
        self._index += 1
        low_bit = (self._index & -self._index).bit_length() - 1
        self._state ^= self._v[:, low_bit]
        return self._state.astype(np.float64) / _SCALE

    def take(self, count: int) -> np.ndarray:
        return np.stack([self.next_point() for _ in range(count)])
