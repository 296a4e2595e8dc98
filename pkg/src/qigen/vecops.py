"""Named vector-operation layer used by generated kernels.

Each operation models one SIMD instruction over an 8-lane register of
32-bit elements, represented as a plain 8-tuple so Numba lowers it to SSA
values (and LLVM packs them into vector registers).  The same functions run
interpreted when Numba is unavailable, trading speed for portability.

Core vocabulary: ``vload``/``vstore`` (memory), ``vbroadcast`` (splat a
scalar), ``vfmadd`` (``a*b + c``), ``vreduce_add`` (horizontal sum),
``vsrli``/``vand`` (code extraction), ``vcvt_int_float``.  ``vslli`` and
``vor`` extend the set for reassembling 3-bit codes that straddle a word
boundary.
"""

from __future__ import annotations

import numpy as np

LANES = 8

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False


def _vload(buf, i):
    return (buf[i], buf[i + 1], buf[i + 2], buf[i + 3],
            buf[i + 4], buf[i + 5], buf[i + 6], buf[i + 7])


def _vstore(buf, i, a):
    buf[i] = a[0]
    buf[i + 1] = a[1]
    buf[i + 2] = a[2]
    buf[i + 3] = a[3]
    buf[i + 4] = a[4]
    buf[i + 5] = a[5]
    buf[i + 6] = a[6]
    buf[i + 7] = a[7]


def _vbroadcast(s):
    return (s, s, s, s, s, s, s, s)


def _vfmadd(a, b, c):
    return (a[0] * b[0] + c[0], a[1] * b[1] + c[1],
            a[2] * b[2] + c[2], a[3] * b[3] + c[3],
            a[4] * b[4] + c[4], a[5] * b[5] + c[5],
            a[6] * b[6] + c[6], a[7] * b[7] + c[7])


def _vreduce_add(a):
    return ((((((a[0] + a[1]) + a[2]) + a[3]) + a[4]) + a[5]) + a[6]) + a[7]


def _vsrli(a, i):
    s = np.uint32(i)
    return (a[0] >> s, a[1] >> s, a[2] >> s, a[3] >> s,
            a[4] >> s, a[5] >> s, a[6] >> s, a[7] >> s)


def _vslli(a, i):
    s = np.uint32(i)
    return (a[0] << s, a[1] << s, a[2] << s, a[3] << s,
            a[4] << s, a[5] << s, a[6] << s, a[7] << s)


def _vand(a, m):
    mm = np.uint32(m)
    return (a[0] & mm, a[1] & mm, a[2] & mm, a[3] & mm,
            a[4] & mm, a[5] & mm, a[6] & mm, a[7] & mm)


def _vor(a, b):
    return (a[0] | b[0], a[1] | b[1], a[2] | b[2], a[3] | b[3],
            a[4] | b[4], a[5] | b[5], a[6] | b[6], a[7] | b[7])


def _vcvt_int_float(a):
    return (np.float32(a[0]), np.float32(a[1]), np.float32(a[2]),
            np.float32(a[3]), np.float32(a[4]), np.float32(a[5]),
            np.float32(a[6]), np.float32(a[7]))


if HAVE_NUMBA:
    _inline = numba.njit(inline="always")
    vload = _inline(_vload)
    vstore = _inline(_vstore)
    vbroadcast = _inline(_vbroadcast)
    vfmadd = _inline(_vfmadd)
    vreduce_add = _inline(_vreduce_add)
    vsrli = _inline(_vsrli)
    vslli = _inline(_vslli)
    vand = _inline(_vand)
    vor = _inline(_vor)
    vcvt_int_float = _inline(_vcvt_int_float)

    def jit_kernel(fn):
        """Compile a generated kernel entry point to native code."""
        return numba.njit(nogil=True)(fn)
else:  # pragma: no cover - exercised only without numba
    vload = _vload
    vstore = _vstore
    vbroadcast = _vbroadcast
    vfmadd = _vfmadd
    vreduce_add = _vreduce_add
    vsrli = _vsrli
    vslli = _vslli
    vand = _vand
    vor = _vor
    vcvt_int_float = _vcvt_int_float

    def jit_kernel(fn):
        return fn
