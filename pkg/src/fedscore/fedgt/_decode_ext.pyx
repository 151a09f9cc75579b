# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled enumeration kernel for the exact group-testing decoder.

Same contract as ``_decode_py.enumerate_sums``; summation runs over defect
vectors in increasing integer order, so the result does not depend on
anything but the inputs.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, INFINITY

cnp.import_array()


cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


cdef inline double _weight(unsigned long long d, const unsigned long long[::1] masks,
                           const unsigned char[::1] outcomes, const double[::1] loglik,
                           const double[::1] logprior, Py_ssize_t L) nogil:
    cdef Py_ssize_t l
    cdef int mism = 0
    cdef int status
    for l in range(L):
        status = (d & masks[l]) != 0
        if status != outcomes[l]:
            mism += 1
    return loglik[mism] + logprior[__builtin_popcountll(d)]


def enumerate_sums(masks, outcomes, int num_clients, loglik, logprior):
    cdef const unsigned long long[::1] m = np.ascontiguousarray(masks, dtype=np.uint64)
    cdef const unsigned char[::1] t = np.ascontiguousarray(outcomes, dtype=np.uint8)
    cdef const double[::1] ll = np.ascontiguousarray(loglik, dtype=np.float64)
    cdef const double[::1] lp = np.ascontiguousarray(logprior, dtype=np.float64)
    cdef Py_ssize_t L = m.shape[0]
    cdef unsigned long long total = 1ULL << num_clients
    cdef unsigned long long d
    cdef double w, f, wmax = -INFINITY
    cdef int n
    s1_arr = np.zeros(num_clients)
    s0_arr = np.zeros(num_clients)
    cdef double[::1] s1 = s1_arr
    cdef double[::1] s0 = s0_arr
    with nogil:
        for d in range(total):
            w = _weight(d, m, t, ll, lp, L)
            if w > wmax:
                wmax = w
        if wmax != -INFINITY:
            for d in range(total):
                w = _weight(d, m, t, ll, lp, L)
                if w == -INFINITY:
                    continue
                f = exp(w - wmax)
                for n in range(num_clients):
                    if (d >> n) & 1ULL:
                        s1[n] += f
                    else:
                        s0[n] += f
    return wmax, s1_arr, s0_arr
