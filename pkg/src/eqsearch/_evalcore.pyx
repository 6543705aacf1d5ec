# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled evaluation kernel.

Row-major loop over the dataset with a fixed-size value stack per row.
Opcode numbering, failure codes, and the overflow limit must stay in sync
with `_evalpy`, which is the reference implementation.
"""

from libc.math cimport cos, exp, fabs, isnan, log, sin

import numpy as np

cimport numpy as cnp

cnp.import_array()

DEF STACK_SIZE = 128

cdef enum:
    OP_PUSH_VAR = 0
    OP_PUSH_CONST = 1
    OP_PUSH_LIT = 2
    OP_ADD = 3
    OP_SUB = 4
    OP_MUL = 5
    OP_DIV = 6
    OP_SIN = 7
    OP_COS = 8
    OP_LOG = 9
    OP_POW_INT = 10
    OP_POW_GEN = 11

cdef enum:
    FAIL_OK = 0
    FAIL_LOG_DOMAIN = 1
    FAIL_DIV_ZERO = 2
    FAIL_POW_DOMAIN = 3
    FAIL_OVERFLOW = 4
    FAIL_NONFINITE = 5

cdef double OVERFLOW_LIMIT = 1e300


def execute(cnp.int64_t[::1] codes, cnp.int64_t[::1] iargs,
            double[::1] dargs, double[:, ::1] xs, double[::1] constants):
    """Run one program over all rows of `xs`.

    Returns (y, fail_row, fail_code); the reported row is the lowest-index
    failing row and the code is the first opcode that failed it.
    """
    cdef Py_ssize_t n_rows = xs.shape[0]
    cdef Py_ssize_t n_ops = codes.shape[0]
    cdef cnp.ndarray[double, ndim=1] y = np.empty(n_rows, dtype=np.float64)
    cdef double[::1] yv = y
    cdef double stack[STACK_SIZE]
    cdef Py_ssize_t row, pc, sp, k
    cdef long op, iarg, e
    cdef double a, b, v
    cdef int code

    if n_ops > STACK_SIZE:
        raise ValueError("program too long for the fixed evaluation stack")

    for row in range(n_rows):
        sp = 0
        code = FAIL_OK
        for pc in range(n_ops):
            op = codes[pc]
            iarg = iargs[pc]
            if op == OP_PUSH_VAR:
                v = xs[row, iarg]
            elif op == OP_PUSH_CONST:
                v = constants[iarg]
            elif op == OP_PUSH_LIT:
                v = dargs[pc]
            elif op == OP_ADD:
                sp -= 2
                v = stack[sp] + stack[sp + 1]
            elif op == OP_SUB:
                sp -= 2
                v = stack[sp] - stack[sp + 1]
            elif op == OP_MUL:
                sp -= 2
                v = stack[sp] * stack[sp + 1]
            elif op == OP_DIV:
                sp -= 2
                a = stack[sp]
                b = stack[sp + 1]
                if b == 0.0:
                    code = FAIL_DIV_ZERO
                    break
                v = a / b
            elif op == OP_SIN:
                sp -= 1
                v = sin(stack[sp])
            elif op == OP_COS:
                sp -= 1
                v = cos(stack[sp])
            elif op == OP_LOG:
                sp -= 1
                a = stack[sp]
                if a <= 0.0:
                    code = FAIL_LOG_DOMAIN
                    break
                v = log(a)
            elif op == OP_POW_INT:
                sp -= 1
                b = stack[sp]
                e = iarg
                v = 1.0
                if e < 0:
                    e = -e
                for k in range(e):
                    v = v * b
                if iarg < 0:
                    if b == 0.0:
                        code = FAIL_POW_DOMAIN
                        break
                    v = 1.0 / v
            elif op == OP_POW_GEN:
                sp -= 2
                a = stack[sp]      # exponent (pushed first)
                b = stack[sp + 1]  # base
                if b <= 0.0:
                    code = FAIL_POW_DOMAIN
                    break
                v = exp(a * log(b))
            else:
                raise ValueError(f"unknown opcode {op}")
            if fabs(v) > OVERFLOW_LIMIT:
                code = FAIL_OVERFLOW
                break
            if isnan(v):
                code = FAIL_NONFINITE
                break
            stack[sp] = v
            sp += 1
        if code != FAIL_OK:
            return y, row, code
        yv[row] = stack[0]
    return y, -1, FAIL_OK
