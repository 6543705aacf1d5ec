"""Pure-Python (numpy) evaluation backend.

Executes the postfix programs produced by `expression.compile_tree` on a
whole dataset at once.  Semantics must match the compiled kernel in
`_evalcore`: same opcodes, same failure codes, same first-offending-row
reporting, and bitwise-identical results for everything except the general
power path (which both sides compute as exp(b * ln a) via libm and may
differ in the last bits).
"""

import numpy as np

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
OP_POW_INT = 10  # iarg = integer exponent, repeated multiplication
OP_POW_GEN = 11  # pops base then exponent

FAIL_OK = 0
FAIL_LOG_DOMAIN = 1
FAIL_DIV_ZERO = 2
FAIL_POW_DOMAIN = 3
FAIL_OVERFLOW = 4
FAIL_NONFINITE = 5

FAIL_CAUSES = {
    FAIL_OK: "",
    FAIL_LOG_DOMAIN: "log of a non-positive value",
    FAIL_DIV_ZERO: "division by zero",
    FAIL_POW_DOMAIN: "power domain error",
    FAIL_OVERFLOW: "overflow",
    FAIL_NONFINITE: "non-finite value",
}

#: any |intermediate| above this is an overflow failure
OVERFLOW_LIMIT = 1e300


def execute(codes, iargs, dargs, xs, constants):
    """Run one program over all rows of `xs`.

    Returns (y, fail_row, fail_code); fail_code 0 means success.  A row
    records the first opcode that fails it, and the reported row is the
    lowest-index failing row, matching the compiled kernel's row loop.
    """
    n_rows = xs.shape[0]
    fail = np.zeros(n_rows, dtype=np.int64)
    stack = []

    def flag(mask, code):
        np.putmask(fail, (fail == 0) & mask, code)

    def check(v):
        flag(np.abs(v) > OVERFLOW_LIMIT, FAIL_OVERFLOW)
        flag(np.isnan(v), FAIL_NONFINITE)

    with np.errstate(all="ignore"):
        for op, iarg, darg in zip(codes, iargs, dargs):
            if op == OP_PUSH_VAR:
                v = xs[:, iarg].copy()
            elif op == OP_PUSH_CONST:
                v = np.full(n_rows, constants[iarg])
            elif op == OP_PUSH_LIT:
                v = np.full(n_rows, darg)
            elif op == OP_ADD:
                b = stack.pop()
                v = stack.pop() + b
            elif op == OP_SUB:
                b = stack.pop()
                v = stack.pop() - b
            elif op == OP_MUL:
                b = stack.pop()
                v = stack.pop() * b
            elif op == OP_DIV:
                b = stack.pop()
                a = stack.pop()
                flag(b == 0.0, FAIL_DIV_ZERO)
                v = a / b
            elif op == OP_SIN:
                v = np.sin(stack.pop())
            elif op == OP_COS:
                v = np.cos(stack.pop())
            elif op == OP_LOG:
                a = stack.pop()
                flag(a <= 0.0, FAIL_LOG_DOMAIN)
                v = np.log(a)
            elif op == OP_POW_INT:
                base = stack.pop()
                v = np.ones(n_rows)
                for _ in range(abs(int(iarg))):
                    v = v * base
                if iarg < 0:
                    flag(base == 0.0, FAIL_POW_DOMAIN)
                    v = 1.0 / v
            elif op == OP_POW_GEN:
                base = stack.pop()
                exponent = stack.pop()
                flag(base <= 0.0, FAIL_POW_DOMAIN)
                v = np.exp(exponent * np.log(base))
            else:
                raise ValueError(f"unknown opcode {op}")
            check(v)
            stack.append(v)

    y = stack.pop()
    if stack:
        raise ValueError("program left extra values on the stack")
    failing = np.flatnonzero(fail)
    if failing.size:
        row = int(failing[0])
        return y, row, int(fail[row])
    return y, -1, FAIL_OK
