"""Tensor contraction with memoized expressions.

np.einsum re-plans and re-parses on every call, which dominates the runtime
of desk-scale amplitude iterations; opt_einsum contract expressions cached by
(subscripts, shapes) skip all of that.
"""

import opt_einsum

_EXPRS = {}


def einsum(subscripts, *operands):
    key = (subscripts, tuple(op.shape for op in operands))
    expr = _EXPRS.get(key)
    if expr is None:
        expr = opt_einsum.contract_expression(
            subscripts, *(op.shape for op in operands))
        _EXPRS[key] = expr
    return expr(*operands)
