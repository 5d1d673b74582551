"""Kernel backend selection.

The hot convolution kernels exist twice: a compiled Cython extension
(``scmm.backend._core``) and a NumPy/BLAS fallback (``scmm.backend.pyref``).
Selection happens at import; set ``SCMM_BACKEND=python`` or
``SCMM_BACKEND=compiled`` to force a choice (default: compiled when built,
else python).

In compiled mode each call dispatches on reduction depth: the direct loops
win while cin * kernel is small (im2col materialization dominates there),
and the BLAS path wins once the gemm reduction is deep enough to amortize
it. ``benchmarks/bench_backends.py`` measures the crossover.
"""
import os

import numpy as np

from . import pyref as _py

_requested = os.environ.get("SCMM_BACKEND", "").strip().lower()
if _requested not in ("", "auto", "python", "compiled"):
    raise RuntimeError(
        f"SCMM_BACKEND must be 'python' or 'compiled', got {_requested!r}"
    )

if _requested == "python":
    _core = None
else:
    try:
        from . import _core  # type: ignore[attr-defined]
    except ImportError:
        if _requested == "compiled":
            raise RuntimeError(
                "SCMM_BACKEND=compiled but the scmm.backend._core extension "
                "is not built; install with Cython and a C compiler available"
            ) from None
        _core = None

BACKEND = "python" if _core is None else "compiled"

# direct loops beat im2col+BLAS while the gemm reduction (cin * k) is
# shallow; on the backward reductions BLAS takes over sooner, so those also
# require the problem to be small overall
_DEPTH_CUTOFF = 32
_SMALL_PROBLEM = 16384


if _core is None:
    conv1d_forward = _py.conv1d_forward
    conv1d_grad_kernels = _py.conv1d_grad_kernels
    conv1d_grad_input = _py.conv1d_grad_input
else:

    def conv1d_forward(x_pad, kernels, stride):
        if kernels.shape[1] * kernels.shape[2] <= _DEPTH_CUTOFF:
            return _core.conv1d_forward(x_pad, kernels, stride)
        return _py.conv1d_forward(x_pad, kernels, stride)

    def conv1d_grad_kernels(x_pad, grad_out, kernel_size, stride):
        if x_pad.shape[1] * kernel_size <= _DEPTH_CUTOFF and grad_out.size <= _SMALL_PROBLEM:
            return _core.conv1d_grad_kernels(x_pad, grad_out, kernel_size, stride)
        return _py.conv1d_grad_kernels(x_pad, grad_out, kernel_size, stride)

    def conv1d_grad_input(grad_out, kernels, padded_length, stride):
        if kernels.shape[1] * kernels.shape[2] <= _DEPTH_CUTOFF and grad_out.size <= _SMALL_PROBLEM:
            return _core.conv1d_grad_input(grad_out, kernels, padded_length, stride)
        return _py.conv1d_grad_input(grad_out, kernels, padded_length, stride)


def conv1d_op(x_pad, kernels, stride):
    """Forward result plus a gradient closure for one convolution.

    On the BLAS path the im2col columns built for the forward pass are
    captured and reused by the kernel gradient; the direct compiled path
    has no such intermediate. The closure honors need_input / need_kernels
    so callers skip gradients nothing consumes.
    """
    cout, cin, k = kernels.shape
    padded_length = x_pad.shape[2]
    use_core = _core is not None and cin * k <= _DEPTH_CUTOFF

    if use_core:
        out = _core.conv1d_forward(x_pad, kernels, stride)
        cols = None
    else:
        cols = _py.im2col(x_pad, k, stride)
        out = _py.forward_from_cols(cols, kernels, x_pad.shape[0])

    def grads(grad_out, need_input, need_kernels):
        grad_out = np.ascontiguousarray(grad_out)
        gk = None
        if need_kernels:
            if cols is not None:
                gk = _py.grad_kernels_from_cols(cols, grad_out, k)
            else:
                gk = conv1d_grad_kernels(x_pad, grad_out, k, stride)
        gx = None
        if need_input:
            gx = conv1d_grad_input(grad_out, kernels, padded_length, stride)
        return gx, gk

    return out, grads


__all__ = [
    "BACKEND",
    "conv1d_forward",
    "conv1d_grad_kernels",
    "conv1d_grad_input",
    "conv1d_op",
]
