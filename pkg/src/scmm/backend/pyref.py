"""Pure NumPy/BLAS implementations of the hot convolution kernels.

Semantics are identical to the compiled extension in ``_core.pyx``; this
module is the import-time fallback and the ground truth the extension is
tested against. All arrays are C-contiguous float64. Inputs arrive already
zero-padded; output length is floor((L_pad - K) / stride) + 1.

The forward pass materializes the im2col column matrix; ``conv1d_op``
keeps it alive so the kernel gradient can reuse it instead of paying the
window copy twice per training step.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x_pad, kernel_size, stride):
    """Flattened sliding windows, [B * L', Cin * K], contiguous."""
    windows = sliding_window_view(x_pad, kernel_size, axis=2)[:, :, ::stride, :]
    b, cin, out_len, k = windows.shape
    return np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(b * out_len, cin * k)


def forward_from_cols(cols, kernels, batch):
    cout, cin, k = kernels.shape
    out2 = cols @ kernels.reshape(cout, cin * k).T
    out_len = cols.shape[0] // batch
    return np.ascontiguousarray(out2.reshape(batch, out_len, cout).transpose(0, 2, 1))


def grad_kernels_from_cols(cols, grad_out, kernel_size):
    batch, cout, out_len = grad_out.shape
    go2 = np.ascontiguousarray(grad_out.transpose(0, 2, 1)).reshape(batch * out_len, cout)
    return np.ascontiguousarray((go2.T @ cols).reshape(cout, -1, kernel_size))


def conv1d_forward(x_pad, kernels, stride):
    """Cross-correlate x_pad [B, Cin, Lp] with kernels [Cout, Cin, K]."""
    return forward_from_cols(im2col(x_pad, kernels.shape[2], stride), kernels, x_pad.shape[0])


def conv1d_grad_kernels(x_pad, grad_out, kernel_size, stride):
    """Gradient of the forward pass w.r.t. the kernels; grad_out is [B, Cout, L']."""
    return grad_kernels_from_cols(im2col(x_pad, kernel_size, stride), grad_out, kernel_size)


def conv1d_grad_input(grad_out, kernels, padded_length, stride):
    """Gradient of the forward pass w.r.t. the padded input."""
    batch, _, out_len = grad_out.shape
    cout, cin, k = kernels.shape
    spread = np.tensordot(grad_out, kernels, axes=([1], [0]))  # [B, L', Cin, K]
    gx = np.zeros((batch, cin, padded_length), dtype=np.float64)
    for tap in range(k):
        gx[:, :, tap : tap + stride * out_len : stride] += spread[:, :, :, tap].transpose(0, 2, 1)
    return gx
