"""
Network-level ops built on the tensor engine: convolution, channel shuffle,
pooling, softmax family, layer normalization and linear layers
"""

from typing import Optional, Tuple, Union

import numpy as np

from errors import DimensionError

from .tensor import Tensor, add, make_result, matmul, reshape, transpose

IntPair = Union[int, Tuple[int, int]]


def _pair(value: IntPair) -> Tuple[int, int]:
    if isinstance(value, int):
        return value, value
    return int(value[0]), int(value[1])


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: IntPair = 0,
    groups: int = 1,
) -> Tensor:
    """Grouped 2D cross-correlation over NCHW input

    weight is [C_out, C_in/groups, kh, kw]. groups == C_in == C_out gives a depthwise
    convolution, a 1x1 kernel with groups == 1 a pointwise one.
    """
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be [N,C,H,W], got {x.shape}")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d kernel must be [C_out,C_in/groups,kh,kw], got {weight.shape}")
    n, c_in, height, width = x.shape
    c_out, c_in_group, kh, kw = weight.shape
    if c_in % groups != 0 or c_out % groups != 0:
        raise DimensionError(f"conv2d channels must divide groups={groups}: C_in axis 1 = {c_in}, C_out axis 0 = {c_out}")
    if c_in_group != c_in // groups:
        raise DimensionError(f"conv2d kernel axis 1 = {c_in_group} but input axis 1 / groups = {c_in // groups}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv2d bias must be [{c_out}], got {bias.shape}")

    ph, pw = _pair(padding)
    h_out = conv_output_size(height, kh, stride, ph)
    w_out = conv_output_size(width, kw, stride, pw)
    if h_out < 1 or w_out < 1:
        raise DimensionError(f"conv2d kernel {kh}x{kw} does not fit input {height}x{width} with padding {ph},{pw}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    c_out_group = c_out // groups
    depthwise = c_in_group == 1 and c_out_group == 1
    w = weight.data

    def window(i: int, j: int) -> Tuple[slice, slice]:
        return slice(i, i + stride * (h_out - 1) + 1, stride), slice(j, j + stride * (w_out - 1) + 1, stride)

    out = np.zeros((n, c_out, h_out, w_out), dtype=x.dtype)
    if kh == 1 and kw == 1 and stride == 1 and groups == 1:
        out = np.einsum("oc,nchw->nohw", w[:, :, 0, 0], xp, optimize=True)
    else:
        for i in range(kh):
            for j in range(kw):
                rows, cols = window(i, j)
                patch = xp[:, :, rows, cols]
                if depthwise:
                    out += patch * w[:, 0, i, j][None, :, None, None]
                else:
                    grouped = patch.reshape(n, groups, c_in_group, h_out, w_out)
                    wg = w[:, :, i, j].reshape(groups, c_out_group, c_in_group)
                    out += np.einsum("ngchw,goc->ngohw", grouped, wg, optimize=True).reshape(n, c_out, h_out, w_out)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g: np.ndarray):
        gw = np.zeros_like(w)
        if kh == 1 and kw == 1 and stride == 1 and groups == 1:
            gxp = np.einsum("oc,nohw->nchw", w[:, :, 0, 0], g, optimize=True)
            gw[:, :, 0, 0] = np.einsum("nohw,nchw->oc", g, xp, optimize=True)
        else:
            gxp = np.zeros_like(xp)
            gg = g.reshape(n, groups, c_out_group, h_out, w_out)
            for i in range(kh):
                for j in range(kw):
                    rows, cols = window(i, j)
                    patch = xp[:, :, rows, cols]
                    if depthwise:
                        gxp[:, :, rows, cols] += g * w[:, 0, i, j][None, :, None, None]
                        gw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, patch)
                    else:
                        grouped = patch.reshape(n, groups, c_in_group, h_out, w_out)
                        wg = w[:, :, i, j].reshape(groups, c_out_group, c_in_group)
                        gxp[:, :, rows, cols] += np.einsum("ngohw,goc->ngchw", gg, wg, optimize=True).reshape(
                            n, c_in, h_out, w_out
                        )
                        gw[:, :, i, j] = np.einsum("ngohw,ngchw->goc", gg, grouped, optimize=True).reshape(
                            c_out, c_in_group
                        )
        gx = gxp[:, :, ph : ph + height, pw : pw + width] if (ph or pw) else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(np.ascontiguousarray(out, dtype=x.dtype), parents, backward, "conv2d")


def channel_shuffle(x: Tensor, groups: int) -> Tensor:
    """Reshape C to (groups, C/groups), swap the two axes, flatten back"""
    if x.ndim != 4:
        raise DimensionError(f"channel_shuffle input must be [N,C,H,W], got {x.shape}")
    n, channels, height, width = x.shape
    if groups < 1 or channels % groups != 0:
        raise DimensionError(f"channel_shuffle: channel axis 1 = {channels} is not divisible by groups={groups}")
    if groups == 1:
        return x
    grouped = reshape(x, (n, groups, channels // groups, height, width))
    swapped = transpose(grouped, (0, 2, 1, 3, 4))
    return reshape(swapped, (n, channels, height, width))


def reduce_mean_pool(x: Tensor) -> Tensor:
    """Global average pool [N,C,H,W] -> [N,C]"""
    if x.ndim != 4:
        raise DimensionError(f"reduce_mean_pool input must be [N,C,H,W], got {x.shape}")
    return x.mean(axis=(2, 3))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - log_norm
    probs = np.exp(out)

    def backward(g: np.ndarray):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), backward, "log_softmax")


def layer_norm(
    x: Tensor,
    weight: Optional[Tensor] = None,
    bias: Optional[Tensor] = None,
    axis: int = 1,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize over one axis (channels for NCHW maps) with a per-channel affine"""
    axis = axis % x.ndim
    size = x.shape[axis]
    affine_shape = [1] * x.ndim
    affine_shape[axis] = size
    for name, param in (("weight", weight), ("bias", bias)):
        if param is not None and param.shape != (size,):
            raise DimensionError(f"layer_norm {name} must be [{size}] to match axis {axis}, got {param.shape}")

    mu = x.data.mean(axis=axis, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=axis, keepdims=True) + eps)
    xhat = centered * inv_std
    w = weight.data.reshape(affine_shape) if weight is not None else None
    out = xhat * w if w is not None else xhat
    if bias is not None:
        out = out + bias.data.reshape(affine_shape)
    reduce_axes = tuple(ax for ax in range(x.ndim) if ax != axis)

    def backward(g: np.ndarray):
        gxhat = g * w if w is not None else g
        gx = inv_std * (
            gxhat - gxhat.mean(axis=axis, keepdims=True) - xhat * (gxhat * xhat).mean(axis=axis, keepdims=True)
        )
        grads = [gx]
        if weight is not None:
            grads.append((g * xhat).sum(axis=reduce_axes))
        if bias is not None:
            grads.append(g.sum(axis=reduce_axes))
        return grads

    parents = tuple(p for p in (x, weight, bias) if p is not None)
    return make_result(out.astype(x.dtype, copy=False), parents, backward, "layer_norm")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ weight.T + bias with weight stored as [out, in]"""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input axis -1 = {x.shape[-1]} but weight axis 1 = {weight.shape[1]}")
    out = matmul(x, transpose(weight, (1, 0)))
    return add(out, bias) if bias is not None else out
