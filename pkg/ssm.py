"""
Selective state-space scan and the LiteSS2D block

The recurrence per channel d and state n is
    h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * u_t,   h_0 = 0
    y_t = sum_n C_t * h_t + D * u_t
with delta, B and C computed from u (input-dependent), A = -exp(A_log) and the
first-order input discretization B_bar = delta * B.
"""

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from autodiff import Conv2d, LayerNorm, Linear, Module, Parameter, Tensor, concatenate, flip, split
from autodiff.tensor import make_result
from errors import DimensionError, NumericError

logger = logging.getLogger(__name__)

D_STATE = 8
EXPAND = 2
DIRECTIONAL_KERNEL = 3
CHUNK_SIZE = 16
SCAN_METHODS = ("sequential", "chunked")
NUM_DIRECTIONS = 4


# ======================================================================
# Discretization and the scan kernels
# ======================================================================


def discretize(A: Tensor, B: Tensor, delta: Tensor) -> Tuple[Tensor, Tensor]:
    """Zero-order hold for A, first-order for B: (exp(delta * A), delta * B)"""
    return (delta * A).exp(), delta * B


def _sequential_linear_scan(log_a: np.ndarray, b: np.ndarray) -> np.ndarray:
    h = np.empty_like(b)
    state = np.zeros_like(b[0])
    decay = np.exp(log_a)
    for t in range(b.shape[0]):
        state = decay[t] * state + b[t]
        h[t] = state
    return h


def _chunked_linear_scan(log_a: np.ndarray, b: np.ndarray, chunk: int = CHUNK_SIZE) -> np.ndarray:
    length = b.shape[0]
    h = np.empty_like(b)
    state = np.zeros_like(b[0])
    for start in range(0, length, chunk):
        stop = min(start + chunk, length)
        size = stop - start
        cum = np.cumsum(log_a[start:stop], axis=0)
        lower = np.tril(np.ones((size, size), dtype=bool)).reshape((size, size) + (1,) * (b.ndim - 1))
        exponent = np.where(lower, cum[:, None] - cum[None, :], -np.inf)
        weights = np.exp(exponent)
        block = np.einsum("ts...,s...->t...", weights, b[start:stop])
        block += np.exp(cum) * state
        h[start:stop] = block
        state = block[-1]
    return h


def linear_scan(log_a: np.ndarray, b: np.ndarray, method: str = "chunked") -> np.ndarray:
    """h_t = exp(log_a_t) * h_{t-1} + b_t along axis 0, h_0 = 0"""
    if method == "sequential":
        return _sequential_linear_scan(log_a, b)
    if method == "chunked":
        return _chunked_linear_scan(log_a, b)
    raise ValueError(f"unknown scan method {method!r}, expected one of {SCAN_METHODS}")


def scan_core(
    u: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor, D: Tensor, method: str = "chunked"
) -> Tensor:
    """Selective scan on prepared inputs

    u, delta: [N, L, d_inner]; A: [d_inner, d_state]; B, C: [N, L, d_state]; D: [d_inner].
    Returns y: [N, L, d_inner].
    """
    if u.ndim != 3 or delta.shape != u.shape:
        raise DimensionError(f"scan_core: u and delta must share a [N,L,d_inner] shape, got {u.shape} and {delta.shape}")
    n, length, d_inner = u.shape
    if A.ndim != 2 or A.shape[0] != d_inner:
        raise DimensionError(f"scan_core: A axis 0 = {A.shape[0] if A.ndim else None} but u axis 2 = {d_inner}")
    d_state = A.shape[1]
    for name, tensor in (("B", B), ("C", C)):
        if tensor.shape != (n, length, d_state):
            raise DimensionError(f"scan_core: {name} must be [{n},{length},{d_state}], got {tensor.shape}")
    if D.shape != (d_inner,):
        raise DimensionError(f"scan_core: D must be [{d_inner}], got {D.shape}")
    if not np.all(np.isfinite(delta.data)):
        raise NumericError("non-finite delta in selective scan")

    # time-major working layout [L, N, d_inner(, d_state)]
    uu = np.ascontiguousarray(u.data.transpose(1, 0, 2))
    dd = np.ascontiguousarray(delta.data.transpose(1, 0, 2))
    Bt = B.data.transpose(1, 0, 2)
    Ct = C.data.transpose(1, 0, 2)
    Ad = A.data
    Dd = D.data

    log_a = dd[..., None] * Ad
    du = dd * uu
    bu = du[..., None] * Bt[:, :, None, :]
    h = linear_scan(log_a, bu, method)
    y = np.einsum("lnes,lns->lne", h, Ct) + uu * Dd
    del bu

    def backward(g: np.ndarray):
        gy = g.transpose(1, 0, 2)
        gh = gy[..., None] * Ct[:, :, None, :]
        log_a_bwd = dd[..., None] * Ad
        shifted = np.concatenate([np.zeros_like(log_a_bwd[:1]), log_a_bwd[::-1][:-1]], axis=0)
        lam = linear_scan(shifted, gh[::-1], method)[::-1]
        del gh, shifted
        bu_bwd = du[..., None] * Bt[:, :, None, :]
        g_log_a = lam * (h - bu_bwd)
        del bu_bwd
        lam_b = np.einsum("lnes,lns->lne", lam, Bt)
        g_delta = np.einsum("lnes,es->lne", g_log_a, Ad) + uu * lam_b
        gA = np.einsum("lnes,lne->es", g_log_a, dd)
        gu = dd * lam_b + gy * Dd
        gB = np.einsum("lnes,lne->lns", lam, du)
        gC = np.einsum("lne,lnes->lns", gy, h)
        gD = np.einsum("lne,lne->e", gy, uu)
        return (
            gu.transpose(1, 0, 2),
            g_delta.transpose(1, 0, 2),
            gA,
            gB.transpose(1, 0, 2),
            gC.transpose(1, 0, 2),
            gD,
        )

    out = np.ascontiguousarray(y.transpose(1, 0, 2)).astype(u.dtype, copy=False)
    return make_result(out, (u, delta, A, B, C, D), backward, "selective_scan")


# ======================================================================
# Parameters shared by the four scan directions
# ======================================================================


def inverse_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


class SsmParams(Module):
    """Projections and state matrices of one selective-scan core"""

    def __init__(
        self,
        channels: int,
        rng: np.random.Generator,
        d_state: int = D_STATE,
        expand: int = EXPAND,
        dt_min: float = 1e-3,
        dt_max: float = 1e-1,
    ):
        self.channels = channels
        self.d_inner = expand * channels
        self.d_state = d_state
        self.dt_rank = math.ceil(self.d_inner / 16)
        e = self.d_inner

        self.proj_in = Conv2d(channels, e, 1, rng)
        self.proj_out = Conv2d(e, channels, 1, rng)
        self.A_log = Parameter(np.log(np.tile(np.arange(1, d_state + 1, dtype=np.float64), (e, 1))))
        self.D_skip = Parameter(np.ones(e))
        self.delta_down = Linear(e, self.dt_rank, rng, bias=False)
        self.delta_up = Linear(self.dt_rank, e, rng)
        dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=e))
        self.delta_up.bias = Parameter(inverse_softplus(dt))
        self.B_proj = Linear(e, d_state, rng, bias=False)
        self.C_proj = Linear(e, d_state, rng, bias=False)

    @property
    def A(self) -> Tensor:
        return -(self.A_log.exp())

    def step_sizes(self, tokens: Tensor) -> Tensor:
        """delta = softplus(up(down(u))) > 0, tokens [N, L, d_inner]"""
        return self.delta_up(self.delta_down(tokens)).softplus()


def selective_scan(u: Tensor, params: SsmParams, method: str = "chunked") -> Tensor:
    """Run the shared selective-scan core over sequences u: [N, d_inner, L]"""
    if u.ndim != 3 or u.shape[1] != params.d_inner:
        raise DimensionError(f"selective_scan: expected [N,{params.d_inner},L], got {u.shape}")
    tokens = u.transpose(0, 2, 1)
    delta = params.step_sizes(tokens)
    B = params.B_proj(tokens)
    C = params.C_proj(tokens)
    y = scan_core(tokens, delta, params.A, B, C, params.D_skip, method)
    return y.transpose(0, 2, 1)


# ======================================================================
# Four-direction expand / merge
# ======================================================================


@dataclass
class DirectionalSequences:
    """Row-major forward/reverse and column-major forward/reverse views, each [N, d_inner, H*W]"""

    row_forward: Tensor
    row_reverse: Tensor
    col_forward: Tensor
    col_reverse: Tensor
    height: int
    width: int

    def as_tuple(self) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
        return self.row_forward, self.row_reverse, self.col_forward, self.col_reverse


def scan_expand(x: Tensor) -> DirectionalSequences:
    if x.ndim != 4:
        raise DimensionError(f"scan_expand input must be [N,C,H,W], got {x.shape}")
    n, channels, height, width = x.shape
    rows = x.reshape(n, channels, height * width)
    cols = x.transpose(0, 1, 3, 2).reshape(n, channels, height * width)
    return DirectionalSequences(rows, flip(rows, 2), cols, flip(cols, 2), height, width)


def scan_merge(ys: DirectionalSequences) -> Tensor:
    """Undo each direction's ordering and sum into a [N, d_inner, H, W] map"""
    shapes = {t.shape for t in ys.as_tuple()}
    if len(shapes) != 1:
        raise DimensionError(f"scan_merge: directional outputs differ in shape: {sorted(shapes)}")
    n, channels, length = ys.row_forward.shape
    height, width = ys.height, ys.width
    if length != height * width:
        raise DimensionError(f"scan_merge: sequence length {length} != {height}x{width}")

    def from_rows(seq: Tensor) -> Tensor:
        return seq.reshape(n, channels, height, width)

    def from_cols(seq: Tensor) -> Tensor:
        return seq.reshape(n, channels, width, height).transpose(0, 1, 3, 2)

    return (
        from_rows(ys.row_forward)
        + from_rows(flip(ys.row_reverse, 2))
        + from_cols(ys.col_forward)
        + from_cols(flip(ys.col_reverse, 2))
    )


# ======================================================================
# LiteSS2D
# ======================================================================


class LiteSS2D(Module):
    """Project up, row then column depthwise conv, SiLU, four-way shared scan, norm, project down, residual"""

    def __init__(
        self,
        channels: int,
        rng: np.random.Generator,
        d_state: int = D_STATE,
        expand: int = EXPAND,
        kernel: int = DIRECTIONAL_KERNEL,
        scan_method: str = "chunked",
    ):
        self.channels = channels
        self.kernel = kernel
        self.scan_method = scan_method
        self.params = SsmParams(channels, rng, d_state=d_state, expand=expand)
        e = self.params.d_inner
        pad = kernel // 2
        self.row_conv = Conv2d(e, e, (1, kernel), rng, padding=(0, pad), groups=e)
        self.col_conv = Conv2d(e, e, (kernel, 1), rng, padding=(pad, 0), groups=e)
        self.norm = LayerNorm(e)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise DimensionError(f"LiteSS2D expects [N,{self.channels},H,W], got {x.shape}")
        z = self.params.proj_in(x)
        z = self.col_conv(self.row_conv(z)).silu()
        directions = scan_expand(z)
        batch = concatenate(list(directions.as_tuple()), axis=0)
        scanned = split(selective_scan(batch, self.params, self.scan_method), NUM_DIRECTIONS, axis=0)
        merged = scan_merge(DirectionalSequences(*scanned, directions.height, directions.width))
        return self.params.proj_out(self.norm(merged)) + x

    def macs(self, height: int, width: int) -> int:
        """Multiply-accumulates for one image at the given spatial size"""
        c = self.channels
        e = self.params.d_inner
        s = self.params.d_state
        r = self.params.dt_rank
        tokens = height * width
        projections = 2 * c * e * tokens
        directional = 2 * self.kernel * e * tokens
        per_direction = tokens * (e * r + r * e + 2 * e * s)
        scan = tokens * e * (3 * s + 1)
        return projections + directional + NUM_DIRECTIONS * (per_direction + scan)
