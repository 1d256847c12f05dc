"""Social Fabric encoding: layer norm, linear embedding, soft assignment to K
learnable primitives, pooling, and a linear classification head.

Three pooling variants share the trunk:

``literal``
    ``E_k = (sum_j z_jk) * C_k``. Each block is a scaled copy of its primitive.
``aggregate``
    ``E_k = sum_j z_jk * R_j``. Assignment-weighted descriptor sums.
``avgpool``
    ``E = mean_j R_j``. No primitives involved; head input is D wide.

All functions accept a single sequence (N, F) or a batch (B, N, F).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .numcore import InvalidArgument, ParamTensor

VARIANTS = ("literal", "aggregate", "avgpool")
TRUNK = ("ln_gain", "ln_bias", "W", "b", "C", "lang_table")
HEAD = ("head_W", "head_b")


@dataclass
class SocialFabricParams:
    ln_gain: ParamTensor
    ln_bias: ParamTensor
    W: ParamTensor
    b: ParamTensor
    C: ParamTensor
    head_W: ParamTensor
    head_b: ParamTensor
    variant: str = "literal"
    lang_table: ParamTensor | None = None
    beta: float = field(default=0.0)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidArgument(f"unknown variant {self.variant!r}")
        if self.beta <= 0:
            self.beta = 1.0 / np.sqrt(self.D)
        expected = self.D if self.variant == "avgpool" else self.K * self.D
        if self.head_W.shape[0] != expected:
            raise InvalidArgument(f"head input dim {self.head_W.shape[0]} != {expected} for variant {self.variant}")
        if self.W.shape[0] != self.F or self.C.shape[1] != self.D or self.b.shape != (self.D,):
            raise InvalidArgument("inconsistent trunk shapes")

    @property
    def F(self) -> int:
        return self.ln_gain.shape[0]

    @property
    def D(self) -> int:
        return self.W.shape[1]

    @property
    def K(self) -> int:
        return self.C.shape[0]

    @property
    def H(self) -> int:
        return self.head_W.shape[1]

    def named(self) -> dict[str, ParamTensor]:
        out = {n: getattr(self, n) for n in ("ln_gain", "ln_bias", "W", "b", "C", "head_W", "head_b")}
        if self.lang_table is not None:
            out["lang_table"] = self.lang_table
        return out

    def trunk(self) -> list[ParamTensor]:
        return [p for n, p in self.named().items() if n in TRUNK]

    def head(self) -> list[ParamTensor]:
        return [self.head_W, self.head_b]

    def all(self) -> list[ParamTensor]:
        return list(self.named().values())

    def zero_grad(self) -> None:
        for p in self.all():
            p.zero_grad()


@dataclass
class FabricEncoding:
    E: np.ndarray
    mass: np.ndarray | None

    def flat(self) -> np.ndarray:
        if self.mass is None:
            return self.E
        return self.E.reshape(self.E.shape[:-2] + (-1,))


def init_params(
    F: int,
    D: int,
    K: int,
    H: int,
    rng: nc.Rng,
    variant: str = "literal",
    num_classes: int | None = None,
    lang_dim: int | None = None,
) -> SocialFabricParams:
    """Gaussian init: W and head_W with std 1/sqrt(fan_in), primitives N(0, 1)."""
    if min(F, D, K, H) < 1:
        raise InvalidArgument("all dimensions must be >= 1")
    head_in = D if variant == "avgpool" else K * D
    table = None
    if num_classes is not None and lang_dim is not None:
        table = ParamTensor("lang_table", rng.normal_array((num_classes, lang_dim)))
    return SocialFabricParams(
        ln_gain=ParamTensor("ln_gain", np.ones(F)),
        ln_bias=ParamTensor("ln_bias", np.zeros(F)),
        W=ParamTensor("W", rng.normal_array((F, D), std=1.0 / np.sqrt(F))),
        b=ParamTensor("b", np.zeros(D)),
        C=ParamTensor("C", rng.normal_array((K, D))),
        head_W=ParamTensor("head_W", rng.normal_array((head_in, H), std=1.0 / np.sqrt(head_in))),
        head_b=ParamTensor("head_b", np.zeros(H)),
        variant=variant,
        lang_table=table,
    )


def fresh_head(params: SocialFabricParams, H: int, rng: nc.Rng) -> SocialFabricParams:
    """Same trunk tensors (shared, not copied) with a newly initialized H-way head."""
    head_in = params.D if params.variant == "avgpool" else params.K * params.D
    return SocialFabricParams(
        ln_gain=params.ln_gain,
        ln_bias=params.ln_bias,
        W=params.W,
        b=params.b,
        C=params.C,
        head_W=ParamTensor("head_W", rng.normal_array((head_in, H), std=1.0 / np.sqrt(head_in))),
        head_b=ParamTensor("head_b", np.zeros(H)),
        variant=params.variant,
        lang_table=params.lang_table,
        beta=params.beta,
    )


# --------------------------------------------------------------------------
# Forward pieces
# --------------------------------------------------------------------------


def embed(S: np.ndarray, params: SocialFabricParams):
    """R = linear(layer_norm(S)); returns (R, cache)."""
    S = np.asarray(S, dtype=np.float64)
    if S.shape[-1] != params.F:
        raise InvalidArgument(f"input has {S.shape[-1]} features, params expect {params.F}")
    Y, ln_cache = nc.layer_norm(S, params.ln_gain.value, params.ln_bias.value)
    R = nc.linear_forward(Y, params.W.value, params.b.value)
    return R, (Y, ln_cache)


def sq_distances(R: np.ndarray, C: np.ndarray) -> np.ndarray:
    """||R_j - C_k||^2 for every frame j and primitive k, shape (..., N, K)."""
    r2 = (R * R).sum(axis=-1, keepdims=True)
    c2 = (C * C).sum(axis=-1)
    return np.maximum(r2 - 2.0 * (R @ C.T) + c2, 0.0)


def soft_assign(R: np.ndarray, C: np.ndarray, beta: float) -> np.ndarray:
    if beta <= 0:
        raise InvalidArgument("beta must be positive")
    return nc.softmax(-beta * sq_distances(R, C), axis=-1)


def encode(R: np.ndarray, params: SocialFabricParams, z: np.ndarray | None = None) -> FabricEncoding:
    if params.variant == "avgpool":
        return FabricEncoding(R.mean(axis=-2), None)
    if z is None:
        z = soft_assign(R, params.C.value, params.beta)
    mass = z.sum(axis=-2)
    if params.variant == "literal":
        E = mass[..., :, None] * params.C.value
    else:
        E = np.swapaxes(z, -1, -2) @ R
    return FabricEncoding(E, mass)


def head_forward(enc: FabricEncoding, params: SocialFabricParams) -> np.ndarray:
    flat = enc.flat()
    if flat.shape[-1] != params.head_W.shape[0]:
        raise InvalidArgument(f"encoding width {flat.shape[-1]} != head input {params.head_W.shape[0]}")
    return nc.linear_forward(flat, params.head_W.value, params.head_b.value)


@dataclass
class ForwardCache:
    S: np.ndarray
    Y: np.ndarray
    ln_cache: tuple
    R: np.ndarray
    z: np.ndarray | None
    enc: FabricEncoding
    logits: np.ndarray


def forward(S: np.ndarray, params: SocialFabricParams) -> ForwardCache:
    """Full stack S -> logits, keeping everything backward needs."""
    R, (Y, ln_cache) = embed(S, params)
    z = None if params.variant == "avgpool" else soft_assign(R, params.C.value, params.beta)
    enc = encode(R, params, z)
    logits = head_forward(enc, params)
    return ForwardCache(np.asarray(S, dtype=np.float64), Y, ln_cache, R, z, enc, logits)


# --------------------------------------------------------------------------
# Backward
# --------------------------------------------------------------------------


def sfe_backward(dlogits: np.ndarray, cache: ForwardCache, params: SocialFabricParams) -> np.ndarray:
    """Accumulate gradients into ``params`` and return dL/dS.

    beta is a constant and gets no gradient. In the literal variant the
    input gradient reaches R only through the assignments z.
    """
    dlogits = np.asarray(dlogits, dtype=np.float64)
    flat = cache.enc.flat()
    dflat, dhW, dhb = nc.linear_backward(dlogits, flat, params.head_W.value)
    params.head_W.grad += dhW
    params.head_b.grad += dhb

    R, C = cache.R, params.C.value
    if params.variant == "avgpool":
        n = R.shape[-2]
        dR = np.broadcast_to(dflat[..., None, :] / n, R.shape).copy()
    else:
        dE = dflat.reshape(cache.enc.E.shape)
        z = cache.z
        lead = tuple(range(dE.ndim - 2))
        if params.variant == "literal":
            mass = cache.enc.mass
            params.C.grad += (mass[..., :, None] * dE).sum(axis=lead)
            dmass = (dE * C).sum(axis=-1)
            dz = np.broadcast_to(dmass[..., None, :], z.shape)
            dR = np.zeros_like(R)
        else:
            dz = R @ np.swapaxes(dE, -1, -2)
            dR = z @ dE
        dlog = nc.softmax_backward(dz, z)
        dd2 = -params.beta * dlog
        # d2_jk = |R_j|^2 - 2 R_j.C_k + |C_k|^2
        dR += 2.0 * (dd2.sum(axis=-1, keepdims=True) * R - dd2 @ C)
        dd2_flat = dd2.reshape(-1, dd2.shape[-1])
        R_flat = R.reshape(-1, R.shape[-1])
        params.C.grad += 2.0 * (dd2_flat.sum(axis=0)[:, None] * C - dd2_flat.T @ R_flat)

    dY, dW, db = nc.linear_backward(dR, cache.Y, params.W.value)
    params.W.grad += dW
    params.b.grad += db
    dS, dg, dbeta = nc.layer_norm_backward(dY, cache.ln_cache)
    params.ln_gain.grad += dg
    params.ln_bias.grad += dbeta
    return dS
