"""Reparameterizable dual branch: a fast branch scaled by a learnable s plus a slow branch.

Both sub-branches share the layout of the frozen layer they sit beside,
so merging them (and later fusing with that layer) is plain weight
addition.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensorcore as tc
from .errors import DimensionError, DomainError
from .tensorcore import Tensor

KINDS = ("linear", "conv")


@dataclass
class BranchParams:
    kind: str
    weight: Tensor
    bias: Tensor
    padding: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown branch kind {self.kind!r}")
        want = 2 if self.kind == "linear" else 4
        if self.weight.data.ndim != want:
            raise DimensionError(f"{self.kind} weight must be {want}-d, got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(f"bias {self.bias.shape} inconsistent with weight {self.weight.shape}")

    @classmethod
    def zeros(cls, kind: str, shape: tuple[int, ...], padding: int = 0, requires_grad: bool = False):
        return cls(kind, Tensor(np.zeros(shape), requires_grad), Tensor(np.zeros(shape[0]), requires_grad), padding)

    def forward(self, x: Tensor) -> Tensor:
        if self.kind == "linear":
            return tc.linear(x, self.weight, self.bias)
        return tc.conv2d(x, self.weight, self.bias, self.padding)

    def same_layout(self, other: "BranchParams") -> bool:
        return (self.kind == other.kind and self.weight.shape == other.weight.shape
                and self.padding == other.padding)

    def n_params(self) -> int:
        return self.weight.size + self.bias.size

    def copy(self, requires_grad: bool | None = None) -> "BranchParams":
        rg = self.weight.requires_grad if requires_grad is None else requires_grad
        return BranchParams(self.kind, Tensor(self.weight.data, rg), Tensor(self.bias.data, rg), self.padding)


# Consolidated single branch used at inference; same layout as the frozen layer it replaces.
FusedBranch = BranchParams


@dataclass
class Rdb:
    llrb: BranchParams
    hlrb: BranchParams
    s: Tensor
    s_init: float
    eta: float = 0.2

    def __post_init__(self):
        if not self.llrb.same_layout(self.hlrb):
            raise DimensionError("LLRB and HLRB must share kind, shape and padding")
        if not 0.0 <= self.eta <= 1.0:
            raise DomainError(f"eta must lie in [0, 1], got {self.eta}")
        if self.s.size != 1:
            raise DimensionError("scaling factor must be a single value")

    @property
    def kind(self) -> str:
        return self.llrb.kind

    @classmethod
    def zeros(cls, kind: str, shape: tuple[int, ...], padding: int = 0, s_init: float = 1.0, eta: float = 0.2):
        return cls(
            llrb=BranchParams.zeros(kind, shape, padding, requires_grad=True),
            hlrb=BranchParams.zeros(kind, shape, padding, requires_grad=True),
            s=Tensor(np.array(s_init), requires_grad=True),
            s_init=float(s_init),
            eta=eta,
        )

    def parameters(self) -> dict[str, Tensor]:
        return {
            "llrb.weight": self.llrb.weight,
            "llrb.bias": self.llrb.bias,
            "hlrb.weight": self.hlrb.weight,
            "hlrb.bias": self.hlrb.bias,
            "s": self.s,
        }

    def is_zero(self) -> bool:
        return all(not np.any(t.data) for k, t in self.parameters().items() if k != "s")


class RdbOutput(NamedTuple):
    output: Tensor
    hlrb_scaled: Tensor


def rdb_forward(rdb: Rdb, x: Tensor) -> RdbOutput:
    """HLRB(x) * s + LLRB(x); the scaled fast-branch term is returned too for its penalty."""
    fast = tc.scale(rdb.hlrb.forward(x), rdb.s)
    return RdbOutput(tc.add(fast, rdb.llrb.forward(x)), fast)


def reset_hlrb(rdb: Rdb, reset_s: bool = True) -> Rdb:
    rdb.hlrb.weight.data = np.zeros_like(rdb.hlrb.weight.data)
    rdb.hlrb.bias.data = np.zeros_like(rdb.hlrb.bias.data)
    if reset_s:
        rdb.s.data = np.array(rdb.s_init)
    return rdb


def merge_hlrb_into_llrb(rdb: Rdb, reset_s: bool = True) -> Rdb:
    """Fold the scaled fast branch into the slow one, then zero the fast branch."""
    if np.any(rdb.hlrb.weight.data) or np.any(rdb.hlrb.bias.data):
        s = float(rdb.s.data)
        rdb.llrb.weight.data = rdb.hlrb.weight.data * s + rdb.llrb.weight.data
        rdb.llrb.bias.data = rdb.hlrb.bias.data * s + rdb.llrb.bias.data
    return reset_hlrb(rdb, reset_s)


def consolidate_with_pretrained(rdb: Rdb, ptb: BranchParams) -> FusedBranch:
    if not ptb.same_layout(rdb.llrb):
        raise DimensionError(
            f"pre-trained branch {ptb.kind}{ptb.weight.shape} does not match RDB {rdb.kind}{rdb.llrb.weight.shape}"
        )
    s = float(rdb.s.data)
    w = ptb.weight.data + rdb.hlrb.weight.data * s + rdb.llrb.weight.data
    b = ptb.bias.data + rdb.hlrb.bias.data * s + rdb.llrb.bias.data
    return FusedBranch(ptb.kind, Tensor(w), Tensor(b), ptb.padding)
