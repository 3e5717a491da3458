"""Zero-interference penalties on adapter outputs and the total training objective."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensorcore as tc
from .errors import DomainError, NumericError
from .tensorcore import Tensor


@dataclass
class ZilConfig:
    lam: float = 0.1
    norm_kind: str = "l1_mean"

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise DomainError(f"ZiL weight must be finite and >= 0, got {self.lam}")
        if self.norm_kind not in tc.NORM_KINDS:
            raise DomainError(f"unknown norm kind {self.norm_kind!r}")


def _site_mean(outputs: Sequence[Tensor], norm_kind: str) -> Tensor:
    if not outputs:
        raise DomainError("at least one RDB site is required")
    terms = [tc.reduce_norm(o, norm_kind) for o in outputs]
    total = terms[0]
    for t in terms[1:]:
        total = tc.add(total, t)
    return tc.scale(total, 1.0 / len(terms)) if len(terms) > 1 else total


def loss_rdb(rdb_outputs: Sequence[Tensor], norm_kind: str = "l1_mean") -> Tensor:
    """Penalty on the whole adapter output, averaged over sites."""
    return _site_mean(rdb_outputs, norm_kind)


def loss_hlrb(hlrb_scaled_outputs: Sequence[Tensor], norm_kind: str = "l1_mean") -> Tensor:
    """Penalty on the scaled fast-branch output, averaged over sites."""
    return _site_mean(hlrb_scaled_outputs, norm_kind)


def total_loss(l_cls: Tensor, l_loc: Tensor, l_rdb: Tensor, l_hlrb: Tensor, cfg: ZilConfig,
               use_rdb_term: bool = True, use_hlrb_term: bool = True) -> Tensor:
    for name, t in (("l_cls", l_cls), ("l_loc", l_loc), ("l_rdb", l_rdb), ("l_hlrb", l_hlrb)):
        if not np.all(np.isfinite(t.data)):
            raise NumericError(f"{name} is not finite")
    base = tc.add(l_cls, l_loc)
    penalties = [t for t, on in ((l_rdb, use_rdb_term), (l_hlrb, use_hlrb_term)) if on]
    if not penalties or cfg.lam == 0:
        return base
    zil = penalties[0] if len(penalties) == 1 else tc.add(*penalties)
    return tc.add(base, tc.scale(zil, cfg.lam))
