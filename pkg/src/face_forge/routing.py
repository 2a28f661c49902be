"""Bias adjustment and routing: scalar tanh gates balancing the factual
and emotional blocks, softmax routes over retrieval groups, and the
stacked multimodal representation they weight.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, UsageError

log = logging.getLogger(__name__)

GATE_WARN_THRESHOLD = 1e-3
_warned_gates: set[str] = set()


@dataclass
class RoutingParams:
    u_f: Tensor   # d x d
    r_f: Tensor   # d x d
    u_e: Tensor   # d x d
    r_e: Tensor   # d x d
    b_f: Tensor   # d
    b_e: Tensor   # d
    w_g: Tensor   # d x 1 router map

    def named(self) -> dict[str, Tensor]:
        return {
            "dbar.u_f": self.u_f,
            "dbar.r_f": self.r_f,
            "dbar.u_e": self.u_e,
            "dbar.r_e": self.r_e,
            "dbar.b_f": self.b_f,
            "dbar.b_e": self.b_e,
            "dbar.w_g": self.w_g,
        }


def _group_mean(groups: list[Tensor]) -> Tensor:
    acc = groups[0]
    for g in groups[1:]:
        acc = ad.add(acc, g)
    return ad.mul(acc, Tensor(1.0 / len(groups)))


def compute_gates(factual_groups: list[Tensor], emotion_groups: list[Tensor],
                  params: RoutingParams) -> tuple[Tensor, Tensor]:
    """Scalar gates in (-1, 1): tanh of the fully pooled gated-unit output.

    The inner expression is averaged over both frames and features
    before tanh, so each gate scales its whole block uniformly.
    """
    if not factual_groups or len(factual_groups) != len(emotion_groups):
        raise UsageError("need matching non-empty factual and emotion group lists")
    f_bar = _group_mean(factual_groups)
    e_bar = _group_mean(emotion_groups)
    inner_f = ad.add(ad.add(ad.matmul(f_bar, params.u_f), ad.matmul(e_bar, params.r_f)),
                     params.b_f)
    inner_e = ad.add(ad.add(ad.matmul(f_bar, params.u_e), ad.matmul(e_bar, params.r_e)),
                     params.b_e)
    gate_f = ad.tanh(ad.tmean(inner_f))
    gate_e = ad.tanh(ad.tmean(inner_e))
    for name, gate in (("factual", gate_f), ("emotional", gate_e)):
        if abs(gate.item()) < GATE_WARN_THRESHOLD:
            # first occurrence per process at WARNING, the rest at DEBUG
            level = logging.DEBUG if name in _warned_gates else logging.WARNING
            _warned_gates.add(name)
            log.log(level, "%s gate is near zero (%.3e); that block is almost nulled",
                    name, gate.item())
    return gate_f, gate_e


def compute_routes(hidden_groups: list[Tensor], w_g: Tensor) -> Tensor:
    """Softmax route weights over groups from frame-pooled hidden features."""
    if not hidden_groups:
        raise UsageError("need at least one hidden group")
    logits = []
    for h in hidden_groups:
        pooled = ad.tmean(h, axis=0, keepdims=True)          # 1 x d
        logits.append(ad.reshape(ad.matmul(pooled, w_g), (1,)))
    return ad.softmax(ad.concat(logits, axis=0), axis=0)


def uniform_routes(k: int) -> Tensor:
    return Tensor(np.full(k, 1.0 / k))


def route_weighted_sum(groups: list[Tensor], routes: Tensor) -> Tensor:
    """Sum of per-group matrices weighted by the route vector."""
    k = len(groups)
    if routes.data.shape != (k,):
        raise UsageError(f"routes shape {routes.shape} does not match K={k}")
    total = None
    for i in range(k):
        g_i = ad.reshape(ad.take_rows(ad.reshape(routes, (k, 1)), [i]), (1, 1))
        term = ad.mul(groups[i], g_i)
        total = term if total is None else ad.add(total, term)
    return total


def aggregate(factual_groups: list[Tensor], emotion_groups: list[Tensor],
              routes: Tensor, gate_f: Tensor, gate_e: Tensor) -> Tensor:
    """Route-weighted group sums, gate-scaled, stacked to 2N x d."""
    if len(factual_groups) != len(emotion_groups):
        raise UsageError("factual and emotion group counts differ")
    f_sum = route_weighted_sum(factual_groups, routes)
    e_sum = route_weighted_sum(emotion_groups, routes)
    return ad.concat([ad.mul(f_sum, gate_f), ad.mul(e_sum, gate_e)], axis=0)
