"""The five algorithm wirings: full method, no-boost, single-pair
discriminator, distillation advising, and plain learning without advice.

Every variant shares the environment, agent architecture, seeds, and
schedules; a variant differs only in which components update and how the
advice signal reaches the agent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .advisor import jsd_rows
from .agent import AgentNet, LossConfig, TransitionBatch, agent_loss
from .autodiff import Tensor


@dataclass(frozen=True)
class AlgorithmVariant:
    tag: str
    advisor: bool            # advisor trains and produces advice
    discriminator: str       # "set", "pair", or "none"
    boost: bool              # discriminator term in the advisor objective
    kda: bool                # direct JSD distillation instead of a discriminator

    def __post_init__(self):
        if self.discriminator not in ("set", "pair", "none"):
            raise ValueError(f"unknown discriminator kind {self.discriminator!r}")
        wiring = (self.advisor, self.discriminator, self.boost, self.kda)
        if wiring not in _ALLOWED_WIRINGS:
            raise ValueError(f"invalid component wiring for variant {self.tag!r}")


_ALLOWED_WIRINGS = {
    (True, "set", True, False),    # lala
    (True, "set", False, False),   # lala-nb
    (True, "pair", True, False),   # lala-sa
    (True, "none", False, True),   # kda
    (False, "none", False, False), # no-advice
}

VARIANTS = {
    "lala": AlgorithmVariant("lala", True, "set", True, False),
    "lala-nb": AlgorithmVariant("lala-nb", True, "set", False, False),
    "lala-sa": AlgorithmVariant("lala-sa", True, "pair", True, False),
    "kda": AlgorithmVariant("kda", True, "none", False, True),
    "no-advice": AlgorithmVariant("no-advice", False, "none", False, False),
}


def get_variant(tag: str) -> AlgorithmVariant:
    try:
        return VARIANTS[tag]
    except KeyError:
        raise ValueError(f"unknown variant {tag!r}; expected one of {sorted(VARIANTS)}")


def no_advice_loss(net: AgentNet, batch: TransitionBatch, cfg: LossConfig,
                   noise_rng: np.random.Generator | None = None) -> Tensor:
    """Plain learner: the agent loss with the advice weight zeroed."""
    return agent_loss(net, batch, None, cfg, noise_rng)


def kda_loss(net: AgentNet, batch: TransitionBatch, agent_dists: Tensor,
             advice: np.ndarray, cfg: LossConfig,
             noise_rng: np.random.Generator | None = None) -> Tensor:
    """Distillation advising: base loss plus lam * mean JSD(agent || advice).

    `agent_dists` carries live gradients (policies on the sampled states);
    `advice` is the teacher's matching advice and stays constant.
    """
    if agent_dists.value.shape != np.asarray(advice).shape:
        raise ValueError("advice is not aligned with the agent distributions")
    base = agent_loss(net, batch, None, cfg, noise_rng)
    jsd = ad.mean_all(jsd_rows(agent_dists, Tensor(advice)))
    return ad.add(base, ad.mul(jsd, cfg.lam))
