"""Coordinating common-payoff games through public beliefs.

Modules:

* :mod:`pubcoord.fosg` – finite factored-observation games, public sets, exact policy evaluation;
* :mod:`pubcoord.zoo` – Tiny Hanabi suite and Trade Comm;
* :mod:`pubcoord.pubmdp` – prescriptions, public beliefs and their dynamics;
* :mod:`pubcoord.exact` – brute force, belief-graph backward induction, PuB-MDP Q-learning;
* :mod:`pubcoord.capi` / :mod:`pubcoord.models` – cooperative approximate policy iteration;
* :mod:`pubcoord.baselines` – tabular IQL, HQL, VDN, SAD;
* :mod:`pubcoord.harness` / :mod:`pubcoord.cli` – experiments and the ``pubcoord`` command.
"""

from .fosg import FiniteGame, GameError, JointPolicy, TableGame, evaluate_joint_policy
from .zoo import make_game, tiny_hanabi, trade_comm

__version__ = "0.1.0"

__all__ = [
    "FiniteGame",
    "GameError",
    "JointPolicy",
    "TableGame",
    "evaluate_joint_policy",
    "make_game",
    "tiny_hanabi",
    "trade_comm",
]
