"""Best-response dynamics for the post-training revocation game.

Each user i compares the reward forfeited by revoking against the privacy
cost of staying plus the expected unlearning burden caused by the users who
do revoke (discounted by the anticipated retention rate q_bar).  Revoking
imposes that burden on everyone else, so decisions are strategic complements
and synchronous best-response sweeps converge monotonically: upward from
nobody-revokes to the least equilibrium, downward from everybody-revokes to
the greatest one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Contract, GameConfig, Population, UserTypeSpec

__all__ = [
    "RevocationProfile",
    "lower_equilibrium",
    "upper_equilibrium",
    "verify_nash",
    "all_equilibria",
    "least_equilibrium_oracle",
]


@dataclass
class RevocationProfile:
    x: np.ndarray
    iterations: int
    converged_from: str

    def validate(self) -> None:
        if self.x.dtype != np.bool_:
            raise ValueError("x must be boolean")
        if self.converged_from not in ("all-zero", "all-one"):
            raise ValueError("unknown start profile")


def _user_vectors(
    population: Population,
    contract: Contract,
    types: list[UserTypeSpec],
    cfg: GameConfig,
    q_bar: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-user reward, privacy cost, externality weight and squared loss."""
    J = len(types)
    d_of = np.empty(J)
    r_of = np.empty(J)
    theta = np.empty(J)
    xi = np.empty(J)
    for orig in range(J):
        pos = contract.order.index(orig)
        d_of[orig] = contract.items[pos].d
        r_of[orig] = contract.items[pos].r_learn
        theta[orig] = types[orig].theta
        xi[orig] = types[orig].xi
    idx = population.type_idx
    rl = r_of[idx]
    xild = xi[idx] * population.loss * d_of[idx]
    tdl = theta[idx] * d_of[idx] * cfg.lam * (1.0 - q_bar)
    l2 = population.loss ** 2
    return rl, xild, tdl, l2


def _sweep_profile(
    population, contract, types, cfg, q_bar, start_high: bool
) -> RevocationProfile:
    rl, xild, tdl, l2 = _user_vectors(population, contract, types, cfg, q_bar)
    n = len(population)
    x = np.full(n, start_high, dtype=bool)
    iterations = 0
    for _ in range(n + 1):
        iterations += 1
        mass = float(np.sum(l2[x]))
        # own squared loss never enters one's own externality sum
        margin = rl - xild - tdl * (mass - np.where(x, l2, 0.0))
        if start_high:
            movers = x & (margin >= 0.0)
            x = x & ~movers
        else:
            movers = ~x & (margin < 0.0)
            x = x | movers
        if not movers.any():
            break
    else:
        raise RuntimeError("best-response sweeps failed to settle")
    return RevocationProfile(
        x=x, iterations=iterations, converged_from="all-one" if start_high else "all-zero"
    )


def lower_equilibrium(
    population: Population,
    contract: Contract,
    types: list[UserTypeSpec],
    cfg: GameConfig,
    q_bar: float,
) -> RevocationProfile:
    """Least Nash equilibrium via synchronous ascent from all-stay.

    Each sweep flips to revoke every user whose staying margin
    rl_i - xi_i l_i d_i - theta_i d_i lam (1-q_bar) sum_{k!=i, revoked} l_k^2
    is strictly negative.  A user indifferent at zero margin stays.  The
    revoker set grows weakly, so at most I sweeps are needed.
    """
    return _sweep_profile(population, contract, types, cfg, q_bar, start_high=False)


def upper_equilibrium(
    population: Population,
    contract: Contract,
    types: list[UserTypeSpec],
    cfg: GameConfig,
    q_bar: float,
) -> RevocationProfile:
    """Greatest Nash equilibrium via descent from all-revoke; if it matches
    lower_equilibrium the equilibrium is unique."""
    return _sweep_profile(population, contract, types, cfg, q_bar, start_high=True)


def verify_nash(
    x: np.ndarray,
    population: Population,
    contract: Contract,
    types: list[UserTypeSpec],
    cfg: GameConfig,
    q_bar: float,
) -> bool:
    """True iff no user strictly gains from a unilateral flip."""
    x = np.asarray(x, dtype=bool)
    rl, xild, tdl, l2 = _user_vectors(population, contract, types, cfg, q_bar)
    mass = float(np.sum(l2[x]))
    margin = rl - xild - tdl * (mass - np.where(x, l2, 0.0))
    # a revoker with positive margin would rather stay; a stayer with
    # negative margin would rather revoke
    return bool(np.all(np.where(x, margin <= 0.0, margin >= 0.0)))


def all_equilibria(
    population: Population,
    contract: Contract,
    types: list[UserTypeSpec],
    cfg: GameConfig,
    q_bar: float,
) -> np.ndarray:
    """Every pure equilibrium by checking all 2^I profiles; I <= 16 only."""
    n = len(population)
    if n > 16:
        raise ValueError("exhaustive enumeration limited to 16 users")
    rl, xild, tdl, l2 = _user_vectors(population, contract, types, cfg, q_bar)
    masks = np.arange(1 << n, dtype=np.uint32)
    X = ((masks[:, None] >> np.arange(n)) & 1).astype(bool)
    S = X @ l2
    margin = rl - xild - tdl * (S[:, None] - X * l2)
    ne = np.all(np.where(X, margin <= 0.0, margin >= 0.0), axis=1)
    return X[ne]


def least_equilibrium_oracle(
    population: Population,
    contract: Contract,
    types: list[UserTypeSpec],
    cfg: GameConfig,
    q_bar: float,
) -> np.ndarray:
    """Componentwise minimum over all equilibria (itself an equilibrium in
    this game of strategic complements; asserted)."""
    profiles = all_equilibria(population, contract, types, cfg, q_bar)
    if len(profiles) == 0:
        raise RuntimeError("no pure equilibrium found")
    least = np.all(profiles, axis=0)
    if not verify_nash(least, population, contract, types, cfg, q_bar):
        raise RuntimeError("componentwise minimum is not an equilibrium")
    return least
