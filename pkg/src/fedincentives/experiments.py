"""Four-stage pipeline and benchmark comparison.

Three mechanisms share the stage machinery and differ in how the menu is
priced and whether revokers may be paid to stay:

* RAR prices learning and unlearning jointly and retains optimally.
* NRI prices with zero anticipated retention and never retains anyone.
* LLA prices as if unlearning were free (no unlearning load in the cost
  rates, no expected retention payments in the size coefficients) but then
  faces the real game, including retention.

Populations are shared across mechanisms within a trial (common random
numbers), so per-trial cost differences isolate the mechanism effect.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .contract import design_contract
from .model import (
    Contract,
    GameConfig,
    Population,
    UserTypeSpec,
    mean_retention_rate,
    stage4_realized_cost,
)
from .population import SamplingModel, realized_rates, sample_population
from .retention import (
    RetentionResult,
    RetentionSizeError,
    optimal_retention_exact,
    optimal_retention_heuristic,
    retention_incentives,
)
from .revocation import lower_equilibrium

__all__ = ["Outcome", "run_pipeline", "compare_costs", "MECHANISMS"]

MECHANISMS = ("RAR", "NRI", "LLA")

_STREAM_COMPARE = 4


@dataclass
class Outcome:
    """Everything observable after the four stages have played out."""

    mechanism: str
    contract: Contract
    population: Population
    q_bar: float
    retention: RetentionResult | None
    cost: float
    cost_parts: dict
    payoffs: np.ndarray
    p_hat: float
    q_hat: float


def mechanism_contract(
    mechanism: str, types: list[UserTypeSpec], cfg: GameConfig
) -> Contract:
    """Stage-I pricing under the mechanism's view of the world."""
    mech = mechanism.upper()
    if mech == "RAR":
        return design_contract(types, cfg)
    if mech == "NRI":
        no_retention = [replace(t, q=0.0) for t in types]
        return design_contract(no_retention, cfg)
    if mech == "LLA":
        myopic = replace(cfg, lam=0.0)
        return design_contract(types, cfg, price_cfg=myopic, drop_expected_retention=True)
    raise ValueError(f"unknown mechanism {mechanism!r}")


def _retention_mode(mechanism: str, override: str | None, lla_retention: str) -> str:
    if override is not None:
        return override
    mech = mechanism.upper()
    if mech == "NRI":
        return "none"
    if mech == "LLA":
        return lla_retention
    return "optimal"


def run_pipeline(
    mechanism: str,
    types: list[UserTypeSpec],
    cfg: GameConfig,
    sampling: SamplingModel,
    population: Population | None = None,
    seed: int = 0,
    retention: str | None = None,
    lla_retention: str = "optimal",
    heuristic_categories: int = 8,
) -> Outcome:
    """Contract, acceptance, revocation equilibrium, retention, realized cost.

    The population may be passed in (for common-random-number comparisons);
    otherwise it is sampled from the seed.  `retention` forces a Stage-IV
    mode (optimal / none / all) regardless of mechanism, which gives
    controlled comparisons that differ in retention only.
    """
    mech = mechanism.upper()
    if mech not in MECHANISMS:
        raise ValueError(f"unknown mechanism {mechanism!r}")
    for t in types:
        t.validate()
    if population is None:
        population = sample_population(types, sampling, seed)
    else:
        population = Population(
            type_idx=population.type_idx,
            loss=population.loss,
            shapley=population.shapley,
        )
    contract = mechanism_contract(mech, types, cfg)
    q_bar = mean_retention_rate(types)

    profile = lower_equilibrium(population, contract, types, cfg, q_bar)
    population.revoke = profile.x
    revokers = np.flatnonzero(profile.x)

    mode = _retention_mode(mech, retention, lla_retention)
    if mode not in ("none", "all", "optimal"):
        raise ValueError(f"unknown retention mode {mode!r}")
    retention_result: RetentionResult | None = None
    if mode == "none" or len(revokers) == 0:
        retained_ids = np.array([], dtype=int)
        incentive_map: dict[int, float] = {}
    elif mode == "all":
        retained_ids = revokers
        incentive_map = retention_incentives(
            retained_ids, revokers, population, contract, types, cfg
        )
    else:
        try:
            retention_result = optimal_retention_exact(
                revokers, population, contract, types, cfg
            )
        except RetentionSizeError:
            retention_result = optimal_retention_heuristic(
                revokers, population, contract, types, cfg, categories=heuristic_categories
            )
        retained_ids = retention_result.retained
        incentive_map = retention_result.incentives

    population.retained[:] = False
    population.retained[retained_ids] = True
    incentives = np.zeros(len(population))
    for uid, ru in incentive_map.items():
        incentives[uid] = ru

    cost, parts = stage4_realized_cost(population, contract, types, cfg, incentives)
    payoffs = _realized_payoffs(population, contract, types, cfg)
    p_hat, q_hat = realized_rates(population)
    return Outcome(
        mechanism=mech,
        contract=contract,
        population=population,
        q_bar=q_bar,
        retention=retention_result,
        cost=cost,
        cost_parts=parts,
        payoffs=payoffs,
        p_hat=p_hat,
        q_hat=q_hat,
    )


def _realized_payoffs(
    population: Population,
    contract: Contract,
    types: list[UserTypeSpec],
    cfg: GameConfig,
) -> np.ndarray:
    """Per-user realized payoff given final leave/stay outcomes.

    Users who leave, and retained users (paid to indifference), end at the
    sunk training cost.  Stayers collect the reward net of training, privacy
    and the unlearning burden of those who actually left.
    """
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
    d = d_of[idx]
    leavers = population.revoke & ~population.retained
    leave_mass = float(np.sum(population.loss[leavers] ** 2))
    train_cost = theta[idx] * d * cfg.T
    payoff = np.where(
        population.revoke,
        -train_cost,
        r_of[idx]
        - train_cost
        - xi[idx] * population.loss * d
        - theta[idx] * d * cfg.lam * leave_mass,
    )
    return payoff


def compare_costs(
    types: list[UserTypeSpec],
    cfg: GameConfig,
    sampling: SamplingModel,
    mechanisms=MECHANISMS,
    user_counts=None,
    trials: int = 50,
    seed: int = 0,
    lla_retention: str = "optimal",
    heuristic_categories: int = 8,
) -> list[dict]:
    """Mean realized cost and user payoff per mechanism and population size.

    Populations are scaled proportionally to the requested totals and shared
    across mechanisms within a trial.  Returns one row per (mechanism, I)
    with cost mean, standard error and mean user payoff.
    """
    if user_counts is None:
        user_counts = [sum(t.count for t in types)]
    base_total = sum(t.count for t in types)
    rows = []
    for size_index, total in enumerate(user_counts):
        scaled = [
            replace(t, count=max(1, round(t.count * total / base_total))) for t in types
        ]
        costs = {m.upper(): [] for m in mechanisms}
        payoffs = {m.upper(): [] for m in mechanisms}
        actual_total = sum(t.count for t in scaled)
        for trial in range(trials):
            pop_seed = np.random.SeedSequence(
                [int(seed), _STREAM_COMPARE, size_index, trial]
            ).generate_state(1)[0]
            population = sample_population(scaled, sampling, int(pop_seed))
            for mech in mechanisms:
                outcome = run_pipeline(
                    mech,
                    scaled,
                    cfg,
                    sampling,
                    population=population,
                    lla_retention=lla_retention,
                    heuristic_categories=heuristic_categories,
                )
                costs[mech.upper()].append(outcome.cost)
                payoffs[mech.upper()].append(float(np.mean(outcome.payoffs)))
        for mech in mechanisms:
            key = mech.upper()
            arr = np.array(costs[key])
            rows.append(
                {
                    "mechanism": key,
                    "I": actual_total,
                    "cost_mean": float(np.mean(arr)),
                    "cost_stderr": float(np.std(arr) / math.sqrt(len(arr))),
                    "payoff_mean": float(np.mean(payoffs[key])),
                }
            )
    return rows
