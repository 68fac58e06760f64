"""Core types and cost formulas for the four-stage incentive game.

The server trains a federated model over T communication rounds with I users
split into J types.  A type is described by its marginal training cost theta,
marginal privacy cost xi, revocation probability p and retention probability q,
plus the first two moments of its training-loss distribution.  The formulas
here price a menu contract {(d_j, r_j)} of per-user data sizes and learning
rewards, taking into account that revoked data must be unlearned by the users
who stay (at a communication cost proportional to the squared losses of the
users who finally leave).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

__all__ = [
    "UserTypeSpec",
    "GameConfig",
    "ContractItem",
    "Contract",
    "UserRecord",
    "Population",
    "aggregated_marginal_cost",
    "retention_discounted_cost",
    "expected_unlearning_load",
    "cost_coefficients",
    "stage2_expected_payoff",
    "stage3_payoff",
    "stage1_expected_cost",
    "stage4_realized_cost",
    "truncated_normal_moments",
    "mean_retention_rate",
]


# --- configuration types ---


@dataclass(frozen=True)
class UserTypeSpec:
    """One user type: costs, churn rates and loss moments.

    loss_mean / loss_var are the moments of the realized (truncated) loss
    distribution, not of the underlying normal used for sampling.
    """

    theta: float
    xi: float
    count: int
    p: float
    q: float
    loss_mean: float
    loss_var: float

    def validate(self) -> None:
        if self.theta <= 0 or self.xi <= 0:
            raise ValueError("theta and xi must be positive")
        if self.count < 1:
            raise ValueError("count must be at least 1")
        if not 0.0 <= self.p < 1.0:
            raise ValueError("p must lie in [0, 1)")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError("q must lie in [0, 1]")
        if self.loss_var < 0.0:
            raise ValueError("loss_var must be nonnegative")


@dataclass(frozen=True)
class GameConfig:
    """Game-level constants shared by every stage.

    lam is the unlearning-rounds coefficient: unlearning the data of a leaver
    set L costs each staying user i an extra theta_i * d_i * lam * sum of
    squared losses over L.  b_cross_alternative switches the cross term of the
    reward coefficient B_j to the telescoped per-step differences reading
    (see cost_coefficients); the default uses the direct form, which is the
    one consistent with the expected-cost identity.
    """

    T: float = 100.0
    lam: float = 0.04
    rho: float = 1.0
    gamma: float = 1e-10
    iota: float = 0.2
    retention_exact_threshold: int = 20
    seed: int = 0
    tol: float = 1e-9
    b_cross_alternative: bool = False
    clamp_retention_incentives: bool = False

    def validate(self) -> None:
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.rho <= 0 or self.gamma <= 0:
            raise ValueError("rho and gamma must be positive")
        if not 0.0 < self.iota < 1.0:
            raise ValueError("iota must lie in (0, 1)")
        if self.retention_exact_threshold < 0:
            raise ValueError("retention_exact_threshold must be nonnegative")
        if not 0.0 < self.tol <= 1e-3:
            raise ValueError("tol must lie in (0, 1e-3]")


@dataclass(frozen=True)
class ContractItem:
    """Menu entry for one type: data size and learning reward."""

    d: float
    r_learn: float


@dataclass
class Contract:
    """Menu contract in ascending order of aggregated marginal cost.

    order[k] is the index into the original type list of the k-th menu entry,
    so order inverts the stable sort applied before pricing.  blocks lists
    maximal runs of equal data size (pooled types share one block).
    """

    items: list[ContractItem]
    pi: list[float]
    kappa: list[float]
    A: list[float]
    B: list[float]
    blocks: list[list[int]]
    order: list[int]

    def d_for_original_type(self, type_idx: int) -> float:
        return self.items[self.order.index(type_idx)].d

    def reward_for_original_type(self, type_idx: int) -> float:
        return self.items[self.order.index(type_idx)].r_learn

    def validate(self, tol: float = 1e-9) -> None:
        J = len(self.items)
        if not (len(self.pi) == len(self.kappa) == len(self.A) == len(self.B) == J):
            raise ValueError("inconsistent contract arrays")
        if sorted(self.order) != list(range(J)):
            raise ValueError("order must be a permutation")
        for a, b in zip(self.pi, self.pi[1:]):
            if b < a - tol * max(1.0, abs(a)):
                raise ValueError("pi must be non-decreasing")
        d = [it.d for it in self.items]
        if any(x <= 0 for x in d):
            raise ValueError("data sizes must be positive")
        for a, b in zip(d, d[1:]):
            if b > a * (1 + tol):
                raise ValueError("data sizes must be non-increasing in pi order")
        flat = [j for blk in self.blocks for j in blk]
        if flat != list(range(J)):
            raise ValueError("blocks must partition menu positions in order")
        for blk in self.blocks:
            base = d[blk[0]]
            for j in blk[1:]:
                if abs(d[j] - base) > tol * max(1.0, abs(base)):
                    raise ValueError("data sizes inside a block must be equal")
        for left, right in zip(self.blocks, self.blocks[1:]):
            if not d[left[0]] > d[right[0]]:
                raise ValueError("block data sizes must be strictly decreasing")


@dataclass(frozen=True)
class UserRecord:
    """Single-user view of a Population row.

    retained may be set only for users who revoked.
    """

    id: int
    type_idx: int
    loss: float
    shapley: float
    revoke: bool
    retained: bool

    def validate(self) -> None:
        if self.loss < 0:
            raise ValueError("loss must be nonnegative")
        if self.retained and not self.revoke:
            raise ValueError("retained requires revoke")


@dataclass
class Population:
    """Realized users: per-user type index, loss, contribution score and
    revocation / retention outcome flags."""

    type_idx: np.ndarray
    loss: np.ndarray
    shapley: np.ndarray
    revoke: np.ndarray = field(default=None)
    retained: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        n = len(self.type_idx)
        if self.revoke is None:
            self.revoke = np.zeros(n, dtype=bool)
        if self.retained is None:
            self.retained = np.zeros(n, dtype=bool)

    def __len__(self) -> int:
        return len(self.type_idx)

    def record(self, i: int) -> UserRecord:
        return UserRecord(
            id=i,
            type_idx=int(self.type_idx[i]),
            loss=float(self.loss[i]),
            shapley=float(self.shapley[i]),
            revoke=bool(self.revoke[i]),
            retained=bool(self.retained[i]),
        )


# --- scalar helpers ---


def mean_retention_rate(types: list[UserTypeSpec]) -> float:
    """Count-weighted mean retention probability across types."""
    total = sum(t.count for t in types)
    if total == 0:
        return 0.0
    return sum(t.count * t.q for t in types) / total


def expected_unlearning_load(types: list[UserTypeSpec], cfg: GameConfig) -> float:
    """Expected unlearning-round mass alpha.

    alpha = lam * sum_j I_j p_j (1 - q_j) (E[l_j]^2 + Var[l_j]): the expected
    number of extra rounds per unit of theta*d caused by users who revoke and
    are not retained.
    """
    acc = 0.0
    for t in types:
        acc += t.count * t.p * (1.0 - t.q) * (t.loss_mean ** 2 + t.loss_var)
    return cfg.lam * acc


def aggregated_marginal_cost(
    type_spec: UserTypeSpec, types: list[UserTypeSpec], cfg: GameConfig
) -> float:
    """Per-data-unit cost rate pi_j used to price rewards.

    pi_j = xi_j E[l_j] + theta_j T / (1 - p_j) + theta_j * alpha, where alpha
    aggregates the expected unlearning load over all types.  Types are indexed
    in ascending order of this quantity before contract design.
    """
    if type_spec.p >= 1.0:
        raise ZeroDivisionError("p = 1 means the type always revokes; cost rate undefined")
    alpha = expected_unlearning_load(types, cfg)
    return (
        type_spec.xi * type_spec.loss_mean
        + type_spec.theta * cfg.T / (1.0 - type_spec.p)
        + type_spec.theta * alpha
    )


def retention_discounted_cost(
    type_spec: UserTypeSpec, types: list[UserTypeSpec], cfg: GameConfig
) -> float:
    """Participation cost rate kappa_j = (1 - p_j) * pi_j.

    Expanded: (1-p_j) xi_j E[l_j] + theta_j T + theta_j (1-p_j) alpha.  The
    individual-rationality constraint is (1-p_j) r_j >= kappa_j d_j.
    """
    alpha = expected_unlearning_load(types, cfg)
    return (
        (1.0 - type_spec.p) * type_spec.xi * type_spec.loss_mean
        + type_spec.theta * cfg.T
        + type_spec.theta * (1.0 - type_spec.p) * alpha
    )


def cost_coefficients(
    types: list[UserTypeSpec], cfg: GameConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients (A_j, B_j) of the reduced server cost sum_j A_j/d_j + B_j d_j.

    Requires types already sorted by ascending aggregated marginal cost.
    A_j = rho I_j (1 - p_j + p_j q_j) / T weights model accuracy; B_j collects
    the reward and expected retention-incentive terms:

        B_j = gamma I_j (p_j q_j (alpha theta_j + xi_j E[l_j]) + (1-p_j) pi_j)
              + sum_{m<j} gamma I_m (1-p_m) (pi_j - pi_{j-1})

    With cfg.b_cross_alternative the cross term reads
    sum_{m<j} gamma I_m (1-p_m) (pi_m - pi_{m-1}) instead (documented
    alternative; it breaks the expected-cost identity and is off by default).
    """
    J = len(types)
    alpha = expected_unlearning_load(types, cfg)
    pis = [aggregated_marginal_cost(t, types, cfg) for t in types]
    for a, b in zip(pis, pis[1:]):
        if b < a - cfg.tol * max(1.0, abs(a)):
            raise ValueError("types must be sorted by ascending aggregated marginal cost")
    A = np.empty(J)
    B = np.empty(J)
    for j, t in enumerate(types):
        A[j] = cfg.rho * t.count * (1.0 - t.p + t.p * t.q) / cfg.T
        own = cfg.gamma * t.count * (
            t.p * t.q * (alpha * t.theta + t.xi * t.loss_mean)
            + (1.0 - t.p) * pis[j]
        )
        cross = 0.0
        for m in range(j):
            if cfg.b_cross_alternative:
                step = pis[m] - (pis[m - 1] if m > 0 else 0.0)
            else:
                step = pis[j] - pis[j - 1]
            cross += cfg.gamma * types[m].count * (1.0 - types[m].p) * step
        B[j] = own + cross
    return A, B


# --- stage payoffs and costs ---


def stage2_expected_payoff(
    type_spec: UserTypeSpec, item: ContractItem, types: list[UserTypeSpec], cfg: GameConfig
) -> float:
    """Expected payoff of a type accepting a menu item:
    (1 - p_j) r - kappa_j d."""
    kap = retention_discounted_cost(type_spec, types, cfg)
    return (1.0 - type_spec.p) * item.r_learn - kap * item.d


def stage3_payoff(
    idx: int,
    x: np.ndarray,
    population: Population,
    contract: Contract,
    types: list[UserTypeSpec],
    cfg: GameConfig,
    q_bar: float,
) -> float:
    """Realized payoff of user idx under revocation profile x.

    A revoker forfeits the reward and keeps only the sunk training cost
    -theta d T.  A non-revoker additionally pays the privacy cost xi l d and
    the expected unlearning cost theta d lam (1 - q_bar) sum_k x_k l_k^2,
    where q_bar is the anticipated retention rate of revokers.
    """
    t = types[population.type_idx[idx]]
    d = contract.d_for_original_type(population.type_idx[idx])
    r = contract.reward_for_original_type(population.type_idx[idx])
    train_cost = t.theta * d * cfg.T
    if x[idx]:
        return -train_cost
    leaver_mass = float(np.sum(x * (1.0 - q_bar) * population.loss ** 2))
    return (
        r
        - train_cost
        - t.xi * population.loss[idx] * d
        - t.theta * d * cfg.lam * leaver_mass
    )


def stage1_expected_cost(
    contract: Contract, types_sorted: list[UserTypeSpec], cfg: GameConfig
) -> float:
    """Expected server cost of a contract (accuracy + rewards + expected
    retention incentives), for types in the contract's pi order."""
    alpha = expected_unlearning_load(types_sorted, cfg)
    total = 0.0
    for t, item in zip(types_sorted, contract.items):
        total += cfg.rho * t.count * (1.0 - t.p + t.p * t.q) / (cfg.T * item.d)
        total += cfg.gamma * t.count * (1.0 - t.p) * item.r_learn
        total += cfg.gamma * t.count * t.p * t.q * (
            alpha * t.theta + t.xi * t.loss_mean
        ) * item.d
    return total


def stage4_realized_cost(
    population: Population,
    contract: Contract,
    types: list[UserTypeSpec],
    cfg: GameConfig,
    incentives: np.ndarray | None = None,
) -> tuple[float, dict[str, float]]:
    """Realized server cost after retention.

    Stayers are the users who did not revoke plus the retained revokers.  The
    cost is the sum of stayers' contribution scores (accuracy loss estimate)
    plus gamma-weighted learning rewards of stayers and retention incentives
    of retained users.  Returns (total, decomposition).
    """
    stay = ~population.revoke | population.retained
    accuracy = float(np.sum(population.shapley[stay]))
    rewards = 0.0
    for i in np.nonzero(stay)[0]:
        rewards += contract.reward_for_original_type(population.type_idx[i])
    rewards *= cfg.gamma
    retention = 0.0
    if incentives is not None and population.retained.any():
        retention = cfg.gamma * float(np.sum(incentives[population.retained]))
    total = accuracy + rewards + retention
    parts = {
        "accuracy": accuracy,
        "learning_rewards": rewards,
        "retention_rewards": retention,
        "total": total,
    }
    return total, parts


# --- truncated normal moments ---


def truncated_normal_moments(
    mu: float, sigma: float, lo: float, hi: float
) -> tuple[float, float]:
    """Mean and variance of a normal(mu, sigma^2) truncated to [lo, hi]."""
    if lo >= hi:
        raise ValueError("lo must be smaller than hi")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    a = (lo - mu) / sigma
    b = (hi - mu) / sigma
    mean, var = stats.truncnorm.stats(a, b, loc=mu, scale=sigma, moments="mv")
    return float(mean), float(var)
