"""Exact verification of the preference-optimization framework on small MDPs.

The sequential generation process is a deterministic prefix-append MDP: a
state is (condition, frames so far), an action appends one frame from a
finite alphabet. Everything below is computed by exact enumeration in
float64 -- no sampling is involved in the quantities being compared, so the
checks certify identities rather than estimates.

States are stored level by level: level l holds the A**l prefixes of length
l, indexed by the base-A encoding of the prefix, and appending action a maps
index s to s*A + a at the next level.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConditionMismatch,
    GammaNotOne,
    ShapeMismatch,
    StateSpaceTooLarge,
    SupportViolation,
)
from .rng import derive_key, uniform_field

MAX_STATES = 10**6


def _num_states(num_conditions: int, alphabet_size: int, horizon: int) -> int:
    return num_conditions * sum(alphabet_size**l for l in range(horizon + 1))


@dataclass(frozen=True)
class TabularMDP:
    """Deterministic prefix-append MDP over a finite frame alphabet.

    rewards[c][l] is an (A**l, A) table: the reward for appending frame a to
    the l-frame prefix with index s under condition c.
    """

    condition_probs: np.ndarray
    alphabet_size: int
    horizon: int
    rewards: tuple
    gamma: float

    def __post_init__(self):
        probs = np.asarray(self.condition_probs, dtype=np.float64)
        if abs(probs.sum() - 1.0) > 1e-12 or probs.min() < 0:
            raise ValueError("condition_probs must be a distribution")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if _num_states(len(probs), self.alphabet_size, self.horizon) > MAX_STATES:
            raise StateSpaceTooLarge("enumeration cap exceeded")
        object.__setattr__(self, "condition_probs", probs)
        for c in range(self.num_conditions):
            for l in range(self.horizon):
                want = (self.alphabet_size**l, self.alphabet_size)
                if self.rewards[c][l].shape != want:
                    raise ShapeMismatch(f"reward table [{c}][{l}] must have shape {want}")

    @property
    def num_conditions(self) -> int:
        return len(self.condition_probs)

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.num_conditions, self.alphabet_size, self.horizon)


@dataclass(frozen=True)
class PolicyTable:
    """Action distribution over every non-terminal state, levelled like rewards."""

    tables: tuple

    def __post_init__(self):
        for levels in self.tables:
            for rows in levels:
                if rows.min() < 0 or np.max(np.abs(rows.sum(axis=1) - 1.0)) > 1e-12:
                    raise ValueError("policy rows must be distributions")

    def row(self, c: int, level: int, idx: int) -> np.ndarray:
        return self.tables[c][level][idx]


@dataclass(frozen=True)
class ValueBundle:
    q: tuple  # q[c][l]: (A**l, A)
    v: tuple  # v[c][l]: (A**l,), l = 0..horizon with v[c][horizon] = 0
    a: tuple  # a[c][l] = q - v, same shape as q


@dataclass(frozen=True)
class Trajectory:
    condition: int
    frames: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.frames)


def _check_mdp_policy(mdp: TabularMDP, policy: PolicyTable) -> None:
    if len(policy.tables) != mdp.num_conditions or any(
        len(levels) != mdp.horizon for levels in policy.tables
    ):
        raise ShapeMismatch("policy shape disagrees with MDP")


# --- random instances ---------------------------------------------------------

def random_mdp(
    seed: int,
    num_conditions: int = 2,
    alphabet_size: int = 2,
    horizon: int = 3,
    gamma: float = 1.0,
    zero_reward_from_level: int | None = None,
) -> TabularMDP:
    """Seeded MDP with rewards uniform in [-1, 1].

    zero_reward_from_level zeroes every reward at levels >= that value, which
    makes all continuation values vanish there (useful for checks on
    trajectories shorter than the horizon).
    """
    if _num_states(num_conditions, alphabet_size, horizon) > MAX_STATES:
        raise StateSpaceTooLarge("enumeration cap exceeded")
    rewards = []
    for c in range(num_conditions):
        levels = []
        for l in range(horizon):
            key = derive_key(seed, "mdp-reward", c, l)
            table = uniform_field(key, (alphabet_size**l, alphabet_size)) * 2.0 - 1.0
            if zero_reward_from_level is not None and l >= zero_reward_from_level:
                table = np.zeros_like(table)
            levels.append(table)
        rewards.append(tuple(levels))
    raw = uniform_field(derive_key(seed, "mdp-cond"), (num_conditions,)) + 0.1
    return TabularMDP(
        condition_probs=raw / raw.sum(),
        alphabet_size=alphabet_size,
        horizon=horizon,
        rewards=tuple(rewards),
        gamma=gamma,
    )


def random_policy(seed: int, mdp: TabularMDP, tag: str = "pi") -> PolicyTable:
    """Seeded policy with strictly positive Dirichlet(1) rows."""
    tables = []
    for c in range(mdp.num_conditions):
        levels = []
        for l in range(mdp.horizon):
            key = derive_key(seed, "policy", tag, c, l)
            u = uniform_field(key, (mdp.alphabet_size**l, mdp.alphabet_size))
            rows = -np.log(u)
            levels.append(rows / rows.sum(axis=1, keepdims=True))
        tables.append(tuple(levels))
    return PolicyTable(tables=tuple(tables))


def uniform_policy(mdp: TabularMDP) -> PolicyTable:
    a = mdp.alphabet_size
    tables = tuple(
        tuple(np.full((a**l, a), 1.0 / a) for l in range(mdp.horizon))
        for _ in range(mdp.num_conditions)
    )
    return PolicyTable(tables=tables)


# --- exact policy evaluation ----------------------------------------------------

def eval_policy(mdp: TabularMDP, policy: PolicyTable) -> ValueBundle:
    """Backward induction under deterministic prefix-append transitions:
    Q(s,a) = R(s,a) + gamma * V(s*A+a), V = sum_a pi(a|s) Q(s,a), V(terminal) = 0.
    """
    _check_mdp_policy(mdp, policy)
    a_size = mdp.alphabet_size
    q_all, v_all, adv_all = [], [], []
    for c in range(mdp.num_conditions):
        v = [None] * (mdp.horizon + 1)
        q = [None] * mdp.horizon
        adv = [None] * mdp.horizon
        v[mdp.horizon] = np.zeros(a_size**mdp.horizon)
        for l in range(mdp.horizon - 1, -1, -1):
            next_v = v[l + 1].reshape(a_size**l, a_size)
            q[l] = mdp.rewards[c][l] + mdp.gamma * next_v
            v[l] = np.sum(policy.tables[c][l] * q[l], axis=1)
            adv[l] = q[l] - v[l][:, None]
        q_all.append(tuple(q))
        v_all.append(tuple(v))
        adv_all.append(tuple(adv))
    return ValueBundle(q=tuple(q_all), v=tuple(v_all), a=tuple(adv_all))


def root_value(mdp: TabularMDP, bundle: ValueBundle) -> float:
    """E_{c ~ D}[V(c)] -- the value of the empty prefix averaged over conditions."""
    return float(sum(mdp.condition_probs[c] * bundle.v[c][0][0] for c in range(mdp.num_conditions)))


# --- Thm: policy improvement ------------------------------------------------------

@dataclass
class ImprovementReport:
    premise_holds: bool
    conclusion_holds: bool
    value_gap: float
    min_expected_advantage: float


def verify_policy_improvement(
    mdp: TabularMDP, pi: PolicyTable, pi_tilde: PolicyTable, tol: float = 1e-12
) -> ImprovementReport:
    """Premise: E_{z~pi_tilde}[A_pi(s,z)] >= 0 at every state. Conclusion:
    E_c[V_{pi_tilde}(c)] >= E_c[V_pi(c)]. The theorem asserts the implication."""
    bundle_pi = eval_policy(mdp, pi)
    bundle_tilde = eval_policy(mdp, pi_tilde)
    min_adv = math.inf
    for c in range(mdp.num_conditions):
        for l in range(mdp.horizon):
            expected = np.sum(pi_tilde.tables[c][l] * bundle_pi.a[c][l], axis=1)
            min_adv = min(min_adv, float(expected.min()))
    gap = root_value(mdp, bundle_tilde) - root_value(mdp, bundle_pi)
    return ImprovementReport(
        premise_holds=min_adv >= -tol,
        conclusion_holds=gap >= -tol,
        value_gap=gap,
        min_expected_advantage=min_adv,
    )


def improved_policy(seed: int, mdp: TabularMDP, pi: PolicyTable) -> PolicyTable:
    """Per-state mixture of pi with the A_pi-greedy action; the mixture weight
    is drawn per state, and the premise holds by construction."""
    bundle = eval_policy(mdp, pi)
    tables = []
    for c in range(mdp.num_conditions):
        levels = []
        for l in range(mdp.horizon):
            rows = pi.tables[c][l]
            greedy = np.zeros_like(rows)
            greedy[np.arange(rows.shape[0]), np.argmax(bundle.a[c][l], axis=1)] = 1.0
            w = uniform_field(derive_key(seed, "mix", c, l), (rows.shape[0], 1))
            levels.append((1.0 - w) * rows + w * greedy)
        tables.append(tuple(levels))
    return PolicyTable(tables=tuple(tables))


# --- Bradley-Terry ------------------------------------------------------------------

def _states_along(mdp: TabularMDP, traj: Trajectory):
    """Yield (level, prefix index, frame) for each step of the trajectory."""
    idx = 0
    for l, frame in enumerate(traj.frames):
        yield l, idx, frame
        idx = idx * mdp.alphabet_size + frame


def trajectory_reward(mdp: TabularMDP, traj: Trajectory) -> float:
    """r(c, x) = sum_t gamma^(t-1) R(state before step t, frame t)."""
    if len(traj) > mdp.horizon:
        raise ShapeMismatch("trajectory longer than horizon")
    total = 0.0
    for l, idx, frame in _states_along(mdp, traj):
        total += mdp.gamma**l * mdp.rewards[traj.condition][l][idx, frame]
    return total


def _sigmoid(d: float) -> float:
    if d >= 0:
        return 1.0 / (1.0 + math.exp(-d))
    e = math.exp(d)
    return e / (1.0 + e)


def bt_prob(mdp: TabularMDP, x1: Trajectory, x2: Trajectory) -> float:
    """P(x1 beats x2) = sigma(r(c,x1) - r(c,x2)), computed in log space."""
    if x1.condition != x2.condition:
        raise ConditionMismatch(f"conditions differ: {x1.condition} vs {x2.condition}")
    return _sigmoid(trajectory_reward(mdp, x1) - trajectory_reward(mdp, x2))


def advantage_sum(mdp: TabularMDP, bundle: ValueBundle, traj: Trajectory) -> float:
    """sum_t gamma^(t-1) A(state before step t, frame t) along the trajectory."""
    total = 0.0
    for l, idx, frame in _states_along(mdp, traj):
        total += mdp.gamma**l * bundle.a[traj.condition][l][idx, frame]
    return total


@dataclass
class EquivalenceReport:
    reward_side: float
    advantage_side: float

    @property
    def abs_error(self) -> float:
        return abs(self.reward_side - self.advantage_side)


def verify_bt_equivalence(
    mdp: TabularMDP, policy: PolicyTable, x1: Trajectory, x2: Trajectory
) -> EquivalenceReport:
    """Both sides of the preference identity, computed independently: the
    reward route via bt_prob, the advantage route via exact policy values."""
    bundle = eval_policy(mdp, policy)
    return verify_bt_equivalence_with_bundle(mdp, bundle, x1, x2)


def verify_bt_equivalence_with_bundle(
    mdp: TabularMDP, bundle: ValueBundle, x1: Trajectory, x2: Trajectory
) -> EquivalenceReport:
    lhs = bt_prob(mdp, x1, x2)
    rhs = _sigmoid(advantage_sum(mdp, bundle, x1) - advantage_sum(mdp, bundle, x2))
    return EquivalenceReport(reward_side=lhs, advantage_side=rhs)


# --- KL-regularized optimal policy ----------------------------------------------------

def optimal_policy(
    mdp: TabularMDP, ref_policy: PolicyTable, beta: float
) -> tuple[PolicyTable, tuple]:
    """Closed-form maximizer pi*(z|s) proportional to ref(z|s) exp(Q_ref(s,z)/beta),
    with the partition tables Z(s; beta) returned alongside. Computed with
    log-sum-exp so large Q/beta cannot overflow."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    _check_mdp_policy(mdp, ref_policy)
    bundle = eval_policy(mdp, ref_policy)
    tables, z_tables = [], []
    for c in range(mdp.num_conditions):
        levels, z_levels = [], []
        for l in range(mdp.horizon):
            ref = ref_policy.tables[c][l]
            with np.errstate(divide="ignore"):
                logits = np.where(ref > 0, np.log(np.where(ref > 0, ref, 1.0)), -np.inf)
            logits = logits + bundle.q[c][l] / beta
            m = logits.max(axis=1, keepdims=True)
            log_z = m[:, 0] + np.log(np.sum(np.exp(logits - m), axis=1))
            levels.append(np.exp(logits - log_z[:, None]))
            z_levels.append(np.exp(log_z))
        tables.append(tuple(levels))
        z_tables.append(tuple(z_levels))
    return PolicyTable(tables=tuple(tables)), tuple(z_tables)


def _row_kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    if np.any(q[mask] <= 0):
        raise SupportViolation("q vanishes on p's support")
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def state_objective(a_row: np.ndarray, ref_row: np.ndarray, pi_row: np.ndarray, beta: float) -> float:
    """Per-state objective: E_{z~pi}[A_ref(s,z)] - beta * KL(pi || ref)."""
    return float(pi_row @ a_row) - beta * _row_kl(pi_row, ref_row)


@dataclass
class OptimalityReport:
    max_dominance_violation: float  # max over states of best perturbed obj - obj(pi*)
    max_closed_form_error: float  # |obj(pi*) - (beta log Z - V_ref)|
    num_perturbations: int


def verify_optimality(
    mdp: TabularMDP,
    ref_policy: PolicyTable,
    beta: float,
    n_perturbations: int,
    seed: int = 0,
) -> OptimalityReport:
    bundle = eval_policy(mdp, ref_policy)
    pi_star, z_tables = optimal_policy(mdp, ref_policy, beta)
    worst_violation = -math.inf
    worst_closed_form = 0.0
    for c in range(mdp.num_conditions):
        for l in range(mdp.horizon):
            a_tab = bundle.a[c][l]
            ref_tab = ref_policy.tables[c][l]
            for s in range(a_tab.shape[0]):
                best = state_objective(a_tab[s], ref_tab[s], pi_star.tables[c][l][s], beta)
                closed = beta * math.log(z_tables[c][l][s]) - bundle.v[c][l][s]
                worst_closed_form = max(worst_closed_form, abs(best - closed))
                u = uniform_field(
                    derive_key(seed, "perturb", c, l, s),
                    (n_perturbations, mdp.alphabet_size),
                )
                rows = -np.log(u)
                rows /= rows.sum(axis=1, keepdims=True)
                for row in rows:
                    worst_violation = max(
                        worst_violation,
                        state_objective(a_tab[s], ref_tab[s], row, beta) - best,
                    )
    return OptimalityReport(
        max_dominance_violation=worst_violation,
        max_closed_form_error=worst_closed_form,
        num_perturbations=n_perturbations,
    )


# --- SeqKL and the partition-offset identity ---------------------------------------------

def seq_kl(mdp: TabularMDP, traj: Trajectory, p: PolicyTable, q: PolicyTable) -> float:
    """Sum of per-state KL(p || q) over the states the trajectory visits."""
    total = 0.0
    for l, idx, _ in _states_along(mdp, traj):
        total += _row_kl(p.tables[traj.condition][l][idx], q.tables[traj.condition][l][idx])
    return total


def trajectory_log_prob(mdp: TabularMDP, policy: PolicyTable, traj: Trajectory) -> float:
    """log pi(x | c) as the sum of visited-row log probabilities."""
    total = 0.0
    for l, idx, frame in _states_along(mdp, traj):
        p = policy.tables[traj.condition][l][idx, frame]
        if p <= 0:
            return -math.inf
        total += math.log(p)
    return total


@dataclass
class OffsetReport:
    bt_reward_side: float
    sigma_u_minus_delta: float
    u: float
    delta: float

    @property
    def abs_error(self) -> float:
        return abs(self.bt_reward_side - self.sigma_u_minus_delta)


def _offset_sides(
    mdp: TabularMDP,
    ref_policy: PolicyTable,
    beta: float,
    x1: Trajectory,
    x2: Trajectory,
) -> OffsetReport:
    if x1.condition != x2.condition:
        raise ConditionMismatch("trajectories must share a condition")
    pi_star, _ = optimal_policy(mdp, ref_policy, beta)
    u = beta * (
        trajectory_log_prob(mdp, pi_star, x1)
        - trajectory_log_prob(mdp, ref_policy, x1)
        - trajectory_log_prob(mdp, pi_star, x2)
        + trajectory_log_prob(mdp, ref_policy, x2)
    )
    delta = beta * (seq_kl(mdp, x2, ref_policy, pi_star) - seq_kl(mdp, x1, ref_policy, pi_star))
    lhs = bt_prob(mdp, x1, x2)
    return OffsetReport(bt_reward_side=lhs, sigma_u_minus_delta=_sigmoid(u - delta), u=u, delta=delta)


def verify_offset(
    mdp: TabularMDP,
    ref_policy: PolicyTable,
    beta: float,
    x1: Trajectory,
    x2: Trajectory,
) -> OffsetReport:
    """Partition-offset identity at gamma = 1 with pi_theta = pi*: the
    Bradley-Terry probability from raw rewards must equal sigma(u - delta)
    computed purely from the two policy tables."""
    if mdp.gamma != 1.0:
        raise GammaNotOne(f"identity requires gamma = 1, mdp has {mdp.gamma}")
    return _offset_sides(mdp, ref_policy, beta, x1, x2)


def offset_gamma_diagnostic(
    mdp: TabularMDP, ref_policy: PolicyTable, beta: float, x1: Trajectory, x2: Trajectory
) -> OffsetReport:
    """Same construction evaluated on a gamma < 1 MDP; reported, never asserted."""
    return _offset_sides(mdp, ref_policy, beta, x1, x2)


# --- enumeration helpers ---------------------------------------------------------------

def all_trajectories(mdp: TabularMDP, condition: int, length: int | None = None):
    """Every trajectory of the given length (default: full horizon)."""
    length = mdp.horizon if length is None else length
    for frames in itertools.product(range(mdp.alphabet_size), repeat=length):
        yield Trajectory(condition=condition, frames=frames)


# --- suites ------------------------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: bool
    tolerance: float | None
    seed: int
    mdp_dims: tuple[int, int, int]
    max_abs_error: float | None = None
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "passed": bool(self.passed),
            "tolerance": self.tolerance,
            "seed": self.seed,
            "mdp_dims": list(self.mdp_dims),
        }
        if self.max_abs_error is not None:
            d["max_abs_error"] = self.max_abs_error
        if self.detail:
            d["detail"] = self.detail
        return d


def run_improvement_suite(seed: int, num_pairs: int = 500) -> list[CheckResult]:
    """Thm: zero counterexamples to (premise => conclusion) over premise-holding
    policy pairs: constructed greedy mixtures plus filtered random pairs."""
    tol = 1e-12
    checked = 0
    trials = 0
    worst_gap = math.inf
    mdp = random_mdp(seed, num_conditions=2, alphabet_size=2, horizon=3, gamma=0.9)
    counterexamples = 0
    while checked < num_pairs:
        pi = random_policy(derive_key(seed, trials), mdp)
        if trials % 2 == 0:
            pi_tilde = improved_policy(derive_key(seed, trials, 1), mdp, pi)
        else:
            pi_tilde = random_policy(derive_key(seed, trials, 2), mdp, tag="tilde")
        trials += 1
        report = verify_policy_improvement(mdp, pi, pi_tilde, tol=tol)
        if not report.premise_holds:
            continue
        checked += 1
        worst_gap = min(worst_gap, report.value_gap)
        if not report.conclusion_holds:
            counterexamples += 1
    return [
        CheckResult(
            name="policy_improvement",
            passed=counterexamples == 0,
            tolerance=tol,
            seed=seed,
            mdp_dims=mdp.dims,
            detail={"pairs_checked": checked, "min_value_gap": worst_gap, "counterexamples": counterexamples},
        )
    ]


def run_bt_suite(seed: int, num_mdps: int = 3) -> list[CheckResult]:
    """Thm: BT probability equals the sigmoid of discounted advantage sums,
    exhaustively over full-horizon trajectory pairs, at gamma = 1 and 0.9."""
    tol = 1e-10
    results = []
    for gamma in (1.0, 0.9):
        worst = 0.0
        dims = None
        for k in range(num_mdps):
            mdp = random_mdp(derive_key(seed, "bt", k), 2, 2, 3, gamma=gamma)
            dims = mdp.dims
            policy = random_policy(derive_key(seed, "bt-pi", k), mdp)
            bundle = eval_policy(mdp, policy)
            for c in range(mdp.num_conditions):
                trajs = list(all_trajectories(mdp, c))
                for x1 in trajs:
                    for x2 in trajs:
                        rep = verify_bt_equivalence_with_bundle(mdp, bundle, x1, x2)
                        worst = max(worst, rep.abs_error)
        results.append(
            CheckResult(
                name=f"bt_equivalence_gamma_{gamma}",
                passed=worst < tol,
                tolerance=tol,
                seed=seed,
                mdp_dims=dims,
                max_abs_error=worst,
                detail={"mdps": num_mdps, "exhaustive_pairs": True},
            )
        )
    # diagnostic only: unequal-horizon pairs need zero continuation value at
    # each trajectory's own end; reported for a zero-tail-reward construction
    # (holds) -- the assertion stays on full-horizon pairs above.
    mdp = random_mdp(derive_key(seed, "bt-short"), 2, 2, 4, gamma=1.0, zero_reward_from_level=2)
    policy = random_policy(derive_key(seed, "bt-short-pi"), mdp)
    bundle = eval_policy(mdp, policy)
    worst = 0.0
    for c in range(mdp.num_conditions):
        pool = [t for length in (2, 3, 4) for t in all_trajectories(mdp, c, length)]
        for x1 in pool:
            for x2 in pool:
                rep = verify_bt_equivalence_with_bundle(mdp, bundle, x1, x2)
                worst = max(worst, rep.abs_error)
    results.append(
        CheckResult(
            name="bt_equivalence_mixed_horizons_zero_tail",
            passed=worst < tol,
            tolerance=tol,
            seed=seed,
            mdp_dims=mdp.dims,
            max_abs_error=worst,
            detail={"lengths": [2, 3, 4], "zero_reward_from_level": 2},
        )
    )
    return results


def run_optimal_suite(seed: int, n_perturbations: int = 1000) -> list[CheckResult]:
    """Thm: the closed-form policy dominates every perturbed policy at every
    state, and its objective matches beta log Z - V_ref."""
    tol = 1e-10
    mdp = random_mdp(derive_key(seed, "opt"), 2, 2, 3, gamma=0.95)
    ref = random_policy(derive_key(seed, "opt-ref"), mdp)
    report = verify_optimality(mdp, ref, beta=1.0, n_perturbations=n_perturbations, seed=seed)
    results = [
        CheckResult(
            name="optimal_policy_dominance",
            passed=report.max_dominance_violation < tol,
            tolerance=tol,
            seed=seed,
            mdp_dims=mdp.dims,
            max_abs_error=max(report.max_dominance_violation, 0.0),
            detail={"perturbations_per_state": n_perturbations},
        ),
        CheckResult(
            name="optimal_policy_closed_form",
            passed=report.max_closed_form_error < tol,
            tolerance=tol,
            seed=seed,
            mdp_dims=mdp.dims,
            max_abs_error=report.max_closed_form_error,
        ),
    ]
    # large-beta limit: pi* collapses onto the reference policy
    pi_star, _ = optimal_policy(mdp, ref, beta=1e9)
    dev = max(
        float(np.max(np.abs(pi_star.tables[c][l] - ref.tables[c][l])))
        for c in range(mdp.num_conditions)
        for l in range(mdp.horizon)
    )
    results.append(
        CheckResult(
            name="optimal_policy_large_beta_limit",
            passed=dev < 1e-6,
            tolerance=1e-6,
            seed=seed,
            mdp_dims=mdp.dims,
            max_abs_error=dev,
        )
    )
    return results


def run_offset_suite(seed: int) -> list[CheckResult]:
    """Thm: BT probability equals sigma(u* - delta*) at gamma = 1, exhaustively
    over trajectory pairs; the gamma < 1 discrepancy is reported, not asserted."""
    tol = 1e-8
    mdp = random_mdp(derive_key(seed, "off"), 2, 2, 2, gamma=1.0)
    ref = random_policy(derive_key(seed, "off-ref"), mdp)
    worst = 0.0
    for c in range(mdp.num_conditions):
        trajs = list(all_trajectories(mdp, c))
        for x1 in trajs:
            for x2 in trajs:
                rep = verify_offset(mdp, ref, 1.0, x1, x2)
                worst = max(worst, rep.abs_error)
    results = [
        CheckResult(
            name="partition_offset_gamma_1",
            passed=worst < tol,
            tolerance=tol,
            seed=seed,
            mdp_dims=mdp.dims,
            max_abs_error=worst,
            detail={"beta": 1.0, "exhaustive_pairs": True},
        )
    ]
    mdp9 = random_mdp(derive_key(seed, "off9"), 2, 2, 2, gamma=0.9)
    ref9 = random_policy(derive_key(seed, "off9-ref"), mdp9)
    diag = 0.0
    for c in range(mdp9.num_conditions):
        trajs = list(all_trajectories(mdp9, c))
        for x1 in trajs:
            for x2 in trajs:
                rep = offset_gamma_diagnostic(mdp9, ref9, 1.0, x1, x2)
                diag = max(diag, rep.abs_error)
    results.append(
        CheckResult(
            name="partition_offset_gamma_0.9_diagnostic",
            passed=True,  # recorded only; the identity is proved at gamma = 1
            tolerance=None,
            seed=seed,
            mdp_dims=mdp9.dims,
            max_abs_error=diag,
            detail={"diagnostic_only": True},
        )
    )
    return results


SUITES = {
    "improvement": run_improvement_suite,
    "bt": run_bt_suite,
    "optimal": run_optimal_suite,
    "offset": run_offset_suite,
}


def run_suites(names, seed: int) -> list[CheckResult]:
    results = []
    for name in names:
        if name not in SUITES:
            raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)} or 'all'")
        results.extend(SUITES[name](seed))
    return results
