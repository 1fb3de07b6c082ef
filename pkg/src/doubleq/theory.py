"""Constants, block sequences, epoch schedules and finite-time bounds.

Everything here is a pure function of its arguments. Formulas are evaluated
exactly as stated by the block-wise analysis, without absorbing constants;
``theorem_iterations`` is only a scale indicator because the theorems hide
their constants inside an Omega.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

LN2 = math.log(2.0)
DENOM_EPS = 1e-12

SYNC_KINDS = ("sync-g", "sync-d")
C_MIN_KINDS = ("sync-g", "sync-d", "async-g", "async-d")

ASYNC_PROB_TYPO_NOTE = (
    "the async D-sequence probability display writes (1-2/e) where every other "
    "display has Delta/(2+Delta); the Delta/(2+Delta) form is used here")
ASYNC_D_CMIN_NOTE = (
    "the async D-sequence lower bound on c is printed without the kappa factor its "
    "synchronous counterpart carries; it is evaluated as printed")


class TheoryDomainError(ValueError):
    """A parameter or derived quantity falls outside the region a bound needs."""


def check_kappa_delta(kappa: float, delta_slack: float, need_d: bool = True) -> None:
    """Range checks on (kappa, Delta); ``need_d`` selects the stricter D/async region."""
    if need_d:
        if not LN2 < kappa < 1.0:
            raise TheoryDomainError(f"κ must exceed ln 2 ≈ 0.6931 (and stay below 1), got kappa={kappa}")
        upper = math.exp(kappa) - 2.0
        if not 0.0 < delta_slack < upper:
            raise TheoryDomainError(
                f"Δ must lie in (0, e^κ - 2) = (0, {upper:.6g}), got delta_slack={delta_slack}")
    else:
        if not 0.0 < kappa < 1.0:
            raise TheoryDomainError(f"kappa must lie in (0, 1), got {kappa}")
        if not 0.0 < delta_slack < math.e - 2.0:
            raise TheoryDomainError(
                f"Δ must lie in (0, e - 2) = (0, {math.e - 2:.6g}), got delta_slack={delta_slack}")


@dataclass(frozen=True)
class TheoryParams:
    gamma: float
    epsilon: float
    delta: float = 0.05
    omega: float = 0.8
    kappa: float = 0.8
    delta_slack: float = 0.1
    c: float = 1.0
    covering_l: int = 1
    r_max: float = 1.0

    def validate(self, need_d: bool = True) -> "TheoryParams":
        """Check the ranges the block bounds assume.

        ``need_d`` selects the stricter conditions of the D-sequence (and of
        every asynchronous statement): kappa in (ln 2, 1), Delta < e^kappa - 2.
        The G-sequence alone only needs kappa in (0, 1), Delta < e - 2.
        """
        if not 1.0 / 3.0 < self.gamma < 1.0:
            raise TheoryDomainError(f"gamma must lie in (1/3, 1), got {self.gamma}")
        if not self.epsilon > 0:
            raise TheoryDomainError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise TheoryDomainError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0.0 < self.omega < 1.0:
            raise TheoryDomainError(f"omega must lie in (0, 1), got {self.omega}")
        if not self.c > 0:
            raise TheoryDomainError(f"c must be positive, got {self.c}")
        if int(self.covering_l) != self.covering_l or self.covering_l < 1:
            raise TheoryDomainError(f"covering_l must be a positive integer, got {self.covering_l}")
        if not self.r_max > 0:
            raise TheoryDomainError(f"r_max must be positive, got {self.r_max}")
        check_kappa_delta(self.kappa, self.delta_slack, need_d)
        return self

    def replace(self, **changes) -> "TheoryParams":
        return TheoryParams(**{**asdict(self), **changes})


@dataclass(frozen=True)
class DerivedConstants:
    v_max: float
    xi: float
    sigma: float
    beta: float
    gamma_prime: float
    gamma_dprime: float
    gamma: float
    r_max: float


def derive_constants(gamma: float, r_max: float = 1.0) -> DerivedConstants:
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if not r_max > 0:
        raise ValueError(f"r_max must be positive, got {r_max}")
    sigma = (1.0 - gamma) / (2.0 * gamma)
    return DerivedConstants(
        v_max=2.0 * r_max / (1.0 - gamma),
        xi=(1.0 - gamma) / 4.0,
        sigma=sigma,
        beta=(1.0 - gamma * (1.0 + sigma)) / 2.0,
        gamma_prime=(1.0 + gamma) / 2.0,
        gamma_dprime=gamma * (1.0 + sigma),
        gamma=gamma,
        r_max=r_max,
    )


def _check_index(k) -> None:
    if int(k) != k or k < 0:
        raise ValueError(f"sequence index must be a non-negative integer, got {k!r}")


def g_seq(q: int, consts: DerivedConstants) -> float:
    """G_q = (1 - xi)^q V_max."""
    _check_index(q)
    return (1.0 - consts.xi) ** q * consts.v_max


def d_seq(k: int, consts: DerivedConstants) -> float:
    """D_k = (1 - beta)^k V_max / sigma."""
    _check_index(k)
    return (1.0 - consts.beta) ** k * consts.v_max / consts.sigma


# --- epoch schedules ---------------------------------------------------------

@dataclass(frozen=True)
class BlockSchedule:
    tau_1: int
    step_coeff: float
    omega: float
    boundaries: tuple

    @property
    def n_blocks(self) -> int:
        return len(self.boundaries) - 1

    @property
    def end(self) -> int:
        return self.boundaries[-1]

    def block_of(self, t: int) -> int:
        """Index q with boundaries[q] <= t < boundaries[q+1], or -1 before tau_1."""
        return int(np.searchsorted(self.boundaries, t, side="right")) - 1


def _next_boundary(tau: int, step_coeff: float, omega: float) -> int:
    return tau + math.ceil(step_coeff * tau ** omega)


def step_coefficient(c: float, kappa: float, covering_l: int = 1) -> float:
    """2c/kappa synchronously; 2cL/kappa for asynchronous updates."""
    return 2.0 * c * covering_l / kappa


def epoch_schedule(tau_1: int, step_coeff: float, omega: float, n_blocks: int) -> BlockSchedule:
    """Boundaries tau_1 < tau_2 < ... < tau_{n_blocks+1} with tau_{q+1} = tau_q + ceil(step tau_q^omega)."""
    if int(tau_1) != tau_1 or tau_1 < 1:
        raise ValueError(f"tau_1 must be a positive integer, got {tau_1!r}")
    if int(n_blocks) != n_blocks or n_blocks < 1:
        raise ValueError(f"n_blocks must be a positive integer, got {n_blocks!r}")
    if not step_coeff > 0:
        raise ValueError(f"step_coeff must be positive so the schedule increases, got {step_coeff}")
    if not 0.0 < omega < 1.0:
        raise ValueError(f"omega must lie in (0, 1), got {omega}")
    taus = [int(tau_1)]
    for _ in range(int(n_blocks)):
        taus.append(_next_boundary(taus[-1], step_coeff, omega))
    return BlockSchedule(int(tau_1), float(step_coeff), float(omega), tuple(taus))


def blocks_within(tau_1: int, step_coeff: float, omega: float, max_end: int, cap: int) -> int:
    """Largest n <= cap whose schedule end tau_{n+1} stays <= max_end (at least 1)."""
    tau, n = int(tau_1), 0
    while n < cap:
        nxt = _next_boundary(tau, step_coeff, omega)
        if nxt > max_end:
            break
        tau, n = nxt, n + 1
    return max(n, 1)


# --- conditions on tau_1 and c ------------------------------------------------

def _slack_ratio(delta_slack: float) -> float:
    return delta_slack / (2.0 + delta_slack)


def _tau1_second_term(mult: float, ln_mult: float, c_eff: float, kappa: float,
                      v_max: float, scale: float, ratio: float, epsilon: float,
                      omega: float) -> float:
    base = c_eff * (c_eff + kappa) * v_max ** 2 / (kappa ** 2 * ratio ** 2 * scale ** 2 * epsilon ** 2)
    log_arg = ln_mult * base
    if log_arg <= 1.0:
        raise TheoryDomainError(
            f"log argument {log_arg:.6g} <= 1 in the tau_1 condition; the bound is vacuous")
    return (mult * base * math.log(log_arg)) ** (1.0 / omega)


def _first_term(lead: float, delta_slack: float, omega: float, label: str) -> float:
    gap = lead - math.log(2.0 + delta_slack)
    if gap <= DENOM_EPS:
        raise TheoryDomainError(
            f"{label}: {lead:g} - ln(2+Δ) = {gap:.6g} must be positive")
    return (1.0 / gap) ** (1.0 / omega)


def tau1_min_sync_g(params: TheoryParams, consts: DerivedConstants) -> float:
    params.validate(need_d=False)
    first = _first_term(1.0, params.delta_slack, params.omega, "tau_1 (sync G)")
    second = _tau1_second_term(128.0, 64.0, params.c, params.kappa, consts.v_max,
                               consts.sigma * consts.xi, _slack_ratio(params.delta_slack),
                               params.epsilon, params.omega)
    return max(first, second)


def tau1_min_sync_d(params: TheoryParams, consts: DerivedConstants) -> float:
    params.validate(need_d=True)
    first = _first_term(params.kappa, params.delta_slack, params.omega, "tau_1 (sync D)")
    second = _tau1_second_term(32.0, 16.0, params.c, params.kappa, consts.v_max,
                               consts.beta, _slack_ratio(params.delta_slack),
                               params.epsilon, params.omega)
    return max(first, second)


def tau1_min_async(params: TheoryParams, consts: DerivedConstants, which: str = "g") -> float:
    """Asynchronous tau_1 minimum; c is replaced by cL throughout."""
    params.validate(need_d=True)
    c_eff = params.c * params.covering_l
    first = _first_term(params.kappa, params.delta_slack, params.omega, f"tau_1 (async {which.upper()})")
    ratio = _slack_ratio(params.delta_slack)
    if which == "g":
        second = _tau1_second_term(128.0, 64.0, c_eff, params.kappa, consts.v_max,
                                   consts.xi * consts.sigma, ratio, params.epsilon, params.omega)
    elif which == "d":
        second = _tau1_second_term(32.0, 16.0, c_eff, params.kappa, consts.v_max,
                                   consts.beta, ratio, params.epsilon, params.omega)
    else:
        raise ValueError(f"which must be 'g' or 'd', got {which!r}")
    return max(first, second)


def c_min(kind: str, kappa: float, delta_slack: float, tau_1: float, omega: float,
          covering_l: int = 1) -> float:
    """Smallest admissible c for one of the four block conditions.

    With x = ln(2+Delta) + tau_1^-omega:
    sync-g  x / (1 - x);          sync-d  kappa x / (2 (kappa - x));
    async-g L kappa x / (2 (kappa - x));  async-d  L x / (2 (kappa - x)).
    """
    if kind not in C_MIN_KINDS:
        raise ValueError(f"unknown c_min kind {kind!r}; expected one of {C_MIN_KINDS}")
    if not tau_1 >= 1:
        raise ValueError(f"tau_1 must be at least 1, got {tau_1}")
    x = math.log(2.0 + delta_slack) + 1.0 / tau_1 ** omega
    lead = 1.0 if kind == "sync-g" else kappa
    denom = lead - x
    if denom <= DENOM_EPS:
        which = "1/(1-ln(2+Δ))" if kind == "sync-g" else "1/(κ-ln(2+Δ))"
        raise TheoryDomainError(
            f"c_min[{kind}]: denominator {lead:g} - ln(2+Δ) - 1/τ_1^ω = {denom:.3g} is not positive; "
            f"τ_1 violates the condition τ_1^ω > {which}")
    if kind == "sync-g":
        return x / denom
    if kind == "sync-d":
        return kappa * x / (2.0 * denom)
    if kind == "async-g":
        return covering_l * kappa * x / (2.0 * denom)
    return covering_l * x / (2.0 * denom)


def c_admissible(kinds, kappa: float, delta_slack: float, tau_1: float, omega: float,
                 covering_l: int = 1) -> float:
    """max of c_min over the conditions in force."""
    return max(c_min(k, kappa, delta_slack, tau_1, omega, covering_l) for k in kinds)


# --- block counts and probabilities -------------------------------------------

def m_star(gamma: float, epsilon: float, v_max: float) -> int:
    """Blocks needed for D_m <= epsilon; 0 when epsilon already reaches D_0."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    d0 = 2.0 * gamma * v_max / (1.0 - gamma)
    if epsilon >= d0:
        return 0
    return math.ceil(4.0 / (1.0 - gamma) * math.log(d0 / epsilon))


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def _failure_prob(n_or_m: int, c_eff: float, kappa: float, n_pairs: int, exponent: float) -> float:
    prefactor = 4.0 * c_eff * (n_or_m + 1) / kappa * (1.0 + 2.0 * c_eff / kappa) * n_pairs
    return _clamp01(prefactor * math.exp(-exponent))


def _exponent(which: str, c_eff: float, params: TheoryParams, consts: DerivedConstants,
              tau_1: float) -> float:
    ratio = _slack_ratio(params.delta_slack)
    k2 = params.kappa ** 2
    eps2 = params.epsilon ** 2
    tw = tau_1 ** params.omega
    v2 = consts.v_max ** 2
    if which == "g":
        return k2 * ratio ** 2 * consts.xi ** 2 * consts.sigma ** 2 * eps2 * tw / (
            64.0 * c_eff * (c_eff + params.kappa) * v2)
    if which == "d":
        return k2 * ratio ** 2 * consts.beta ** 2 * eps2 * tw / (
            16.0 * c_eff * (c_eff + params.kappa) * v2)
    raise ValueError(f"which must be 'g' or 'd', got {which!r}")


def failure_prob_sync(n_or_m: int, params: TheoryParams, consts: DerivedConstants,
                      tau_1: float, which: str, n_pairs: int) -> float:
    """The subtracted term of the synchronous block bounds, clamped to [0, 1]."""
    return _failure_prob(n_or_m, params.c, params.kappa, n_pairs,
                         _exponent(which, params.c, params, consts, tau_1))


def failure_prob_async(n_or_m: int, params: TheoryParams, consts: DerivedConstants,
                       tau_1: float, which: str, n_pairs: int) -> float:
    c_eff = params.c * params.covering_l
    return _failure_prob(n_or_m, c_eff, params.kappa, n_pairs,
                         _exponent(which, c_eff, params, consts, tau_1))


def update_deficit_prob(m: int, tau_1: float, c: float, kappa: float, omega: float,
                        covering_l: int = 1) -> float:
    """Chance that some block gets fewer than c L tau_k^omega UPDATE(A) steps (union bound)."""
    if not 0.0 < kappa < 1.0:
        raise ValueError(f"kappa must lie in (0, 1), got {kappa}")
    return _clamp01(m * math.exp(-(1.0 - kappa) ** 2 * c * covering_l * tau_1 ** omega / kappa))


def theorem_iterations_terms(params: TheoryParams, consts: DerivedConstants, s_count: int,
                             a_count: int, sync: bool) -> tuple[float, float]:
    """The two summands of the iteration-complexity expression."""
    g, eps, om = params.gamma, params.epsilon, params.omega
    v2 = consts.v_max ** 2
    l4 = 1.0 if sync else float(params.covering_l) ** 4
    l2 = 1.0 if sync else float(params.covering_l) ** 2
    lead = l4 * v2 / ((1.0 - g) ** 4 * eps ** 2)
    log_arg = s_count * a_count * l4 * v2 / ((1.0 - g) ** 5 * eps ** 2 * params.delta)
    first = max(0.0, lead * math.log(log_arg)) ** (1.0 / om)
    inner = consts.v_max / ((1.0 - g) * eps) if sync else g * consts.v_max / ((1.0 - g) * eps)
    second = max(0.0, l2 / (1.0 - g) * math.log(inner)) ** (1.0 / (1.0 - om))
    return first, second


def theorem_iterations(params: TheoryParams, consts: DerivedConstants, s_count: int,
                       a_count: int, sync: bool) -> float:
    """Scale indicator for the iterations needed to reach epsilon w.p. 1 - delta."""
    return sum(theorem_iterations_terms(params, consts, s_count, a_count, sync))


# --- numeric lemmas -----------------------------------------------------------

def prod_help_check(t1: int, t2: int, omega: float) -> tuple[float, float]:
    """prod_{i=t1}^{t2} (1 - i^-omega) against exp(-(t2 - t1) / t2^omega)."""
    if int(t1) != t1 or int(t2) != t2:
        raise ValueError("t1 and t2 must be integers")
    if t1 <= 1:
        raise ValueError(f"t1 must exceed 1 (the i=1 factor vanishes), got {t1}")
    if t2 <= t1:
        raise ValueError(f"t2 must exceed t1, got t1={t1}, t2={t2}")
    if not 0.0 < omega < 1.0:
        raise ValueError(f"omega must lie in (0, 1), got {omega}")
    i = np.arange(t1, t2 + 1, dtype=np.float64)
    product = float(np.exp(np.sum(np.log1p(-(i ** -omega)))))
    bound = math.exp(-(t2 - t1) / t2 ** omega)
    return product, bound


def tau_help_threshold(a: float, b: float) -> float:
    return 2.0 * a * b * math.log(a * b)


def tau_help_check(a: float, b: float, tau: float) -> tuple[float, float]:
    """tau^b exp(-2 tau / a) against exp(-tau / a), valid once tau >= 2ab ln(ab) > 1."""
    if not (a > 0 and b > 0):
        raise ValueError(f"a and b must be positive, got a={a}, b={b}")
    threshold = tau_help_threshold(a, b)
    if not threshold > 1:
        raise ValueError(f"2ab ln(ab) = {threshold:.6g} must exceed 1")
    if tau < threshold:
        raise ValueError(f"tau={tau} is below the threshold 2ab ln(ab) = {threshold:.6g}")
    lhs = math.exp(b * math.log(tau) - 2.0 * tau / a)
    rhs = math.exp(-tau / a)
    return lhs, rhs


def tau_help_holds(a: float, b: float, tau: float) -> bool:
    """Compare in log space so underflow cannot fake a pass."""
    tau_help_check(a, b, tau)
    return b * math.log(tau) - 2.0 * tau / a <= -tau / a + 1e-12


# --- report -------------------------------------------------------------------

def _safe(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (TheoryDomainError, ValueError) as exc:
        return {"error": str(exc)}


def bounds_report(params: TheoryParams, *, tau_1: float, n_states: int, n_actions: int,
                  n_blocks: int | None = None) -> dict:
    """Everything the theory module can say about one parameter set, as plain JSON data."""
    params.validate(need_d=False)
    consts = derive_constants(params.gamma, params.r_max)
    n_pairs = n_states * n_actions
    m = m_star(params.gamma, params.epsilon, consts.v_max)
    n = m if n_blocks is None else n_blocks
    warnings = []
    d_ok = True
    try:
        params.validate(need_d=True)
    except TheoryDomainError as exc:
        d_ok = False
        warnings.append(str(exc))
    lk = dict(kappa=params.kappa, delta_slack=params.delta_slack, tau_1=tau_1,
              omega=params.omega, covering_l=params.covering_l)
    c_mins = {k: _safe(c_min, k, **lk) for k in C_MIN_KINDS}
    for k, v in c_mins.items():
        if isinstance(v, float) and params.c < v:
            warnings.append(f"c={params.c} is below c_min[{k}]={v:.6g}")
    report = {
        "params": asdict(params),
        "tau_1": tau_1,
        "n_states": n_states,
        "n_actions": n_actions,
        "constants": asdict(consts),
        "sequences": {
            "G": [g_seq(q, consts) for q in range(n + 2)],
            "D": [d_seq(k, consts) for k in range(n + 2)],
        },
        "m_star": m,
        "c_min": c_mins,
        "sync": {
            "tau1_min_g": _safe(tau1_min_sync_g, params, consts),
            "tau1_min_d": _safe(tau1_min_sync_d, params, consts) if d_ok else None,
            "failure_prob_g": failure_prob_sync(n, params, consts, tau_1, "g", n_pairs),
            "failure_prob_d": failure_prob_sync(n, params, consts, tau_1, "d", n_pairs),
            "update_deficit_prob": update_deficit_prob(m, tau_1, params.c, params.kappa, params.omega, 1),
            "theorem_iterations": theorem_iterations(params, consts, n_states, n_actions, True),
            "step_coeff": step_coefficient(params.c, params.kappa, 1),
        },
        "async": {
            "tau1_min_g": _safe(tau1_min_async, params, consts, "g") if d_ok else None,
            "tau1_min_d": _safe(tau1_min_async, params, consts, "d") if d_ok else None,
            "failure_prob_g": failure_prob_async(n, params, consts, tau_1, "g", n_pairs),
            "failure_prob_d": failure_prob_async(n, params, consts, tau_1, "d", n_pairs),
            "update_deficit_prob": update_deficit_prob(
                m, tau_1, params.c, params.kappa, params.omega, params.covering_l),
            "theorem_iterations": theorem_iterations(params, consts, n_states, n_actions, False),
            "step_coeff": step_coefficient(params.c, params.kappa, params.covering_l),
        },
        "notes": [ASYNC_PROB_TYPO_NOTE, ASYNC_D_CMIN_NOTE,
                  "theorem_iterations values are scale indicators, not certified constants"],
        "warnings": warnings,
    }
    return report
