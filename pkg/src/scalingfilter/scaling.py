"""Chinchilla-form parametric loss and the quality-factor derivation checks.

The loss surface is L(N, D) = E + A/N^alpha + B/D^beta for N parameters
and D training tokens. Under a compute budget C = const * N * D the
optimal allocation follows N_opt ~ C^a, D_opt ~ C^b with a = beta/(alpha+beta)
and b = alpha/(alpha+beta). Substituting alpha = (1-a)*eta, beta = a*eta
(eta = alpha + beta) exposes the model scaling exponent a directly in the
loss, and everything this module verifies follows from that form:

* dL/dN = A*(a-1)*eta*N^((a-1)*eta - 1) < 0,
* d2L/(da dN) = A*eta*N^((a-1)*eta - 1) * (1 + (a-1)*eta*ln N), negative
  exactly where the bracket is negative (large N),
* hence the secant slope between two model sizes steepens as a grows, and
  the perplexity-ratio quality factor d = 2^(L_small - L_large) is
  strictly increasing in a on that region.

All losses are bits per token so that perplexity is 2^L.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import (
    AllocationNoConvergeError,
    ConditionRegionViolatedError,
    DuplicateSizeError,
    InvalidExponentError,
    InvalidSecantError,
    NumericRangeError,
)


@dataclass(frozen=True)
class ScalingLawParams:
    """Loss-surface parameters (E, A, B, alpha, beta) with derived exponents."""

    E: float
    A: float
    B: float
    alpha: float
    beta: float

    def __post_init__(self):
        if self.E < 0:
            raise ValueError("E must be >= 0")
        # A or B of exactly 0 is allowed: the term vanishes (degenerate surface)
        if self.A < 0 or self.B < 0:
            raise ValueError("A and B must be >= 0")
        if self.alpha <= 0 or self.beta <= 0:
            raise InvalidExponentError("alpha and beta must be > 0")

    @property
    def a(self) -> float:
        return self.beta / (self.alpha + self.beta)

    @property
    def b(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def eta(self) -> float:
        return self.alpha + self.beta


def _power_term(coeff: float, base: float, exponent: float) -> float:
    # coeff / base^exponent in log space to dodge overflow at extreme exponents
    try:
        return math.exp(math.log(coeff) - exponent * math.log(base))
    except OverflowError as exc:
        raise NumericRangeError(f"{coeff}/{base}^{exponent} overflows") from exc


def expected_loss(params: ScalingLawParams, N: float, D: float) -> float:
    """E + A/N^alpha + B/D^beta."""
    if N <= 0 or D <= 0:
        raise ValueError("N and D must be > 0")
    out = params.E
    if params.A > 0:
        out += _power_term(params.A, N, params.alpha)
    if params.B > 0:
        out += _power_term(params.B, D, params.beta)
    return out


def allocation_exponents(alpha: float, beta: float) -> tuple[float, float]:
    """Compute-optimal exponents (a, b) = (beta, alpha) / (alpha + beta)."""
    if alpha <= 0 or beta <= 0:
        raise InvalidExponentError("alpha and beta must be > 0")
    total = alpha + beta
    return beta / total, alpha / total


def reparam_loss(E: float, A: float, B: float, a: float, eta: float, N: float, D: float) -> float:
    """The loss surface written in terms of (a, eta): alpha = (1-a)*eta, beta = a*eta."""
    if not (0.0 < a < 1.0):
        raise InvalidExponentError("a must lie in (0, 1)")
    if eta <= 0:
        raise InvalidExponentError("eta must be > 0")
    return expected_loss(ScalingLawParams(E=E, A=A, B=B, alpha=(1 - a) * eta, beta=a * eta), N, D)


def dloss_dN(A: float, a: float, eta: float, N: float) -> float:
    """Analytic dL/dN = A*(a-1)*eta*N^((a-1)*eta - 1); negative for valid params."""
    if A == 0:
        return 0.0
    return A * (a - 1.0) * eta * math.exp(((a - 1.0) * eta - 1.0) * math.log(N))


def mixed_partial_bracket(a: float, eta: float, N: float) -> float:
    """The sign-determining factor 1 + (a-1)*eta*ln(N) of the mixed partial."""
    return 1.0 + (a - 1.0) * eta * math.log(N)


def d2loss_da_dN(A: float, a: float, eta: float, N: float) -> float:
    """Analytic d2L/(da dN) = A*eta*N^((a-1)*eta - 1) * (1 + (a-1)*eta*ln N)."""
    if A == 0:
        return 0.0
    prefactor = A * eta * math.exp(((a - 1.0) * eta - 1.0) * math.log(N))
    return prefactor * mixed_partial_bracket(a, eta, N)


@dataclass(frozen=True)
class SecantAnalysis:
    """Secant of the loss-vs-size curve between two model sizes at fixed D."""

    N_p: float
    N_q: float
    D: float
    L_p: float
    L_q: float
    slope: float
    d_model: float


def secant_slope(
    E: float, A: float, B: float, a: float, eta: float, N_p: float, N_q: float, D: float
) -> SecantAnalysis:
    """Secant slope (L_q - L_p) / (N_q - N_p) and the implied quality factor.

    The slope is always negative and d_model = 2^(L_p - L_q) always
    exceeds 1, since loss strictly decreases with model size.
    """
    if not (0 < N_p < N_q):
        raise InvalidSecantError(f"need 0 < N_p < N_q, got ({N_p}, {N_q})")
    L_p = reparam_loss(E, A, B, a, eta, N_p, D)
    L_q = reparam_loss(E, A, B, a, eta, N_q, D)
    slope = (L_q - L_p) / (N_q - N_p)
    return SecantAnalysis(N_p=N_p, N_q=N_q, D=D, L_p=L_p, L_q=L_q, slope=slope, d_model=2.0 ** (L_p - L_q))


@dataclass
class MonotonicityReport:
    """Grid evaluation of d_model(a) plus a strict-monotonicity verdict."""

    a_grid: list[float]
    d_values: list[float]
    passed: bool

    def to_json(self) -> dict:
        return {
            "a_grid": self.a_grid,
            "d_model": self.d_values,
            "strictly_increasing": self.passed,
        }


def verify_monotonic_d_in_a(
    E: float,
    A: float,
    B: float,
    eta: float,
    N_p: float,
    N_q: float,
    D: float,
    a_grid: Sequence[float],
) -> MonotonicityReport:
    """Check that the pair quality factor rises strictly with a over a grid.

    Precondition: the mixed-partial bracket must be negative for every grid
    a across the whole size interval [N_p, N_q]; the bracket is monotone in
    ln N, so both endpoints are checked and the offending (a, N) reported.
    """
    if not (0 < N_p < N_q):
        raise InvalidSecantError(f"need 0 < N_p < N_q, got ({N_p}, {N_q})")
    grid = [float(a) for a in a_grid]
    if any(not (0.0 < a < 1.0) for a in grid):
        raise InvalidExponentError("a_grid values must lie in (0, 1)")
    if sorted(grid) != grid:
        raise ValueError("a_grid must be sorted ascending")
    for a in grid:
        for N in (N_p, N_q):
            if mixed_partial_bracket(a, eta, N) >= 0:
                raise ConditionRegionViolatedError(
                    f"bracket 1 + (a-1)*eta*ln(N) >= 0 at a={a}, N={N}; increase N_p"
                )
    d_values = [secant_slope(E, A, B, a, eta, N_p, N_q, D).d_model for a in grid]
    passed = all(d_values[i] < d_values[i + 1] for i in range(len(d_values) - 1))
    return MonotonicityReport(a_grid=grid, d_values=d_values, passed=passed)


@dataclass(frozen=True)
class SecantRow:
    label_small: str
    label_large: str
    N_small: float
    N_large: float
    slope: float
    d: float


@dataclass
class SecantTable:
    """All pairwise secants of measured (label, N, mean loss) points."""

    rows: list[SecantRow] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"{'small':>12} {'large':>12} {'N_small':>12} {'N_large':>12} {'slope':>14} {'d':>10}"]
        for r in self.rows:
            lines.append(
                f"{r.label_small:>12} {r.label_large:>12} {r.N_small:>12.4g} "
                f"{r.N_large:>12.4g} {r.slope:>14.6e} {r.d:>10.6f}"
            )
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["label_small,label_large,N_small,N_large,slope,d"]
        for r in self.rows:
            lines.append(
                f"{r.label_small},{r.label_large},{r.N_small!r},{r.N_large!r},{r.slope!r},{r.d!r}"
            )
        return "\n".join(lines) + "\n"


def loss_vs_size_report(measured: Sequence[tuple[str, float, float]]) -> SecantTable:
    """Pairwise secant slopes and implied quality factors from measured losses."""
    if len(measured) < 2:
        raise ValueError("need at least two (label, N, loss) points")
    points = sorted(measured, key=lambda p: p[1])
    sizes = [p[1] for p in points]
    if len(set(sizes)) != len(sizes):
        raise DuplicateSizeError("measured points contain duplicate model sizes")
    table = SecantTable()
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            label_s, n_s, loss_s = points[i]
            label_l, n_l, loss_l = points[j]
            table.rows.append(
                SecantRow(
                    label_small=label_s,
                    label_large=label_l,
                    N_small=n_s,
                    N_large=n_l,
                    slope=(loss_l - loss_s) / (n_l - n_s),
                    d=2.0 ** (loss_s - loss_l),
                )
            )
    return table


def optimal_allocation(
    params: ScalingLawParams, C: float, flops_per_token_per_param: float = 6.0
) -> tuple[float, float]:
    """Loss-minimizing (N, D) under the budget C = const * N * D.

    Single-variable convex minimization over ln N; the power laws
    N_opt ~ C^a and D_opt ~ C^b are recovered empirically from sweeps
    rather than assumed.
    """
    if C <= 0:
        raise ValueError("compute budget C must be > 0")
    const = flops_per_token_per_param
    if const <= 0:
        raise ValueError("flops_per_token_per_param must be > 0")
    tokens_at_unit_n = C / const

    def objective(u: float) -> float:
        N = math.exp(u)
        return expected_loss(params, N, tokens_at_unit_n / N)

    lo = math.log(1e-12)
    hi = math.log(tokens_at_unit_n) + math.log(1e12)
    result = minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    if not result.success:
        raise AllocationNoConvergeError(f"allocation search failed: {result.message}")
    N_opt = math.exp(result.x)
    return N_opt, tokens_at_unit_n / N_opt


def allocation_power_law_fit(
    params: ScalingLawParams,
    C_values: Sequence[float],
    flops_per_token_per_param: float = 6.0,
) -> tuple[float, float]:
    """Fitted log-log slopes of N_opt and D_opt against a compute sweep."""
    if len(C_values) < 2:
        raise ValueError("need at least two compute budgets")
    log_c, log_n, log_d = [], [], []
    for C in C_values:
        N_opt, D_opt = optimal_allocation(params, C, flops_per_token_per_param)
        log_c.append(math.log(C))
        log_n.append(math.log(N_opt))
        log_d.append(math.log(D_opt))
    slope_n = float(np.polyfit(log_c, log_n, 1)[0])
    slope_d = float(np.polyfit(log_c, log_d, 1)[0])
    return slope_n, slope_d


DEFAULT_VERIFY_PARAMS = {"E": 1.69, "A": 406.4, "B": 410.7, "eta": 0.62, "a": 0.4516129032258065}


def verification_report(
    E: float = 1.69,
    A: float = 406.4,
    B: float = 410.7,
    eta: float = 0.62,
    N_p: float = 1e8,
    N_q: float = 1e9,
    D: float = 1e10,
    a_points: int = 100,
    a_lo: float = 0.1,
    a_hi: float = 0.9,
    grid_size: int = 10,
) -> dict:
    """Run every derivation check on one parameter set and report pass/fail.

    Checks: negative dL/dN on an (a, N) grid; mixed-partial sign matching
    the bracket sign exactly; finite-difference agreement for both
    derivatives; secant-to-tangent convergence; strict monotonicity of
    d_model in a.
    """
    checks: dict[str, bool] = {}
    details: dict[str, object] = {}

    a_grid = list(np.linspace(a_lo, a_hi, a_points))
    n_grid = list(np.logspace(math.log10(N_p), math.log10(N_q), grid_size))
    a_small_grid = list(np.linspace(a_lo, a_hi, grid_size))

    checks["dloss_dN_negative"] = all(
        dloss_dN(A, a, eta, N) < 0 for a in a_small_grid for N in n_grid
    )

    sign_ok = True
    for a in a_small_grid:
        for N in n_grid:
            bracket = mixed_partial_bracket(a, eta, N)
            value = d2loss_da_dN(A, a, eta, N)
            if bracket < 0 and not value < 0:
                sign_ok = False
            if bracket > 0 and not value > 0:
                sign_ok = False
    checks["mixed_partial_sign_matches_bracket"] = sign_ok

    fd_ok = True
    worst_fd = 0.0
    for a in a_small_grid:
        for N in n_grid:
            h = N * 1e-6
            fd = (
                reparam_loss(E, A, B, a, eta, N + h, D) - reparam_loss(E, A, B, a, eta, N - h, D)
            ) / (2 * h)
            analytic = dloss_dN(A, a, eta, N)
            rel = abs(fd - analytic) / abs(analytic)
            worst_fd = max(worst_fd, rel)
            ha = 1e-6
            fd2 = (dloss_dN(A, a + ha, eta, N) - dloss_dN(A, a - ha, eta, N)) / (2 * ha)
            analytic2 = d2loss_da_dN(A, a, eta, N)
            rel2 = abs(fd2 - analytic2) / abs(analytic2)
            worst_fd = max(worst_fd, rel2)
            if rel > 1e-5 or rel2 > 1e-5:
                fd_ok = False
    checks["finite_difference_agreement"] = fd_ok
    details["worst_fd_relative_error"] = worst_fd

    sec_ok = True
    worst_sec = 0.0
    for a in a_small_grid:
        gap = N_p * 1e-6
        analysis = secant_slope(E, A, B, a, eta, N_p, N_p + gap, D)
        tangent = dloss_dN(A, a, eta, N_p)
        rel = abs(analysis.slope - tangent) / abs(tangent)
        worst_sec = max(worst_sec, rel)
        if rel > 1e-4:
            sec_ok = False
    checks["secant_tangent_convergence"] = sec_ok
    details["worst_secant_relative_error"] = worst_sec

    mono = verify_monotonic_d_in_a(E, A, B, eta, N_p, N_q, D, a_grid)
    checks["d_model_monotone_in_a"] = mono.passed
    details["monotonicity"] = mono.to_json()

    return {
        "params": {"E": E, "A": A, "B": B, "eta": eta, "N_p": N_p, "N_q": N_q, "D": D},
        "checks": checks,
        "details": details,
        "passed": all(checks.values()),
    }
