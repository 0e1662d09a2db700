"""Factorial-effect estimators, their variance, and balance diagnostics.

The weighting point estimate for an effect contrasts the weighted outcome
mass on the positive and negative sides of the effect's (possibly
effective) contrast. Its asymptotic variance is estimated from the
stacked estimating equation of the dual multipliers and the effect,
plugging the fitted multipliers into the sandwich form; only the last
coordinate of the sandwich is needed, which reduces to a single weighted
sum of squares.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .balance import BalanceSystem, balance_residuals, membership_vectors
from .data import Dataset
from .design import Effect, FactorialDesign, interaction_value
from .errors import BaselineError, ConfigurationError, VarianceError

Z_CRIT_95 = 1.96


@dataclass(frozen=True)
class EffectEstimate:
    """Point estimate with variance of sqrt(N)(tau_hat - tau) and 95% CI."""

    effect: Effect
    tau_hat: float
    sigma2_hat: float | None
    ci_low: float | None
    ci_high: float | None
    n: int


def _check_effect(effect: Effect, design: FactorialDesign) -> None:
    if effect.order > design.k_prime:
        raise ConfigurationError(
            f"effect {effect.label()} has order {effect.order}, above the "
            f"design's retained order {design.k_prime}"
        )


def _contrast_coeffs(dataset: Dataset, effect: Effect, design: FactorialDesign) -> np.ndarray:
    a_plus, a_minus = membership_vectors(effect, dataset.Z, design)
    return a_plus - a_minus


def estimate_effect(
    dataset: Dataset,
    weights: np.ndarray,
    effect: Effect,
    design: FactorialDesign,
) -> EffectEstimate:
    """Weighting point estimate (no variance) of one factorial effect."""
    _check_effect(effect, design)
    w = np.asarray(weights, dtype=float).ravel()
    c = _contrast_coeffs(dataset, effect, design)
    tau = float(np.mean(w * c * dataset.Y))
    return EffectEstimate(effect, tau, None, None, None, dataset.n)


def variance_estimate(
    dataset: Dataset,
    weights: np.ndarray,
    lam: np.ndarray,
    system: BalanceSystem,
    effect: Effect,
    min_eigenvalue: float = 1e-10,
) -> float:
    """Consistent estimate of the asymptotic variance of sqrt(N)(tau_hat - tau).

    Builds the per-unit estimating-equation residuals (dual gradient
    contributions stacked with the centered effect contribution) and
    contracts them with the last row of the inverted curvature matrix.
    Raises ``VarianceError`` when that matrix is numerically singular,
    which typically means the system retains linearly dependent rows.
    """
    _check_effect(effect, system.design)
    B = system.B
    n = system.n
    w = np.asarray(weights, dtype=float).ravel()
    lam = np.asarray(lam, dtype=float).ravel()
    u = B.T @ lam
    active = u < 0

    c = _contrast_coeffs(dataset, effect, system.design)
    s_i = w * c * dataset.Y
    tau = float(np.mean(s_i))

    B_act = B[:, active]
    M = (B_act @ B_act.T) * (-0.5) / n
    M = 0.5 * (M + M.T)
    A = -M  # positive semidefinite curvature
    evals, evecs = np.linalg.eigh(A)
    if evals.min() < min_eigenvalue:
        raise VarianceError(
            f"curvature matrix is singular (min eigenvalue {evals.min():.2e}); "
            "rebuild the balance system with drop_redundant=True or inspect "
            "row rank diagnostics"
        )
    cond = evals.max() / evals.min()
    if cond > 1e10:
        warnings.warn(
            f"curvature matrix is ill-conditioned (cond {cond:.2e}); "
            "variance estimate may be unstable",
            stacklevel=2,
        )
    r = -0.5 / n * (B_act @ (c[active] * dataset.Y[active]))
    # first block of L: r' M^{-1} = -(r' A^{-1})
    l1 = -(evecs @ ((evecs.T @ r) / evals))

    # psi'_i = B_i w_i - b_i stacked with the centered effect contribution
    psi = B * w - system.unit_targets
    contrib = psi.T @ l1 - (s_i - tau)
    return float(np.mean(contrib**2))


def weighted_estimates(
    dataset: Dataset,
    system: BalanceSystem,
    weights: np.ndarray,
    lam: np.ndarray,
    effects: list[Effect],
) -> list[EffectEstimate]:
    """Point estimates, variances and normal 95% CIs for several effects."""
    out = []
    for e in effects:
        point = estimate_effect(dataset, weights, e, system.design)
        s2 = variance_estimate(dataset, weights, lam, system, e)
        half = Z_CRIT_95 * np.sqrt(s2 / dataset.n)
        out.append(
            EffectEstimate(
                e, point.tau_hat, s2, point.tau_hat - half, point.tau_hat + half, dataset.n
            )
        )
    return out


def fit_outcome_coeffs(dataset: Dataset, system: BalanceSystem) -> np.ndarray:
    """Least-squares coefficients of the outcome on the balanced functions."""
    Q = system.element_values.T  # N x E
    coef, *_ = np.linalg.lstsq(Q, dataset.Y, rcond=None)
    return coef


def augmented_estimate(
    dataset: Dataset,
    weights: np.ndarray,
    system: BalanceSystem,
    effect: Effect,
    ols_coeffs_on_q: np.ndarray,
) -> float:
    """Regression-augmented weighting estimate of one effect.

    Weights the outcome residuals from a linear fit on the balanced
    functions and adds back the model's randomized-design contrast. When
    the weights balance those functions exactly this equals the plain
    weighting estimate for any coefficient vector; if the residual is too
    large for that guarantee a warning is issued.
    """
    _check_effect(effect, system.design)
    w = np.asarray(weights, dtype=float).ravel()
    alpha = np.asarray(ols_coeffs_on_q, dtype=float).ravel()
    if alpha.shape[0] != len(system.elements):
        raise ConfigurationError(
            f"expected {len(system.elements)} coefficients, got {alpha.shape[0]}"
        )
    report = balance_residuals(w, system)
    if report.max_abs > 1e-8 * (1.0 + float(np.max(np.abs(system.b)))):
        warnings.warn(
            "weights do not balance the basis exactly "
            f"(max residual {report.max_abs:.2e}); augmented and plain "
            "estimates may differ",
            stacklevel=2,
        )

    design = system.design
    k = design.k
    fitted = system.element_values.T @ alpha  # q(X_i, Z_i)' alpha
    resid = dataset.Y - fitted

    a_plus, a_minus = membership_vectors(effect, dataset.Z, design)
    n = dataset.n

    # randomized-design contrast of the fitted model:
    # (1/2^(k-1) N) sum_z g_z sum_i alpha' q(X_i, z), summed over observed z
    g_row = (
        np.ones(design.n_observed_cells)
        if effect.members == ()
        else design.effect_row(effect)
    )
    basis_sums = system.basis_values.sum(axis=0)
    model_term = 0.0
    for (s, J), a in zip(system.elements, alpha):
        r_vals = interaction_value(design.observed, J)
        model_term += a * basis_sums[s] * float(g_row @ r_vals)
    model_term /= 2 ** (k - 1) * n

    tau_w_resid = float(np.mean(w * (a_plus - a_minus) * resid))
    return tau_w_resid + model_term


def unadjusted_baseline(dataset: Dataset, effect: Effect) -> float:
    """Mean outcome difference between the two levels of a single factor."""
    if effect.order != 1:
        raise BaselineError("the unadjusted baseline is defined for single factors")
    k = effect.members[0]
    if k > dataset.k:
        raise BaselineError(f"factor {k} outside the dataset's {dataset.k} factors")
    zk = dataset.Z[:, k - 1]
    pos = zk == 1
    if not pos.any() or pos.all():
        raise BaselineError(f"factor {k} has an empty level group")
    return float(dataset.Y[pos].mean() - dataset.Y[~pos].mean())


def ols_regression_baseline(
    dataset: Dataset, effect_set: list[Effect]
) -> dict[Effect, float]:
    """Twice the least-squares coefficient of each effect's product term.

    Regresses the outcome on an intercept, the raw covariates and the
    factor products named in ``effect_set``.
    """
    cols = [np.ones(dataset.n), *dataset.X.T]
    for e in effect_set:
        if e.order == 0:
            raise BaselineError("effect set must contain nonempty effects")
        cols.append(interaction_value(dataset.Z, e.members))
    M = np.column_stack(cols)
    coef, _, rank, _ = np.linalg.lstsq(M, dataset.Y, rcond=None)
    if rank < M.shape[1]:
        raise BaselineError(
            f"regression design matrix is rank deficient ({rank} < {M.shape[1]})"
        )
    offset = 1 + dataset.d
    return {e: 2.0 * float(coef[offset + j]) for j, e in enumerate(effect_set)}


@dataclass(frozen=True)
class SmdRow:
    """Standardized mean difference of one covariate on one effect's contrast."""

    effect: Effect
    covariate: int
    before: float | None
    after: float | None
    skipped: bool = False


def smd_report(
    dataset: Dataset,
    weights: np.ndarray,
    effect_set: list[Effect],
    design: FactorialDesign,
) -> list[SmdRow]:
    """Absolute standardized mean differences before and after weighting.

    For each effect the two contrast sides are compared through their
    membership-weighted covariate sums scaled by the design side mass N/2,
    against the overall unweighted standard deviation; the before column
    uses unit weights, so unweighted data reproduces it exactly.
    Covariates with zero standard deviation are flagged and skipped.
    """
    w = np.asarray(weights, dtype=float).ravel()
    if w.shape[0] != dataset.n:
        raise ConfigurationError(
            f"weights have length {w.shape[0]}, expected {dataset.n}"
        )
    half_n = dataset.n / 2.0
    sds = dataset.X.std(axis=0, ddof=1)
    out: list[SmdRow] = []
    for e in effect_set:
        a_plus, a_minus = membership_vectors(e, dataset.Z, design)
        contrast = a_plus - a_minus
        for j in range(dataset.d):
            if sds[j] <= 0:
                out.append(SmdRow(e, j, None, None, skipped=True))
                continue
            x = dataset.X[:, j]
            before = abs(float(contrast @ x)) / (half_n * sds[j])
            after = abs(float((w * contrast) @ x)) / (half_n * sds[j])
            out.append(SmdRow(e, j, before, after))
    return out
