"""Factorial design algebra: treatment combinations, contrasts, and
effective contrasts when some combinations are never observed.

Conventions used by every module in this package:

- A treatment combination is a length-K vector over {-1, +1}.
- Combinations are enumerated in lexicographic order with -1 before +1
  and the last factor varying fastest, so for K=2 the order is
  (-1,-1), (-1,+1), (+1,-1), (+1,+1).
- Effects are subsets of {1, ..., K} (1-based factor indices). The empty
  subset denotes the all-ones summary contrast. Effect columns are
  ordered by interaction order, then lexicographically.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, IdentificationError

MAX_FACTORS = 20


def _check_k(k: int) -> None:
    if not 2 <= k <= MAX_FACTORS:
        raise ConfigurationError(
            f"factor count must be between 2 and {MAX_FACTORS}, got {k}"
        )


def enumerate_combinations(k: int) -> np.ndarray:
    """All 2^k treatment combinations as a (2^k, k) array over {-1, +1}.

    Rows are sorted lexicographically with -1 first; the last factor
    varies fastest. Deterministic.
    """
    _check_k(k)
    grid = np.array(list(itertools.product((-1, 1), repeat=k)), dtype=np.int8)
    return grid


def combination_bits(z: np.ndarray) -> np.ndarray:
    """Map combinations (rows over {-1,+1}) to their enumeration index."""
    z = np.atleast_2d(np.asarray(z))
    k = z.shape[1]
    powers = 1 << np.arange(k - 1, -1, -1)
    return ((z > 0).astype(np.int64) @ powers).astype(np.int64)


@dataclass(frozen=True, order=True)
class Effect:
    """A factorial effect: the subset of factors whose levels multiply.

    ``members`` is a sorted tuple of 1-based factor indices; the empty
    tuple is the summary (all-ones) contrast.
    """

    members: tuple[int, ...]

    def __post_init__(self):
        m = tuple(sorted(self.members))
        if len(set(m)) != len(m) or any(i < 1 for i in m):
            raise ConfigurationError(f"invalid effect members {self.members}")
        object.__setattr__(self, "members", m)

    @property
    def order(self) -> int:
        return len(self.members)

    def label(self) -> str:
        if not self.members:
            return "summary"
        return "z" + "*z".join(str(i) for i in self.members)

    def __repr__(self):  # compact in test output
        return f"Effect({self.label()})"


SUMMARY = Effect(())


def contrast_vector(effect: Effect, k: int) -> np.ndarray:
    """Signed contrast coefficients of ``effect`` over the 2^k combinations.

    The entry for combination z is the product of z's levels over the
    effect's members; the summary effect gives all +1.
    """
    _check_k(k)
    if effect.members and effect.members[-1] > k:
        raise ConfigurationError(
            f"effect {effect.label()} references a factor beyond K={k}"
        )
    combos = enumerate_combinations(k)
    if not effect.members:
        return np.ones(combos.shape[0], dtype=np.int8)
    idx = [m - 1 for m in effect.members]
    return np.prod(combos[:, idx], axis=1).astype(np.int8)


def effect_index_set(k: int, k_prime: int) -> list[Effect]:
    """All nonempty effects of order <= k_prime, sorted by order then lex."""
    _check_k(k)
    if not 1 <= k_prime <= k:
        raise ConfigurationError(
            f"max interaction order must be in [1, {k}], got {k_prime}"
        )
    out: list[Effect] = []
    for order in range(1, k_prime + 1):
        for members in itertools.combinations(range(1, k + 1), order):
            out.append(Effect(members))
    return out


def design_matrix(k: int) -> np.ndarray:
    """The full 2^k x 2^k matrix of contrast columns.

    Column order: summary first, then all effects by order then lex.
    Columns are mutually orthogonal with squared norm 2^k.
    """
    cols = [SUMMARY] + effect_index_set(k, k)
    return np.column_stack([contrast_vector(e, k) for e in cols])


def interaction_value(z: np.ndarray, members: tuple[int, ...]) -> np.ndarray:
    """Product of the selected factor levels, rowwise; 1 for the empty set."""
    z = np.atleast_2d(np.asarray(z))
    if not members:
        return np.ones(z.shape[0])
    return np.prod(z[:, [m - 1 for m in members]], axis=1).astype(float)


@dataclass(frozen=True)
class FactorialDesign:
    """Observed/unobserved partition of a 2^k factorial with its
    effective contrasts for the retained low-order effects.

    ``effects`` lists the summary contrast followed by every effect of
    order <= k_prime. ``effective`` stacks, per effect, the contrast row
    over the *observed* combinations; for a complete design these are the
    raw +-1 contrasts, otherwise the rows of the identification matrix
    (unscaled: the 1/2^(k-1) factor is applied at estimation time).
    """

    k: int
    k_prime: int
    observed: np.ndarray
    unobserved: np.ndarray
    effects: tuple[Effect, ...]
    effective: np.ndarray
    uu_min_singular_value: float | None
    _observed_lookup: dict[int, int] = field(repr=False, hash=False, compare=False, default_factory=dict)

    def __post_init__(self):
        lookup = {int(b): i for i, b in enumerate(combination_bits(self.observed))}
        object.__setattr__(self, "_observed_lookup", lookup)

    @property
    def complete(self) -> bool:
        return self.unobserved.shape[0] == 0

    @property
    def n_observed_cells(self) -> int:
        return self.observed.shape[0]

    def observed_positions(self, z: np.ndarray) -> np.ndarray:
        """Indices of each row of ``z`` within the observed-cell ordering.

        Raises ``IdentificationError`` if any row is an unobserved cell.
        """
        bits = combination_bits(z)
        try:
            return np.array([self._observed_lookup[int(b)] for b in bits])
        except KeyError:
            bad = [tuple(r) for r, b in zip(np.atleast_2d(z), bits)
                   if int(b) not in self._observed_lookup]
            raise IdentificationError(
                f"units assigned to unobserved treatment combinations: {bad[:5]}"
            ) from None

    def effect_row(self, effect: Effect) -> np.ndarray:
        """Effective contrast coefficients of ``effect`` over observed cells."""
        try:
            pos = self.effects.index(effect)
        except ValueError:
            raise ConfigurationError(
                f"effect {effect.label()} (order {effect.order}) is outside "
                f"this design's retained set (max order {self.k_prime})"
            ) from None
        return self.effective[pos]


def full_design(k: int, k_prime: int | None = None) -> FactorialDesign:
    """A complete 2^k design retaining effects up to order ``k_prime``."""
    _check_k(k)
    if k_prime is None:
        k_prime = k
    effects = [SUMMARY] + effect_index_set(k, k_prime)
    combos = enumerate_combinations(k)
    effective = np.array([contrast_vector(e, k) for e in effects], dtype=float)
    return FactorialDesign(
        k=k,
        k_prime=k_prime,
        observed=combos,
        unobserved=combos[:0],
        effects=tuple(effects),
        effective=effective,
        uu_min_singular_value=None,
    )


def build_incomplete_design(
    k: int,
    k_prime: int,
    unobserved: np.ndarray | list,
    tol: float = 1e-8,
) -> FactorialDesign:
    """Design restricted to observed cells, with effective contrasts that
    recover the retained effects from observed cell means only.

    The full contrast matrix is partitioned by observed/unobserved rows
    and retained/negligible columns; the unobserved cell means are
    eliminated through the negligible contrasts, which requires the
    unobserved-by-negligible block to have full row rank (checked via its
    singular values against ``tol`` times the largest one).
    """
    _check_k(k)
    if not 1 <= k_prime <= k:
        raise ConfigurationError(f"max interaction order must be in [1, {k}]")

    combos = enumerate_combinations(k)
    unobs = np.asarray(unobserved, dtype=np.int8).reshape(-1, k) if len(unobserved) else combos[:0]
    if unobs.size and not np.all(np.isin(unobs, (-1, 1))):
        raise ConfigurationError("unobserved combinations must be coded -1/+1")
    unobs_bits = set(int(b) for b in combination_bits(unobs)) if unobs.size else set()
    if unobs.size and len(unobs_bits) != unobs.shape[0]:
        raise ConfigurationError("duplicate unobserved combinations")

    all_bits = combination_bits(combos)
    obs_mask = np.array([int(b) not in unobs_bits for b in all_bits])
    observed = combos[obs_mask]
    unobs_sorted = combos[~obs_mask]

    retained = [SUMMARY] + effect_index_set(k, k_prime)
    negligible = [e for e in effect_index_set(k, k) if e.order > k_prime]
    q_u = unobs_sorted.shape[0]
    q_minus = len(negligible)
    if q_u > q_minus:
        raise IdentificationError(
            f"{q_u} unobserved combinations exceed the {q_minus} negligible "
            f"contrasts of order above {k_prime}; the retained effects are "
            "not identified"
        )

    g = design_matrix(k).astype(float)
    col_index = {e: i for i, e in enumerate([SUMMARY] + effect_index_set(k, k))}
    ret_cols = [col_index[e] for e in retained]
    neg_cols = [col_index[e] for e in negligible]

    g_oo = g[np.ix_(obs_mask.nonzero()[0], ret_cols)]
    if q_u == 0:
        effective = g_oo.T.copy()
        min_sv = None
    else:
        g_ou = g[np.ix_((~obs_mask).nonzero()[0], ret_cols)]
        g_uo = g[np.ix_(obs_mask.nonzero()[0], neg_cols)]
        g_uu = g[np.ix_((~obs_mask).nonzero()[0], neg_cols)]
        sv = np.linalg.svd(g_uu, compute_uv=False)
        min_sv = float(sv[-1]) if sv.size else 0.0
        if sv.size == 0 or min_sv < tol * sv[0]:
            raise IdentificationError(
                "unobserved cells cannot be eliminated: the "
                "unobserved-by-negligible contrast block is rank deficient "
                f"(min singular value {min_sv:.2e}) for unobserved set "
                f"{[tuple(r) for r in unobs_sorted]}"
            )
        # pseudoinverse with the same relative singular-value cutoff
        uu_t_pinv = np.linalg.pinv(g_uu.T, rcond=tol)
        effective = g_oo.T - g_ou.T @ uu_t_pinv @ g_uo.T
    return FactorialDesign(
        k=k,
        k_prime=k_prime,
        observed=observed,
        unobserved=unobs_sorted,
        effects=tuple(retained),
        effective=effective,
        uu_min_singular_value=min_sv,
    )
