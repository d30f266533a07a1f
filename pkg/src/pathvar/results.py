"""Shared result containers used by both the estimator and the oracle."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class EstimateResult:
    """A Monte Carlo point estimate with its standard error.

    ``mean`` is the estimate, ``stderr`` its standard error (sample standard
    deviation of the per-sample contributions divided by sqrt(samples), or a
    jackknife error for derived statistics such as a sample variance).
    """

    mean: float
    stderr: float
    samples: int
    seed: int
    per_term: tuple[float, ...] | None = None
