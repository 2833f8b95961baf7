"""Accuracy, McNemar's paired test and parameter histograms."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .core import round_half_away


@dataclass(frozen=True)
class PairedOutcomes:
    both_correct: int
    b: int  # A correct, B wrong
    c: int  # A wrong, B correct
    both_wrong: int

    @property
    def total(self) -> int:
        return self.both_correct + self.b + self.c + self.both_wrong


@dataclass(frozen=True)
class McNemarResult:
    outcomes: PairedOutcomes
    statistic: float
    p_value: float


def accuracy(report) -> float:
    correct = np.asarray(report.correct)
    if correct.size == 0:
        raise ValueError("accuracy of an empty report")
    return float(correct.sum()) / correct.size


def paired_outcomes(a_correct, b_correct) -> PairedOutcomes:
    a = np.asarray(a_correct, dtype=bool)
    b = np.asarray(b_correct, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"correctness vectors differ in length: {a.shape} vs {b.shape}")
    return PairedOutcomes(int(np.sum(a & b)), int(np.sum(a & ~b)),
                          int(np.sum(~a & b)), int(np.sum(~a & ~b)))


def chi2_sf_1dof(x: float) -> float:
    """Survival function of chi-square with one degree of freedom.

    Q(1/2, x/2), the regularized upper incomplete gamma function.
    """
    if x <= 0:
        return 1.0
    return float(special.gammaincc(0.5, x / 2.0))


def mcnemar_from_counts(b: int, c: int, exact: bool = False) -> tuple[float, float]:
    """(statistic, p-value) for discordant counts ``b`` and ``c``.

    The default is the continuity-corrected chi-square version.  With
    ``exact=True`` the p-value is the two-sided binomial test on b + c
    (reasonable when b + c < 25); the statistic is still reported.
    """
    n = b + c
    if n == 0:
        return 0.0, 1.0
    stat = (abs(b - c) - 1) ** 2 / n
    if exact:
        k = min(b, c)
        tail = sum(math.comb(n, i) for i in range(k + 1)) / 2 ** n
        return stat, min(1.0, 2.0 * tail)
    return stat, chi2_sf_1dof(stat)


def mcnemar(a_correct, b_correct, exact: bool = False) -> McNemarResult:
    out = paired_outcomes(a_correct, b_correct)
    stat, p = mcnemar_from_counts(out.b, out.c, exact)
    return McNemarResult(out, stat, p)


@dataclass
class ParamHistogram:
    alphabet: tuple[int, ...]  # {0} U type weights, sorted
    weight_counts: list  # per layer, counts aligned with alphabet
    bias_bins: tuple[int, ...]  # shared integer bins across layers
    bias_counts: list  # per layer, aligned with bias_bins

    def zero_fraction(self, layer: int) -> float:
        counts = self.weight_counts[layer]
        return counts[self.alphabet.index(0)] / sum(counts)

    def rows(self):
        for li, counts in enumerate(self.weight_counts):
            for w, n in zip(self.alphabet, counts):
                yield li + 1, "weight", w, n
        for li, counts in enumerate(self.bias_counts):
            for b, n in zip(self.bias_bins, counts):
                yield li + 1, "bias", b, n

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["layer", "kind", "bin", "count"])
            for row in self.rows():
                w.writerow(row)


def param_histogram(image) -> ParamHistogram:
    """Histogram effective weights and deployed biases of a ``DeploymentImage``.

    A ``TrainedModel`` or ``NetworkPlan`` is converted first.
    """
    from .simulate import DeploymentImage

    if not isinstance(image, DeploymentImage):
        plan = getattr(image, "plan", image)
        image = DeploymentImage.from_plan(plan)
    alphabet = tuple(sorted({0, *image.spec.axon_weights}))
    weight_counts = []
    for types, xbar in zip(image.axon_types, image.crossbars):
        w = xbar.astype(np.int64) * types.axon_weights[None, :, None]
        weight_counts.append([int(np.sum(w == a)) for a in alphabet])
    biases = [round_half_away(b).astype(np.int64) for b in image.biases]
    lo = min(int(b.min()) for b in biases)
    hi = max(int(b.max()) for b in biases)
    bins = tuple(range(lo, hi + 1))
    bias_counts = [np.bincount(b.ravel() - lo, minlength=len(bins)).tolist() for b in biases]
    return ParamHistogram(alphabet, weight_counts, bins, bias_counts)
