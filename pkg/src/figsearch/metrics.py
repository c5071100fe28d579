"""Classification accuracy, confusion matrices, ideation evaluation scores,
and one-way ANOVA.

The F-distribution tail is computed from a continued-fraction regularized
incomplete beta so the statistical contract has no numerical-library
dependence; tests cross-check it against an independent reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


def accuracy(predictions, truths) -> float:
    """Fraction of matching labels."""
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.shape != truths.shape or predictions.ndim != 1:
        raise ParameterError("predictions and truths must be equal-length 1-D")
    if predictions.size == 0:
        raise ParameterError("empty input")
    return float((predictions == truths).mean())


@dataclass(frozen=True)
class ConfusionMatrix:
    """K x K counts; rows are true classes, columns predicted."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total

    def normalized(self) -> np.ndarray:
        """Row-normalized view; all-zero rows stay all-zero."""
        counts = self.counts.astype(np.float64)
        sums = counts.sum(axis=1, keepdims=True)
        return np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)


def confusion(predictions, truths, k: int) -> ConfusionMatrix:
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.shape != truths.shape or predictions.ndim != 1:
        raise ParameterError("predictions and truths must be equal-length 1-D")
    if predictions.size == 0:
        raise ParameterError("empty input")
    for arr in (predictions, truths):
        if arr.min() < 0 or arr.max() >= k:
            raise ParameterError(f"labels out of range [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (truths, predictions), 1)
    return ConfusionMatrix(counts=counts)


# --------------------------------------------------------------------------
# ideation evaluation score
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalGroup:
    """A named retrieval set with per-evaluator selection marks.

    marks has one row per evaluator and one column per figure; an entry is
    True when that evaluator selected that figure.
    """

    name: str
    marks: np.ndarray

    def __post_init__(self):
        marks = np.asarray(self.marks, dtype=bool)
        if marks.ndim != 2 or marks.shape[0] < 1 or marks.shape[1] < 1:
            raise ParameterError("marks must be a non-empty (M, N) boolean array")
        object.__setattr__(self, "marks", marks)

    @property
    def n_evaluators(self) -> int:
        return self.marks.shape[0]

    @property
    def n_figures(self) -> int:
        return self.marks.shape[1]

    @property
    def marked_count(self) -> int:
        return int(self.marks.sum())


def eval_score(group: EvalGroup) -> float:
    """Fraction of possible marks the group received: K / (N * M).

    Dividing by the group size times the evaluator count makes scores
    comparable between groups of different sizes.
    """
    return group.marked_count / (group.n_figures * group.n_evaluators)


def make_marks(name: str, n_figures: int, n_evaluators: int, rate: float,
               seed: int) -> EvalGroup:
    """Synthetic evaluator marks with a fixed selection probability."""
    if not 0.0 <= rate <= 1.0:
        raise ParameterError("rate must be in [0, 1]")
    rng = np.random.default_rng([seed, 97])
    return EvalGroup(name=name,
                     marks=rng.random((n_evaluators, n_figures)) < rate)


def per_figure_scores(group: EvalGroup) -> np.ndarray:
    """Fraction of evaluators that marked each figure (one sample per figure)."""
    return group.marks.mean(axis=0)


def marks_anova(groups: list[EvalGroup]) -> "AnovaResult":
    """One-way ANOVA comparing groups on their per-figure mark fractions.

    This is the single grouping convention shared by the offline report and
    the query service, so both produce identical statistics for the same
    marks.
    """
    return anova_oneway([per_figure_scores(g) for g in groups])


# --------------------------------------------------------------------------
# one-way ANOVA with a self-contained F upper tail
# --------------------------------------------------------------------------

def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Lentz evaluation of the incomplete-beta continued fraction."""
    max_iter = 400
    eps = 3e-14
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ParameterError("beta parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    # converge fast on whichever side of the mean x falls
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def f_upper_tail(f_stat: float, df1: float, df2: float) -> float:
    """P[F >= f_stat] for an F(df1, df2) variable."""
    if f_stat <= 0.0:
        return 1.0
    x = df2 / (df2 + df1 * f_stat)
    return betainc_regularized(df2 / 2.0, df1 / 2.0, x)


@dataclass(frozen=True)
class AnovaResult:
    f_stat: float
    p_value: float
    df_between: int
    df_within: int
    ss_between: float
    ss_within: float
    ms_between: float
    ms_within: float
    degenerate: bool = False


def anova_oneway(groups) -> AnovaResult:
    """Standard between/within mean-square ratio over k groups.

    Zero within-group variance with nonzero between-group variance is
    reported as p = 0 with the degenerate flag rather than an error.
    """
    samples = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(samples) < 2:
        raise ParameterError("need at least 2 groups")
    if any(s.size < 1 for s in samples):
        raise ParameterError("every group needs at least one sample")
    if any(not np.all(np.isfinite(s)) for s in samples):
        raise ParameterError("samples must be finite")
    n_total = sum(s.size for s in samples)
    k = len(samples)
    df_between = k - 1
    df_within = n_total - k
    if df_within < 1:
        raise ParameterError("need at least one within-group degree of freedom")
    grand = np.concatenate(samples).mean()
    ss_between = float(sum(s.size * (s.mean() - grand) ** 2 for s in samples))
    ss_within = float(sum(((s - s.mean()) ** 2).sum() for s in samples))
    ms_between = ss_between / df_between
    ms_within = ss_within / df_within
    if ms_within == 0.0:
        if ss_between == 0.0:
            return AnovaResult(0.0, 1.0, df_between, df_within,
                               ss_between, ss_within, ms_between, 0.0,
                               degenerate=True)
        return AnovaResult(math.inf, 0.0, df_between, df_within,
                           ss_between, ss_within, ms_between, 0.0,
                           degenerate=True)
    f_stat = ms_between / ms_within
    return AnovaResult(f_stat, f_upper_tail(f_stat, df_between, df_within),
                       df_between, df_within, ss_between, ss_within,
                       ms_between, ms_within)


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

def _format_matrix(matrix: np.ndarray) -> str:
    return "\n".join("  " + " ".join(f"{v:6.3f}" for v in row) for row in matrix)


def format_report(aux_accuracy=None, main_accuracy=None,
                  aux_confusion: ConfusionMatrix | None = None,
                  main_confusion: ConfusionMatrix | None = None,
                  groups: list[EvalGroup] | None = None,
                  anova: AnovaResult | None = None) -> str:
    """Structured text report: accuracies, row-normalized confusion matrices
    (3 decimals), S scores, and the ANOVA table."""
    lines = ["== classification =="]
    if aux_accuracy is not None:
        lines.append(f"auxiliary task accuracy: {aux_accuracy:.4f}")
    if main_accuracy is not None:
        lines.append(f"main task accuracy: {main_accuracy:.4f}")
    if aux_confusion is not None:
        lines.append("confusion (auxiliary, row-normalized):")
        lines.append(_format_matrix(aux_confusion.normalized()))
    if main_confusion is not None:
        lines.append("confusion (main, row-normalized):")
        lines.append(_format_matrix(main_confusion.normalized()))
    if groups:
        lines.append("")
        lines.append("== evaluation scores ==")
        for g in groups:
            lines.append(
                f"group {g.name}: S = {eval_score(g):.4f} "
                f"(K={g.marked_count}, N={g.n_figures}, M={g.n_evaluators})")
    if anova is not None:
        lines.append("")
        lines.append("== one-way ANOVA ==")
        lines.append(f"{'source':<9}{'SS':>12}{'df':>6}{'MS':>12}{'F':>12}{'p':>14}")
        lines.append(f"{'between':<9}{anova.ss_between:>12.4f}{anova.df_between:>6}"
                     f"{anova.ms_between:>12.4f}{anova.f_stat:>12.4f}"
                     f"{anova.p_value:>14.4e}")
        lines.append(f"{'within':<9}{anova.ss_within:>12.4f}{anova.df_within:>6}"
                     f"{anova.ms_within:>12.4f}")
        if anova.degenerate:
            lines.append("note: degenerate within-group variance")
    return "\n".join(lines) + "\n"
