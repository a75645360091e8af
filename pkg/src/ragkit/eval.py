"""Answer scoring and the experiment runner.

Exact Match and F1 follow the SQuAD/DPR convention: answers are lowercased,
stripped of punctuation and of the articles a/an/the, and whitespace is
collapsed, before comparison. F1 is counted token overlap, maximized over
the gold answers.

The experiment runner takes the four essentials (systems, topics, gold
answers, measures) and evaluates every system over every topic. Pipelines
that start with the same stages share that work: the longest common prefix
runs once and its output feeds each system's residual suffix, which cannot
change any score because transformers are pure and frames immutable.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
import string
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

from scipy import stats as _scipy_stats

from .errors import (
    EmptyGold,
    LengthMismatch,
    MissingGold,
    TooFewSamples,
    TypeMismatch,
)
from .frame import Frame, SemType, validate
from .transformer import (
    Signature,
    TERMINAL,
    Transformer,
    chain,
    components,
    identity,
    run,
    type_check,
)

_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(s: str) -> str:
    """Lowercase, drop punctuation, drop standalone articles, collapse
    whitespace. Idempotent."""
    s = s.lower()
    s = s.translate(_PUNCT_TABLE)
    s = _ARTICLE_RE.sub(" ", s)
    return " ".join(s.split())


def exact_match(qanswer: str, ganswers: Sequence[str]) -> float:
    """1.0 iff the normalized answer equals some normalized gold answer."""
    if not ganswers:
        raise EmptyGold()
    norm = normalize_answer(qanswer)
    return 1.0 if any(norm == normalize_answer(g) for g in ganswers) else 0.0


def f1(qanswer: str, ganswers: Sequence[str]) -> float:
    """Counted token-overlap F1, maximized over the gold answers."""
    if not ganswers:
        raise EmptyGold()
    pred = normalize_answer(qanswer).split()
    best = 0.0
    for g in ganswers:
        gold = normalize_answer(g).split()
        if not pred and not gold:
            best = max(best, 1.0)
            continue
        overlap = sum((Counter(pred) & Counter(gold)).values())
        if overlap == 0:
            continue
        precision = overlap / len(pred)
        recall = overlap / len(gold)
        best = max(best, 2 * precision * recall / (precision + recall))
    return best


@dataclass(frozen=True)
class Measure:
    """Per-query scoring function in [0, 1]; aggregation is always the
    arithmetic mean over the topics."""

    name: str
    per_query: Callable[[str, Sequence[str]], float]


EM = Measure("EM", exact_match)
F1 = Measure("F1", f1)

MEASURES = {"em": EM, "f1": F1}


def resolve_measures(measures: Sequence) -> list[Measure]:
    out = []
    for m in measures:
        if isinstance(m, Measure):
            out.append(m)
        elif isinstance(m, str) and m.lower() in MEASURES:
            out.append(MEASURES[m.lower()])
        else:
            valid = ", ".join(sorted(MEASURES))
            raise ValueError(f"unknown measure {m!r}; valid measures: {valid}")
    return out


# -- significance ---------------------------------------------------------------


def paired_ttest(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sided paired t-test p-value over aligned per-query scores.

    Degenerate cases are total by convention: all differences exactly zero
    gives 1.0; zero variance with nonzero mean gives 0.0 (the t statistic
    diverges).
    """
    if len(a) != len(b):
        raise LengthMismatch(len(a), len(b))
    n = len(a)
    if n < 2:
        raise TooFewSamples(n)
    diffs = [x - y for x, y in zip(a, b)]
    if all(d == 0 for d in diffs):
        return 1.0
    mean = sum(diffs) / n
    var = sum((d - mean) ** 2 for d in diffs) / (n - 1)
    if var == 0:
        return 0.0
    t = mean / math.sqrt(var / n)
    return 2 * float(_scipy_stats.t.sf(abs(t), n - 1))


def bonferroni(pvalues: Sequence[float]) -> list[float]:
    m = len(pvalues)
    return [min(1.0, p * m) for p in pvalues]


def holm(pvalues: Sequence[float]) -> list[float]:
    """Holm step-down adjustment; uniformly at most Bonferroni."""
    m = len(pvalues)
    order = sorted(range(m), key=lambda i: pvalues[i])
    adjusted = [0.0] * m
    running = 0.0
    for pos, i in enumerate(order):
        running = max(running, (m - pos) * pvalues[i])
        adjusted[i] = min(1.0, running)
    return adjusted


CORRECTIONS = {"bonferroni": bonferroni, "holm": holm}


# -- prefix sharing ---------------------------------------------------------------


@dataclass
class PrefixPlan:
    """The longest pipeline prefix shared by every system, plus per-system
    residuals. Composing shared_prefix with a suffix reproduces that
    system's original pipeline, structurally."""

    shared_prefix: Transformer | None
    suffixes: list[Transformer]


def common_prefix(pipelines: Sequence[Transformer]) -> PrefixPlan:
    """Longest common component prefix under structural equality.

    Each pipeline's `then` spine is flattened into a component sequence;
    non-sequential composites (score combination, union, cutoff) are atomic
    units. A system equal to the whole prefix gets an identity suffix.
    """
    if not pipelines:
        raise ValueError("need at least one pipeline")
    seqs = [components(p) for p in pipelines]
    keys = [[c._key() for c in seq] for seq in seqs]
    limit = min(len(k) for k in keys)
    shared = 0
    while shared < limit and all(k[shared] == keys[0][shared] for k in keys):
        shared += 1
    # a terminal stage cannot feed a suffix, so never share through one
    while shared > 0 and type_check(chain(seqs[0][:shared])).output is TERMINAL:
        shared -= 1
    if shared == 0:
        return PrefixPlan(None, list(pipelines))
    prefix = chain(seqs[0][:shared])
    mid_type = type_check(prefix).output
    suffixes = [
        chain(seq[shared:]) if len(seq) > shared else identity(mid_type)
        for seq in seqs
    ]
    return PrefixPlan(prefix, suffixes)


# -- experiment -------------------------------------------------------------------


@dataclass
class ExperimentReport:
    systems: list[str]
    measures: list[str]
    aggregates: dict[str, dict[str, float]]
    per_query: dict[str, dict[str, dict[str, float]]]
    significance: dict[str, dict[str, float]] = field(default_factory=dict)
    baseline: str | None = None
    correction: str | None = None
    warnings: list[str] = field(default_factory=list)
    timing: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "systems": self.systems,
            "measures": self.measures,
            "aggregates": self.aggregates,
            "per_query": self.per_query,
            "significance": self.significance,
            "baseline": self.baseline,
            "correction": self.correction,
            "warnings": self.warnings,
            "timing": self.timing,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def table(self) -> str:
        """Aligned plain-text table: one row per system, one column per
        measure, p-value columns when a baseline was set."""
        headers = ["system"] + list(self.measures)
        p_cols = []
        if self.baseline is not None:
            p_cols = [f"p({m})" for m in self.measures]
            headers += p_cols
        rows = []
        for name in self.systems:
            row = [name]
            row += [f"{self.aggregates[name][m]:.4f}" for m in self.measures]
            if self.baseline is not None:
                if name == self.baseline:
                    row += ["baseline" for _ in self.measures]
                else:
                    row += [
                        f"{self.significance[name][m]:.4f}" for m in self.measures
                    ]
            rows.append(row)
        widths = [
            max(len(headers[i]), *(len(r[i]) for r in rows)) if rows else len(headers[i])
            for i in range(len(headers))
        ]
        lines = [
            "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
            "  ".join("-" * w for w in widths),
        ]
        for r in rows:
            lines.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(r)))
        return "\n".join(lines)

    def per_query_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["system", "qid", "measure", "score"])
        for system in self.systems:
            for qid, scores in self.per_query[system].items():
                for measure in self.measures:
                    writer.writerow([system, qid, measure, repr(scores[measure])])
        return buf.getvalue()


def _chunks(rows: Sequence[dict], size: int | None) -> list[list[dict]]:
    if size is None:
        return [list(rows)]
    if size < 1:
        raise ValueError(f"batch_size must be >= 1, got {size}")
    return [list(rows[i:i + size]) for i in range(0, len(rows), size)]


def experiment(
    systems: Sequence[tuple[str, Transformer]],
    topics: Frame,
    gold: Frame,
    measures: Sequence = (EM, F1),
    baseline: int | str | None = None,
    batch_size: int | None = None,
    correction: str | None = None,
    share_prefix: bool = True,
) -> ExperimentReport:
    """Evaluate question-answering systems over a topic set.

    systems are (name, pipeline) pairs; every pipeline must type-check to
    Q -> A. Every topic qid needs a gold row. baseline (name or index)
    turns on paired t-tests of each other system against it, per measure;
    correction ("holm" or "bonferroni") adjusts those p-values per measure
    across systems. share_prefix=False evaluates each pipeline
    independently; scores are identical either way, only the work differs.
    """
    names = [name for name, _ in systems]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate system names: {names}")
    pipelines = [p for _, p in systems]
    for name, p in systems:
        sig = type_check(p)
        if sig.input is not SemType.Q or sig.output is not SemType.A:
            raise TypeMismatch(
                Signature(SemType.Q, SemType.A), sig, f"system {name!r}"
            )
    measure_list = resolve_measures(measures)
    measure_names = [m.name for m in measure_list]
    validate(topics, SemType.Q)
    validate(gold, SemType.GA)
    golds = {row["qid"]: list(row["ganswer"]) for row in gold.rows}
    for row in topics.rows:
        if row["qid"] not in golds:
            raise MissingGold(row["qid"])
    baseline_name = None
    if baseline is not None:
        if isinstance(baseline, int):
            baseline_name = names[baseline]
        elif baseline in names:
            baseline_name = baseline
        else:
            raise ValueError(f"baseline {baseline!r} is not a system name: {names}")
    if correction is not None and correction not in CORRECTIONS:
        valid = ", ".join(sorted(CORRECTIONS))
        raise ValueError(f"unknown correction {correction!r}; valid: {valid}")

    if share_prefix:
        plan = common_prefix(pipelines)
    else:
        plan = PrefixPlan(None, list(pipelines))

    answers: dict[str, dict[str, str]] = {name: {} for name in names}
    timing = {name: 0.0 for name in names}
    timing["_shared_prefix"] = 0.0
    for chunk in _chunks(topics.rows, batch_size):
        chunk_frame = Frame(SemType.Q, chunk)
        if plan.shared_prefix is not None:
            t0 = time.perf_counter()
            mid = run(plan.shared_prefix, chunk_frame)
            timing["_shared_prefix"] += time.perf_counter() - t0
        else:
            mid = chunk_frame
        for name, suffix in zip(names, plan.suffixes):
            t0 = time.perf_counter()
            out = run(suffix, mid)
            timing[name] += time.perf_counter() - t0
            for row in out.rows:
                answers[name][row["qid"]] = row["qanswer"]

    warnings: list[str] = []
    per_query: dict[str, dict[str, dict[str, float]]] = {}
    aggregates: dict[str, dict[str, float]] = {}
    for name in names:
        per_query[name] = {}
        for row in topics.rows:
            qid = row["qid"]
            if qid in answers[name]:
                scores = {
                    m.name: m.per_query(answers[name][qid], golds[qid])
                    for m in measure_list
                }
            else:
                warnings.append(f"system {name!r} produced no answer for qid {qid!r}")
                scores = {m.name: 0.0 for m in measure_list}
            per_query[name][qid] = scores
        n = len(topics.rows)
        aggregates[name] = {
            m: (sum(per_query[name][r["qid"]][m] for r in topics.rows) / n if n else 0.0)
            for m in measure_names
        }

    significance: dict[str, dict[str, float]] = {}
    if baseline_name is not None and len(topics.rows) >= 2:
        others = [n for n in names if n != baseline_name]
        raw: dict[str, dict[str, float]] = {n: {} for n in others}
        for m in measure_names:
            base_scores = [
                per_query[baseline_name][r["qid"]][m] for r in topics.rows
            ]
            for n in others:
                sys_scores = [per_query[n][r["qid"]][m] for r in topics.rows]
                raw[n][m] = paired_ttest(sys_scores, base_scores)
            if correction is not None and others:
                adjusted = CORRECTIONS[correction]([raw[n][m] for n in others])
                for n, p in zip(others, adjusted):
                    raw[n][m] = p
        significance = raw

    return ExperimentReport(
        systems=names,
        measures=measure_names,
        aggregates=aggregates,
        per_query=per_query,
        significance=significance,
        baseline=baseline_name,
        correction=correction,
        warnings=warnings,
        timing=timing,
    )
