"""Alignment scores and per-method comparison reports."""

from __future__ import annotations

import csv
import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .embedder import JointEncoder, embed_condition, embed_image, embed_parts
from .errors import NoSalientRegion
from .saliency import saliency_parts

METHODS = ("unoptimized", "global-only", "sgool")
REPORT_COLUMNS = (
    "kind", "method", "versus", "n",
    "global_mean", "global_median", "global_q25", "global_q75",
    "parts_mean", "parts_median", "parts_q25", "parts_q75",
    "hps_mean",
)


@dataclass
class RunRecord:
    method: str
    condition: int
    seed: int
    alignment_global: float
    alignment_parts: float
    trace: str | None = None
    hps: float | None = None

    @property
    def key(self) -> tuple[int, int]:
        return self.condition, self.seed


def alignment_score(enc: JointEncoder, img, c: int) -> float:
    """100 * cosine(condition embedding, image embedding)."""
    return 100.0 * float(embed_condition(enc, c).data @ embed_image(enc, img).data)


def parts_alignment_score(enc: JointEncoder, img, c: int, k: float = 1.0, pad: int = 1) -> float:
    """Alignment of the salient crops; falls back to the whole image when none stand out."""
    try:
        parts = saliency_parts(img, k, pad, enc.image_shape[1:])
    except NoSalientRegion:
        return alignment_score(enc, img, c)
    return 100.0 * float(embed_condition(enc, c).data @ embed_parts(enc, parts).data)


def _stats(values: list[float]) -> tuple[float, float, float, float]:
    if not values:
        return (float("nan"),) * 4
    a = np.asarray(values, dtype=float)
    q25, med, q75 = np.percentile(a, [25, 50, 75])
    return float(a.mean()), float(med), float(q25), float(q75)


@dataclass
class MethodSummary:
    method: str
    n: int
    global_stats: tuple[float, float, float, float]
    parts_stats: tuple[float, float, float, float]
    hps_mean: float | None = None

    @property
    def global_median(self) -> float:
        return self.global_stats[1]

    @property
    def parts_median(self) -> float:
        return self.parts_stats[1]


@dataclass
class PairwiseDifference:
    method: str
    versus: str
    n: int
    global_median_diff: float
    parts_median_diff: float


@dataclass
class Report:
    methods: dict[str, MethodSummary]
    pairs: list[PairwiseDifference] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def ordering_checks(self) -> dict[str, bool]:
        """Directional reproduction of the method ordering on medians."""
        m = self.methods
        checks = {}
        if "sgool" in m and "unoptimized" in m:
            checks["global: sgool >= unoptimized"] = m["sgool"].global_median >= m["unoptimized"].global_median
        if "global-only" in m and "unoptimized" in m:
            checks["global: global-only >= unoptimized"] = (
                m["global-only"].global_median >= m["unoptimized"].global_median)
        if "sgool" in m and "global-only" in m:
            checks["parts: sgool >= global-only"] = m["sgool"].parts_median >= m["global-only"].parts_median
        return checks

    def rows(self) -> list[list]:
        out = []
        for s in self.methods.values():
            hps = "" if s.hps_mean is None else repr(s.hps_mean)
            out.append(["method", s.method, "", s.n, *map(repr, s.global_stats), *map(repr, s.parts_stats), hps])
        for p in self.pairs:
            nan = repr(float("nan"))
            out.append(["pairwise", p.method, p.versus, p.n, nan, repr(p.global_median_diff), nan, nan,
                        nan, repr(p.parts_median_diff), nan, nan, ""])
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            w.writerows(self.rows())

    def to_text(self) -> str:
        lines = [f"{'method':<12} {'n':>3}  {'global med':>10} {'IQR':>17}  {'parts med':>10} {'IQR':>17}"]
        for s in self.methods.values():
            g, p = s.global_stats, s.parts_stats
            lines.append(f"{s.method:<12} {s.n:>3}  {g[1]:>10.2f} [{g[2]:>7.2f},{g[3]:>7.2f}]  "
                         f"{p[1]:>10.2f} [{p[2]:>7.2f},{p[3]:>7.2f}]")
        if self.pairs:
            lines.append("")
            lines.append("paired median differences (first minus second)")
            for d in self.pairs:
                lines.append(f"  {d.method} - {d.versus} (n={d.n}): global {d.global_median_diff:+.2f}, "
                             f"parts {d.parts_median_diff:+.2f}")
        checks = self.ordering_checks()
        if checks:
            lines.append("")
            for name, ok in checks.items():
                lines.append(f"ordering {name}: {'PASS' if ok else 'FAIL'}")
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines) + "\n"


def _method_order(name: str) -> tuple[int, str]:
    return (METHODS.index(name) if name in METHODS else len(METHODS), name)


def compare_methods(records) -> Report:
    """Per-method statistics and paired median differences on shared (condition, seed) keys."""
    by_method: dict[str, dict[tuple[int, int], RunRecord]] = {}
    for r in records:
        by_method.setdefault(r.method, {})[r.key] = r
    notes = []
    if len(by_method) < 2:
        notes.append(f"only {len(by_method)} method(s) present; no pairwise comparison")
    for name, recs in by_method.items():
        if len(recs) < 5:
            notes.append(f"method {name} has {len(recs)} seeds (fewer than 5)")

    names = sorted(by_method, key=_method_order)
    summaries = {}
    for name in names:
        recs = [by_method[name][k] for k in sorted(by_method[name])]
        hps = [r.hps for r in recs if r.hps is not None]
        summaries[name] = MethodSummary(
            name, len(recs),
            _stats([r.alignment_global for r in recs]),
            _stats([r.alignment_parts for r in recs]),
            float(np.mean(hps)) if hps else None,
        )

    pairs = []
    for a, b in itertools.combinations(reversed(names), 2):
        ka, kb = set(by_method[a]), set(by_method[b])
        shared = sorted(ka & kb)
        if ka != kb:
            notes.append(f"{a} and {b} cover different seeds; compared on {len(shared)} shared")
        if not shared:
            continue
        dg = [by_method[a][k].alignment_global - by_method[b][k].alignment_global for k in shared]
        dp = [by_method[a][k].alignment_parts - by_method[b][k].alignment_parts for k in shared]
        pairs.append(PairwiseDifference(a, b, len(shared), float(np.median(dg)), float(np.median(dp))))

    for n in notes:
        warnings.warn(n, stacklevel=2)
    return Report(summaries, pairs, notes)
