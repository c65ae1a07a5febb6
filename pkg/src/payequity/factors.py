"""Factor crossing and group indexing.

GJS and job are each crossed with geo; the resulting GJS-geo and
job-geo levels get dense integer indices in first-appearance order.
Job-geo is the comparison-group level at which wage gaps are assessed;
GJS-geo supplies the higher pooling level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .records import WorkerRecord


@dataclass
class FactorIndex:
    """Dense indexing of the crossed factor levels.

    g_of / j_of align with the record list the index was built from:
    g_of[i] is worker i's GJS-geo index, j_of[i] its job-geo index.
    """

    gjs_geo_levels: list[tuple[str, str]]
    job_geo_levels: list[tuple[str, str]]
    g_of: np.ndarray
    j_of: np.ndarray
    group_sizes: np.ndarray       # per job-geo worker count
    gender_counts: np.ndarray     # per job-geo (n_female, n_male)

    @property
    def n_gjs_geo(self) -> int:
        return len(self.gjs_geo_levels)

    @property
    def n_job_geo(self) -> int:
        return len(self.job_geo_levels)

    @property
    def n_workers(self) -> int:
        return len(self.g_of)

    def gender_variant(self) -> np.ndarray:
        """Boolean per job-geo: both genders present."""
        return (self.gender_counts[:, 0] > 0) & (self.gender_counts[:, 1] > 0)

    def job_geo_label(self, j: int) -> str:
        job, geo = self.job_geo_levels[j]
        return f"{job}|{geo}"

    def gjs_geo_label(self, g: int) -> str:
        gjs, geo = self.gjs_geo_levels[g]
        return f"{gjs}|{geo}"

    def gjs_geo_of_job_geo(self) -> np.ndarray:
        """Map each job-geo to the GJS-geo of its workers.

        Jobs nest inside GJS, so a comparison group normally sits under
        a single GJS-geo; if data violates the nesting, the most common
        GJS-geo among the group's workers wins (ties by lower index).
        """
        J, G = self.n_job_geo, self.n_gjs_geo
        counts = np.zeros((J, G), dtype=np.int64)
        np.add.at(counts, (self.j_of, self.g_of), 1)
        return counts.argmax(axis=1)


def build_factor_index(records: list[WorkerRecord]) -> FactorIndex:
    """Assign dense indices to GJS-geo and job-geo levels.

    Indices follow first appearance in the record list, so the result
    is deterministic without assuming any ordering on labels.
    """
    if not records:
        raise ValueError("build_factor_index requires at least one record")
    gjs_geo: dict[tuple[str, str], int] = {}
    job_geo: dict[tuple[str, str], int] = {}
    g_of = np.empty(len(records), dtype=np.int64)
    j_of = np.empty(len(records), dtype=np.int64)
    for i, r in enumerate(records):
        g_key = (r.gjs, r.geo)
        j_key = (r.job, r.geo)
        g_of[i] = gjs_geo.setdefault(g_key, len(gjs_geo))
        j_of[i] = job_geo.setdefault(j_key, len(job_geo))
    J = len(job_geo)
    group_sizes = np.bincount(j_of, minlength=J)
    female = np.array([r.female for r in records], dtype=np.int64)
    gender_counts = np.column_stack(
        [
            np.bincount(j_of, weights=female, minlength=J).astype(np.int64),
            np.bincount(j_of, weights=1 - female, minlength=J).astype(np.int64),
        ]
    )
    return FactorIndex(
        gjs_geo_levels=list(gjs_geo),
        job_geo_levels=list(job_geo),
        g_of=g_of,
        j_of=j_of,
        group_sizes=group_sizes,
        gender_counts=gender_counts,
    )


@dataclass(frozen=True)
class FactorImbalance:
    n_levels: int
    pct_single_gender: float
    pct_single_worker: float


@dataclass
class ImbalanceSummary:
    """Per-factor level counts and single-gender / single-worker shares.

    Percentages are exact; rounding happens only in format_table.
    """

    factors: dict[str, FactorImbalance] = field(default_factory=dict)

    ORDER = ("geo", "gjs", "gjs_geo", "job", "job_geo")

    def format_table(self) -> str:
        lines = [f"{'factor':<10} {'levels':>7} {'% single-gender':>16} {'% single-worker':>16}"]
        for name in self.ORDER:
            fi = self.factors[name]
            lines.append(
                f"{name:<10} {fi.n_levels:>7d} {fi.pct_single_gender:>16.1f} {fi.pct_single_worker:>16.1f}"
            )
        return "\n".join(lines)


def _level_stats(keys: list, genders: list[bool]) -> FactorImbalance:
    sizes: dict = {}
    gender_sets: dict = {}
    for key, female in zip(keys, genders):
        sizes[key] = sizes.get(key, 0) + 1
        gender_sets.setdefault(key, set()).add(female)
    n = len(sizes)
    single_gender = sum(1 for k in sizes if len(gender_sets[k]) == 1)
    single_worker = sum(1 for k in sizes if sizes[k] == 1)
    return FactorImbalance(n, 100.0 * single_gender / n, 100.0 * single_worker / n)


def summarize_imbalance(index: FactorIndex, records: list[WorkerRecord]) -> ImbalanceSummary:
    """Exact per-factor imbalance statistics (no sampling).

    Geo, GJS, and job are summarized from the raw labels; the crossed
    factors use the dense indices so the summary and the model agree on
    level identity.
    """
    genders = [r.female for r in records]
    summary = ImbalanceSummary()
    summary.factors["geo"] = _level_stats([r.geo for r in records], genders)
    summary.factors["gjs"] = _level_stats([r.gjs for r in records], genders)
    summary.factors["job"] = _level_stats([r.job for r in records], genders)
    summary.factors["gjs_geo"] = _level_stats(list(index.g_of), genders)
    summary.factors["job_geo"] = _level_stats(list(index.j_of), genders)
    return summary
