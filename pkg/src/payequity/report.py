"""Decision layer on top of posterior draws.

Turns a fitted model into the quantities the review team acts on:
factual and counterfactual salary predictions per worker, per-group
wage-gap posteriors, raise recommendations, the workforce-level
adjusted cents-to-the-dollar ratio, and in-sample fit statistics.

Dollar conversion averages exp of each draw's linear predictor over
draws (a mean of exponentials, not the exponential of the mean); the
two differ by Jensen's inequality and the former is the posterior
mean on the dollar scale. No residual noise is added: the estimand
is expected salary given the worker's covariates and group.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


@dataclass(frozen=True)
class PredictionPair:
    """Factual and gender-flipped salary predictions for one worker.

    y_hat_female / y_hat_male are the same two numbers keyed by gender
    instead of by factual/counterfactual: for a female worker
    y_hat_female is the factual mean, for a male worker it is the
    counterfactual one.
    """
    worker_id: str
    factual_mean_usd: float
    counterfactual_mean_usd: float
    y_hat_female: float
    y_hat_male: float


@dataclass(frozen=True)
class GroupGapSummary:
    """Posterior of the total female effect for one job-geo group.

    effect_* fields summarize beta1_g[g] + beta1_j[j] on the log scale.
    Positive effect means women earn more; the dollar gap fields use the
    opposite orientation (male prediction minus female prediction, so
    positive means women are paid less) because that is how the raise
    rule consumes them. Dollar gaps are NaN when the summaries were
    built without worker predictions.
    """
    job_geo: int
    label: str
    effect_mean: float
    effect_sd: float
    ci_low: float
    ci_high: float
    significant: bool
    n_workers: int
    n_female: int
    median_gap_usd: float
    mean_gap_usd: float


@dataclass(frozen=True)
class GapReport:
    summaries: list
    adjusted_cents_to_dollar: float
    raises: list  # (worker_id, raise_usd), disadvantaged workers only
    r_squared: float
    rmse: float


def _natural_blocks(draws):
    """Split a pooled natural-scale draw matrix into named blocks."""
    G, J = draws.G, draws.J
    m = draws.pooled()
    k = 0
    beta0_g = m[:, k:k + G]; k += G
    beta1_g = m[:, k:k + G]; k += G
    beta0_j = m[:, k:k + J]; k += J
    beta1_j = m[:, k:k + J]; k += J
    k += 8  # hyperparameters, not used for prediction
    beta2 = m[:, k]; beta3 = m[:, k + 1]; beta4 = m[:, k + 2]
    return beta0_g, beta1_g, beta0_j, beta1_j, beta2, beta3, beta4


def _predicted_log_salary_draws(draws, data, index):
    """(n_draws, n_workers) matrices at female=1 and female=0."""
    if index.n_workers != len(data):
        raise ContractViolation("index and data disagree on worker count")
    if index.n_gjs_geo != draws.G or index.n_job_geo != draws.J:
        raise ContractViolation(
            "draws were produced for G=%d, J=%d but index has G=%d, J=%d"
            % (draws.G, draws.J, index.n_gjs_geo, index.n_job_geo))
    beta0_g, beta1_g, beta0_j, beta1_j, beta2, beta3, beta4 = _natural_blocks(draws)
    recent = np.array([r.recent_perf for r in data])
    past = np.array([r.past_perf for r in data])
    tenure = np.array([r.time_in_job for r in data])
    base = (beta0_g[:, index.g_of] + beta0_j[:, index.j_of]
            + np.outer(beta2, recent) + np.outer(beta3, past)
            + np.outer(beta4, tenure))
    slope = beta1_g[:, index.g_of] + beta1_j[:, index.j_of]
    return base + slope, base  # at female=1, at female=0


def counterfactual_predictions(draws, data, index):
    """One PredictionPair per worker, averaging exp(draws) per gender."""
    eta_f, eta_m = _predicted_log_salary_draws(draws, data, index)
    yhat_f = np.exp(eta_f).mean(axis=0)
    yhat_m = np.exp(eta_m).mean(axis=0)
    pairs = []
    for i, r in enumerate(data):
        f, m = float(yhat_f[i]), float(yhat_m[i])
        factual, counter = (f, m) if r.female else (m, f)
        pairs.append(PredictionPair(
            worker_id=r.worker_id,
            factual_mean_usd=factual,
            counterfactual_mean_usd=counter,
            y_hat_female=f,
            y_hat_male=m,
        ))
    return pairs


def adjusted_cents_to_dollar(pairs):
    """Workforce-level ratio sum(y_hat_female) / sum(y_hat_male).

    Every worker contributes one female-gendered and one male-gendered
    prediction, which is what makes the ratio insensitive to the
    gender mix.
    """
    if not pairs:
        raise ContractViolation("adjusted cents-to-the-dollar needs at least one worker")
    num = 0.0
    den = 0.0
    for p in pairs:
        if not (p.factual_mean_usd > 0.0 and p.counterfactual_mean_usd > 0.0):
            raise ContractViolation(
                "nonpositive prediction for worker %s" % p.worker_id)
        num += p.y_hat_female
        den += p.y_hat_male
    return num / den


def group_gap_summaries(draws, index, interval_mass=0.95, pairs=None, data=None):
    """Per job-geo posterior summary of the total female effect.

    Every group in the index gets exactly one summary, including
    single-worker and single-gender groups (the pooled effect exists
    for them even when no within-group contrast does). When pairs and
    data are supplied, dollar gaps are the median and mean over the
    group's workers of (y_hat_male - y_hat_female); otherwise NaN.
    """
    if not (0.0 < interval_mass < 1.0):
        raise ContractViolation("interval_mass must lie in (0, 1)")
    _, beta1_g, _, beta1_j, _, _, _ = _natural_blocks(draws)
    gj = index.gjs_geo_of_job_geo()
    alpha = (1.0 - interval_mass) / 2.0

    gaps_by_group = None
    if pairs is not None:
        if data is None or len(pairs) != len(data):
            raise ContractViolation("pairs and data must align worker for worker")
        gaps_by_group = [[] for _ in range(index.n_job_geo)]
        for i, p in enumerate(pairs):
            gaps_by_group[index.j_of[i]].append(p.y_hat_male - p.y_hat_female)

    out = []
    for j in range(index.n_job_geo):
        eff = beta1_g[:, gj[j]] + beta1_j[:, j]
        lo, hi = np.quantile(eff, [alpha, 1.0 - alpha])
        if gaps_by_group is not None and gaps_by_group[j]:
            med_gap = float(np.median(gaps_by_group[j]))
            mean_gap = float(np.mean(gaps_by_group[j]))
        else:
            med_gap = float("nan")
            mean_gap = float("nan")
        out.append(GroupGapSummary(
            job_geo=j,
            label=index.job_geo_label(j),
            effect_mean=float(eff.mean()),
            effect_sd=float(eff.std(ddof=1)) if len(eff) > 1 else 0.0,
            ci_low=float(lo),
            ci_high=float(hi),
            significant=bool(lo > 0.0 or hi < 0.0),
            n_workers=int(index.group_sizes[j]),
            n_female=int(index.gender_counts[j, 0]),
            median_gap_usd=med_gap,
            mean_gap_usd=mean_gap,
        ))
    return out


def raise_recommendations(pairs, summaries, data, index):
    """Raises for workers of the disadvantaged gender in significant groups.

    In a group whose female effect is significantly negative, female
    workers are recommended max(0, y_hat_male - y_hat_female); with a
    significantly positive effect the rule mirrors to male workers.
    Workers with nothing to recommend are omitted.
    """
    if not (len(pairs) == len(data) == index.n_workers):
        raise ContractViolation("pairs, data, and index must cover the same workers")
    by_group = {s.job_geo: s for s in summaries}
    out = []
    for i, (p, r) in enumerate(zip(pairs, data)):
        s = by_group.get(int(index.j_of[i]))
        if s is None or not s.significant:
            continue
        female_disadvantaged = s.effect_mean < 0.0
        if r.female and female_disadvantaged:
            amount = max(0.0, p.y_hat_male - p.y_hat_female)
        elif (not r.female) and (not female_disadvantaged):
            amount = max(0.0, p.y_hat_female - p.y_hat_male)
        else:
            continue
        if amount > 0.0:
            out.append((p.worker_id, amount))
    return out


def fit_metrics(draws, data, index):
    """In-sample (R^2, RMSE) of mean predicted log-salary at true gender."""
    if not data:
        raise ContractViolation("fit metrics need at least one worker")
    eta_f, eta_m = _predicted_log_salary_draws(draws, data, index)
    female = np.array([r.female for r in data], dtype=bool)
    pred = np.where(female, eta_f.mean(axis=0), eta_m.mean(axis=0))
    obs = np.array([r.log_salary for r in data])
    resid = obs - pred
    rmse = float(np.sqrt(np.mean(resid ** 2)))
    ss_tot = float(np.sum((obs - obs.mean()) ** 2))
    if ss_tot == 0.0:
        raise ContractViolation("observed log-salaries are constant; R^2 undefined")
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return r2, rmse


def build_gap_report(draws, data, index, interval_mass=0.95):
    """Assemble the full GapReport from one fitted run."""
    pairs = counterfactual_predictions(draws, data, index)
    summaries = group_gap_summaries(draws, index, interval_mass,
                                    pairs=pairs, data=data)
    cents = adjusted_cents_to_dollar(pairs)
    raises = raise_recommendations(pairs, summaries, data, index)
    r2, rmse = fit_metrics(draws, data, index)
    return GapReport(
        summaries=summaries,
        adjusted_cents_to_dollar=cents,
        raises=raises,
        r_squared=r2,
        rmse=rmse,
    )


def write_group_csv(summaries, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["job_geo", "n", "n_female", "effect_mean", "effect_sd",
                    "ci_low", "ci_high", "significant", "median_gap_usd"])
        for s in summaries:
            gap = "" if np.isnan(s.median_gap_usd) else "%.2f" % s.median_gap_usd
            w.writerow([s.label, s.n_workers, s.n_female,
                        "%.6f" % s.effect_mean, "%.6f" % s.effect_sd,
                        "%.6f" % s.ci_low, "%.6f" % s.ci_high,
                        "true" if s.significant else "false", gap])


def report_to_json(report):
    """JSON-ready dict; NaN dollar gaps serialize as null."""
    def _num(x):
        return None if np.isnan(x) else x
    return {
        "adjusted_cents_to_dollar": report.adjusted_cents_to_dollar,
        "fit": {"r_squared": report.r_squared, "rmse_log": report.rmse},
        "n_groups": len(report.summaries),
        "n_significant": sum(1 for s in report.summaries if s.significant),
        "groups": [
            {
                "job_geo": s.label,
                "n": s.n_workers,
                "n_female": s.n_female,
                "effect_mean": s.effect_mean,
                "effect_sd": s.effect_sd,
                "ci_low": s.ci_low,
                "ci_high": s.ci_high,
                "significant": s.significant,
                "median_gap_usd": _num(s.median_gap_usd),
                "mean_gap_usd": _num(s.mean_gap_usd),
            }
            for s in report.summaries
        ],
        "raises": [
            {"worker_id": wid, "raise_usd": amt} for wid, amt in report.raises
        ],
    }


def write_report_json(report, path):
    with open(path, "w") as fh:
        json.dump(report_to_json(report), fh, indent=2)
        fh.write("\n")


def format_report_text(report):
    """Aligned-column report with the Eq-style ratio in the header."""
    lines = []
    lines.append("pay equity report")
    lines.append("  adjusted cents-to-the-dollar: %.4f" % report.adjusted_cents_to_dollar)
    lines.append("  fit: R^2 = %.4f, RMSE(log) = %.4f" % (report.r_squared, report.rmse))
    n_sig = sum(1 for s in report.summaries if s.significant)
    lines.append("  groups: %d total, %d significant" % (len(report.summaries), n_sig))
    lines.append("  raises recommended: %d (total $%.2f)"
                 % (len(report.raises), sum(a for _, a in report.raises)))
    lines.append("")
    header = "%-22s %6s %6s %10s %10s %10s %10s %5s %12s" % (
        "job_geo", "n", "n_fem", "effect", "sd", "ci_low", "ci_high", "sig",
        "med_gap_usd")
    lines.append(header)
    for s in report.summaries:
        gap = "" if np.isnan(s.median_gap_usd) else "%.2f" % s.median_gap_usd
        lines.append("%-22s %6d %6d %10.4f %10.4f %10.4f %10.4f %5s %12s" % (
            s.label, s.n_workers, s.n_female, s.effect_mean, s.effect_sd,
            s.ci_low, s.ci_high, "yes" if s.significant else "no", gap))
    return "\n".join(lines) + "\n"
