"""Hierarchical log-salary model: layout, transform, density, gradient.

The unconstrained state vector holds standardized random effects
(non-centered parameterization), hyperparameter means, log-scale
hyperparameters, fixed effects, and the log residual scale:

    [ z_intercept_g (G) | z_slope_g (G) | z_intercept_j (J) | z_slope_j (J)
      | mu0_g mu1_g mu0_j mu1_j | ls0_g ls1_g ls0_j ls1_j
      | beta2 beta3 beta4 | log_sigma_resid ]

Natural random effects are mu_block + exp(ls_block) * z.  Scales get
half-Normal priors applied on the natural scale plus the log-Jacobian
of the exp transform, so the density is with respect to the
unconstrained coordinates throughout.  Normalizing constants are kept
in full to make value-level comparison against naive oracles exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractViolation, NumericOverflowError
from .factors import FactorIndex
from .kvconfig import parse_float, read_kv, write_kv
from .records import WorkerRecord

LOG_2PI = math.log(2.0 * math.pi)

_SPEC_KEYS = (
    "hyperprior_mu_scale",
    "hyperprior_sigma_scale",
    "beta2_prior_scale",
    "beta3_prior_scale",
    "beta4_prior_scale",
    "residual_sigma_prior_scale",
)


@dataclass(frozen=True)
class ModelSpec:
    """Prior scales.  Defaults are weakly informative except beta4,
    which is deliberately tight (time in job is nearly flat in the
    generating process this model is aimed at)."""

    hyperprior_mu_scale: float = 5.0
    hyperprior_sigma_scale: float = 1.0
    fixed_effect_prior_scales: tuple[float, float, float] = (1.0, 1.0, 0.001)
    residual_sigma_prior_scale: float = 1.0

    def validate(self) -> None:
        scales = (
            self.hyperprior_mu_scale,
            self.hyperprior_sigma_scale,
            *self.fixed_effect_prior_scales,
            self.residual_sigma_prior_scale,
        )
        if len(self.fixed_effect_prior_scales) != 3:
            raise ConfigError("fixed_effect_prior_scales must have exactly 3 entries")
        if any(not (s > 0.0) for s in scales):
            raise ConfigError("every prior scale must be strictly positive")

    def as_dict(self) -> dict:
        """JSON-friendly echo using the config-file key names."""
        s2, s3, s4 = self.fixed_effect_prior_scales
        return {
            "hyperprior_mu_scale": self.hyperprior_mu_scale,
            "hyperprior_sigma_scale": self.hyperprior_sigma_scale,
            "beta2_prior_scale": s2,
            "beta3_prior_scale": s3,
            "beta4_prior_scale": s4,
            "residual_sigma_prior_scale": self.residual_sigma_prior_scale,
        }

    def to_file(self, path: str | Path) -> None:
        s2, s3, s4 = self.fixed_effect_prior_scales
        write_kv(path, {
            "hyperprior_mu_scale": self.hyperprior_mu_scale,
            "hyperprior_sigma_scale": self.hyperprior_sigma_scale,
            "beta2_prior_scale": s2,
            "beta3_prior_scale": s3,
            "beta4_prior_scale": s4,
            "residual_sigma_prior_scale": self.residual_sigma_prior_scale,
        })

    @classmethod
    def from_file(cls, path: str | Path) -> "ModelSpec":
        raw = read_kv(path)
        unknown = sorted(set(raw) - set(_SPEC_KEYS))
        if unknown:
            raise ConfigError(f"unknown model config keys: {', '.join(unknown)}")
        base = cls()
        def get(key: str, default: float) -> float:
            return parse_float(raw[key], key) if key in raw else default
        spec = cls(
            hyperprior_mu_scale=get("hyperprior_mu_scale", base.hyperprior_mu_scale),
            hyperprior_sigma_scale=get("hyperprior_sigma_scale", base.hyperprior_sigma_scale),
            fixed_effect_prior_scales=(
                get("beta2_prior_scale", base.fixed_effect_prior_scales[0]),
                get("beta3_prior_scale", base.fixed_effect_prior_scales[1]),
                get("beta4_prior_scale", base.fixed_effect_prior_scales[2]),
            ),
            residual_sigma_prior_scale=get(
                "residual_sigma_prior_scale", base.residual_sigma_prior_scale),
        )
        spec.validate()
        return spec


@dataclass(frozen=True)
class ParamLayout:
    """Slices of the flat unconstrained vector, one per named block."""

    G: int
    J: int

    @property
    def z_intercept_g(self) -> slice:
        return slice(0, self.G)

    @property
    def z_slope_g(self) -> slice:
        return slice(self.G, 2 * self.G)

    @property
    def z_intercept_j(self) -> slice:
        return slice(2 * self.G, 2 * self.G + self.J)

    @property
    def z_slope_j(self) -> slice:
        return slice(2 * self.G + self.J, 2 * self.G + 2 * self.J)

    @property
    def hyper_mu(self) -> slice:
        # order: mu0_g, mu1_g, mu0_j, mu1_j
        base = 2 * self.G + 2 * self.J
        return slice(base, base + 4)

    @property
    def hyper_log_sigma(self) -> slice:
        # order: ls0_g, ls1_g, ls0_j, ls1_j
        base = 2 * self.G + 2 * self.J + 4
        return slice(base, base + 4)

    @property
    def fixed(self) -> slice:
        base = 2 * self.G + 2 * self.J + 8
        return slice(base, base + 3)

    @property
    def log_sigma_resid(self) -> slice:
        base = 2 * self.G + 2 * self.J + 11
        return slice(base, base + 1)

    @property
    def dim(self) -> int:
        return 2 * self.G + 2 * self.J + 12

    @property
    def natural_dim(self) -> int:
        # natural scale replaces each log-sigma with a sigma, same count
        return 2 * self.G + 2 * self.J + 12

    def block_slices(self) -> dict[str, slice]:
        return {
            "z_intercept_g": self.z_intercept_g,
            "z_slope_g": self.z_slope_g,
            "z_intercept_j": self.z_intercept_j,
            "z_slope_j": self.z_slope_j,
            "hyper_mu": self.hyper_mu,
            "hyper_log_sigma": self.hyper_log_sigma,
            "fixed": self.fixed,
            "log_sigma_resid": self.log_sigma_resid,
        }

    def count_breakdown(self) -> dict[str, int]:
        return {
            "noncentered_latents": 2 * self.G + 2 * self.J,
            "hyper_means": 4,
            "hyper_scales": 4,
            "fixed_effects": 3,
            "residual_scale": 1,
            "total": self.dim,
        }


def build_layout(index: FactorIndex) -> ParamLayout:
    if index.n_gjs_geo < 1 or index.n_job_geo < 1:
        raise ContractViolation("layout requires at least one level in each grouping")
    return ParamLayout(G=index.n_gjs_geo, J=index.n_job_geo)


@dataclass(frozen=True)
class NaturalParams:
    beta0_g: np.ndarray
    beta1_g: np.ndarray
    beta0_j: np.ndarray
    beta1_j: np.ndarray
    mu0_g: float
    mu1_g: float
    mu0_j: float
    mu1_j: float
    sigma0_g: float
    sigma1_g: float
    sigma0_j: float
    sigma1_j: float
    beta2: float
    beta3: float
    beta4: float
    sigma_resid: float


def to_natural(v: np.ndarray, layout: ParamLayout) -> NaturalParams:
    """Map an unconstrained vector to natural-scale parameters."""
    v = np.asarray(v, dtype=float)
    if v.shape != (layout.dim,):
        raise ContractViolation(
            f"parameter vector has shape {v.shape}, layout wants ({layout.dim},)")
    mu0g, mu1g, mu0j, mu1j = v[layout.hyper_mu]
    with np.errstate(over="ignore"):  # inf scales propagate to -inf logp downstream
        s0g, s1g, s0j, s1j = np.exp(v[layout.hyper_log_sigma])
    b2, b3, b4 = v[layout.fixed]
    with np.errstate(over="ignore", invalid="ignore"):
        beta0_g = mu0g + s0g * v[layout.z_intercept_g]
        beta1_g = mu1g + s1g * v[layout.z_slope_g]
        beta0_j = mu0j + s0j * v[layout.z_intercept_j]
        beta1_j = mu1j + s1j * v[layout.z_slope_j]
    return NaturalParams(
        beta0_g=beta0_g,
        beta1_g=beta1_g,
        beta0_j=beta0_j,
        beta1_j=beta1_j,
        mu0_g=float(mu0g), mu1_g=float(mu1g), mu0_j=float(mu0j), mu1_j=float(mu1j),
        sigma0_g=float(s0g), sigma1_g=float(s1g), sigma0_j=float(s0j), sigma1_j=float(s1j),
        beta2=float(b2), beta3=float(b3), beta4=float(b4),
        sigma_resid=float(np.exp(v[layout.log_sigma_resid][0])),
    )


def natural_param_names(index: FactorIndex) -> list[str]:
    """Column names of the natural-scale draw matrix, in layout order."""
    names = []
    for g in range(index.n_gjs_geo):
        names.append(f"beta0_g[{index.gjs_geo_label(g)}]")
    for g in range(index.n_gjs_geo):
        names.append(f"beta1_g[{index.gjs_geo_label(g)}]")
    for j in range(index.n_job_geo):
        names.append(f"beta0_j[{index.job_geo_label(j)}]")
    for j in range(index.n_job_geo):
        names.append(f"beta1_j[{index.job_geo_label(j)}]")
    names.extend([
        "mu0_g", "mu1_g", "mu0_j", "mu1_j",
        "sigma0_g", "sigma1_g", "sigma0_j", "sigma1_j",
        "beta2", "beta3", "beta4", "sigma_resid",
    ])
    return names


def predict_log_salary(
    p: NaturalParams,
    w: WorkerRecord,
    g: int,
    j: int,
    female_override: bool | None = None,
) -> float:
    """Linear predictor for one worker at the given group indices."""
    if not (0 <= g < p.beta0_g.shape[0]) or not (0 <= j < p.beta0_j.shape[0]):
        raise ContractViolation(f"group index out of range: g={g}, j={j}")
    f = 1.0 if (w.female if female_override is None else female_override) else 0.0
    return float(
        p.beta0_g[g] + p.beta0_j[j]
        + f * (p.beta1_g[g] + p.beta1_j[j])
        + p.beta2 * w.recent_perf
        + p.beta3 * w.past_perf
        + p.beta4 * w.time_in_job
    )


def _half_normal_logpdf(x: float, scale: float) -> float:
    r = float(x) / scale
    if r > 1e150:  # r*r would overflow a Python float
        return -math.inf
    return math.log(2.0) - 0.5 * LOG_2PI - math.log(scale) - 0.5 * r * r


class HierarchicalModel:
    """Bundles data arrays, factor index, layout, and prior scales.

    log_posterior / grad_log_posterior validate and raise on non-finite
    results; logp_and_grad is the non-raising fused path for samplers
    (a non-finite state comes back as -inf and is the caller's signal
    to reject).
    """

    def __init__(self, records: list[WorkerRecord], index: FactorIndex, spec: ModelSpec):
        spec.validate()
        if len(records) != index.n_workers:
            raise ContractViolation(
                f"index covers {index.n_workers} workers, got {len(records)} records")
        self.index = index
        self.spec = spec
        self.layout = build_layout(index)
        self.y = np.array([r.log_salary for r in records], dtype=float)
        self.female = np.array([1.0 if r.female else 0.0 for r in records])
        self.recent = np.array([r.recent_perf for r in records], dtype=float)
        self.past = np.array([r.past_perf for r in records], dtype=float)
        self.tenure = np.array([r.time_in_job for r in records], dtype=float)
        self.g_of = index.g_of
        self.j_of = index.j_of
        self.n = len(records)

    # -- density ---------------------------------------------------------

    def _pieces(self, v: np.ndarray) -> dict[str, float]:
        """Log-density contributions keyed by block name.

        Prior pieces come first so that an exp overflow is attributed
        to the log-scale block that caused it rather than to the
        likelihood it contaminates.
        """
        lay = self.layout
        spec = self.spec
        z0g = v[lay.z_intercept_g]
        z1g = v[lay.z_slope_g]
        z0j = v[lay.z_intercept_j]
        z1j = v[lay.z_slope_j]
        mu = v[lay.hyper_mu]
        ls = v[lay.hyper_log_sigma]
        b = v[lay.fixed]
        ls_res = float(v[lay.log_sigma_resid][0])

        pieces: dict[str, float] = {}
        for name, z in (("z_intercept_g", z0g), ("z_slope_g", z1g),
                        ("z_intercept_j", z0j), ("z_slope_j", z1j)):
            pieces[name] = float(-0.5 * LOG_2PI * z.size - 0.5 * np.dot(z, z))

        S_mu = spec.hyperprior_mu_scale
        pieces["hyper_mu"] = float(
            -0.5 * LOG_2PI * 4 - 4 * math.log(S_mu) - 0.5 * np.dot(mu, mu) / S_mu ** 2)

        # half-Normal on sigma = exp(ls), plus the log-Jacobian ls
        S_sig = spec.hyperprior_sigma_scale
        with np.errstate(over="ignore"):
            sigmas = np.exp(ls)
        pieces["hyper_log_sigma"] = float(
            sum(_half_normal_logpdf(s, S_sig) for s in sigmas) + np.sum(ls))

        s2, s3, s4 = spec.fixed_effect_prior_scales
        pieces["fixed"] = float(sum(
            -0.5 * LOG_2PI - math.log(sk) - 0.5 * (bk / sk) ** 2
            for bk, sk in zip(b, (s2, s3, s4))))

        sigma_resid = math.exp(ls_res) if ls_res < 350.0 else math.inf
        pieces["log_sigma_resid"] = (
            _half_normal_logpdf(sigma_resid, spec.residual_sigma_prior_scale) + ls_res
            if math.isfinite(sigma_resid) else -math.inf)

        resid = self._residuals(v)
        ssr = float(np.dot(resid, resid))
        if self.n == 0:
            pieces["likelihood"] = 0.0
        elif sigma_resid == 0.0 or not math.isfinite(ssr):
            pieces["likelihood"] = -math.inf
        else:
            pieces["likelihood"] = (
                -0.5 * LOG_2PI * self.n - self.n * ls_res - 0.5 * ssr / sigma_resid ** 2)
        return pieces

    def _residuals(self, v: np.ndarray) -> np.ndarray:
        nat = to_natural(v, self.layout)
        eta = (
            nat.beta0_g[self.g_of] + nat.beta0_j[self.j_of]
            + self.female * (nat.beta1_g[self.g_of] + nat.beta1_j[self.j_of])
            + nat.beta2 * self.recent + nat.beta3 * self.past + nat.beta4 * self.tenure
        )
        return self.y - eta

    def log_posterior(self, v: np.ndarray) -> float:
        v = self._check_vector(v)
        pieces = self._pieces(v)
        for name, val in pieces.items():
            if not math.isfinite(val):
                raise NumericOverflowError(name, f"non-finite log-density in block '{name}'")
        return float(sum(pieces.values()))

    def grad_log_posterior(self, v: np.ndarray) -> np.ndarray:
        v = self._check_vector(v)
        pieces = self._pieces(v)
        for name, val in pieces.items():
            if not math.isfinite(val):
                raise NumericOverflowError(name, f"non-finite log-density in block '{name}'")
        _, grad = self.logp_and_grad(v)
        if not np.all(np.isfinite(grad)):
            bad = self._first_bad_block(grad)
            raise NumericOverflowError(bad, f"non-finite gradient in block '{bad}'")
        return grad

    def _first_bad_block(self, grad: np.ndarray) -> str:
        for name, sl in self.layout.block_slices().items():
            if not np.all(np.isfinite(grad[sl])):
                return name
        return "unknown"

    def _check_vector(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.layout.dim,):
            raise ContractViolation(
                f"parameter vector has shape {v.shape}, expected ({self.layout.dim},)")
        if not np.all(np.isfinite(v)):
            raise ContractViolation("parameter vector must be finite")
        return v

    def logp_and_grad(self, v: np.ndarray) -> tuple[float, np.ndarray]:
        """Fused value and gradient, no raising: non-finite -> (-inf, 0)."""
        lay = self.layout
        spec = self.spec
        v = np.asarray(v, dtype=float)
        z0g = v[lay.z_intercept_g]
        z1g = v[lay.z_slope_g]
        z0j = v[lay.z_intercept_j]
        z1j = v[lay.z_slope_j]
        mu0g, mu1g, mu0j, mu1j = v[lay.hyper_mu]
        ls = v[lay.hyper_log_sigma]
        b2, b3, b4 = v[lay.fixed]
        ls_res = float(v[lay.log_sigma_resid][0])

        with np.errstate(over="ignore", invalid="ignore"):
            s0g, s1g, s0j, s1j = np.exp(ls)
            sigma = math.exp(ls_res) if ls_res < 350.0 else math.inf

            beta0_g = mu0g + s0g * z0g
            beta1_g = mu1g + s1g * z1g
            beta0_j = mu0j + s0j * z0j
            beta1_j = mu1j + s1j * z1j
            eta = (
                beta0_g[self.g_of] + beta0_j[self.j_of]
                + self.female * (beta1_g[self.g_of] + beta1_j[self.j_of])
                + b2 * self.recent + b3 * self.past + b4 * self.tenure
            )
            resid = self.y - eta
            ssr = float(np.dot(resid, resid))
            var = sigma * sigma
            if not (var > 0.0) or not math.isfinite(ssr):
                return -math.inf, np.zeros(lay.dim)

            S_mu = spec.hyperprior_mu_scale
            S_sig = spec.hyperprior_sigma_scale
            s2, s3, s4 = spec.fixed_effect_prior_scales
            S_res = spec.residual_sigma_prior_scale
            mu_vec = v[lay.hyper_mu]
            scale_vec = np.array([s0g, s1g, s0j, s1j])

            logp = (
                -0.5 * LOG_2PI * self.n - self.n * ls_res - 0.5 * ssr / var
                - 0.5 * LOG_2PI * (z0g.size + z1g.size + z0j.size + z1j.size)
                - 0.5 * (np.dot(z0g, z0g) + np.dot(z1g, z1g)
                         + np.dot(z0j, z0j) + np.dot(z1j, z1j))
                - 0.5 * LOG_2PI * 4 - 4 * math.log(S_mu)
                - 0.5 * float(np.dot(mu_vec, mu_vec)) / S_mu ** 2
                + 4 * (math.log(2.0) - 0.5 * LOG_2PI - math.log(S_sig))
                - 0.5 * float(np.dot(scale_vec, scale_vec)) / S_sig ** 2
                + float(np.sum(ls))
                - 1.5 * LOG_2PI - math.log(s2) - math.log(s3) - math.log(s4)
                - 0.5 * (b2 * b2 / s2 ** 2 + b3 * b3 / s3 ** 2 + b4 * b4 / s4 ** 2)
                + math.log(2.0) - 0.5 * LOG_2PI - math.log(S_res)
                - 0.5 * (sigma / S_res) ** 2 + ls_res
            )
            if not math.isfinite(logp):
                return -math.inf, np.zeros(lay.dim)

            # d logp / d eta_i
            w = resid / var
            G, J = lay.G, lay.J
            sum_g = np.bincount(self.g_of, weights=w, minlength=G)
            sum_gf = np.bincount(self.g_of, weights=w * self.female, minlength=G)
            sum_j = np.bincount(self.j_of, weights=w, minlength=J)
            sum_jf = np.bincount(self.j_of, weights=w * self.female, minlength=J)

            grad = np.empty(lay.dim)
            grad[lay.z_intercept_g] = s0g * sum_g - z0g
            grad[lay.z_slope_g] = s1g * sum_gf - z1g
            grad[lay.z_intercept_j] = s0j * sum_j - z0j
            grad[lay.z_slope_j] = s1j * sum_jf - z1j
            grad[lay.hyper_mu] = np.array([
                np.sum(sum_g), np.sum(sum_gf), np.sum(sum_j), np.sum(sum_jf),
            ]) - mu_vec / S_mu ** 2
            grad[lay.hyper_log_sigma] = np.array([
                s0g * float(np.dot(sum_g, z0g)),
                s1g * float(np.dot(sum_gf, z1g)),
                s0j * float(np.dot(sum_j, z0j)),
                s1j * float(np.dot(sum_jf, z1j)),
            ]) + 1.0 - scale_vec ** 2 / S_sig ** 2
            grad[lay.fixed] = np.array([
                float(np.dot(w, self.recent)) - b2 / s2 ** 2,
                float(np.dot(w, self.past)) - b3 / s3 ** 2,
                float(np.dot(w, self.tenure)) - b4 / s4 ** 2,
            ])
            grad[lay.log_sigma_resid] = (
                -self.n + ssr / var + 1.0 - var / S_res ** 2)

            if not np.all(np.isfinite(grad)):
                return -math.inf, np.zeros(lay.dim)
        return float(logp), grad

    # -- natural-scale views ----------------------------------------------

    def to_natural_matrix(self, draws: np.ndarray) -> np.ndarray:
        """Transform a (n_draws, dim) unconstrained matrix to natural scale."""
        lay = self.layout
        draws = np.asarray(draws, dtype=float)
        if draws.ndim != 2 or draws.shape[1] != lay.dim:
            raise ContractViolation(
                f"draw matrix has shape {draws.shape}, expected (*, {lay.dim})")
        mu = draws[:, lay.hyper_mu]
        scales = np.exp(draws[:, lay.hyper_log_sigma])
        out = np.empty((draws.shape[0], lay.natural_dim))
        G, J = lay.G, lay.J
        out[:, 0:G] = mu[:, 0:1] + scales[:, 0:1] * draws[:, lay.z_intercept_g]
        out[:, G:2 * G] = mu[:, 1:2] + scales[:, 1:2] * draws[:, lay.z_slope_g]
        out[:, 2 * G:2 * G + J] = mu[:, 2:3] + scales[:, 2:3] * draws[:, lay.z_intercept_j]
        out[:, 2 * G + J:2 * G + 2 * J] = mu[:, 3:4] + scales[:, 3:4] * draws[:, lay.z_slope_j]
        base = 2 * G + 2 * J
        out[:, base:base + 4] = mu
        out[:, base + 4:base + 8] = scales
        out[:, base + 8:base + 11] = draws[:, lay.fixed]
        out[:, base + 11] = np.exp(draws[:, lay.log_sigma_resid][:, 0])
        return out


# Module-level wrappers with the documented operation signatures.

def log_posterior(v: np.ndarray, data: list[WorkerRecord], index: FactorIndex,
                  spec: ModelSpec) -> float:
    return HierarchicalModel(data, index, spec).log_posterior(v)


def grad_log_posterior(v: np.ndarray, data: list[WorkerRecord], index: FactorIndex,
                       spec: ModelSpec) -> np.ndarray:
    return HierarchicalModel(data, index, spec).grad_log_posterior(v)
