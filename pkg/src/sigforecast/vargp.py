"""Variational sparse-spectrum GP readout over signature features.

Weight-space model: H independent readout heads share one feature pass; each
head keeps a Gaussian weight posterior (mean + full Cholesky).  Spectral
parameters (frequencies, phases) are either fixed at their priors or given
factorized variationals and learned through the reparameterized frozen
outcomes.  Objectives: ELBO, PPGPR (log outside the expectation), and PPGPR
with a latent-variance penalty.  Gradients come from the reverse-mode tape in
:mod:`sigforecast.autodiff` and are certified against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special as _sp

from . import autodiff as ad
from . import randfourier, sigfeatures
from .arrayops import FracDiffOrders
from .randfourier import RandomBasis, SpectralParams, TWO_PI

LOG_2PI = float(np.log(2.0 * np.pi))

MODES = ("elbo", "ppgpr", "ppgpr_penalty")

#: parameter blocks, in a fixed order (raw, unconstrained domain)
PARAM_BLOCKS = (
    "mu_w",
    "chol_raw",
    "log_noise",
    "log_ell",
    "rho_decay",
    "rho_q",
    "freq_mean",
    "log_freq_std",
    "log_phase_a",
    "log_phase_b",
)


class NumericalError(RuntimeError):
    """Raised when an objective or gradient stops being finite."""


def canonical_mode(mode: str) -> str:
    m = mode.strip().lower().replace("+", "_").replace("-", "_")
    if m not in MODES:
        raise ValueError(f"unknown objective mode {mode!r}; expected one of {MODES}")
    return m


# ---------------------------------------------------------------------------
# closed-form pieces (plain arrays)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictiveDistribution:
    """Per-point latent Gaussian: means and variances (observation noise is
    added downstream)."""

    means: np.ndarray
    vars: np.ndarray


def predictive(phi: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> PredictiveDistribution:
    """Weight-space predictive for one head.

    means = phi @ mean; var_i = ||chol^T phi_i||^2, computed row-wise without
    ever materializing the n x n covariance.
    """
    phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
    mean = np.asarray(mean, dtype=np.float64)
    chol = np.asarray(chol, dtype=np.float64)
    if phi.shape[1] != mean.shape[0] or chol.shape != (mean.shape[0], mean.shape[0]):
        raise ValueError("feature/posterior shape mismatch")
    g = phi @ chol
    return PredictiveDistribution(means=phi @ mean, vars=np.einsum("nf,nf->n", g, g))


def elbo_datafit(y, means, variances, noise_var: float) -> float:
    """Sum_i E_q[log N(y_i | f_i, noise_var)] in closed form."""
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    y = np.asarray(y, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    quad = (y - means) ** 2 + variances
    return float(np.sum(-0.5 * (LOG_2PI + np.log(noise_var)) - quad / (2.0 * noise_var)))


def ppgpr_datafit(y, means, variances, noise_var: float) -> float:
    """Sum_i log N(y_i | mu_i, sigma_i^2 + noise_var) (Gaussian convolution)."""
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    y = np.asarray(y, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    total = np.asarray(variances, dtype=np.float64) + noise_var
    return float(np.sum(-0.5 * (LOG_2PI + np.log(total)) - (y - means) ** 2 / (2.0 * total)))


def kl_weights(mean: np.ndarray, chols: np.ndarray) -> float:
    """KL(q(w) || N(0, I)) summed over heads.

    mean is [F x H]; chols is [H x F x F] lower-triangular with positive
    diagonal.
    """
    mean = np.atleast_2d(np.asarray(mean, dtype=np.float64))
    chols = np.asarray(chols, dtype=np.float64)
    if chols.ndim == 2:
        chols = chols[None]
    f = mean.shape[0]
    total = 0.0
    for h in range(chols.shape[0]):
        lh = chols[h]
        diag = np.diagonal(lh)
        if np.any(diag <= 0):
            raise ValueError("Cholesky diagonal must be strictly positive")
        total += 0.5 * (
            np.sum(lh * lh) + np.sum(mean[:, h] ** 2) - f - 2.0 * np.sum(np.log(diag))
        )
    return float(total)


def kl_frequencies(params: SpectralParams) -> float:
    """Sum of 1-D Gaussian KLs, q = N(mu, sigma^2) vs prior N(0, 1/ell^2)."""
    params.validate()
    prior_var = 1.0 / params.lengthscales[:, :, None] ** 2
    var = params.freq_stds**2
    kl = 0.5 * (
        (var + params.freq_means**2) / prior_var - 1.0 - np.log(var) + np.log(prior_var)
    )
    return float(np.sum(kl))


def kl_phases(phase_a, phase_b) -> float:
    """KL of the scaled-Beta phase variationals against U(0, 2pi).

    The [0, 2pi] scaling cancels, leaving the negative Beta differential
    entropy per phase.
    """
    a = np.asarray(phase_a, dtype=np.float64)
    b = np.asarray(phase_b, dtype=np.float64)
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("phase shapes must be strictly positive")
    ent = (
        _sp.betaln(a, b)
        - (a - 1.0) * _sp.digamma(a)
        - (b - 1.0) * _sp.digamma(b)
        + (a + b - 2.0) * _sp.digamma(a + b)
    )
    return float(np.sum(-ent))


# ---------------------------------------------------------------------------
# model state
# ---------------------------------------------------------------------------


@dataclass
class VariationalState:
    """Raw (unconstrained) trainable parameters plus the frozen basis."""

    params: dict
    basis: RandomBasis
    heads: int
    window: int
    spectral: str = "variational"
    penalty_weight: float = 0.01

    @property
    def levels(self) -> int:
        return self.basis.levels

    @property
    def rff_dim(self) -> int:
        return self.basis.rff_dim

    @property
    def in_dim(self) -> int:
        return self.basis.in_dim

    @property
    def n_features(self) -> int:
        return self.basis.levels * self.basis.rff_dim + 1

    def copy(self) -> "VariationalState":
        return VariationalState(
            params={k: v.copy() for k, v in self.params.items()},
            basis=self.basis,
            heads=self.heads,
            window=self.window,
            spectral=self.spectral,
            penalty_weight=self.penalty_weight,
        )


def init_state(
    basis: RandomBasis,
    heads: int,
    window: int,
    lengthscales,
    spectral: str = "variational",
    penalty_weight: float = 0.01,
    target_var: float = 1.0,
    lambda_init: float = 0.99,
    q_init: float = 0.5,
) -> VariationalState:
    """Near-prior initialization of every trainable block."""
    if spectral not in ("variational", "prior"):
        raise ValueError("spectral must be 'variational' or 'prior'")
    m, d, dd = basis.levels, basis.in_dim, basis.rff_dim
    f = m * dd + 1
    ell = np.broadcast_to(np.asarray(lengthscales, dtype=np.float64), (m, d)).copy()
    if np.any(ell <= 0):
        raise ValueError("lengthscales must be positive")
    chol_raw = np.zeros((heads, f, f))
    idx = np.arange(f)
    chol_raw[:, idx, idx] = np.log(1e-2)
    params = {
        "mu_w": np.zeros((f, heads)),
        "chol_raw": chol_raw,
        "log_noise": np.array(0.5 * np.log(0.1 * max(target_var, 1e-12))),
        "log_ell": np.log(ell),
        "rho_decay": np.full(dd, _sp.logit(lambda_init)),
        "rho_q": np.full(dd, _sp.logit(q_init)),
        "freq_mean": basis.eps_freq / ell[:, :, None],
        "log_freq_std": np.full((m, d, dd), np.log(1e-2)),
        "log_phase_a": np.zeros((m, dd)),
        "log_phase_b": np.zeros((m, dd)),
    }
    return VariationalState(
        params=params,
        basis=basis,
        heads=heads,
        window=window,
        spectral=spectral,
        penalty_weight=penalty_weight,
    )


def spectral_params(state: VariationalState) -> SpectralParams:
    p = state.params
    return SpectralParams(
        lengthscales=np.exp(p["log_ell"]),
        freq_means=p["freq_mean"],
        freq_stds=np.exp(p["log_freq_std"]),
        phase_a=np.exp(p["log_phase_a"]),
        phase_b=np.exp(p["log_phase_b"]),
    )


def decay_and_orders(state: VariationalState):
    lam = _sp.expit(state.params["rho_decay"])
    orders = FracDiffOrders(_sp.expit(state.params["rho_q"]), state.window)
    return lam, orders


def chol_matrices(state: VariationalState) -> np.ndarray:
    """Naturalized per-head Cholesky factors [H x F x F]."""
    raw = state.params["chol_raw"]
    out = np.tril(raw, -1)
    idx = np.arange(raw.shape[-1])
    out[:, idx, idx] = np.exp(raw[:, idx, idx])
    return out


def noise_variance(state: VariationalState) -> float:
    return float(np.exp(2.0 * state.params["log_noise"]))


def features(state: VariationalState, x: np.ndarray) -> np.ndarray:
    """Assembled [L x (MD+1)] features for one input sequence (numpy path)."""
    sp = spectral_params(state)
    omega = randfourier.reparam_frequencies(state.basis, sp, state.spectral)
    phases = randfourier.reparam_phases(state.basis, sp, state.spectral)
    lam, orders = decay_and_orders(state)
    return sigfeatures.feature_matrix(x, omega, phases, orders, lam)


def head_predictive(state: VariationalState, phi: np.ndarray) -> PredictiveDistribution:
    """All-head predictive for feature rows: means/vars are [n x H]."""
    phi = np.atleast_2d(phi)
    mu = state.params["mu_w"]
    chols = chol_matrices(state)
    means = phi @ mu
    variances = np.empty((phi.shape[0], state.heads))
    for h in range(state.heads):
        g = phi @ chols[h]
        variances[:, h] = np.einsum("nf,nf->n", g, g)
    return PredictiveDistribution(means=means, vars=variances)


# ---------------------------------------------------------------------------
# objective (numpy forward)
# ---------------------------------------------------------------------------


def _masked_datafit(mode, y, means, variances, mask, noise_var):
    if mode == "elbo":
        per = -0.5 * (LOG_2PI + np.log(noise_var)) - ((y - means) ** 2 + variances) / (
            2.0 * noise_var
        )
    else:
        total = variances + noise_var
        per = -0.5 * (LOG_2PI + np.log(total)) - (y - means) ** 2 / (2.0 * total)
    return float(np.sum(mask * per))


def objective_terms(
    state: VariationalState,
    x: np.ndarray,
    y: np.ndarray,
    mask: np.ndarray,
    mode: str,
    kl_scale: float = 1.0,
    rows=None,
) -> dict:
    """All objective components on one series batch (no gradients).

    ``rows`` optionally restricts the supervised time steps (features are
    still computed over the full history); ``kl_scale`` is the stochastic
    batch fraction N_batch / N_total multiplying the KL regularizers.
    """
    mode = canonical_mode(mode)
    phi = features(state, x)
    if rows is not None:
        phi, y, mask = phi[rows], y[rows], mask[rows]
    pred = head_predictive(state, phi)
    noise_var = noise_variance(state)
    datafit = _masked_datafit(mode, y, pred.means, pred.vars, mask, noise_var)
    klw = kl_weights(state.params["mu_w"], chol_matrices(state))
    if state.spectral == "variational":
        sp = spectral_params(state)
        klf = kl_frequencies(sp)
        klp = kl_phases(sp.phase_a, sp.phase_b)
    else:
        klf = 0.0
        klp = 0.0
    penalty = (
        state.penalty_weight * float(np.sum(mask * pred.vars))
        if mode == "ppgpr_penalty"
        else 0.0
    )
    objective = datafit - kl_scale * (klw + klf + klp) - penalty
    return {
        "datafit": datafit,
        "kl_weights": klw,
        "kl_frequencies": klf,
        "kl_phases": klp,
        "penalty": penalty,
        "objective": objective,
    }


def objective_value(state, x, y, mask, mode, kl_scale: float = 1.0, rows=None) -> float:
    return objective_terms(state, x, y, mask, mode, kl_scale, rows)["objective"]


# ---------------------------------------------------------------------------
# objective (tape) and gradients
# ---------------------------------------------------------------------------


class _TapeOps:
    """Backend facade handing the shared level recursion tape primitives."""

    @staticmethod
    def scan(xx, lam_pow):
        if lam_pow is None:
            return ad.cumsum(xx, axis=0)
        return ad.geometric_scan(xx, lam_pow)

    @staticmethod
    def shift1(xx):
        return ad.shift_time(xx, 1)

    @staticmethod
    def power(lam, m):
        return lam**m


def _frac_weights_graph(q, window: int, dd: int):
    rows = [ad.reshape(ad.wrap(np.ones(dd)), (1, dd))]
    prev = ad.wrap(np.ones(dd))
    for k in range(1, window):
        prev = prev * (((k - 1.0) - q) * (1.0 / k))
        rows.append(ad.reshape(prev, (1, dd)))
    return ad.concat(rows, axis=0) if len(rows) > 1 else rows[0]


def _features_graph(p: dict, state: VariationalState, x: np.ndarray):
    basis = state.basis
    m_levels, dd = basis.levels, basis.rff_dim
    lam = ad.sigmoid(p["rho_decay"])
    q = ad.sigmoid(p["rho_q"])
    w = _frac_weights_graph(q, state.window, dd)

    if state.spectral == "variational":
        omega = p["freq_mean"] + ad.exp(p["log_freq_std"]) * basis.eps_freq
        a = ad.exp(p["log_phase_a"])
        b = ad.exp(p["log_phase_b"])
        ga = randfourier.gamma_reparam(a, basis.eps_phase[0], np.log(basis.u_aug[0]), ops=ad)
        gb = randfourier.gamma_reparam(b, basis.eps_phase[1], np.log(basis.u_aug[1]), ops=ad)
        phases = TWO_PI * ga / (ga + gb)
    else:
        inv_ell = ad.reshape(ad.exp(-p["log_ell"]), (m_levels, basis.in_dim, 1))
        omega = inv_ell * basis.eps_freq
        phases = ad.wrap(TWO_PI * basis.u_prior)

    xc = ad.wrap(np.asarray(x, dtype=np.float64))
    first_row_mask = np.ones((x.shape[0], 1))
    first_row_mask[0, 0] = 0.0  # first point is the basepoint, no increment
    du = []
    for m in range(m_levels):
        u_m = ad.cos(xc @ omega[m] + phases[m])
        du.append(ad.frac_diff(u_m, w) * first_row_mask)
    levels = sigfeatures.level_recursion(du, lam, ops=_TapeOps)

    blocks = []
    for m in range(1, m_levels + 1):
        scaled = float(np.sqrt(2.0**m / dd)) * levels[m - 1]
        blocks.append(ad.safe_normalize_rows(scaled, sigfeatures.NORM_EPS))
    ones = ad.wrap(np.ones((x.shape[0], 1)))
    return ad.concat([ones] + blocks, axis=1)


def build_objective_graph(
    state: VariationalState,
    x: np.ndarray,
    y: np.ndarray,
    mask: np.ndarray,
    mode: str,
    kl_scale: float = 1.0,
    rows=None,
):
    """Tape graph of the objective; returns (objective tensor, param tensors)."""
    mode = canonical_mode(mode)
    p = {k: ad.parameter(v) for k, v in state.params.items()}
    f = state.n_features
    phi = _features_graph(p, state, x)
    yv = np.asarray(y, dtype=np.float64)
    maskv = np.asarray(mask, dtype=np.float64)
    if rows is not None:
        phi = phi[rows]
        yv, maskv = yv[rows], maskv[rows]
    n = phi.shape[0]

    means = phi @ p["mu_w"]
    lb = ad.tril_exp_diag(p["chol_raw"])  # [H, F, F]
    lcat = ad.reshape(ad.transpose(lb, (1, 0, 2)), (f, state.heads * f))
    g = ad.reshape(phi @ lcat, (n, state.heads, f))
    variances = ad.sumsq(g, axis=2)
    tr_sum = ad.sumsq(lb)
    raw_diag_sum = ad.sum_(ad.batch_diag_part(p["chol_raw"]))

    noise_var = ad.exp(2.0 * p["log_noise"])
    if mode == "elbo":
        quad = (yv - means) ** 2 + variances
        per = -0.5 * (LOG_2PI + ad.log(noise_var)) - quad / (2.0 * noise_var)
    else:
        total = variances + noise_var
        per = -0.5 * (LOG_2PI + ad.log(total)) - (yv - means) ** 2 / (2.0 * total)
    datafit = ad.sum_(per * maskv)

    klw = 0.5 * (tr_sum + ad.sum_(p["mu_w"] * p["mu_w"]) - float(f * state.heads)) - raw_diag_sum

    if state.spectral == "variational":
        log_pv = -2.0 * p["log_ell"]
        inv_pv = ad.reshape(ad.exp(2.0 * p["log_ell"]), (state.levels, state.in_dim, 1))
        var_f = ad.exp(2.0 * p["log_freq_std"])
        klf = ad.sum_(
            0.5
            * (
                (var_f + p["freq_mean"] * p["freq_mean"]) * inv_pv
                - 1.0
                - 2.0 * p["log_freq_std"]
                + ad.reshape(log_pv, (state.levels, state.in_dim, 1))
            )
        )
        a = ad.exp(p["log_phase_a"])
        b = ad.exp(p["log_phase_b"])
        ln_beta = ad.gammaln(a) + ad.gammaln(b) - ad.gammaln(a + b)
        ent = (
            ln_beta
            - (a - 1.0) * ad.digamma(a)
            - (b - 1.0) * ad.digamma(b)
            + (a + b - 2.0) * ad.digamma(a + b)
        )
        klp = ad.sum_(-ent)
        kl_total = klw + klf + klp
    else:
        kl_total = klw

    objective = datafit - kl_scale * kl_total
    if mode == "ppgpr_penalty":
        objective = objective - state.penalty_weight * ad.sum_(variances * maskv)
    return objective, p


def objective_and_grads(
    state: VariationalState,
    x: np.ndarray,
    y: np.ndarray,
    mask: np.ndarray,
    mode: str,
    kl_scale: float = 1.0,
    rows=None,
):
    """Objective value and exact reverse-mode gradients of the objective.

    Raises:
        NumericalError: naming the parameter block, if any gradient (or the
            objective itself) is non-finite.
    """
    obj, p = build_objective_graph(state, x, y, mask, mode, kl_scale, rows)
    val = float(obj.value)
    if not np.isfinite(val):
        raise NumericalError("objective is non-finite")
    ad.backward(obj)
    grads = {}
    for k in PARAM_BLOCKS:
        gk = p[k].grad
        if gk is None:
            gk = np.zeros_like(state.params[k])
        if not np.all(np.isfinite(gk)):
            raise NumericalError(f"non-finite gradient in parameter block '{k}'")
        grads[k] = np.asarray(gk, dtype=np.float64).reshape(state.params[k].shape)
    return val, grads


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Standard Adam with bias correction (defaults per the usual setting)."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        """In-place descent step along ``grads`` (gradients of a loss)."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] *= self.beta1
            self.m[k] += (1.0 - self.beta1) * g
            self.v[k] *= self.beta2
            self.v[k] += (1.0 - self.beta2) * (g * g)
            params[k] -= (self.lr / bc1) * self.m[k] / (np.sqrt(self.v[k] / bc2) + self.eps)
