"""End-to-end forecasting: lag features, multi-horizon training, prediction,
calibration, quantile-loss metrics, and the seasonal-naive baseline.

One model serves all horizon offsets: H readout heads share a single feature
pass over the full observed history, head h supervised on the target h steps
ahead.  Each series is standardized on its observed part; predictive
distributions are de-standardized on the way out.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _st

from . import randfourier, vargp
from .dataio import Dataset
from .vargp import NumericalError, VariationalState

DEFAULT_QUANTILES = tuple(np.round(np.arange(1, 10) * 0.1, 1))
DEFAULT_CALIBRATION_GRID = tuple(np.round(np.arange(1, 21) * 0.1, 1))

#: conventional seasonalities per frequency tag
SEASON_BY_FREQ = {"H": 24, "D": 7}


class TrainingDivergedError(RuntimeError):
    """Objective left the finite range; carries the last finite model."""

    def __init__(self, message: str, model=None, step: int = -1):
        super().__init__(message)
        self.model = model
        self.step = step


@dataclass
class ForecastConfig:
    """Everything the pipeline needs; defaults follow the reference setup
    (D=200, M=5, 9 lags, lr 1e-3, 200 epochs with a 2e4-step floor)."""

    horizon: int = 100
    lags: int = 9
    rff_dim: int = 200
    levels: int = 5
    window: int = 32
    lr: float = 1e-3
    epochs: int = 200
    min_steps: int = 20000
    penalty_weight: float = 0.01
    mode: str = "ppgpr_penalty"
    spectral: str = "variational"
    quantile_levels: tuple = DEFAULT_QUANTILES
    calibration_grid: tuple = DEFAULT_CALIBRATION_GRID
    season: int | None = None
    seed: int = 0
    step_batch: int = 0
    lambda_init: float = 0.99
    q_init: float = 0.5

    def __post_init__(self):
        q = np.asarray(self.quantile_levels, dtype=np.float64)
        if q.size == 0 or not np.all((q > 0) & (q < 1)) or not np.all(np.diff(q) > 0):
            raise ValueError("quantile levels must be strictly increasing in (0, 1)")
        if len(self.calibration_grid) == 0:
            raise ValueError("calibration grid must be non-empty")
        if self.horizon < 1 or self.lags < 0 or self.window < 1:
            raise ValueError("horizon must be >= 1, lags >= 0, window >= 1")
        self.mode = vargp.canonical_mode(self.mode)


@dataclass
class QuantileForecast:
    """Quantile matrix [H x Q] plus the Gaussian (mean, std) that produced it."""

    values: np.ndarray
    levels: tuple
    means: np.ndarray
    stds: np.ndarray

    @property
    def median(self) -> np.ndarray:
        levels = np.asarray(self.levels)
        idx = int(np.argmin(np.abs(levels - 0.5)))
        return self.values[:, idx]


@dataclass
class Model:
    """Trained state plus per-series bookkeeping."""

    state: VariationalState
    config: ForecastConfig
    scalers: dict = field(default_factory=dict)
    betas: dict = field(default_factory=dict)
    trace: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    freq: str = "H"

    @property
    def horizon(self) -> int:
        return self.state.heads


# ---------------------------------------------------------------------------
# data plumbing
# ---------------------------------------------------------------------------


def lag_augment(y: np.ndarray, lags: int) -> np.ndarray:
    """Row t holds (y_t, y_{t-1}, ..., y_{t-lags}), zero-padded at the start."""
    if lags < 0:
        raise ValueError("lags must be >= 0")
    y = np.asarray(y, dtype=np.float64)
    t = y.shape[0]
    x = np.zeros((t, lags + 1))
    for j in range(min(lags, t - 1) + 1):
        x[j:, j] = y[: t - j]
    return x


def standardize(y: np.ndarray):
    """(z, mean, std) with the std floored at 1e-8; z = (y - mean) / std."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] < 2:
        raise ValueError("series must have length >= 2")
    mean = float(y.mean())
    std = max(float(y.std()), 1e-8)
    return (y - mean) / std, mean, std


def build_targets(z: np.ndarray, horizon: int):
    """Targets [T x H] and validity mask; head h at row t supervises z_{t+h}."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    t = z.shape[0]
    targets = np.zeros((t, horizon))
    mask = np.zeros((t, horizon))
    for h in range(1, horizon + 1):
        if t - h > 0:
            targets[: t - h, h - 1] = z[h:]
            mask[: t - h, h - 1] = 1.0
    return targets, mask


def compute_steps(epochs: int, n_series: int, min_steps: int) -> int:
    """Optimizer step count: epochs x series, floored at min_steps."""
    return max(int(epochs) * int(n_series), int(min_steps))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def train(dataset: Dataset, config: ForecastConfig, log_every: int = 0) -> Model:
    """Fit the model on full-series batches; deterministic given the seed.

    Raises:
        TrainingDivergedError: if the objective or a gradient goes non-finite;
            the exception carries the last finite model.
    """
    if not dataset.records:
        raise ValueError("training dataset is empty")
    horizon = config.horizon
    lags = config.lags
    d = lags + 1

    scalers = {}
    xs, ys, masks = [], [], []
    for rec in dataset.records:
        z, mean, std = standardize(rec.target)
        scalers[rec.item_id] = (mean, std)
        xs.append(lag_augment(z, lags))
        targets, mask = build_targets(z, horizon)
        ys.append(targets)
        masks.append(mask)

    pool = np.concatenate(xs, axis=0)
    ell = randfourier.median_heuristic(pool, seed=config.seed)
    basis = randfourier.sample_basis(config.levels, d, config.rff_dim, config.seed)
    state = vargp.init_state(
        basis,
        heads=horizon,
        window=config.window,
        lengthscales=ell,
        spectral=config.spectral,
        penalty_weight=config.penalty_weight,
        target_var=1.0,
        lambda_init=config.lambda_init,
        q_init=config.q_init,
    )

    n_total = float(sum(m.sum() for m in masks))
    n_series = len(xs)
    steps = compute_steps(config.epochs, n_series, config.min_steps)
    adam = vargp.Adam(lr=config.lr)
    rng = np.random.default_rng(config.seed + 1)
    trace = np.zeros((steps, 2))
    model = Model(state=state, config=config, scalers=scalers, freq=dataset.freq)
    last_finite = state.copy()

    for step in range(steps):
        s = step % n_series
        rows = None
        t_len = xs[s].shape[0]
        if config.step_batch and t_len > config.step_batch:
            rows = np.sort(rng.choice(t_len, config.step_batch, replace=False))
        n_batch = masks[s].sum() if rows is None else masks[s][rows].sum()
        kl_scale = float(n_batch) / n_total if n_total > 0 else 1.0
        try:
            value, grads = vargp.objective_and_grads(
                state, xs[s], ys[s], masks[s], config.mode, kl_scale, rows
            )
        except NumericalError as err:
            model.state = last_finite
            model.trace = trace[:step]
            raise TrainingDivergedError(
                f"training diverged at step {step}: {err}", model=model, step=step
            ) from err
        trace[step] = (step, -value)
        last_finite = state.copy()
        adam.step(state.params, {k: -g for k, g in grads.items()})
        if log_every and step % log_every == 0:
            print(f"step {step:6d}  loss {-value:.6f}")

    model.trace = trace
    return model


# ---------------------------------------------------------------------------
# prediction and calibration
# ---------------------------------------------------------------------------


def _scaler_for(model: Model, y_obs: np.ndarray, item_id):
    if item_id is not None and item_id in model.scalers:
        return model.scalers[item_id]
    _, mean, std = standardize(y_obs)
    return mean, std


def _head_gaussians(model: Model, phi_rows: np.ndarray):
    pred = vargp.head_predictive(model.state, phi_rows)
    noise = vargp.noise_variance(model.state)
    return pred.means, np.sqrt(pred.vars + noise)


def predict(model: Model, y_obs: np.ndarray, item_id=None, beta: float | None = None) -> QuantileForecast:
    """Forecast H steps past the end of ``y_obs`` from its full history."""
    y_obs = np.asarray(y_obs, dtype=np.float64)
    if y_obs.shape[0] < 1:
        raise ValueError("observed series must be non-empty")
    if beta is None:
        beta = model.betas.get(item_id, 1.0)
    mean, std = _scaler_for(model, y_obs, item_id)
    z = (y_obs - mean) / std
    x = lag_augment(z, model.config.lags)
    phi = vargp.features(model.state, x)
    mu, sigma = _head_gaussians(model, phi[-1:])
    mu = mu[0] * std + mean
    sigma = sigma[0] * std * beta
    levels = tuple(model.config.quantile_levels)
    zq = _st.norm.ppf(np.asarray(levels))
    values = mu[:, None] + sigma[:, None] * zq[None, :]
    return QuantileForecast(values=values, levels=levels, means=mu, stds=sigma)


def calibrate(model: Model, y_obs: np.ndarray, item_id=None) -> float:
    """Grid-select the std multiplier minimizing CRPS on rolling windows.

    Non-overlapping windows of length H strided backwards through the
    observed part; returns 1.0 with a warning when the series is too short
    to host a single window.
    """
    y_obs = np.asarray(y_obs, dtype=np.float64)
    h = model.horizon
    lags = model.config.lags
    if y_obs.shape[0] <= h:
        warnings.warn("observed part too short to calibrate; using beta = 1")
        return 1.0
    min_context = max(2, lags + 1)
    origins = []
    o = y_obs.shape[0] - h
    while o >= min_context:
        origins.append(o)
        o -= h
    if not origins:
        warnings.warn("observed part too short to calibrate; using beta = 1")
        return 1.0

    mean, std = _scaler_for(model, y_obs, item_id)
    z = (y_obs - mean) / std
    phi = vargp.features(model.state, lag_augment(z, lags))
    rows = np.array([o - 1 for o in origins])
    mu, sigma = _head_gaussians(model, phi[rows])
    mu = mu * std + mean
    sigma = sigma * std
    actuals = np.stack([y_obs[o : o + h] for o in origins])

    levels = np.asarray(model.config.quantile_levels)
    zq = _st.norm.ppf(levels)
    best_beta, best_score = 1.0, np.inf
    for beta in model.config.calibration_grid:
        q = mu[..., None] + beta * sigma[..., None] * zq
        score = _pinball_total(q, actuals, levels)
        if score < best_score - 1e-15:
            best_score, best_beta = score, float(beta)
    return best_beta


# ---------------------------------------------------------------------------
# metrics and baseline
# ---------------------------------------------------------------------------


def pinball(q: float, y: float, tau: float) -> float:
    """Quantile (pinball) loss (tau - 1{y < q}) * (y - q); always >= 0."""
    if not 0.0 < tau < 1.0:
        raise ValueError("quantile level must lie in (0, 1)")
    return (tau - (y < q)) * (y - q)


def _pinball_total(q, actuals, levels) -> float:
    """Sum over all windows/steps/levels of 2 * pinball loss."""
    y = np.asarray(actuals, dtype=np.float64)[..., None]
    q = np.asarray(q, dtype=np.float64)
    ind = (y < q).astype(np.float64)
    return float(np.sum(2.0 * (levels - ind) * (y - q)))


def crps(forecasts, actuals, levels=DEFAULT_QUANTILES) -> float:
    """Normalized mean quantile loss over series, steps and levels.

    sum of 2 * pinball over everything, divided by (#levels * sum |y|).
    """
    if isinstance(forecasts, (np.ndarray, QuantileForecast)):
        forecasts = [forecasts]
        actuals = [actuals]
    levels = np.asarray(levels, dtype=np.float64)
    num = 0.0
    denom = 0.0
    for qf, y in zip(forecasts, actuals):
        q = qf.values if isinstance(qf, QuantileForecast) else np.asarray(qf)
        y = np.asarray(y, dtype=np.float64)
        if q.shape != (y.shape[0], levels.shape[0]):
            raise ValueError("forecast/actual shapes disagree")
        num += _pinball_total(q, y, levels)
        denom += float(np.sum(np.abs(y)))
    if denom <= 0:
        raise ValueError("CRPS normalization undefined: actuals sum to zero")
    return num / (levels.shape[0] * denom)


def seasonal_naive(series: np.ndarray, season: int, horizon: int,
                   levels=DEFAULT_QUANTILES) -> QuantileForecast:
    """Repeat the most recent seasonal observation (recursively past one
    season); degenerate quantiles (all columns equal the point forecast)."""
    series = np.asarray(series, dtype=np.float64)
    if season < 1:
        raise ValueError("season must be >= 1")
    t = series.shape[0]
    if t < season:
        point = np.full(horizon, series[-1])
    else:
        ext = np.concatenate([series, np.zeros(horizon)])
        for hh in range(horizon):
            ext[t + hh] = ext[t + hh - season]
        point = ext[t:]
    values = np.repeat(point[:, None], len(levels), axis=1)
    return QuantileForecast(values=values, levels=tuple(levels), means=point,
                            stds=np.zeros(horizon))


def default_season(freq: str) -> int:
    return SEASON_BY_FREQ.get(str(freq).upper()[:1], 1)


# ---------------------------------------------------------------------------
# evaluation driver
# ---------------------------------------------------------------------------


@dataclass
class SeriesEvaluation:
    item_id: str
    beta: float
    forecast: QuantileForecast
    actual: np.ndarray
    crps: float
    coverage3: float
    naive_crps: float | None = None


def evaluate(model: Model, dataset: Dataset, calibrate_stds: bool = True,
             with_naive: bool = False, season: int | None = None) -> list:
    """Score each test series: split off the final prediction-length values,
    calibrate on the observed part, forecast, and CRPS against the targets."""
    h = model.horizon
    out = []
    if season is None:
        season = model.config.season or default_season(dataset.freq)
    for rec in dataset.records:
        if rec.target.shape[0] <= h:
            raise ValueError(f"series {rec.item_id!r} shorter than the horizon")
        observed, actual = rec.target[:-h], rec.target[-h:]
        beta = calibrate(model, observed, rec.item_id) if calibrate_stds else 1.0
        qf = predict(model, observed, rec.item_id, beta=beta)
        score = crps(qf, actual, model.config.quantile_levels)
        inside = np.abs(actual - qf.means) <= 3.0 * qf.stds
        naive_score = None
        if with_naive:
            nf = seasonal_naive(observed, season, h, model.config.quantile_levels)
            naive_score = crps(nf, actual, model.config.quantile_levels)
        out.append(
            SeriesEvaluation(
                item_id=rec.item_id,
                beta=beta,
                forecast=qf,
                actual=actual,
                crps=score,
                coverage3=float(inside.mean()),
                naive_crps=naive_score,
            )
        )
    return out


def aggregate_crps(evals: list, levels=DEFAULT_QUANTILES) -> float:
    return crps([e.forecast for e in evals], [e.actual for e in evals], levels)
