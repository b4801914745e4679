"""Random Fourier basis: frozen raw outcomes plus reparameterized transforms.

All randomness is drawn once from a seed and stored immutably; frequencies and
phases are then deterministic, differentiable functions of the distributional
parameters (Gaussian location/scale for frequencies, Beta shapes for phases
via the shape-augmented Marsaglia-Tsang construction), so the raw outcomes can
stay fixed for the whole of training while their distributions are learned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import arrayops

TWO_PI = 2.0 * np.pi

#: shape augmentation steps for the Gamma reparameterization
SHAPE_AUG = 10


@dataclass(frozen=True)
class RandomBasis:
    """Frozen raw random outcomes behind the spectral basis.

    eps_freq holds standard normals shaped [levels, in_dim, rff_dim]; the
    phase block keeps, per Beta phase, one standard normal and SHAPE_AUG
    uniforms for each of the two Gamma variates, plus one plain uniform for
    the prior mode.
    """

    seed: int
    levels: int
    in_dim: int
    rff_dim: int
    eps_freq: np.ndarray  # [M, d, D]
    eps_phase: np.ndarray  # [2, M, D]
    u_aug: np.ndarray  # [2, SHAPE_AUG, M, D]
    u_prior: np.ndarray  # [M, D]

    def __post_init__(self):
        for arr in (self.eps_freq, self.eps_phase, self.u_aug, self.u_prior):
            arr.setflags(write=False)


def sample_basis(levels: int, in_dim: int, rff_dim: int, seed: int) -> RandomBasis:
    """Draw and freeze all raw outcomes for an [M, d, D] basis."""
    if min(levels, in_dim, rff_dim) < 1:
        raise ValueError("levels, in_dim and rff_dim must all be >= 1")
    rng = np.random.default_rng(int(seed))
    tiny = np.finfo(np.float64).tiny
    return RandomBasis(
        seed=int(seed),
        levels=levels,
        in_dim=in_dim,
        rff_dim=rff_dim,
        eps_freq=rng.standard_normal((levels, in_dim, rff_dim)),
        eps_phase=rng.standard_normal((2, levels, rff_dim)),
        u_aug=rng.uniform(tiny, 1.0, (2, SHAPE_AUG, levels, rff_dim)),
        u_prior=rng.random((levels, rff_dim)),
    )


@dataclass
class SpectralParams:
    """Distributional parameters of the random basis (natural domain).

    lengthscales are per (level, input dim); the frequency variational is an
    independent Gaussian per entry and the phase variational a Beta scaled to
    [0, 2pi).  The prior draws frequencies from N(0, 1/lengthscale^2) and
    phases uniformly.
    """

    lengthscales: np.ndarray  # [M, d]
    freq_means: np.ndarray  # [M, d, D]
    freq_stds: np.ndarray  # [M, d, D]
    phase_a: np.ndarray  # [M, D]
    phase_b: np.ndarray  # [M, D]

    def validate(self) -> None:
        if not np.all(self.lengthscales > 0):
            raise ValueError("lengthscales must be strictly positive")
        if not np.all(self.freq_stds > 0):
            raise ValueError("frequency stds must be strictly positive")
        if not (np.all(self.phase_a > 0) and np.all(self.phase_b > 0)):
            raise ValueError("phase shapes must be strictly positive")


def gamma_reparam(shape, eps, log_u, ops=np):
    """Reparameterized Gamma(shape, 1) variate from frozen outcomes.

    Marsaglia-Tsang transform at shape+SHAPE_AUG, h = d*(1 + eps/sqrt(9d))^3
    with d = shape + SHAPE_AUG - 1/3, then the shape-augmentation boost
    prod_i u_i^(1/(shape+i)).  Smooth in ``shape`` for fixed outcomes;
    the rejection step is omitted (augmented shapes >= SHAPE_AUG make the
    acceptance region miss with negligible probability).

    ``ops`` supplies sqrt/exp so the same formula runs on plain arrays and on
    autodiff tensors.
    """
    d = shape + (SHAPE_AUG - 1.0 / 3.0)
    c = 1.0 / ops.sqrt(9.0 * d)
    core = d * (1.0 + c * eps) ** 3
    boost = log_u[0] / shape
    for i in range(1, SHAPE_AUG):
        boost = boost + log_u[i] / (shape + i)
    return core * ops.exp(boost)


def reparam_frequencies(basis: RandomBasis, params: SpectralParams, mode: str) -> np.ndarray:
    """Frequencies [M, d, D]: prior eps/lengthscale, variational mean+std*eps."""
    params.validate()
    if basis.eps_freq.shape != (basis.levels, basis.in_dim, basis.rff_dim):
        raise ValueError("corrupt basis")
    if mode == "prior":
        return basis.eps_freq / params.lengthscales[:, :, None]
    if mode == "variational":
        if params.freq_means.shape != basis.eps_freq.shape:
            raise ValueError("variational frequency parameters do not match basis dims")
        return params.freq_means + params.freq_stds * basis.eps_freq
    raise ValueError(f"unknown mode {mode!r}")


def reparam_phases(basis: RandomBasis, params: SpectralParams, mode: str) -> np.ndarray:
    """Phases [M, D] in [0, 2pi): prior uniform, variational scaled Beta."""
    params.validate()
    if mode == "prior":
        return TWO_PI * basis.u_prior
    if mode == "variational":
        ga = gamma_reparam(params.phase_a, basis.eps_phase[0], np.log(basis.u_aug[0]))
        gb = gamma_reparam(params.phase_b, basis.eps_phase[1], np.log(basis.u_aug[1]))
        return TWO_PI * ga / (ga + gb)
    raise ValueError(f"unknown mode {mode!r}")


def rff_eval(x: np.ndarray, omega_m: np.ndarray, b_m: np.ndarray) -> np.ndarray:
    """Per-step cosine activations cos(omega^T x_l + b), shape [L, D].

    The sqrt(2/D)-style scaling belongs to the feature assembly downstream.
    """
    x = np.asarray(x, dtype=np.float64)
    omega_m = np.asarray(omega_m, dtype=np.float64)
    b_m = np.asarray(b_m, dtype=np.float64)
    if x.ndim != 2 or omega_m.ndim != 2 or x.shape[1] != omega_m.shape[0]:
        raise ValueError(
            f"incompatible shapes x{x.shape} omega{omega_m.shape}"
        )
    if b_m.shape != (omega_m.shape[1],):
        raise ValueError(f"phase vector shape {b_m.shape} does not match D={omega_m.shape[1]}")
    return arrayops.matmul_cos_bias(x, omega_m, b_m)


def rff_levels(x: np.ndarray, omegas: np.ndarray, phases: np.ndarray) -> np.ndarray:
    """Stacked activations for all levels, shape [M, L, D]."""
    return np.stack([rff_eval(x, omegas[m], phases[m]) for m in range(omegas.shape[0])])


def median_heuristic(x: np.ndarray, floor: float = 1e-3, max_rows: int = 256, seed: int = 0) -> np.ndarray:
    """Per-dimension median pairwise distance of a subsample, floored.

    Standard lengthscale initialization; constant dimensions fall back to the
    floor.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a [rows x dims] array")
    if x.shape[0] > max_rows:
        idx = np.random.default_rng(seed).choice(x.shape[0], max_rows, replace=False)
        x = x[idx]
    diffs = np.abs(x[:, None, :] - x[None, :, :])
    iu = np.triu_indices(x.shape[0], k=1)
    med = np.median(diffs[iu[0], iu[1], :], axis=0)
    return np.maximum(med, floor)
