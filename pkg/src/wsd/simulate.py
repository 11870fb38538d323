"""Synthetic frames and the SNR benchmark over molecule counts."""
import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.optimize import brentq

from .denoise import WsdConfig, denoise_vector
from .measurement import ShapeError, bin_vector
from .operators import working_maps
from .parallel import ordered_map

CONDITIONS = ("RAW", "WSD", "RAW_bin", "WSD_bin", "DIFF")


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class PhotonLaw:
    """Log-normal photon counts parameterized by mode and standard deviation."""

    mode: float = 3000.0
    sd: float = 1700.0

    @property
    def params(self):
        """``(mu, sigma)`` of the underlying normal."""
        return lognormal_params(self.mode, self.sd)

    def sample(self, rng, size):
        mu, sigma = self.params
        return rng.lognormal(mu, sigma, size)


def lognormal_params(mode, sd):
    """Solve ``exp(mu - s2) = mode`` and ``(exp(s2) - 1) exp(2 mu + s2) = sd**2``."""
    if mode <= 0 or sd <= 0:
        raise SimulationError("log-normal mode and sd must be positive")
    # with mu = ln(mode) + s2 the variance is mode^2 (e^s2 - 1) e^(3 s2)
    target = 2 * math.log(sd / mode)

    def gap(s2):
        return math.log(math.expm1(s2)) + 3 * s2 - target

    hi = 1.0
    while gap(hi) < 0:
        hi *= 2
    s2 = brentq(gap, 1e-300, hi, xtol=1e-15, rtol=1e-15)
    return math.log(mode) + s2, math.sqrt(s2)


@dataclass(frozen=True)
class GroundTruthScene:
    positions: np.ndarray
    photons: np.ndarray
    background: float
    x_vector: np.ndarray

    @property
    def K(self):
        return len(self.positions)


@dataclass(frozen=True)
class NoiseModel:
    """``gaussian_scale`` is ``"normalized"`` (variance on the max-normalized
    frame) or ``"absolute"`` (variance in photons squared)."""

    poisson: bool = True
    gaussian_variance: float = 0.0
    gaussian_scale: str = "normalized"
    seed: int = None

    def __post_init__(self):
        if not self.gaussian_variance >= 0:
            raise SimulationError("gaussian_variance must be >= 0")
        if self.gaussian_scale not in ("normalized", "absolute"):
            raise SimulationError(f"unknown gaussian_scale {self.gaussian_scale!r}")


@dataclass(frozen=True)
class SimulatedFrame:
    y_ini: np.ndarray
    y_raw: np.ndarray
    scene: GroundTruthScene


def make_scene(positions, photons, n_grid, background=16.0):
    positions = np.asarray(positions, dtype=np.int64)
    photons = np.asarray(photons, dtype=float)
    if positions.shape != photons.shape:
        raise ShapeError("positions and photons differ in length")
    if np.any(photons <= 0):
        raise SimulationError("photon counts must be positive")
    if background < 0:
        raise SimulationError("background must be >= 0")
    x = np.zeros(n_grid)
    np.add.at(x, positions, photons)
    return GroundTruthScene(positions, photons, float(background), x)


def sample_scene(K, geometry, photon_law=None, rng=None, background=16.0):
    """``K`` distinct uniformly placed emitters with independent photon draws."""
    photon_law = photon_law or PhotonLaw()
    rng = rng if rng is not None else np.random.default_rng()
    N = geometry.n_grid
    if K < 0 or K > N:
        raise SimulationError(f"K must lie in [0, {N}], got {K}")
    positions = np.sort(rng.choice(N, size=K, replace=False))
    photons = photon_law.sample(rng, K)
    return make_scene(positions, photons, N, background)


def render_noiseless(scene, A):
    entries = A.entries if hasattr(A, "entries") else np.asarray(A)
    if entries.shape[1] != scene.x_vector.size:
        raise ShapeError("scene grid does not match the measurement matrix")
    return entries @ scene.x_vector + scene.background


def apply_noise(y_ini, model, rng):
    y_ini = np.asarray(y_ini, dtype=float)
    if np.any(y_ini < 0):
        raise SimulationError("expected photon means must be non-negative")
    y = rng.poisson(y_ini).astype(float) if model.poisson else y_ini.copy()
    if model.gaussian_variance > 0:
        sd = math.sqrt(model.gaussian_variance)
        if model.gaussian_scale == "normalized":
            sd *= float(y_ini.max())
        y = y + sd * rng.standard_normal(y.shape)
    return y


def snr_db(y, y_ref):
    """``10 log10(sum(y_ref^2) / sum((y - y_ref)^2))``; ``inf`` for a perfect match."""
    y = np.asarray(y, dtype=float)
    y_ref = np.asarray(y_ref, dtype=float)
    if y.shape != y_ref.shape:
        raise ShapeError("signal and reference differ in shape")
    power = float(np.sum(y_ref ** 2))
    if power == 0:
        raise SimulationError("reference signal is identically zero")
    err = float(np.sum((y - y_ref) ** 2))
    if err == 0:
        return math.inf
    return 10 * math.log10(power / err)


def simulate_frame(K, A, noise=None, rng=None, photon_law=None, background=16.0):
    noise = noise or NoiseModel()
    rng = rng if rng is not None else np.random.default_rng(noise.seed)
    scene = sample_scene(K, A.geometry, photon_law, rng, background)
    y_ini = render_noiseless(scene, A)
    return SimulatedFrame(y_ini, apply_noise(y_ini, noise, rng), scene)


def cell_rng(seed, *key):
    """Generator for one independent task, derived from the master seed and a key."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


@dataclass
class BenchmarkTable:
    rows: list = field(default_factory=list)
    samples: dict = field(default_factory=dict)

    def lookup(self, K, condition, gaussian_variance=0.0):
        for row in self.rows:
            if (row["K"] == K and row["condition"] == condition
                    and row["gaussian_variance"] == gaussian_variance):
                return row
        raise KeyError((K, condition, gaussian_variance))

    def mean(self, K, condition, gaussian_variance=0.0):
        return self.lookup(K, condition, gaussian_variance)["mean_db"]

    def extend(self, other):
        self.rows.extend(other.rows)
        self.samples.update(other.samples)
        return self


def _score_cell(key, A, maps, noise, config, seed, background):
    K, rep = key
    rng = cell_rng(seed, K, rep)
    frame = simulate_frame(K, A, noise, rng, background=background)
    y_wsd, _ = denoise_vector(frame.y_raw, maps, config)
    dims, b = A.geometry.raw_dims, A.geometry.bin_factor
    ref_bin = bin_vector(frame.y_ini, dims, b)
    return (snr_db(frame.y_raw, frame.y_ini), snr_db(y_wsd, frame.y_ini),
            snr_db(bin_vector(frame.y_raw, dims, b), ref_bin),
            snr_db(bin_vector(y_wsd, dims, b), ref_bin))


def run_benchmark(K_list, reps, noise_model, bundle, A, config=None, seed=0,
                  workers=1, background=16.0):
    """Score RAW, WSD, RAW_bin and WSD_bin over ``reps`` draws at each K.

    The binned conditions bin the raw and the denoised frame, so only the
    unbinned operator is needed.  DIFF is the paired WSD minus RAW.
    """
    config = config or WsdConfig()
    maps = working_maps(bundle)
    keys = [(int(K), rep) for K in K_list for rep in range(reps)]
    task = partial(_score_cell, A=A, maps=maps, noise=noise_model, config=config,
                   seed=seed, background=background)
    scores = np.array(ordered_map(task, keys, workers), dtype=float).reshape(len(K_list), reps, 4)
    table = BenchmarkTable()
    gv = float(noise_model.gaussian_variance)
    for k_idx, K in enumerate(K_list):
        cell = scores[k_idx]
        cols = dict(zip(CONDITIONS, list(cell.T) + [cell[:, 1] - cell[:, 0]]))
        for name in CONDITIONS:
            vals = cols[name]
            table.rows.append({
                "K": int(K), "density_um2": A.geometry.density_um2(K), "condition": name,
                "mean_db": float(vals.mean()),
                "sd_db": float(vals.std(ddof=1)) if reps > 1 else 0.0,
                "reps": reps, "seed": seed, "gaussian_variance": gv,
            })
            table.samples[int(K), name, gv] = vals
    return table
