"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored.  Every key is listed in
``DEFAULTS``; anything else is rejected, and all component invariants are
checked when the file is loaded, before any computation starts.
"""
import configparser
from dataclasses import dataclass, fields, replace

from .denoise import PatchPlan, WsdConfig
from .measurement import ImagingGeometry
from .operators import PrecisionConfig
from .simulate import NoiseModel, PhotonLaw
from .solver import SolverSettings


class ConfigFileError(ValueError):
    pass


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    v = str(text).strip().lower()
    return None if v in ("", "auto", "none") else int(v)


def _int_list(text):
    return tuple(int(p) for p in str(text).replace(",", " ").split())


@dataclass(frozen=True)
class RunConfig:
    grid_size_nm: float = 11.43
    pixel_size_nm: float = 45.714
    upsample_factor: int = 4
    raw_rows: int = 14
    raw_cols: int = 14
    grid_rows: int = 64
    grid_cols: int = 64
    psf_sigma_grids: float = 8.8
    bin_factor: int = 2
    background: float = 16.0
    photon_mode: float = 3000.0
    photon_sd: float = 1700.0
    poisson: bool = True
    gaussian_variance: float = 0.0
    gaussian_scale: str = "normalized"
    star: float = 0.9
    tail: float = 0.95
    protect_tail: bool = True
    patch_side: int = 14
    core_side: int = 10
    epsilon: float = 2.1
    solver_tol: float = 1e-6
    max_iter: int = 50_000
    rho: float = 1.0
    relax: float = 1.6
    digits: int = 40
    guard_digits: int = None
    k_list: tuple = (1, 2, 4, 8, 16, 32, 64, 128)
    reps: int = 100
    seed: int = 0
    workers: int = 1
    bundle_cache: str = ""

    def __post_init__(self):
        # build every component once so invalid values fail here
        try:
            self.geometry()
            self.noise()
            self.photon_law().params
            self.wsd()
            self.patch_plan()
            self.solver()
            self.precision()
        except ValueError as exc:
            raise ConfigFileError(str(exc)) from exc
        if self.reps < 1 or any(k < 0 for k in self.k_list) or not self.k_list:
            raise ConfigFileError("reps must be >= 1 and k_list non-empty and non-negative")
        if self.workers < 0 or self.background < 0:
            raise ConfigFileError("workers and background must be non-negative")
        if self.epsilon <= 0:
            raise ConfigFileError("epsilon must be positive")

    def geometry(self):
        return ImagingGeometry(self.grid_size_nm, self.pixel_size_nm, self.upsample_factor,
                               (self.raw_rows, self.raw_cols), (self.grid_rows, self.grid_cols),
                               self.psf_sigma_grids, self.bin_factor)

    def noise(self, gaussian_variance=None):
        gv = self.gaussian_variance if gaussian_variance is None else gaussian_variance
        return NoiseModel(self.poisson, gv, self.gaussian_scale, self.seed)

    def photon_law(self):
        return PhotonLaw(self.photon_mode, self.photon_sd)

    def wsd(self):
        return WsdConfig(self.star, self.tail, self.protect_tail)

    def patch_plan(self):
        return PatchPlan(self.patch_side, self.core_side)

    def solver(self):
        return SolverSettings(self.solver_tol, self.max_iter, self.rho, self.relax)

    def precision(self):
        return PrecisionConfig(self.digits, self.guard_digits)

    def override(self, **changes):
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes) if changes else self


_PARSERS = {float: float, int: int, bool: _bool, str: str, tuple: _int_list}
DEFAULTS = RunConfig()
_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse(key, text):
    if key == "guard_digits":
        return _opt_int(text)
    kind = _FIELD_TYPES[key]
    kind = {"float": float, "int": int, "bool": bool, "str": str, "tuple": tuple}.get(kind, kind)
    return _PARSERS[kind](text)


def parse_config(text, source="<config>"):
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                       inline_comment_prefixes=("#",), delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigFileError(f"{source}: {exc}") from exc
    values = {}
    for key, raw in parser["run"].items():
        if key not in _FIELD_TYPES:
            raise ConfigFileError(f"{source}: unknown key {key!r}")
        try:
            values[key] = _parse(key, raw)
        except ValueError as exc:
            raise ConfigFileError(f"{source}: bad value for {key}: {exc}") from exc
    return RunConfig(**values)


def load_config(path=None):
    if path is None:
        return RunConfig()
    with open(path) as fh:
        return parse_config(fh.read(), str(path))


def dump_config(cfg):
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = " ".join(str(i) for i in v)
        elif v is None:
            v = "auto"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
