"""Stack-level workflows: simulate, denoise, reconstruct, benchmark.

Every random draw is keyed by (master seed, molecule count, frame index) and
every parallel map returns results in input order, so output bytes depend on
the seed alone and never on the worker count.
"""
import os
from dataclasses import dataclass
from functools import partial

import numpy as np

from . import formats
from .denoise import denoise_frame, denoise_tiled
from .measurement import augment_background, build_measurement_matrix, vectorize
from .operators import build_operator_bundle
from .parallel import ordered_map
from .simulate import apply_noise, cell_rng, render_noiseless, run_benchmark, sample_scene
from .solver import CsProblem, merge_reconstructions, solve_cs


class PipelineError(RuntimeError):
    pass


def matrix_for(cfg):
    return build_measurement_matrix(cfg.geometry())


def default_cache_path(cfg):
    g = cfg.geometry()
    name = (f"wsd_operator_{g.raw_dims[0]}x{g.raw_dims[1]}_{g.grid_dims[0]}x{g.grid_dims[1]}"
            f"_up{g.upsample_factor}_sigma{g.psf_sigma_grids:g}_d{cfg.digits}.wsdt")
    return os.path.join(os.environ.get("WSD_CACHE_DIR", "."), name)


def load_or_build_maps(cfg, cache_path=None, A=None):
    """Working maps, always read back from the cache file.

    Going through the file on every path keeps the fresh-build and cached
    runs bit-identical.
    """
    path = cache_path or cfg.bundle_cache or default_cache_path(cfg)
    if not os.path.exists(path):
        A = A if A is not None else matrix_for(cfg)
        bundle = build_operator_bundle(A, cfg.precision())
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        formats.write_operator(path, bundle)
    return formats.read_operator(path)


@dataclass(frozen=True)
class SimulatedStack:
    raw: np.ndarray
    noiseless: np.ndarray
    scenes: list
    integer_counts: bool


def _simulate_one(frame_idx, K, A, cfg):
    rng = cell_rng(cfg.seed, K, frame_idx)
    scene = sample_scene(K, A.geometry, cfg.photon_law(), rng, cfg.background)
    y_ini = render_noiseless(scene, A)
    y_raw = apply_noise(y_ini, cfg.noise(), rng)
    return scene, y_ini, y_raw


def simulate_stack(cfg, K, frames, A=None, workers=None):
    A = A if A is not None else matrix_for(cfg)
    dims = A.geometry.raw_dims
    task = partial(_simulate_one, K=int(K), A=A, cfg=cfg)
    out = ordered_map(task, range(frames), cfg.workers if workers is None else workers)
    raw = np.array([y.reshape(dims, order="F") for _, _, y in out]).reshape((frames,) + dims)
    ini = np.array([y.reshape(dims, order="F") for _, y, _ in out]).reshape((frames,) + dims)
    integer = cfg.poisson and cfg.gaussian_variance == 0
    return SimulatedStack(raw, ini, [s for s, _, _ in out], integer)


def write_simulation(prefix, sim):
    paths = {"raw": f"{prefix}_raw.wsds", "noiseless": f"{prefix}_noiseless.wsds",
             "scene": f"{prefix}_scene.csv"}
    if sim.integer_counts and sim.raw.size and sim.raw.max() > 65535:
        raise PipelineError("photon counts exceed the u16 range; disable integer export")
    formats.write_stack(paths["raw"], sim.raw, "u16" if sim.integer_counts else "f64")
    formats.write_stack(paths["noiseless"], sim.noiseless, "f64")
    formats.write_scene_sidecar(paths["scene"], sim.scenes)
    return paths


def _denoise_one(frame, maps, cfg):
    frame = np.asarray(frame, dtype=float)
    plan, config = cfg.patch_plan(), cfg.wsd()
    if frame.size == maps.M and frame.shape[0] == frame.shape[1]:
        out, rep = denoise_frame(frame, maps, config)
        return out, [rep]
    return denoise_tiled(frame, maps, plan, config)


def denoise_stack(frames, maps, cfg, workers=None):
    """Denoise each frame (tiled when larger than the operator), in input order."""
    task = partial(_denoise_one, maps=maps, cfg=cfg)
    out = ordered_map(task, list(frames), cfg.workers if workers is None else workers)
    return np.array([o for o, _ in out]), [r for _, r in out]


REPORT_HEADER = ("frame", "patches", "cri", "clipped_count", "i_star", "i_tail")


def report_rows(reports):
    rows = []
    for k, reps in enumerate(reports):
        rows.append((k, len(reps), repr(max(r.cri for r in reps)),
                     sum(r.clipped_count for r in reps), reps[0].i_star, reps[0].i_tail))
    return rows


def _solve_one(vec, phi, cfg):
    problem = CsProblem(phi.entries, phi.column_weights, vec, cfg.epsilon, cfg.solver())
    return solve_cs(problem)


def _patch_problems(frame, plan):
    """Tile layout, patch -> job index, and the distinct patch measurements."""
    tiles = plan.tiles(frame.shape)
    seen = {}
    out = []
    p = plan.patch_side
    for (pr, pc), _ in tiles:
        if (pr, pc) not in seen:
            seen[pr, pc] = len(out)
            out.append(((pr, pc), vectorize(frame[pr:pr + p, pc:pc + p])))
    return tiles, seen, out


@dataclass(frozen=True)
class Reconstruction:
    image: np.ndarray
    solutions: list
    skipped_count: int

    @property
    def failed_frames(self):
        return self.skipped_count


def reconstruct_stack(frames, cfg, A=None, workers=None):
    """Solve every frame and merge the molecule parts on the super-resolution grid.

    Frames of the operator's size are solved directly.  Larger frames are split
    with the patch plan; each patch is solved on its own grid and only grid
    points under the patch core are kept (first writer wins, as in the
    denoiser).  A frame counts as failed when any of its solves is not optimal.
    """
    A = A if A is not None else matrix_for(cfg)
    phi = augment_background(A)
    geom = A.geometry
    workers = cfg.workers if workers is None else workers
    frames = [np.asarray(f, dtype=float) for f in frames]
    if not frames:
        raise PipelineError("empty stack")
    direct = all(f.shape == geom.raw_dims for f in frames)
    task = partial(_solve_one, phi=phi, cfg=cfg)
    if direct:
        sols = ordered_map(task, [vectorize(f) for f in frames], workers)
        merged = merge_reconstructions(sols, geom.grid_dims)
        return Reconstruction(merged.image, sols, merged.skipped_count)

    plan, up = cfg.patch_plan(), geom.upsample_factor
    if (plan.patch_side, plan.patch_side) != geom.raw_dims:
        raise PipelineError("patch side must equal the operator's raw frame size")
    gm = geom.margins()[0]
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise PipelineError("all frames of a stack must share one shape")
    jobs = []
    layouts = []
    for f in frames:
        tiles, seen, probs = _patch_problems(f, plan)
        layouts.append((tiles, seen, len(jobs)))
        jobs.extend(v for _, v in probs)
    sols = ordered_map(task, jobs, workers)
    full = (shape[0] * up + 2 * gm, shape[1] * up + 2 * gm)
    image = np.zeros(full)
    skipped = 0
    per_frame = []
    gp = geom.grid_dims[0]
    cg = plan.core_side * up
    for tiles, seen, base in layouts:
        frame_sols = [sols[base + i] for i in range(len(seen))]
        per_frame.append(frame_sols)
        if not all(s.ok for s in frame_sols):
            skipped += 1
            continue
        canvas = np.zeros(full)
        written = np.zeros(full, dtype=bool)
        for (pr, pc), (cr, cc) in tiles:
            grid = frame_sols[seen[pr, pc]].x[:gp * geom.grid_dims[1]].reshape(
                geom.grid_dims, order="F")
            # grid rows of the core pixels; the outer margin rows go with the border cores
            r0, r1 = cr * up + gm, cr * up + gm + cg
            c0, c1 = cc * up + gm, cc * up + gm + cg
            if cr == 0:
                r0 = 0
            if cr + plan.core_side == shape[0]:
                r1 = full[0]
            if cc == 0:
                c0 = 0
            if cc + plan.core_side == shape[1]:
                c1 = full[1]
            lr, lc = pr * up, pc * up
            target = (slice(r0, r1), slice(c0, c1))
            local = grid[r0 - lr:r1 - lr, c0 - lc:c1 - lc]
            free = ~written[target]
            canvas[target][free] = local[free]
            written[target] = True
        image += canvas
    return Reconstruction(image, per_frame, skipped)


METRICS_HEADER = ("frame", "status", "iterations", "objective", "feasibility_residual", "radius")


def metrics_rows(solutions):
    rows = []
    for k, sol in enumerate(solutions):
        group = sol if isinstance(sol, list) else [sol]
        worst = next((s for s in group if not s.ok), group[0])
        rows.append((k, worst.status, sum(s.iterations for s in group),
                     repr(sum(s.objective for s in group)),
                     repr(max(s.feasibility_residual for s in group)),
                     repr(max(s.radius for s in group))))
    return rows


def benchmark(cfg, maps, k_list=None, reps=None, variances=None, A=None, workers=None):
    A = A if A is not None else matrix_for(cfg)
    k_list = list(k_list or cfg.k_list)
    reps = reps or cfg.reps
    variances = [cfg.gaussian_variance] if variances is None else list(variances)
    table = None
    for gv in variances:
        part = run_benchmark(k_list, reps, cfg.noise(gv), maps, A, cfg.wsd(), cfg.seed,
                             cfg.workers if workers is None else workers, cfg.background)
        table = part if table is None else table.extend(part)
    return table
