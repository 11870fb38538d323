# %% [markdown]
# Reconstructing a line of eight emitters from 20 frames
#
# Every frame is denoised and then solved as a weighted, nonnegative sparse
# recovery problem on the 64 x 64 grid.  The merged image is the sum over
# frames, printed as a coarse character map.

# %%
import numpy as np

from wsd import CsProblem, augment_background, denoise_vector, merge_reconstructions, solve_cs
from wsd.config import RunConfig
from wsd.pipeline import load_or_build_maps, matrix_for
from wsd.simulate import PhotonLaw, cell_rng, make_scene

cfg = RunConfig()
A = matrix_for(cfg)
phi = augment_background(A)
maps = load_or_build_maps(cfg, A=A)

sites = 32 + np.round((np.arange(8) - 3.5) * 6).astype(int)
law = PhotonLaw()

# %%
solutions = []
for f in range(20):
    rng = cell_rng(9, f)
    scene = make_scene(sites + 64 * sites, law.sample(rng, 8), 4096)
    y_raw = rng.poisson(A.entries @ scene.x_vector + 16.0).astype(float)
    y, _ = denoise_vector(y_raw, maps)
    sol = solve_cs(CsProblem.from_augmented(phi, y, 2.1))
    solutions.append(sol)
    print(f"frame {f:2d}: {sol.status}, {sol.iterations} iterations")

merged = merge_reconstructions(solutions, (64, 64))

# %%
img = merged.image / merged.image.max()
shades = " .:-=+*#%@"
for r in range(4, 60):
    print("".join(shades[min(9, int(v * 10))] for v in img[r, 4:60]))
print("true sites (row = col):", sites.tolist())
