# %% [markdown]
# Mean SNR against molecule density
#
# A reduced version of the full benchmark (30 repetitions instead of 100).
# Run ``wsd benchmark out.csv`` for the full table.

# %%
from wsd import NoiseModel, run_benchmark
from wsd.config import RunConfig
from wsd.pipeline import load_or_build_maps, matrix_for

cfg = RunConfig()
A = matrix_for(cfg)
maps = load_or_build_maps(cfg, A=A)
K_list = [1, 4, 16, 64, 128]

# %%
for gv in (0.0, 0.01):
    table = run_benchmark(K_list, 30, NoiseModel(gaussian_variance=gv), maps, A, seed=1)
    print(f"\ngaussian variance {gv}")
    print(f"{'K':>4} {'density':>9} {'RAW':>7} {'WSD':>7} {'RAW_bin':>8} {'WSD_bin':>8} {'DIFF':>6}")
    for K in K_list:
        m = {c: table.mean(K, c, gv) for c in ("RAW", "WSD", "RAW_bin", "WSD_bin", "DIFF")}
        print(f"{K:>4} {A.geometry.density_um2(K):>9.2f} {m['RAW']:>7.2f} {m['WSD']:>7.2f} "
              f"{m['RAW_bin']:>8.2f} {m['WSD_bin']:>8.2f} {m['DIFF']:>6.2f}")
