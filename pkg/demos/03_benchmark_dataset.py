"""The nonlinear mass-spring-damper benchmark.

The data generator excites a discrete-time mass-spring-damper with cubic
stiffness and position-dependent input gain using a random-phase multisine
(flat spectrum on the DFT grid between 1/6 and 5 Hz, input std 4) and adds
output noise calibrated to roughly 20 dB SNR.  The noiseless output is
kept in the metadata, which gives an oracle for the best fit rate any
model could reach (the "noise floor").
"""

import numpy as np

from lfrid.bench import bfr, generate_msd_dataset, msd_step, MsdParams

# one step of the plant, by hand
p = MsdParams()
print("single steps of the plant:")
print("  x=(0,0), u=1 ->", msd_step(p, (0.0, 0.0), 1.0))
print("  x=(1,0), u=0 ->", msd_step(p, (1.0, 0.0), 0.0))

print("\ngenerating the three splits (seed 0)...")
splits = {s: generate_msd_dataset(s, seed=0) for s in ("train", "val", "test")}
for name, ds in splits.items():
    meta = ds.metadata
    print(f"  {name:5s}: N = {ds.N:6d}, T_s = {ds.ts}, "
          f"input std = {ds.u.std():.3f}, "
          f"noise var = {meta['sigma_e2']:.5f}, SNR = {meta['snr_db']:.2f} dB")

test = splits["test"]
floor = bfr(test.y, test.metadata["y_noiseless"])
print(f"\nnoise-floor BFR on the test split (noisy vs noiseless): "
      f"{floor:.2f} %")
print("no simulation model can beat this number on noisy data; trained")
print("models are judged by how closely they approach it.")

mean_pred = np.tile(test.y.mean(axis=0), (test.N, 1))
print(f"for scale: predicting the output mean scores "
      f"{bfr(test.y, mean_pred):.2f} %")
