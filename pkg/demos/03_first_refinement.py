"""First refinement: wide hybrid-field beams tile the angle/distance region.

Run: python3 demos/03_first_refinement.py
"""
import numpy as np

from thbt.channel import ArrayConfig, PathParams, Sounder, assemble_channel, to_surrogate
from thbt.refine1 import (Refine1Config, build_codebook1, design_m1, extend_region, m1_bound,
                          region_update1, train_stage1)

cfg = ArrayConfig()
r1 = Refine1Config(omega_bar=np.sqrt(3) / 2, b_bar=1.22e-4, k_tilde1=-6.09e-5)
print(f"beam spacing {r1.theta_bar1(cfg):.5f}, M1 bound {m1_bound(cfg, r1):.3f} -> M1 = {design_m1(cfg, r1)}")

cb = build_codebook1(cfg, r1)
for m, t, k in zip(cb.m, cb.theta, cb.k):
    print(f"  m = {m:+d}  theta = {t:+.4f}  k = {k:+.3e}")

path = PathParams(1.0, 0.05, 25.05)
truth = to_surrogate(path, cfg.wavelength)
s = Sounder(cfg, assemble_channel(cfg, [path]))
m_bar, y = train_stage1(s, cb)
region = extend_region(cfg, region_update1(cfg, m_bar, r1))
print(f"user at omega = {truth.omega}, b = {truth.b:.4e}: winner m = {m_bar}, "
      f"{s.count} probes, truth inside region: {bool(region.contains(truth.omega, truth.b))}")
