"""Second refinement: narrower beams, then ML grid search or stationary-phase phase fit.

Run: python3 demos/04_second_refinement.py
"""
import numpy as np

from thbt.channel import ArrayConfig, PathParams, Sounder, assemble_channel, to_surrogate
from thbt.refine1 import Refine1Config, build_codebook1, extend_region, region_update1, train_stage1
from thbt.refine2 import (Refine2Config, build_codebook2, estimate_ml, estimate_psp, ml_grid,
                          train_stage2, unwrap_phases)

cfg = ArrayConfig()
r1 = Refine1Config(omega_bar=np.sqrt(3) / 2, b_bar=1.22e-4, k_tilde1=-6.09e-5)
r2 = Refine2Config(m2=8)
path = PathParams(1.0, 0.05, 25.05)
truth = to_surrogate(path, cfg.wavelength)

rng = np.random.default_rng(3)
for label, nv in (("noiseless", 0.0), ("10 dB per element", 0.1 / cfg.n_t)):
    s = Sounder(cfg, assemble_channel(cfg, [path]), nv, rng)
    m_bar, _ = train_stage1(s, build_codebook1(cfg, r1))
    region = extend_region(cfg, region_update1(cfg, m_bar, r1))
    cb2 = build_codebook2(cfg, m_bar, r1, r2, region)
    y = train_stage2(s, cb2)
    ml = estimate_ml(cfg, y, cb2, ml_grid(region))
    phases = unwrap_phases(y)
    psp = estimate_psp(phases.unwrapped, cb2.theta, cb2.k2)
    print(f"{label}: k2 = {cb2.k2:.4e}, {s.count} probes so far")
    print(f"  truth ({truth.omega:+.5f}, {truth.b:.4e})")
    print(f"  ML    ({ml[0]:+.5f}, {ml[1]:.4e})")
    print(f"  PSP   ({psp[0]:+.5f}, {psp[1]:.4e})")
    print("  unwrapped phases:", np.round(phases.unwrapped, 3))
