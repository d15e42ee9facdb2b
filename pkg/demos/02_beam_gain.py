"""Hybrid-field beam gain: exact sum, stationary-phase approximation, coverage and coherence.

Run: python3 demos/02_beam_gain.py
"""
import numpy as np

from thbt.beamgain import (CoverageRegion, coherence_bracket, distance_coherence, hfbg_exact,
                           hfbg_psp, invert_coherence)
from thbt.channel import ArrayConfig

cfg = ArrayConfig()
codeword = (0.1, -6.09e-5)
region = CoverageRegion.of(cfg, *codeword)

# gain along an angle cut at b = 5e-5, inside and outside the coverage
b = 5e-5
w = region.acw(b) / 2
for om in np.linspace(codeword[0] - 1.5 * w, codeword[0] + 1.5 * w, 7):
    exact = abs(hfbg_exact(cfg, codeword, (om, b)))
    psp = abs(hfbg_psp(cfg, codeword, (om, b)))
    inside = bool(region.contains(om, b))
    print(f"omega = {om:+.4f}  exact {exact:7.3f}  psp {psp:7.3f}  covered {inside}")

lo, hi = coherence_bracket(cfg)
print(f"coherence is monotone for curvature steps in [{lo:.3e}, {hi:.3e}]")
for k in (5e-6, 2.28e-5, 5e-5):
    print(f"rho({k:.2e}) = {distance_coherence(cfg, k):.4f}")
print(f"step for rho = 0.35: {invert_coherence(cfg, 0.35):.4e}")
