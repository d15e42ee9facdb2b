"""Third refinement: neighbouring search on a local grid, then Gaussian approximation.

Run: python3 demos/05_third_refinement.py
"""
from thbt.channel import ArrayConfig, PathParams, Sounder, assemble_channel, to_surrogate
from thbt.refine3 import finalize, fit_gaussian, ga_estimate, narrow_regions, neighbor_search

cfg = ArrayConfig()
steps = (2 / cfg.n_t, 6 / cfg.n_t**2)
fit = fit_gaussian(cfg, steps[0] / 2, steps[1] / 2)
print(f"main-lobe Gaussian: amplitude {fit.amplitude:.2f}, "
      f"max residual {fit.max_residual:.2%}, mean residual {fit.mean_residual:.2%}")

path = PathParams(1.0, 0.05, 25.05)
truth = to_surrogate(path, cfg.wavelength)
s = Sounder(cfg, assemble_channel(cfg, [path]))
start = (truth.omega + 1.3 * steps[0], truth.b - 0.4 * steps[1])
state = neighbor_search(s, start, steps, 3)
print(f"neighbor search: {state.group_index} groups, success {state.success}, {s.count} probes")

intervals = narrow_regions(state, steps[0] / 2, steps[1] / 2)
omega, b = ga_estimate(s, state, intervals, 2, fit)
est = finalize(omega, b, cfg.wavelength)
print(f"GA estimate omega {omega:+.6f} (truth {truth.omega:+.6f}), b {b:.5e} (truth {truth.b:.5e})")
print(f"range {est.range_m:.3f} m (truth {path.range} m), total probes {s.count}")
