"""Small Monte Carlo sweep comparing the two training variants with the exhaustive baseline.

Run: python3 demos/06_monte_carlo.py  (the CLI equivalent is ``thbt sweep``)
"""
from thbt.harness import ExperimentConfig, aggregate, run_sweep

conf = ExperimentConfig(trials=50, snr_db=(0.0, 10.0, 20.0), snr_reference="element")
for row in aggregate(run_sweep(conf), (1.0,)):
    print(f"{row['method']:>12s} {row['snr_db']:5.1f} dB  xi {row['mean_xi']:.3f}  "
          f"SE {row['mean_se_bpshz']:6.2f}  CDF(1 m) {row['cdf_e_le_1m']:.2f}  "
          f"overhead {row['mean_overhead']:.1f}")
