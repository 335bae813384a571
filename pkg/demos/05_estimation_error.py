"""A small version of the estimation-error experiment.

The estimation error of a training size m is the test loss of a network
trained on m samples minus that of the same architecture trained on m_star
samples. A reduced grid (depth 4, two thresholds, three seeds) is enough to
see ISTA below ReLU at small m and both errors shrinking as m grows. The
full grids run through ``python -m unrollgen ee-sweep``.
"""

from unrollgen.harness import ExperimentSpec, run_ee_experiment, summarize

spec = ExperimentSpec(depths=(4,), lambdas=(0.1, 0.2), ms=(10, 50, 1000), seeds=(0, 1, 2), m_star=2000,
                      m_test=2000)
results, failures = run_ee_experiment(spec)
print(f"{len(results)} cells, {len(failures)} failures")
print("arch  lambda     m   mean EE")
for s in summarize(results):
    print(f"{s['arch']:5} {s['lam']:6} {s['m']:5} {s['mean_ee']:9.5f}")
