"""Desk-scale replication of the simulation study.

Each table of the study has a driver: table 1 tracks the rank estimate,
table 2 compares factor-space recovery across estimators, table 3 the
rotation scalar, and table 4 the Gaussian approximation of standardized
estimates (with per-repetition draws saved for histograms). This demo runs
tiny versions; the CLI runs the real ones, e.g.

    ufm simulate --table 2 --sizes 50 100 150 --reps 1000 --seed 0 \
        --threads 4 --out-dir replication/

Run:  python demos/05_simulation_tables.py   (a few minutes)
"""

from ufm import ExperimentSpec, monte_carlo_run

spec1 = ExperimentSpec("table1", sizes=(30, 50), reps=10)
res1 = monte_carlo_run(spec1, seed=0, threads=2)
print("table 1 (rank estimate):")
for row in res1["summary"]:
    print(" ", row)
print()

spec2 = ExperimentSpec("table2", sizes=(30,), reps=5,
                       estimators=("ufa", "idw-ufa", "pca", "qfa-ini-tau"),
                       taus=(0.5, 0.9))
res2 = monte_carlo_run(spec2, seed=0, threads=2)
print("table 2 (adjusted R^2, tiny run):")
for row in res2["summary"]:
    print(" ", row)
print()

spec4 = ExperimentSpec("table4_fig1", sizes=(30,), reps=8)
res4 = monte_carlo_run(spec4, seed=0, threads=2)
print("table 4 (standardized estimates, tiny run):")
for row in res4["summary"]:
    print(" ", row)
print()
print("write CSVs for plotting by passing out_dir=...; the *_reps.csv file")
print("holds one standardized draw per repetition, ready for a histogram")
print("against the standard normal density.")
