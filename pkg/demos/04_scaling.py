# How runtime and memory grow with N when m = ceil(N^(1/3)).
#
# The global problem stays tiny, each local problem is a sort, and the
# coupling is stored block by block. Doubling N should roughly double the
# time, and the traced allocation peak should stay far below N^2 values.

import sys

from qgw.bench import rows_to_csv, scaling_suite

sizes = [int(s) for s in sys.argv[1:]] or [5_000, 10_000, 20_000, 40_000]
rows = scaling_suite(sizes, seed=0, repeats=3)

print("%8s %4s %9s %14s %16s" % ("N", "m", "seconds", "peak values", "N^2 values"))
for r in rows:
    print("%8d %4d %9.3f %14d %16d" % (r["N"], r["m"], r["seconds"],
                                       r["peak_values_allocated"], r["N"] ** 2))

for a, b in zip(rows, rows[1:]):
    print("t(%d)/t(%d) = %.2f" % (b["N"], a["N"], b["seconds"] / a["seconds"]))

# the same table as CSV, as written by `qgw bench --suite scaling`
rows_to_csv(rows, sys.stdout)
