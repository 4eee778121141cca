"""Free play reported by the backlash probe over a range of deadbands.

Writes ``deadband,free_play,ratio`` rows; the ratio should sit near 1 once the
deadband is well above the elastic tracking lag of the drive.
"""

import argparse
import csv

import numpy as np

from linkforge.dynamics import backlash_impedance, backlash_probe


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--amplitude", type=float, default=0.2)
    ap.add_argument("--levels", type=float, nargs="+",
                    default=[0.0, 0.0025, 0.005, 0.01, 0.02, 0.04])
    ap.add_argument("--out", default="backlash_sweep.csv")
    args = ap.parse_args()

    rows = []
    for eps in args.levels:
        rep = backlash_probe(backlash_impedance(eps), args.amplitude)
        ratio = rep.free_play / eps if eps > 0 else np.nan
        rows.append((eps, rep.free_play, ratio))
        print(f"deadband {eps:.4f} rad  free play {rep.free_play:.6f} rad  ratio {ratio:.3f}")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["deadband", "free_play", "ratio"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
