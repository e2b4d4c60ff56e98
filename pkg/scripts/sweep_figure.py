"""Turn run directories into gnuplot data and a plot script.

Usage: python3 scripts/sweep_figure.py runs/E2 runs/E3 [--out figs]
Writes <out>/<name>.dat (whitespace columns from sweep.csv) and
<out>/sweep.gp, which plots eps*m and max|Phi| against eps on log axes.
"""
import argparse
from pathlib import Path

from semistab.cli_runner.artifacts import read_sweep_csv


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("runs", nargs="+")
    ap.add_argument("--out", default="figs")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plots = []
    for run in args.runs:
        name = Path(run).name
        csv = read_sweep_csv(Path(run) / "sweep.csv")
        cols = csv["columns"]
        lines = ["# " + " ".join(cols)] + [" ".join("%.10g" % v for v in row) for row in csv["data"]]
        (out / f"{name}.dat").write_text("\n".join(lines) + "\n")
        i_eps, i_em, i_phi = cols.index("eps") + 1, cols.index("eps_m") + 1, cols.index("max_phi") + 1
        plots.append(f"'{name}.dat' u {i_eps}:{i_em} w lp t '{name} eps*m'")
        plots.append(f"'{name}.dat' u {i_eps}:{i_phi} w l dt 2 t '{name} max|Phi|'")
    gp = ["set logscale xy", "set xlabel 'eps'", "set key outside",
          "set terminal pngcairo size 900,600", "set output 'sweep.png'",
          "plot " + ", \\\n     ".join(plots)]
    (out / "sweep.gp").write_text("\n".join(gp) + "\n")
    print(f"wrote {out}/sweep.gp; run `cd {out} && gnuplot sweep.gp`")


if __name__ == "__main__":
    main()
