"""Plot CLI outputs: 2-D samples against data, chain snapshots, and a training log.

    python3 scripts/plot_samples.py --samples samples.csv [--data test.csv]
        [--chain samples_chain.csv] [--log run/train_log.csv] --out figure.png

Needs matplotlib (``pip install walkback[plot]``); the package itself does not.
"""
import argparse
import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from walkback.data import load_csv  # noqa: E402


def _read_chain(path):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    steps = sorted({int(r["step"]) for r in rows})
    cols = [k for k in rows[0] if k.startswith("x")]
    by_step = {s: np.array([[float(r[c]) for c in cols] for r in rows if int(r["step"]) == s])
               for s in steps}
    return steps, by_step


def _read_log(path):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    epochs = [int(r["epoch"]) for r in rows]
    return epochs, {k: [float(r[k]) for r in rows] for k in ("train_bound", "val_bound")}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--samples", required=True)
    parser.add_argument("--data")
    parser.add_argument("--chain")
    parser.add_argument("--log")
    parser.add_argument("--snapshots", type=int, default=6)
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)

    samples = load_csv(args.samples).points
    panels = 1 + (args.chain is not None) + (args.log is not None)
    fig, axes = plt.subplots(1, panels, figsize=(5 * panels, 4.5), squeeze=False)
    axes = list(axes[0])

    ax = axes.pop(0)
    if args.data:
        ref = load_csv(args.data).points
        ax.scatter(ref[:, 0], ref[:, 1], s=3, alpha=0.3, label="data")
    ax.scatter(samples[:, 0], samples[:, 1], s=3, alpha=0.6, label="samples")
    ax.set_aspect("equal")
    ax.legend(loc="upper right")
    ax.set_title("samples")

    if args.chain:
        ax = axes.pop(0)
        steps, by_step = _read_chain(args.chain)
        picked = [steps[i] for i in np.linspace(0, len(steps) - 1, min(args.snapshots, len(steps))).astype(int)]
        colors = plt.cm.viridis(np.linspace(0, 1, len(picked)))
        for step, color in zip(picked, colors):
            pts = by_step[step]
            ax.scatter(pts[:, 0], pts[:, 1], s=3, color=color, label=f"step {step}")
        ax.set_aspect("equal")
        ax.legend(loc="upper right", markerscale=3, fontsize="small")
        ax.set_title("cooling chain")

    if args.log:
        ax = axes.pop(0)
        epochs, series = _read_log(args.log)
        for name, values in series.items():
            ax.plot(epochs, values, label=name)
        ax.set_xlabel("epoch")
        ax.set_ylabel("bound per point")
        ax.legend()
        ax.set_title("training")

    fig.tight_layout()
    fig.savefig(args.out, dpi=120)


if __name__ == "__main__":
    main()
