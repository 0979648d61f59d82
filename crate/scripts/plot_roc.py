#!/usr/bin/env python3
"""Plot ROC CSVs written by `pcaids simulate` or `pcaids evaluate`.

    python3 scripts/plot_roc.py out/roc_c3.csv [more.csv ...] -o roc.png
"""
import argparse
import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read(path):
    with open(path) as f:
        comment = f.readline().lstrip("# ").strip()
        rows = list(csv.reader(f))
    aucs = dict(kv.split("=") for kv in comment.split(","))
    header, data = rows[0], rows[1:]
    cols = {h: [float(r[i]) for r in data] for i, h in enumerate(header)}
    return aucs, cols


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv", nargs="+")
    ap.add_argument("-o", "--output", default="roc.png")
    args = ap.parse_args()
    fig, axes = plt.subplots(1, len(args.csv), figsize=(4.5 * len(args.csv), 4.2), squeeze=False)
    for ax, path in zip(axes[0], args.csv):
        aucs, cols = read(path)
        for name, tpr in cols.items():
            if name == "fpr":
                continue
            method = name.removeprefix("tpr_") if name != "tpr" else ""
            auc = aucs.get(f"auc_{method}", aucs.get("auc"))
            label = f"{method.upper() or 'ROC'} (AUC {float(auc):.3f})"
            ax.plot(cols["fpr"], tpr, label=label)
        ax.plot([0, 1], [0, 1], color="grey", lw=0.5, ls=":")
        ax.set(xlabel="false positive rate", ylabel="true positive rate", title=path.split("/")[-1])
        ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)


if __name__ == "__main__":
    main()
