"""Example plots from `nestmix plotdata` CSVs (needs matplotlib and pandas).

    nestmix plotdata --fit vi.nmf --what elbo --out elbo.csv
    nestmix plotdata --fit mc.nmf --what trace:mu --out mu.csv
    nestmix plotdata --fit mc.nmf --what ecdf --out ecdf.csv
    python docs/plot_fit.py elbo.csv mu.csv ecdf.csv
"""
import sys

import matplotlib.pyplot as plt
import pandas as pd


def plot_elbo(df, ax):
    for run, d in df.groupby("run"):
        ax.plot(d["iteration"], d["elbo"], lw=0.8, label=f"run {run}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("ELBO")


def plot_trace(df, ax):
    for comp, d in df.groupby("component"):
        ax.plot(d["iteration"], d["value"], lw=0.5)
    ax.set_xlabel("iteration")


def plot_ecdf(df, ax):
    for g, d in df.groupby("group"):
        ax.step(d["value"], d["ecdf"], where="post", color=f"C{int(d['dc_label'].iloc[0]) - 1}", lw=0.7)
    ax.set_xlabel("y")
    ax.set_ylabel("ECDF")


def main(paths):
    fig, axes = plt.subplots(1, len(paths), figsize=(5 * len(paths), 4), squeeze=False)
    for path, ax in zip(paths, axes[0]):
        df = pd.read_csv(path)
        if "elbo" in df:
            plot_elbo(df, ax)
        elif "ecdf" in df:
            plot_ecdf(df, ax)
        elif "component" in df:
            plot_trace(df, ax)
        else:
            ax.plot(df.iloc[:, 0], df.iloc[:, 1:])
        ax.set_title(path)
    fig.tight_layout()
    plt.show()


if __name__ == "__main__":
    main(sys.argv[1:])
