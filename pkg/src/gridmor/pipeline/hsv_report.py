import logging

import click
import matplotlib
import numpy as np
import pandas as pd
from dotenv import find_dotenv, load_dotenv

from gridmor.pipeline.project import load_basis, load_experiment
from gridmor.utils.files import write_csv
from gridmor.utils.plot import plot_cumulative

matplotlib.use("agg")

logger = logging.getLogger(__name__)


def cumulative_table(values):
    values = np.clip(np.asarray(values, dtype=float), 0.0, None)
    total = np.sum(values)
    return pd.DataFrame(
        {
            "order": np.arange(1, len(values) + 1),
            "value": values,
            "cumulative": np.cumsum(values) / total if total > 0 else np.zeros_like(values),
        }
    )


def write_hsv_tables(basis, target, header, thresholds=None):
    """One csv per spectrum of the basis plus the cumulative figure; returns the tables."""
    thresholds = thresholds or {}
    tables = {}
    for block, values in basis.spectra.items():
        table = cumulative_table(values)
        tables[block] = table
        write_csv(table, target / f"hsv_{block}.csv", header)
        if block in thresholds and len(table):
            crossing = int(np.searchsorted(table["cumulative"].to_numpy(), thresholds[block] - 1e-12) + 1)
            logger.info(
                f"{block}: cumulative fraction reaches {thresholds[block]:.2%} at order {crossing}"
            )
    if basis.spectra:
        plot_cumulative(basis.spectra, target / "hsv_cumulative.png", thresholds=thresholds)
    return tables


@click.command()
@click.option("--experiment", type=str, default="nine_bus")
def main(experiment):
    """Writes the cumulative spectrum tables and figure of the stored basis."""
    settings = load_experiment(experiment)
    target = settings.path
    basis = load_basis(target)
    reduction = settings.settings["reduction"]
    thresholds = {"dynamic": reduction["energy_d"], "algebraic": reduction["energy_a"]}
    header = settings.header(stage="hsv-report", method=basis.method, r_d=basis.r_d, r_a=basis.r_a)
    tables = write_hsv_tables(basis, target, header, thresholds)
    for block, table in tables.items():
        logger.info(f"{block} spectrum:\n{table.head(12).to_string(index=False)}")


if __name__ == "__main__":
    log_fmt = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    logging.basicConfig(level=logging.INFO, format=log_fmt)

    # find .env automagically by walking up directories until it's found, then
    # load up the .env entries as environment variables
    load_dotenv(find_dotenv())

    main()
