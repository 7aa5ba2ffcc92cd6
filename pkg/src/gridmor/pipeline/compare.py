import logging

import click
import matplotlib
import numpy as np
import pandas as pd
from cytoolz import merge
from dotenv import find_dotenv, load_dotenv

from gridmor.grid.system import EvaluationError
from gridmor.pipeline.project import (
    experiment_point,
    load_basis,
    load_experiment,
    load_trajectory,
)
from gridmor.pipeline.rom_sim import run_rom
from gridmor.reduction.pod import BasisError, StructureViolation
from gridmor.rom.metrics import compare
from gridmor.simulation.equilibrium import ConvergenceError, SingularJacobianError
from gridmor.simulation.solver import IntegrationError
from gridmor.utils.files import read_json, write_csv, write_json
from gridmor.utils.plot import plot_error_norm, plot_traces

matplotlib.use("agg")

logger = logging.getLogger(__name__)


def parse_orders(text, n_d):
    """'2,4,full' -> [2, 4, n_d]."""
    orders = []
    for item in str(text).split(","):
        item = item.strip()
        if not item:
            continue
        orders.append(n_d if item == "full" else int(item))
    return orders


def fidelity_sweep(settings, system, point, fom, orders, use_deim):
    """RMSE and group indices of the stored basis rebuilt at each r_d."""
    rows = []
    for r_d in orders:
        row = {"r_d": r_d}
        try:
            basis = load_basis(settings.path, r_d=r_d)
            _, _, recovered, elapsed = run_rom(settings, system, point, basis, use_deim)
        except (
            BasisError, StructureViolation, IntegrationError,
            ConvergenceError, SingularJacobianError, EvaluationError,
        ) as e:
            logger.warning(f"r_d={r_d} failed: {e}")
            rows.append(
                merge(row, {"r_a": np.nan, "rmse": np.nan, "rom_seconds": np.nan, "error": str(e)})
            )
            continue
        report = compare(fom, recovered, groups=system.layout.groups)
        rows.append(
            merge(
                row,
                {"r_a": basis.r_a, "rmse": report.rmse, "rom_seconds": elapsed, "error": ""},
                {f"epsilon_{name}": value for name, value in report.epsilon.items()},
            )
        )
    return pd.DataFrame(rows)


@click.command()
@click.option("--experiment", type=str, default="nine_bus")
@click.option("--sweep", is_flag=True, default=False)
@click.option("--orders", type=str, default=None)
@click.option("--no-deim", is_flag=True, default=False)
def main(experiment, sweep, orders, no_deim):
    """Compares the recovered reduced trajectory with the full-order one and
    writes the comparison report, the per-state errors and the error norm series.
    With --sweep the basis is also rebuilt and replayed at several r_d.
    """
    settings = load_experiment(experiment)
    target = settings.path
    fom = load_trajectory(target / "fom_trajectory.parquet")
    recovered = load_trajectory(target / "rom_trajectory.parquet")
    timings = read_json(target / "timings.json") if (target / "timings.json").exists() else {}

    grid = settings.load_grid()
    system = settings.system(grid)
    report = compare(
        fom,
        recovered,
        groups=system.layout.groups,
        runtimes={key: timings[key] for key in ("fom", "rom") if key in timings},
    )

    header = settings.header(stage="compare", scenario=settings.scenario.label)
    write_json(merge(header, report.to_dict()), target / "comparison.json")
    write_csv(report.state_errors, target / "state_errors.csv", header)
    write_csv(report.error_frame(), target / "error_norm.csv", header)
    plot_error_norm(report, target / "error_norm.png", title=settings.scenario.label)

    worst = report.state_errors.sort_values("rms", ascending=False)["state"].head(3).tolist()
    if worst:
        plot_traces(fom, recovered, worst, target / "traces.png")

    if sweep or orders is not None:
        if orders is None:
            orders = ",".join(str(order) for order in settings.settings["compare"]["orders"])
        point = experiment_point(settings, grid, system)
        use_deim = settings.settings["deim"]["enabled"] and not no_deim
        table = fidelity_sweep(
            settings, system, point, fom, parse_orders(orders, system.n_d), use_deim
        )
        write_csv(table, target / "sweep.csv", header)
        logger.info(f"fidelity sweep:\n{table.to_string(index=False)}")
        failed = table.loc[table["error"] != "", "r_d"].tolist() if len(table) else []
        if failed:
            raise click.ClickException(f"reduced model failed at r_d={failed}, see sweep.csv")

    logger.info(f"RMSE {report.rmse:.4e}; " + ", ".join(
        f"epsilon[{name}] {value:.4e}" for name, value in report.epsilon.items()
    ))


if __name__ == "__main__":
    log_fmt = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    logging.basicConfig(level=logging.INFO, format=log_fmt)

    # find .env automagically by walking up directories until it's found, then
    # load up the .env entries as environment variables
    load_dotenv(find_dotenv())

    main()
