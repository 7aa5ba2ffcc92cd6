import logging

import click
import numpy as np
from cytoolz import merge, valfilter
from dotenv import find_dotenv, load_dotenv

from gridmor.grid.system import OperatingPoint
from gridmor.pipeline.project import (
    experiment_point,
    load_experiment,
    load_trajectory,
    save_covariances,
    save_scaling,
    write_timing,
)
from gridmor.reduction.gramians import covariances, partition
from gridmor.reduction.pod import pod_modes
from gridmor.reduction.snapshots import collect, scale_system
from gridmor.utils.array import descending_eigh
from gridmor.utils.files import write_json
from gridmor.utils.timer import StageTimer


def eigenvalue_summary(pair):
    G_c11, _, _, G_c22 = partition(pair.G_c, pair.n_d, ridge=False)
    summary = {}
    for name, matrix in (("G_c11", G_c11), ("G_o11", pair.G_o11), ("G_c22", G_c22)):
        values, _ = descending_eigh(matrix)
        summary[name] = {
            "eigenvalues": values.tolist(),
            "trace": float(np.trace(matrix)) if matrix.size else 0.0,
        }
    return summary


@click.command()
@click.option("--experiment", type=str, default="nine_bus")
@click.option("--alpha-u", type=float, default=None)
@click.option("--alpha-x", type=float, default=None)
@click.option("--horizon", type=float, default=None)
@click.option("--dt", type=float, default=None)
def main(experiment, alpha_u, alpha_x, horizon, dt):
    """Estimates the empirical controllability and observability covariances
    around the operating point and stores them with the scaling diagonals.
    """
    logger = logging.getLogger(__name__)
    settings = load_experiment(experiment)
    overrides = valfilter(
        lambda value: value is not None,
        {"alpha_u": alpha_u, "alpha_x": alpha_x, "horizon": horizon, "dt": dt},
    )
    settings.settings["gramians"] = merge(settings.settings["gramians"], overrides)
    config = settings.perturbation_config()
    observability = settings.settings["reduction"]["observability"]
    target = settings.path

    t = StageTimer()
    t.start("gramians")
    grid = settings.load_grid()
    system = settings.system(grid)
    point = experiment_point(settings, grid, system)

    scaling = None
    if settings.settings["gramians"]["scaling"]:
        system, scaling = scale_system(system, point.x, point.u, point.w)
        point = OperatingPoint(*scaling.scale(point.x, point.u, point.w))

    modes = None
    if config.pod_modes:
        trajectory = load_trajectory(target / "fom_trajectory.parquet")
        X_d = collect(trajectory, settings.system(grid), reference=None).X_d
        if scaling is not None:
            X_d = X_d / scaling.s_x[: system.n_d, None]
        X_d = X_d - point.x[: system.n_d, None]
        modes = pod_modes(X_d, settings.settings["reduction"]["mode"]).modes

    pair = covariances(system, point, config, modes=modes, observability=observability)
    elapsed = t.stop()

    header = settings.header(
        stage="gramians",
        alpha_u=config.alpha_u,
        alpha_x=config.alpha_x,
        horizon=config.horizon,
        dt=config.dt,
        shape=config.shape,
        observability=observability,
        scaled=scaling is not None,
    )
    save_covariances(pair, target, header)
    if scaling is not None:
        save_scaling(scaling, target, header)
    write_json(merge(header, eigenvalue_summary(pair)), target / "covariance_summary.json")
    write_timing(target, "gramians", elapsed)
    logger.info(f"covariances of {system.n} states in {elapsed} s -> {target}")


if __name__ == "__main__":
    log_fmt = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    logging.basicConfig(level=logging.INFO, format=log_fmt)

    # find .env automagically by walking up directories until it's found, then
    # load up the .env entries as environment variables
    load_dotenv(find_dotenv())

    main()
