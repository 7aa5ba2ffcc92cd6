import logging

import click
from dotenv import find_dotenv, load_dotenv

from gridmor.pipeline.project import (
    experiment_point,
    load_experiment,
    save_trajectory,
    write_timing,
)
from gridmor.simulation.solver import IntegrationError, integrate
from gridmor.utils.files import write_csv, write_json
from gridmor.utils.timer import StageTimer


@click.command()
@click.option("--experiment", type=str, default="nine_bus")
def main(experiment):
    """Simulates the full-order grid model under the experiment scenario and
    stores the trajectory (parquet + csv) and the solver diagnostics.
    """
    logger = logging.getLogger(__name__)
    settings = load_experiment(experiment)
    target = settings.path
    scenario = settings.scenario

    t = StageTimer()
    t.start("initialize")
    grid = settings.load_grid()
    system = settings.system(grid)
    point = experiment_point(settings, grid, system)
    logger.info(f"operating point ready ({t.stop()} s)")

    header = settings.header(stage="simulate", scenario=scenario.label, model="fom")
    t.start("fom")
    try:
        trajectory = integrate(
            system, point, scenario, settings.t_span, settings.solver_options
        )
    except IntegrationError as e:
        if e.trajectory is not None:
            save_trajectory(e.trajectory, target / "fom_trajectory.partial.parquet", header)
            logger.error(f"partial trajectory stored up to t={e.trajectory.t[-1]:g}")
        raise
    elapsed = t.stop()

    save_trajectory(trajectory, target / "fom_trajectory.parquet", header)
    write_csv(trajectory.to_frame(), target / "fom_trajectory.csv", header)
    write_json(trajectory.diagnostics, target / "fom_diagnostics.json")
    write_timing(target, "fom", elapsed)
    logger.info(
        f"full-order run of {scenario.label}: {trajectory.n_records} records in {elapsed} s -> {target}"
    )


if __name__ == "__main__":
    log_fmt = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    logging.basicConfig(level=logging.INFO, format=log_fmt)

    # find .env automagically by walking up directories until it's found, then
    # load up the .env entries as environment variables
    load_dotenv(find_dotenv())

    main()
