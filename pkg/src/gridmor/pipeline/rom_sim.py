import logging

import click
from cytoolz import merge
from dotenv import find_dotenv, load_dotenv

from gridmor.pipeline.project import (
    experiment_point,
    load_basis,
    load_experiment,
    save_trajectory,
    write_timing,
)
from gridmor.rom.engine import check_regularity, project, recover, reduce_point, simulate_rom
from gridmor.utils.files import write_json
from gridmor.utils.timer import StageTimer


def run_rom(settings, system, point, basis, use_deim=True):
    """Projects, simulates and recovers one basis; returns (rom, reduced, recovered, seconds)."""
    timer = StageTimer()
    rom = project(system, basis, deim=use_deim, mode=settings.settings["deim"]["mode"])
    z0 = reduce_point(rom, point)
    rom = check_regularity(rom, z0)
    with timer.stage("rom"):
        reduced = simulate_rom(
            rom, z0, settings.scenario, settings.t_span, settings.solver_options, reduced=True
        )
    elapsed = timer.seconds("rom")
    recovered = recover(basis, reduced, system)
    return rom, reduced, recovered, elapsed


@click.command()
@click.option("--experiment", type=str, default="nine_bus")
@click.option("--r-d", type=int, default=None)
@click.option("--r-a", type=int, default=None)
@click.option("--no-deim", is_flag=True, default=False)
def main(experiment, r_d, r_a, no_deim):
    """Simulates the reduced model under the experiment scenario and stores
    the reduced and the recovered full-state trajectories.
    """
    logger = logging.getLogger(__name__)
    settings = load_experiment(experiment)
    target = settings.path

    grid = settings.load_grid()
    system = settings.system(grid)
    point = experiment_point(settings, grid, system)
    basis = load_basis(target, r_d=r_d, r_a=r_a)
    use_deim = settings.settings["deim"]["enabled"] and not no_deim

    rom, reduced, recovered, elapsed = run_rom(settings, system, point, basis, use_deim)

    header = settings.header(
        stage="rom-sim", scenario=settings.scenario.label, model="rom", **rom.provenance
    )
    save_trajectory(reduced, target / "rom_reduced.parquet", header)
    save_trajectory(recovered, target / "rom_trajectory.parquet", header)
    write_json(
        merge(header, {"regular": rom.regular, "n": system.n, "r": basis.r, "diagnostics": recovered.diagnostics}),
        target / "rom_diagnostics.json",
    )
    write_timing(target, "rom", elapsed)
    logger.info(f"reduced run r={basis.r} ({rom.path}) in {elapsed} s -> {target}")


if __name__ == "__main__":
    log_fmt = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    logging.basicConfig(level=logging.INFO, format=log_fmt)

    # find .env automagically by walking up directories until it's found, then
    # load up the .env entries as environment variables
    load_dotenv(find_dotenv())

    main()
