import logging
from functools import partial

import click
import matplotlib
from cytoolz import merge, valfilter
from dotenv import find_dotenv, load_dotenv

from gridmor.pipeline.hsv_report import write_hsv_tables
from gridmor.pipeline.project import (
    REDUCTION_METHODS,
    experiment_point,
    load_covariances,
    load_experiment,
    load_scaling,
    load_trajectory,
    save_basis,
    write_timing,
)
from gridmor.reduction.balancing import sp_bpod
from gridmor.reduction.deim import build_deim
from gridmor.reduction.pod import sp_pod
from gridmor.reduction.snapshots import collect
from gridmor.utils.files import write_json, write_list
from gridmor.utils.timer import StageTimer

matplotlib.use("agg")


@click.command()
@click.option("--experiment", type=str, default="nine_bus")
@click.option("--method", type=click.Choice(REDUCTION_METHODS), default=None)
@click.option("--energy-d", type=float, default=None)
@click.option("--energy-a", type=float, default=None)
@click.option("--r-d", type=int, default=None)
@click.option("--r-a", type=int, default=None)
@click.option("--no-deim", is_flag=True, default=False)
def main(experiment, method, energy_d, energy_a, r_d, r_a, no_deim):
    """Builds the structure-preserving reduction basis (SP-POD from the stored
    full-order trajectory, SP-BPOD from the stored covariances) and writes the
    basis archive with its spectrum tables.
    """
    logger = logging.getLogger(__name__)
    settings = load_experiment(experiment)
    overrides = valfilter(
        lambda value: value is not None,
        {"method": method, "energy_d": energy_d, "energy_a": energy_a, "r_d": r_d, "r_a": r_a},
    )
    reduction = merge(settings.settings["reduction"], overrides)
    settings.settings["reduction"] = reduction
    deim_settings = settings.settings["deim"]
    use_deim = deim_settings["enabled"] and not no_deim
    target = settings.path

    t = StageTimer()
    t.start("reduce")
    grid = settings.load_grid()
    system = settings.system(grid)
    point = experiment_point(settings, grid, system)

    snapshots = None
    if reduction["method"] == "sp-pod" or use_deim:
        trajectory = load_trajectory(target / "fom_trajectory.parquet")
        reference = point.x if reduction["deviation"] or reduction["method"] == "sp-bpod" else None
        snapshots = collect(trajectory, system, reference=reference)

    deim = None
    if use_deim:
        deim = partial(build_deim, energy=deim_settings["energy"], p=deim_settings.get("p"))

    scaling = None
    summary = None
    if reduction["method"] == "sp-pod":
        basis = sp_pod(
            system,
            snapshots,
            energy_d=reduction["energy_d"],
            energy_a=reduction["energy_a"],
            r_d=reduction.get("r_d"),
            r_a=reduction.get("r_a"),
            mode=reduction["mode"],
            deim=deim,
        )
    else:
        pair = load_covariances(target)
        scaling = load_scaling(target)
        basis, summary = sp_bpod(
            system,
            pair,
            energy_d=reduction["energy_d"],
            energy_a=reduction["energy_a"],
            r_d=reduction.get("r_d"),
            r_a=reduction.get("r_a"),
            rank_tol=reduction["rank_tol"],
            observability=reduction["observability"],
            scaling=scaling,
            reference=point.x,
            deim=deim,
            snapshots=snapshots,
        )
    elapsed = t.stop()

    header = settings.header(
        stage="reduce",
        method=basis.method,
        r_d=basis.r_d,
        r_a=basis.r_a,
        deim=basis.deim is not None,
    )
    save_basis(basis, target, header, s_x=None if scaling is None else scaling.s_x)
    write_hsv_tables(
        basis, target, header,
        thresholds={"dynamic": reduction["energy_d"], "algebraic": reduction["energy_a"]},
    )
    if summary is not None:
        write_json(merge(header, summary), target / "balance_summary.json")
    if basis.deim is not None:
        write_list(basis.deim.indices.tolist(), target / "deim_indices.txt", header)
    write_timing(target, "reduce", elapsed)
    logger.info(
        f"{basis.method} basis r_d={basis.r_d}/{basis.n_d}, r_a={basis.r_a}/{basis.n_a}"
        f"{f', DEIM p={basis.deim.p}' if basis.deim is not None else ''} in {elapsed} s"
    )


if __name__ == "__main__":
    log_fmt = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    logging.basicConfig(level=logging.INFO, format=log_fmt)

    # find .env automagically by walking up directories until it's found, then
    # load up the .env entries as environment variables
    load_dotenv(find_dotenv())

    main()
