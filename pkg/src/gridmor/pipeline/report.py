import logging
from pathlib import Path

import click
from dotenv import find_dotenv, load_dotenv

from gridmor.pipeline.project import load_experiment
from gridmor.utils.files import read_csv, read_json

ARTIFACTS = {
    "operating point": "operating_point.parquet",
    "full-order trajectory": "fom_trajectory.parquet",
    "full-order diagnostics": "fom_diagnostics.json",
    "controllability covariance": "G_c.parquet",
    "observability covariance": "G_o11.parquet",
    "covariance summary": "covariance_summary.json",
    "basis": "basis/basis.json",
    "balance summary": "balance_summary.json",
    "dynamic spectrum": "hsv_dynamic.csv",
    "algebraic spectrum": "hsv_algebraic.csv",
    "reduced trajectory": "rom_trajectory.parquet",
    "reduced diagnostics": "rom_diagnostics.json",
    "comparison": "comparison.json",
    "fidelity sweep": "sweep.csv",
    "timings": "timings.json",
}

OPTIONAL = ("balance summary", "covariance summary", "controllability covariance",
            "observability covariance", "fidelity sweep")


def _spectrum_lines(table, threshold=None):
    lines = []
    for row in table.head(10).itertuples(index=False):
        lines.append(f"    {int(row.order):4d}  {row.value:12.5e}  {row.cumulative:8.4f}")
    if threshold is not None and len(table):
        crossing = table.loc[table["cumulative"] >= threshold - 1e-12, "order"]
        if len(crossing):
            lines.append(f"    reaches {threshold:.2%} at order {int(crossing.iloc[0])}")
    return lines


def summarize(path, thresholds=None):
    """(lines, missing): a text summary of whatever artifacts exist under `path`."""
    path = Path(path)
    thresholds = thresholds or {}
    lines, missing = [], []
    present = {}
    for label, name in ARTIFACTS.items():
        if (path / name).exists():
            present[label] = path / name
        elif label not in OPTIONAL:
            missing.append(label)

    if "full-order diagnostics" in present:
        diagnostics = read_json(present["full-order diagnostics"])
        lines.append(
            f"full-order run: {diagnostics.get('scenario')} with {diagnostics.get('method')}, "
            f"{diagnostics.get('steps')} steps, {diagnostics.get('rejected_steps')} rejected, "
            f"max algebraic residual {diagnostics.get('max_algebraic_residual', float('nan')):.2e}"
        )
    if "basis" in present:
        basis = read_json(present["basis"])
        lines.append(
            f"basis: {basis['method']}, r_d = {basis['r_d']} of {basis['n_d']}, "
            f"r_a = {basis['r_a']} of {basis['n_a']}, DEIM points {len(basis.get('deim_indices', []))}"
        )
    for block in ("dynamic", "algebraic"):
        label = f"{block} spectrum"
        if label in present:
            table, _ = read_csv(present[label])
            lines.append(f"{block} spectrum (order, value, cumulative):")
            lines.extend(_spectrum_lines(table, thresholds.get(block)))
    if "balance summary" in present:
        balance = read_json(present["balance summary"])
        if balance.get("categories"):
            lines.append(f"balanced categories: {balance['categories']}")
        if balance.get("residuals"):
            residuals = balance["residuals"]
            lines.append(
                f"balanced-form residuals: controllability {residuals['controllability']:.2e}, "
                f"observability {residuals['observability']:.2e}"
            )
    if "reduced diagnostics" in present:
        rom = read_json(present["reduced diagnostics"])
        band = rom.get("diagnostics", {}).get("recovered_network_residual")
        lines.append(
            f"reduced model: r = {rom.get('r')} of n = {rom.get('n')}, regular = {rom.get('regular')}"
            + (f", recovered network residual {band:.2e}" if band is not None else "")
        )
    if "comparison" in present:
        comparison = read_json(present["comparison"])
        lines.append(f"RMSE: {comparison['rmse']:.4e}")
        for name, value in comparison["epsilon"].items():
            lines.append(f"  epsilon[{name}]: {value:.4e}")
    if "fidelity sweep" in present:
        table, _ = read_csv(present["fidelity sweep"])
        lines.append("fidelity sweep:")
        lines.extend(f"    {line}" for line in table.to_string(index=False).splitlines())
    if "timings" in present:
        timings = read_json(present["timings"])
        lines.append("timings: " + ", ".join(f"{k} {v:.3f} s" for k, v in sorted(timings.items())))
    return lines, missing


@click.command()
@click.option("--experiment", type=str, default="nine_bus")
def main(experiment):
    """Prints a summary of the experiment artifacts, listing the missing ones."""
    logger = logging.getLogger(__name__)
    settings = load_experiment(experiment)
    reduction = settings.settings["reduction"]
    lines, missing = summarize(
        settings.path, {"dynamic": reduction["energy_d"], "algebraic": reduction["energy_a"]}
    )
    click.echo(f"experiment {settings.key} ({settings.path})")
    for line in lines:
        click.echo(line)
    if missing:
        click.echo("missing artifacts: " + ", ".join(missing))
        logger.warning(f"{len(missing)} artifacts missing, partial report")


if __name__ == "__main__":
    log_fmt = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    logging.basicConfig(level=logging.INFO, format=log_fmt)

    # find .env automagically by walking up directories until it's found, then
    # load up the .env entries as environment variables
    load_dotenv(find_dotenv())

    main()
