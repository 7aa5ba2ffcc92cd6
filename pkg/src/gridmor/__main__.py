import logging

import click
from dotenv import find_dotenv, load_dotenv

from gridmor.pipeline import compare, gramians, hsv_report, reduce, report, rom_sim, simulate

LOG_FMT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


@click.group()
def cli():
    """Structure-preserving model reduction of power-grid models."""
    logging.basicConfig(level=logging.INFO, format=LOG_FMT)

    # walk up from the working directory until a .env turns up and export its
    # entries before any stage reads the environment
    load_dotenv(find_dotenv(usecwd=True))


cli.add_command(simulate.main, name="simulate")
cli.add_command(gramians.main, name="gramians")
cli.add_command(reduce.main, name="reduce")
cli.add_command(rom_sim.main, name="rom-sim")
cli.add_command(compare.main, name="compare")
cli.add_command(hsv_report.main, name="hsv-report")
cli.add_command(report.main, name="report")


if __name__ == "__main__":
    cli()
