"""Project folder, experiment settings and artifact storage shared by the stages.

A project is a folder with `config.toml` and `experiments.toml`; its location
comes from the `GRIDMOR_PROJECT_PATH` environment variable (usually set in a
`.env` file). Artifacts of an experiment go to `<data>/<experiment key>/`.
"""
import hashlib
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np
import pandas as pd
import rapidjson as json
from cytoolz import merge, valfilter

from gridmor import __version__
from gridmor.grid.assembly import assemble_ndae
from gridmor.grid.model import ModelError, StructureError, read_grid
from gridmor.grid.system import OperatingPoint
from gridmor.reduction.deim import DeimArtifacts
from gridmor.reduction.gramians import CovariancePair, PerturbationConfig
from gridmor.reduction.pod import build_basis
from gridmor.reduction.snapshots import ScalingSet
from gridmor.simulation.equilibrium import initialize
from gridmor.simulation.scenarios import ScenarioError, scenario_from_dict
from gridmor.simulation.solver import SolverOptions, Trajectory
from gridmor.utils.files import (
    read_json,
    read_matrix,
    read_parquet,
    read_toml,
    write_json,
    write_matrix,
    write_parquet,
)

logger = logging.getLogger(__name__)

DEFAULTS = {
    "horizon": 10.0,
    "record_dt": 0.01,
    "output": "dynamic",
    "seed": 0,
    "scenario": {"kind": "load-step", "delta": 0.005, "onset": 1.0},
    "solver": {"h": 0.005, "method": "trapezoid"},
    "reduction": {
        "method": "sp-pod",
        "energy_d": 0.99,
        "energy_a": 0.97,
        "mode": "direct-svd",
        "deviation": True,
        "rank_tol": 1e-8,
        "observability": "full",
    },
    "gramians": {
        "alpha_u": 0.05,
        "alpha_x": 0.05,
        "magnitudes": [0.25, 0.5, 0.75, 1.0],
        "horizon": 5.0,
        "dt": 0.01,
        "shape": "step",
        "scaling": True,
    },
    "deim": {"enabled": True, "energy": 0.999, "mode": "selective"},
    "compare": {"orders": ["2", "4", "full"]},
}

SECTIONS = ("scenario", "solver", "reduction", "gramians", "deim", "compare")
REDUCTION_METHODS = ("sp-pod", "sp-bpod")


class ConfigError(Exception):
    """A project or experiment setting is missing or invalid"""

    def __init__(self, message, filename=None, field=None):
        where = ", ".join(
            part for part in (
                f"file {filename}" if filename else "",
                f"field {field}" if field else "",
            ) if part
        )
        super().__init__(f"{message} ({where})" if where else message)
        self.filename = filename
        self.field = field


def load_project(project_path=None):
    """Contents of `[project]` in config.toml with resolved paths."""
    if project_path is None:
        if "GRIDMOR_PROJECT_PATH" not in os.environ:
            raise ConfigError("GRIDMOR_PROJECT_PATH is not set", field="GRIDMOR_PROJECT_PATH")
        project_path = os.environ["GRIDMOR_PROJECT_PATH"]
    config_file = Path(project_path) / "config.toml"
    if not config_file.exists():
        raise FileNotFoundError(config_file)

    config = read_toml(config_file).get("project")
    if config is None:
        raise ConfigError("missing [project] table", filename=config_file, field="project")
    paths = config.get("path", {})
    for key in ("config", "data"):
        if key not in paths:
            raise ConfigError("missing project path", filename=config_file, field=f"project.path.{key}")
    if os.environ.get("GRIDMOR_OUTPUT_PATH"):
        paths = merge(paths, {"data": os.environ["GRIDMOR_OUTPUT_PATH"]})
    config["path"] = {key: Path(value) for key, value in paths.items()}
    config.setdefault("environment", {})
    return config


@dataclass
class Experiment:
    name: str
    key: str
    grid_file: Path
    settings: Dict
    project: Dict = field(default_factory=dict)

    @property
    def n_jobs(self):
        return int(self.project.get("environment", {}).get("n_jobs", 1))

    @property
    def path(self):
        target = Path(self.project["path"]["data"]) / self.key
        if not target.exists():
            target.mkdir(parents=True)
            logger.info(f"{target} created")
        return target

    @property
    def method(self):
        return self.settings["reduction"]["method"]

    @property
    def scenario(self):
        try:
            return scenario_from_dict(self.settings["scenario"])
        except ScenarioError as e:
            raise ConfigError(str(e), filename=self.source, field=f"experiments.{self.name}.scenario") from e

    @property
    def source(self):
        return Path(self.project["path"]["config"]) / "experiments.toml"

    @property
    def t_span(self):
        return (0.0, float(self.settings["horizon"]))

    @property
    def solver_options(self):
        options = merge(self.settings["solver"], {"record_dt": self.settings["record_dt"]})
        try:
            return SolverOptions(**options)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e), filename=self.source, field=f"experiments.{self.name}.solver") from e

    def perturbation_config(self):
        settings = dict(self.settings["gramians"])
        settings.pop("scaling", None)
        if "magnitudes" in settings:
            settings["magnitudes"] = tuple(settings["magnitudes"])
        for key in ("inputs", "states"):
            if key in settings:
                settings[key] = tuple(settings[key])
        try:
            return PerturbationConfig(
                **settings, n_jobs=self.n_jobs, solver=self.solver_options
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e), filename=self.source, field=f"experiments.{self.name}.gramians") from e

    def load_grid(self):
        try:
            return read_grid(self.grid_file)
        except (ModelError, StructureError) as e:
            raise ConfigError(str(e), filename=self.grid_file) from e

    def system(self, grid=None):
        grid = self.load_grid() if grid is None else grid
        return assemble_ndae(grid, output=self.settings["output"])

    def config_hash(self):
        digest = hashlib.sha256()
        digest.update(json.dumps(self.settings, sort_keys=True).encode("utf-8"))
        digest.update(Path(self.grid_file).read_bytes())
        return digest.hexdigest()

    def header(self, **provenance):
        return {
            "tool": "gridmor",
            "version": __version__,
            "experiment": self.key,
            "config_hash": self.config_hash(),
            "provenance": provenance,
        }


def _check_settings(settings, filename, name):
    method = settings["reduction"]["method"]
    if method not in REDUCTION_METHODS:
        raise ConfigError(
            f"unknown reduction method {method!r}", filename=filename,
            field=f"experiments.{name}.reduction.method",
        )
    for key in ("horizon", "record_dt"):
        value = settings[key]
        if not isinstance(value, (int, float)) or value <= 0:
            raise ConfigError(
                f"{key} must be a positive number", filename=filename, field=f"experiments.{name}.{key}"
            )
    for key in ("energy_d", "energy_a"):
        value = settings["reduction"][key]
        if not 0 < value <= 1:
            raise ConfigError(
                f"{key} must lie in (0, 1]", filename=filename, field=f"experiments.{name}.reduction.{key}"
            )


def load_experiment(name, project=None):
    project = load_project() if project is None else project
    experiment_file = Path(project["path"]["config"]) / "experiments.toml"
    if not experiment_file.exists():
        raise FileNotFoundError(experiment_file)

    experiments = read_toml(experiment_file).get("experiments", {})
    if name not in experiments:
        raise ConfigError(f"unknown experiment {name!r}", filename=experiment_file, field=f"experiments.{name}")
    record = experiments[name]
    if "grid" not in record:
        raise ConfigError("missing grid file", filename=experiment_file, field=f"experiments.{name}.grid")

    scalars = valfilter(lambda value: not isinstance(value, dict), record)
    settings = merge(valfilter(lambda value: not isinstance(value, dict), DEFAULTS), scalars)
    for section in SECTIONS:
        table = record.get(section, {})
        if not isinstance(table, dict):
            raise ConfigError("expected a table", filename=experiment_file, field=f"experiments.{name}.{section}")
        # the scenario table replaces the default scenario instead of extending it
        settings[section] = dict(table) if section == "scenario" and table else merge(DEFAULTS[section], table)
    _check_settings(settings, experiment_file, name)

    grid_file = Path(project["path"]["config"]) / record["grid"]
    if not grid_file.exists():
        raise FileNotFoundError(grid_file)
    logger.info(f"experiment {name}: {settings}")
    return Experiment(
        name=name,
        key=str(record.get("key", name)),
        grid_file=grid_file,
        settings=settings,
        project=project,
    )


def write_timing(path, stage, seconds):
    target = Path(path) / "timings.json"
    timings = read_json(target) if target.exists() else {}
    timings[stage] = seconds
    write_json(timings, target)


def save_point(point, path, header):
    frame = pd.DataFrame({"value": np.concatenate([point.x, point.u, point.w])})
    header = merge(header, {"sizes": [len(point.x), len(point.u), len(point.w)]})
    write_parquet(frame, Path(path) / "operating_point.parquet", header=header)


def load_point(path):
    target = Path(path) / "operating_point.parquet"
    if not target.exists():
        raise FileNotFoundError(target)
    frame, header = read_parquet(target)
    n_x, n_u, _ = header["sizes"]
    values = frame["value"].to_numpy(dtype=float)
    return OperatingPoint(x=values[:n_x], u=values[n_x: n_x + n_u], w=values[n_x + n_u:])


def save_trajectory(trajectory, filename, header):
    frame = trajectory.to_frame()
    inputs = trajectory.inputs_frame().drop(columns=["t", "topology"])
    inputs.columns = [f"input:{name}" for name in inputs.columns]
    frame = pd.concat([frame, inputs], axis=1)
    frame["topology"] = trajectory.topology
    header = merge(
        header,
        {
            "state_names": list(trajectory.state_names),
            "input_names": list(trajectory.input_names),
            "disturbance_names": list(trajectory.disturbance_names),
            "diagnostics": trajectory.diagnostics,
        },
    )
    write_parquet(frame, filename, header=header)


def load_trajectory(filename):
    if not Path(filename).exists():
        raise FileNotFoundError(filename)
    frame, header = read_parquet(filename)
    states = header["state_names"]
    inputs = header["input_names"]
    disturbances = header["disturbance_names"]
    return Trajectory(
        t=frame["t"].to_numpy(dtype=float),
        X=frame[states].to_numpy(dtype=float).T,
        U=frame[[f"input:{name}" for name in inputs]].to_numpy(dtype=float).T,
        W=frame[[f"input:{name}" for name in disturbances]].to_numpy(dtype=float).T,
        topology=frame["topology"].to_numpy(dtype=int),
        state_names=tuple(states),
        input_names=tuple(inputs),
        disturbance_names=tuple(disturbances),
        diagnostics=header.get("diagnostics", {}),
    )


def save_covariances(pair, path, header):
    path = Path(path)
    write_matrix(pair.G_c, path / "G_c.parquet", header=merge(header, {"n_d": pair.n_d}))
    write_matrix(pair.G_o11, path / "G_o11.parquet", header=merge(header, {"n_d": pair.n_d}))


def load_covariances(path):
    path = Path(path)
    for name in ("G_c.parquet", "G_o11.parquet"):
        if not (path / name).exists():
            raise FileNotFoundError(path / name)
    G_c, header = read_matrix(path / "G_c.parquet")
    G_o11, _ = read_matrix(path / "G_o11.parquet")
    return CovariancePair(G_c=G_c, G_o11=G_o11, n_d=int(header["n_d"]))


def save_basis(basis, path, header, s_x=None):
    """Basis archive: the untruncated mode blocks plus what is needed to rebuild any order."""
    path = Path(path) / "basis"
    path.mkdir(parents=True, exist_ok=True)
    s_x = np.ones(basis.n) if s_x is None else np.asarray(s_x, dtype=float)
    reference = np.zeros(basis.n) if basis.reference is None else basis.reference
    write_matrix(basis.W_d, path / "W_d.parquet", header=header)
    write_matrix(basis.W_a, path / "W_a.parquet", header=header)
    write_matrix(basis.W_R, path / "W_R.parquet", header=header)
    write_matrix(basis.W_L, path / "W_L.parquet", header=header)
    vectors = pd.DataFrame({"s_x": s_x, "reference": reference})
    write_parquet(vectors, path / "vectors.parquet", header=header)
    for block, values in basis.spectra.items():
        write_matrix(np.asarray(values, dtype=float)[:, None], path / f"spectrum_{block}.parquet", header=header)
    record = merge(
        header,
        {
            "method": basis.method,
            "r_d": basis.r_d,
            "r_a": basis.r_a,
            "n_d": basis.n_d,
            "n_a": basis.n_a,
            "affine": basis.reference is not None,
            "spectra": sorted(basis.spectra),
            "deim": basis.deim is not None,
        },
    )
    if basis.deim is not None:
        write_matrix(basis.deim.modes, path / "deim_modes.parquet", header=header)
        record["deim_indices"] = [int(i) for i in basis.deim.indices]
        if basis.deim.values is not None:
            write_matrix(basis.deim.values[:, None], path / "deim_values.parquet", header=header)
        record["deim_affine"] = basis.deim.offset is not None
        if basis.deim.offset is not None:
            write_matrix(basis.deim.offset[:, None], path / "deim_offset.parquet", header=header)
    write_json(record, path / "basis.json")


def load_basis(path, r_d=None, r_a=None):
    """Basis from its archive, optionally rebuilt at other orders."""
    path = Path(path) / "basis"
    if not (path / "basis.json").exists():
        raise FileNotFoundError(path / "basis.json")
    record = read_json(path / "basis.json")
    W_d, _ = read_matrix(path / "W_d.parquet")
    W_a, _ = read_matrix(path / "W_a.parquet")
    vectors, _ = read_parquet(path / "vectors.parquet")
    spectra = {
        block: read_matrix(path / f"spectrum_{block}.parquet")[0][:, 0] for block in record["spectra"]
    }
    basis = build_basis(
        W_d,
        W_a.reshape(record["n_a"], record["n_a"]),
        record["r_d"] if r_d is None else int(r_d),
        record["r_a"] if r_a is None else int(r_a),
        method=record["method"],
        spectra=spectra,
        tol=1e-8,
    )
    reference = vectors["reference"].to_numpy(dtype=float) if record["affine"] else None
    basis = basis.unscaled(vectors["s_x"].to_numpy(dtype=float), reference=reference)
    if record["deim"]:
        modes, _ = read_matrix(path / "deim_modes.parquet")
        values = None
        if (path / "deim_values.parquet").exists():
            values = read_matrix(path / "deim_values.parquet")[0][:, 0]
        offset = None
        if record.get("deim_affine", False):
            offset = read_matrix(path / "deim_offset.parquet")[0][:, 0]
        basis = basis.with_deim(
            DeimArtifacts(
                modes=modes,
                indices=np.array(record["deim_indices"], dtype=int),
                values=values,
                offset=offset,
            )
        )
    return basis


def save_scaling(scaling, path, header):
    frame = pd.concat(
        [
            pd.DataFrame({"vector": name, "value": values})
            for name, values in (("x", scaling.s_x), ("u", scaling.s_u), ("w", scaling.s_w))
        ],
        ignore_index=True,
    )
    write_parquet(frame, Path(path) / "scaling.parquet", header=header)


def load_scaling(path):
    target = Path(path) / "scaling.parquet"
    if not target.exists():
        return None
    frame, _ = read_parquet(target)
    vectors = {
        name: frame.loc[frame["vector"] == name, "value"].to_numpy(dtype=float)
        for name in ("x", "u", "w")
    }
    return ScalingSet(s_x=vectors["x"], s_u=vectors["u"], s_w=vectors["w"])


def experiment_point(experiment, grid, system):
    """Stored operating point of the experiment, computed and stored on first use."""
    path = experiment.path
    if (path / "operating_point.parquet").exists():
        return load_point(path)
    point = initialize(grid, system)
    save_point(point, path, experiment.header(stage="initialize"))
    return point
