import gzip

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.parquet as pq
import rapidjson as json
import toml

HEADER_KEY = b"gridmor"


def _opener(filename):
    return gzip.open if str(filename).endswith("gz") else open


def read_json(filename):
    with _opener(filename)(str(filename), "rt") as f:
        return json.load(f)


def read_toml(filename):
    with _opener(filename)(str(filename), "rt") as f:
        return toml.load(f)


def write_json(obj, filename):
    with _opener(filename)(str(filename), "wt") as f:
        json.dump(obj, f, indent=2, sort_keys=True, number_mode=json.NM_NATIVE)


def write_parquet(obj, filename, header=None):
    """Writes a DataFrame to parquet, storing `header` as schema metadata."""
    table = pa.Table.from_pandas(obj, preserve_index=False)
    if header is not None:
        metadata = dict(table.schema.metadata or {})
        metadata[HEADER_KEY] = json.dumps(header, sort_keys=True).encode("utf-8")
        table = table.replace_schema_metadata(metadata)
    pq.write_table(table, filename, use_dictionary=False)


def read_parquet(filename):
    """Returns (DataFrame, header dict)."""
    table = pq.read_table(filename)
    metadata = table.schema.metadata or {}
    header = metadata.get(HEADER_KEY)
    header = json.loads(header.decode("utf-8")) if header is not None else {}
    return table.to_pandas(), header


def write_matrix(matrix, filename, header=None, columns=None):
    """Stores a 2-D array column by column."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.size == 0:
        matrix = matrix.reshape(matrix.shape[0], 0)
    if columns is None:
        columns = [f"c{j}" for j in range(matrix.shape[1])]
    frame = pd.DataFrame(
        {name: matrix[:, j] for j, name in enumerate(columns)},
        index=pd.RangeIndex(matrix.shape[0]),
    )
    header = dict(header or {})
    header["shape"] = list(matrix.shape)
    write_parquet(frame, filename, header=header)


def read_matrix(filename):
    frame, header = read_parquet(filename)
    shape = header.get("shape", list(frame.shape))
    return frame.to_numpy(dtype=float).reshape(shape), header


def write_csv(frame, filename, header=None):
    """CSV mirror of a DataFrame; header fields go in leading `#` lines."""
    with open(filename, "wt") as f:
        for key, value in sorted((header or {}).items()):
            f.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
        frame.to_csv(f, index=False, float_format="%.12g")


def read_csv(filename):
    header = {}
    with open(filename, "rt") as f:
        for line in f:
            if not line.startswith("#"):
                break
            key, value = line[1:].split(":", 1)
            header[key.strip()] = json.loads(value.strip())
    return pd.read_csv(filename, comment="#"), header


def write_list(items, filename, header=None):
    with open(filename, "wt") as f:
        for key, value in sorted((header or {}).items()):
            f.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
        f.write("\n".join(str(item) for item in items))
        f.write("\n")
