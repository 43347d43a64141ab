# clerk.py
# file chores: guiding-path text files, the ESDF binary, trajectory CSVs
# and JSON manifests
import csv
import json
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CorruptArtifactError, MissingArtifactError
from .topo_planner import GuidingPath
from .world import Esdf

ESDF_MAGIC = "QRESDF"
PAIR_FILE = "pair_{:02d}.txt"


def file_exists(filename):
    filename = Path(filename)
    return filename.exists()


def file_to_string(path):
    return Path(path).read_text(encoding="utf-8")


def make_dir(path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def require(path, what):
    if not file_exists(path):
        raise MissingArtifactError(f"{what} not found at {path}")
    return Path(path)


def get_all_files_of_type(dir, filetype):
    return sorted(str(f) for f in Path(dir).glob("*." + filetype))


# guiding paths: one "x y z" line per vertex, blank line between paths


def _coord(value):
    return format(float(value), ".17g")


def write_paths(path, paths):
    blocks = []
    for guiding_path in paths:
        points = getattr(guiding_path, "points", guiding_path)
        blocks.append("\n".join(" ".join(_coord(v) for v in p) for p in points))
    Path(path).write_text("\n\n".join(blocks) + "\n", encoding="utf-8")


def read_paths(path):
    text = file_to_string(require(path, "path file"))
    paths = []
    for block in text.strip().split("\n\n"):
        rows = [line.split() for line in block.strip().splitlines() if line.strip()]
        if not rows:
            continue
        try:
            points = np.array(rows, dtype=float)
        except ValueError as exc:
            raise CorruptArtifactError(f"{path}: unreadable vertex line") from exc
        if points.ndim != 2 or points.shape[1] != 3:
            raise CorruptArtifactError(f"{path}: vertices need three coordinates")
        paths.append(points)
    return paths


def write_plan(out_dir, plan):
    folder = make_dir(Path(out_dir) / "paths")
    files = []
    for i, paths in enumerate(plan.pair_paths):
        target = folder / PAIR_FILE.format(i)
        write_paths(target, paths)
        files.append(str(target))
    summary = {
        "pairs": [
            {
                "pair": [i, i + 1],
                "n_paths": len(paths),
                "lengths": [p.length for p in paths],
            }
            for i, paths in enumerate(plan.pair_paths)
        ],
        "combinations": [
            {"choice": list(c.choice), "length": c.path.length}
            for c in plan.combinations
        ],
    }
    summary_path = Path(out_dir) / "plan_summary.json"
    write_json(summary_path, summary)
    return files + [str(summary_path)]


def read_plan(plan_dir):
    """Per-pair GuidingPath lists from a plan output directory."""
    folder = require(Path(plan_dir) / "paths", "planned paths")
    files = get_all_files_of_type(folder, "txt")
    if not files:
        raise MissingArtifactError(f"no pair files in {folder}")
    return [[GuidingPath(points) for points in read_paths(f)] for f in files]


# ESDF binary: text header, then little-endian float32 values, x fastest


def write_esdf(path, esdf):
    header = "\n".join(
        [
            ESDF_MAGIC,
            "origin " + " ".join(_coord(v) for v in esdf.origin),
            "resolution " + _coord(esdf.resolution),
            "dims " + " ".join(str(n) for n in esdf.dims),
            "end_header",
        ]
    )
    payload = np.asarray(esdf.values, dtype="<f4").tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n" + payload)


def read_esdf(path):
    blob = require(path, "ESDF file").read_bytes()
    marker = b"end_header\n"
    end = blob.find(marker)
    lines = blob[:max(end, 0)].decode("ascii", errors="replace").splitlines()
    if end < 0 or not lines or lines[0] != ESDF_MAGIC:
        raise CorruptArtifactError(f"{path}: not an ESDF file")
    fields = {line.split()[0]: line.split()[1:] for line in lines[1:] if line.strip()}
    try:
        dims = tuple(int(n) for n in fields["dims"])
        origin = np.array([float(v) for v in fields["origin"]])
        resolution = float(fields["resolution"][0])
    except (KeyError, IndexError, ValueError) as exc:
        raise CorruptArtifactError(f"{path}: incomplete ESDF header") from exc
    values = np.frombuffer(blob[end + len(marker):], dtype="<f4")
    if values.size != int(np.prod(dims)):
        raise CorruptArtifactError(f"{path}: expected {np.prod(dims)} values")
    return Esdf(
        origin=origin,
        resolution=resolution,
        values=values.reshape(dims, order="F").astype(np.float32),
    )


# CSV and JSON


def write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return _coord(value)
    return value


def read_csv(path):
    with open(require(path, "CSV file"), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        columns = next(reader)
        rows = [row for row in reader]
    return columns, rows


def write_json(path, data):
    Path(path).write_text(
        json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_json(path):
    return json.loads(file_to_string(require(path, "JSON file")))


def write_manifest(out_dir, command, config, seed, outputs):
    """Config snapshot and output list, written before the run starts."""
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "outputs": [str(o) for o in outputs],
    }
    target = Path(make_dir(out_dir)) / "manifest.json"
    write_json(target, manifest)
    return target
