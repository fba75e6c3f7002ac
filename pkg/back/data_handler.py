"""
Data Handler - Reads and writes embedding bundles (binary or CSV) and their manifests
"""
import json
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from back.datamodel import LabeledEmbeddingSet
from back.exceptions import DataLoadError, DataValidationError, InvalidParameterError
from back.logger import logger

MATRIX_MAGIC = b"CALB"
LABELS_MAGIC = b"CALL"
FORMAT_VERSION = 1

# magic, u32 version, u64 rows, u64 cols
_MATRIX_HEADER = struct.Struct("<4sIQQ")
# magic, u32 version, u64 length
_LABELS_HEADER = struct.Struct("<4sIQ")

FORMATS = ("binary", "csv")
PathLike = Union[str, Path]


def _read_header(raw: bytes, header: struct.Struct, magic: bytes, path: Path) -> tuple:
    if len(raw) < header.size:
        raise DataLoadError(f"Truncated header in {path}: {len(raw)} bytes")
    fields = header.unpack_from(raw)
    if fields[0] != magic:
        raise DataLoadError(f"Bad magic in {path}: expected {magic!r}, got {fields[0]!r}")
    if fields[1] != FORMAT_VERSION:
        raise DataLoadError(f"Unsupported format version {fields[1]} in {path}")
    return fields[2:]


def write_matrix(path: PathLike, matrix: np.ndarray) -> Path:
    """Write a 2-D matrix as CALB: header then row-major little-endian f32 payload"""
    path = Path(path)
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise InvalidParameterError(f"Expected a 2-D matrix, got shape {matrix.shape}")
    rows, cols = matrix.shape
    with open(path, "wb") as fd:
        fd.write(_MATRIX_HEADER.pack(MATRIX_MAGIC, FORMAT_VERSION, rows, cols))
        fd.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())
    return path


def read_matrix(path: PathLike) -> np.ndarray:
    """Read a CALB matrix file into a float32 array"""
    path = Path(path)
    raw = path.read_bytes()
    rows, cols = _read_header(raw, _MATRIX_HEADER, MATRIX_MAGIC, path)
    expected = rows * cols * 4
    payload = raw[_MATRIX_HEADER.size:]
    if len(payload) != expected:
        raise DataLoadError(
            f"Payload of {path} holds {len(payload)} bytes, header declares {rows}x{cols} ({expected} bytes)"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float32)


def write_labels(path: PathLike, labels: np.ndarray) -> Path:
    """Write labels as CALL: header then little-endian u32 payload"""
    path = Path(path)
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise InvalidParameterError(f"Expected 1-D labels, got shape {labels.shape}")
    with open(path, "wb") as fd:
        fd.write(_LABELS_HEADER.pack(LABELS_MAGIC, FORMAT_VERSION, labels.shape[0]))
        fd.write(np.ascontiguousarray(labels, dtype="<u4").tobytes())
    return path


def read_labels(path: PathLike) -> np.ndarray:
    """Read a CALL labels file into an int64 array"""
    path = Path(path)
    raw = path.read_bytes()
    (length,) = _read_header(raw, _LABELS_HEADER, LABELS_MAGIC, path)
    payload = raw[_LABELS_HEADER.size:]
    if len(payload) != length * 4:
        raise DataLoadError(
            f"Payload of {path} holds {len(payload)} bytes, header declares {length} labels"
        )
    return np.frombuffer(payload, dtype="<u4").astype(np.int64)


def _read_csv_matrix(path: Path) -> np.ndarray:
    frame = pd.read_csv(path, header=None, dtype=np.float64)
    return frame.to_numpy()


def _read_csv_labels(path: Path) -> np.ndarray:
    frame = pd.read_csv(path, header=None)
    if frame.shape[1] != 1:
        raise DataLoadError(f"Labels file {path} must hold one integer per line, found {frame.shape[1]} columns")
    return frame.iloc[:, 0].to_numpy()


def _infer_format(manifest: dict) -> str:
    if "format" in manifest:
        return manifest["format"]
    suffix = Path(manifest["features"]).suffix.lower()
    return "csv" if suffix == ".csv" else "binary"


def load_set(path: PathLike, fmt: Optional[str] = None) -> LabeledEmbeddingSet:
    """
    Load one split from its manifest

    Args:
        path: Path to the JSON manifest (keys features, logits, labels, optional class_counts)
        fmt: 'binary' or 'csv'; inferred from the manifest when omitted

    Returns:
        LabeledEmbeddingSet: validated split

    Raises:
        DataLoadError: If a file is missing or malformed
        DataValidationError: If the arrays violate a container invariant
    """
    path = Path(path)
    try:
        logger.info(f"Loading split from manifest: {path}")
        manifest = json.loads(path.read_text())
        missing = [key for key in ("features", "logits", "labels") if key not in manifest]
        if missing:
            raise DataLoadError(f"Manifest {path} lacks keys {missing}")

        fmt = fmt or _infer_format(manifest)
        if fmt not in FORMATS:
            raise DataLoadError(f"Unknown bundle format {fmt!r}; expected one of {FORMATS}")

        base = path.parent
        features_path = base / manifest["features"]
        logits_path = base / manifest["logits"]
        labels_path = base / manifest["labels"]
        if fmt == "binary":
            features = read_matrix(features_path)
            logits = read_matrix(logits_path)
            labels = read_labels(labels_path)
        else:
            features = _read_csv_matrix(features_path)
            logits = _read_csv_matrix(logits_path)
            labels = _read_csv_labels(labels_path)

        data = LabeledEmbeddingSet.build(features, logits, labels, manifest.get("class_counts"))
        logger.info(
            f"Loaded {data.num_samples} rows, {data.feature_dim} features, {data.num_classes} classes from {path}"
        )
        return data
    except DataValidationError as e:
        error_msg = f"{e} (manifest {path})"
        logger.error(error_msg)
        raise DataValidationError(error_msg) from e
    except DataLoadError as e:
        logger.error(str(e))
        raise
    except FileNotFoundError as e:
        error_msg = f"File not found: {e.filename}"
        logger.error(error_msg)
        raise DataLoadError(error_msg)
    except json.JSONDecodeError as e:
        error_msg = f"Manifest {path} is not valid JSON: {e}"
        logger.error(error_msg)
        raise DataLoadError(error_msg)
    except pd.errors.EmptyDataError:
        error_msg = f"Empty CSV file referenced by {path}"
        logger.error(error_msg)
        raise DataLoadError(error_msg)
    except Exception as e:
        error_msg = f"Error loading split {path}: {str(e)}"
        logger.error(error_msg, exc_info=True)
        raise DataLoadError(error_msg)


def save_set(data: LabeledEmbeddingSet, directory: PathLike, split: str, fmt: str = "binary") -> Path:
    """
    Write one split and its manifest

    Args:
        data: split to write
        directory: output directory
        split: file-name prefix (train, val, test)
        fmt: 'binary' or 'csv'

    Returns:
        Path of the written manifest
    """
    if fmt not in FORMATS:
        raise InvalidParameterError(f"Unknown bundle format {fmt!r}; expected one of {FORMATS}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    if fmt == "binary":
        names = {key: f"{split}_{key}.bin" for key in ("features", "logits", "labels")}
        write_matrix(directory / names["features"], data.features)
        write_matrix(directory / names["logits"], data.logits)
        write_labels(directory / names["labels"], data.labels)
    else:
        names = {key: f"{split}_{key}.csv" for key in ("features", "logits", "labels")}
        # %.9g round-trips float32
        pd.DataFrame(data.features).to_csv(directory / names["features"], header=False, index=False, float_format="%.9g")
        pd.DataFrame(data.logits).to_csv(directory / names["logits"], header=False, index=False, float_format="%.9g")
        pd.Series(data.labels).to_csv(directory / names["labels"], header=False, index=False)

    manifest = dict(names, format=fmt, class_counts=data.class_counts.tolist())
    manifest_path = directory / f"{split}.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    logger.info(f"Wrote {split} split ({data.num_samples} rows, {fmt}) to {manifest_path}")
    return manifest_path
