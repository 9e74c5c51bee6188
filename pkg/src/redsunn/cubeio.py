"""Binary hyperspectral cube format, run configuration, and artifact layout.

A cube file is magic ``HSC1``, four little-endian uint32 header words
(T, rows, cols, L), then T*rows*cols*L little-endian float32 payload values
in C order (time-major, then row-major pixels, then bands).  The same
container holds observations (L = bands), abundances (L = P), scaling
coefficients (L = K*P), flattened endmember matrices (L = bands*P), and
change masks (L = 1).

Directories produced by the command-line tools follow a fixed layout; the
constants below are the single source of file names.  All JSON emitted here
validates against the schema files shipped in ``schemas/``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .mixing import SglmmConfig
from .trainer import TrainConfig

MAGIC = b"HSC1"
HEADER = struct.Struct("<4I")

# generate output
OBSERVED_CUBE = "observed.hsc"
TRUTH_ABUNDANCES_CUBE = "truth_abundances.hsc"
TRUTH_SCALINGS_CUBE = "truth_scalings.hsc"
CHANGE_MASK_CUBE = "change_mask.hsc"
MANIFEST_JSON = "manifest.json"

# unmix / baseline output
ABUNDANCES_CUBE = "abundances.hsc"
SCALINGS_CUBE = "scalings.hsc"
ENDMEMBERS_CUBE = "endmembers.hsc"
PARAMS_ARCHIVE = "params.npz"
EPOCH_LOG_JSONL = "epoch_log.jsonl"
SUMMARY_JSON = "summary.json"
METRICS_JSON = "metrics.json"


class CubeFormatError(ValueError):
    """Raised when a file is not a well-formed cube."""


def write_cube(path: str | Path, cube: np.ndarray) -> None:
    """Write a (T, rows, cols, L) array as float32, overwriting ``path``."""
    cube = np.asarray(cube)
    if cube.ndim != 4:
        raise CubeFormatError(f"cube must be 4-D, got shape {cube.shape}")
    if min(cube.shape) < 1:
        raise CubeFormatError(f"cube dimensions must be positive: {cube.shape}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(HEADER.pack(*cube.shape))
        fh.write(np.ascontiguousarray(cube, dtype="<f4").tobytes())


def read_cube(path: str | Path) -> np.ndarray:
    """Read a cube file back as a float32 (T, rows, cols, L) array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CubeFormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 4 + HEADER.size:
        raise CubeFormatError(f"{path}: truncated header")
    shape = HEADER.unpack_from(raw, 4)
    if min(shape) < 1:
        raise CubeFormatError(f"{path}: non-positive dimension in {shape}")
    expect = 4 + HEADER.size + 4 * int(np.prod(shape))
    if len(raw) != expect:
        raise CubeFormatError(
            f"{path}: payload is {len(raw) - 4 - HEADER.size} bytes, "
            f"header implies {expect - 4 - HEADER.size}")
    flat = np.frombuffer(raw, dtype="<f4", offset=4 + HEADER.size)
    return flat.reshape(shape)


@dataclass
class RunConfig:
    """Flat, JSON-serializable unmixing run settings."""

    p: int
    k: int
    sigma_psi: float
    r_sigma_a: int = 2
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0

    def validate(self, bands: int) -> None:
        """Check the same invariants the model and trainer enforce."""
        SglmmConfig(p=self.p, k=self.k, bands=bands, sigma_psi=self.sigma_psi)
        if self.r_sigma_a < 1:
            raise ValueError("r_sigma_a must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        validate_json("run_config", obj)
        return cls(**obj)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def model_config(self, bands: int) -> SglmmConfig:
        return SglmmConfig(p=self.p, k=self.k, bands=bands,
                           sigma_psi=self.sigma_psi)

    def train_config(self, threads: int = 1) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, seed=self.seed,
                           threads=threads, r_sigma_a=self.r_sigma_a)


def _schema(name: str) -> dict:
    ref = resources.files("redsunn") / "schemas" / f"{name}.schema.json"
    return json.loads(ref.read_text(encoding="utf-8"))


def validate_json(name: str, obj: dict) -> None:
    """Validate ``obj`` against the shipped schema ``name``; raise on failure."""
    jsonschema.validate(obj, _schema(name))


def write_json(path: str | Path, name: str, obj: dict) -> None:
    """Validate against schema ``name`` and write with a trailing newline."""
    validate_json(name, obj)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: str | Path, name: str | None = None) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if name is not None:
        validate_json(name, obj)
    return obj


def append_jsonl(path: str | Path, obj: dict) -> None:
    validate_json("epoch_log", obj)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def summaries_match(a: dict, b: dict) -> bool:
    """Determinism comparison: summaries equal apart from wall-clock timing."""
    strip = lambda s: {k: v for k, v in s.items() if k != "timing"}
    return strip(a) == strip(b)


def save_params(path: str | Path, named: list[tuple[str, np.ndarray]]) -> None:
    """Archive (dotted-name, array) pairs; names become npz keys."""
    np.savez(path, **{k: v for k, v in named})


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    with np.load(path) as data:
        return {k: data[k] for k in data.files}
