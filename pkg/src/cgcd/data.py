"""Synthetic Gaussian-mixture datasets and their on-disk format.

Class means sit on a sphere of radius ``separation`` (unit isotropic
noise), so ``separation`` is the mean-to-origin distance in units of the
noise scale. Generation is fully determined by the spec's seed.

File layout (little-endian, version 1):

    cgcd-dataset 1
    dim <d>
    classes <c>
    samples <n>
    seed <s>
    end-header
    <n int64 labels> <n*d float64 features>
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import make_rng
from .errors import (
    DatasetHeaderError,
    DatasetTruncatedError,
    DatasetVersionError,
    ValidationError,
)
from .protocol import LabeledSet

MAGIC = "cgcd-dataset"
VERSION = 1
_HEADER_END = "end-header"


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int
    dim: int
    samples_per_class: int
    separation: float
    seed: int

    def __post_init__(self):
        if self.num_classes < 1 or self.dim < 1 or self.samples_per_class < 1:
            raise ValidationError("num_classes, dim and samples_per_class must be >= 1")
        if self.separation < 0:
            raise ValidationError(f"separation must be >= 0, got {self.separation}")


def gen_gaussian_mixture(spec: SyntheticSpec) -> LabeledSet:
    """Sample ``samples_per_class`` points per class around sphere-placed means."""
    rng = make_rng(spec.seed)
    dirs = rng.normal(size=(spec.num_classes, spec.dim))
    dirs /= np.sqrt((dirs ** 2).sum(axis=1))[:, None]
    means = dirs * spec.separation
    xs, ys = [], []
    for c in range(spec.num_classes):
        xs.append(means[c] + rng.normal(size=(spec.samples_per_class, spec.dim)))
        ys.append(np.full(spec.samples_per_class, c, dtype=np.int64))
    return LabeledSet(np.concatenate(xs), np.concatenate(ys), tuple(range(spec.num_classes)))


def nearest_mean_accuracy(data: LabeledSet, means: np.ndarray) -> float:
    """Accuracy of assigning each sample to its nearest class mean."""
    d2 = ((data.x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return float((np.argmin(d2, axis=1) == data.y).mean())


def save_dataset(path, data: LabeledSet, seed: int) -> None:
    if data.n == 0:
        raise ValidationError("refusing to save an empty dataset")
    header = [
        f"{MAGIC} {VERSION}",
        f"dim {data.dim}",
        f"classes {len(data.classes)}",
        f"samples {data.n}",
        f"seed {seed}",
        _HEADER_END,
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.y.astype("<i8").tobytes())
        fh.write(data.x.astype("<f8").tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read(4096)
    fields, _ = _parse_header(blob)
    return fields


def _parse_header(blob: bytes) -> tuple[dict, int]:
    lines = []
    offset = 0
    while True:
        nl = blob.find(b"\n", offset)
        if nl < 0:
            raise DatasetHeaderError("header never terminated")
        line = blob[offset:nl].decode("ascii", errors="replace")
        offset = nl + 1
        if line == _HEADER_END:
            break
        lines.append(line)
        if len(lines) > 16:
            raise DatasetHeaderError("header too long")
    if not lines:
        raise DatasetHeaderError("empty header")
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != MAGIC:
        raise DatasetHeaderError(f"bad magic line: {lines[0]!r}")
    try:
        version = int(magic[1])
    except ValueError as e:
        raise DatasetHeaderError(f"unparseable version: {lines[0]!r}") from e
    if version != VERSION:
        raise DatasetVersionError(f"unsupported dataset version {version}")
    fields = {"version": version}
    for line in lines[1:]:
        parts = line.split()
        if len(parts) != 2 or parts[0] not in ("dim", "classes", "samples", "seed"):
            raise DatasetHeaderError(f"malformed header line: {line!r}")
        try:
            fields[parts[0]] = int(parts[1])
        except ValueError as e:
            raise DatasetHeaderError(f"non-integer header value: {line!r}") from e
    for key in ("dim", "classes", "samples", "seed"):
        if key not in fields:
            raise DatasetHeaderError(f"header is missing {key!r}")
    if fields["dim"] < 1 or fields["classes"] < 1 or fields["samples"] < 1:
        raise DatasetHeaderError("header declares an empty dataset")
    return fields, offset


def load_dataset(path) -> tuple[LabeledSet, dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    fields, offset = _parse_header(blob)
    n, d = fields["samples"], fields["dim"]
    need = 8 * n + 8 * n * d
    payload = blob[offset:]
    if len(payload) < need:
        raise DatasetTruncatedError(f"payload holds {len(payload)} bytes, header declares {need}")
    if len(payload) > need:
        raise DatasetTruncatedError(f"payload has {len(payload) - need} trailing bytes")
    y = np.frombuffer(payload[: 8 * n], dtype="<i8").astype(np.int64)
    x = np.frombuffer(payload[8 * n :], dtype="<f8").reshape(n, d).astype(np.float64)
    present = np.unique(y)
    if present.min() < 0 or present.max() >= fields["classes"]:
        raise DatasetHeaderError("labels fall outside the declared class count")
    return LabeledSet(x, y, tuple(range(fields["classes"]))), fields
