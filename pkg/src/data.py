import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInput, ParseError
from .polar_core import as_dense

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InstanceSpec:
    """
    Recipe for a synthetic instance: low-rank signal, Gaussian noise, heavy-tailed outliers.

    Args:
        d: Sample dimension
        n: Number of samples
        outlier_fraction: Share of samples replaced by outliers, in [0, 1];
            1 turns every sample into an outlier
        outlier_scale: Multiplier on the outlier entries (> 1)
        noise_std: Standard deviation of the additive noise
        latent_rank: Rank of the clean signal, 1 <= r <= d
        seed: Seed for numpy's default generator
        centered: Subtract the mean sample afterwards
    """

    d: int
    n: int
    outlier_fraction: float = 0.0
    outlier_scale: float = 10.0
    noise_std: float = 0.0
    latent_rank: int = 1
    seed: int = 0
    centered: bool = False

    def __post_init__(self):
        if self.d < 1 or self.n < 1:
            raise InvalidInput(f"d and n must be positive, got d={self.d}, n={self.n}")
        if not 0 <= self.outlier_fraction <= 1:
            raise InvalidInput(f"outlier_fraction must lie in [0, 1], got {self.outlier_fraction}")
        if not self.outlier_scale > 1:
            raise InvalidInput(f"outlier_scale must exceed 1, got {self.outlier_scale}")
        if self.noise_std < 0:
            raise InvalidInput(f"noise_std must be nonnegative, got {self.noise_std}")
        if not 1 <= self.latent_rank <= self.d:
            raise InvalidInput(f"latent_rank must lie in [1, d], got {self.latent_rank}")


def generate(spec: InstanceSpec) -> np.ndarray:
    """
    Draw a d x n instance following ``spec``.

    The clean part is A Z with Gaussian A (d x r) and Z (r x n). The first
    floor(fraction * n) positions of a seeded permutation become outliers
    whose entries are scaled ratios of two Gaussians. Identical specs give
    bit-identical matrices.

    Returns:
        d x n float64 matrix, samples as columns
    """
    rng = np.random.default_rng(spec.seed)
    a = rng.standard_normal((spec.d, spec.latent_rank))
    z = rng.standard_normal((spec.latent_rank, spec.n))
    x = a @ z
    if spec.noise_std > 0:
        x = x + spec.noise_std * rng.standard_normal((spec.d, spec.n))

    m = math.floor(spec.outlier_fraction * spec.n)
    if m:
        idx = np.sort(rng.permutation(spec.n)[:m])
        ratio = rng.standard_normal((spec.d, m)) / rng.standard_normal((spec.d, m))
        x[:, idx] = spec.outlier_scale * ratio
        logger.debug("Replaced %d samples with outliers: %s", m, idx.tolist())

    if spec.centered:
        x = x - x.mean(axis=1, keepdims=True)
    return np.ascontiguousarray(x)


def load_csv(path: str, header: bool = False) -> np.ndarray:
    """
    Read samples from a CSV file, one sample per row.

    Args:
        path: File to read
        header: Skip the first line

    Returns:
        d x n float64 matrix (samples become columns)

    Raises:
        FileNotFoundError: If the file does not exist
        ParseError: On a non-numeric or non-finite field, ragged rows or an empty file
    """
    csv_path = Path(path)
    if not csv_path.exists():
        raise FileNotFoundError(f"Instance file not found: {path}")

    rows = []
    width = None
    with open(csv_path, newline="") as f:
        for line_no, fields in enumerate(csv.reader(f), start=1):
            if header and line_no == 1:
                continue
            if not fields or all(not field.strip() for field in fields):
                continue
            values = []
            for col_no, field in enumerate(fields, start=1):
                try:
                    value = float(field)
                except ValueError:
                    raise ParseError(f"not a number: {field.strip()!r}", row=line_no, column=col_no)
                if not math.isfinite(value):
                    raise ParseError(f"non-finite value {field.strip()!r}", row=line_no, column=col_no)
                values.append(value)
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise ParseError(f"expected {width} fields, found {len(values)}", row=line_no)
            rows.append(values)

    if not rows:
        raise ParseError(f"no samples in {path}")
    return np.ascontiguousarray(np.array(rows, dtype=np.float64).T)


def save_csv(x, path: str) -> None:
    """Write X with one sample per row, using shortest round-trip float formatting."""
    x = as_dense(x, "X")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        for sample in x.T:
            writer.writerow([repr(float(v)) for v in sample])
