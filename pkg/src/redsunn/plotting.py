"""PNG abundance maps and CSV spectra export.

Abundance maps follow the three-channel convention: materials 1..3 drive
the red, green, and blue channels, so a pure pixel renders as a saturated
primary color.  With fewer than three materials each one gets its own
grayscale map instead.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

Array = np.ndarray


def _to_u8(channel: Array) -> Array:
    return (np.clip(channel, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def rgb_composite(a_map: Array) -> Array:
    """(rows, cols, p>=3) abundances -> (rows, cols, 3) uint8 image."""
    if a_map.ndim != 3 or a_map.shape[2] < 3:
        raise ValueError(f"need at least three materials, got {a_map.shape}")
    return _to_u8(a_map[:, :, :3])


def save_abundance_maps(abund: Array, out_dir: str | Path,
                        prefix: str = "abundance") -> list[Path]:
    """Write one PNG per instant (per material when p < 3).

    ``abund`` is (T, rows, cols, p); returns the paths written.
    """
    out_dir = Path(out_dir)
    t_len, rows, cols, p = abund.shape
    paths = []
    for t in range(t_len):
        if p >= 3:
            img = Image.fromarray(rgb_composite(abund[t]), mode="RGB")
            path = out_dir / f"{prefix}_t{t:02d}.png"
            img.save(path)
            paths.append(path)
        else:
            for m in range(p):
                img = Image.fromarray(_to_u8(abund[t, :, :, m]), mode="L")
                path = out_dir / f"{prefix}_t{t:02d}_em{m}.png"
                img.save(path)
                paths.append(path)
    return paths


def write_endmember_csv(path: str | Path,
                        samples: list[tuple[int, int, int, Array]]) -> int:
    """Write sampled per-pixel endmember spectra as long-format CSV.

    Each sample is (t, row, col, matrix) with matrix (bands, p); every band
    becomes one row, so the file holds len(samples) * bands data rows.
    Returns the number of data rows written.
    """
    n_rows = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        p = samples[0][3].shape[1] if samples else 0
        writer.writerow(["sample", "t", "row", "col", "band"]
                        + [f"em_{m}" for m in range(p)])
        for s, (t, r, c, matrix) in enumerate(samples):
            for band in range(matrix.shape[0]):
                writer.writerow([s, t, r, c, band]
                                + [repr(float(v)) for v in matrix[band]])
                n_rows += 1
    return n_rows
