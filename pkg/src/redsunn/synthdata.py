"""Synthetic multitemporal scenes with known ground truth.

Two protocols are provided.  The first (``gen_ds1``) is a 50x50, six
instant, 224-band scene with three materials: smooth random-field
abundance maps that stay constant in time except for abrupt localized
changes at the middle instants, and per-pixel endmembers that drift in
time through piecewise-linear spectral scaling curves (drawn in
[0.85, 1.15] per pixel and material at the first instant, then random
increments in [-0.1, 0.1] accumulated per knot).  The second
(``gen_ds2``) is a 50x50, fifteen instant, 198-band scene with four
materials: each pixel at each instant picks its endmember from a small
library of smoothly perturbed variants of the base spectra, and
abundances come from Gaussian random fields drifting smoothly in time
with a few abrupt localized changes.  White Gaussian noise is added at a
target SNR.

Pixels are flattened row-major: pixel (r, c) sits at index r * cols + c.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.ndimage import gaussian_filter

Array = np.ndarray


@dataclass
class GroundTruth:
    """Everything the evaluator needs: data plus the generating quantities.

    scalings are multiplicative: the true endmember matrix of pixel n at
    instant t is m0 * scalings[t, n].
    """

    observed: Array       # (T, N, bands)
    abundances: Array     # (T, N, p)
    scalings: Array       # (T, N, bands, p)
    m0: Array             # (bands, p)
    change_mask: Array    # (T, N) bool; True where abundances jumped at t
    rows: int
    cols: int
    snr_db: float

    @property
    def endmembers(self) -> Array:
        return self.m0 * self.scalings


@dataclass
class Ds1Config:
    t_len: int = 6
    rows: int = 50
    cols: int = 50
    bands: int = 224
    p: int = 3
    snr_db: float = 30.0
    spectra_columns: tuple = (0, 1, 2)   # vegetation, soil, mineral
    field_smoothness: float = 5.0        # random-field correlation length (px)
    mix_temperature: float = 0.4         # softmax sharpness of abundance maps
    knots: int = 10
    first_scale_range: tuple = (0.85, 1.15)
    step_range: tuple = (-0.1, 0.1)
    change_times: tuple = (1, 2, 3, 4)   # zero-based instants with a new region
    change_extent: tuple = (10, 18)      # rectangle side range, pixels
    change_boost: float = 2.5            # how hard a changed region flips material


@dataclass
class Ds2Config:
    t_len: int = 15
    rows: int = 50
    cols: int = 50
    bands: int = 198
    p: int = 4
    snr_db: float = 30.0
    spectra_columns: tuple = (0, 1, 2, 3)
    field_smoothness: float = 5.0
    mix_temperature: float = 0.45
    library_size: int = 8
    library_amplitude: float = 0.1       # +-10% smooth perturbations
    drift_period: float = 30.0           # instants per full abundance drift cycle
    change_times: tuple = (5, 10)        # zero-based instants with a new region
    change_extent: tuple = (8, 16)
    change_boost: float = 2.5


def load_reference_spectra(bands: int, columns, path=None) -> Array:
    """Reference endmember signatures resampled to ``bands`` samples.

    Reads the bundled library by default (224- or 198-band variant chosen
    by proximity); any CSV whose first column is wavelength works.
    """
    if path is None:
        name = "ref_spectra_224.csv" if abs(bands - 224) <= abs(bands - 198) \
            else "ref_spectra_198.csv"
        ref = resources.files("redsunn.data").joinpath(name)
        with resources.as_file(ref) as fp:
            table = np.loadtxt(fp, delimiter=",")
    else:
        table = np.loadtxt(path, delimiter=",")
    spectra = table[:, 1:]
    if max(columns) >= spectra.shape[1]:
        raise ValueError(f"spectra file has {spectra.shape[1]} signatures, "
                         f"requested column {max(columns)}")
    picked = spectra[:, list(columns)]
    if picked.shape[0] != bands:
        grid = np.linspace(0.0, 1.0, picked.shape[0])
        new = np.linspace(0.0, 1.0, bands)
        picked = np.stack([np.interp(new, grid, picked[:, j])
                           for j in range(picked.shape[1])], axis=1)
    return picked


def random_field(rng: np.random.Generator, rows: int, cols: int,
                 smoothness: float) -> Array:
    """Zero-mean, unit-variance smooth field on the pixel grid."""
    f = gaussian_filter(rng.standard_normal((rows, cols)), smoothness,
                        mode="wrap")
    return (f - f.mean()) / max(f.std(), 1e-12)


def _softmax_fields(fields: Array, temperature: float) -> Array:
    """(p, rows, cols) scores -> (rows*cols, p) simplex mixtures."""
    z = temperature * fields.reshape(fields.shape[0], -1).T
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _interp_knots(values: Array, bands: int) -> Array:
    """Linear interpolation of (..., knots) knot values onto (..., bands).

    Knots sit on an even wavelength grid spanning all bands.
    """
    knots = values.shape[-1]
    pos = np.linspace(0, bands - 1, knots)
    grid = np.arange(bands)
    idx = np.clip(np.searchsorted(pos, grid, side="right") - 1, 0, knots - 2)
    w = (grid - pos[idx]) / (pos[idx + 1] - pos[idx])
    return values[..., idx] * (1.0 - w) + values[..., idx + 1] * w


def gen_piecewise_linear_scaling(rng: np.random.Generator, bands: int,
                                 knots: int = 10,
                                 value_range: tuple = (0.85, 1.15)) -> Array:
    """One multiplicative scaling curve over ``bands`` wavelengths.

    Knot values are uniform in ``value_range`` and linearly interpolated
    between evenly spaced knot wavelengths, so the curve stays inside the
    range everywhere.
    """
    return _interp_knots(rng.uniform(*value_range, size=knots), bands)


def add_noise_at_snr(rng: np.random.Generator, clean: Array,
                     snr_db: float) -> Array:
    """White Gaussian noise scaled so 10 log10(P_signal/P_noise) = snr_db."""
    power = float(np.mean(clean ** 2))
    sigma = np.sqrt(power * 10.0 ** (-snr_db / 10.0))
    return clean + sigma * rng.standard_normal(clean.shape)


def _change_region(rng: np.random.Generator, rows: int, cols: int,
                   extent: tuple) -> Array:
    """Random rectangle mask of side lengths drawn within ``extent``.

    Sides are clamped to the grid so small scenes stay valid.
    """
    h = min(int(rng.integers(extent[0], extent[1] + 1)), rows)
    w = min(int(rng.integers(extent[0], extent[1] + 1)), cols)
    r0 = rng.integers(0, rows - h + 1)
    c0 = rng.integers(0, cols - w + 1)
    region = np.zeros((rows, cols), dtype=bool)
    region[r0:r0 + h, c0:c0 + w] = True
    return region


def gen_ds1(cfg: Ds1Config | None = None, rng: np.random.Generator | None = None,
            spectra_path=None) -> GroundTruth:
    cfg = Ds1Config() if cfg is None else cfg
    rng = np.random.default_rng(0) if rng is None else rng
    base = load_reference_spectra(cfg.bands, cfg.spectra_columns, spectra_path)
    n_pix = cfg.rows * cfg.cols

    # abundance fields, constant in time until a region flips material
    fields = np.stack([random_field(rng, cfg.rows, cfg.cols,
                                    cfg.field_smoothness)
                       for _ in range(cfg.p)])
    abundances = np.empty((cfg.t_len, n_pix, cfg.p))
    change_mask = np.zeros((cfg.t_len, n_pix), dtype=bool)
    abundances[:] = _softmax_fields(fields, cfg.mix_temperature)
    for i, t in enumerate(cfg.change_times):
        region = _change_region(rng, cfg.rows, cfg.cols, cfg.change_extent)
        material = i % cfg.p  # cycle so every material gets a changed region
        boosted = fields.copy()
        boosted[material, region] += cfg.change_boost
        flipped = _softmax_fields(boosted, cfg.mix_temperature)
        flat = region.reshape(-1)
        abundances[t:, flat, :] = flipped[flat]
        change_mask[t, flat] = True
        fields = boosted  # later instants keep the change

    # per-pixel, per-material knot values random-walking across instants
    values = rng.uniform(*cfg.first_scale_range,
                         size=(n_pix, cfg.p, cfg.knots))
    scalings = np.empty((cfg.t_len, n_pix, cfg.bands, cfg.p))
    for t in range(cfg.t_len):
        if t > 0:
            values = values + rng.uniform(*cfg.step_range, size=values.shape)
        scalings[t] = _interp_knots(values, cfg.bands).swapaxes(1, 2)

    endmembers = base * scalings
    clean = np.einsum("tnlp,tnp->tnl", endmembers, abundances)
    observed = add_noise_at_snr(rng, clean, cfg.snr_db)
    return GroundTruth(observed, abundances, scalings, base, change_mask,
                       cfg.rows, cfg.cols, cfg.snr_db)


def gen_ds2(cfg: Ds2Config | None = None, rng: np.random.Generator | None = None,
            spectra_path=None) -> GroundTruth:
    cfg = Ds2Config() if cfg is None else cfg
    rng = np.random.default_rng(0) if rng is None else rng
    base = load_reference_spectra(cfg.bands, cfg.spectra_columns, spectra_path)
    n_pix = cfg.rows * cfg.cols

    # per-material libraries of smoothly perturbed variants
    library = np.empty((cfg.p, cfg.library_size, cfg.bands))
    for m in range(cfg.p):
        for v in range(cfg.library_size):
            curve = gaussian_filter(rng.standard_normal(cfg.bands), 20.0)
            curve /= max(np.abs(curve).max(), 1e-12)
            library[m, v] = 1.0 + cfg.library_amplitude * curve

    # abundance fields drifting slowly between two random fields, with a
    # few abrupt localized changes layered on top
    f0 = np.stack([random_field(rng, cfg.rows, cfg.cols, cfg.field_smoothness)
                   for _ in range(cfg.p)])
    f1 = np.stack([random_field(rng, cfg.rows, cfg.cols, cfg.field_smoothness)
                   for _ in range(cfg.p)])
    offset = np.zeros_like(f0)
    change_mask = np.zeros((cfg.t_len, n_pix), dtype=bool)
    abundances = np.empty((cfg.t_len, n_pix, cfg.p))
    scalings = np.empty((cfg.t_len, n_pix, cfg.bands, cfg.p))
    for t in range(cfg.t_len):
        if t in cfg.change_times:
            region = _change_region(rng, cfg.rows, cfg.cols, cfg.change_extent)
            material = rng.integers(0, cfg.p)
            offset[material, region] += cfg.change_boost
            change_mask[t, region.reshape(-1)] = True
        tau = 0.5 * (1 - np.cos(2 * np.pi * t / cfg.drift_period))
        abundances[t] = _softmax_fields((1 - tau) * f0 + tau * f1 + offset,
                                        cfg.mix_temperature)
        picks = rng.integers(0, cfg.library_size, size=(n_pix, cfg.p))
        for m in range(cfg.p):
            scalings[t, :, :, m] = library[m, picks[:, m]]

    endmembers = base * scalings
    clean = np.einsum("tnlp,tnp->tnl", endmembers, abundances)
    observed = add_noise_at_snr(rng, clean, cfg.snr_db)
    return GroundTruth(observed, abundances, scalings, base, change_mask,
                       cfg.rows, cfg.cols, cfg.snr_db)
