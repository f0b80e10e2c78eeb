"""Benchmark problem generators, metrics and sparse-coding classification.

Five problem families, all reproducible bit-exactly from their arguments
and a seed:

- ``deconv1d``     blurred, subsampled piecewise-constant signal; the
                   dictionary pairs the running-sum (increment) frame
                   with the orthonormal cosine frame.
- ``denoise2d``    blocky image under white noise; vertical vs
                   horizontal increment frames.
- ``restore2d``    blurred scene with point sources, a flat disc and a
                   smooth blob; identity, both increment frames and the
                   2-D cosine frame.
- ``natural2d``    mixed blocky/textured 8-bit image for compression
                   studies (same dictionary as denoise2d).
- ``dictlearn``    annotated atom dictionary; a test digit is sparsely
                   coded and labeled by majority vote.

The generative signals and images are bundled substitutes with the
structural features that matter (jump counts, boundary lengths, feature
types), not pixel-level reproductions of any particular dataset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

from . import linops
from .linops import CompositeDictionary, LinearMap, compose, concat_horizontal
from .solver import whiten

#: Whitening floor (as a fraction of the peak clean datum) used when a
#: problem is generated without noise; keeps the whitened model defined.
NOISELESS_SIGMA_FRACTION = 1e-3


@dataclass(frozen=True)
class Problem:
    """A generated experiment, whitened and ready for the solver."""

    name: str
    forward_dict: LinearMap  # whitened forward times dictionary
    b: np.ndarray  # whitened data
    dictionary: CompositeDictionary
    forward: LinearMap  # unwhitened forward map
    noise_std: float
    truth: np.ndarray  # clean signal/image (stacked for 2-D)
    clean_data: np.ndarray  # noiseless, unwhitened data
    data: np.ndarray  # noisy, unwhitened data
    seed: int
    grid: np.ndarray | None = None  # 1-D inversion grid
    image_shape: tuple[int, int] | None = None
    labels: np.ndarray | None = None  # dictlearn annotations


def _assemble(name, forward, dictionary, clean_data, noise, sigma, truth, seed, **kw) -> Problem:
    data = clean_data + noise
    # Whiten against the realized noise norm (classical discrepancy
    # calibration: the noise level ||eps|| is treated as known), so the
    # sqrt(m) early-stopping level never forces noise overfitting on
    # draws whose norm lands above its expectation.
    norm = float(np.linalg.norm(noise))
    if norm > 0.0:
        sigma = norm / np.sqrt(len(noise))
    fw_white, b_white = whiten(forward, data, sigma)
    return Problem(
        name=name,
        forward_dict=compose(fw_white, concat_horizontal(dictionary)),
        b=b_white,
        dictionary=dictionary,
        forward=forward,
        noise_std=sigma,
        truth=truth,
        clean_data=clean_data,
        data=data,
        seed=seed,
        **kw,
    )


def _noise_std(noise_frac: float, clean_peak: float) -> float:
    if noise_frac < 0 or noise_frac >= 1:
        raise ValueError(f"noise fraction must be in [0, 1), got {noise_frac}")
    # All-zero scenes still need a whitening scale; unit peak stands in.
    if clean_peak <= 0:
        clean_peak = 1.0
    return max(noise_frac, NOISELESS_SIGMA_FRACTION) * clean_peak


# ---------------------------------------------------------------------------
# bundled generative models


#: Jump locations and sizes of the 1-D piecewise-constant profile: a
#: monotone staircase (zero at t = 0, four positive jumps).  Monotone
#: steps do not cancel each other, which makes the increment frame the
#: unambiguous sparsest representation.
SIGNAL_JUMPS = ((0.15, 0.5), (0.4, 0.3), (0.6, 0.45), (0.8, 0.35))


def piecewise_signal(grid: np.ndarray) -> np.ndarray:
    """The bundled piecewise-constant profile sampled on a grid in [0, 1]."""
    x = np.zeros(len(grid))
    for pos, size in SIGNAL_JUMPS:
        x += size * (np.asarray(grid) >= pos)
    return x


def blocky_image(n: int) -> np.ndarray:
    """Zero background with one off-center tall rectangle of value one.

    The rectangle is taller than wide, so its horizontal boundary is the
    shorter one and the vertical-increment representation is the sparser
    of the two increment frames.
    """
    img = np.zeros((n, n))
    r0, r1 = round(0.25 * n), round(0.75 * n)
    c0, c1 = round(0.45 * n), round(0.65 * n)
    img[r0:r1, c0:c1] = 1.0
    return img


def scene_image(n: int, stars=True, disc=True, blob=True) -> np.ndarray:
    """Point sources, a flat disc and a smooth blob on a zero background."""
    img = np.zeros((n, n))
    ii, jj = np.meshgrid(np.arange(n) / n, np.arange(n) / n, indexing="ij")
    if stars:
        for fi, fj in ((0.15, 0.2), (0.22, 0.55), (0.12, 0.82), (0.45, 0.12), (0.8, 0.85)):
            img[round(fi * (n - 1)), round(fj * (n - 1))] = 0.9
    if disc:
        mask = (ii - 0.32) ** 2 + (jj - 0.68) ** 2 <= 0.12**2
        img[mask] = np.maximum(img[mask], 0.6)
    if blob:
        bump = 0.5 * np.exp(-(((ii - 0.68) ** 2 + (jj - 0.32) ** 2) / (2 * 0.24**2)))
        img = np.maximum(img, bump)
    return img


def mixed_texture_image(n: int) -> np.ndarray:
    """Blocky rectangles plus an oscillatory texture patch, quantized to
    8 bits so the smallest nonzero increment is one gray level."""
    img = np.zeros((n, n))
    img[round(0.1 * n) : round(0.45 * n), round(0.15 * n) : round(0.4 * n)] = 0.7
    img[round(0.55 * n) : round(0.85 * n), round(0.1 * n) : round(0.35 * n)] = 0.35
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    patch = (slice(round(0.15 * n), round(0.8 * n)), slice(round(0.5 * n), round(0.92 * n)))
    tex = 0.5 + 0.22 * np.sin(2 * np.pi * 4.3 * ii / n) * np.cos(2 * np.pi * 3.1 * jj / n)
    img[patch] = tex[patch]
    return np.rint(img * 255.0) / 255.0


def stack(image: np.ndarray) -> np.ndarray:
    """Columnwise stacking of an image into a vector."""
    return np.asarray(image).reshape(-1, order="F")


def unstack(v: np.ndarray, n: int) -> np.ndarray:
    return np.asarray(v).reshape(n, n, order="F")


# ---------------------------------------------------------------------------
# dictionaries


def dictionary_1d(n: int) -> CompositeDictionary:
    """[running-sum frame, cosine frame] on n samples."""
    return CompositeDictionary(
        [("increments", linops.cumsum(n)), ("cosine", linops.dct_synthesis(n))]
    )


def dictionary_2d(n: int) -> CompositeDictionary:
    """[vertical increments, horizontal increments] on n-by-n images."""
    return CompositeDictionary(
        [
            ("vertical", linops.kron2d(linops.cumsum(n), "left")),
            ("horizontal", linops.kron2d(linops.cumsum(n), "right")),
        ]
    )


def dictionary_restore(n: int) -> CompositeDictionary:
    """[identity, vertical/horizontal increments, 2-D cosine] frames."""
    return CompositeDictionary(
        [
            ("point", linops.identity(n * n)),
            ("vertical", linops.kron2d(linops.cumsum(n), "left")),
            ("horizontal", linops.kron2d(linops.cumsum(n), "right")),
            ("cosine", linops.dct2_synthesis(n)),
        ]
    )


def blur_2d(n: int, width: float) -> LinearMap:
    """Separable Gaussian blur on columnwise-stacked n-by-n images."""
    grid = (np.arange(n) + 0.5) / n
    b1 = linops.gaussian_blur(width, grid, grid)
    return compose(linops.kron2d(b1, "right"), linops.kron2d(b1, "left"))


# ---------------------------------------------------------------------------
# problem builders


def make_deconv1d(
    n: int = 500,
    m: int = 46,
    w: float = 0.02,
    noise_frac: float = 0.02,
    seed: int = 0,
    n_dense: int = 1253,
) -> Problem:
    """Blurred and subsampled piecewise-constant signal.

    Data are generated on a finer grid than the inversion grid so the
    discretized forward model is not inverted against itself.
    """
    if not n_dense > n > m:
        raise ValueError(f"need n_dense > n > m, got {n_dense}, {n}, {m}")
    rng = np.random.default_rng(seed)
    obs = np.linspace(0.0, 1.0, m)
    grid_dense = (np.arange(n_dense) + 0.5) / n_dense
    clean_data = linops.gaussian_blur(w, grid_dense, obs).apply(piecewise_signal(grid_dense))

    grid = (np.arange(n) + 0.5) / n
    truth = piecewise_signal(grid)
    sigma = _noise_std(noise_frac, float(np.max(np.abs(truth))))
    noise = sigma * rng.standard_normal(m) if noise_frac > 0 else np.zeros(m)
    return _assemble(
        "deconv1d",
        linops.gaussian_blur(w, grid, obs),
        dictionary_1d(n),
        clean_data,
        noise,
        sigma,
        truth,
        seed,
        grid=grid,
    )


def make_denoise2d(n: int = 200, noise_frac: float = 0.1, seed: int = 0) -> Problem:
    """Blocky image under white noise; identity forward map."""
    rng = np.random.default_rng(seed)
    truth = stack(blocky_image(n))
    sigma = _noise_std(noise_frac, float(truth.max()))
    noise = sigma * rng.standard_normal(n * n) if noise_frac > 0 else np.zeros(n * n)
    return _assemble(
        "denoise2d",
        linops.identity(n * n),
        dictionary_2d(n),
        truth.copy(),
        noise,
        sigma,
        truth,
        seed,
        image_shape=(n, n),
    )


def make_restore2d(
    n: int = 100,
    w: float = 0.006,
    noise_frac: float = 0.01,
    seed: int = 0,
    stars: bool = True,
    disc: bool = True,
    blob: bool = True,
) -> Problem:
    """Blurred scene with pointwise, blocky and smooth features."""
    rng = np.random.default_rng(seed)
    truth = stack(scene_image(n, stars=stars, disc=disc, blob=blob))
    forward = blur_2d(n, w)
    clean_data = forward.apply(truth)
    sigma = _noise_std(noise_frac, float(np.max(np.abs(clean_data))))
    noise = sigma * rng.standard_normal(n * n) if noise_frac > 0 else np.zeros(n * n)
    return _assemble(
        "restore2d",
        forward,
        dictionary_restore(n),
        clean_data,
        noise,
        sigma,
        truth,
        seed,
        image_shape=(n, n),
    )


def make_natural2d(n: int = 128, noise_frac: float = 0.05, seed: int = 0) -> Problem:
    """Mixed blocky/textured quantized image for compression studies."""
    rng = np.random.default_rng(seed)
    truth = stack(mixed_texture_image(n))
    sigma = _noise_std(noise_frac, float(truth.max()))
    noise = sigma * rng.standard_normal(n * n) if noise_frac > 0 else np.zeros(n * n)
    return _assemble(
        "natural2d",
        linops.identity(n * n),
        dictionary_2d(n),
        truth.copy(),
        noise,
        sigma,
        truth,
        seed,
        image_shape=(n, n),
    )


def make_dictlearn(atoms, labels, test_digit, sigma: float) -> Problem:
    """Sparse coding of one test digit against an annotated dictionary.

    The forward map is the identity; sigma expresses how much mismatch
    between the digit and its dictionary representation is tolerated.
    """
    atoms = np.asarray(atoms, dtype=float)
    labels = np.asarray(labels)
    test_digit = np.asarray(test_digit, dtype=float)
    if atoms.ndim != 2:
        raise ValueError("atoms must be a 2-D matrix with atoms as columns")
    if labels.shape != (atoms.shape[1],):
        raise ValueError(
            f"label/atom count mismatch: {labels.shape[0] if labels.ndim else 0} labels "
            f"for {atoms.shape[1]} atoms"
        )
    if test_digit.shape != (atoms.shape[0],):
        raise ValueError("test digit length must match atom length")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    dictionary = CompositeDictionary([("atoms", linops.dense(atoms))])
    return _assemble(
        "dictlearn",
        linops.identity(atoms.shape[0]),
        dictionary,
        test_digit.copy(),
        np.zeros(atoms.shape[0]),
        float(sigma),
        test_digit,
        seed=0,
        labels=labels.astype(np.int64),
    )


# ---------------------------------------------------------------------------
# synthetic digit-like data (no external downloads needed)


def _smooth_field(rng: np.random.Generator, side: int, modes: int) -> np.ndarray:
    coeffs = np.zeros((side, side))
    coeffs[:modes, :modes] = rng.standard_normal((modes, modes))
    field = scipy.fft.idctn(coeffs, norm="ortho")
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo)


def synthetic_digit_dictionary(
    n_classes: int = 10,
    atoms_per_class: int = 20,
    side: int = 16,
    seed: int = 0,
    wobble: float = 0.18,
) -> tuple[np.ndarray, np.ndarray]:
    """Random smooth class prototypes plus within-class perturbations.

    Returns (atoms, labels) with atoms as columns of a (side^2, N)
    matrix, entries in [0, 1].
    """
    rng = np.random.default_rng(seed)
    protos = [_smooth_field(rng, side, modes=4) for _ in range(n_classes)]
    atoms, labels = [], []
    for c, proto in enumerate(protos):
        for _ in range(atoms_per_class):
            bump = _smooth_field(rng, side, modes=5)
            atom = np.clip(proto + wobble * (bump - 0.5), 0.0, 1.0)
            atoms.append(atom.reshape(-1, order="F"))
            labels.append(c)
    return np.array(atoms).T, np.array(labels, dtype=np.int64)


def synthetic_test_digits(
    count: int,
    n_classes: int = 10,
    side: int = 16,
    seed: int = 0,
    dictionary_seed: int = 0,
    wobble: float = 0.18,
) -> tuple[np.ndarray, np.ndarray]:
    """Held-out digits from the same generative process as the dictionary.

    ``dictionary_seed`` must match the seed used for the dictionary so
    the class prototypes line up; the perturbations are fresh.
    """
    proto_rng = np.random.default_rng(dictionary_seed)
    protos = [_smooth_field(proto_rng, side, modes=4) for _ in range(n_classes)]
    rng = np.random.default_rng(seed + 104729)
    digits, true_labels = [], []
    for _ in range(count):
        c = int(rng.integers(n_classes))
        bump = _smooth_field(rng, side, modes=5)
        digit = np.clip(protos[c] + wobble * (bump - 0.5), 0.0, 1.0)
        digits.append(digit.reshape(-1, order="F"))
        true_labels.append(c)
    return np.array(digits).T, np.array(true_labels, dtype=np.int64)


# ---------------------------------------------------------------------------
# classification and reporting


@dataclass(frozen=True)
class ClassificationResult:
    predicted_label: int | None
    vote_histogram: np.ndarray
    active_atoms: np.ndarray
    sigma_used: float
    tie: bool = False

    @property
    def support_size(self) -> int:
        return len(self.active_atoms)


def classify_majority(alpha, labels, tau: float = 0.01, sigma_used: float = 0.0) -> ClassificationResult:
    """Majority vote over labels of atoms with |coefficient| above tau.

    Ties go to the smallest label (and are flagged); an empty support
    yields no label.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    alpha = np.asarray(alpha, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if alpha.shape != labels.shape:
        raise ValueError("alpha and labels must have matching lengths")
    active = np.flatnonzero(np.abs(alpha) > tau)
    hist = np.bincount(labels[active], minlength=10)
    if len(active) == 0:
        return ClassificationResult(None, hist, active, sigma_used)
    winner = int(np.argmax(hist))  # argmax takes the smallest index on ties
    tie = int((hist == hist[winner]).sum()) > 1
    return ClassificationResult(winner, hist, active, sigma_used, tie=tie)


@dataclass(frozen=True)
class FrameStats:
    name: str
    support_size: int
    max_abs: float
    min_abs_active: float
    contribution: np.ndarray

    @property
    def contribution_norm(self) -> float:
        return float(np.linalg.norm(self.contribution))


def frame_report(alpha, dictionary: CompositeDictionary, threshold: float | None = None) -> list[FrameStats]:
    """Per-frame support and synthesized contribution.

    ``threshold`` is an absolute cut on |coefficient|; the default is
    1e-6 times the largest magnitude over all frames.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (dictionary.cols,):
        raise ValueError(
            f"coefficient length {alpha.shape} does not match dictionary ({dictionary.cols})"
        )
    peak = float(np.max(np.abs(alpha))) if alpha.size else 0.0
    cut = (1e-6 * peak) if threshold is None else float(threshold)
    stats = []
    for (name, submap), sl in zip(dictionary.subframes, dictionary.slices()):
        block = alpha[sl]
        active = np.abs(block) > cut
        stats.append(
            FrameStats(
                name=name,
                support_size=int(active.sum()),
                max_abs=float(np.max(np.abs(block))) if block.size else 0.0,
                min_abs_active=float(np.min(np.abs(block[active]))) if active.any() else 0.0,
                contribution=submap.apply(block),
            )
        )
    return stats


def default_scales(problem: Problem, c: float | None = None) -> np.ndarray:
    """Variance scales for a generated problem.

    Sensitivity weights come from the synthesis dictionary's columns
    measured in whitened data units (column norms divided by the noise
    level).  Using the dictionary rather than the blurred composition
    keeps atoms the forward map attenuates governed by their prior
    instead of handing them unbounded variance scales, and makes the
    weights uniform across an orthonormal sub-frame; the noise level in
    the denominator carries the signal-to-noise information the scale
    constant is meant to encode.

    The default constant 1/log(N) puts the weak-coefficient adoption
    threshold of the gamma-hypermodel limit at the universal threshold
    sqrt(2 log N), so pure-noise correlations are not adopted as
    support.  Annotated-atom problems use a flat scale instead
    (sensitivity is meaningless between same-kind atoms).
    """
    from .hyperprior import sensitivity_weights

    if problem.name == "dictlearn":
        return np.full(problem.dictionary.cols, 1e-5)
    synthesis = concat_horizontal(problem.dictionary)
    if c is None:
        c = 1.0 / np.log(max(synthesis.cols, 3))
    whitened = linops.scale_rows(synthesis, np.full(synthesis.rows, 1.0 / problem.noise_std))
    return sensitivity_weights(whitened, c=c)


def psnr(x, reference, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB against a reference array."""
    x = np.asarray(x, dtype=float)
    reference = np.asarray(reference, dtype=float)
    mse = float(np.mean((x - reference) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)
