"""Bit-exact lesion-image preprocessing and training-time augmentation.

The pipeline runs six stages on 8-bit rasters: hair removal by grayscale
morphological closing, edge-preserving bilateral smoothing, Otsu-driven
region highlighting, unsharp sharpening, bilinear resizing, and rescaling
to a float tensor in [0, 1].  All float intermediates are float64 and
every re-quantization to 8 bits rounds half-up, so identical inputs give
byte-identical outputs on every platform and kernel backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DimensionError, FormatError, SizeError
from .rng import Rng
from .tensor import Tensor


# ----------------------------------------------------------------------
# rasters and parameter bundles
# ----------------------------------------------------------------------

@dataclass
class PixelRaster:
    """8-bit image; pixels stored (height, width, channels), interleaved."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim == 2:
            self.pixels = self.pixels[:, :, None]
        if self.pixels.ndim != 3 or self.pixels.shape[2] not in (1, 3):
            raise DimensionError(f"raster must have 1 or 3 channels, got {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise DimensionError(f"raster must be uint8, got {self.pixels.dtype}")
        self.pixels = np.ascontiguousarray(self.pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def copy(self) -> "PixelRaster":
        return PixelRaster(self.pixels.copy())


@dataclass
class StructuringElement:
    """Square all-active morphology kernel; the pipeline uses 5x5."""

    size: int = 5

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise DimensionError(f"structuring element size must be odd positive, got {self.size}")

    @property
    def radius(self) -> int:
        return self.size // 2


@dataclass
class BilateralParams:
    """Spatial/range Gaussian widths; radius defaults to ceil(2*sigma_s)."""

    sigma_spatial: float = 3.0
    sigma_range: float = 30.0
    radius: int | None = None

    def __post_init__(self):
        if self.sigma_spatial <= 0 or self.sigma_range <= 0:
            raise DimensionError("bilateral sigmas must be positive")
        if self.radius is None:
            self.radius = math.ceil(2.0 * self.sigma_spatial)
        elif self.radius < 1:
            raise DimensionError("bilateral radius must be positive")

    def spatial_window(self) -> np.ndarray:
        r = self.radius
        offsets = np.arange(-r, r + 1, dtype=np.float64)
        sq = np.add.outer(offsets ** 2, offsets ** 2)
        return np.exp(-sq / (2.0 * self.sigma_spatial ** 2))

    def range_lut(self) -> np.ndarray:
        diffs = np.arange(256, dtype=np.float64)
        return np.exp(-(diffs ** 2) / (2.0 * self.sigma_range ** 2))


@dataclass
class BilateralTrace:
    """Per-pixel weight normalizer W_p (per channel for RGB inputs)."""

    normalizer: np.ndarray


@dataclass
class Histogram:
    counts: np.ndarray
    levels: int = 256

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.levels,):
            raise DimensionError(f"histogram needs {self.levels} bins, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise DimensionError("histogram counts must be nonnegative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.total


@dataclass
class OtsuResult:
    threshold: int
    omega0: float
    omega1: float
    within_class_variance: float
    class_variances: tuple
    degenerate: bool = False


@dataclass
class BlendParams:
    alpha: float = 1.14
    mask_scale: int = 255

    def __post_init__(self):
        if self.alpha <= 0:
            raise DimensionError("blend alpha must be positive")


@dataclass
class UnsharpParams:
    gaussian_sigma: float = 2.0
    gain: float = 1.2

    def __post_init__(self):
        if self.gaussian_sigma <= 0:
            raise DimensionError("unsharp sigma must be positive")

    @property
    def radius(self) -> int:
        return math.ceil(3.0 * self.gaussian_sigma)

    def taps(self) -> np.ndarray:
        offsets = np.arange(-self.radius, self.radius + 1, dtype=np.float64)
        k = np.exp(-(offsets ** 2) / (2.0 * self.gaussian_sigma ** 2))
        return k / k.sum()


@dataclass
class AugmentParams:
    rotation_range: float = 20.0   # degrees
    shift_range: float = 0.1       # fraction of each extent
    shear_range: float = 10.0      # degrees
    horizontal_flip: bool = True

    def __post_init__(self):
        if min(self.rotation_range, self.shift_range, self.shear_range) < 0:
            raise DimensionError("augmentation ranges must be nonnegative")


@dataclass
class PipelineConfig:
    target_size: int = 64
    element: StructuringElement = field(default_factory=StructuringElement)
    bilateral: BilateralParams = field(default_factory=BilateralParams)
    blend: BlendParams = field(default_factory=BlendParams)
    unsharp: UnsharpParams = field(default_factory=UnsharpParams)


def _round_half_up_u8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values + 0.5), 0.0, 255.0).astype(np.uint8)


def _per_channel(raster: PixelRaster, fn) -> PixelRaster:
    planes = [fn(np.ascontiguousarray(raster.pixels[:, :, c]))
              for c in range(raster.channels)]
    return PixelRaster(np.stack(planes, axis=2))


# ----------------------------------------------------------------------
# pipeline stages
# ----------------------------------------------------------------------

def morphological_close(img: PixelRaster, se: StructuringElement | None = None) -> PixelRaster:
    """Grayscale dilation then erosion; fills thin dark structures (hairs)."""
    se = se or StructuringElement()
    r = se.radius
    return _per_channel(img, lambda ch: kernels.morph_erode_u8(kernels.morph_dilate_u8(ch, r), r))


def bilateral_filter(img: PixelRaster, params: BilateralParams | None = None):
    """Edge-preserving smoothing; returns the image and its weight trace."""
    params = params or BilateralParams()
    window = params.spatial_window()
    lut = params.range_lut()
    planes = []
    norms = []
    for c in range(img.channels):
        out, den = kernels.bilateral_u8(np.ascontiguousarray(img.pixels[:, :, c]), window, lut)
        planes.append(out)
        norms.append(den)
    return PixelRaster(np.stack(planes, axis=2)), BilateralTrace(np.stack(norms, axis=2))


def to_grayscale(img: PixelRaster) -> PixelRaster:
    """0.299 R + 0.587 G + 0.114 B, computed in exact integer milli-weights."""
    if img.channels != 3:
        raise DimensionError(f"grayscale conversion needs 3 channels, got {img.channels}")
    rgb = img.pixels.astype(np.int64)
    milli = 299 * rgb[:, :, 0] + 587 * rgb[:, :, 1] + 114 * rgb[:, :, 2]
    gray = (milli + 500) // 1000  # round half-up, exactly
    return PixelRaster(gray.astype(np.uint8))


def histogram(img: PixelRaster) -> Histogram:
    if img.channels != 1:
        raise DimensionError("histogram expects a single-channel raster")
    counts = np.bincount(img.pixels.reshape(-1), minlength=256)
    return Histogram(counts)


def otsu_threshold(hist: Histogram) -> OtsuResult:
    """Exhaustive scan of t in [0, 254] minimizing within-class variance.

    With Q the total second moment and F(t) = s0^2/n0 + s1^2/n1 built from
    per-class count/intensity sums, the within-class variance is
    (Q - F(t)) / total, so the scan maximizes F(t) with exact integer
    cross-multiplied comparisons — float round-off can never reorder ties.
    Candidates that leave either class empty are skipped; ties break toward
    the smallest t.  A single-intensity histogram is flagged degenerate.
    """
    counts = hist.counts
    total = hist.total
    if total <= 0:
        raise SizeError("otsu needs a non-empty histogram")

    levels = np.arange(256, dtype=np.int64)
    cum_count = [int(v) for v in np.cumsum(counts)]
    cum_sum = [int(v) for v in np.cumsum(counts * levels)]
    sum_all = cum_sum[255]

    best_t = -1
    best_num = best_den = 0  # best F as an exact fraction
    for t in range(255):
        n0 = cum_count[t]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        s0 = cum_sum[t]
        s1 = sum_all - s0
        num = s0 * s0 * n1 + s1 * s1 * n0
        den = n0 * n1
        if best_t < 0 or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den

    if best_t < 0:
        # every pixel shares one intensity; no split exists
        level = int(np.nonzero(counts)[0][0])
        return OtsuResult(level, 1.0, 0.0, 0.0, (0.0, 0.0), degenerate=True)

    n0 = cum_count[best_t]
    n1 = total - n0
    s0 = cum_sum[best_t]
    s1 = sum_all - s0
    q = int((counts * levels * levels).sum())
    mu0 = s0 / n0
    mu1 = s1 / n1
    cum_sumsq = int(np.cumsum(counts * levels * levels)[best_t])
    var0 = cum_sumsq / n0 - mu0 * mu0
    var1 = (q - cum_sumsq) / n1 - mu1 * mu1
    sigma_w = (q - (s0 * s0 * n1 + s1 * s1 * n0) / (n0 * n1)) / total
    return OtsuResult(best_t, n0 / total, n1 / total, sigma_w, (var0, var1))


def binary_segment(img: PixelRaster, threshold: int, mask_scale: int = 255) -> PixelRaster:
    """Foreground (= mask_scale) where intensity >= threshold, else 0."""
    if img.channels != 1:
        raise DimensionError("binary segmentation expects a single-channel raster")
    if not 0 <= threshold <= 255:
        raise DimensionError(f"threshold must be in [0, 255], got {threshold}")
    mask = np.where(img.pixels >= threshold, np.uint8(mask_scale), np.uint8(0))
    return PixelRaster(mask)


def highlight_roi(img: PixelRaster, mask: PixelRaster, params: BlendParams | None = None) -> PixelRaster:
    """Blend image + alpha * mask with saturating clamp to [0, 255]."""
    params = params or BlendParams()
    if (img.height, img.width) != (mask.height, mask.width):
        raise DimensionError(
            f"mask size {mask.height}x{mask.width} does not match image {img.height}x{img.width}")
    blended = img.pixels.astype(np.float64) + params.alpha * mask.pixels.astype(np.float64)
    return PixelRaster(_round_half_up_u8(blended))


def unsharp_mask(img: PixelRaster, params: UnsharpParams | None = None) -> PixelRaster:
    """Sharpen by adding gain * (image - gaussian blur), clamped and rounded."""
    params = params or UnsharpParams()
    taps = params.taps()

    def sharpen(channel: np.ndarray) -> np.ndarray:
        blurred = kernels.gaussian_blur_f64(channel, taps)
        mask = channel.astype(np.float64) - blurred
        return _round_half_up_u8(channel.astype(np.float64) + params.gain * mask)

    return _per_channel(img, sharpen)


def rescale(img: PixelRaster) -> Tensor:
    """Map 8-bit intensities to floats in [0, 1] (divide by 255)."""
    return Tensor(img.pixels.astype(np.float64) / 255.0)


def resize(img: PixelRaster, width: int, height: int) -> PixelRaster:
    """Bilinear resize with half-pixel-centered sampling."""
    if width <= 0 or height <= 0:
        raise DimensionError(f"resize target must be positive, got {width}x{height}")
    return _per_channel(img, lambda ch: kernels.resize_bilinear_u8(ch, width, height))


def pipeline_stages(img: PixelRaster, config: PipelineConfig | None = None):
    """Yield (stage_name, PixelRaster) for each 8-bit stage, in order."""
    config = config or PipelineConfig()
    if img.channels != 3:
        raise DimensionError(f"pipeline input must be RGB, got {img.channels} channels")
    closed = morphological_close(img, config.element)
    yield "closed", closed
    filtered, _ = bilateral_filter(closed, config.bilateral)
    yield "filtered", filtered
    gray = to_grayscale(filtered)
    yield "gray", gray
    otsu = otsu_threshold(histogram(gray))
    mask = binary_segment(gray, otsu.threshold, config.blend.mask_scale)
    yield "mask", mask
    highlighted = highlight_roi(filtered, mask, config.blend)
    yield "highlighted", highlighted
    sharpened = unsharp_mask(highlighted, config.unsharp)
    yield "sharpened", sharpened
    resized = resize(sharpened, config.target_size, config.target_size)
    yield "resized", resized


def preprocess_raster(img: PixelRaster, config: PipelineConfig | None = None) -> PixelRaster:
    """All 8-bit stages of the pipeline (everything except rescaling)."""
    for _, stage in pipeline_stages(img, config):
        last = stage
    return last


def preprocess_pipeline(img: PixelRaster, config: PipelineConfig | None = None) -> Tensor:
    """Full pipeline: 8-bit stages, then rescale to a float tensor in [0, 1]."""
    return rescale(preprocess_raster(img, config))


# ----------------------------------------------------------------------
# augmentation
# ----------------------------------------------------------------------

def _affine_forward(width, height, theta_deg, shift_x, shift_y, shear_deg, flip):
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    to_center = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
    from_center = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]], dtype=np.float64)
    th = math.radians(theta_deg)
    rot = np.array([[math.cos(th), -math.sin(th), 0],
                    [math.sin(th), math.cos(th), 0],
                    [0, 0, 1]], dtype=np.float64)
    sh = math.tan(math.radians(shear_deg))
    shear = np.array([[1, sh, 0], [0, 1, 0], [0, 0, 1]], dtype=np.float64)
    flip_m = np.array([[-1 if flip else 1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=np.float64)
    shift = np.array([[1, 0, shift_x], [0, 1, shift_y], [0, 0, 1]], dtype=np.float64)
    return shift @ from_center @ rot @ shear @ flip_m @ to_center


def apply_affine(img: PixelRaster, theta_deg: float = 0.0, shift_x: float = 0.0,
                 shift_y: float = 0.0, shear_deg: float = 0.0, flip: bool = False) -> PixelRaster:
    """Apply one affine transform by inverse mapping with bilinear sampling.

    Rotation and shear act about the image center; out-of-bounds samples
    fill with black.
    """
    forward = _affine_forward(img.width, img.height, theta_deg, shift_x, shift_y,
                              shear_deg, flip)
    inverse = np.ascontiguousarray(np.linalg.inv(forward)[:2, :])
    return _per_channel(img, lambda ch: kernels.warp_affine_u8(ch, inverse))


def augment(img: PixelRaster, params: AugmentParams, rng: Rng) -> PixelRaster:
    """Sample one random affine transform and apply it.

    Draw order is fixed (rotation, height shift, width shift, shear, flip)
    so a given Rng state always produces the same transform.
    """
    theta = rng.uniform(-params.rotation_range, params.rotation_range)
    shift_y = rng.uniform(-params.shift_range, params.shift_range) * img.height
    shift_x = rng.uniform(-params.shift_range, params.shift_range) * img.width
    shear = rng.uniform(-params.shear_range, params.shear_range)
    flip = params.horizontal_flip and rng.next_float() < 0.5
    return apply_affine(img, theta, shift_x, shift_y, shear, flip)


# ----------------------------------------------------------------------
# file formats
# ----------------------------------------------------------------------

def write_ppm(img: PixelRaster, path) -> None:
    """Binary PPM (P6) for RGB, PGM (P5) for single-channel; maxval 255."""
    magic = b"P6" if img.channels == 3 else b"P5"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    Path(path).write_bytes(header + img.pixels.tobytes())


def _next_token(data: bytes, pos: int):
    n = len(data)
    while pos < n:
        if data[pos:pos + 1].isspace():
            pos += 1
        elif data[pos:pos + 1] == b"#":
            while pos < n and data[pos] != 0x0A:
                pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of PNM header")
    return data[start:pos], pos


def read_ppm(path) -> PixelRaster:
    data = Path(path).read_bytes()
    magic, pos = _next_token(data, 0)
    if magic not in (b"P6", b"P5"):
        raise FormatError(f"unsupported PNM magic {magic!r}")
    channels = 3 if magic == b"P6" else 1
    fields = []
    for _ in range(3):
        token, pos = _next_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise FormatError(f"non-numeric PNM header field {token!r}")
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    need = width * height * channels
    raw = data[pos:pos + need]
    if len(raw) != need:
        raise FormatError(f"PNM payload truncated: need {need} bytes, have {len(raw)}")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, channels)
    return PixelRaster(pixels.copy())


def read_image(path) -> PixelRaster:
    """Read PPM/PGM natively, PNG (or anything Pillow decodes) as 8-bit."""
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pgm", ".pnm"):
        return read_ppm(path)
    from PIL import Image

    with Image.open(path) as im:
        mode = "L" if im.mode in ("1", "L", "I;16", "I") else "RGB"
        arr = np.asarray(im.convert(mode), dtype=np.uint8)
    return PixelRaster(arr)
