"""Shoebox room simulation with the image method.

Rooms are axis-aligned boxes sampled with a cube microphone array (side
0.20 m) and point sources. Impulse responses sum image contributions up to a
reflection order: each image carries a fractional-delay windowed-sinc kernel,
1/(4 pi r) spherical attenuation, and a per-image reflection filter built
from three frequency bands (crossovers at 500 Hz and 2 kHz) whose gains are
the products of the per-bounce wall reflectivities. Image positions (except
the direct path) are independently jittered by up to +-8 cm per axis, keyed
by the scene seed and the source index so that all microphones of the array
see the same perturbed constellation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, fftconvolve, firwin, lfilter, sosfilt

from .stft import MultichannelWaveform

__all__ = [
    "RoomScene",
    "Rir",
    "sample_scene",
    "image_method_rir",
    "render_mixture",
    "synthesize_speech_like",
    "synthesize_noise_burst",
    "save_scene",
    "load_scene",
    "MIC_SUBSETS",
]

SPEED_OF_SOUND = 343.0

CUBE_SIDE = 0.20
WALL_MARGIN = 0.10
MIN_SOURCE_ARRAY_DIST = 0.5

# uniform ranges for room dimensions in metres
WIDTH_RANGE = (3.0, 7.0)
LENGTH_RANGE = (4.0, 8.0)
HEIGHT_RANGE = (2.13, 3.05)
REFLECTIVITY_RANGE = (0.6, 0.95)

BAND_CROSSOVERS_HZ = (500.0, 2000.0)
DEFAULT_PERTURB = 0.08
MAX_IMAGE_ORDER_CAP = 20

_SINC_TAPS = 81
_BAND_TAPS = 33

# microphone subsets on the cube: vertex i has offset signs given by the bits
# of i (bit0 -> x, bit1 -> y, bit2 -> z). 2 mics are opposite vertices, 4 are
# one face, 8 the full cube.
MIC_SUBSETS = {1: (0,), 2: (0, 7), 4: (0, 1, 2, 3), 8: tuple(range(8))}


def cube_vertices(center: np.ndarray, side: float = CUBE_SIDE) -> np.ndarray:
    """The 8 vertices of an axis-aligned cube around center, shape (8, 3)."""
    center = np.asarray(center, dtype=np.float64)
    half = side / 2.0
    offsets = np.array(
        [[(i >> d) & 1 for d in range(3)] for i in range(8)], dtype=np.float64
    )
    return center[None, :] + (2.0 * offsets - 1.0) * half


@dataclass(frozen=True)
class RoomScene:
    """Sampled room geometry.

    reflectivity has shape (6, 3): rows are the surfaces (x=0, x=W, y=0,
    y=L, z=0, z=H) and columns the low/mid/high reflection bands. seed keys
    the image-position jitter of every RIR computed from this scene.
    """

    width: float
    length: float
    height: float
    reflectivity: np.ndarray
    array_center: np.ndarray
    mics: np.ndarray
    sources: np.ndarray
    seed: int

    def __post_init__(self) -> None:
        refl = np.asarray(self.reflectivity, dtype=np.float64)
        mics = np.asarray(self.mics, dtype=np.float64)
        sources = np.asarray(self.sources, dtype=np.float64)
        center = np.asarray(self.array_center, dtype=np.float64)
        if refl.shape != (6, 3):
            raise ValueError(f"reflectivity must be (6, 3), got {refl.shape}")
        if np.any(refl < 0.0) or np.any(refl >= 1.0):
            raise ValueError("reflectivities must be in [0, 1)")
        if mics.ndim != 2 or mics.shape[1] != 3 or mics.shape[0] < 1:
            raise ValueError(f"mics must be (K, 3), got {mics.shape}")
        if sources.ndim != 2 or sources.shape[1] != 3 or sources.shape[0] < 1:
            raise ValueError(f"sources must be (S, 3), got {sources.shape}")
        if center.shape != (3,):
            raise ValueError(f"array_center must be (3,), got {center.shape}")
        dims = np.array([self.width, self.length, self.height])
        if np.any(dims <= 0.0):
            raise ValueError(f"room dimensions must be positive, got {dims}")
        for name, pts in (("mic", mics), ("source", sources)):
            if np.any(pts < 0.0) or np.any(pts > dims[None, :]):
                raise ValueError(f"{name} positions outside the room")
        object.__setattr__(self, "reflectivity", refl)
        object.__setattr__(self, "mics", mics)
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "array_center", center)

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.width, self.length, self.height])

    @property
    def num_mics(self) -> int:
        return self.mics.shape[0]

    @property
    def num_sources(self) -> int:
        return self.sources.shape[0]


def sample_scene(
    rng: np.random.Generator, num_sources: int, mic_subset: int = 8
) -> RoomScene:
    """Draw a random room, cube array placement and source positions.

    Sources keep a 0.1 m margin from every wall and at least 0.5 m from the
    array centre (rejection sampling).
    """
    if num_sources < 1:
        raise ValueError(f"num_sources must be >= 1, got {num_sources}")
    if mic_subset not in MIC_SUBSETS:
        raise ValueError(
            f"mic_subset must be one of {sorted(MIC_SUBSETS)}, got {mic_subset}"
        )
    width = rng.uniform(*WIDTH_RANGE)
    length = rng.uniform(*LENGTH_RANGE)
    height = rng.uniform(*HEIGHT_RANGE)
    dims = np.array([width, length, height])
    reflectivity = rng.uniform(*REFLECTIVITY_RANGE, size=(6, 3))

    half = CUBE_SIDE / 2.0
    lo = WALL_MARGIN + half
    hi = dims - WALL_MARGIN - half
    if np.any(hi <= lo):
        raise ValueError("room too small for the array with margins")
    center = rng.uniform(lo, hi)
    vertices = cube_vertices(center)
    mics = vertices[list(MIC_SUBSETS[mic_subset])]

    sources = np.empty((num_sources, 3), dtype=np.float64)
    for s in range(num_sources):
        while True:
            pos = rng.uniform(WALL_MARGIN, dims - WALL_MARGIN)
            if np.linalg.norm(pos - center) >= MIN_SOURCE_ARRAY_DIST:
                sources[s] = pos
                break
    seed = int(rng.integers(0, 2**63 - 1))
    return RoomScene(
        width=width,
        length=length,
        height=height,
        reflectivity=reflectivity,
        array_center=center,
        mics=mics,
        sources=sources,
        seed=seed,
    )


@dataclass(frozen=True)
class Rir:
    """Single source-microphone impulse response."""

    taps: np.ndarray
    sample_rate: int
    max_order: int

    def __post_init__(self) -> None:
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size < 1:
            raise ValueError(f"taps must be a non-empty vector, got {taps.shape}")
        object.__setattr__(self, "taps", taps)


def _axis_images(room_len: float, coord: float, max_order: int):
    """Per-axis image coordinates with bounce counts against the two walls.

    Images are (1 - 2q) * coord + 2k * room_len for q in {0, 1}; the path
    reflects |k - q| times off the low wall and |k| times off the high wall.
    """
    coords, n_low, n_high = [], [], []
    for q in (0, 1):
        k_min = -(max_order // 2) - 1
        k_max = max_order // 2 + 1
        for k in range(k_min, k_max + 1):
            order = abs(k - q) + abs(k)
            if order > max_order:
                continue
            coords.append((1 - 2 * q) * coord + 2 * k * room_len)
            n_low.append(abs(k - q))
            n_high.append(abs(k))
    return (
        np.array(coords, dtype=np.float64),
        np.array(n_low, dtype=np.int64),
        np.array(n_high, dtype=np.int64),
    )


def _band_fir_bank(sample_rate: int) -> np.ndarray:
    """Three complementary linear-phase FIRs (low/mid/high), shape (3, taps).

    Built so the three kernels sum exactly to a unit impulse at the centre
    tap; a bounce-free image therefore keeps a flat response.
    """
    nyq = sample_rate / 2.0
    lo = min(BAND_CROSSOVERS_HZ[0], 0.45 * sample_rate)
    hi = min(BAND_CROSSOVERS_HZ[1], 0.47 * sample_rate)
    h_lo = firwin(_BAND_TAPS, lo, fs=sample_rate)
    h_hi = firwin(_BAND_TAPS, hi, fs=sample_rate)
    delta = np.zeros(_BAND_TAPS)
    delta[_BAND_TAPS // 2] = 1.0
    return np.stack([h_lo, h_hi - h_lo, delta - h_hi])


def _default_max_order(scene: RoomScene, d_direct: float) -> int:
    """Smallest order whose image amplitude falls 60 dB below the direct
    path (worst-case reflectivity, distance grows with order), capped."""
    beta_max = float(scene.reflectivity.max())
    if beta_max <= 0.0:
        return 0
    l_min = float(scene.dims.min())
    for order in range(1, MAX_IMAGE_ORDER_CAP + 1):
        amp = beta_max**order * d_direct / (d_direct + order * l_min)
        if 20.0 * math.log10(amp) <= -60.0:
            return order
    return MAX_IMAGE_ORDER_CAP


def image_method_rir(
    scene: RoomScene,
    source_index: int,
    mic_index: int,
    sample_rate: int = 16000,
    max_order: int | None = None,
    perturb: float = DEFAULT_PERTURB,
) -> Rir:
    """Impulse response between one source and one microphone.

    The direct path is never perturbed; all other image positions get a
    uniform jitter in [-perturb, perturb] per axis drawn from a generator
    keyed by (scene.seed, source_index), so RIRs are bit-for-bit
    reproducible and coherent across microphones.
    """
    if not 0 <= source_index < scene.num_sources:
        raise ValueError(f"source_index {source_index} out of range")
    if not 0 <= mic_index < scene.num_mics:
        raise ValueError(f"mic_index {mic_index} out of range")
    if perturb < 0.0:
        raise ValueError(f"perturb must be >= 0, got {perturb}")
    source = scene.sources[source_index]
    mic = scene.mics[mic_index]
    d_direct = float(np.linalg.norm(source - mic))
    if d_direct < 1e-6:
        raise ValueError("source and microphone positions coincide")
    if max_order is None:
        max_order = _default_max_order(scene, d_direct)
    if max_order < 0:
        raise ValueError(f"max_order must be >= 0, got {max_order}")

    dims = scene.dims
    ax = [_axis_images(dims[d], source[d], max_order) for d in range(3)]
    order_axis = [np.abs(a[1]) + np.abs(a[2]) for a in ax]
    total = (
        order_axis[0][:, None, None]
        + order_axis[1][None, :, None]
        + order_axis[2][None, None, :]
    )
    ix, iy, iz = np.nonzero(total <= max_order)

    positions = np.stack(
        [ax[0][0][ix], ax[1][0][iy], ax[2][0][iz]], axis=1
    )  # N x 3
    # bounce counts per surface: x-low, x-high, y-low, y-high, z-low, z-high
    counts = np.stack(
        [ax[0][1][ix], ax[0][2][ix], ax[1][1][iy], ax[1][2][iy], ax[2][1][iz], ax[2][2][iz]],
        axis=1,
    ).astype(np.float64)
    orders = counts.sum(axis=1)

    # jitter keyed independently of the mic; same constellation for the array
    jitter_rng = np.random.default_rng(
        np.random.SeedSequence([int(scene.seed), int(source_index)])
    )
    jitter = jitter_rng.uniform(-perturb, perturb, size=positions.shape)
    jitter[orders == 0] = 0.0
    positions = positions + jitter

    dist = np.linalg.norm(positions - mic[None, :], axis=1)
    dist = np.maximum(dist, 1e-3)
    delays = dist / SPEED_OF_SOUND * sample_rate
    amps = 1.0 / (4.0 * np.pi * dist)

    # per-image band gains: product over surfaces of beta_surface^bounces
    # (0^0 = 1, so bounce-free images keep unit gain even at beta = 0)
    gains = np.prod(scene.reflectivity[None, :, :] ** counts[:, :, None], axis=1)

    # centre the fractional part so the sinc peak stays within half a
    # sample of the interpolation window's middle tap
    n0 = np.round(delays).astype(np.int64)
    frac = delays - n0
    k = np.arange(_SINC_TAPS, dtype=np.float64)
    sinc_kernels = np.sinc(k[None, :] - _SINC_TAPS // 2 - frac[:, None])
    sinc_kernels *= np.hanning(_SINC_TAPS)[None, :]

    bank = _band_fir_bank(sample_rate)  # 3 x taps
    band_kernels = gains @ bank  # N x taps

    kernels = fftconvolve(sinc_kernels, band_kernels, axes=1)
    kernels *= amps[:, None]
    kern_len = kernels.shape[1]
    center = _SINC_TAPS // 2 + _BAND_TAPS // 2

    guard = kern_len
    length = int(n0.max()) + kern_len
    buf = np.zeros(guard + length, dtype=np.float64)
    idx = guard + n0[:, None] - center + np.arange(kern_len)[None, :]
    np.add.at(buf, idx, kernels)
    return Rir(buf[guard:], sample_rate=sample_rate, max_order=max_order)


def render_mixture(
    scene: RoomScene,
    source_waveforms: "list[np.ndarray]",
    rng: np.random.Generator,
    sample_rate: int = 16000,
    max_order: int | None = None,
    perturb: float = DEFAULT_PERTURB,
    level_db: "np.ndarray | None" = None,
    ref_channel: int = 0,
) -> "tuple[MultichannelWaveform, list[MultichannelWaveform]]":
    """Convolve sources with their RIRs and mix at randomized levels.

    Each source beyond the first is rescaled so that its reverberant image
    at the reference channel sits level_db[s] dB relative to source 0
    (drawn from N(0 dB, 7 dB) when not given). Returns the mixture and the
    scaled per-source images; the mixture is exactly their sum.
    """
    if len(source_waveforms) != scene.num_sources:
        raise ValueError(
            f"{len(source_waveforms)} waveforms for {scene.num_sources} sources"
        )
    if not 0 <= ref_channel < scene.num_mics:
        raise ValueError(f"ref_channel {ref_channel} out of range")
    waves = [np.asarray(w, dtype=np.float64).reshape(-1) for w in source_waveforms]
    n = max(w.shape[0] for w in waves)
    if n < 1:
        raise ValueError("empty source waveforms")

    if level_db is None:
        level_db = np.concatenate(
            [[0.0], rng.normal(0.0, 7.0, size=scene.num_sources - 1)]
        )
    level_db = np.asarray(level_db, dtype=np.float64)
    if level_db.shape != (scene.num_sources,):
        raise ValueError(
            f"level_db must have shape ({scene.num_sources},), got {level_db.shape}"
        )

    images = []
    for s, wave in enumerate(waves):
        chans = []
        for m in range(scene.num_mics):
            rir = image_method_rir(
                scene, s, m, sample_rate=sample_rate, max_order=max_order,
                perturb=perturb,
            )
            chans.append(fftconvolve(wave, rir.taps)[:n])
        img = np.stack(chans)
        if img.shape[1] < n:
            img = np.pad(img, ((0, 0), (0, n - img.shape[1])))
        images.append(img)

    powers = np.array([float(np.mean(img[ref_channel] ** 2)) for img in images])
    if np.any(powers <= 0.0):
        raise ValueError("a source image has zero power at the reference channel")
    scales = np.sqrt(powers[0] * 10.0 ** (level_db / 10.0) / powers)
    scales[0] = 1.0
    images = [img * g for img, g in zip(images, scales)]

    mixture = np.zeros_like(images[0])
    for img in images:
        mixture += img
    return (
        MultichannelWaveform(mixture, sample_rate),
        [MultichannelWaveform(img, sample_rate) for img in images],
    )


def synthesize_speech_like(
    rng: np.random.Generator, num_samples: int, sample_rate: int = 16000
) -> np.ndarray:
    """Speech-like stand-in: glottal-style pulse train through random
    formant resonators, gated by a syllabic on/off envelope."""
    if num_samples < 1:
        raise ValueError(f"num_samples must be positive, got {num_samples}")
    t = np.arange(num_samples) / sample_rate
    f0 = rng.uniform(90.0, 280.0)
    drift = 1.0 + 0.2 * np.sin(2.0 * np.pi * rng.uniform(0.1, 0.5) * t + rng.uniform(0, 2 * np.pi))
    phase = np.cumsum(f0 * drift) / sample_rate
    excitation = ((phase % 1.0) < 0.5 * f0 / sample_rate * 8.0).astype(np.float64)
    excitation += 0.05 * rng.standard_normal(num_samples)

    out = excitation
    for lo, hi in ((250.0, 900.0), (900.0, 2600.0)):
        fc = rng.uniform(lo, hi)
        r = rng.uniform(0.94, 0.985)
        theta = 2.0 * np.pi * fc / sample_rate
        out = lfilter([1.0], [1.0, -2.0 * r * np.cos(theta), r * r], out)

    envelope = np.zeros(num_samples)
    pos = 0
    while pos < num_samples:
        burst = int(rng.uniform(0.12, 0.35) * sample_rate)
        gap = int(rng.uniform(0.05, 0.15) * sample_rate)
        seg = min(burst, num_samples - pos)
        ramp = max(1, int(0.02 * sample_rate))
        shape = np.ones(seg)
        edge = min(ramp, seg // 2)
        if edge > 0:
            fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(edge) / edge)
            shape[:edge] = fade
            shape[seg - edge:] = fade[::-1]
        envelope[pos:pos + seg] = shape
        pos += burst + gap
    out = out * envelope
    peak = np.abs(out).max()
    if peak <= 0.0:
        raise ValueError("synthesized signal is silent")
    return 0.5 * out / peak


def synthesize_noise_burst(
    rng: np.random.Generator, num_samples: int, sample_rate: int = 16000
) -> np.ndarray:
    """Directional-noise stand-in: band-passed noise with burst gating."""
    if num_samples < 1:
        raise ValueError(f"num_samples must be positive, got {num_samples}")
    lo = rng.uniform(80.0, 1500.0)
    hi = lo + rng.uniform(300.0, 4000.0)
    hi = min(hi, 0.45 * sample_rate)
    noise = rng.standard_normal(num_samples)
    sos = butter(4, [lo, hi], btype="bandpass", fs=sample_rate, output="sos")
    out = sosfilt(sos, noise)

    envelope = np.zeros(num_samples)
    pos = 0
    while pos < num_samples:
        burst = int(rng.uniform(0.2, 0.6) * sample_rate)
        gap = int(rng.uniform(0.05, 0.3) * sample_rate)
        seg = min(burst, num_samples - pos)
        envelope[pos:pos + seg] = rng.uniform(0.4, 1.0)
        pos += burst + gap
    depth = rng.uniform(0.1, 0.5)
    slow = 1.0 - depth * 0.5 * (
        1.0 + np.sin(2.0 * np.pi * rng.uniform(0.3, 2.0) * np.arange(num_samples) / sample_rate)
    )
    out = out * envelope * slow
    peak = np.abs(out).max()
    if peak <= 0.0:
        raise ValueError("synthesized signal is silent")
    return 0.5 * out / peak


def scene_to_dict(scene: RoomScene) -> dict:
    return {
        "schema_version": 1,
        "width": scene.width,
        "length": scene.length,
        "height": scene.height,
        "reflectivity": scene.reflectivity.tolist(),
        "array_center": scene.array_center.tolist(),
        "mics": scene.mics.tolist(),
        "sources": scene.sources.tolist(),
        "seed": int(scene.seed),
    }


def scene_from_dict(doc: dict) -> RoomScene:
    try:
        version = doc["schema_version"]
        if version != 1:
            raise ValueError(f"unsupported scene schema_version {version}")
        return RoomScene(
            width=float(doc["width"]),
            length=float(doc["length"]),
            height=float(doc["height"]),
            reflectivity=np.array(doc["reflectivity"], dtype=np.float64),
            array_center=np.array(doc["array_center"], dtype=np.float64),
            mics=np.array(doc["mics"], dtype=np.float64),
            sources=np.array(doc["sources"], dtype=np.float64),
            seed=int(doc["seed"]),
        )
    except KeyError as exc:
        raise ValueError(f"scene document missing field {exc}") from exc


def save_scene(path: str, scene: RoomScene) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scene(path: str) -> RoomScene:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid scene file: {exc}") from exc
    return scene_from_dict(doc)
