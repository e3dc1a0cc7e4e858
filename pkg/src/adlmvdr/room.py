"""Shoebox room simulation with the image-source method.

Mixtures are assembled at the reference microphone: interference is scaled
to the requested SIR and noise to the requested SNR, both measured against
the reverberant target.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np
from scipy.signal import fftconvolve

from .errors import DimensionError, ParameterError
from .signal_core import DEFAULT_SAMPLE_RATE, TimeSignal

SPEED_OF_SOUND = 343.0
SINC_TAPS = 8
MAX_RT60 = 1.0

# Default ranges for randomly drawn scenes.
ROOM_MIN = (4.0, 4.0, 3.0)
ROOM_MAX = (10.0, 10.0, 6.0)
RT60_RANGE = (0.05, 0.7)
DISTANCE_RANGE = (0.5, 6.0)
SNR_RANGE = (18.0, 30.0)
SIR_RANGE = (-6.0, 6.0)
SPEAKER_RANGE = (1, 3)

LINEAR15_SPACING = 0.03

CHANNEL_PRESETS = {
    "3ch": (0, 7, 14),
    "7ch": (0, 3, 5, 7, 9, 11, 14),
    "9ch": (0, 2, 3, 5, 7, 9, 11, 12, 14),
    "15ch": tuple(range(15)),
}


@dataclass(frozen=True)
class ArrayGeometry:
    mic_positions: np.ndarray
    reference_channel: int = 0

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.mic_positions, dtype=np.float64))
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise DimensionError(f"mic_positions must be (M, 3), got {pos.shape}")
        if not 0 <= self.reference_channel < pos.shape[0]:
            raise ParameterError(f"reference channel {self.reference_channel} out of range")
        if pos.shape[0] > 1:
            gaps = np.linalg.norm(pos[:, None] - pos[None], axis=-1) + np.eye(pos.shape[0])
            if gaps.min() <= 1e-9:
                raise ParameterError("microphone positions must be distinct")
        object.__setattr__(self, "mic_positions", pos)

    @property
    def num_mics(self) -> int:
        return self.mic_positions.shape[0]

    @property
    def center(self) -> np.ndarray:
        return self.mic_positions.mean(axis=0)

    @property
    def axis(self) -> np.ndarray:
        """Unit vector along the array, first mic toward last mic."""
        if self.num_mics == 1:
            return np.array([1.0, 0.0, 0.0])
        d = self.mic_positions[-1] - self.mic_positions[0]
        return d / np.linalg.norm(d)

    def axis_offsets(self) -> np.ndarray:
        """Signed position of each mic along the axis, relative to the reference mic."""
        return (self.mic_positions - self.mic_positions[self.reference_channel]) @ self.axis

    def subset(self, channels) -> "ArrayGeometry":
        channels = list(channels)
        if not channels or min(channels) < 0 or max(channels) >= self.num_mics:
            raise ParameterError(f"invalid channel subset {channels} for {self.num_mics} mics")
        if len(set(channels)) != len(channels):
            raise ParameterError(f"duplicate channels in {channels}")
        ref = channels.index(self.reference_channel) if self.reference_channel in channels else 0
        return ArrayGeometry(self.mic_positions[channels], ref)

    @classmethod
    def linear(cls, num_mics: int = 15, spacing: float = LINEAR15_SPACING, center=(0.0, 0.0, 0.0),
               azimuth_deg: float = 0.0) -> "ArrayGeometry":
        """Uniform linear array in the horizontal plane, symmetric about ``center``."""
        az = np.deg2rad(azimuth_deg)
        axis = np.array([np.cos(az), np.sin(az), 0.0])
        offsets = (np.arange(num_mics) - (num_mics - 1) / 2.0) * spacing
        return cls(np.asarray(center, dtype=float)[None] + offsets[:, None] * axis[None])


def resolve_channels(spec) -> tuple[int, ...]:
    """Accept a preset name (``"9ch"``), a comma list, or an iterable of ints."""
    if isinstance(spec, str):
        if spec in CHANNEL_PRESETS:
            return CHANNEL_PRESETS[spec]
        try:
            return tuple(int(s) for s in spec.split(",") if s.strip())
        except ValueError as exc:
            raise ParameterError(f"bad channel list {spec!r}") from exc
    return tuple(int(c) for c in spec)


@dataclass(frozen=True)
class ArrayScene:
    room_dims: tuple
    rt60: float
    source_positions: np.ndarray
    target_index: int = 0
    snr_db: float | None = None
    sir_db: float | None = None
    seed: int = 0
    doa_deg: tuple = ()

    def __post_init__(self):
        dims = np.asarray(self.room_dims, dtype=float)
        src = np.atleast_2d(np.asarray(self.source_positions, dtype=float))
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ParameterError(f"room_dims must be three positive lengths, got {self.room_dims}")
        if self.rt60 < 0:
            raise ParameterError("rt60 must be non-negative")
        if src.shape[1] != 3:
            raise DimensionError("source_positions must be (K, 3)")
        if not _inside(src, dims):
            raise ParameterError("every source must lie strictly inside the room")
        if not 0 <= self.target_index < src.shape[0]:
            raise ParameterError("target_index out of range")
        object.__setattr__(self, "room_dims", tuple(float(d) for d in dims))
        object.__setattr__(self, "source_positions", src)

    @property
    def num_sources(self) -> int:
        return self.source_positions.shape[0]

    def to_dict(self) -> dict:
        return {
            "room_dims": list(self.room_dims),
            "rt60": self.rt60,
            "source_positions": self.source_positions.tolist(),
            "target_index": self.target_index,
            "snr_db": self.snr_db,
            "sir_db": self.sir_db,
            "seed": self.seed,
            "doa_deg": list(self.doa_deg),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArrayScene":
        known = {"room_dims", "rt60", "source_positions", "target_index", "snr_db", "sir_db", "seed", "doa_deg"}
        extra = set(d) - known
        if extra:
            raise ParameterError(f"unknown scene keys: {sorted(extra)}")
        d = dict(d)
        d["doa_deg"] = tuple(d.get("doa_deg", ()))
        return cls(**d)


def _inside(points: np.ndarray, dims: np.ndarray) -> bool:
    return bool(np.all(points > 0) and np.all(points < dims))


@dataclass(frozen=True)
class RirSet:
    """Impulse responses shaped ``(source, mic, taps)``."""

    rirs: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    reflection_coefficient: float = 0.0
    image_counts: np.ndarray = field(default=None, repr=False)


def eyring_coefficient(room_dims, rt60: float) -> float:
    """Pressure reflection coefficient from Eyring's reverberation formula."""
    lx, ly, lz = room_dims
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    return float(np.exp(-0.161 * volume / (2.0 * surface * rt60)))


def _image_lattice(dims: np.ndarray, reach: float, max_order: int | None):
    """Image-source offsets for one source: returns (sign, shift, order).

    Image position is ``sign * source + shift``.
    """
    nmax = np.ceil(reach / (2.0 * dims)).astype(int) + 1
    if max_order is not None:
        nmax = np.minimum(nmax, max_order // 2 + 1)
    grids = [np.arange(-n, n + 1) for n in nmax]
    nx, ny, nz = np.meshgrid(*grids, indexing="ij")
    lattice = np.stack([nx.ravel(), ny.ravel(), nz.ravel()], axis=1)
    signs, shifts, orders = [], [], []
    for parity in product((0, 1), repeat=3):
        p = np.array(parity)
        order = np.abs(lattice - p).sum(axis=1) + np.abs(lattice).sum(axis=1)
        keep = order <= max_order if max_order is not None else np.ones(len(order), bool)
        signs.append(np.broadcast_to(1 - 2 * p, (keep.sum(), 3)))
        shifts.append(2.0 * lattice[keep] * dims)
        orders.append(order[keep])
    return np.concatenate(signs), np.concatenate(shifts), np.concatenate(orders)


def _image_decay_rt60(beta: float, delay_idx: np.ndarray, order: np.ndarray, dist: np.ndarray,
                      length: int, sample_rate: int) -> float:
    amp = beta ** order / dist
    h = np.bincount(delay_idx, weights=amp, minlength=length)
    try:
        return estimate_rt60(h, sample_rate)
    except ParameterError:
        # no samples in the fit range: either no decay at all or an abrupt one
        return np.inf if np.sum(h[-len(h) // 10:] ** 2) > 1e-4 * np.sum(h ** 2) else 0.0


def reflection_coefficient(room_dims, rt60: float, calibrate: bool = True, c: float = SPEED_OF_SOUND,
                           sample_rate: int = DEFAULT_SAMPLE_RATE) -> float:
    """Uniform wall reflection coefficient for a target RT60.

    Eyring's formula gives the uncalibrated value. With ``calibrate`` the
    coefficient is bisected until the sample-rounded image response between
    the room centre and an off-centre receiver has the requested
    T30-extrapolated RT60. Shoebox image sets with uniform walls decay more
    slowly than the diffuse-field formula predicts.
    """
    if rt60 < 0 or rt60 > MAX_RT60:
        raise ParameterError(f"rt60 {rt60} s outside the supported range [0, {MAX_RT60}]")
    if rt60 == 0:
        return 0.0
    if not calibrate:
        return eyring_coefficient(room_dims, rt60)
    dims = np.asarray(room_dims, dtype=float)
    src, rcv = dims / 2.0, dims * np.array([0.25, 0.3, 0.35])
    reach = 1.2 * rt60 * c
    sign, shift, order = _image_lattice(dims, reach, None)
    dist = np.linalg.norm(sign * src + shift - rcv, axis=1)
    keep = dist < reach
    dist, order = dist[keep], order[keep]
    idx = np.round(dist / c * sample_rate).astype(np.int64)
    length = int(idx.max()) + 1
    lo, hi = 0.0, 1.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if _image_decay_rt60(mid, idx, order, dist, length, sample_rate) < rt60:
            lo = mid
        else:
            hi = mid
    beta = 0.5 * (lo + hi)
    if beta > 1.0 - 1e-6:
        raise ParameterError(f"rt60 {rt60} s implies a reflection coefficient >= 1 for this room")
    return beta


_FRAC_STEPS = 2048


def _sinc_table() -> np.ndarray:
    half = SINC_TAPS // 2
    frac = np.arange(_FRAC_STEPS + 1) / _FRAC_STEPS
    x = np.arange(-half + 1, half + 1)[None, :] - frac[:, None]
    return np.sinc(x) * (0.5 + 0.5 * np.cos(np.pi * x / half))


_SINC_TABLE = _sinc_table()


def _fractional_taps(delay: np.ndarray, amp: np.ndarray, row: np.ndarray, rows: int, length: int,
                     fractional: bool) -> np.ndarray:
    """Accumulate delayed impulses into ``rows`` responses of ``length`` taps.

    Fractional delays are quantized to 1/2048 sample for the sinc lookup.
    """
    if not fractional:
        idx = np.round(delay).astype(np.int64)
        ok = idx < length
        flat = np.bincount(row[ok] * length + idx[ok], weights=amp[ok], minlength=rows * length)
        return flat.reshape(rows, length)
    base = np.floor(delay).astype(np.int64)
    q = np.round((delay - base) * _FRAC_STEPS).astype(np.int64)
    flat_base = row * length + base
    half = SINC_TAPS // 2
    out = np.zeros(rows * length)
    for j, k in enumerate(range(-half + 1, half + 1)):
        idx = base + k
        ok = (idx >= 0) & (idx < length)
        out += np.bincount(flat_base[ok] + k, weights=amp[ok] * _SINC_TABLE[q[ok], j], minlength=rows * length)
    return out.reshape(rows, length)


def simulate_rir(scene: ArrayScene, geometry: ArrayGeometry, max_order: int | None = None,
                 length: int | None = None, fractional_delay: bool = True,
                 sample_rate: int = DEFAULT_SAMPLE_RATE, c: float = SPEED_OF_SOUND,
                 calibrate: bool = True) -> RirSet:
    """Image-method impulse responses for every (source, mic) pair.

    Without ``max_order`` every image arriving inside the response window is
    kept; the default window spans the RT60 plus the longest direct path.
    Direct-path amplitude is ``1 / (4 pi d)``; each wall bounce multiplies by
    the uniform reflection coefficient. Fractional delays use an 8-tap
    Hann-windowed sinc.
    """
    dims = np.asarray(scene.room_dims)
    if not _inside(geometry.mic_positions, dims):
        raise ParameterError("every microphone must lie strictly inside the room")
    beta = reflection_coefficient(scene.room_dims, scene.rt60, calibrate=calibrate, c=c)
    if beta == 0.0:
        max_order = 0
    src = scene.source_positions
    mics = geometry.mic_positions
    n_mics = mics.shape[0]
    direct = np.linalg.norm(src[:, None] - mics[None], axis=-1)
    if length is None:
        length = int(np.ceil((scene.rt60 + direct.max() / c) * sample_rate)) + SINC_TAPS + 1
    reach = length / sample_rate * c
    sign, shift, order = _image_lattice(dims, reach, max_order)
    gains = beta ** order
    rirs = np.zeros((src.shape[0], n_mics, length))
    counts = np.zeros((src.shape[0], n_mics), dtype=int)
    limit = (length - SINC_TAPS // 2) / sample_rate * c
    for k, s in enumerate(src):
        images = sign * s + shift
        near = np.linalg.norm(images - geometry.center, axis=1) < limit + np.linalg.norm(mics - geometry.center, axis=1).max()
        images, g = images[near], gains[near]
        sq = (images ** 2).sum(axis=1)[None] - 2.0 * mics @ images.T + (mics ** 2).sum(axis=1)[:, None]
        d = np.sqrt(np.maximum(sq, 0.0))
        ok = d < limit
        counts[k] = ok.sum(axis=1)
        row = np.broadcast_to(np.arange(n_mics)[:, None], d.shape)[ok]
        dk = d[ok]
        amp = np.broadcast_to(g[None], d.shape)[ok] / (4.0 * np.pi * dk)
        rirs[k] = _fractional_taps(dk / c * sample_rate, amp, row, n_mics, length, fractional_delay)
    return RirSet(rirs, sample_rate, beta, counts)


def schroeder_curve(rir: np.ndarray) -> np.ndarray:
    """Backward-integrated energy decay in dB, normalized to 0 dB at the start."""
    energy = np.cumsum((rir ** 2)[::-1])[::-1]
    return 10.0 * np.log10(np.maximum(energy / energy[0], 1e-300))


def estimate_rt60(rir: np.ndarray, sample_rate: int = DEFAULT_SAMPLE_RATE,
                  fit_range=(-5.0, -35.0)) -> float:
    """T30-style estimate: line fit to the decay curve, extrapolated to -60 dB."""
    edc = schroeder_curve(rir)
    hi, lo = fit_range
    sel = np.nonzero((edc <= hi) & (edc >= lo))[0]
    if sel.size < 2:
        raise ParameterError("decay curve does not span the fit range")
    t = sel / sample_rate
    slope, _ = np.polyfit(t, edc[sel], 1)
    return -60.0 / slope


def scene_doa(scene: ArrayScene, geometry: ArrayGeometry) -> np.ndarray:
    """Angle in degrees between the array axis and each source direction."""
    rel = scene.source_positions - geometry.center
    dist = np.linalg.norm(rel, axis=1)
    if np.any(dist < 1e-9):
        raise ParameterError("source coincides with the array center")
    cosang = np.clip(rel @ geometry.axis / dist, -1.0, 1.0)
    return np.rad2deg(np.arccos(cosang))


@dataclass(frozen=True)
class MixtureComponents:
    mixture: TimeSignal
    target: TimeSignal
    interference: TimeSignal
    noise: TimeSignal


def _energy(x: np.ndarray) -> float:
    return float(np.dot(x, x))


def synthesize_mixture(scene: ArrayScene, geometry: ArrayGeometry, dry_sources, noise: TimeSignal | None = None,
                       rirs: RirSet | None = None, **rir_kwargs) -> MixtureComponents:
    """Reverberate dry sources and mix at the requested SIR / SNR.

    Gains are measured at the reference channel. With ``scene.snr_db`` set and
    no ``noise`` given, seeded white Gaussian noise is used.
    """
    dry = [s if isinstance(s, TimeSignal) else TimeSignal(s) for s in dry_sources]
    if len(dry) != scene.num_sources:
        raise ParameterError(f"scene has {scene.num_sources} sources but {len(dry)} signals were given")
    if not 1 <= len(dry) <= 3:
        raise ParameterError("between one and three speech sources are supported")
    fs = dry[0].sample_rate
    n = dry[0].num_samples
    if any(s.num_samples != n or s.num_channels != 1 for s in dry):
        raise DimensionError("dry sources must be mono and of equal length")
    if rirs is None:
        rirs = simulate_rir(scene, geometry, sample_rate=fs, **rir_kwargs)
    ref = geometry.reference_channel
    images = np.stack([
        np.stack([fftconvolve(dry[k].samples[0], rirs.rirs[k, m])[:n] for m in range(geometry.num_mics)])
        for k in range(scene.num_sources)
    ])
    target = images[scene.target_index]
    t_energy = _energy(target[ref])
    if t_energy <= 0:
        raise ParameterError("reverberant target is silent at the reference channel")
    others = [k for k in range(scene.num_sources) if k != scene.target_index]
    interference = np.zeros_like(target)
    if others:
        interference = images[others].sum(axis=0)
        sir = 0.0 if scene.sir_db is None else scene.sir_db
        i_energy = _energy(interference[ref])
        if i_energy <= 0:
            raise ParameterError("interference is silent at the reference channel")
        interference = interference * np.sqrt(t_energy / (i_energy * 10 ** (sir / 10)))
    noise_part = np.zeros_like(target)
    if scene.snr_db is not None:
        if noise is None:
            rng = np.random.default_rng([scene.seed, 7919])
            raw = rng.standard_normal(target.shape)
        else:
            raw = noise.samples
            if raw.shape[0] == 1:
                raw = np.repeat(raw, geometry.num_mics, axis=0)
            if raw.shape[0] != geometry.num_mics or raw.shape[1] < n:
                raise DimensionError("noise must match the channel count and be at least as long as the sources")
            raw = raw[:, :n]
        n_energy = _energy(raw[ref])
        if n_energy <= 0:
            raise ParameterError("noise signal is silent")
        noise_part = raw * np.sqrt(t_energy / (n_energy * 10 ** (scene.snr_db / 10)))
    mixture = target + interference + noise_part
    return MixtureComponents(*(TimeSignal(x, fs) for x in (mixture, target, interference, noise_part)))


# ------------------------------------------------------------- scene draws

def _place_source(rng, center, dims, dist_range, margin, z_jitter):
    for _ in range(1000):
        d = rng.uniform(*dist_range)
        az = rng.uniform(0.0, 2.0 * np.pi)
        z = center[2] + rng.uniform(-z_jitter, z_jitter)
        horiz = np.sqrt(max(d ** 2 - (z - center[2]) ** 2, 0.0))
        p = np.array([center[0] + horiz * np.cos(az), center[1] + horiz * np.sin(az), z])
        if np.all(p > margin) and np.all(p < dims - margin):
            return p
    raise ParameterError("could not place a source inside the room; check distance range")


@dataclass(frozen=True)
class SceneRanges:
    room_min: tuple = ROOM_MIN
    room_max: tuple = ROOM_MAX
    rt60: tuple = RT60_RANGE
    distance: tuple = DISTANCE_RANGE
    snr_db: tuple = SNR_RANGE
    sir_db: tuple = SIR_RANGE
    num_sources: tuple = SPEAKER_RANGE

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in self.__dict__.items()}


def random_scene(seed: int, geometry: ArrayGeometry | None = None, ranges: SceneRanges = SceneRanges(),
                 num_sources: int | None = None, margin: float = 0.3) -> tuple[ArrayScene, ArrayGeometry]:
    """Draw a room, array placement and sources; returns the placed geometry too.

    ``geometry`` is a template whose positions are taken relative to its center.
    """
    rng = np.random.default_rng(seed)
    template = geometry or ArrayGeometry.linear()
    rel = template.mic_positions - template.center
    for _ in range(100):
        dims = rng.uniform(ranges.room_min, ranges.room_max)
        center = np.array([rng.uniform(margin + 0.5, dims[0] - margin - 0.5),
                           rng.uniform(margin + 0.5, dims[1] - margin - 0.5),
                           rng.uniform(1.0, min(2.0, dims[2] - margin))])
        az = rng.uniform(0.0, 2.0 * np.pi)
        rot = np.array([[np.cos(az), -np.sin(az), 0.0], [np.sin(az), np.cos(az), 0.0], [0.0, 0.0, 1.0]])
        mics = center + rel @ rot.T
        if _inside(mics, dims):
            break
    geo = ArrayGeometry(mics, template.reference_channel)
    k = num_sources if num_sources is not None else int(rng.integers(ranges.num_sources[0], ranges.num_sources[1] + 1))
    dist_hi = min(ranges.distance[1], float(np.max(dims)))
    sources = [_place_source(rng, center, dims, (ranges.distance[0], dist_hi), margin, 0.5) for _ in range(k)]
    scene = ArrayScene(
        room_dims=tuple(dims),
        rt60=float(rng.uniform(*ranges.rt60)),
        source_positions=np.array(sources),
        target_index=0,
        snr_db=float(rng.uniform(*ranges.snr_db)),
        sir_db=float(rng.uniform(*ranges.sir_db)) if k > 1 else None,
        seed=int(seed),
    )
    return replace(scene, doa_deg=tuple(float(a) for a in scene_doa(scene, geo))), geo


def fig6_scene(rt60: float = 0.31, distance: float = 2.5, snr_db: float | None = None,
               sir_db: float = 0.0, seed: int = 0) -> tuple[ArrayScene, ArrayGeometry]:
    """Two talkers at 63 and 131 degrees from the axis of the 15-mic linear array."""
    center = np.array([3.0, 1.5, 1.5])
    geo = ArrayGeometry.linear(15, center=center)
    pos = [center + distance * np.array([np.cos(np.deg2rad(a)), np.sin(np.deg2rad(a)), 0.0]) for a in (63.0, 131.0)]
    scene = ArrayScene((6.0, 5.0, 3.0), rt60, np.array(pos), 0, snr_db, sir_db, seed)
    return replace(scene, doa_deg=tuple(float(a) for a in scene_doa(scene, geo))), geo


def min_interferer_angle(scene: ArrayScene) -> float | None:
    """Smallest DOA gap between the target and any interferer, in degrees."""
    if scene.num_sources < 2 or not scene.doa_deg:
        return None
    doa = np.asarray(scene.doa_deg)
    others = np.delete(doa, scene.target_index)
    return float(np.min(np.abs(others - doa[scene.target_index])))
