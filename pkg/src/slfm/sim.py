"""Synthetic desk-scale scenes: parametric binaural rendering with 2-D
image-source reverberation, 1-D panorama views, and labeled dataset
generation.

Geometry convention (fixed project-wide): +z is forward, +x is rightward,
headings/azimuths are counterclockwise-positive in degrees with 0 at +z.
Positive azimuth puts the source on the viewer's left, which makes the left
channel louder and the right channel delayed.
"""

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import fftconvolve

from . import _kernels, rng as rng_mod
from .dsp import BinauralClip
from .errors import ConfigError, DataError, GeometryError

SPEED_OF_SOUND = 343.0
EAR_BASELINE = 0.18
ILD_ALPHA = 0.3
MIN_SOURCE_DISTANCE = 0.3
SINC_HALF_WIDTH = 40
PANORAMA_POINTS = 512
STRIP_SAMPLES = 64
FIELD_OF_VIEW_DEG = 60.0
PEAK_LEVEL = 0.9

MANIFEST_VERSION = 1


def wrap_degrees(a):
    """Wrap angle(s) to (-180, 180]."""
    w = -((-np.asarray(a, dtype=np.float64) + 180.0) % 360.0 - 180.0)
    return float(w) if np.isscalar(a) or np.asarray(a).ndim == 0 else w


def bearing_degrees(from_xz, to_xz):
    dx = to_xz[0] - from_xz[0]
    dz = to_xz[1] - from_xz[1]
    return float(np.degrees(np.arctan2(-dx, dz)))


@dataclass
class Pose:
    x: float
    z: float
    heading_deg: float

    def __post_init__(self):
        self.heading_deg = wrap_degrees(self.heading_deg)

    @property
    def position(self):
        return (self.x, self.z)


@dataclass
class SourceSpec:
    x: float
    z: float
    kind: str = "speech_like"
    gain_db: float = 0.0

    @property
    def position(self):
        return (self.x, self.z)


@dataclass
class Scene:
    width: float
    depth: float
    beta: float
    sources: list
    texture: np.ndarray
    reflection_order: int = 3

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError(f"wall reflection coefficient must be in [0, 1), got {self.beta}")
        if not 1 <= len(self.sources) <= 2:
            raise ConfigError(f"scene must hold 1 or 2 sources, got {len(self.sources)}")
        for s in self.sources:
            if not (0.0 < s.x < self.width and 0.0 < s.z < self.depth):
                raise GeometryError(f"source at ({s.x:.2f}, {s.z:.2f}) outside {self.width:.2f}x{self.depth:.2f} room")
        if len(self.sources) == 2:
            if self.sources[0].gain_db - self.sources[1].gain_db < 6.0:
                raise ConfigError("dominant source must be >= 6 dB above the other")
        self.texture = np.asarray(self.texture, dtype=np.float32)
        if self.texture.shape != (PANORAMA_POINTS,):
            raise ConfigError(f"panorama texture must have {PANORAMA_POINTS} samples")
        if float(np.var(self.texture)) < 0.05:
            raise ConfigError("panorama texture variance below 0.05 (degenerate)")

    def azimuth_deg(self, pose: Pose, source_index: int = 0) -> float:
        return wrap_degrees(bearing_degrees(pose.position, self.sources[source_index].position) - pose.heading_deg)


def make_texture(rng):
    """Smooth periodic panorama texture, normalized to unit variance.

    Two random-phase harmonics: a 60-degree-period carrier whose strip
    correlation phase tracks heading changes, and a strong 180-degree-period
    component that disambiguates the carrier's 60-degree alias. Window pairs
    up to 90 degrees apart stay identifiable despite the 60-degree field of
    view.
    """
    angles = 2.0 * np.pi * np.arange(PANORAMA_POINTS) / PANORAMA_POINTS
    tex = np.cos(6.0 * angles + rng.uniform(0.0, 2.0 * np.pi))
    tex += 2.0 * rng.uniform(0.8, 1.2) * np.cos(2.0 * angles + rng.uniform(0.0, 2.0 * np.pi))
    tex -= tex.mean()
    tex /= max(tex.std(), 1e-6)
    return tex.astype(np.float32)


# ---------------------------------------------------------------------------
# source signals


def synth_source_signal(kind: str, duration: float, rng, sample_rate: int = 16000):
    """Mono test signal, peak-normalized to 0.9."""
    if duration < 0.5:
        raise ConfigError(f"duration must be >= 0.5 s, got {duration}")
    n = int(round(duration * sample_rate))
    if kind == "noise":
        x = rng.standard_normal(n)
    elif kind == "speech_like":
        x = rng.standard_normal(n)
        spec = np.fft.rfft(x)
        freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
        band = (freqs >= 300.0) & (freqs <= 3400.0)
        spec[~band] = 0.0
        x = np.fft.irfft(spec, n)
        x *= _burst_envelope(n, rng, sample_rate)
    elif kind == "music_like":
        f0 = rng.uniform(150.0, 400.0)
        t = np.arange(n) / sample_rate
        vibrato = 1.0 + 0.01 * np.sin(2.0 * np.pi * 5.0 * t + rng.uniform(0, 2 * np.pi))
        phase = 2.0 * np.pi * np.cumsum(f0 * vibrato) / sample_rate
        x = np.zeros(n)
        for k in range(1, 7):
            x += np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k
        x *= 0.6 + 0.4 * np.sin(2.0 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi)) ** 2
    else:
        raise ConfigError(f"unknown signal kind '{kind}'")
    peak = np.max(np.abs(x))
    return (PEAK_LEVEL * x / max(peak, 1e-12)).astype(np.float32)


def _burst_envelope(n, rng, sample_rate, rate_hz=3.5, ramp_s=0.02):
    """Syllable-like on/off gating with raised-cosine ramps."""
    env = np.zeros(n)
    pos = 0
    while pos < n:
        seg = int(rng.uniform(0.6, 1.4) * sample_rate / rate_hz)
        on = rng.random() < 0.75
        if on:
            env[pos : pos + seg] = rng.uniform(0.5, 1.0)
        pos += seg
    ramp = int(ramp_s * sample_rate)
    kernel = np.hanning(2 * ramp + 1)
    kernel /= kernel.sum()
    env = np.convolve(env, kernel, mode="same")
    return 0.1 + 0.9 * env


# ---------------------------------------------------------------------------
# binaural rendering


def _image_sources(scene: Scene, source: SourceSpec):
    """2-D image-source expansion: positions, reflection counts."""
    k = scene.reflection_order if scene.beta > 0.0 else 0
    xs, zs = [], []
    orders = []
    rng_m = range(-(k + 1), k + 2)
    for m in rng_m:
        for p in (0, 1):
            rx = abs(m) + abs(m - p)
            if rx > k:
                continue
            ux = 2.0 * m * scene.width + (1.0 - 2.0 * p) * source.x
            for nn in rng_m:
                for q in (0, 1):
                    rz = abs(nn) + abs(nn - q)
                    if rx + rz > k:
                        continue
                    xs.append(ux)
                    zs.append(2.0 * nn * scene.depth + (1.0 - 2.0 * q) * source.z)
                    orders.append(rx + rz)
    return np.array(xs), np.array(zs), np.array(orders, dtype=np.float64)


def binaural_rir(scene: Scene, pose: Pose, source_index: int = 0, sample_rate: int = 16000):
    """Left/right impulse responses for one source at a pose.

    Each image source contributes a Hann-windowed sinc tap pair with
    azimuth-dependent fractional inter-channel delay (spherical-head ITD)
    and a broadband level difference. A constant pre-delay of the sinc
    half-width keeps the interpolation support inside the buffer.
    """
    src = scene.sources[source_index]
    r_direct = np.hypot(src.x - pose.x, src.z - pose.z)
    if r_direct < MIN_SOURCE_DISTANCE:
        raise GeometryError(f"source {r_direct:.2f} m from listener (min {MIN_SOURCE_DISTANCE} m)")

    xs, zs, orders = _image_sources(scene, src)
    dx = xs - pose.x
    dz = zs - pose.z
    dist = np.hypot(dx, dz)
    bearing = np.degrees(np.arctan2(-dx, dz))
    azimuth = np.radians(bearing - pose.heading_deg)
    sin_az = np.sin(azimuth)

    amp = (scene.beta**orders) / np.maximum(dist, MIN_SOURCE_DISTANCE)
    itd_half = 0.5 * (EAR_BASELINE / SPEED_OF_SOUND) * sin_az * sample_rate
    base_delay = dist / SPEED_OF_SOUND * sample_rate + SINC_HALF_WIDTH

    delays_l = base_delay - itd_half
    delays_r = base_delay + itd_half
    gains_l = amp * (1.0 + ILD_ALPHA * sin_az)
    gains_r = amp * (1.0 - ILD_ALPHA * sin_az)

    length = int(np.ceil(base_delay.max() + np.abs(itd_half).max())) + SINC_HALF_WIDTH + 2
    rir_l = np.zeros(length, dtype=np.float64)
    rir_r = np.zeros(length, dtype=np.float64)
    _kernels.add_sinc_taps(rir_l, delays_l, gains_l, SINC_HALF_WIDTH)
    _kernels.add_sinc_taps(rir_r, delays_r, gains_r, SINC_HALF_WIDTH)
    return rir_l, rir_r


def render_binaural(scene: Scene, pose: Pose, signals, sample_rate: int = 16000) -> BinauralClip:
    """Render all scene sources at a pose; channels jointly peak-normalized."""
    if len(signals) != len(scene.sources):
        raise ConfigError(f"expected {len(scene.sources)} source signals, got {len(signals)}")
    n = len(signals[0])
    out_l = np.zeros(n, dtype=np.float64)
    out_r = np.zeros(n, dtype=np.float64)
    for idx, (src, sig) in enumerate(zip(scene.sources, signals)):
        rir_l, rir_r = binaural_rir(scene, pose, idx, sample_rate)
        gain = 10.0 ** (src.gain_db / 20.0)
        sig = np.asarray(sig, dtype=np.float64) * gain
        out_l += fftconvolve(sig, rir_l)[:n]
        out_r += fftconvolve(sig, rir_r)[:n]
    peak = max(np.max(np.abs(out_l)), np.max(np.abs(out_r)), 1e-12)
    scale = PEAK_LEVEL / peak
    return BinauralClip(sample_rate, (out_l * scale).astype(np.float32), (out_r * scale).astype(np.float32))


def render_direct(signal, azimuth_deg: float, distance: float = 1.5, sample_rate: int = 16000) -> BinauralClip:
    """Anechoic single-path render at a prescribed azimuth (prompt banks,
    geometry oracles)."""
    sin_az = np.sin(np.radians(azimuth_deg))
    itd_half = 0.5 * (EAR_BASELINE / SPEED_OF_SOUND) * sin_az * sample_rate
    base = distance / SPEED_OF_SOUND * sample_rate + SINC_HALF_WIDTH
    amp = 1.0 / max(distance, MIN_SOURCE_DISTANCE)
    length = int(np.ceil(base + abs(itd_half))) + SINC_HALF_WIDTH + 2
    rir_l = np.zeros(length, dtype=np.float64)
    rir_r = np.zeros(length, dtype=np.float64)
    _kernels.add_sinc_taps(rir_l, np.array([base - itd_half]), np.array([amp * (1.0 + ILD_ALPHA * sin_az)]), SINC_HALF_WIDTH)
    _kernels.add_sinc_taps(rir_r, np.array([base + itd_half]), np.array([amp * (1.0 - ILD_ALPHA * sin_az)]), SINC_HALF_WIDTH)
    n = len(signal)
    sig = np.asarray(signal, dtype=np.float64)
    out_l = fftconvolve(sig, rir_l)[:n]
    out_r = fftconvolve(sig, rir_r)[:n]
    peak = max(np.max(np.abs(out_l)), np.max(np.abs(out_r)), 1e-12)
    scale = PEAK_LEVEL / peak
    return BinauralClip(sample_rate, (out_l * scale).astype(np.float32), (out_r * scale).astype(np.float32))


def render_panorama_view(scene: Scene, pose: Pose):
    """64-sample strip: the 60-degree texture window centered at heading."""
    offsets = (np.arange(STRIP_SAMPLES) + 0.5) / STRIP_SAMPLES - 0.5
    angles = pose.heading_deg + offsets * FIELD_OF_VIEW_DEG
    u = (angles % 360.0) / 360.0 * PANORAMA_POINTS
    i0 = np.floor(u).astype(int) % PANORAMA_POINTS
    frac = (u - np.floor(u)).astype(np.float32)
    i1 = (i0 + 1) % PANORAMA_POINTS
    tex = scene.texture
    return (tex[i0] * (1.0 - frac) + tex[i1] * frac).astype(np.float32)


# ---------------------------------------------------------------------------
# reverberation measurement


@dataclass
class Rt60Result:
    seconds: float
    extrapolated: bool


def estimate_rt60(scene: Scene, sample_rate: int = 16000) -> Rt60Result:
    """Schroeder backward-integration RT60 at a canonical center pose.

    If the decay never reaches -60 dB within the (order-truncated) impulse
    response, the linear fit over the available range is extrapolated and
    flagged.
    """
    if scene.beta <= 0.0:
        return Rt60Result(0.0, False)
    pose = Pose(scene.width / 2.0, scene.depth / 2.0, 0.0)
    src = scene.sources[0]
    if np.hypot(src.x - pose.x, src.z - pose.z) < MIN_SOURCE_DISTANCE:
        pose = Pose(scene.width / 2.0 + 0.5, scene.depth / 2.0, 0.0)
    rir_l, rir_r = binaural_rir(scene, pose, 0, sample_rate)
    energy = rir_l**2 + rir_r**2
    edc = np.cumsum(energy[::-1])[::-1]
    valid = edc > edc[0] * 1e-12
    dbc = 10.0 * np.log10(np.maximum(edc[valid], 1e-300) / edc[0])
    t = np.arange(dbc.size) / sample_rate

    start = int(np.argmax(dbc <= -5.0))
    if start == 0 and dbc[0] > -5.0:
        return Rt60Result(0.0, True)
    floor_db = max(-65.0, dbc[-1] + 5.0)
    end = int(np.argmax(dbc <= floor_db)) or dbc.size - 1
    if end - start < 8:
        end = min(start + 8, dbc.size - 1)
    slope = np.polyfit(t[start : end + 1], dbc[start : end + 1], 1)[0]
    if slope >= 0:
        return Rt60Result(float("inf"), True)
    return Rt60Result(float(-60.0 / slope), bool(dbc[-1] > -60.0))


# ---------------------------------------------------------------------------
# dataset generation


@dataclass
class SimConfig:
    scenes: int = 20
    views_per_scene: int = 4
    rotation_min_deg: float = 10.0
    rotation_max_deg: float = 90.0
    sources: int = 1
    translation_radius: float = 0.0
    beta: float = 0.0
    reflection_order: int = 3
    signal_kind: str = "speech_like"
    clip_seconds: float = 1.02
    sample_rate: int = 16000
    room_min: float = 4.0
    room_max: float = 8.0
    split_fractions: tuple = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if self.sources not in (1, 2):
            raise ConfigError("sources must be 1 or 2")
        if self.translation_radius > 0.5:
            raise ConfigError("translation radius limited to 0.5 m")
        if self.views_per_scene < 2:
            raise ConfigError("need at least 2 views per scene")


def _sample_rotation_offsets(cfg: SimConfig, rng):
    """Heading offsets for views 1..V-1 relative to view 0 with every
    pairwise separation inside [rotation_min, rotation_max].

    Headings are drawn inside a per-scene arc of random width, so small
    rotations stay common while the full range up to rotation_max occurs;
    the resulting mean pairwise rotation sits near 30 degrees.
    """
    lo, hi = cfg.rotation_min_deg, cfg.rotation_max_deg
    v = cfg.views_per_scene
    min_width = min(max(lo * (v - 1) * 1.5, lo + 5.0), hi)
    for _ in range(1000):
        width = rng.uniform(min_width, hi)
        u = rng.uniform(0.0, width, size=v)
        gaps = np.abs(u[:, None] - u[None, :])
        iu = np.triu_indices(v, 1)
        if np.all((gaps[iu] >= lo) & (gaps[iu] <= hi)):
            return u[1:] - u[0]
    raise GeometryError(f"could not satisfy pairwise rotation range [{lo}, {hi}] with {v} views")


def _sample_scene(cfg: SimConfig, scene_rng, front_only: bool):
    width = scene_rng.uniform(cfg.room_min, cfg.room_max)
    depth = scene_rng.uniform(cfg.room_min, cfg.room_max)
    margin = 0.5
    pos_margin = 0.7 + cfg.translation_radius

    sources = []
    for si in range(cfg.sources):
        for _ in range(1000):
            sx = scene_rng.uniform(margin, width - margin)
            sz = scene_rng.uniform(margin, depth - margin)
            if all(np.hypot(sx - s.x, sz - s.z) >= 1.0 for s in sources):
                gain = 0.0 if si == 0 else -scene_rng.uniform(6.0, 12.0)
                sources.append(SourceSpec(sx, sz, cfg.signal_kind, gain))
                break
        else:
            raise GeometryError("could not place sources with 1 m separation")

    texture = make_texture(scene_rng)
    scene = Scene(width, depth, cfg.beta, sources, texture, cfg.reflection_order)

    for _ in range(1000):
        bx = scene_rng.uniform(pos_margin, width - pos_margin)
        bz = scene_rng.uniform(pos_margin, depth - pos_margin)
        if any(np.hypot(bx - s.x, bz - s.z) < pos_margin for s in sources):
            continue
        offsets = _sample_rotation_offsets(cfg, scene_rng)
        if front_only:
            bearing0 = bearing_degrees((bx, bz), sources[0].position)
            h0 = wrap_degrees(bearing0 + scene_rng.uniform(-85.0, 85.0))
        else:
            h0 = scene_rng.uniform(-180.0, 180.0)
        headings = [h0] + [wrap_degrees(h0 + o) for o in offsets]

        poses = []
        ok = True
        for h in headings:
            px, pz = bx, bz
            if cfg.translation_radius > 0.0:
                for _ in range(100):
                    ang = scene_rng.uniform(0, 2 * np.pi)
                    rad = cfg.translation_radius * np.sqrt(scene_rng.random())
                    px, pz = bx + rad * np.cos(ang), bz + rad * np.sin(ang)
                    if margin < px < width - margin and margin < pz < depth - margin and all(
                        np.hypot(px - s.x, pz - s.z) >= MIN_SOURCE_DISTANCE + 0.2 for s in sources
                    ):
                        break
                else:
                    ok = False
                    break
            poses.append(Pose(px, pz, h))
        if not ok:
            continue
        if front_only and any(abs(scene.azimuth_deg(p)) >= 89.0 for p in poses):
            continue
        return scene, poses
    raise GeometryError("could not satisfy viewpoint geometry (front-only azimuths)" if front_only else "could not satisfy viewpoint geometry")


def _split_of(index, total, fractions):
    n_train = int(round(fractions[0] * total))
    n_val = int(round(fractions[1] * total))
    if index < n_train:
        return "train"
    if index < n_train + n_val:
        return "val"
    return "eval"


def generate_scene_entry(cfg: SimConfig, scene_index: int, out_dir: Path):
    """Build one scene's views and write its WAV/strip files. Pure function
    of (config, scene index): safe for parallel generation."""
    split = _split_of(scene_index, cfg.scenes, cfg.split_fractions)
    scene_rng = rng_mod.stream(cfg.seed, "scene", scene_index)
    scene, poses = _sample_scene(cfg, scene_rng, front_only=(split == "eval"))
    signals = [
        synth_source_signal(s.kind, cfg.clip_seconds, rng_mod.stream(cfg.seed, "signal", scene_index, si), cfg.sample_rate)
        for si, s in enumerate(scene.sources)
    ]
    views = []
    for vi, pose in enumerate(poses):
        clip = render_binaural(scene, pose, signals, cfg.sample_rate)
        strip = render_panorama_view(scene, pose)
        wav_rel = f"audio/s{scene_index:04d}_v{vi}.wav"
        strip_rel = f"strips/s{scene_index:04d}_v{vi}.f32"
        wavfile.write(out_dir / wav_rel, cfg.sample_rate, np.stack([clip.left, clip.right], axis=1))
        (out_dir / strip_rel).write_bytes(strip.astype("<f4").tobytes())
        views.append(
            {
                "id": vi,
                "wav": wav_rel,
                "strip": strip_rel,
                "pose": {"x": round(pose.x, 6), "z": round(pose.z, 6), "heading_deg": round(pose.heading_deg, 6)},
                "azimuths_deg": [round(scene.azimuth_deg(pose, si), 6) for si in range(len(scene.sources))],
            }
        )
    rt60 = estimate_rt60(scene, cfg.sample_rate).seconds if cfg.beta > 0 else 0.0
    return {
        "scene": scene_index,
        "split": split,
        "beta": cfg.beta,
        "rt60": round(rt60, 4),
        "room": [round(scene.width, 6), round(scene.depth, 6)],
        "source_gains_db": [s.gain_db for s in scene.sources],
        "views": views,
    }


def generate_dataset(cfg: SimConfig, out_dir, threads: int = 1, config_hash: str = ""):
    """Write WAVs, strips, and manifest.json; returns the manifest dict."""
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    (out_dir / "strips").mkdir(parents=True, exist_ok=True)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(lambda i: generate_scene_entry(cfg, i, out_dir), range(cfg.scenes)))
    else:
        entries = [generate_scene_entry(cfg, i, out_dir) for i in range(cfg.scenes)]

    manifest = {
        "version": MANIFEST_VERSION,
        "sample_rate": cfg.sample_rate,
        "clip_seconds": cfg.clip_seconds,
        "seed": cfg.seed,
        "config_hash": config_hash,
        "config": {k: v for k, v in asdict(cfg).items() if k != "split_fractions"},
        "entries": entries,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(path):
    """Read and validate a dataset manifest."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if manifest.get("version") != MANIFEST_VERSION:
        raise DataError(f"manifest version {manifest.get('version')} unsupported (expected {MANIFEST_VERSION})")
    root = path.parent
    expected = int(round(manifest["clip_seconds"] * manifest["sample_rate"]))
    for entry in manifest["entries"]:
        for view in entry["views"]:
            wav = root / view["wav"]
            strip = root / view["strip"]
            if not wav.exists() or not strip.exists():
                raise DataError(f"manifest references missing file for scene {entry['scene']} view {view['id']}")
            if strip.stat().st_size != STRIP_SAMPLES * 4:
                raise DataError(f"strip file {strip} has wrong length")
    manifest["_root"] = str(root)
    manifest["_clip_samples"] = expected
    return manifest


def load_view(manifest, entry, view):
    """Load one view's clip and strip from disk."""
    root = Path(manifest["_root"])
    sr, data = wavfile.read(root / view["wav"])
    if sr != manifest["sample_rate"]:
        raise DataError(f"wav sample rate {sr} != manifest {manifest['sample_rate']}")
    clip = BinauralClip(sr, data[:, 0], data[:, 1])
    strip = np.frombuffer((root / view["strip"]).read_bytes(), dtype="<f4")
    return clip, strip


def entries_in_split(manifest, split):
    return [e for e in manifest["entries"] if e["split"] == split]


def view_pairs(entry):
    views = entry["views"]
    return [(views[i], views[j]) for i in range(len(views)) for j in range(i + 1, len(views))]


def rotation_deg(view_s, view_t):
    """Ground-truth relative rotation (heading_t - heading_s), CCW-positive."""
    return wrap_degrees(view_t["pose"]["heading_deg"] - view_s["pose"]["heading_deg"])
