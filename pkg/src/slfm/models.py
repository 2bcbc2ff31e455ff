"""Learnable components: binaural audio encoder, panorama pair encoder,
angle heads, the conditional binauralizer, and checkpoint persistence."""

import hashlib
import io
import json
import struct
from dataclasses import dataclass, asdict, field

import numpy as np

from . import autodiff as ad
from . import dsp
from .autodiff import Tensor
from .errors import CheckpointError, ConfigError, DataError, ShapeError
from .rng import stream

CHECKPOINT_MAGIC = b"SLFM"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    sample_rate: int = 16000
    clip_seconds: float = 1.02
    stft_window: int = 256
    stft_hop: int = 64
    frames: int = 128
    feature_dim: int = 64
    spec_scale: float = 8.0
    audio_channels: tuple = (12, 24, 48)
    binaural_channels: tuple = (8, 16, 32)
    head_hidden: int = 32
    pretext_variant: str = "m2b"  # m2b: mono->difference, l2r: left->right

    def __post_init__(self):
        if self.pretext_variant not in ("m2b", "l2r"):
            raise ConfigError(f"unknown pretext variant '{self.pretext_variant}'")
        self.audio_channels = tuple(self.audio_channels)
        self.binaural_channels = tuple(self.binaural_channels)

    @property
    def stft_params(self):
        return dsp.StftParams(self.stft_window, self.stft_hop)

    @property
    def bins(self):
        return self.stft_window // 2 + 1

    @property
    def clip_samples(self):
        return int(round(self.clip_seconds * self.sample_rate))

    def to_dict(self):
        d = asdict(self)
        d["audio_channels"] = list(self.audio_channels)
        d["binaural_channels"] = list(self.binaural_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def config_hash(d) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# layers


def _he_uniform(rng, shape, fan_in, gain=1.0):
    bound = gain * np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d:
    def __init__(self, rng, c_in, c_out, k=3, stride=1, padding=1, init_scale=1.0):
        self.stride = stride
        self.padding = padding
        w = init_scale * _he_uniform(rng, (c_out, c_in, k, k), fan_in=c_in * k * k)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros((1, c_out, 1, 1), dtype=np.float32), requires_grad=True)

    def __call__(self, x):
        return ad.conv2d(x, self.w, stride=self.stride, padding=self.padding) + self.b

    def named_params(self, prefix):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class Linear:
    def __init__(self, rng, n_in, n_out, zero_init=False):
        if zero_init:
            w = np.zeros((n_in, n_out), dtype=np.float32)
        else:
            w = _he_uniform(rng, (n_in, n_out), fan_in=n_in)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros((n_out,), dtype=np.float32), requires_grad=True)

    def __call__(self, x):
        return ad.matmul(x, self.w) + self.b

    def named_params(self, prefix):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


def _collect(layers):
    out = {}
    for prefix, layer in layers:
        out.update(layer.named_params(prefix))
    return out


# ---------------------------------------------------------------------------
# spectrogram plane conversion


def clip_planes(clip: dsp.BinauralClip, cfg: ModelConfig):
    """Binaural clip -> (4, frames, bins) float32: L/R real+imag planes."""
    if clip.left.shape[0] != cfg.clip_samples:
        raise DataError(f"clip has {clip.left.shape[0]} samples, expected {cfg.clip_samples}")
    spec = dsp.stft_clip(clip, cfg.stft_params)
    vals = dsp.fix_frames(spec.values, cfg.frames)
    planes = np.stack([vals[0].real, vals[0].imag, vals[1].real, vals[1].imag])
    return (planes / cfg.spec_scale).astype(np.float32)


def _complex_planes(values):
    return np.stack([values.real, values.imag]).astype(np.float32)


def pretext_planes(clip: dsp.BinauralClip, cfg: ModelConfig):
    """Input/target planes for the binauralization pretext.

    m2b: input is STFT(L+R), target STFT(L-R). l2r: input STFT(L), target
    STFT(R). Both as 2-plane (real, imag) arrays in model units.
    """
    if cfg.pretext_variant == "m2b":
        inp = clip.left + clip.right
        tgt = clip.left - clip.right
    else:
        inp = clip.left
        tgt = clip.right
    spec_in = dsp.fix_frames(dsp.stft(inp, cfg.stft_params).values, cfg.frames)[0]
    spec_tgt = dsp.fix_frames(dsp.stft(tgt, cfg.stft_params).values, cfg.frames)[0]
    return _complex_planes(spec_in) / cfg.spec_scale, _complex_planes(spec_tgt) / cfg.spec_scale


def planes_to_complex(planes, cfg: ModelConfig):
    """Invert _complex_planes scaling: (2, frames, bins) -> complex array."""
    return (planes[0] + 1j * planes[1]).astype(np.complex64) * cfg.spec_scale


# ---------------------------------------------------------------------------
# encoders and heads


class AudioEncoder:
    """Spectrogram (4 planes) -> conv stack (stride 2) -> GAP -> feature."""

    def __init__(self, cfg: ModelConfig, rng):
        c1, c2, c3 = cfg.audio_channels
        self.cfg = cfg
        self.conv1 = Conv2d(rng, 4, c1, stride=2)
        self.conv2 = Conv2d(rng, c1, c2, stride=2)
        self.conv3 = Conv2d(rng, c2, c3, stride=2)
        self.proj = Linear(rng, c3, cfg.feature_dim)

    def __call__(self, planes):
        x = ad.tensor(planes)
        if x.ndim != 4 or x.shape[1] != 4:
            raise ShapeError("audio_encode", x.shape, detail="expected (N, 4, frames, bins)")
        h = ad.relu(self.conv1(x))
        h = ad.relu(self.conv2(h))
        h = ad.relu(self.conv3(h))
        pooled = ad.mean(h, axis=(2, 3))
        return self.proj(pooled)

    def named_params(self, prefix="audio"):
        return _collect(
            [(f"{prefix}.conv1", self.conv1), (f"{prefix}.conv2", self.conv2), (f"{prefix}.conv3", self.conv3), (f"{prefix}.proj", self.proj)]
        )


def circular_correlation(strip_s, strip_t):
    """Normalized circular cross-correlation of strip_t against strip_s over
    all shifts; peak index tracks the heading change in strip samples."""
    s = np.asarray(strip_s, dtype=np.float64)
    t = np.asarray(strip_t, dtype=np.float64)
    if s.shape != t.shape or s.ndim != 1:
        raise ShapeError("circular_correlation", s.shape, t.shape)
    n = s.shape[0]
    s_std, t_std = s.std(), t.std()
    if s_std < 1e-7 or t_std < 1e-7:
        raise DataError("circular_correlation: zero-variance strip (degenerate texture)")
    s = (s - s.mean()) / s_std
    t = (t - t.mean()) / t_std
    idx = (np.arange(n)[None, :] + np.arange(n)[:, None]) % n
    return (s[idx] @ t / n).astype(np.float32)


class VisualPairEncoder:
    """Fixed circular-correlation layer followed by a 2-layer MLP.

    The first layer starts at a Fourier basis over correlation lags (plus
    noise): the correlation carries heading changes in the phase of a few
    lag frequencies, and phase readout needs paired sin/cos projections that
    plain random init makes hard to reach by gradient descent.
    """

    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        self.fc1 = Linear(rng, 64, cfg.feature_dim)
        self.fc2 = Linear(rng, cfg.feature_dim, cfg.feature_dim)
        lags = np.arange(64)
        basis = np.zeros((64, cfg.feature_dim), dtype=np.float32)
        col = 0
        for q in range(1, 9):
            for fn in (np.cos, np.sin):
                for sign in (1.0, -1.0):
                    if col >= cfg.feature_dim:
                        break
                    basis[:, col] = sign * fn(2.0 * np.pi * q * lags / 64.0) / 8.0
                    col += 1
        self.fc1.w.data = basis[:, : cfg.feature_dim] + 0.1 * self.fc1.w.data

    def __call__(self, corrs):
        x = ad.tensor(corrs)
        if x.ndim != 2 or x.shape[1] != 64:
            raise ShapeError("visual_encode", x.shape, detail="expected (N, 64) correlation vectors")
        return self.fc2(ad.relu(self.fc1(x)))

    def named_params(self, prefix="visual"):
        return _collect([(f"{prefix}.fc1", self.fc1), (f"{prefix}.fc2", self.fc2)])


class AngleHead:
    """Feature -> scalar angle in radians, bounded to (-pi, pi) by pi*tanh."""

    def __init__(self, cfg: ModelConfig, rng):
        self.fc1 = Linear(rng, cfg.feature_dim, cfg.head_hidden)
        self.fc2 = Linear(rng, cfg.head_hidden, 1)

    def __call__(self, feat):
        h = ad.relu(self.fc1(feat))
        out = self.fc2(h)
        return ad.reshape(ad.tanh(out) * float(np.pi), (-1,))

    def named_params(self, prefix):
        return _collect([(f"{prefix}.fc1", self.fc1), (f"{prefix}.fc2", self.fc2)])


class Binauralizer:
    """Encoder-decoder over 2-plane spectrograms with skip connections;
    conditioning features are tiled and concatenated at the bottleneck.

    The decoder regresses a complex ratio mask; the returned prediction is
    mask * input, computed per time-frequency cell. The multiplicative form
    matters: the best input-independent prediction of the difference channel
    is zero (its transfer is odd in the source azimuth), and a net that
    predicts the difference directly stalls on that saddle, while the mask
    path gets first-order gradients from the start.

    A constant frequency-coordinate plane is appended to the input so the
    stack can express per-bin transfer functions despite weight sharing
    along the frequency axis.
    """

    def __init__(self, cfg: ModelConfig, rng):
        b1, b2, b3 = cfg.binaural_channels
        self.cfg = cfg
        self.enc1 = Conv2d(rng, 3, b1, stride=2)
        self.enc2 = Conv2d(rng, b1, b2, stride=2)
        self.enc3 = Conv2d(rng, b2, b3, stride=2)
        self.fuse = Conv2d(rng, b3 + 2 * cfg.feature_dim, b3, k=1, padding=0)
        self.dec3 = Conv2d(rng, b3 + b2, b2)
        self.dec2 = Conv2d(rng, b2 + b1, b1)
        self.dec1 = Conv2d(rng, b1, b1)
        self.out = Conv2d(rng, b1, 2, k=1, padding=0, init_scale=0.05)
        self._coord = None

    def _coord_plane(self, n, frames, bins):
        if self._coord is None or self._coord.shape != (1, 1, frames, bins):
            coord = np.linspace(-1.0, 1.0, bins, dtype=np.float32)
            self._coord = np.broadcast_to(coord, (1, 1, frames, bins)).copy()
        return np.broadcast_to(self._coord, (n, 1, frames, bins)).astype(np.float32)

    def __call__(self, mono_planes, fv, fa):
        x = ad.tensor(mono_planes)
        fv = ad.tensor(fv)
        fa = ad.tensor(fa)
        if x.ndim != 4 or x.shape[1] != 2:
            raise ShapeError("binauralize", x.shape, detail="expected (N, 2, frames, bins) input")
        n, _, frames, bins = x.shape
        if fv.shape != (n, self.cfg.feature_dim) or fa.shape != (n, self.cfg.feature_dim):
            raise ShapeError("binauralize", fv.shape, fa.shape, detail=f"conditioning features must be (N, {self.cfg.feature_dim})")

        x_in = ad.concat([x, ad.tensor(self._coord_plane(n, frames, bins))], axis=1)
        e1 = ad.relu(self.enc1(x_in))
        e2 = ad.relu(self.enc2(e1))
        e3 = ad.relu(self.enc3(e2))

        cond = ad.concat([fv, fa], axis=1)
        cond = ad.reshape(cond, (n, 2 * self.cfg.feature_dim, 1, 1))
        ones = ad.tensor(np.ones((1, 1, e3.shape[2], e3.shape[3]), dtype=np.float32))
        cond = cond * ones
        h = ad.relu(self.fuse(ad.concat([e3, cond], axis=1)))

        h = ad.upsample_nearest2(h)[:, :, : e2.shape[2], : e2.shape[3]]
        h = ad.relu(self.dec3(ad.concat([h, e2], axis=1)))
        h = ad.upsample_nearest2(h)[:, :, : e1.shape[2], : e1.shape[3]]
        h = ad.relu(self.dec2(ad.concat([h, e1], axis=1)))
        h = ad.upsample_nearest2(h)[:, :, :frames, :bins]
        h = ad.relu(self.dec1(h))
        mask = self.out(h)
        mask_re = mask[:, 0:1]
        mask_im = mask[:, 1:2]
        in_re = x[:, 0:1]
        in_im = x[:, 1:2]
        out_re = mask_re * in_re - mask_im * in_im
        out_im = mask_re * in_im + mask_im * in_re
        return ad.concat([out_re, out_im], axis=1)

    def named_params(self, prefix="binauralizer"):
        layers = [("enc1", self.enc1), ("enc2", self.enc2), ("enc3", self.enc3), ("fuse", self.fuse), ("dec3", self.dec3), ("dec2", self.dec2), ("dec1", self.dec1), ("out", self.out)]
        return _collect([(f"{prefix}.{name}", layer) for name, layer in layers])


# ---------------------------------------------------------------------------
# bundle


class ModelBundle:
    """All learnable components plus the evaluation-time sign calibration."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.audio_encoder = AudioEncoder(cfg, stream(seed, "init.audio"))
        self.visual_encoder = VisualPairEncoder(cfg, stream(seed, "init.visual"))
        self.head_audio = AngleHead(cfg, stream(seed, "init.head_audio"))
        self.head_visual = AngleHead(cfg, stream(seed, "init.head_visual"))
        self.binauralizer = Binauralizer(cfg, stream(seed, "init.binauralizer"))
        self.calibration_sign = 1.0

    def named_tensors(self):
        out = {}
        out.update(self.audio_encoder.named_params("audio"))
        out.update(self.visual_encoder.named_params("visual"))
        out.update(self.head_audio.named_params("head_audio"))
        out.update(self.head_visual.named_params("head_visual"))
        out.update(self.binauralizer.named_params("binauralizer"))
        return out

    # inference helpers (no tape) -----------------------------------

    def detached(self):
        if getattr(self, "_detached_cache", None) is None:
            import copy

            clone = copy.copy(self)
            for attr in ("audio_encoder", "visual_encoder", "head_audio", "head_visual", "binauralizer"):
                module = copy.copy(getattr(self, attr))
                for lname, layer in vars(module).items():
                    if isinstance(layer, (Conv2d, Linear)):
                        lcopy = copy.copy(layer)
                        lcopy.w = layer.w.detach()
                        lcopy.b = layer.b.detach()
                        setattr(module, lname, lcopy)
                setattr(clone, attr, module)
            clone._detached_cache = clone
            self._detached_cache = clone
        return self._detached_cache

    def invalidate_cache(self):
        self._detached_cache = None

    def audio_features(self, planes):
        return self.detached().audio_encoder(planes).data

    def visual_features(self, corrs):
        return self.detached().visual_encoder(corrs).data

    def audio_angles(self, features):
        return self.detached().head_audio(ad.tensor(features)).data * self.calibration_sign

    def visual_angles(self, features):
        return self.detached().head_visual(ad.tensor(features)).data * self.calibration_sign

    def binauralize(self, mono_planes, fv, fa):
        return self.detached().binauralizer(mono_planes, fv, fa).data


# ---------------------------------------------------------------------------
# checkpoints


def _write_record(fh, name, arr):
    name_b = name.encode("utf-8")
    fh.write(struct.pack("<I", len(name_b)))
    fh.write(name_b)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    fh.write(struct.pack("<Q", len(payload)))
    fh.write(payload)


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def save_checkpoint(path, bundle: ModelBundle, extra_config=None, rng_state=None):
    """Write the bundle's tensors plus config (and its hash) to disk."""
    cfg_dict = {"model": bundle.cfg.to_dict(), "seed": bundle.seed, "calibration_sign": bundle.calibration_sign}
    if extra_config:
        cfg_dict["extra"] = extra_config
    cfg_json = json.dumps(cfg_dict, sort_keys=True, separators=(",", ":"))
    tensors = bundle.named_tensors()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    for blob_name, blob in (("config", cfg_json), ("config_hash", config_hash(cfg_dict)), ("rng_state", json.dumps(rng_state) if rng_state else "")):
        raw = blob.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        _write_record(buf, name, tensors[name].data)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_checkpoint(path):
    """Low-level read: returns (config dict, hash, rng_state, name->array)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})")
        blobs = []
        for what in ("config", "config_hash", "rng_state"):
            (ln,) = struct.unpack("<I", _read_exact(fh, 4, f"{what} length"))
            blobs.append(_read_exact(fh, ln, what).decode("utf-8"))
        cfg_json, stored_hash, rng_json = blobs
        cfg = json.loads(cfg_json)
        if config_hash(cfg) != stored_hash:
            raise CheckpointError("checkpoint config hash mismatch (corrupted config block)")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, nlen, "name").decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, "ndim"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "shape"))
            (plen,) = struct.unpack("<Q", _read_exact(fh, 8, "payload length"))
            payload = _read_exact(fh, plen, f"tensor {name}")
            arr = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
            tensors[name] = arr
        if fh.read(1):
            raise CheckpointError("trailing bytes after checkpoint records")
    rng_state = json.loads(rng_json) if rng_json else None
    return cfg, stored_hash, rng_state, tensors


def load_checkpoint(path):
    """Reconstruct a ModelBundle; forward outputs are bit-identical to the
    saved model."""
    cfg, _, _, tensors = read_checkpoint(path)
    bundle = ModelBundle(ModelConfig.from_dict(cfg["model"]), seed=cfg.get("seed", 0))
    bundle.calibration_sign = float(cfg.get("calibration_sign", 1.0))
    own = bundle.named_tensors()
    unknown = set(tensors) - set(own)
    missing = set(own) - set(tensors)
    if unknown:
        raise CheckpointError(f"unknown tensor names in checkpoint: {sorted(unknown)[:4]}")
    if missing:
        raise CheckpointError(f"missing tensor names in checkpoint: {sorted(missing)[:4]}")
    for name, arr in tensors.items():
        if own[name].data.shape != arr.shape:
            raise CheckpointError(f"shape mismatch for '{name}': {own[name].data.shape} vs {arr.shape}")
        own[name].data = arr.astype(np.float32)
    bundle.invalidate_cache()
    return bundle
