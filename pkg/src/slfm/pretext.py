"""Cross-view binauralization pretraining and pose-from-audio prompting.

The pretext task: given the target view's mono mix spectrogram plus
conditioning features from a source view (binaural audio embedding) and the
view pair (panorama correlation embedding), predict the target's stereo
difference spectrogram with an L1 loss. Training this way forces all
left/right information through the conditioning features, since the mono
input is channel-swap invariant.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import dsp, sim
from .autodiff import AdamW, cosine_lr
from .errors import ConfigError, NumericalError
from .models import (
    ModelBundle,
    ModelConfig,
    circular_correlation,
    clip_planes,
    planes_to_complex,
    pretext_planes,
)
from .rng import stream


@dataclass
class PretextConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-4
    lr_min: float = 1e-5
    weight_decay: float = 1e-4
    patience: int = 5
    n_targets: int = 1
    features: str = "both"  # both | fv | fa | none
    seed: int = 0

    def __post_init__(self):
        if self.features not in ("both", "fv", "fa", "none"):
            raise ConfigError(f"unknown feature ablation '{self.features}'")
        if self.n_targets not in (1, 2):
            raise ConfigError("n_targets must be 1 or 2 at desk scale")


def build_rows(manifest, cfg: ModelConfig, split: str, n_targets: int = 1):
    """Stack model-ready (source, target) rows for one split.

    Samples pair view i with the next n_targets views; with constant targets
    per sample, the multi-view mean loss equals the mean over rows.
    """
    src, corr, mono, target = [], [], [], []
    for entry in sim.entries_in_split(manifest, split):
        views = entry["views"]
        loaded = [sim.load_view(manifest, entry, v) for v in views]
        planes_cache, pret_cache = {}, {}
        for i in range(len(views) - n_targets):
            if i not in planes_cache:
                planes_cache[i] = clip_planes(loaded[i][0], cfg)
            for t in range(i + 1, i + 1 + n_targets):
                if t not in pret_cache:
                    pret_cache[t] = pretext_planes(loaded[t][0], cfg)
                src.append(planes_cache[i])
                corr.append(circular_correlation(loaded[i][1], loaded[t][1]))
                mono.append(pret_cache[t][0])
                target.append(pret_cache[t][1])
    if not src:
        raise ConfigError(f"split '{split}' has no usable samples")
    return {
        "src": np.stack(src),
        "corr": np.stack(corr),
        "mono": np.stack(mono),
        "target": np.stack(target),
    }


def _slice_rows(rows, idx):
    return {k: v[idx] for k, v in rows.items()}


def pretext_loss(bundle_like, rows, features: str = "both"):
    """Mean L1 between predicted and true difference spectrograms (Tensor)."""
    fa = bundle_like.audio_encoder(rows["src"])
    fv = bundle_like.visual_encoder(rows["corr"])
    if features in ("fv", "none"):
        fa = fa * 0.0
    if features in ("fa", "none"):
        fv = fv * 0.0
    pred = bundle_like.binauralizer(rows["mono"], fv, fa)
    return ad.mean(ad.abs_(pred - ad.tensor(rows["target"])))


def zero_prediction_baseline(rows) -> float:
    return float(np.mean(np.abs(rows["target"]), dtype=np.float64))


def _batched_loss(bundle, rows, batch_size, features):
    n = rows["src"].shape[0]
    total = 0.0
    frozen = bundle.detached()
    for lo in range(0, n, batch_size):
        idx = slice(lo, min(lo + batch_size, n))
        loss = pretext_loss(frozen, _slice_rows(rows, idx), features)
        total += float(loss.data) * (idx.stop - idx.start)
    return total / n


def train_pretext(manifest, model_cfg: ModelConfig, cfg: PretextConfig):
    """Train binauralizer + both encoders on the manifest's train split.

    Returns (bundle, history). Early-stops on a val-loss plateau and restores
    the best-validation weights; a NaN loss aborts with the last good state.
    """
    bundle = ModelBundle(model_cfg, seed=cfg.seed)
    train_rows = build_rows(manifest, model_cfg, "train", cfg.n_targets)
    val_rows = build_rows(manifest, model_cfg, "val", cfg.n_targets)
    baseline = zero_prediction_baseline(val_rows)

    trainable = {k: t for k, t in bundle.named_tensors().items() if not k.startswith("head_")}
    opt = AdamW(trainable, lr=cfg.lr, weight_decay=cfg.weight_decay)

    n = train_rows["src"].shape[0]
    steps_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_steps = max(cfg.epochs * steps_per_epoch, 1)

    history = {"train": [], "val": [], "baseline": baseline, "aborted": False, "best_epoch": -1}
    best_val = np.inf
    best_state = {k: t.data.copy() for k, t in trainable.items()}
    since_best = 0
    step = 0

    for epoch in range(cfg.epochs):
        order = stream(cfg.seed, "pretext.epoch", epoch).permutation(n)
        epoch_loss = 0.0
        aborted = False
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            loss = pretext_loss(bundle, _slice_rows(train_rows, idx), cfg.features)
            value = float(loss.data)
            if not np.isfinite(value):
                aborted = True
                break
            opt.zero_grad()
            loss.backward()
            try:
                opt.step(lr=cosine_lr(step, total_steps, cfg.lr, cfg.lr_min))
            except NumericalError:
                aborted = True
                break
            step += 1
            epoch_loss += value * len(idx)
        if aborted:
            history["aborted"] = True
            break
        history["train"].append(epoch_loss / n)
        val_loss = _batched_loss(bundle, val_rows, cfg.batch_size, cfg.features)
        history["val"].append(val_loss)
        if val_loss < best_val - 1e-6:
            best_val = val_loss
            best_state = {k: t.data.copy() for k, t in trainable.items()}
            history["best_epoch"] = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break

    for k, t in trainable.items():
        t.data = best_state[k]
    bundle.invalidate_cache()
    history["best_val"] = float(best_val) if np.isfinite(best_val) else None
    return bundle, history


# ---------------------------------------------------------------------------
# audio prompting


def _aligned_profile(vals_l, vals_r, floor=1e-6):
    """Per-frame log10 level ratio over fixed frame count (invalid frames 0)."""
    sl = np.abs(vals_l).sum(axis=1)
    sr = np.abs(vals_r).sum(axis=1)
    valid = (sl > floor) & (sr > floor)
    prof = np.zeros(vals_l.shape[0], dtype=np.float32)
    prof[valid] = np.log10(sl[valid] / sr[valid])
    return prof


def _clip_aligned_profile(clip, cfg: ModelConfig):
    vals = dsp.fix_frames(dsp.stft_clip(clip, cfg.stft_params).values, cfg.frames)
    return _aligned_profile(vals[0], vals[1])


@dataclass
class PromptBank:
    angles_deg: np.ndarray
    profiles: np.ndarray  # (n_angles, frames)
    prompt_index: int
    distance: float
    signal_kind: str
    seed: int

    @property
    def size(self):
        return self.angles_deg.shape[0]


def build_prompt_bank(model_cfg: ModelConfig, seed: int = 0, distance: float = 1.5, kind: str = "speech_like") -> PromptBank:
    """181 anechoic renders at 1-degree azimuth spacing with cached level
    profiles; the 0-degree entry is the source prompt."""
    angles = np.arange(-90, 91, dtype=np.float64)
    signal = sim.synth_source_signal(kind, model_cfg.clip_seconds, stream(seed, "bank.signal"), model_cfg.sample_rate)
    profiles = np.stack(
        [_clip_aligned_profile(sim.render_direct(signal, a, distance, model_cfg.sample_rate), model_cfg) for a in angles]
    )
    return PromptBank(
        angles_deg=angles,
        profiles=profiles,
        prompt_index=int(np.where(angles == 0)[0][0]),
        distance=distance,
        signal_kind=kind,
        seed=seed,
    )


def _windowed_mode(votes, window=2.0, iterations=2):
    votes = np.asarray(votes, dtype=np.float64)
    edges = np.arange(-90.5, 91.5, 1.0)
    hist, _ = np.histogram(votes, bins=edges)
    center = float(edges[int(np.argmax(hist))] + 0.5)
    for _ in range(iterations):
        near = votes[np.abs(votes - center) <= window]
        if near.size:
            center = float(near.mean())
    return center


def prompt_pose(strip_s, strip_t, bundle: ModelBundle, bank: PromptBank, n_prompts: int = 64, seed: int = 0, predictor=None):
    """Rotation estimate from the binauralizer alone.

    Feeds a zero-azimuth binaural prompt as the source view audio and the
    prompt's mono mix as the target input; the predicted stereo's level
    profile is matched against the bank to get the implied target azimuth.
    Votes over prompt realizations are pooled with a windowed mode.
    """
    cfg = bundle.cfg
    corr = circular_correlation(strip_s, strip_t)
    fv = bundle.visual_features(corr[None, :])

    votes = np.empty(n_prompts, dtype=np.float64)
    for k in range(n_prompts):
        sig = sim.synth_source_signal(bank.signal_kind, cfg.clip_seconds, stream(seed, "prompt", k), cfg.sample_rate)
        prompt_clip = sim.render_direct(sig, 0.0, bank.distance, cfg.sample_rate)
        mono, _ = pretext_planes(prompt_clip, cfg)
        if predictor is not None:
            pred = predictor(prompt_clip, mono)
        else:
            fa = bundle.audio_features(clip_planes(prompt_clip, cfg)[None])
            pred = bundle.binauralize(mono[None], fv, fa)[0]
        if float(np.mean(np.abs(pred))) < 1e-7:
            raise NumericalError("prompt_pose: binauralizer output is zero (untrained model); matching is degenerate")
        mix = planes_to_complex(mono, cfg)
        diff = planes_to_complex(pred, cfg)
        left = (mix + diff) / 2.0
        right = (mix - diff) / 2.0
        profile = _aligned_profile(left, right)
        dists = np.mean(np.abs(bank.profiles - profile[None, :]), axis=1)
        votes[k] = -bank.angles_deg[int(np.argmin(dists))]
    return _windowed_mode(votes), votes
