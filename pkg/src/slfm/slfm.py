"""Joint self-supervised training of the sound-azimuth and camera-rotation
heads: geometric consistency with front-back permutation invariance, a
binaural left/right cue loss, symmetry regularizers, mirror-ambiguity
calibration, evaluation, and linear probing."""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import dsp, sim
from .autodiff import AdamW, Tensor, cosine_lr
from .errors import ConfigError, DataError, NumericalError, SilentClipError
from .models import ModelBundle, circular_correlation, clip_planes
from .rng import stream

ALL_LOSSES = ("geo", "binaural", "sym")


# ---------------------------------------------------------------------------
# losses


def geo_loss_pit(theta_s, theta_t, phi_st):
    """Geometric consistency with permutation-invariant front-back reflection.

    Minimum over reflecting either predicted sound direction of the squared
    chord distance between the source direction and the rotated target
    direction. Returns (mean loss Tensor, per-example branch codes) where
    code bit 1 reflects the source angle and bit 0 the target angle.
    """
    theta_s, theta_t, phi_st = ad.tensor(theta_s), ad.tensor(theta_t), ad.tensor(phi_st)
    branches = []
    for ss in (1.0, -1.0):
        for st in (1.0, -1.0):
            branches.append(2.0 - 2.0 * ad.cos(theta_s * ss - theta_t * st - phi_st))
    values = np.stack([b.data for b in branches], axis=1)
    codes = np.argmin(values, axis=1)
    n = codes.shape[0]
    selected = []
    for b_idx, branch in enumerate(branches):
        mask = (codes == b_idx).astype(np.float32)
        selected.append(branch * ad.tensor(mask))
    total = selected[0] + selected[1] + selected[2] + selected[3]
    return ad.mean(total), codes


def binaural_loss(theta, d, k: float = 5.0):
    """Binary cross-entropy between the left/right cue and sign(sin theta),
    using k*sin(theta) as the logit. d=+1 means louder left."""
    theta = ad.tensor(theta)
    d_arr = np.asarray(d, dtype=np.float32).reshape(-1)
    if not np.all(np.isin(d_arr, (-1.0, 1.0))):
        raise ConfigError("binaural_loss: d must be +-1")
    y = (d_arr + 1.0) / 2.0
    z = ad.sin(theta) * float(k)
    loss = ad.softplus(-z) * ad.tensor(y) + ad.softplus(z) * ad.tensor(1.0 - y)
    return ad.mean(loss)


def sym_loss(theta, theta_flip, phi_st, phi_ts):
    """Channel-swap antisymmetry plus forward/backward pose consistency."""
    theta, theta_flip = ad.tensor(theta), ad.tensor(theta_flip)
    phi_st, phi_ts = ad.tensor(phi_st), ad.tensor(phi_ts)
    return ad.mean(ad.abs_(theta + theta_flip)) + ad.mean(ad.abs_(phi_st + phi_ts))


@dataclass
class LossBreakdown:
    geo: float
    binaural: float
    sym: float
    total: float
    lam: float
    branch_codes: np.ndarray


def combined_loss(th_s, th_t, th_s_flip, th_t_flip, phi_st, phi_ts, d_s, d_t, lam=5.0, k=5.0, losses=ALL_LOSSES):
    """Weighted total over a batch of view pairs; returns (Tensor, LossBreakdown)."""
    zero = ad.tensor(np.float32(0.0))
    codes = np.zeros(th_s.shape[0], dtype=np.int64)
    geo = binaural = symm = zero
    if "geo" in losses:
        geo, codes = geo_loss_pit(th_s, th_t, phi_st)
    if "binaural" in losses:
        binaural = (binaural_loss(th_s, d_s, k) + binaural_loss(th_t, d_t, k)) * 0.5
    if "sym" in losses:
        flip_term = (ad.mean(ad.abs_(th_s + th_s_flip)) + ad.mean(ad.abs_(th_t + th_t_flip))) * 0.5
        symm = flip_term + ad.mean(ad.abs_(phi_st + phi_ts))
    total = geo * float(lam) + binaural + symm
    breakdown = LossBreakdown(
        geo=float(geo.data),
        binaural=float(binaural.data),
        sym=float(symm.data),
        total=float(total.data),
        lam=float(lam),
        branch_codes=codes,
    )
    return total, breakdown


# ---------------------------------------------------------------------------
# data extraction: raw model inputs, then frozen features


@dataclass
class RawSplit:
    planes: np.ndarray  # (V, 4, frames, bins)
    theta_deg: np.ndarray  # (V,) dominant-source azimuth
    d_sign: np.ndarray  # (V,)
    view_keys: list  # (scene, view_id)
    pair_s: np.ndarray  # (P,) indices into views
    pair_t: np.ndarray
    corr_st: np.ndarray  # (P, 64)
    corr_ts: np.ndarray
    phi_deg: np.ndarray  # (P,)
    skipped: int = 0

    @property
    def n_views(self):
        return self.planes.shape[0]

    @property
    def n_pairs(self):
        return self.pair_s.shape[0]


@dataclass
class SplitFeatures:
    fa: np.ndarray  # (V, feature_dim)
    fa_flip: np.ndarray
    theta_deg: np.ndarray
    d_sign: np.ndarray
    view_keys: list
    pair_s: np.ndarray
    pair_t: np.ndarray
    fv_st: np.ndarray  # (P, feature_dim)
    fv_ts: np.ndarray
    phi_deg: np.ndarray
    skipped: int = 0

    @property
    def n_views(self):
        return self.fa.shape[0]

    @property
    def n_pairs(self):
        return self.pair_s.shape[0]


SWAP_PLANES = np.array([2, 3, 0, 1])


def extract_raw_split(manifest, model_cfg, split: str, max_skip_fraction: float = 0.01) -> RawSplit:
    """Model-ready inputs, IID signs, and labels for one split.

    Views whose clips are silent are skipped and counted; more than
    max_skip_fraction skips fails the run.
    """
    planes, thetas, d_signs, keys = [], [], [], []
    corr_st, corr_ts, pair_s, pair_t, phis = [], [], [], [], []
    skipped = 0
    for entry in sim.entries_in_split(manifest, split):
        views = entry["views"]
        loaded = [sim.load_view(manifest, entry, v) for v in views]
        row_of = {}
        for vi, (view, (clip, strip)) in enumerate(zip(views, loaded)):
            try:
                d = dsp.iid_sign(clip, model_cfg.stft_params)
            except SilentClipError:
                skipped += 1
                continue
            row_of[vi] = len(planes)
            planes.append(clip_planes(clip, model_cfg))
            thetas.append(view["azimuths_deg"][0])
            d_signs.append(d)
            keys.append((entry["scene"], view["id"]))
        for si in range(len(views)):
            for ti in range(si + 1, len(views)):
                if si not in row_of or ti not in row_of:
                    continue
                pair_s.append(row_of[si])
                pair_t.append(row_of[ti])
                corr_st.append(circular_correlation(loaded[si][1], loaded[ti][1]))
                corr_ts.append(circular_correlation(loaded[ti][1], loaded[si][1]))
                phis.append(sim.rotation_deg(views[si], views[ti]))

    total_views = len(planes) + skipped
    if not planes:
        raise DataError(f"split '{split}' is empty")
    if skipped > max_skip_fraction * total_views:
        raise DataError(f"{skipped}/{total_views} clips skipped as silent (> {max_skip_fraction:.0%})")
    return RawSplit(
        planes=np.stack(planes),
        theta_deg=np.array(thetas, dtype=np.float64),
        d_sign=np.array(d_signs, dtype=np.int64),
        view_keys=keys,
        pair_s=np.array(pair_s, dtype=np.int64),
        pair_t=np.array(pair_t, dtype=np.int64),
        corr_st=np.stack(corr_st) if corr_st else np.zeros((0, 64), np.float32),
        corr_ts=np.stack(corr_ts) if corr_ts else np.zeros((0, 64), np.float32),
        phi_deg=np.array(phis, dtype=np.float64),
        skipped=skipped,
    )


def featurize(bundle: ModelBundle, raw: RawSplit, batch: int = 32) -> SplitFeatures:
    """Run the frozen encoders over a raw split. Channel-swapped audio
    features reuse the same spectrogram with the L/R planes permuted."""

    def run_audio(arr):
        return np.concatenate([bundle.audio_features(arr[i : i + batch]) for i in range(0, arr.shape[0], batch)])

    def run_visual(arr):
        if arr.shape[0] == 0:
            return np.zeros((0, bundle.cfg.feature_dim), np.float32)
        return np.concatenate([bundle.visual_features(arr[i : i + batch]) for i in range(0, arr.shape[0], batch)])

    return SplitFeatures(
        fa=run_audio(raw.planes),
        fa_flip=run_audio(raw.planes[:, SWAP_PLANES]),
        theta_deg=raw.theta_deg,
        d_sign=raw.d_sign,
        view_keys=raw.view_keys,
        pair_s=raw.pair_s,
        pair_t=raw.pair_t,
        fv_st=run_visual(raw.corr_st),
        fv_ts=run_visual(raw.corr_ts),
        phi_deg=raw.phi_deg,
        skipped=raw.skipped,
    )


def extract_split_features(bundle: ModelBundle, manifest, split: str, batch: int = 32, max_skip_fraction: float = 0.01):
    return featurize(bundle, extract_raw_split(manifest, bundle.cfg, split, max_skip_fraction), batch)


# ---------------------------------------------------------------------------
# training


@dataclass
class SlfmConfig:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 1e-3
    lr_min: float = 1e-5
    weight_decay: float = 1e-4
    lam: float = 5.0
    bce_scale: float = 5.0
    mode: str = "freeze"  # freeze | finetune | random
    losses: tuple = ALL_LOSSES
    probe_pairs: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("freeze", "finetune", "random"):
            raise ConfigError(f"unknown mode '{self.mode}'")
        bad = set(self.losses) - set(ALL_LOSSES)
        if bad:
            raise ConfigError(f"unknown loss terms: {sorted(bad)}")
        self.losses = tuple(self.losses)


def _pair_batch_loss(bundle, feats: SplitFeatures, idx, cfg: SlfmConfig, modules=None):
    """Loss over pair rows idx using frozen features."""
    mods = modules if modules is not None else bundle
    s, t = feats.pair_s[idx], feats.pair_t[idx]
    th_s = mods.head_audio(ad.tensor(feats.fa[s]))
    th_t = mods.head_audio(ad.tensor(feats.fa[t]))
    th_s_flip = mods.head_audio(ad.tensor(feats.fa_flip[s]))
    th_t_flip = mods.head_audio(ad.tensor(feats.fa_flip[t]))
    phi_st = mods.head_visual(ad.tensor(feats.fv_st[idx]))
    phi_ts = mods.head_visual(ad.tensor(feats.fv_ts[idx]))
    return combined_loss(
        th_s, th_t, th_s_flip, th_t_flip, phi_st, phi_ts,
        feats.d_sign[s], feats.d_sign[t],
        lam=cfg.lam, k=cfg.bce_scale, losses=cfg.losses,
    )


def _pair_batch_loss_raw(bundle, raw: RawSplit, idx, cfg: SlfmConfig, modules=None):
    """Loss over pair rows idx computed through the encoders (finetune)."""
    mods = modules if modules is not None else bundle
    s, t = raw.pair_s[idx], raw.pair_t[idx]
    th_s = mods.head_audio(mods.audio_encoder(raw.planes[s]))
    th_t = mods.head_audio(mods.audio_encoder(raw.planes[t]))
    th_s_flip = mods.head_audio(mods.audio_encoder(raw.planes[s][:, SWAP_PLANES]))
    th_t_flip = mods.head_audio(mods.audio_encoder(raw.planes[t][:, SWAP_PLANES]))
    phi_st = mods.head_visual(mods.visual_encoder(raw.corr_st[idx]))
    phi_ts = mods.head_visual(mods.visual_encoder(raw.corr_ts[idx]))
    return combined_loss(
        th_s, th_t, th_s_flip, th_t_flip, phi_st, phi_ts,
        raw.d_sign[s], raw.d_sign[t],
        lam=cfg.lam, k=cfg.bce_scale, losses=cfg.losses,
    )


def validation_score(breakdown: LossBreakdown) -> float:
    """Label-free model-selection score; higher is better."""
    return 1.0 / (100.0 * breakdown.geo + breakdown.binaural + breakdown.sym + 1e-12)


def total_loss(bundle: ModelBundle, feats: SplitFeatures, lam=5.0, k=5.0, losses=ALL_LOSSES):
    """Loss breakdown over all pairs of a feature split (frozen features)."""
    cfg = SlfmConfig(lam=lam, bce_scale=k, losses=losses)
    idx = np.arange(feats.n_pairs)
    return _pair_batch_loss(bundle, feats, idx, cfg, modules=bundle.detached())


def _chunked_breakdown(bundle, raw: RawSplit, cfg: SlfmConfig, chunk: int = 32) -> LossBreakdown:
    """Weighted-average loss breakdown over a raw split without a tape."""
    mods = bundle.detached()
    n = raw.n_pairs
    geo = binaural = symm = total = 0.0
    codes = []
    for lo in range(0, n, chunk):
        idx = np.arange(lo, min(lo + chunk, n))
        _, bd = _pair_batch_loss_raw(bundle, raw, idx, cfg, modules=mods)
        w = len(idx) / n
        geo += bd.geo * w
        binaural += bd.binaural * w
        symm += bd.sym * w
        total += bd.total * w
        codes.append(bd.branch_codes)
    return LossBreakdown(geo, binaural, symm, total, cfg.lam, np.concatenate(codes) if codes else np.zeros(0, np.int64))


def train_slfm(manifest, bundle: ModelBundle, cfg: SlfmConfig, features=None):
    """Train the two angle heads (optionally the encoders) with the combined
    self-supervised loss; select by the label-free validation score; then
    resolve the global mirror sign on validation probe pairs.

    features: optional (train, val) SplitFeatures pair to reuse cached
    frozen features across runs.
    """
    if cfg.mode == "random":
        bundle = ModelBundle(bundle.cfg, seed=cfg.seed + 7919)
        features = None  # cached features belong to the original encoders

    finetune = cfg.mode == "finetune"
    if finetune:
        raw_train = extract_raw_split(manifest, bundle.cfg, "train")
        raw_val = extract_raw_split(manifest, bundle.cfg, "val")
        train_feats = val_feats = None
        n = raw_train.n_pairs
    else:
        if features is None:
            train_feats = extract_split_features(bundle, manifest, "train")
            val_feats = extract_split_features(bundle, manifest, "val")
        else:
            train_feats, val_feats = features
        n = train_feats.n_pairs

    params = {}
    params.update(bundle.head_audio.named_params("head_audio"))
    params.update(bundle.head_visual.named_params("head_visual"))
    if finetune:
        params.update(bundle.audio_encoder.named_params("audio"))
        params.update(bundle.visual_encoder.named_params("visual"))
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    def batch_loss(idx):
        if finetune:
            return _pair_batch_loss_raw(bundle, raw_train, idx, cfg)
        return _pair_batch_loss(bundle, train_feats, idx, cfg)

    def val_breakdown():
        if finetune:
            return _chunked_breakdown(bundle, raw_val, cfg)
        _, bd = total_loss(bundle, val_feats, cfg.lam, cfg.bce_scale, cfg.losses)
        return bd

    steps_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_steps = max(cfg.epochs * steps_per_epoch, 1)
    history = {"train_total": [], "val_total": [], "val_score": [], "aborted": False, "best_epoch": -1}
    best_score = -np.inf
    best_state = {kk: t.data.copy() for kk, t in params.items()}
    step = 0

    for epoch in range(cfg.epochs):
        order = stream(cfg.seed, "slfm.epoch", epoch).permutation(n)
        epoch_total = 0.0
        aborted = False
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            loss, breakdown = batch_loss(idx)
            if not np.isfinite(breakdown.total):
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
            epoch_total += breakdown.total * len(idx)
        if aborted:
            history["aborted"] = True
            break
        bundle.invalidate_cache()
        history["train_total"].append(epoch_total / n)
        val_bd = val_breakdown()
        score = validation_score(val_bd)
        history["val_total"].append(val_bd.total)
        history["val_score"].append(score)
        if score > best_score:
            best_score = score
            best_state = {kk: t.data.copy() for kk, t in params.items()}
            history["best_epoch"] = epoch

    for kk, t in params.items():
        t.data = best_state[kk]
    bundle.invalidate_cache()

    if finetune:
        val_feats = featurize(bundle, raw_val)
    calibration = resolve_mirror(bundle, val_feats, n_probe=cfg.probe_pairs, seed=cfg.seed)
    history["calibration_sign"] = calibration.sign
    history["skipped_train"] = raw_train.skipped if finetune else train_feats.skipped
    return bundle, history


# ---------------------------------------------------------------------------
# mirror calibration and evaluation


@dataclass
class MirrorCalibration:
    sign: int
    agree: int
    disagree: int
    tie: bool = False


def resolve_mirror(bundle: ModelBundle, probe_feats: SplitFeatures, n_probe: int = 32, seed: int = 0) -> MirrorCalibration:
    """Majority vote of sign(predicted rotation) against the known rotation
    sign on probe pairs; the resulting global sign multiplies both heads."""
    if probe_feats.n_pairs < 1:
        raise DataError("resolve_mirror: need at least one probe pair")
    n_probe = min(n_probe, probe_feats.n_pairs)
    pick = stream(seed, "mirror.probe").permutation(probe_feats.n_pairs)[:n_probe]
    bundle.calibration_sign = 1.0
    phi_hat = bundle.visual_angles(probe_feats.fv_st[pick])
    votes = np.sign(phi_hat) * np.sign(np.radians(probe_feats.phi_deg[pick]))
    agree = int((votes > 0).sum())
    disagree = int((votes < 0).sum())
    tie = agree == disagree
    if tie:
        warnings.warn("resolve_mirror: exact vote tie; keeping sign +1")
    sign = -1 if disagree > agree else 1
    bundle.calibration_sign = float(sign)
    return MirrorCalibration(sign=sign, agree=agree, disagree=disagree, tie=tie)


def _wrap_deg(a):
    return -((-np.asarray(a, dtype=np.float64) + 180.0) % 360.0 - 180.0)


def evaluate(bundle: ModelBundle, manifest, split: str = "eval", features: SplitFeatures = None, histogram_bins: int = 9):
    """Independent per-modality evaluation with the calibration applied.

    Audio MAE uses views with |azimuth| < 90 degrees; rotation MAE uses all
    pairs of the split. Chance is the constant-zero predictor on the same
    label distribution.
    """
    feats = features if features is not None else extract_split_features(bundle, manifest, split)
    front = np.abs(feats.theta_deg) < 90.0
    if front.sum() == 0 or feats.n_pairs == 0:
        raise DataError(f"evaluate: split '{split}' has no usable views/pairs")

    theta_hat = np.degrees(bundle.audio_angles(feats.fa[front]))
    theta_true = feats.theta_deg[front]
    audio_err = np.abs(_wrap_deg(theta_hat - theta_true))
    lr_mask = theta_true != 0.0
    lr_acc = float(np.mean(np.sign(np.sin(np.radians(theta_hat[lr_mask]))) == np.sign(theta_true[lr_mask])))

    phi_hat = np.degrees(bundle.visual_angles(feats.fv_st))
    rot_err = np.abs(_wrap_deg(phi_hat - feats.phi_deg))

    edges = np.linspace(-90.0, 90.0, histogram_bins + 1)
    which = np.clip(np.digitize(theta_true, edges) - 1, 0, histogram_bins - 1)
    hist = [
        {"lo": float(edges[i]), "hi": float(edges[i + 1]), "count": int((which == i).sum()),
         "mae_deg": float(audio_err[which == i].mean()) if (which == i).any() else None}
        for i in range(histogram_bins)
    ]
    return {
        "audio_mae_deg": float(audio_err.mean()),
        "rotation_mae_deg": float(rot_err.mean()),
        "left_right_accuracy": lr_acc,
        "audio_chance_deg": float(np.abs(_wrap_deg(theta_true)).mean()),
        "rotation_chance_deg": float(np.abs(_wrap_deg(feats.phi_deg)).mean()),
        "n_views": int(front.sum()),
        "n_pairs": int(feats.n_pairs),
        "skipped_views": feats.skipped,
        "calibration_sign": int(bundle.calibration_sign),
        "audio_error_histogram": hist,
    }


# ---------------------------------------------------------------------------
# linear probing


def _quantile_edges(labels, bins):
    edges = np.quantile(labels, np.linspace(0.0, 1.0, bins + 1))
    edges[0] -= 1e-9
    edges[-1] += 1e-9
    return edges


def _bin_of(labels, edges):
    return np.clip(np.digitize(labels, edges) - 1, 0, len(edges) - 2)


def linear_probe(train_features, train_labels, eval_features, eval_labels, bins: int = 16, seed: int = 0, epochs: int = 300, lr: float = 0.05):
    """Single linear layer trained with softmax cross-entropy on frozen
    features; labels are angle values binned by training-set quantiles.
    Returns top-1 accuracy (percent) on the eval set."""
    train_features = np.asarray(train_features, dtype=np.float32)
    eval_features = np.asarray(eval_features, dtype=np.float32)
    if train_features.shape[0] < bins:
        raise DataError(f"linear_probe: {train_features.shape[0]} samples < {bins} bins")
    edges = _quantile_edges(np.asarray(train_labels, dtype=np.float64), bins)
    y_train = _bin_of(train_labels, edges)
    y_eval = _bin_of(eval_labels, edges)

    dim = train_features.shape[1]
    rng = stream(seed, "probe.init")
    w = Tensor(rng.normal(0.0, 0.01, size=(dim, bins)).astype(np.float32), requires_grad=True)
    b = Tensor(np.zeros(bins, dtype=np.float32), requires_grad=True)
    onehot = np.eye(bins, dtype=np.float32)[y_train]
    opt = AdamW({"w": w, "b": b}, lr=lr, weight_decay=0.0)
    x = ad.tensor(train_features)
    for step in range(epochs):
        z = ad.matmul(x, w) + b
        shift = z.data.max(axis=1, keepdims=True)
        lse = ad.log(ad.sum_(ad.exp(z - ad.tensor(shift)), axis=1, keepdims=True)) + ad.tensor(shift)
        zy = ad.sum_(z * ad.tensor(onehot), axis=1, keepdims=True)
        loss = ad.mean(lse - zy)
        opt.zero_grad()
        loss.backward()
        opt.step(lr=cosine_lr(step, epochs, lr, lr * 0.01))
    logits = eval_features @ w.data + b.data
    return float(np.mean(np.argmax(logits, axis=1) == y_eval) * 100.0)


def probe_tasks(bundle: ModelBundle, manifest, bins: int = 16, seed: int = 0, features=None):
    """Linear-probe accuracies for the audio-azimuth and rotation tasks."""
    if features is None:
        train_feats = extract_split_features(bundle, manifest, "train")
        eval_feats = extract_split_features(bundle, manifest, "eval")
    else:
        train_feats, eval_feats = features
    audio_acc = linear_probe(train_feats.fa, train_feats.theta_deg, eval_feats.fa, eval_feats.theta_deg, bins, seed)
    rot_acc = linear_probe(train_feats.fv_st, train_feats.phi_deg, eval_feats.fv_st, eval_feats.phi_deg, bins, seed)
    return {"audio_bin_accuracy": audio_acc, "rotation_bin_accuracy": rot_acc, "bins": bins, "chance": 100.0 / bins}


# ---------------------------------------------------------------------------
# supervised reference


def supervised_reference(manifest, bundle: ModelBundle, cfg: SlfmConfig, features=None):
    """Ceiling model: same heads trained with direct L1 to ground-truth
    angles on frozen features. The audio head trains on front-hemisphere
    samples only (the symmetric head model makes rear angles unidentifiable
    from binaural cues alone)."""
    if features is None:
        train_feats = extract_split_features(bundle, manifest, "train")
        val_feats = extract_split_features(bundle, manifest, "val")
    else:
        train_feats, val_feats = features

    head_params = {}
    head_params.update(bundle.head_audio.named_params("head_audio"))
    head_params.update(bundle.head_visual.named_params("head_visual"))
    opt = AdamW(head_params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    front = np.abs(train_feats.theta_deg) < 90.0
    fa = train_feats.fa[front]
    theta_rad = np.radians(train_feats.theta_deg[front]).astype(np.float32)
    phi_rad = np.radians(train_feats.phi_deg).astype(np.float32)

    n_a, n_p = fa.shape[0], train_feats.n_pairs
    steps = max(n_a, n_p)
    spe = (steps + cfg.batch_size - 1) // cfg.batch_size
    total_steps = max(cfg.epochs * spe, 1)
    step = 0
    for epoch in range(cfg.epochs):
        rng = stream(cfg.seed, "sup.epoch", epoch)
        order_a = rng.permutation(n_a)
        order_p = rng.permutation(n_p)
        for lo in range(0, steps, cfg.batch_size):
            ia = order_a[lo % n_a : lo % n_a + cfg.batch_size]
            ip = order_p[lo % n_p : lo % n_p + cfg.batch_size]
            if ia.size == 0 or ip.size == 0:
                continue
            pred_a = bundle.head_audio(ad.tensor(fa[ia]))
            pred_p = bundle.head_visual(ad.tensor(train_feats.fv_st[ip]))
            loss = ad.mean(ad.abs_(pred_a - ad.tensor(theta_rad[ia]))) + ad.mean(
                ad.abs_(pred_p - ad.tensor(phi_rad[ip]))
            )
            opt.zero_grad()
            loss.backward()
            opt.step(lr=cosine_lr(min(step, total_steps), total_steps, cfg.lr, cfg.lr_min))
            step += 1
    bundle.calibration_sign = 1.0
    bundle.invalidate_cache()
    return bundle
