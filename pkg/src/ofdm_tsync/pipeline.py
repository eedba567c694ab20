"""Observation extraction, labelled datasets, training, and two-stage timing estimation.

Timing indices here are positions in the receive buffer. The true timing
point of a trial is where the first-path copy of the training sequence
begins, ``ng + tau``; the network learns the offset of that point below
the correlation peak ``tau_init``.
"""

from __future__ import annotations

import json
import logging
import struct
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn, seeding
from .channel import ChannelSpec, apply_channel, draw_channel, snr_to_noise_var
from .coarse import acquire_initial, cross_correlate
from .errors import ConfigurationError, DimensionError, FormatError, TrainingDivergedError, UnsupportedVersionError
from .frame import FrameSpec, generate_data_symbols, generate_zc, build_frame
from .seeding import derive_rng

log = logging.getLogger(__name__)


# -- single-observation transforms ---------------------------------------------------

def observation_start(tau_init: int, spec: FrameSpec) -> int:
    return tau_init - spec.ng + 1 if tau_init >= spec.ng - 1 else 0


def extract_observation(y: np.ndarray, tau_init: int, spec: FrameSpec) -> np.ndarray:
    """The ``Nu - 1`` samples ending ``N - 1`` past ``tau_init`` (or the buffer head
    when ``tau_init < Ng - 1``). Overruns past ``M - 1`` are zero filled."""
    y = np.asarray(y, dtype=np.complex128)
    if y.shape != (spec.m,):
        raise DimensionError(f"received length {y.shape} != M={spec.m}")
    if not 0 <= tau_init <= spec.nlag - 1:
        raise DimensionError(f"tau_init={tau_init} outside [0, {spec.nlag - 1}]")
    start = observation_start(tau_init, spec)
    length = spec.nu - 1
    r = y[start : start + length]
    if r.size < length:
        warnings.warn(
            f"observation window {start}..{start + length - 1} overruns M={spec.m}; zero filling",
            RuntimeWarning, stacklevel=2,
        )
        r = np.concatenate([r, np.zeros(length - r.size, dtype=np.complex128)])
    return r


def extract_observations(y: np.ndarray, tau_init: np.ndarray, spec: FrameSpec) -> np.ndarray:
    """Batched :func:`extract_observation` over ``(B, M)`` buffers."""
    tau_init = np.asarray(tau_init, dtype=np.int64)
    start = np.where(tau_init >= spec.ng - 1, tau_init - spec.ng + 1, 0)
    length = spec.nu - 1
    if np.any(start + length > spec.m):
        warnings.warn("observation window overruns the receive buffer; zero filling",
                      RuntimeWarning, stacklevel=2)
    padded = np.concatenate([y, np.zeros((y.shape[0], length), dtype=np.complex128)], axis=1)
    idx = start[:, None] + np.arange(length)
    return np.take_along_axis(padded, idx, axis=1)


def realify(r: np.ndarray) -> np.ndarray:
    """Interleave ``[Re r0, Im r0, Re r1, Im r1, ...]`` (works row-wise on 2-D input)."""
    r = np.asarray(r, dtype=np.complex128)
    out = np.empty(r.shape[:-1] + (2 * r.shape[-1],))
    out[..., 0::2] = r.real
    out[..., 1::2] = r.imag
    return out


def normalize_observation(r: np.ndarray) -> np.ndarray:
    """Scale each window (last axis) to unit RMS, as a receiver AGC would.

    Timing does not depend on the received amplitude, but the network's batch-norm
    layers use fixed statistics at inference, so an unnormalized deep fade would
    push activations off the training distribution. All-zero windows pass through.
    """
    r = np.asarray(r, dtype=np.complex128)
    rms = np.sqrt(np.mean(np.abs(r) ** 2, axis=-1, keepdims=True))
    return r / np.where(rms > 0, rms, 1.0)


def observation_features(y: np.ndarray, tau_init, spec: FrameSpec) -> np.ndarray:
    """Network input for ``(B, M)`` buffers (or one ``(M,)`` buffer): window, AGC, interleave."""
    y = np.asarray(y, dtype=np.complex128)
    if y.ndim == 1:
        return realify(normalize_observation(extract_observation(y, int(tau_init), spec)))
    return realify(normalize_observation(extract_observations(y, tau_init, spec)))


def label_index(tau_init: int, tau_true: int, spec: FrameSpec) -> int | None:
    """Relative offset ``tau_init - tau_true`` or ``None`` if outside ``[0, Ng-1]``."""
    tau_r = int(tau_init) - int(tau_true)
    return tau_r if 0 <= tau_r <= spec.ng - 1 else None


def make_label(tau_init: int, tau_true: int, spec: FrameSpec) -> np.ndarray | None:
    """One-hot target of length Ng, or ``None`` when the sample must be rejected."""
    idx = label_index(tau_init, tau_true, spec)
    if idx is None:
        return None
    t = np.zeros(spec.ng)
    t[idx] = 1.0
    return t


# -- simulation -------------------------------------------------------------------

@dataclass(frozen=True)
class Trial:
    y: np.ndarray
    true_start: int
    snr_db: float
    gains: np.ndarray


def simulate_trial(spec: FrameSpec, cspec: ChannelSpec, rng: np.random.Generator,
                   training: np.ndarray | None = None, snr_db: float | None = None) -> Trial:
    """One frame through one channel realization. Draw order: channel, data, noise."""
    if training is None:
        training = generate_zc(spec)
    real = draw_channel(cspec, rng)
    snr = cspec.snr_db if snr_db is None else snr_db
    if snr_db is not None:
        real = replace(real, noise_var=snr_to_noise_var(snr))
    frame = build_frame(spec, training, generate_data_symbols(spec, rng))
    y = apply_channel(frame, real, spec, rng)
    return Trial(y, spec.training_start + real.tau, float(snr), real.gains)


# -- datasets ---------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    nt: int = 50_000
    snr_range_db: tuple[float, float] = (0.0, 20.0)
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    frame: FrameSpec = field(default_factory=FrameSpec)
    seed: int = 1

    def __post_init__(self):
        if self.nt < 1:
            raise ConfigurationError(f"nt must be >= 1, got {self.nt}")
        lo, hi = self.snr_range_db
        if lo > hi:
            raise ConfigurationError(f"snr range lo={lo} > hi={hi}")
        self.channel.validate_against(self.frame)

    def to_dict(self) -> dict:
        return {"nt": self.nt, "snr_range_db": list(self.snr_range_db), "seed": self.seed,
                "channel": self.channel.to_dict(), "frame": self.frame.to_dict()}


@dataclass
class LabeledSample:
    features: np.ndarray
    label: np.ndarray
    meta: dict


@dataclass
class Dataset:
    features: np.ndarray  # (nt, 2(Nu-1)) float64
    labels: np.ndarray  # (nt,) int32 label indices
    ng: int
    tau: np.ndarray | None = None
    tau_init: np.ndarray | None = None
    snr_db: np.ndarray | None = None
    rejection_rate: float = 0.0
    config: dict = field(default_factory=dict)

    def __len__(self):
        return self.labels.shape[0]

    def one_hot(self, idx=slice(None)) -> np.ndarray:
        lab = self.labels[idx]
        out = np.zeros((lab.shape[0], self.ng))
        out[np.arange(lab.shape[0]), lab] = 1.0
        return out

    def __getitem__(self, i: int) -> LabeledSample:
        meta = {}
        if self.tau is not None:
            meta = {"tau": int(self.tau[i]), "tau_init": int(self.tau_init[i]), "snr_db": float(self.snr_db[i])}
        return LabeledSample(self.features[i], self.one_hot(slice(i, i + 1))[0], meta)


def _candidate_block(args):
    """Simulate candidates ``first..first+count-1``; top level so worker processes can run it."""
    dspec, first, count = args
    spec, cspec = dspec.frame, dspec.channel
    training = generate_zc(spec)
    lo, hi = dspec.snr_range_db
    ys = np.empty((count, spec.m), dtype=np.complex128)
    starts = np.empty(count, dtype=np.int64)
    snrs = np.empty(count)
    for j in range(count):
        rng = derive_rng(dspec.seed, seeding.DATASET, first + j)
        snr = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
        tr = simulate_trial(spec, cspec, rng, training, snr_db=snr)
        ys[j], starts[j], snrs[j] = tr.y, tr.true_start, snr
    tau_init = np.argmax(np.abs(cross_correlate(ys, training, spec.nlag).values), axis=1)
    feats = observation_features(ys, tau_init, spec)
    return feats, starts, tau_init, snrs


def _run_blocks(jobs, workers):
    if workers <= 1:
        return [_candidate_block(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_candidate_block, jobs))


def generate_dataset(dspec: DatasetSpec, workers: int = 1, block: int = 2048) -> Dataset:
    """Simulate candidates in index order and keep the first ``nt`` with a valid label.

    Candidate ``k`` always uses the stream ``derive_rng(seed, DATASET, k)``, so the
    result is independent of ``workers`` and ``block``.
    """
    spec = dspec.frame
    feats, labels, taus, inits, snrs = [], [], [], [], []
    accepted = examined = 0
    next_idx = 0
    while accepted < dspec.nt:
        want = dspec.nt - accepted
        # over-provision a little for rejections, in worker-sized blocks
        total = max(int(want * 1.05) + 16, 1)
        jobs = []
        for first in range(next_idx, next_idx + total, block):
            jobs.append((dspec, first, min(block, next_idx + total - first)))
        next_idx += total
        for f, start, ti, snr in _run_blocks(jobs, workers):
            tau_r = ti - start
            ok = (tau_r >= 0) & (tau_r <= spec.ng - 1)
            for j in range(len(ok)):
                if accepted >= dspec.nt:
                    break
                examined += 1
                if ok[j]:
                    feats.append(f[j])
                    labels.append(tau_r[j])
                    taus.append(start[j])
                    inits.append(ti[j])
                    snrs.append(snr[j])
                    accepted += 1
        if examined >= 64 and (examined - accepted) / examined > 0.5:
            raise ConfigurationError(
                f"coarse acquisition rejected {examined - accepted}/{examined} candidates; "
                "settings leave the first path outside the search window too often"
            )
    rate = (examined - accepted) / examined
    log.info("dataset: %d accepted, %d examined, rejection rate %.4f", accepted, examined, rate)
    return Dataset(
        features=np.asarray(feats, dtype=np.float64).reshape(dspec.nt, spec.feature_len),
        labels=np.asarray(labels, dtype=np.int32),
        ng=spec.ng,
        tau=np.asarray(taus, dtype=np.int64),
        tau_init=np.asarray(inits, dtype=np.int64),
        snr_db=np.asarray(snrs),
        rejection_rate=rate,
        config=dspec.to_dict(),
    )


# Dataset file (little-endian):
#   8 bytes magic b"OFDMDSET", u32 version (1), u32 count, u32 feature length, u32 ng
#   f64[count * feature length] feature rows, then i32[count] label indices
# plus a sidecar "<path>.meta.json" with the generating config.
DATASET_MAGIC = b"OFDMDSET"
DATASET_VERSION = 1
_DS_HEADER = struct.Struct("<8s4I")


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_DS_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, len(ds), ds.features.shape[1], ds.ng))
        fh.write(np.ascontiguousarray(ds.features, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.labels, dtype="<i4").tobytes())
    meta = {"config": ds.config, "rejection_rate": ds.rejection_rate, "count": len(ds),
            "feature_len": int(ds.features.shape[1]), "ng": ds.ng}
    with open(f"{path}.meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _DS_HEADER.size:
        raise FormatError("dataset file too short for header")
    magic, version, count, flen, ng = _DS_HEADER.unpack_from(data)
    if magic != DATASET_MAGIC:
        raise FormatError(f"bad dataset magic {magic!r}")
    if version != DATASET_VERSION:
        raise UnsupportedVersionError(f"dataset version {version} unsupported")
    need = _DS_HEADER.size + count * flen * 8 + count * 4
    if len(data) != need:
        raise FormatError(f"dataset length {len(data)} != expected {need}")
    off = _DS_HEADER.size
    feats = np.frombuffer(data, "<f8", count * flen, off).reshape(count, flen).astype(np.float64)
    labels = np.frombuffer(data, "<i4", count, off + count * flen * 8).astype(np.int32)
    config, rate = {}, 0.0
    try:
        with open(f"{path}.meta.json") as fh:
            meta = json.load(fh)
        config, rate = meta.get("config", {}), meta.get("rejection_rate", 0.0)
    except FileNotFoundError:
        pass
    return Dataset(feats, labels, ng, rejection_rate=rate, config=config)


# -- training ---------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    patience: int = 8
    val_fraction: float = 0.1
    loss: str = "bce"
    seed: int = 2

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise ConfigurationError("need epochs >= 1 and batch_size >= 2")
        if not 0 <= self.val_fraction < 1:
            raise ConfigurationError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.loss not in nn.LOSSES:
            raise ConfigurationError(f"loss must be one of {nn.LOSSES}, got {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


def _mean_loss(model, x, target, loss, batch=4096):
    total = 0.0
    for i in range(0, x.shape[0], batch):
        _, cache = nn.forward(model, x[i : i + batch], nn.INFERENCE)
        total += nn.loss_value(cache, target[i : i + batch], loss) * cache.output.shape[0]
    return total / x.shape[0]


def train(dataset: Dataset, model: nn.NetworkModel, cfg: TrainConfig = TrainConfig(),
          progress=None) -> tuple[nn.NetworkModel, list[EpochRecord]]:
    """Mini-batch Adam with a held-out validation split and early stopping.

    Returns the model with the best validation loss (the final one when
    ``val_fraction`` is 0) and the per-epoch loss history.
    """
    if len(dataset) == 0:
        raise ConfigurationError("empty dataset")
    if dataset.features.shape[1] != model.input_len or dataset.ng != model.ng:
        raise DimensionError(
            f"dataset ({dataset.features.shape[1]}, ng={dataset.ng}) does not fit model "
            f"({model.input_len}, ng={model.ng})"
        )
    rng = derive_rng(cfg.seed, seeding.TRAIN)
    order = rng.permutation(len(dataset))
    n_val = int(round(cfg.val_fraction * len(dataset)))
    val_idx, tr_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
    if tr_idx.size < 2:
        raise ConfigurationError("need at least two training samples")
    x_tr, t_tr = dataset.features[tr_idx], dataset.one_hot(tr_idx)
    x_val, t_val = dataset.features[val_idx], dataset.one_hot(val_idx)

    model = model.copy()
    state = nn.TrainState.for_model(model, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps_adam)
    history: list[EpochRecord] = []
    best, best_val, stale = model.copy(), np.inf, 0
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(tr_idx.size)
        loss_sum = 0.0
        for i in range(0, perm.size, cfg.batch_size):
            bi = perm[i : i + cfg.batch_size]
            if bi.size < 2:  # batch norm cannot train on a single sample
                continue
            out, cache = nn.forward(model, x_tr[bi], nn.TRAINING)
            loss = nn.loss_value(cache, t_tr[bi], cfg.loss)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {i // cfg.batch_size}",
                                            epoch=epoch, step=state.step, last_loss=loss)
            loss_sum += loss * bi.size
            grads = nn.backward(model, cache, t_tr[bi], cfg.loss)
            model, state = nn.adam_step(model, grads, state)
        train_loss = loss_sum / perm.size
        val_loss = _mean_loss(model, x_val, t_val, cfg.loss) if n_val else float("nan")
        if n_val and not np.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}",
                                        epoch=epoch, step=state.step, last_loss=val_loss)
        history.append(EpochRecord(epoch, float(train_loss), float(val_loss)))
        if progress:
            progress(history[-1])
        log.info("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
        if not n_val:
            best = model
            continue
        if val_loss < best_val:
            best, best_val, stale = model.copy(), val_loss, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    best.mode = nn.INFERENCE
    return best, history


# -- online estimation ------------------------------------------------------------

@dataclass(frozen=True)
class TimingEstimate:
    tau_hat: int
    tau_init: int
    tau_r: int


def estimate_timing_batch(y: np.ndarray, model: nn.NetworkModel, spec: FrameSpec,
                          training: np.ndarray | None = None):
    """Two-stage estimates for ``(B, M)`` buffers; returns ``(tau_hat, tau_init, tau_r)`` arrays."""
    y = np.asarray(y, dtype=np.complex128)
    if y.ndim != 2 or y.shape[1] != spec.m:
        raise DimensionError(f"received block shape {y.shape} incompatible with M={spec.m}")
    if training is None:
        training = generate_zc(spec)
    tau_init = np.argmax(np.abs(cross_correlate(y, training, spec.nlag).values), axis=1)
    feats = observation_features(y, tau_init, spec)
    tau_r = np.argmax(nn.predict(model, feats), axis=1)
    return tau_init - tau_r, tau_init, tau_r


def estimate_timing(y: np.ndarray, model: nn.NetworkModel, spec: FrameSpec,
                    training: np.ndarray | None = None) -> TimingEstimate:
    y = np.asarray(y, dtype=np.complex128)
    if y.shape != (spec.m,):
        raise DimensionError(f"received length {y.shape} != M={spec.m}")
    if training is None:
        training = generate_zc(spec)
    est = acquire_initial(cross_correlate(y, training, spec.nlag), spec)
    feats = observation_features(y, est.tau_init, spec)
    out, _ = nn.forward(model, feats[None], nn.INFERENCE)
    tau_r = int(np.argmax(out[0]))
    return TimingEstimate(est.tau_init - tau_r, est.tau_init, tau_r)
