"""Windowed training examples from channel series.

Pipeline: featurize each snapshot (stacked Re/Im of the column-major
vectorized effective channel plus the scalar speed), difference consecutive
snapshots into increment targets, cut sliding windows, then split train/val
along the time axis of each trajectory with a leakage gap and fit z-score
normalization on the training split only.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelSeries, collapse_paths
from .errors import ConfigError, ContractError

TRAIN, VAL, TEST = 0, 1, 2
_SPLIT_NAMES = {"train": TRAIN, "val": VAL, "test": TEST}

__all__ = [
    "Normalizer",
    "WindowSet",
    "featurize",
    "leakage_audit",
    "load_windowset",
    "loss_weights",
    "make_increments",
    "merge",
    "normalize_with",
    "save_windowset",
    "split_and_normalize",
    "window",
    "windows_from_series",
]


def _realvec(effective: np.ndarray) -> np.ndarray:
    """Column-major vec of each snapshot, Re stacked over Im -> [Ts, 2RT]."""
    r, t, ts = effective.shape
    m = effective.reshape(r * t, ts, order="F")           # vec runs over rx fastest
    return np.concatenate([m.real.T, m.imag.T], axis=1)


def featurize(effective: np.ndarray, speed: np.ndarray) -> np.ndarray:
    """Per-snapshot feature frames [Ts, D] with D = 2*R*T + 1.

    Frame t is [Re(vec(H_t)); Im(vec(H_t)); v_t]; vec is column-major over
    (rx, tx), i.e. the receive index varies fastest.
    """
    if effective.shape[-1] != speed.shape[0]:
        raise ContractError(
            f"effective has {effective.shape[-1]} snapshots but speed has {speed.shape[0]}")
    return np.concatenate([_realvec(effective), speed[:, None]], axis=1)


def make_increments(effective: np.ndarray) -> np.ndarray:
    """One-step channel differences in real-vector form -> [Ts-1, C]."""
    if effective.shape[-1] < 2:
        raise ContractError("need at least two snapshots to form increments")
    rv = _realvec(effective)
    return rv[1:] - rv[:-1]


def loss_weights(n_l: int) -> np.ndarray:
    """Per-step loss weights k^(-1/2), k = 1..n_l (not renormalized)."""
    if n_l < 1:
        raise ContractError("horizon must be >= 1")
    return 1.0 / np.sqrt(np.arange(1, n_l + 1, dtype=np.float64))


@dataclass
class Normalizer:
    """Z-score statistics: per input feature and per target channel."""

    input_mean: np.ndarray
    input_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray

    def normalize_inputs(self, x):
        return (x - self.input_mean) / self.input_std

    def denormalize_inputs(self, x):
        return x * self.input_std + self.input_mean

    def normalize_targets(self, y):
        return (y - self.target_mean) / self.target_std

    def denormalize_targets(self, y):
        return y * self.target_std + self.target_mean


@dataclass
class WindowSet:
    """Sliding windows with split tags and (optional) fitted normalization.

    inputs [N, n_p, D], targets [N, n_l, C]. traj_id/start locate each
    window's frames inside its source trajectory (needed for the leakage
    audit); traj_frames holds per-trajectory snapshot counts.
    """

    inputs: np.ndarray
    targets: np.ndarray
    split: np.ndarray                 # uint8 codes; 255 = untagged
    traj_id: np.ndarray
    start: np.ndarray
    traj_frames: np.ndarray
    stride: int = 1
    normalizer: Normalizer | None = None
    gap: int | None = None

    @property
    def n_p(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_l(self) -> int:
        return self.targets.shape[1]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[2]

    @property
    def target_dim(self) -> int:
        return self.targets.shape[2]

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def mask(self, split: str) -> np.ndarray:
        return self.split == _SPLIT_NAMES[split]

    def subset_arrays(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        m = self.mask(split)
        return self.inputs[m], self.targets[m]


def window(frames: np.ndarray, inc: np.ndarray, n_p: int, n_l: int,
           stride: int = 1, traj_id: int = 0) -> WindowSet:
    """Cut sliding windows from one trajectory (untagged, unnormalized).

    Window i covers input frames [i*stride, i*stride + n_p) and targets the
    n_l increments that follow the last input frame.
    """
    if n_p < 1 or n_l < 1 or stride < 1:
        raise ContractError("n_p, n_l and stride must all be >= 1")
    ts = frames.shape[0]
    if inc.shape[0] != ts - 1:
        raise ContractError(f"got {inc.shape[0]} increments for {ts} frames")
    if ts < n_p + n_l:
        raise ConfigError(f"{ts} frames cannot fit a window of {n_p}+{n_l}")
    count = (ts - n_p - n_l) // stride + 1
    d, c = frames.shape[1], inc.shape[1]
    inputs = np.empty((count, n_p, d))
    targets = np.empty((count, n_l, c))
    for i in range(count):
        s = i * stride
        inputs[i] = frames[s:s + n_p]
        targets[i] = inc[s + n_p - 1:s + n_p - 1 + n_l]
    return WindowSet(
        inputs=inputs, targets=targets,
        split=np.full(count, 255, dtype=np.uint8),
        traj_id=np.full(count, traj_id, dtype=np.int32),
        start=np.arange(count, dtype=np.int64) * stride,
        traj_frames=np.array([ts], dtype=np.int64),
        stride=stride)


def merge(sets: list[WindowSet]) -> WindowSet:
    """Concatenate per-trajectory window sets, renumbering trajectories."""
    if not sets:
        raise ContractError("nothing to merge")
    parts, ids, frames = [], [], []
    offset = 0
    for ws in sets:
        ids.append(ws.traj_id + offset)
        frames.append(ws.traj_frames)
        parts.append(ws)
        offset += len(ws.traj_frames)
    return WindowSet(
        inputs=np.concatenate([w.inputs for w in parts]),
        targets=np.concatenate([w.targets for w in parts]),
        split=np.concatenate([w.split for w in parts]),
        traj_id=np.concatenate(ids),
        start=np.concatenate([w.start for w in parts]),
        traj_frames=np.concatenate(frames),
        stride=parts[0].stride)


def windows_from_series(series_list: list[ChannelSeries], n_p: int, n_l: int,
                        stride: int = 1) -> WindowSet:
    """Featurize, difference and window a batch of trajectories."""
    sets = []
    for k, series in enumerate(series_list):
        eff = collapse_paths(series)
        frames = featurize(eff, series.speed)
        inc = make_increments(eff)
        sets.append(window(frames, inc, n_p, n_l, stride, traj_id=k))
    return merge(sets)


def split_and_normalize(ws: WindowSet, train_frac: float, gap: int) -> WindowSet:
    """Tag windows train/val per trajectory and fit train-only z-scores.

    Within each trajectory the first train_frac of frames feeds the training
    split, the next `gap` frames are discarded, and the remainder feeds
    validation; windows straddling either boundary are dropped.
    """
    if not (0.0 < train_frac < 1.0):
        raise ContractError(f"train_frac must be in (0, 1), got {train_frac}")
    if gap < 0:
        raise ContractError("gap must be >= 0")

    span = ws.n_p + ws.n_l           # frames consumed by one window
    last = ws.start + span - 1
    train_end = np.floor(train_frac * ws.traj_frames[ws.traj_id]).astype(np.int64)
    is_train = last < train_end
    is_val = ws.start >= train_end + gap
    keep = is_train | is_val
    if not is_train.any():
        raise ConfigError("training split is empty; trajectories too short for this split")
    if not is_val.any():
        raise ConfigError(
            f"validation split is empty; need frames beyond train_frac + gap of {gap}")

    split = np.full(len(ws), 255, dtype=np.uint8)
    split[is_train] = TRAIN
    split[is_val] = VAL
    inputs = ws.inputs[keep].copy()
    targets = ws.targets[keep].copy()
    split = split[keep]

    tr = split == TRAIN
    flat_in = inputs[tr].reshape(-1, ws.input_dim)
    flat_tg = targets[tr].reshape(-1, ws.target_dim)
    norm = Normalizer(
        input_mean=flat_in.mean(axis=0),
        input_std=np.maximum(flat_in.std(axis=0), 1e-8),
        target_mean=flat_tg.mean(axis=0),
        target_std=np.maximum(flat_tg.std(axis=0), 1e-8),
    )
    return WindowSet(
        inputs=norm.normalize_inputs(inputs),
        targets=norm.normalize_targets(targets),
        split=split,
        traj_id=ws.traj_id[keep],
        start=ws.start[keep],
        traj_frames=ws.traj_frames.copy(),
        stride=ws.stride,
        normalizer=norm,
        gap=gap)


def normalize_with(ws: WindowSet, norm: Normalizer, tag: str = "test") -> WindowSet:
    """Apply an existing normalizer (e.g. for held-out scenario data)."""
    return replace(
        ws,
        inputs=norm.normalize_inputs(ws.inputs),
        targets=norm.normalize_targets(ws.targets),
        split=np.full(len(ws), _SPLIT_NAMES[tag], dtype=np.uint8),
        normalizer=norm)


def leakage_audit(ws: WindowSet) -> dict:
    """Verify the split hygiene of a normalized WindowSet.

    Returns min_gap_frames (frames strictly between the last train frame and
    the first val frame, per trajectory, minimized), whether any frame index
    is shared between splits, and whether the stored normalizer matches a
    train-only refit.
    """
    if ws.normalizer is None or ws.gap is None:
        raise ContractError("audit needs a split and normalized WindowSet")
    span = ws.n_p + ws.n_l
    min_gap = None
    overlap = False
    for tid in np.unique(ws.traj_id):
        m = ws.traj_id == tid
        tr = m & (ws.split == TRAIN)
        va = m & (ws.split == VAL)
        if not tr.any() or not va.any():
            continue
        train_last = int((ws.start[tr] + span - 1).max())
        val_first = int(ws.start[va].min())
        between = val_first - train_last - 1
        min_gap = between if min_gap is None else min(min_gap, between)
        overlap = overlap or between < 0

    tr = ws.split == TRAIN
    refit_in_mean = ws.inputs[tr].reshape(-1, ws.input_dim).mean(axis=0)
    refit_tg_mean = ws.targets[tr].reshape(-1, ws.target_dim).mean(axis=0)
    # data are stored normalized, so a train-only fit must give mean 0 / std 1
    train_only = bool(
        np.abs(refit_in_mean).max() < 1e-9
        and np.abs(refit_tg_mean).max() < 1e-9
        and np.abs(ws.inputs[tr].reshape(-1, ws.input_dim).std(axis=0) - 1.0).max() < 1e-6
        and np.abs(ws.targets[tr].reshape(-1, ws.target_dim).std(axis=0) - 1.0).max() < 1e-6)
    return {
        "min_gap_frames": min_gap,
        "gap_ok": min_gap is not None and min_gap >= ws.gap,
        "no_overlap": not overlap,
        "normalizer_train_only": train_only,
    }


# -- window file format (CSIW1) ----------------------------------------------
#
# ASCII header:  CSIW1 num N_P N_L D C
# normalizer block: input mean/std then target mean/std, little-endian float32
# then per window: one split-code byte, float32 inputs, float32 targets.


def save_windowset(ws: WindowSet, path) -> None:
    if ws.normalizer is None:
        raise ContractError("CSIW1 stores normalized window sets only")
    n = len(ws)
    header = f"CSIW1 {n} {ws.n_p} {ws.n_l} {ws.input_dim} {ws.target_dim}\n"
    norm = ws.normalizer
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for arr in (norm.input_mean, norm.input_std, norm.target_mean, norm.target_std):
            fh.write(arr.astype("<f4").tobytes())
        for i in range(n):
            fh.write(bytes([int(ws.split[i])]))
            fh.write(ws.inputs[i].astype("<f4").tobytes())
            fh.write(ws.targets[i].astype("<f4").tobytes())


def load_windowset(path) -> WindowSet:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 6 or header[0] != "CSIW1":
            raise ConfigError(f"{path}: not a CSIW1 window file")
        n, n_p, n_l, d, c = (int(v) for v in header[1:])

        def block(count):
            return np.frombuffer(fh.read(count * 4), dtype="<f4").astype(np.float64)

        norm = Normalizer(block(d), block(d), block(c), block(c))
        inputs = np.empty((n, n_p, d))
        targets = np.empty((n, n_l, c))
        split = np.empty(n, dtype=np.uint8)
        for i in range(n):
            split[i] = fh.read(1)[0]
            inputs[i] = block(n_p * d).reshape(n_p, d)
            targets[i] = block(n_l * c).reshape(n_l, c)
    return WindowSet(
        inputs=inputs, targets=targets, split=split,
        traj_id=np.zeros(n, dtype=np.int32),
        start=np.zeros(n, dtype=np.int64),
        traj_frames=np.zeros(0, dtype=np.int64),
        normalizer=norm)
