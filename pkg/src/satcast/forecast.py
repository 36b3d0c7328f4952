"""Training (Adam on MSE), the four-model horizon cascade, and baselines."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import FRAMES_PER_HOUR, N_INPUT, TrainingWindow
from .grid import Field2D, FrameSequence, GridError, Unit
from .neural import (
    CELL_KINDS,
    Arch,
    NetParams,
    load_params,
    model_backward,
    model_forward,
    save_params,
)
from .preprocess import PreprocessConfig, crop_center

log = logging.getLogger(__name__)

OFFSETS = (1, 2, 3, 4)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 25
    lr: float = 1e-3
    seed: int = 0
    shuffle: bool = True
    arch: Arch = Arch()

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and lr > 0 required")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, p: NetParams, lr: float = 1e-3) -> AdamState:
        m = {k: np.zeros_like(a) for k, a in p.arrays.items()}
        v = {k: np.zeros_like(a) for k, a in p.arrays.items()}
        return cls(m, v, 0, lr)


def adam_step(p: NetParams, g: NetParams, s: AdamState) -> tuple[NetParams, AdamState]:
    """One bias-corrected Adam update, applied in place and returned."""
    if p.arrays.keys() != g.arrays.keys() or p.arrays.keys() != s.m.keys():
        raise GridError("parameter, gradient and moment sets differ")
    s.step_count += 1
    c1 = 1.0 - s.beta1**s.step_count
    c2 = 1.0 - s.beta2**s.step_count
    for k, w in p.arrays.items():
        grad = g.arrays[k]
        if grad.shape != w.shape:
            raise GridError(f"{k}: gradient shape {grad.shape} != {w.shape}")
        m, v = s.m[k], s.v[k]
        m *= s.beta1
        m += (1 - s.beta1) * grad
        v *= s.beta2
        v += (1 - s.beta2) * grad * grad
        w -= (s.lr * (m / c1) / (np.sqrt(v / c2) + s.eps)).astype(w.dtype)
    return p, s


@dataclass
class TrainResult:
    params: NetParams
    epoch_loss: list[float] = field(default_factory=list)


def windows_to_arrays(windows: Sequence[TrainingWindow]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([w.input.to_array() for w in windows])
    y = np.stack([w.target.to_array() for w in windows])
    return x, y


def _check_windows(windows):
    if not windows:
        raise ValueError("cannot train on an empty dataset")
    offsets = {w.offset_hours for w in windows}
    if len(offsets) > 1:
        raise ValueError(f"windows mix offsets {sorted(offsets)}")


def _fit(p: NetParams, x, y, cfg: TrainConfig) -> TrainResult:
    state = AdamState.for_params(p, cfg.lr)
    rng = np.random.default_rng([cfg.seed, 1])
    n = len(x)
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = model_backward(p, x[idx], y[idx])
            adam_step(p, grads, state)
            total += loss * len(idx)
        losses.append(total / n)
        log.info("epoch %d/%d  loss %.6f", epoch + 1, cfg.epochs, losses[-1])
    return TrainResult(p, losses)


def train_model(
    windows: Sequence[TrainingWindow], cfg: TrainConfig = TrainConfig(), cell_kind="convgru"
) -> TrainResult:
    """Shuffled minibatch Adam from a seeded initialization.

    The batch gradient is the mean of the per-sample gradients.
    """
    _check_windows(windows)
    x, y = windows_to_arrays(windows)
    p = NetParams.init(cfg.arch, cell_kind, seed=cfg.seed)
    # start the linear output layer at the target mean so the step budget
    # goes into dynamics rather than into lifting the output level
    p.arrays["dec3.b"][:] = np.mean(y, dtype=np.float64)
    return _fit(p, x, y, cfg)


def fine_tune(
    p: NetParams, windows: Sequence[TrainingWindow], cfg: TrainConfig = TrainConfig()
) -> TrainResult:
    """Continue training a copy of ``p`` with fresh Adam moments."""
    _check_windows(windows)
    if p.arch != cfg.arch:
        raise ValueError(f"parameters have {p.arch}, config expects {cfg.arch}")
    x, y = windows_to_arrays(windows)
    return _fit(p.copy(), x, y, cfg)


def dataset_loss(p: NetParams, windows: Sequence[TrainingWindow], batch_size=25) -> float:
    """Mean MSE of ``p`` over ``windows`` (no training)."""
    x, y = windows_to_arrays(windows)
    total = 0.0
    for start in range(0, len(x), batch_size):
        xb, yb = x[start : start + batch_size], y[start : start + batch_size]
        pred = predict_batch(p, xb)
        total += float(np.sum(np.square(pred - yb, dtype=np.float64)))
    return total / y.size


def predict_batch(p: NetParams, x: np.ndarray) -> np.ndarray:
    """(N, 4, H, W) -> (N, 4, H, W)."""
    return model_forward(p, x)


# -- cascade ----------------------------------------------------------------


@dataclass
class CascadeModel:
    """Four independent models, one per forecast hour (offsets 1..4)."""

    models: dict[int, NetParams]
    cell_kind: str = "convgru"

    def __post_init__(self):
        if sorted(self.models) != list(OFFSETS):
            raise ValueError("a cascade needs exactly the offsets 1, 2, 3, 4")
        if self.cell_kind not in CELL_KINDS:
            raise ValueError(f"unknown cell kind {self.cell_kind!r}")
        archs = {m.arch for m in self.models.values()}
        cells = {m.cell for m in self.models.values()}
        if len(archs) != 1 or cells != {self.cell_kind}:
            raise ValueError("cascade members must share architecture and cell kind")

    @property
    def arch(self) -> Arch:
        return self.models[1].arch


def _run_parallel(fn, items, jobs):
    if jobs <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def cascade_predict_array(c: CascadeModel, x: np.ndarray, jobs=1, order=OFFSETS) -> np.ndarray:
    """(N, 4, H, W) preprocessed inputs -> (N, 16, H, W) normalized forecasts.

    Each member sees the same input; ``order`` only changes evaluation
    order, never the result.
    """
    outs = dict(zip(order, _run_parallel(lambda k: predict_batch(c.models[k], x), order, jobs)))
    return np.concatenate([outs[k] for k in OFFSETS], axis=1)


def cascade_predict(
    c: CascadeModel, inputs: FrameSequence, crop_to=252, jobs=1
) -> FrameSequence:
    """16 forecast frames (4 per hour), cropped back to the unpadded size."""
    if len(inputs) != N_INPUT:
        raise GridError(f"cascade needs {N_INPUT} input frames, got {len(inputs)}")
    y = cascade_predict_array(c, inputs.to_array()[None], jobs)[0]
    return FrameSequence(
        tuple(crop_center(Field2D(f, Unit.NORMALIZED), crop_to) for f in y)
    )


def train_cascade(
    windows_by_offset: dict[int, Sequence[TrainingWindow]],
    cfg: TrainConfig = TrainConfig(),
    cell_kind="convgru",
    jobs=1,
) -> tuple[CascadeModel, dict[int, list[float]]]:
    """Train one model per offset; member ``k`` is seeded with ``cfg.seed + k``."""

    def one(k):
        member_cfg = dataclasses.replace(cfg, seed=cfg.seed + k)
        return train_model(windows_by_offset[k], member_cfg, cell_kind)

    results = dict(zip(OFFSETS, _run_parallel(one, OFFSETS, jobs)))
    cascade = CascadeModel({k: r.params for k, r in results.items()}, cell_kind)
    return cascade, {k: r.epoch_loss for k, r in results.items()}


def persistence_predict(inputs: Sequence[Field2D], n: int) -> list[Field2D]:
    """``n`` copies of the last observed frame."""
    frames = list(inputs)
    if not frames:
        raise GridError("persistence needs at least one observed frame")
    return [frames[-1]] * n


def hour_of_lead(lead: int) -> int:
    """1-based lead index (15-min steps) -> forecast hour 1..4."""
    return (lead - 1) // FRAMES_PER_HOUR + 1


# -- checkpoints ------------------------------------------------------------

MANIFEST = "manifest.json"


def preprocess_hash(cfg: PreprocessConfig) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_cascade(c: CascadeModel, directory, pre_cfg: PreprocessConfig = PreprocessConfig()):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    for k in OFFSETS:
        name = f"offset_{k}.w4cp"
        save_params(c.models[k], d / name)
        files[str(k)] = name
    arch = c.arch
    manifest = {
        "cell_kind": c.cell_kind,
        "offsets": list(OFFSETS),
        "files": files,
        "arch": {"enc": list(arch.enc), "hidden": list(arch.hidden), "dec": list(arch.dec)},
        "preprocess": asdict(pre_cfg),
        "preprocess_hash": preprocess_hash(pre_cfg),
    }
    (d / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


class CheckpointError(ValueError):
    pass


def load_cascade(directory) -> tuple[CascadeModel, PreprocessConfig]:
    d = Path(directory)
    try:
        manifest = json.loads((d / MANIFEST).read_text())
    except FileNotFoundError:
        raise CheckpointError(f"no {MANIFEST} in {d}") from None
    pre_cfg = PreprocessConfig(**manifest["preprocess"])
    if preprocess_hash(pre_cfg) != manifest["preprocess_hash"]:
        raise CheckpointError("preprocess config does not match its recorded hash")
    models = {int(k): load_params(d / name) for k, name in manifest["files"].items()}
    arch = Arch(**{k: tuple(v) for k, v in manifest["arch"].items()})
    for k, m in models.items():
        if m.cell != manifest["cell_kind"] or m.arch != arch:
            raise CheckpointError(f"offset {k} parameters do not match the manifest")
    return CascadeModel(models, manifest["cell_kind"]), pre_cfg
