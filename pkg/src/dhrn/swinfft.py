"""Sliding-window + FFT augmentation, integer decimation and the on-disk
spectrum dataset.

The FFT is an iterative radix-2 decimation-in-time transform vectorised over
any leading axes, so a whole stack of windows is transformed in one call.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DhrnError,
    FactorTooLarge,
    NonFiniteInput,
    SignalShorterThanWindow,
)
from .signals import (
    Detection,
    FlowLabel,
    Intensity,
    Manifest,
    Signal,
    Split,
)

log = logging.getLogger(__name__)

SPLITS = (Split.TRAIN, Split.VAL, Split.TEST)


def next_pow2(n: int) -> int:
    if n < 1:
        raise ValueError("length must be positive")
    return 1 << (n - 1).bit_length()


def _bit_reverse_permutation(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(x) -> np.ndarray:
    """Radix-2 complex FFT along the last axis (length must be a power of two)."""
    a = np.asarray(x, dtype=np.complex128)
    n = a.shape[-1]
    if n & (n - 1) or n == 0:
        raise ValueError(f"radix-2 FFT needs a power-of-two length, got {n}")
    lead = a.shape[:-1]
    a = a[..., _bit_reverse_permutation(n)]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(lead + (n // size, size))
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        a = np.concatenate((even + odd, even - odd), axis=-1).reshape(lead + (n,))
        size *= 2
    return a


def ifft(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.complex128)
    return np.conj(fft(np.conj(X))) / X.shape[-1]


def rfft(window) -> np.ndarray:
    """One-sided complex spectrum of a real window zero-padded to a power of two.

    Works on a single window or a stack of windows (last axis = time).
    """
    w = np.asarray(window, dtype=np.float64)
    n = w.shape[-1]
    if n == 0:
        raise NonFiniteInput("empty window")
    if not np.all(np.isfinite(w)):
        raise NonFiniteInput("window contains NaN or Inf")
    p = next_pow2(n)
    if p != n:
        pad = [(0, 0)] * (w.ndim - 1) + [(0, p - n)]
        w = np.pad(w, pad)
    return fft(w)[..., : p // 2 + 1]


def rfft_magnitude(window) -> np.ndarray:
    """|X[k]| for k = 0..P/2 where P is the next power of two >= len(window)."""
    return np.abs(rfft(window))


def spectrum_length(w_size: int) -> int:
    return next_pow2(w_size) // 2 + 1


@dataclass(frozen=True)
class WindowConfig:
    w_size: int
    stride: int | None = None  # None means non-overlapping (stride == w_size)

    def __post_init__(self):
        if self.w_size < 1:
            raise ValueError("w_size must be positive")
        if self.stride is not None and not 1 <= self.stride <= self.w_size:
            raise ValueError("stride must satisfy 1 <= stride <= w_size")

    @property
    def step(self) -> int:
        return self.w_size if self.stride is None else self.stride

    @property
    def fft_size(self) -> int:
        return next_pow2(self.w_size)

    @property
    def spectrum_len(self) -> int:
        return self.fft_size // 2 + 1


def window_count(n_samples: int, cfg: WindowConfig) -> int:
    if n_samples < cfg.w_size:
        return 0
    return (n_samples - cfg.w_size) // cfg.step + 1


def split_windows(signal, cfg: WindowConfig) -> np.ndarray:
    """Cut a signal into windows of ``cfg.w_size`` samples, dropping the tail.

    Returns a (num_windows, w_size) array. Rows are copies, not views.
    """
    x = signal.samples if isinstance(signal, Signal) else np.asarray(signal, dtype=np.float64)
    n = window_count(x.size, cfg)
    if n == 0:
        raise SignalShorterThanWindow(f"signal of {x.size} samples is shorter than w_size={cfg.w_size}")
    view = np.lib.stride_tricks.sliding_window_view(x, cfg.w_size)[:: cfg.step]
    return np.array(view[:n])


@dataclass
class SpectrumWindow:
    spectrum: np.ndarray
    label: FlowLabel
    source_id: str
    window_index: int


class SpectrumDataset:
    """Stacked spectra of one split plus their labels, in deterministic order."""

    def __init__(self, spectra, intensity, source_ids=None, window_index=None):
        self.spectra = np.asarray(spectra, dtype=np.float32)
        if self.spectra.ndim != 2:
            raise ValueError("spectra must be a (num_examples, length) array")
        self.intensity = np.asarray(intensity, dtype=np.int64)
        n = self.spectra.shape[0]
        if self.intensity.shape != (n,):
            raise ValueError("one intensity label per spectrum required")
        self.source_ids = list(source_ids) if source_ids is not None else [""] * n
        self.window_index = (
            np.asarray(window_index, dtype=np.int64) if window_index is not None else np.arange(n)
        )

    @property
    def detection(self) -> np.ndarray:
        return np.where(
            self.intensity == Intensity.NON_CAVITATION, Detection.NON_CAVITATION, Detection.CAVITATION
        ).astype(np.int64)

    @property
    def input_len(self) -> int:
        return self.spectra.shape[1]

    def __len__(self) -> int:
        return self.spectra.shape[0]

    def __getitem__(self, i) -> SpectrumWindow:
        return SpectrumWindow(
            spectrum=self.spectra[i],
            label=FlowLabel(Intensity(int(self.intensity[i]))),
            source_id=self.source_ids[i],
            window_index=int(self.window_index[i]),
        )

    @classmethod
    def empty(cls, length: int) -> "SpectrumDataset":
        return cls(np.zeros((0, length), np.float32), np.zeros(0, np.int64), [], np.zeros(0, np.int64))


class AugmentError(DhrnError, ValueError):
    """A load or windowing failure annotated with the offending source."""

    def __init__(self, source_id: str, cause: Exception):
        super().__init__(f"{source_id}: {cause}")
        self.source_id = source_id
        self.cause = cause


def augment_split(manifest: Manifest, cfg: WindowConfig, skip_short: bool = False) -> dict:
    """Window + FFT every recording; each window keeps its source's labels and split.

    Returns ``{Split: SpectrumDataset}`` for train/val/test. With ``skip_short``
    recordings shorter than one window are logged and left out instead of
    raising.
    """
    if not manifest.is_split:
        bad = next(e.signal_path for e in manifest.entries if e.split is Split.UNASSIGNED)
        raise AugmentError(bad, ValueError("manifest entry has no split assignment"))

    parts = {s: ([], [], [], []) for s in SPLITS}
    for entry in manifest.entries:
        try:
            sig = manifest.load(entry)
            windows = split_windows(sig, cfg)
        except SignalShorterThanWindow as exc:
            if skip_short:
                log.warning("skipping %s: %s", entry.signal_path, exc)
                continue
            raise AugmentError(entry.signal_path, exc) from exc
        except DhrnError as exc:
            raise AugmentError(entry.signal_path, exc) from exc
        spectra, ints, srcs, idx = parts[entry.split]
        spectra.append(rfft_magnitude(windows).astype(np.float32))
        ints.extend([int(entry.label.intensity)] * len(windows))
        srcs.extend([entry.signal_path] * len(windows))
        idx.extend(range(len(windows)))

    out = {}
    for s, (spectra, ints, srcs, idx) in parts.items():
        if spectra:
            out[s] = SpectrumDataset(np.concatenate(spectra), ints, srcs, idx)
        else:
            out[s] = SpectrumDataset.empty(cfg.spectrum_len)
    return out


def decimate(signal: Signal, factor: int) -> Signal:
    """Keep every ``factor``-th sample; no anti-alias filter."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if len(signal) < factor:
        raise FactorTooLarge(f"factor {factor} exceeds signal length {len(signal)}")
    return Signal(signal.samples[::factor].copy(), signal.sample_rate_hz // factor)


# on-disk format: meta.json + <split>.f32 (row-major float32) + <split>_labels.csv

def save_dataset(datasets: dict, out_dir, cfg: WindowConfig) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "w_size": cfg.w_size,
        "stride": cfg.step,
        "P": cfg.fft_size,
        "spectrum_len": cfg.spectrum_len,
        "counts": {s.value: len(datasets[s]) for s in SPLITS},
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    for s in SPLITS:
        ds = datasets[s]
        (out / f"{s.value}.f32").write_bytes(ds.spectra.astype("<f4").tobytes())
        with open(out / f"{s.value}_labels.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["window_id", "intensity", "detection", "source", "window_index"])
            for i in range(len(ds)):
                lab = FlowLabel(Intensity(int(ds.intensity[i])))
                w.writerow([i, lab.intensity.label, lab.detection.label, ds.source_ids[i], int(ds.window_index[i])])


def load_dataset(data_dir) -> dict:
    d = Path(data_dir)
    meta = json.loads((d / "meta.json").read_text())
    length = int(meta["spectrum_len"])
    out = {}
    for s in SPLITS:
        raw = np.frombuffer((d / f"{s.value}.f32").read_bytes(), dtype="<f4")
        n = int(meta["counts"][s.value])
        if raw.size != n * length:
            raise ValueError(f"{d / (s.value + '.f32')}: expected {n}x{length} floats, found {raw.size}")
        spectra = raw.reshape(n, length).astype(np.float32)
        ints, srcs, idx = [], [], []
        with open(d / f"{s.value}_labels.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                ints.append(int(Intensity.parse(row["intensity"])))
                srcs.append(row.get("source", ""))
                idx.append(int(row.get("window_index", len(idx))))
        out[s] = SpectrumDataset(spectra, ints, srcs, idx)
    return out
