"""Raw recordings, labels, the dataset manifest and pre-augmentation splitting."""
from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import (
    AlreadySplit,
    ClassTooSmall,
    EmptySignal,
    FormatMismatch,
    ManifestError,
    NonFiniteSample,
    UnreadableFile,
)


class Intensity(enum.IntEnum):
    CHOKED_FLOW = 0
    CONSTANT_CAVITATION = 1
    INCIPIENT_CAVITATION = 2
    NON_CAVITATION = 3

    @property
    def label(self) -> str:
        return _INTENSITY_NAMES[self]

    @classmethod
    def parse(cls, name: str) -> "Intensity":
        try:
            return _INTENSITY_BY_NAME[name]
        except KeyError:
            raise ManifestError(f"unknown intensity label {name!r}") from None


class Detection(enum.IntEnum):
    CAVITATION = 0
    NON_CAVITATION = 1

    @property
    def label(self) -> str:
        return "Cavitation" if self is Detection.CAVITATION else "NonCavitation"


_INTENSITY_NAMES = {
    Intensity.CHOKED_FLOW: "ChokedFlow",
    Intensity.CONSTANT_CAVITATION: "ConstantCavitation",
    Intensity.INCIPIENT_CAVITATION: "IncipientCavitation",
    Intensity.NON_CAVITATION: "NonCavitation",
}
_INTENSITY_BY_NAME = {v: k for k, v in _INTENSITY_NAMES.items()}
# raw flow states recorded on the rig; both are non-cavitating
_INTENSITY_BY_NAME["TurbulentFlow"] = Intensity.NON_CAVITATION
_INTENSITY_BY_NAME["NoFlow"] = Intensity.NON_CAVITATION

INTENSITY_CLASS_NAMES = [_INTENSITY_NAMES[i] for i in Intensity]
DETECTION_CLASS_NAMES = [d.label for d in Detection]


@dataclass(frozen=True)
class FlowLabel:
    intensity: Intensity

    @property
    def detection(self) -> Detection:
        if self.intensity is Intensity.NON_CAVITATION:
            return Detection.NON_CAVITATION
        return Detection.CAVITATION

    @classmethod
    def from_name(cls, name: str) -> "FlowLabel":
        return cls(Intensity.parse(name))


@dataclass
class Signal:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if self.samples.size == 0:
            raise EmptySignal("signal has no samples")
        if not np.all(np.isfinite(self.samples)):
            raise NonFiniteSample("signal contains NaN or Inf")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError("sample_rate_hz must be positive")
        self.sample_rate_hz = int(self.sample_rate_hz)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


class SignalFormat(str, enum.Enum):
    WAV_PCM16 = "WavPcm16"
    WAV_FLOAT32 = "WavFloat32"
    RAW_F32LE = "RawF32LE"
    CSV_SINGLE_COLUMN = "CsvSingleColumn"


def load_signal(path, fmt, sample_rate_hz: int | None = None) -> Signal:
    """Read one mono recording.

    Raw and CSV files carry no rate, so ``sample_rate_hz`` is required for
    them; for WAV files the header rate is used.
    """
    fmt = SignalFormat(fmt)
    path = Path(path)
    if not path.is_file():
        raise UnreadableFile(f"{path}: no such file")

    if fmt in (SignalFormat.WAV_PCM16, SignalFormat.WAV_FLOAT32):
        try:
            rate, data = wavfile.read(path)
        except (ValueError, OSError) as exc:
            raise UnreadableFile(f"{path}: {exc}") from exc
        if data.ndim != 1:
            raise FormatMismatch(f"{path}: expected mono WAV, got {data.shape[1]} channels")
        if fmt is SignalFormat.WAV_PCM16:
            if data.dtype != np.int16:
                raise FormatMismatch(f"{path}: expected 16-bit PCM, got {data.dtype}")
            samples = data.astype(np.float64) / 32768.0
        else:
            if data.dtype != np.float32:
                raise FormatMismatch(f"{path}: expected 32-bit float WAV, got {data.dtype}")
            samples = data.astype(np.float64)
        sample_rate_hz = rate
    else:
        if sample_rate_hz is None:
            raise ValueError(f"{fmt.value} files need an explicit sample rate")
        if fmt is SignalFormat.RAW_F32LE:
            raw = path.read_bytes()
            if len(raw) % 4:
                raise FormatMismatch(f"{path}: size {len(raw)} is not a multiple of 4 bytes")
            samples = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        else:
            samples = _read_csv_column(path)

    if samples.size == 0:
        raise EmptySignal(f"{path}: no samples")
    if not np.all(np.isfinite(samples)):
        raise NonFiniteSample(f"{path}: contains NaN or Inf")
    return Signal(samples, sample_rate_hz)


def _read_csv_column(path: Path) -> np.ndarray:
    values = []
    try:
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or not row[0].strip():
                    continue
                if len(row) != 1:
                    raise FormatMismatch(f"{path}: expected a single column, got {len(row)}")
                values.append(float(row[0]))
    except ValueError as exc:
        if isinstance(exc, FormatMismatch):
            raise
        raise FormatMismatch(f"{path}: {exc}") from exc
    return np.asarray(values, dtype=np.float64)


def save_raw_f32(path, samples) -> None:
    """Write samples as headerless little-endian float32."""
    Path(path).write_bytes(np.asarray(samples, dtype="<f4").tobytes())


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"
    UNASSIGNED = "unassigned"


@dataclass
class ManifestEntry:
    signal_path: str
    format: SignalFormat
    sample_rate_hz: int
    label: FlowLabel
    split: Split = Split.UNASSIGNED

    def to_json(self) -> dict:
        return {
            "path": self.signal_path,
            "format": self.format.value,
            "sample_rate_hz": self.sample_rate_hz,
            "intensity": self.label.intensity.label,
            "split": self.split.value,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ManifestEntry":
        try:
            return cls(
                signal_path=str(obj["path"]),
                format=SignalFormat(obj["format"]),
                sample_rate_hz=int(obj["sample_rate_hz"]),
                label=FlowLabel.from_name(obj["intensity"]),
                split=Split(obj.get("split", "unassigned")),
            )
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, ManifestError):
                raise
            raise ManifestError(f"bad manifest entry {obj!r}: {exc}") from exc


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path | None = None  # directory that relative signal paths resolve against

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.signal_path in seen:
                raise ManifestError(f"duplicate signal path {e.signal_path!r}")
            seen.add(e.signal_path)

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.signal_path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def load(self, entry: ManifestEntry) -> Signal:
        return load_signal(self.resolve(entry), entry.format, entry.sample_rate_hz)

    def by_split(self, split: Split) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split is split]

    @property
    def is_split(self) -> bool:
        return all(e.split is not Split.UNASSIGNED for e in self.entries)

    def to_json(self) -> dict:
        return {"entries": [e.to_json() for e in self.entries]}

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load_file(cls, path) -> "Manifest":
        path = Path(path)
        try:
            obj = json.loads(path.read_text())
        except OSError as exc:
            raise UnreadableFile(f"{path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: {exc}") from exc
        if not isinstance(obj, dict) or not isinstance(obj.get("entries"), list):
            raise ManifestError(f"{path}: expected an object with an 'entries' list")
        return cls([ManifestEntry.from_json(e) for e in obj["entries"]], root=path.parent)


@dataclass(frozen=True)
class SplitConfig:
    test_fraction: float = 0.20
    val_fraction_of_train: float = 0.10
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        for name in ("test_fraction", "val_fraction_of_train"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def split_counts(n: int, cfg: SplitConfig) -> tuple[int, int, int]:
    """(train, val, test) sizes for a group of ``n`` recordings.

    Test is carved first, validation from what remains; each uses the floor
    of its fraction but never drops below one recording.
    """
    n_test = max(1, math.floor(n * cfg.test_fraction))
    n_val = max(1, math.floor((n - n_test) * cfg.val_fraction_of_train))
    return n - n_test - n_val, n_val, n_test


def split_dataset(manifest: Manifest, cfg: SplitConfig = SplitConfig()) -> Manifest:
    """Assign every entry to train/val/test before any windowing happens."""
    if any(e.split is not Split.UNASSIGNED for e in manifest.entries):
        raise AlreadySplit("manifest already has split assignments")

    if cfg.stratified:
        groups = {}
        for i, e in enumerate(manifest.entries):
            groups.setdefault(e.label.intensity, []).append(i)
        groups = [groups[k] for k in sorted(groups)]
    else:
        groups = [list(range(len(manifest.entries)))]

    assigned = [Split.UNASSIGNED] * len(manifest.entries)
    rng = np.random.default_rng(cfg.seed)
    for idx in groups:
        if len(idx) < 3:
            raise ClassTooSmall(f"group of {len(idx)} entries; need at least 3 to split")
        _, n_val, n_test = split_counts(len(idx), cfg)
        order = rng.permutation(len(idx))
        for rank, j in enumerate(order):
            if rank < n_test:
                s = Split.TEST
            elif rank < n_test + n_val:
                s = Split.VAL
            else:
                s = Split.TRAIN
            assigned[idx[j]] = s

    entries = [replace(e, split=s) for e, s in zip(manifest.entries, assigned)]
    return Manifest(entries, root=manifest.root)
