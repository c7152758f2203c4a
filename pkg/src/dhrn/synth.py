"""Labelled synthetic recordings with class-specific spectral bands.

Each recording is white Gaussian noise shaped in the frequency domain by its
class envelope (a sum of Gaussian bumps), transformed back to time, plus an
unshaped white noise floor. It is a test fixture, not an acoustic model.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .signals import FlowLabel, Intensity, Manifest, ManifestEntry, Signal, SignalFormat, save_raw_f32
from .swinfft import fft, ifft, next_pow2


@dataclass(frozen=True)
class Band:
    center: float      # fraction of Nyquist, in (0, 1)
    bandwidth: float   # Gaussian sigma, fraction of Nyquist
    amplitude: float


def default_envelopes() -> dict:
    # every band sits below 1/32 of Nyquist so decimation by 32 keeps it un-aliased
    return {
        Intensity.CHOKED_FLOW: (Band(0.0060, 0.0015, 1.0),),
        Intensity.CONSTANT_CAVITATION: (Band(0.0120, 0.0015, 1.0),),
        Intensity.INCIPIENT_CAVITATION: (Band(0.0180, 0.0015, 1.0),),
        Intensity.NON_CAVITATION: (Band(0.0240, 0.0015, 1.0),),
    }


@dataclass(frozen=True)
class SynthSpec:
    envelopes: dict = field(default_factory=default_envelopes)
    noise_floor: float = 0.05
    signal_len: int = 65536
    sample_rate_hz: int = 48000
    per_class_count: int = 100
    seed: int = 0

    def validate(self) -> None:
        if set(self.envelopes) != set(Intensity):
            raise InvalidSpec("need an envelope for each of the four intensity classes")
        for cls, bands in self.envelopes.items():
            if not bands:
                raise InvalidSpec(f"{cls.label}: empty envelope")
            for b in bands:
                if not 0 < b.center < 1 or b.bandwidth <= 0 or b.amplitude <= 0:
                    raise InvalidSpec(f"{cls.label}: bad band {b}")
        for (c1, b1s), (c2, b2s) in combinations(self.envelopes.items(), 2):
            for b1 in b1s:
                for b2 in b2s:
                    if abs(b1.center - b2.center) < 2 * max(b1.bandwidth, b2.bandwidth):
                        raise InvalidSpec(f"{c1.label} and {c2.label} bands overlap")
        if self.noise_floor < 0:
            raise InvalidSpec("noise_floor must be >= 0")
        if self.signal_len < 2 or self.sample_rate_hz < 1 or self.per_class_count < 1:
            raise InvalidSpec("signal_len, sample_rate_hz and per_class_count must be positive")


def envelope(bands, n_fft: int) -> np.ndarray:
    """Two-sided real gain over the bins of an ``n_fft``-point spectrum; DC gain is 0."""
    k = np.arange(n_fft)
    frac = np.minimum(k, n_fft - k) / (n_fft / 2)
    gain = np.zeros(n_fft)
    for b in bands:
        gain += b.amplitude * np.exp(-0.5 * ((frac - b.center) / b.bandwidth) ** 2)
    gain[0] = 0.0
    return gain


def synth_signal(bands, spec: SynthSpec, rng) -> np.ndarray:
    n_fft = next_pow2(spec.signal_len)
    white = rng.standard_normal(n_fft)
    shaped = ifft(fft(white) * envelope(bands, n_fft)).real[: spec.signal_len]
    x = shaped + spec.noise_floor * rng.standard_normal(spec.signal_len)
    # stored as float32 on disk; round here so memory and disk agree
    return x.astype(np.float32).astype(np.float64)


def generate_dataset(spec: SynthSpec = SynthSpec()):
    """Returns (signals, manifest); entry i of the manifest describes signal i.

    Signal i is seeded by (seed, i) alone, so any subset can be regenerated
    independently.
    """
    spec.validate()
    signals, entries = [], []
    i = 0
    for cls in Intensity:
        for j in range(spec.per_class_count):
            rng = np.random.default_rng([spec.seed, i])
            signals.append(Signal(synth_signal(spec.envelopes[cls], spec, rng), spec.sample_rate_hz))
            entries.append(ManifestEntry(
                signal_path=f"signals/{cls.label}_{j:04d}.f32",
                format=SignalFormat.RAW_F32LE,
                sample_rate_hz=spec.sample_rate_hz,
                label=FlowLabel(cls),
            ))
            i += 1
    return signals, Manifest(entries)


def write_dataset(spec: SynthSpec, out_dir) -> Manifest:
    """Generate and write raw float32 signals plus ``manifest.json`` under ``out_dir``."""
    out = Path(out_dir)
    signals, manifest = generate_dataset(spec)
    (out / "signals").mkdir(parents=True, exist_ok=True)
    for sig, entry in zip(signals, manifest.entries):
        save_raw_f32(out / entry.signal_path, sig.samples)
    manifest.root = out
    manifest.save(out / "manifest.json")
    return manifest
