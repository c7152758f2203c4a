"""From a raw recording to the spectra the network sees.

Generates one synthetic recording per class, cuts each into non-overlapping
windows and prints where the magnitude spectrum peaks.
"""
import numpy as np

from dhrn.signals import FlowLabel, Intensity
from dhrn.swinfft import WindowConfig, rfft_magnitude, split_windows, window_count
from dhrn.synth import SynthSpec, generate_dataset

spec = SynthSpec(per_class_count=1, signal_len=65536, seed=0)
signals, manifest = generate_dataset(spec)

cfg = WindowConfig(4096)
print(f"{spec.signal_len} samples at {spec.sample_rate_hz} Hz, windows of {cfg.w_size}")
print("windows per recording:", window_count(spec.signal_len, cfg))

for sig, entry in zip(signals, manifest.entries):
    windows = split_windows(sig.samples, cfg)
    spectra = rfft_magnitude(windows)          # (n_windows, 2049)
    peak_bin = int(np.argmax(spectra.mean(axis=0)))
    hz = peak_bin * sig.sample_rate_hz / 4096
    print(f"  {entry.label.intensity.label:<20} peak bin {peak_bin:4d}  ~{hz:7.1f} Hz  "
          f"spectrum shape {spectra.shape}")

# the reference recordings: 3 s at 1.5625 MHz, cut ten different ways
n = 1_562_500 * 3
for w in (2334720, 466944, 233472):
    print(f"w_size {w:>7}: {window_count(n, WindowConfig(w)):2d} windows")

# classes are ordered by intensity; detection is derived from it
print([(c.label, FlowLabel(c).detection.label) for c in Intensity])
