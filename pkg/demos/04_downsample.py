"""Lower sample rates keep the class bands, as long as they stay under Nyquist.

Decimation here is plain sample dropping. The synthetic bands sit below 1/32
of the original Nyquist, so every factor up to 32 keeps them intact.
"""
import numpy as np

from dhrn.swinfft import decimate, rfft_magnitude, split_windows, WindowConfig
from dhrn.synth import SynthSpec, generate_dataset

signals, manifest = generate_dataset(SynthSpec(per_class_count=1, seed=1))

for factor in (1, 2, 4, 8, 32):
    w = 4096 // factor          # same duration per window at every rate
    row = []
    for sig in signals:
        d = decimate(sig, factor)
        mag = rfft_magnitude(split_windows(d.samples, WindowConfig(w))).mean(axis=0)
        peak_hz = np.argmax(mag) * d.sample_rate_hz / w
        row.append(f"{peak_hz:6.0f}")
    print(f"x{factor:<2} rate {signals[0].sample_rate_hz // factor:>5} Hz  peaks(Hz):", " ".join(row))
