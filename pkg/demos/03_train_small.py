"""Training a narrow network on synthetic spectra, in memory.

Same steps as ``dhrn synth`` / ``augment`` / ``train`` but without touching
disk, and small enough to finish in seconds on one core.
"""
import numpy as np

from dhrn import model as M
from dhrn.signals import Split, split_dataset, SplitConfig
from dhrn.swinfft import SpectrumDataset, WindowConfig, rfft_magnitude, split_windows
from dhrn.synth import SynthSpec, generate_dataset
from dhrn.trainer import TrainConfig, evaluate, train
from dhrn.metrics import render_report

spec = SynthSpec(per_class_count=12, signal_len=16384, seed=3)
signals, manifest = generate_dataset(spec)
manifest = split_dataset(manifest, SplitConfig(seed=3))

# split by recording first, then window: no recording feeds two splits
cfg = WindowConfig(1024)
data = {}
for split in (Split.TRAIN, Split.VAL, Split.TEST):
    spectra, labels = [], []
    for sig, e in zip(signals, manifest.entries):
        if e.split is split:
            w = split_windows(sig.samples, cfg)
            spectra.append(rfft_magnitude(w))
            labels += [int(e.label.intensity)] * len(w)
    data[split] = SpectrumDataset(np.concatenate(spectra), labels)
    print(split.value, len(data[split]), "windows")

net = M.build_dhrn(M.DhrnConfig(input_len=data[Split.TRAIN].input_len, width_multiplier=0.0625), seed=3)
print("parameters:", net.num_parameters())

net, hist = train(net, data, TrainConfig(max_epochs=3, early_stop_patience=2, seed=3))
for rec in hist.records:
    print(rec)

ev = evaluate(net, data[Split.TEST])
text, _ = render_report(ev["confusion"], ev["scores"])
print(text)
