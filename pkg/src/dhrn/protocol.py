"""Settings of the published cavitation experiments, for running the same
protocol on real recordings supplied through a manifest."""
from .signals import SplitConfig
from .trainer import TrainConfig

SAMPLE_RATE_HZ = 1_562_500
RECORDING_SECONDS = 3

# window-size sweep for the 3 s recordings, largest first
WINDOW_SIZES = (2334720, 1167360, 778240, 583680, 466944, 389120, 333531, 291840, 259413, 233472)

# sampling-rate study: integer decimation factors (32 ~ a phone's 48 kHz)
DECIMATION_FACTORS = (2, 4, 6, 8, 32)

# recordings per class before augmentation in the first dataset
# (choked, constant, incipient, non-cavitation = turbulent 118 + no-flow 33)
DATASET1_CLASS_SIZES = (72, 93, 40, 151)


def split_config(seed: int = 0) -> SplitConfig:
    return SplitConfig(test_fraction=0.20, val_fraction_of_train=0.10, seed=seed, stratified=True)


def train_config(seed: int = 0) -> TrainConfig:
    return TrainConfig(learning_rate=1e-4, batch_size=4, max_epochs=100, seed=seed)
