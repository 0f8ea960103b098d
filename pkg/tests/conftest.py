import numpy as np
import pytest

from sarvessel.cnn import TrainConfig, default_network, train
from sarvessel.dataset import build_chip_dataset
from sarvessel.detector import denoise_scene
from sarvessel.scene_io import SynthParams, synth_scene
from sarvessel.wavelet import DenoiseConfig


@pytest.fixture(scope="session")
def trained():
    """Default network trained 50 epochs on 200 chips, plus a separate 60-chip set."""
    cfg = DenoiseConfig()
    params = dict(rows=256, cols=256, n_vessels=25, tcr_db_range=(10.0, 20.0))
    pairs = []
    for s in range(1000, 1006):
        scene, truth = synth_scene(SynthParams(seed=s, **params))
        pairs.append((denoise_scene(scene, cfg), truth))
    train_chips = build_chip_dataset(pairs[:4], 32, seed=1, n_chips=200)
    held_chips = build_chip_dataset(pairs[4:], 32, seed=2, n_chips=60)
    net = default_network(32, 2)
    model, history = train(net, train_chips, held_chips, TrainConfig(epochs=50, seed=3))
    return {"net": model, "history": history, "train": train_chips, "held": held_chips}


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))
