import json

import numpy as np
import pytest
import torch
from scipy.io import wavfile

from embexport.encoder import AudioEncoder, EncoderConfig, save_encoder

# a small encoder config keeps random-weight tests fast; the time-axis
# geometry (10 ms hop, 32x downsample) is identical to the full model
SMALL_CFG = EncoderConfig(channels=(4, 4, 8, 8, 16, 2048))


def write_wav(path, seconds, rate=32000, freq=440.0):
    t = np.arange(int(seconds * rate)) / rate
    wave = (0.3 * np.sin(2 * np.pi * freq * t) * 32767).astype(np.int16)
    wavfile.write(path, rate, wave)
    return path


@pytest.fixture(scope="session")
def weights_file(tmp_path_factory):
    torch.manual_seed(0)
    path = tmp_path_factory.mktemp("weights") / "encoder.pt"
    save_encoder(AudioEncoder(SMALL_CFG), path)
    return path


@pytest.fixture(scope="session")
def vocab_file(tmp_path_factory):
    rng = np.random.default_rng(0)
    words = ["a", "dog", "barks", "in", "the", "park", "rain", "falls",
             "on", "roof", "loud", "engine", "noise", "birds", "sing"]
    lines = [" ".join([w] + [f"{v:.5f}" for v in rng.normal(size=300)])
             for w in words]
    path = tmp_path_factory.mktemp("vocab") / "vectors.txt"
    path.write_text("\n".join(lines), encoding="utf-8")
    return path


@pytest.fixture
def job_tree(tmp_path, weights_file, vocab_file):
    audio_dir = tmp_path / "audio"
    audio_dir.mkdir()
    write_wav(audio_dir / "clip0.wav", 1.0)
    write_wav(audio_dir / "clip1.wav", 1.5, freq=880.0)
    captions = {
        "clip0": {"split": "train", "captions": ["A dog barks in the park."]},
        "clip1": {"split": "test", "captions": ["Rain falls on the roof",
                                                "loud engine noise"]},
    }
    cap_file = tmp_path / "captions.json"
    cap_file.write_text(json.dumps(captions), encoding="utf-8")
    return tmp_path, audio_dir, cap_file
