"""CNN14-style audio encoder producing one 2048-dim embedding per segment.

Frontend: 32 kHz mono waveform -> STFT (1024-point window, 320-sample hop,
i.e. 10 ms frames) -> 64-bin log-mel spectrogram.  Body: six VGG-style
conv blocks; the first five halve the time axis, so each output step spans
32 frames = 0.32 s of audio.  The head keeps the sequence *before* global
pooling: frequency-averaged (T/32) x 2048 activations.

Weights are loaded from a local state-dict file; there is no downloading.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .errors import ExportError


@dataclass
class EncoderConfig:
    sample_rate: int = 32000
    n_fft: int = 1024
    hop: int = 320               # 10 ms frames
    n_mels: int = 64
    fmin: float = 50.0
    fmax: float = 14000.0
    channels: tuple = (64, 128, 256, 512, 1024, 2048)
    embedding_dim: int = 2048


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(cfg: EncoderConfig) -> np.ndarray:
    """Triangular mel filters, (n_mels, n_fft//2 + 1)."""
    n_bins = cfg.n_fft // 2 + 1
    fft_freqs = np.linspace(0, cfg.sample_rate / 2, n_bins)
    mel_pts = _mel_to_hz(np.linspace(_hz_to_mel(cfg.fmin), _hz_to_mel(cfg.fmax),
                                     cfg.n_mels + 2))
    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        lo, mid, hi = mel_pts[m], mel_pts[m + 1], mel_pts[m + 2]
        rise = (fft_freqs - lo) / max(mid - lo, 1e-9)
        fall = (hi - fft_freqs) / max(hi - mid, 1e-9)
        fb[m] = np.clip(np.minimum(rise, fall), 0.0, None)
    return fb


class ConvBlock(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)

    def forward(self, x):
        x = torch.relu(self.bn1(self.conv1(x)))
        return torch.relu(self.bn2(self.conv2(x)))


class AudioEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig | None = None):
        super().__init__()
        self.cfg = cfg or EncoderConfig()
        chans = self.cfg.channels
        self.blocks = nn.ModuleList(
            [ConvBlock(1, chans[0])]
            + [ConvBlock(chans[i], chans[i + 1]) for i in range(len(chans) - 1)])
        self.register_buffer(
            "mel_fb", torch.tensor(mel_filterbank(self.cfg), dtype=torch.float32))
        self.register_buffer(
            "window", torch.hann_window(self.cfg.n_fft))

    def logmel(self, waveform: torch.Tensor) -> torch.Tensor:
        """waveform (samples,) -> (1, 1, frames, n_mels)."""
        spec = torch.stft(waveform, self.cfg.n_fft, hop_length=self.cfg.hop,
                          window=self.window, center=True, return_complex=True)
        power = spec.abs() ** 2                      # (bins, frames)
        mel = self.mel_fb @ power                    # (mels, frames)
        logmel = torch.log10(torch.clamp(mel, min=1e-10))
        return logmel.T[None, None, :, :]

    def forward(self, waveform: torch.Tensor) -> torch.Tensor:
        """waveform (samples,) -> (segments, embedding_dim), ~0.32 s each."""
        x = self.logmel(waveform)
        for i, block in enumerate(self.blocks):
            x = block(x)
            # five 2x time-reductions total: 32 frames -> one output step
            pool = (2, 2) if i < 5 else (1, 2)
            x = torch.nn.functional.avg_pool2d(x, pool)
        return x.mean(dim=3)[0].T                    # (segments, channels)

    def segment_count(self, n_samples: int) -> int:
        frames = n_samples // self.cfg.hop + 1       # centered STFT
        return frames // 32


def load_encoder(weights_path) -> AudioEncoder:
    """Rebuild the encoder from a locally stored checkpoint; never downloads.

    The file holds the encoder config alongside the state dict, so the
    caller does not need to know the architecture hyperparameters.
    """
    path = Path(weights_path)
    if not path.exists():
        raise ExportError(f"encoder weights not found: {path}")
    blob = torch.load(path, map_location="cpu")
    cfg = EncoderConfig(**{k: tuple(v) if isinstance(v, list) else v
                           for k, v in blob["config"].items()})
    model = AudioEncoder(cfg)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model


def save_encoder(model: AudioEncoder, weights_path) -> None:
    from dataclasses import asdict
    torch.save({"config": asdict(model.cfg), "state_dict": model.state_dict()},
               weights_path)
