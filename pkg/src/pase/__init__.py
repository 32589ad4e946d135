"""pase: self-supervised speech encoder pretrained on distorted audio.

Library surface:

- audio_io: WAV read/write, manifests, 2 s chunking
- distortion / rir: online contamination and image-method impulse responses
- features: clean-signal worker targets on a 10 ms grid
- autodiff / optim: reverse-mode tensor engine and Adam + poly schedule
- encoder: sinc front end, conv blocks, skip sum, QRNN
- workers: ten regression heads plus the two info-max heads
- trainer: pretraining loop, extraction, probing, offline contamination
"""

__version__ = "0.1.0"
