"""Speaker-adaptive neural vocoding at desk scale.

Trains a GE2E speaker encoder and a speaker-aware WaveNet vocoder from
scratch (numpy-backed reverse-mode autodiff, no framework), reconstructs
waveforms from acoustic features plus per-utterance speaker embeddings,
and scores the result with the standard objective metric suite
(SNR, RMSE-LAS, MCD, RMSE-F0, V/UV error, EER, Pearson correlation).
"""

__version__ = "0.1.0"
