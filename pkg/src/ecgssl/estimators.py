"""scikit-learn compatible wrappers around the pipeline stages.

* :class:`SpectrogramTransformer` - raw leads -> log-power spectrograms.
* :class:`SelfKDPretrainer` - unlabelled self-distillation; ``transform`` gives student features.
* :class:`GateFusionClassifier` - multi-label fine-tuning for the T / S / TSC / TSG variants.

All three take raw records shaped ``[n_records, 12, n_samples]``.
"""
from __future__ import annotations

import copy
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import checkpoint as ckpt_io
from . import tensor as T
from .augment import TIME, TIMEFREQ, AugmentSpec
from .encoders import EncoderConfig, build_encoder
from .errors import ConfigurationError
from .fusion import FinetuneConfig, FusionModel, encoder_state, predict_proba, train_model
from .selfkd import PretrainResult, SelfKdConfig, pretrain_modality
from .stft import StftConfig, spectrogram
from .utils import child_rng
from .validation import check_multilabel, check_records


class SpectrogramTransformer(TransformerMixin, BaseEstimator):
    """Stateless per-lead log-power STFT."""

    def __init__(self, window_len=32, hop=16, window_kind="hann", gaussian_sigma=None,
                 log_epsilon=1e-10, fs=50.0):
        self.window_len = window_len
        self.hop = hop
        self.window_kind = window_kind
        self.gaussian_sigma = gaussian_sigma
        self.log_epsilon = log_epsilon
        self.fs = fs

    def _config(self) -> StftConfig:
        return StftConfig(self.window_len, self.hop, self.window_kind, self.gaussian_sigma, self.log_epsilon)

    def fit(self, X, y=None):
        X = check_records(X)
        cfg = self._config()
        self.n_leads_ = X.shape[1]
        self.output_shape_ = (X.shape[1], cfg.freq_bins, cfg.n_frames(X.shape[2]))
        return self

    def transform(self, X):
        check_is_fitted(self, "output_shape_")
        X = check_records(X, self.n_leads_)
        cfg = self._config()
        return np.stack([spectrogram(r, cfg, self.fs).values for r in X])


def _load_checkpoint(source):
    if source is None or isinstance(source, dict):
        return source
    return ckpt_io.load(Path(source))


def modality_arrays(X, variant: str, stft: StftConfig, fs: float):
    """Network inputs a variant needs: (time-series or None, spectrograms or None)."""
    x_time = X if variant in ("T", "TSC", "TSG") else None
    x_freq = None
    if variant in ("S", "TSC", "TSG"):
        x_freq = np.stack([spectrogram(r, stft, fs).values for r in X])
    return x_time, x_freq


class SelfKDPretrainer(TransformerMixin, BaseEstimator):
    """Self-distillation pre-training of one modality's encoder.

    ``fit`` ignores ``y``. After fitting, ``checkpoint_`` holds the student
    state (encoder and projection head) and ``loss_trace_`` /
    ``teacher_entropy_`` the per-step traces.
    """

    def __init__(self, modality=TIME, encoder=None, selfkd=None, augment=None, stft=None,
                 fs=50.0, random_state=0):
        self.modality = modality
        self.encoder = encoder
        self.selfkd = selfkd
        self.augment = augment
        self.stft = stft
        self.fs = fs
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.modality not in (TIME, TIMEFREQ):
            raise ConfigurationError(f"unknown modality {self.modality!r}")
        X = check_records(X)
        self.result_: PretrainResult = pretrain_modality(
            X, self.modality, self.encoder or EncoderConfig(), self.selfkd or SelfKdConfig(),
            self.augment or AugmentSpec(), int(self.random_state),
            self.stft or StftConfig(32, 16), self.fs)
        self.checkpoint_ = self.result_.student_checkpoint()
        self.loss_trace_ = list(self.result_.losses)
        self.teacher_entropy_ = list(self.result_.teacher_entropy)
        return self

    @property
    def student_(self):
        return self.result_.state.student

    @property
    def teacher_(self):
        return self.result_.state.teacher

    def transform(self, X):
        """Student backbone features [n_records, feature_dim] in eval mode."""
        check_is_fitted(self, "checkpoint_")
        X = check_records(X)
        stft = self.stft or StftConfig(32, 16)
        inputs = X if self.modality == TIME else np.stack([spectrogram(r, stft, self.fs).values for r in X])
        encoder = self.student_.encoder
        encoder.eval()
        with T.no_grad():
            feats = [encoder(T.Tensor(inputs[i:i + 64])).data for i in range(0, len(inputs), 64)]
        return np.concatenate(feats).astype(np.float64)


class GateFusionClassifier(ClassifierMixin, BaseEstimator):
    """Multi-label classifier over one or both modalities.

    ``variant`` selects T (time series), S (spectrogram), TSC (concatenated
    features) or TSG (gate-fused features). Encoders start from
    ``time_checkpoint`` / ``freq_checkpoint`` (a student checkpoint dict or
    an ETCK path) when given, otherwise from random initialisation.
    """

    def __init__(self, variant="TSG", encoder_time=None, encoder_freq=None, finetune=None,
                 stft=None, fs=50.0, time_checkpoint=None, freq_checkpoint=None, random_state=0):
        self.variant = variant
        self.encoder_time = encoder_time
        self.encoder_freq = encoder_freq
        self.finetune = finetune
        self.stft = stft
        self.fs = fs
        self.time_checkpoint = time_checkpoint
        self.freq_checkpoint = freq_checkpoint
        self.random_state = random_state

    def _build(self, n_classes: int) -> FusionModel:
        rng = child_rng(int(self.random_state), 101)
        enc_t = self.encoder_time or EncoderConfig()
        enc_f = self.encoder_freq or EncoderConfig()
        if enc_t.feature_dim != enc_f.feature_dim and self.variant in ("TSC", "TSG"):
            raise ConfigurationError("both encoders must share feature_dim for fusion")
        time_enc = freq_enc = None
        if self.variant in ("T", "TSC", "TSG"):
            time_enc = build_encoder(TIME, enc_t, rng)
            state = _load_checkpoint(self.time_checkpoint)
            if state is not None:
                time_enc.load_state_dict(encoder_state(state))
        if self.variant in ("S", "TSC", "TSG"):
            freq_enc = build_encoder(TIMEFREQ, enc_f, rng)
            state = _load_checkpoint(self.freq_checkpoint)
            if state is not None:
                freq_enc.load_state_dict(encoder_state(state))
        ft = self.finetune or FinetuneConfig()
        feature_dim = enc_t.feature_dim if time_enc is not None else enc_f.feature_dim
        return FusionModel(self.variant, time_enc, freq_enc, feature_dim, n_classes, rng,
                           ft.hidden, ft.gate_hidden)

    def _inputs(self, X):
        return modality_arrays(X, self.variant, self.stft or StftConfig(32, 16), self.fs)

    def fit(self, X, Y, x_freq=None, steps: Optional[int] = None):
        """Fine-tune on records X with multi-hot labels Y.

        ``x_freq`` may pass precomputed spectrograms to skip the STFT.
        """
        X = check_records(X)
        Y = check_multilabel(Y, len(X))
        self.n_classes_ = Y.shape[1]
        self.classes_ = np.arange(self.n_classes_)
        self.model_ = self._build(self.n_classes_)
        x_time, xf = self._inputs(X) if x_freq is None else (
            X if self.variant in ("T", "TSC", "TSG") else None, x_freq)
        ft = self.finetune or FinetuneConfig()
        self.loss_trace_ = train_model(self.model_, x_time, xf, Y, ft,
                                       child_rng(int(self.random_state), 202), steps)
        return self

    def predict_proba(self, X, x_freq=None):
        check_is_fitted(self, "model_")
        X = check_records(X)
        x_time, xf = self._inputs(X) if x_freq is None else (
            X if self.variant in ("T", "TSC", "TSG") else None, x_freq)
        return predict_proba(self.model_, x_time, xf)

    def predict(self, X, x_freq=None):
        threshold = (self.finetune or FinetuneConfig()).threshold
        return (self.predict_proba(X, x_freq) >= threshold).astype(np.int64)

    def gate_weights(self, X, x_freq=None):
        """Per-record (w1, w2) of the gate; TSG only."""
        check_is_fitted(self, "model_")
        if self.variant != "TSG":
            raise ConfigurationError("gate weights exist only for the TSG variant")
        X = check_records(X)
        x_time, xf = self._inputs(X) if x_freq is None else (X, x_freq)
        self.model_.eval()
        with T.no_grad():
            _, w = self.model_.features(T.Tensor(x_time), T.Tensor(xf))
        return w.data.astype(np.float64)

    def checkpoint(self) -> dict:
        check_is_fitted(self, "model_")
        return {k: v.copy() for k, v in self.model_.state_dict().items()}

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.target_tags.multi_output = True
        tags.target_tags.single_output = False
        return tags


def clone_config(cfg):
    return copy.deepcopy(cfg)
