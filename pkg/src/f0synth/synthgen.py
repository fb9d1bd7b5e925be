"""Synthetic corpus generator with a closed-form feature-to-F0 mapping.

The generated world is deliberately simple: log-F0 is exactly linear in
the model's input features, so a trained network can in principle match
the ground truth, and evaluation code can be checked against exact
targets instead of a speech corpus.

World construction
------------------
Each speaker gets a random embedding whose first coordinate is exactly
+1.0 (female) or -1.0 (male).  Per-frame features follow a smooth
first-order autoregressive walk with N(0,1) marginal, so neighboring
frames are correlated like real acoustic features.  Ground truth:

    ln F0[t] = ln(base_f0[gender]) + weights . bn[t, :k]
    voiced[t] = bn[t, 1] > voicing_threshold

with ``weights`` a seeded random vector scaled by ``weight_scale`` and
k = min(8, d_bn).  Optional noise perturbs voiced log-F0 by a seeded
normal draw expressed in cents.  Features are cast to float32 *before*
the ground truth is computed, so the returned mapping reproduces stored
F0 files bit-exactly when noise is zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .featureio import DATASET_ROLES, Dataset, Gender, Utterance

# AR(1) coefficient of the feature walk; marginal stays N(0,1).
WALK_COEFF = 0.9
# Number of bn coordinates that feed the ground-truth mapping.
MAX_ACTIVE_DIMS = 8
# Cents-to-natural-log conversion: one cent is a 2**(1/1200) ratio.
LOG_PER_CENT = np.log(2.0) / 1200.0

# Seed-stream tags (first element after the user seed).
_STREAM_MAPPING = 0
_STREAM_SPEAKER = 1
_STREAM_UTT_BASE = 2  # + role index


def _default_base_f0() -> dict[Gender, float]:
    return {Gender.F: 190.0, Gender.M: 120.0}


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic world.

    ``base_f0`` maps gender to the gender's center F0 in Hz;
    ``weight_scale`` sets the log-F0 spread contributed by the content
    features; ``noise_std_cents`` adds observation noise to voiced
    frames (0 keeps the world exactly closed-form).
    """

    n_speakers_per_gender: int = 4
    utts_per_speaker: int = 5
    frames_per_utt: int = 200
    d_bn: int = 16
    d_xv: int = 8
    base_f0: dict[Gender, float] = field(default_factory=_default_base_f0)
    weight_scale: float = 0.25
    voicing_threshold: float = 0.0
    noise_std_cents: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_speakers_per_gender", "utts_per_speaker", "frames_per_utt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_bn < 2:
            raise ValueError("d_bn must be >= 2 (voicing reads coordinate 1)")
        if self.d_xv < 1:
            raise ValueError("d_xv must be >= 1 (gender reads coordinate 0)")
        if set(self.base_f0) != {Gender.F, Gender.M}:
            raise ValueError("base_f0 must map both genders")
        if any(v <= 0 for v in self.base_f0.values()):
            raise ValueError("base_f0 values must be positive")
        if self.noise_std_cents < 0:
            raise ValueError("noise_std_cents must be non-negative")


@dataclass(frozen=True)
class GroundTruthMapping:
    """Closed-form feature-to-F0 mapping of a generated world.

    ``logf0``/``voiced_mask``/``f0`` evaluate the exact rule used during
    generation, so ``f0(gender, utt.bn)`` equals the stored trajectory
    bit-for-bit on noiseless worlds.
    """

    base_logf0: dict[Gender, float]
    weights: np.ndarray  # float64, length k, weight_scale folded in
    voicing_threshold: float

    @property
    def n_active_dims(self) -> int:
        return len(self.weights)

    def logf0(self, gender: Gender, bn: np.ndarray) -> np.ndarray:
        """True ln(F0 Hz) for every frame, float64, ignoring voicing."""
        bn = np.asarray(bn, dtype=np.float64)
        k = self.n_active_dims
        return self.base_logf0[gender] + bn[:, :k] @ self.weights

    def voiced_mask(self, bn: np.ndarray) -> np.ndarray:
        bn = np.asarray(bn, dtype=np.float64)
        return bn[:, 1] > self.voicing_threshold

    def f0(self, gender: Gender, bn: np.ndarray) -> np.ndarray:
        """Ground-truth trajectory (float32 Hz, unvoiced frames 0)."""
        voiced = self.voiced_mask(bn)
        hz = np.exp(self.logf0(gender, bn))
        return np.where(voiced, hz, 0.0).astype(np.float32)


def _make_mapping(spec: SynthSpec) -> GroundTruthMapping:
    rng = np.random.default_rng([spec.seed, _STREAM_MAPPING])
    k = min(MAX_ACTIVE_DIMS, spec.d_bn)
    raw = rng.standard_normal(k)
    weights = spec.weight_scale * raw / np.sqrt(k)
    base = {g: float(np.log(spec.base_f0[g])) for g in (Gender.F, Gender.M)}
    return GroundTruthMapping(base_logf0=base, weights=weights,
                              voicing_threshold=spec.voicing_threshold)


def _speaker_xvec(spec: SynthSpec, gender_idx: int, spk_idx: int) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, _STREAM_SPEAKER, gender_idx, spk_idx])
    xvec = rng.standard_normal(spec.d_xv)
    xvec[0] = 1.0 if gender_idx == 0 else -1.0
    return xvec.astype(np.float32)


def _feature_walk(rng: np.random.Generator, n_frames: int, d: int) -> np.ndarray:
    """AR(1) walk per dimension, N(0,1) marginal, float64."""
    innovation_scale = np.sqrt(1.0 - WALK_COEFF**2)
    steps = rng.standard_normal((n_frames, d))
    bn = np.empty((n_frames, d))
    bn[0] = steps[0]
    for t in range(1, n_frames):
        bn[t] = WALK_COEFF * bn[t - 1] + innovation_scale * steps[t]
    return bn


def generate_synthetic_dataset(
    spec: SynthSpec, role: str = "train"
) -> tuple[Dataset, GroundTruthMapping]:
    """Generate one corpus role of the world described by ``spec``.

    The same spec shares ground-truth mapping and speakers across roles
    but draws fresh utterances per role, so train/validation/test splits
    come from one world without frame overlap.  Same (spec, role) twice
    yields bit-identical datasets.
    """
    if role not in DATASET_ROLES:
        raise ValueError(f"role must be one of {DATASET_ROLES}, got {role!r}")
    mapping = _make_mapping(spec)
    role_stream = _STREAM_UTT_BASE + DATASET_ROLES.index(role)
    noise_log_std = spec.noise_std_cents * LOG_PER_CENT
    utterances = []
    for gender_idx, gender in enumerate((Gender.F, Gender.M)):
        for spk_idx in range(spec.n_speakers_per_gender):
            speaker_id = f"{gender.value}{spk_idx:03d}"
            xvec = _speaker_xvec(spec, gender_idx, spk_idx)
            for utt_idx in range(spec.utts_per_speaker):
                rng = np.random.default_rng(
                    [spec.seed, role_stream, gender_idx, spk_idx, utt_idx])
                bn = _feature_walk(rng, spec.frames_per_utt, spec.d_bn)
                bn32 = bn.astype(np.float32)
                if noise_log_std > 0:
                    voiced = mapping.voiced_mask(bn32)
                    logf0 = mapping.logf0(gender, bn32)
                    logf0 += rng.normal(0.0, noise_log_std, size=len(logf0))
                    f0 = np.where(voiced, np.exp(logf0), 0.0).astype(np.float32)
                else:
                    f0 = mapping.f0(gender, bn32)
                utterances.append(Utterance(
                    utt_id=f"{speaker_id}_{role[0]}{utt_idx:03d}",
                    speaker_id=speaker_id,
                    gender=gender,
                    f0=f0,
                    bn=bn32,
                    xvec=xvec,
                ))
    return Dataset(utterances, role=role), mapping
