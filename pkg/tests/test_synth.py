import numpy as np
import pytest

from radargest import (
    GESTURE_CLASSES,
    SynthTargetSpec,
    build_synthetic_corpus,
    make_gesture_recording,
    predict_doppler_bin,
    synth_recording,
)
from radargest.errors import ValidationError

WAVELENGTH = 4.9965e-3


class TestSynthRecording:
    def test_static_noiseless_target_has_identical_sweeps(self):
        spec = SynthTargetSpec(initial_range_m=0.1, velocity_mps=0.0, noise_std=0.0)
        rec = synth_recording(spec, 16, 32, 160.0, seed=0)
        assert np.array_equal(rec.sweeps[0], np.broadcast_to(rec.sweeps[0, 0], (16, 32)))

    def test_inter_sweep_phase_increment(self):
        # Closed form: 4*pi*v / (lambda * f_sweep) ~ 1.572 rad at v=0.1, 160 Hz.
        spec = SynthTargetSpec(initial_range_m=0.1, velocity_mps=0.1, noise_std=0.0,
                               envelope_sigma_m=0.05)
        rec = synth_recording(spec, 8, 1, 160.0, seed=0, range_start_m=0.1, range_step_m=1e-3)
        col = rec.sweeps[0, :, 0].astype(np.complex128)
        increments = np.angle(col[1:] * np.conj(col[:-1]))
        expected = 4 * np.pi * 0.1 / (WAVELENGTH * 160.0)
        expected_wrapped = np.angle(np.exp(1j * expected))
        assert np.allclose(increments, expected_wrapped, atol=1e-5)
        assert expected == pytest.approx(1.572, abs=5e-4)

    def test_deterministic_for_fixed_seed(self):
        spec = SynthTargetSpec(initial_range_m=0.1, velocity_mps=0.05, noise_std=0.3)
        a = synth_recording(spec, 32, 16, 160.0, seed=42)
        b = synth_recording(spec, 32, 16, 160.0, seed=42)
        assert np.array_equal(a.sweeps, b.sweeps)

    def test_target_leaving_window_sets_flag(self):
        spec = SynthTargetSpec(initial_range_m=0.1, velocity_mps=1.0, noise_std=0.0)
        rec = synth_recording(spec, 160, 32, 160.0, seed=0)
        assert rec.clipped
        inside = SynthTargetSpec(initial_range_m=0.08, velocity_mps=0.0, noise_std=0.0)
        assert not synth_recording(inside, 160, 64, 160.0, seed=0).clipped

    def test_spec_validation(self):
        with pytest.raises(ValidationError):
            SynthTargetSpec(initial_range_m=0.1, envelope_sigma_m=0.0)
        with pytest.raises(ValidationError):
            SynthTargetSpec(initial_range_m=0.1, amplitude=-1.0)


class TestDopplerBin:
    def test_zero_velocity(self):
        assert predict_doppler_bin(0.0, 160.0, 32) == 0

    def test_positive_velocity_closed_form(self):
        # f_d = 2*0.1/lambda ~ 40.03 Hz, resolution 5 Hz -> bin 8.
        assert predict_doppler_bin(0.1, 160.0, 32) == 8

    def test_negative_velocity_wraps(self):
        assert predict_doppler_bin(-0.1, 160.0, 32) == 32 - 8

    def test_wrap_is_conjugate_symmetric(self):
        for v in (0.02, 0.05, 0.13):
            pos = predict_doppler_bin(v, 160.0, 32)
            neg = predict_doppler_bin(-v, 160.0, 32)
            assert (pos + neg) % 32 == 0

    def test_aliasing_raises_naming_nyquist(self):
        with pytest.raises(ValidationError, match="Nyquist"):
            predict_doppler_bin(0.5, 160.0, 32)


class TestGestureCorpus:
    def test_recording_is_labeled(self):
        rec = make_gesture_recording(2, seed=0, user_id=3, session_id=1)
        assert rec.label == 2
        assert rec.user_id == 3
        assert not rec.clipped

    def test_corpus_size_and_classes(self):
        recs = build_synthetic_corpus(per_class=3, seed=0)
        assert len(recs) == 3 * len(GESTURE_CLASSES)
        assert sorted({r.label for r in recs}) == list(range(len(GESTURE_CLASSES)))

    def test_bad_class_id(self):
        with pytest.raises(ValidationError):
            make_gesture_recording(99, seed=0)
