import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcfp.audio_io import (AudioSignal, change_speed, load_canonical, load_wav, resample, resample_ratio,
                           write_wav)
from tcfp.errors import MalformedHeader, UnsupportedEncoding


def raw_wav(path, payload: bytes, tag=1, channels=1, rate=44100, bits=16, extra_chunks=b""):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + extra_chunks
    body += b"data" + struct.pack("<I", len(payload)) + payload
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    return path


def tone(freq, fs, dur=1.0, amp=0.5):
    t = np.arange(int(round(dur * fs))) / fs
    return amp * np.sin(2 * np.pi * freq * t)


def tone_amplitude(x, freq, fs):
    t = np.arange(len(x)) / fs
    return 2 * abs(np.mean(x * np.exp(-2j * np.pi * freq * t)))


class TestAudioSignal:
    def test_duration(self):
        assert AudioSignal(np.zeros(8820), 8820).duration == 1.0

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            AudioSignal(np.zeros(4), 0)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            AudioSignal(np.array([0.0, np.nan]), 8000)

    def test_samples_read_only(self):
        sig = AudioSignal(np.zeros(4), 8000)
        with pytest.raises(ValueError):
            sig.samples[0] = 1.0


class TestLoadWav:
    def test_16bit_scaling(self, tmp_path):
        p = raw_wav(tmp_path / "a.wav", np.array([0, 16384, -32768], dtype="<i2").tobytes())
        sig = load_wav(p)
        assert sig.sample_rate == 44100
        np.testing.assert_array_equal(sig.samples, [0.0, 0.5, -1.0])

    def test_stereo_downmix(self, tmp_path):
        frame = np.array([round(0.4 * 32768), round(0.8 * 32768)], dtype="<i2").tobytes()
        sig = load_wav(raw_wav(tmp_path / "s.wav", frame, channels=2))
        assert sig.samples[0] == pytest.approx(0.6, abs=1 / 32768)

    def test_8bit_unsigned(self, tmp_path):
        sig = load_wav(raw_wav(tmp_path / "a.wav", bytes([128, 192, 0]), bits=8))
        np.testing.assert_array_equal(sig.samples, [0.0, 0.5, -1.0])

    def test_24bit(self, tmp_path):
        vals = [0, 1 << 22, -(1 << 23)]
        payload = b"".join(int(v & 0xFFFFFF).to_bytes(3, "little") for v in vals)
        sig = load_wav(raw_wav(tmp_path / "a.wav", payload, bits=24))
        np.testing.assert_array_equal(sig.samples, [0.0, 0.5, -1.0])

    def test_float32(self, tmp_path):
        payload = np.array([0.25, -0.75], dtype="<f4").tobytes()
        sig = load_wav(raw_wav(tmp_path / "a.wav", payload, tag=3, bits=32))
        np.testing.assert_array_equal(sig.samples, [0.25, -0.75])

    def test_skips_unknown_chunks(self, tmp_path):
        extra = b"LIST" + struct.pack("<I", 3) + b"abc" + b"\x00"
        p = raw_wav(tmp_path / "a.wav", np.array([16384], dtype="<i2").tobytes(), extra_chunks=extra)
        assert load_wav(p).samples[0] == 0.5

    def test_sine_round_trip_within_one_lsb(self, tmp_path):
        x = tone(440, 44100, amp=0.9)
        write_wav(tmp_path / "t.wav", AudioSignal(x, 44100))
        back = load_wav(tmp_path / "t.wav")
        assert back.sample_rate == 44100
        assert np.max(np.abs(back.samples - x)) <= 1 / 32768

    @pytest.mark.parametrize("bits", [8, 24, 32])
    def test_other_widths_round_trip(self, tmp_path, bits):
        x = tone(440, 8000, dur=0.1, amp=0.7)
        write_wav(tmp_path / "t.wav", AudioSignal(x, 8000), bits=bits)
        back = load_wav(tmp_path / "t.wav").samples
        assert np.max(np.abs(back - x)) <= {8: 1 / 128, 24: 1 / (1 << 23), 32: 1e-7}[bits]

    def test_not_riff(self, tmp_path):
        p = tmp_path / "x.wav"
        p.write_bytes(b"hello world, not audio")
        with pytest.raises(MalformedHeader):
            load_wav(p)

    def test_missing_data_chunk(self, tmp_path):
        fmt = struct.pack("<HHIIHH", 1, 1, 8000, 16000, 2, 16)
        body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
        p = tmp_path / "x.wav"
        p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
        with pytest.raises(MalformedHeader):
            load_wav(p)

    def test_non_pcm_rejected(self, tmp_path):
        with pytest.raises(UnsupportedEncoding):
            load_wav(raw_wav(tmp_path / "a.wav", b"\x00" * 4, tag=2))

    def test_too_many_channels(self, tmp_path):
        with pytest.raises(UnsupportedEncoding):
            load_wav(raw_wav(tmp_path / "a.wav", b"\x00" * 12, channels=3))

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_wav(tmp_path / "nope.wav")

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(-32768, 32767), min_size=1, max_size=200))
    def test_int16_round_trip_exact(self, tmp_path_factory, ints):
        path = tmp_path_factory.mktemp("rt") / "r.wav"
        x = np.array(ints) / 32768.0
        write_wav(path, AudioSignal(x, 8000))
        np.testing.assert_array_equal(load_wav(path).samples, x)


class TestResample:
    def test_length_and_tone_amplitude(self):
        sig = AudioSignal(tone(440, 44100, dur=2.0) + tone(3000, 44100, dur=2.0), 44100)
        out = resample(sig, 8820)
        assert out.sample_rate == 8820 and len(out) == 17640
        mid = out.samples[2000:-2000]
        assert tone_amplitude(mid, 440, 8820) == pytest.approx(0.5, abs=0.005)
        assert tone_amplitude(mid, 3000, 8820) == pytest.approx(0.5, abs=0.005)

    def test_anti_aliasing(self):
        # 6 kHz is above the new Nyquist (4410 Hz); it must not fold down to 2820 Hz
        out = resample(AudioSignal(tone(6000, 44100, dur=1.0), 44100), 8820)
        assert tone_amplitude(out.samples[1000:-1000], 8820 - 6000, 8820) < 1e-3

    def test_identity_rate(self):
        sig = AudioSignal(tone(100, 8820, dur=0.1), 8820)
        assert resample(sig, 8820) is sig

    def test_upsample_ratio(self):
        y = resample_ratio(tone(100, 8000, dur=0.5), 2, 1)
        assert len(y) == 8000

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            resample(AudioSignal(np.zeros(10), 8000), 0)

    @pytest.mark.parametrize("factor", [0.9, 1.1])
    def test_change_speed_moves_frequency(self, factor):
        out = change_speed(AudioSignal(tone(440, 8820, dur=2.0), 8820), factor)
        assert len(out) == round(2.0 * 8820 / factor)
        mid = out.samples[1000:-1000]
        assert tone_amplitude(mid, 440 * factor, 8820) == pytest.approx(0.5, abs=0.01)

    def test_load_canonical(self, tmp_path):
        write_wav(tmp_path / "a.wav", AudioSignal(tone(440, 22050, dur=0.5), 22050))
        sig = load_canonical(tmp_path / "a.wav")
        assert sig.sample_rate == 8820 and len(sig) == 4410

    def test_sixty_seconds_length(self):
        out = resample(AudioSignal(np.zeros(60 * 44100), 44100), 8820)
        assert abs(len(out) - 529200) <= 1

    def test_peak_bin_after_resampling(self):
        out = resample(AudioSignal(tone(440, 44100), 44100), 8820).samples
        spectrum = np.abs(np.fft.rfft(out))
        hz_per_bin = 8820 / len(out)
        assert abs(np.argmax(spectrum) * hz_per_bin - 440) <= hz_per_bin
