import numpy as np
import pytest

import kwscascade as k
from kwscascade.cascade import (
    BudgetViolationError,
    Cascade,
    CascadeConfig,
    CascadePhase,
    DetectorStream,
    EventKind,
    LifecycleError,
    MemoryBudget,
    RingBuffer,
    enforce_budget,
)
from kwscascade.decoder import DecoderConfig
from kwscascade.encoder import pad_model_to_size
from kwscascade.synthetic import (
    make_tone_acoustic_model,
    synth_keyword_audio,
    synth_noise,
)
from kwscascade import speaker


def make_cascade_config(frontend_config, threshold1=0.3, threshold2=0.4):
    return CascadeConfig(
        frontend=frontend_config,
        stage1_decoder=DecoderConfig(3, smoothing_window_frames=10,
                                     score_window_frames=100, threshold=threshold1),
        stage2_decoder=DecoderConfig(3, smoothing_window_frames=10,
                                     score_window_frames=100, threshold=threshold2),
    )


class TestRingBuffer:
    def test_underfull_snapshot_in_write_order(self):
        ring = RingBuffer(32000)
        ring.write(np.arange(10, dtype=np.int16))
        snap = ring.snapshot()
        assert list(snap) == list(range(10))

    def test_wraparound_keeps_most_recent(self):
        ring = RingBuffer(32000)
        data = np.arange(32005, dtype=np.int64) % 30000
        ring.write(data.astype(np.int16))
        snap = ring.snapshot()
        assert len(snap) == 32000
        assert np.array_equal(snap, data[-32000:].astype(np.int16))

    def test_snapshot_is_pure_read(self):
        ring = RingBuffer(100)
        ring.write(np.arange(150, dtype=np.int16))
        assert np.array_equal(ring.snapshot(), ring.snapshot())

    def test_snapshot_is_a_copy(self):
        ring = RingBuffer(8)
        ring.write(np.arange(8, dtype=np.int16))
        snap = ring.snapshot()
        ring.write(np.full(4, 99, dtype=np.int16))
        assert list(snap) == list(range(8))

    def test_random_write_patterns_match_flat_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            cap = int(rng.integers(1, 64))
            ring = RingBuffer(cap)
            flat = np.zeros(0, dtype=np.int16)
            for _ in range(int(rng.integers(1, 12))):
                chunk = rng.integers(-32768, 32767, int(rng.integers(0, 3 * cap))).astype(np.int16)
                ring.write(chunk)
                flat = np.concatenate([flat, chunk])
                assert np.array_equal(ring.snapshot(), flat[-cap:])
                assert ring.total_written == len(flat)

    def test_default_capacity_is_64kb_of_samples(self):
        ring = RingBuffer()
        assert ring.capacity_samples * 2 == 64000


class TestMemoryBudget:
    def test_default_partition_fits(self):
        b = MemoryBudget()
        used = b.program_bytes + b.tables_bytes + b.buffer_bytes + b.model_budget_bytes
        assert used == 25600 + 12288 + 64000 + 13312
        assert used <= b.total_bytes == 131072

    def test_oversubscribed_partition_rejected(self):
        with pytest.raises(ValueError):
            MemoryBudget(model_budget_bytes=30000)

    def test_small_model_passes_stage1(self, frontend_config):
        model = make_tone_acoustic_model(frontend_config, 3)
        report = enforce_budget(MemoryBudget(), model, stage=1)
        assert report.ok and report.overage_bytes == 0
        assert model.byte_size < 13312

    def test_14000_byte_model_rejected_with_overage(self, frontend_config):
        model = pad_model_to_size(make_tone_acoustic_model(frontend_config, 3), 14000)
        with pytest.raises(BudgetViolationError) as err:
            enforce_budget(MemoryBudget(), model, stage=1)
        assert err.value.report.overage_bytes == 14000 - 13312 == 688
        labels = [name for name, _ in err.value.report.lines()]
        assert {"program", "tables", "audio_buffer", "model_budget"} <= set(labels)

    def test_stage2_exempt_but_reported(self, frontend_config):
        from kwscascade.encoder import Activation, EncoderLayer, EncoderModel
        from kwscascade.quantize import QuantParams, compute_quant_params, quantize, quantize_bias

        rng = np.random.default_rng(17)
        in_params = QuantParams(-30.0, 30.0)
        hidden = rng.normal(size=(1000, 32))
        out = rng.normal(size=(4, 1000))
        hp, op = compute_quant_params(hidden), compute_quant_params(out)
        layers = [
            EncoderLayer(quantize(hidden, hp),
                         quantize_bias(np.zeros(1000), hp.scale * in_params.scale),
                         in_params, Activation.RELU),
            EncoderLayer(quantize(out, op),
                         quantize_bias(np.zeros(4), op.scale * QuantParams(0.0, 40.0).scale),
                         QuantParams(0.0, 40.0), Activation.SOFTMAX),
        ]
        model = EncoderModel(layers, 32, 1, 3)
        assert model.byte_size > 2 * 13312
        report = enforce_budget(MemoryBudget(), model, stage=2)
        assert report.ok
        assert "not enforced" in report.notes

    def test_boundary_sizes(self, frontend_config):
        at_limit = pad_model_to_size(make_tone_acoustic_model(frontend_config, 3), 13312)
        assert enforce_budget(MemoryBudget(), at_limit, stage=1).ok
        over = pad_model_to_size(make_tone_acoustic_model(frontend_config, 3), 13313)
        with pytest.raises(BudgetViolationError):
            enforce_budget(MemoryBudget(), over, stage=1)


class TestCascade:
    def test_silence_produces_no_events(self, frontend_config, tone_stage1_model,
                                         tone_stage2_model):
        cascade = Cascade(make_cascade_config(frontend_config),
                          tone_stage1_model, tone_stage2_model)
        events = []
        for _ in range(20):
            events.extend(cascade.push_audio(np.zeros(3200, dtype=np.int16)))
        assert events == []
        assert cascade.wake_count == 0

    def test_single_keyword_trigger_and_accept(self, frontend_config, tone_stage1_model,
                                               tone_stage2_model, keyword_audio):
        samples, end_ms = keyword_audio
        cascade = Cascade(make_cascade_config(frontend_config),
                          tone_stage1_model, tone_stage2_model)
        events = []
        for start in range(0, len(samples), 1600):
            events.extend(cascade.push_audio(samples[start : start + 1600]))
        kinds = [e.kind for e in events]
        assert kinds == [EventKind.STAGE1_TRIGGER, EventKind.STAGE2_ACCEPT]
        trigger, accept = events
        assert abs(trigger.timestamp_ms - end_ms) <= 250
        assert accept.alignment_ms is not None and len(accept.alignment_ms) == 3
        assert accept.timestamp_ms <= trigger.timestamp_ms + 1000
        assert cascade.wake_count == 1
        assert cascade.phase is CascadePhase.LISTENING

    def test_unreachable_threshold_mutes(self, frontend_config, tone_stage1_model,
                                         tone_stage2_model, keyword_audio):
        samples, _ = keyword_audio
        cascade = Cascade(make_cascade_config(frontend_config, threshold1=1.01),
                          tone_stage1_model, tone_stage2_model)
        events = []
        for start in range(0, len(samples), 1600):
            events.extend(cascade.push_audio(samples[start : start + 1600]))
        assert events == []

    def test_stage2_reject_when_stage2_muted(self, frontend_config, tone_stage1_model,
                                             tone_stage2_model, keyword_audio):
        samples, _ = keyword_audio
        cascade = Cascade(make_cascade_config(frontend_config, threshold2=1.01),
                          tone_stage1_model, tone_stage2_model)
        events = []
        for start in range(0, len(samples), 1600):
            events.extend(cascade.push_audio(samples[start : start + 1600]))
        kinds = [e.kind for e in events]
        assert kinds == [EventKind.STAGE1_TRIGGER, EventKind.STAGE2_REJECT]
        trigger, reject = events
        # decision arrives once one extra second has streamed past the snapshot
        assert reject.timestamp_ms <= trigger.timestamp_ms + 1100

    def test_wake_count_equals_triggers(self, frontend_config, tone_stage1_model,
                                        tone_stage2_model, keyword_audio):
        samples, _ = keyword_audio
        rng = np.random.default_rng(8)
        kw2, _ = synth_keyword_audio(frontend_config, 3, unit_ms=150)
        audio = np.concatenate([samples, synth_noise(32000, rng), kw2,
                                synth_noise(24000, rng)])
        cascade = Cascade(make_cascade_config(frontend_config),
                          tone_stage1_model, tone_stage2_model)
        events = []
        for start in range(0, len(audio), 1600):
            events.extend(cascade.push_audio(audio[start : start + 1600]))
        triggers = [e for e in events if e.kind is EventKind.STAGE1_TRIGGER]
        accepts = [e for e in events if e.kind is EventKind.STAGE2_ACCEPT]
        assert cascade.wake_count == len(triggers) == 2
        assert len(accepts) == 2

    def test_stage1_keeps_processing_during_stage2(self, frontend_config,
                                                   tone_stage1_model, tone_stage2_model):
        # second keyword arriving right after the refractory is still caught,
        # so stage-1 ingestion never stalled on stage-2 work
        rng = np.random.default_rng(9)
        kw, _ = synth_keyword_audio(frontend_config, 3, unit_ms=150,
                                    lead_silence_ms=100, trail_silence_ms=100)
        audio = np.concatenate([kw, synth_noise(20800, rng), kw, synth_noise(24000, rng)])
        cascade = Cascade(make_cascade_config(frontend_config),
                          tone_stage1_model, tone_stage2_model)
        events = []
        for start in range(0, len(audio), 800):
            events.extend(cascade.push_audio(audio[start : start + 800]))
        assert cascade.wake_count == 2

    def test_legal_state_transitions_only(self, frontend_config, tone_stage1_model,
                                          tone_stage2_model, keyword_audio):
        samples, _ = keyword_audio
        cascade = Cascade(make_cascade_config(frontend_config),
                          tone_stage1_model, tone_stage2_model)
        for start in range(0, len(samples), 1600):
            cascade.push_audio(samples[start : start + 1600])
        legal = {
            CascadePhase.LISTENING: {CascadePhase.STAGE2_RUNNING},
            CascadePhase.STAGE2_RUNNING: {CascadePhase.LISTENING,
                                          CascadePhase.AWAITING_VERIFICATION},
            CascadePhase.AWAITING_VERIFICATION: {CascadePhase.LISTENING},
        }
        for prev, cur in zip(cascade.state_history, cascade.state_history[1:]):
            assert cur in legal[prev]

    def test_no_accept_without_trigger(self, frontend_config, tone_stage1_model,
                                       tone_stage2_model, keyword_audio):
        samples, _ = keyword_audio
        cascade = Cascade(make_cascade_config(frontend_config),
                          tone_stage1_model, tone_stage2_model)
        events = []
        for start in range(0, len(samples), 1600):
            events.extend(cascade.push_audio(samples[start : start + 1600]))
        seen_trigger = False
        for event in events:
            if event.kind is EventKind.STAGE1_TRIGGER:
                seen_trigger = True
            if event.kind is EventKind.STAGE2_ACCEPT:
                assert seen_trigger

    def test_full_dsp_emulation_path(self, keyword_audio):
        # stage-1 exactly as it would run on the DSP: fixed-point frontend
        # feeding FixedAccum inference, twice, byte-identical events
        samples, end_ms = keyword_audio
        fixed_frontend = k.FrontendConfig(arithmetic_mode=k.ArithmeticMode.FIXED_POINT)
        stage1 = make_tone_acoustic_model(fixed_frontend, 3)
        stage2 = make_tone_acoustic_model(fixed_frontend, 3, stacked_frames=2)
        logs = []
        for _ in range(2):
            cascade = Cascade(make_cascade_config(fixed_frontend),
                              stage1, stage2)
            events = []
            for start in range(0, len(samples), 1600):
                events.extend(cascade.push_audio(samples[start : start + 1600]))
            logs.append([(e.kind, e.timestamp_ms, e.stage1_score, e.stage2_score)
                         for e in events])
        assert logs[0] == logs[1]
        kinds = [kind for kind, _, _, _ in logs[0]]
        assert kinds == [EventKind.STAGE1_TRIGGER, EventKind.STAGE2_ACCEPT]
        assert abs(logs[0][0][1] - end_ms) <= 250

    def test_models_required(self, frontend_config, tone_stage1_model):
        with pytest.raises(LifecycleError):
            Cascade(make_cascade_config(frontend_config), tone_stage1_model, None)

    def test_oversized_stage1_model_rejected_at_load(self, frontend_config,
                                                     tone_stage2_model):
        big = pad_model_to_size(make_tone_acoustic_model(frontend_config, 3), 13313)
        with pytest.raises(BudgetViolationError):
            Cascade(make_cascade_config(frontend_config), big, tone_stage2_model)


class TestSpeakerIntegration:
    def _run(self, frontend_config, stage1, stage2, embedding, profile, audio):
        cascade = Cascade(make_cascade_config(frontend_config), stage1, stage2,
                          speaker_model=embedding, speaker_profile=profile)
        events = []
        for start in range(0, len(audio), 1600):
            events.extend(cascade.push_audio(audio[start : start + 1600]))
        return cascade, events

    def test_enrolled_speaker_accepted(self, frontend_config, tone_stage1_model,
                                       tone_stage2_model, embedding_model, keyword_audio):
        samples, _ = keyword_audio
        # enroll on the same audio's segment embedding: cosine ~ 1
        det = DetectorStream(frontend_config, tone_stage2_model,
                             DecoderConfig(3, smoothing_window_frames=10,
                                           score_window_frames=100, threshold=0.4),
                             keep_features=True)
        hits = det.push(samples)
        _, best = max(hits, key=lambda item: item[1].score)
        segment = [f for f in det.features
                   if best.alignment[0] <= f.frame_index <= best.alignment[-1]]
        profile = speaker.enroll([speaker.embed(segment, embedding_model)], threshold=0.8)
        _, events = self._run(frontend_config, tone_stage1_model, tone_stage2_model,
                              embedding_model, profile, samples)
        kinds = [e.kind for e in events]
        assert EventKind.SPEAKER_ACCEPT in kinds
        assert EventKind.SPEAKER_REJECT not in kinds

    def test_impostor_rejected(self, frontend_config, tone_stage1_model,
                               tone_stage2_model, embedding_model, keyword_audio):
        samples, _ = keyword_audio
        rng = np.random.default_rng(13)
        stranger = speaker.SpeakerSignature(rng.normal(size=64), 1)
        profile = speaker.enroll([stranger], threshold=0.8)
        cascade, events = self._run(frontend_config, tone_stage1_model, tone_stage2_model,
                                    embedding_model, profile, samples)
        kinds = [e.kind for e in events]
        assert EventKind.SPEAKER_REJECT in kinds
        assert CascadePhase.AWAITING_VERIFICATION in cascade.state_history
