import math
import struct
from collections import OrderedDict

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from scipy.fft import idct

from lightgrad.checkpoint import read_checkpoint, write_checkpoint
from lightgrad.errors import CheckpointError, ConfigError, FormatError, ShapeError, VocabularyError
from lightgrad.harness import config as config_io
from lightgrad.harness import train as T
from lightgrad.harness.bench import PeakRSS, bench
from lightgrad.harness.config import TrainConfig
from lightgrad.harness.corpus import (TOY_N_PHONEMES, Vocabulary, gen_toy_corpus, load_corpus,
                                      load_durations, parse_transcript, toy_duration_range,
                                      toy_template)
from lightgrad.harness.melio import decode_mel, encode_mel, frames_to_seconds, read_mel, write_mel
from lightgrad.harness.metrics import mcd, mel_cepstrum
from lightgrad.nn import count_parameters
from lightgrad.samplers import SamplerConfig

TINY_MELS = 16
TINY = TrainConfig(lr=2e-3, batch_size=2, iterations=0, n_mels=TINY_MELS, base_channels=8, groups=4,
                   enc_hidden=16, enc_channels=16, enc_blocks=1, dur_channels=8, segment_frames=16)


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    gen_toy_corpus(6, 3, out, n_mels=TINY_MELS)
    return out


@pytest.fixture(scope="module")
def tiny_state(tiny_corpus):
    return T.train(TINY.replace(iterations=30), load_corpus(tiny_corpus))


# ---------------------------------------------------------------- config

def test_config_round_trip():
    cfg = TINY.replace(dim_mults=(1, 2, 2), separable=False, method="ode-euler", grid="lambda")
    assert config_io.loads(config_io.dumps(cfg)) == cfg


def test_config_defaults():
    cfg = TrainConfig()
    assert cfg.lr == 1e-4 and cfg.batch_size == 16 and cfg.tau == 1.5
    assert (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps) == (0.9, 0.999, 1e-8)
    assert cfg.sampler().method == "dpm-solver-1"


def test_config_errors_carry_line_numbers():
    with pytest.raises(FormatError, match=r"cfg\.txt:3: unknown key"):
        config_io.loads("lr=0.1\n# comment\nbogus=1\n", path="cfg.txt")
    with pytest.raises(FormatError, match=":2: bad value"):
        config_io.loads("nfe=4\nnfe=four\n", path="x")
    with pytest.raises(FormatError, match=":1: expected key=value"):
        config_io.loads("nfe 4\n", path="x")
    with pytest.raises(ConfigError):
        config_io.loads("lr=-1\n")


def test_config_overrides():
    cfg = config_io.apply_overrides(TrainConfig(), ["nfe=10", "tau=2.0", "separable=false"])
    assert (cfg.nfe, cfg.tau, cfg.separable) == (10, 2.0, False)


# ---------------------------------------------------------------- file formats

@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(0, 12), st.integers(0, 2 ** 31))
def test_mel_round_trip_bit_exact(n_mels, n_frames, seed):
    mel = np.random.default_rng(seed).standard_normal((n_mels, n_frames)).astype(np.float32)
    buf = encode_mel(mel)
    assert len(buf) == 16 + 4 * n_mels * n_frames
    back = decode_mel(buf)
    assert back.shape == mel.shape and back.tobytes() == mel.tobytes()


def test_mel_layout_is_frame_major(tmp_path):
    mel = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_mel(tmp_path / "a.mel", mel)
    raw = (tmp_path / "a.mel").read_bytes()
    assert raw[:4] == b"MELB"
    assert struct.unpack_from("<III", raw, 4) == (1, 3, 2)
    assert list(np.frombuffer(raw, "<f4", offset=16)) == [0, 3, 1, 4, 2, 5]
    assert np.array_equal(read_mel(tmp_path / "a.mel"), mel)


def test_mel_format_errors(tmp_path):
    good = encode_mel(np.zeros((2, 3), np.float32))
    with pytest.raises(FormatError, match="magic"):
        decode_mel(b"XXXX" + good[4:])
    with pytest.raises(FormatError, match="payload"):
        decode_mel(good[:-4])
    with pytest.raises(FormatError, match="payload"):
        decode_mel(good + b"\0")
    (tmp_path / "bad.mel").write_bytes(good[:10])
    with pytest.raises(FormatError, match="bad.mel"):
        read_mel(tmp_path / "bad.mel")


def test_frames_to_seconds():
    assert frames_to_seconds(22050) == pytest.approx(256.0)
    assert frames_to_seconds(1) == 256 / 22050


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    entries = OrderedDict([("a", rng.standard_normal((3, 4)).astype(np.float32)),
                           ("scalar", np.float32(2.5)), ("empty", np.zeros((0, 2), np.float32)),
                           ("ünï.code", rng.standard_normal(5).astype(np.float32))])
    write_checkpoint(tmp_path / "c", entries)
    back = read_checkpoint(tmp_path / "c")
    assert list(back) == list(entries)
    for k in entries:
        assert np.asarray(entries[k]).tobytes() == back[k].tobytes()
        assert back[k].shape == np.asarray(entries[k]).shape


def test_checkpoint_corruption(tmp_path):
    write_checkpoint(tmp_path / "c", OrderedDict(a=np.ones(4, np.float32)))
    raw = (tmp_path / "c").read_bytes()
    for bad, msg in [(b"ABCD" + raw[4:], "magic"), (raw[:-3], "truncated"), (raw + b"\0", "trailing")]:
        (tmp_path / "d").write_bytes(bad)
        with pytest.raises(CheckpointError, match=msg):
            read_checkpoint(tmp_path / "d")


# ---------------------------------------------------------------- corpus

def test_toy_corpus_is_byte_identical_for_a_seed(tmp_path):
    gen_toy_corpus(5, 11, tmp_path / "a")
    gen_toy_corpus(5, 11, tmp_path / "b")
    gen_toy_corpus(5, 12, tmp_path / "c")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    assert (tmp_path / "a" / "toy0000.mel").read_bytes() != (tmp_path / "c" / "toy0000.mel").read_bytes()


def test_toy_frame_counts_match_durations(tmp_path):
    utts = gen_toy_corpus(10, 4, tmp_path)
    durs = load_durations(tmp_path)
    for u in load_corpus(tmp_path):
        d = durs[u.utt_id]
        assert len(d) == len(u.tokens)
        assert u.mel.shape == (20, sum(d))
        for tok, n in zip(u.tokens, d):
            lo, hi = toy_duration_range(int(tok[1:]))
            assert lo <= n <= hi
    assert len(utts) == 10


def test_toy_templates_are_separable():
    templates = [toy_template(k, 8) for k in range(TOY_N_PHONEMES)]
    worst = min(mcd(templates[a], templates[b])
                for a in range(TOY_N_PHONEMES) for b in range(a + 1, TOY_N_PHONEMES))
    assert worst > 2.0


def test_transcript_errors_report_line():
    assert [u.tokens for u in parse_transcript("a|x y\n\nb|z\n")] == [["x", "y"], ["z"]]
    with pytest.raises(FormatError, match="t.txt:2:"):
        parse_transcript("a|x\nbroken line\n", "t.txt")
    with pytest.raises(FormatError, match=":1:"):
        parse_transcript("a|   \n", "t.txt")


def test_load_corpus_missing_transcript(tmp_path):
    with pytest.raises(FormatError, match="transcript"):
        load_corpus(tmp_path)


def test_vocabulary():
    v = Vocabulary(["a", "b"])
    assert v.encode(["a", "b"]) == [1, 2]
    assert Vocabulary.from_text(v.to_text()).encode(["b"]) == [2]
    with pytest.raises(VocabularyError):
        v.encode(["zz"])


# ---------------------------------------------------------------- metrics

def test_mcd_identical_is_zero():
    mel = np.random.default_rng(0).standard_normal((20, 7))
    assert mcd(mel, mel) == 0.0


def test_mcd_single_unit_coefficient():
    ref = np.random.default_rng(1).standard_normal((20, 1))
    for d in (1, 5, 13):
        unit = np.zeros(20)
        unit[d] = 1.0
        hyp = ref + idct(unit, type=2, norm="ortho")[:, None]
        assert mcd(ref, hyp) == pytest.approx(10 / math.log(10) * math.sqrt(2), abs=1e-12)
        assert 10 / math.log(10) * math.sqrt(2) == pytest.approx(6.1419, abs=5e-5)
    # c0 and coefficients past 13 are ignored
    for d in (0, 14):
        unit = np.zeros(20)
        unit[d] = 1.0
        assert mcd(ref, ref + idct(unit, type=2, norm="ortho")[:, None]) == pytest.approx(0, abs=1e-12)


def test_mcd_symmetric_and_frame_mean():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((20, 6)), rng.standard_normal((20, 6))
    assert mcd(a, b) == mcd(b, a)
    per_frame = [mcd(a[:, i:i + 1], b[:, i:i + 1]) for i in range(6)]
    assert mcd(a, b) == pytest.approx(np.mean(per_frame), rel=1e-12)
    assert mel_cepstrum(a).shape == (13, 6)


def test_mcd_frame_mismatch():
    with pytest.raises(ShapeError, match="frame counts"):
        mcd(np.zeros((20, 3)), np.zeros((20, 4)))


# ---------------------------------------------------------------- training

def test_training_is_deterministic(tiny_corpus, tmp_path):
    utts = load_corpus(tiny_corpus)
    T.train(TINY.replace(iterations=5), utts, tmp_path / "a.ck")
    T.train(TINY.replace(iterations=5), utts, tmp_path / "b.ck")
    assert (tmp_path / "a.ck").read_bytes() == (tmp_path / "b.ck").read_bytes()
    T.train(TINY.replace(iterations=5, seed=1), utts, tmp_path / "c.ck")
    assert (tmp_path / "a.ck").read_bytes() != (tmp_path / "c.ck").read_bytes()


def test_resume_reproduces_next_step_exactly(tiny_corpus, tmp_path):
    utts = load_corpus(tiny_corpus)
    straight = T.train(TINY.replace(iterations=4), utts)
    data = T.prepare(utts, straight.vocab)
    expected = T.train_step(straight, data)

    T.train(TINY.replace(iterations=3), utts, tmp_path / "r.ck")
    resumed = T.load(tmp_path / "r.ck")
    assert resumed.iteration == 3
    T.train(TINY.replace(iterations=1), utts, state=resumed)
    got = T.train_step(resumed, data)
    assert got == expected
    for a, b in zip(straight.model.parameters(), resumed.model.parameters()):
        assert torch.equal(a, b)


def test_zero_iterations_checkpoint_equals_initialisation(tiny_corpus, tmp_path):
    utts = load_corpus(tiny_corpus)
    T.train(TINY, utts, tmp_path / "z.ck")
    init = T.init_state(TINY, Vocabulary.from_utterances(utts))
    entries = read_checkpoint(tmp_path / "z.ck")
    assert "adam.step" not in entries and int(entries["meta.iteration"].item()) == 0
    for name, p in init.model.named_parameters():
        assert entries["model." + name].tobytes() == p.detach().numpy().tobytes()


def test_loss_log_and_moving_average_decrease(tmp_path):
    gen_toy_corpus(1, 5, tmp_path / "one", n_mels=TINY_MELS)
    utts = load_corpus(tmp_path / "one")
    T.train(TINY.replace(iterations=200, batch_size=4), utts, log_path=tmp_path / "loss.txt")
    assert (tmp_path / "loss.txt").read_text().splitlines()[0] == "iter loss_diff loss_enc loss_dur"
    rows = T.read_loss_log(tmp_path / "loss.txt")
    assert rows.shape == (200, 4) and list(rows[:, 0]) == list(range(1, 201))
    total = rows[:, 1:].sum(axis=1)
    blocks = total.reshape(4, 50).mean(axis=1)
    assert np.all(np.diff(blocks) < 0), blocks


def test_load_rejects_missing_fields(tiny_state, tmp_path):
    T.save(tiny_state, tmp_path / "ok.ck")
    entries = read_checkpoint(tmp_path / "ok.ck")
    for drop in ("meta.config", "model.decoder.out_conv.weight"):
        partial = OrderedDict((k, v) for k, v in entries.items() if k != drop)
        write_checkpoint(tmp_path / "bad.ck", partial)
        with pytest.raises(CheckpointError, match="missing"):
            T.load(tmp_path / "bad.ck")


def test_train_rejects_wrong_mel_size(tiny_corpus):
    with pytest.raises(FormatError, match="n_mels"):
        T.train(TINY.replace(n_mels=20), load_corpus(tiny_corpus))


# ---------------------------------------------------------------- synthesis and bench

def test_synth_length_matches_predicted_durations(tiny_state):
    ids = tiny_state.vocab.encode(["p01", "p03", "p07", "p01"])
    for nfe in (4, 10):
        syn = tiny_state.model.synthesize(ids, SamplerConfig(nfe=nfe, seed=3))
        assert syn.mel.shape == (TINY_MELS, int(syn.durations.sum()))
        assert np.all(syn.durations >= 1)


def test_parameter_count_matches_checkpoint_entries(tiny_state, tmp_path):
    T.save(tiny_state, tmp_path / "p.ck")
    entries = read_checkpoint(tmp_path / "p.ck")
    enumerated = sum(v.size for k, v in entries.items() if k.startswith("model."))
    assert T.parameter_count(entries) == enumerated == count_parameters(tiny_state.model)


def test_bench_report(tiny_state):
    ids = tiny_state.vocab.encode(["p01", "p03", "p07"] * 8)
    report = bench(tiny_state.model, [ids], repeats=2)
    assert [(r.system, r.nfe) for r in report.rows] == [
        ("non-streaming", 10), ("non-streaming", 4), ("streaming", 4)]
    for r in report.rows:
        assert abs(r.rtf - r.latency_s / r.audio_s) <= 1e-6
        assert r.params == count_parameters(tiny_state.model)
        assert r.peak_mem_mb >= 0
    nfe10, nfe4, stream = report.rows
    assert nfe4.latency_s < nfe10.latency_s
    assert stream.latency_s <= stream.total_s
    table, csv_text = report.table(), report.to_csv()
    assert "warmup=1 repeats=2" in table and "threads=1" in table
    assert csv_text.splitlines()[0].startswith("system,nfe,latency_s,rtf")
    assert len(csv_text.splitlines()) == 4
    assert torch.get_num_threads() == 1


def test_peak_rss_sees_allocation():
    with PeakRSS() as mem:
        block = np.ones(64 * 2 ** 20 // 8)
        block.sum()
    assert mem.peak_mb > 16


def test_learning_rate_schedule():
    assert T.learning_rate(TrainConfig(lr=1e-3), 500) == 1e-3
    cfg = TrainConfig(lr=1e-3, lr_decay_iters=100, lr_min=1e-5)
    assert T.learning_rate(cfg, 0) == 1e-3
    assert T.learning_rate(cfg, 50) == pytest.approx((1e-3 + 1e-5) / 2)
    assert T.learning_rate(cfg, 100) == pytest.approx(1e-5) == T.learning_rate(cfg, 150)
    rates = [T.learning_rate(cfg, i) for i in range(101)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    with pytest.raises(ConfigError):
        TrainConfig(lr=1e-3, lr_min=2e-3)
