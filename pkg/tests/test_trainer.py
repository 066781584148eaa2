
import numpy as np
import pytest
from conftest import (
    BLOCK,
    random_example,
    shift_output_bias,
    small_recognizer,
    small_synthesizer,
)
from oracles import (
    chain_isr_to_itts_oracle,
    chain_itts_to_isr_oracle,
    isr_loss_oracle,
    itts_loss_oracle,
)

from speechchain import numerics as nx
from speechchain.losses import asr_loss, isr_loss, itts_loss, tts_loss
from speechchain.trainer import (
    GREEDY,
    TEACHER_FORCING,
    ConfigError,
    DivergenceError,
    TrainConfig,
    basic_asr_to_tts,
    basic_tts_to_asr,
    chain_isr_to_itts,
    chain_itts_to_isr,
    epoch_order,
    make_examples,
    split_views,
    train_component,
    train_stage2,
    train_tts,
)

TOL = 1e-10


@pytest.fixture(scope="module")
def pair():
    rec = shift_output_bias(small_recognizer(seed=21, scale=0.6), sos=-5.0, markers=-2.0)
    return rec, small_synthesizer(seed=22, scale=0.5)


@pytest.mark.parametrize("seed", range(10))
def test_isr_loss_matches_oracle(pair, seed):
    rec, _ = pair
    ex = random_example(seed)
    got = float(isr_loss(rec, None, ex.utt.features, ex.tokens, ex.alignment, BLOCK).data)
    want = isr_loss_oracle(rec, ex.utt.features, ex.alignment.frame_ranges, ex.alignment.token_ranges,
                           ex.tokens, BLOCK)
    assert abs(got - want) < TOL


@pytest.mark.parametrize("seed", range(10))
def test_itts_loss_matches_oracle(pair, seed):
    _, syn = pair
    ex = random_example(seed)
    seg = ex.segments
    got = float(itts_loss(syn, None, ex.tokens, ex.utt.features, seg, BLOCK).data)
    want = itts_loss_oracle(syn, ex.tokens, ex.utt.features, seg.frame_ranges, seg.token_ranges, BLOCK)
    assert abs(got - want) < TOL


@pytest.mark.parametrize("mode", [TEACHER_FORCING, GREEDY])
@pytest.mark.parametrize("seed", range(6))
def test_chain_losses_match_oracle(pair, mode, seed):
    rec, syn = pair
    ex = random_example(100 + seed)
    greedy = mode == GREEDY
    out = chain_isr_to_itts(rec, syn, None, ex, BLOCK, mode)
    want = chain_isr_to_itts_oracle(rec, syn, ex, BLOCK, greedy)
    if want is None:
        assert out.loss is None
    else:
        assert abs(float(out.loss.data) - want) < TOL
    out = chain_itts_to_isr(rec, syn, None, ex, BLOCK, mode)
    assert abs(float(out.loss.data) - chain_itts_to_isr_oracle(rec, syn, ex, BLOCK, greedy)) < TOL


@pytest.mark.parametrize("mode", [TEACHER_FORCING, GREEDY])
@pytest.mark.parametrize("seed", range(4))
def test_single_window_collapses_to_basic_chain(pair, mode, seed):
    rec, syn = pair
    whole = BLOCK.whole_utterance()
    ex = random_example(200 + seed, block=whole)
    assert ex.alignment.N == 1
    a = chain_isr_to_itts(rec, syn, None, ex, whole, mode).loss
    b = basic_asr_to_tts(rec, syn, None, ex.utt.features, ex.tokens, mode)
    assert (a is None) == (b is None)
    if a is not None:
        assert float(a.data) == float(b.data)
    a = chain_itts_to_isr(rec, syn, None, ex, whole, mode).loss
    b = basic_tts_to_asr(rec, syn, None, ex.utt.features, ex.tokens, mode)
    assert float(a.data) == float(b.data)


def test_single_window_supervised_losses_collapse(pair):
    rec, syn = pair
    whole = BLOCK.whole_utterance()
    ex = random_example(300, block=whole)
    assert float(isr_loss(rec, None, ex.utt.features, ex.tokens, ex.alignment, whole).data) == \
        float(asr_loss(rec, None, ex.utt.features, ex.tokens).data)
    assert float(itts_loss(syn, None, ex.tokens, ex.utt.features, ex.segments, whole).data) == \
        float(tts_loss(syn, None, ex.tokens, ex.utt.features).data)


def test_chain_gradients_reach_only_the_consumer(pair):
    rec, syn = pair
    ex = random_example(5)
    p = nx.leaves(syn.params)
    out = chain_isr_to_itts(rec, syn, p, ex, BLOCK, TEACHER_FORCING)
    nx.backward(out.loss)
    grads = nx.collect_grads(p)
    assert any(np.any(g != 0) for g in grads.values())
    assert set(grads) == set(syn.params)


def test_split_views():
    exs = list(range(7))
    assert split_views(exs, TEACHER_FORCING) == (exs, exs)
    a, b = split_views(exs, GREEDY)
    assert a == [0, 2, 4, 6] and b == [1, 3, 5]


def test_epoch_order_is_seeded():
    assert np.array_equal(epoch_order(10, 3, 2, 1), epoch_order(10, 3, 2, 1))
    assert not np.array_equal(epoch_order(10, 3, 2, 1), epoch_order(10, 3, 3, 1))


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(intermediate="sometimes").validate()
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0).validate()


# ------------------------------------------------------------- training loops

def _quadratic(target):
    def loss_fn(p, ex):
        return nx.squared_error(p["w"], target)
    return loss_fn


def test_train_component_descends_and_keeps_best():
    params = {"w": np.zeros(3)}
    target = np.array([1.0, -2.0, 0.5])
    cfg = TrainConfig(epochs=30, lr=0.1, patience=5)
    out, records, done = train_component("q", params, _quadratic(target), [None] * 4,
                                         lambda ps: float(np.sum((ps["w"] - target) ** 2)), cfg)
    assert done
    assert records[-1].loss < records[0].loss
    assert np.sum((out["w"] - target) ** 2) == min(r.dev_loss for r in records)


def test_early_stopping_restores_best():
    params = {"w": np.zeros(1)}
    devs = iter([1.0, 0.5, 0.7, 0.8, 0.9, 1.0])
    snapshots = []

    def dev_fn(ps):
        snapshots.append(ps["w"].copy())
        return next(devs)

    cfg = TrainConfig(epochs=10, lr=0.1, patience=3)
    out, records, done = train_component("q", params, _quadratic(np.ones(1)), [None], dev_fn, cfg)
    assert done and len(records) == 4
    np.testing.assert_array_equal(out["w"], snapshots[1])


def test_divergence_aborts():
    calls = {"n": 0}

    def loss_fn(p, ex):
        calls["n"] += 1
        return nx.mul(nx.sum_(nx.mul(p["w"], p["w"])), 1000.0 ** calls["n"])

    with pytest.raises(DivergenceError, match="exceeds"):
        train_component("w", {"w": np.ones(2)}, loss_fn, [None], lambda ps: 0.0,
                        TrainConfig(epochs=5, lr=1e-9))


def test_non_finite_loss_aborts(tmp_path):
    def loss_fn(p, ex):
        return nx.mul(nx.sum_(p["w"]), np.nan)

    with pytest.raises(DivergenceError) as err:
        train_component("w", {"w": np.ones(2)}, loss_fn, [None], lambda ps: 0.0, TrainConfig(epochs=2),
                        state_path=tmp_path / "s")
    assert err.value.checkpoint == tmp_path / "s"


def test_stage1_resume_is_bit_identical(small_corpus, tmp_path):
    syn = small_synthesizer(seed=4, vocab_size=len(small_corpus.vocab))
    train = make_examples(small_corpus["train"], small_corpus.vocab)
    dev = make_examples(small_corpus["dev"], small_corpus.vocab)
    cfg = TrainConfig(epochs=3, lr=0.01)
    full, rec_full, _ = train_tts(syn, train, dev, cfg)
    part, _, done = train_tts(syn, train, dev, cfg, state_path=tmp_path / "s", stop_after=1)
    assert not done
    resumed, rec_resumed, done = train_tts(syn, train, dev, cfg, state_path=tmp_path / "s")
    assert done
    for k in full:
        assert np.array_equal(full[k], resumed[k])
    assert [r.to_dict() for r in rec_full] == [r.to_dict() for r in rec_resumed]


def _aligned(corpus, split, block):
    teacher = small_recognizer(seed=9, vocab_size=len(corpus.vocab), layers=2, scale=0.5)
    return make_examples(corpus[split], corpus.vocab, teacher, block)


@pytest.mark.parametrize("mode", [TEACHER_FORCING, GREEDY])
def test_stage2_isolation(small_corpus, mode):
    V = len(small_corpus.vocab)
    isr = small_recognizer(seed=1, vocab_size=V, scale=0.5)
    itts = small_synthesizer(seed=2, vocab_size=V, scale=0.5)
    chain = _aligned(small_corpus, "chain", BLOCK)
    dev = _aligned(small_corpus, "dev", BLOCK)
    last = {"isr": isr.params, "itts": itts.params}
    changed = {"isr": 0, "itts": 0}

    def audit(direction, isr_params, itts_params):
        producer, consumer = ("isr", "itts") if direction == "isr_to_itts" else ("itts", "isr")
        now = {"isr": isr_params, "itts": itts_params}
        for k in now[producer]:
            assert np.array_equal(now[producer][k], last[producer][k]), (direction, k)
        if any(not np.array_equal(now[consumer][k], last[consumer][k]) for k in now[consumer]):
            changed[consumer] += 1
        last.update({k: {n: v.copy() for n, v in now[k].items()} for k in now})

    train_stage2(isr, itts, chain, dev, BLOCK, TrainConfig(epochs=1, lr=1e-3, intermediate=mode), on_update=audit)
    assert changed["isr"] > 0 and changed["itts"] > 0


def test_stage2_resume_is_bit_identical(small_corpus, tmp_path):
    V = len(small_corpus.vocab)
    isr = small_recognizer(seed=1, vocab_size=V, scale=0.5)
    itts = small_synthesizer(seed=2, vocab_size=V, scale=0.5)
    chain = _aligned(small_corpus, "chain", BLOCK)
    dev = _aligned(small_corpus, "dev", BLOCK)
    cfg = TrainConfig(epochs=2, lr=1e-3)
    full = train_stage2(isr, itts, chain, dev, BLOCK, cfg)
    part = train_stage2(isr, itts, chain, dev, BLOCK, cfg, state_path=tmp_path / "s", stop_after=1)
    assert not part.finished
    resumed = train_stage2(isr, itts, chain, dev, BLOCK, cfg, state_path=tmp_path / "s")
    assert resumed.finished
    for a, b in ((full.recognizer, resumed.recognizer), (full.synthesizer, resumed.synthesizer)):
        for k in a:
            assert np.array_equal(a[k], b[k])
    assert [r.to_dict() for r in full.records] == [r.to_dict() for r in resumed.records]


def test_stage2_records_cover_both_components(small_corpus):
    V = len(small_corpus.vocab)
    chain = _aligned(small_corpus, "chain", BLOCK)
    res = train_stage2(small_recognizer(seed=1, vocab_size=V), small_synthesizer(seed=2, vocab_size=V),
                       chain, chain[:2], BLOCK, TrainConfig(epochs=1))
    assert {r.component for r in res.records} == {"isr", "itts"}
    assert all(r.stage == 2 for r in res.records)
    itts_rec = [r for r in res.records if r.component == "itts"][0]
    assert itts_rec.itts_avg_main_blocks is not None
