import struct

import numpy as np
import pytest

from llmdet.dictionary import (
    MISS,
    DictionaryBuildError,
    DictionaryFormatError,
    DictLevel,
    NgramDictionary,
    ProbEntry,
    build_dictionary,
    contexts_from_ngrams,
    count_top_ngrams,
    dictionary_from_bytes,
    dictionary_to_bytes,
    estimate_storage,
    inspect_dictionary,
    load_dictionary,
    lookup,
    quantize,
    save_dictionary,
)


class UniformProvider:
    """Same fixed distribution for every context."""

    def __init__(self, probs, name="uniform", vocab_hash=1):
        self.probs = probs  # token id -> prob
        self.name = name
        self.vocab_hash = vocab_hash

    def next_token_distribution(self, context, top_k):
        entries = sorted(self.probs.items(), key=lambda kv: (-kv[1], kv[0]))
        return [ProbEntry(t, p) for t, p in entries[:top_k]]


def make_dict(level_entries, n=2, vocab_hash=1, source="src"):
    level = DictLevel(n=n)
    for ctx, pairs in level_entries.items():
        level.entries[ctx] = {t: p for t, p in sorted(pairs, key=lambda e: (-e[1], e[0]))}
    return NgramDictionary(source_name=source, levels={n: level}, vocab_hash=vocab_hash)


# --- count_top_ngrams ---


def test_count_bigrams_hand_counted():
    # windows of [a,b,a,b]: (a,b) (b,a) (a,b)
    a, b = 1, 2
    counted = count_top_ngrams([[a, b, a, b]], n=2, k=2)
    assert counted == [((a, b), 2), ((b, a), 1)]


def test_sequence_shorter_than_n_contributes_nothing():
    assert count_top_ngrams([[1]], n=2, k=5) == []


def test_single_trigram_window():
    assert count_top_ngrams([[1, 1, 1]], n=3, k=1) == [((1, 1, 1), 1)]


def test_tie_break_is_lexicographic_on_token_ids():
    counted = count_top_ngrams([[2, 3, 1, 2]], n=2, k=10)
    # all three bigrams occur once; order (1,2) < (2,3) < (3,1)
    assert counted == [((1, 2), 1), ((2, 3), 1), ((3, 1), 1)]


def test_contexts_from_ngrams_dedupes_prefixes():
    counted = [((1, 2), 5), ((1, 3), 4), ((2, 1), 1)]
    assert contexts_from_ngrams(counted) == [(1,), (2,)]


# --- build_dictionary ---


def test_uniform_provider_tie_breaks_by_lower_id():
    provider = UniformProvider({0: 0.5, 1: 0.5})
    d = build_dictionary(provider, {2: [(0,), (1,)]}, {2: 1})
    assert d.levels[2].entries[(0,)] == {0: 0.5}
    assert d.levels[2].entries[(1,)] == {0: 0.5}


def test_top_k_larger_than_vocab_is_a_noop():
    provider = UniformProvider({0: 0.25, 1: 0.25, 2: 0.25, 3: 0.25})
    d = build_dictionary(provider, {2: [(0,)]}, {2: 50})
    assert len(d.levels[2].entries[(0,)]) == 4


def test_provider_failure_aborts_with_context():
    class Failing(UniformProvider):
        def next_token_distribution(self, context, top_k):
            if context == (2,):
                raise RuntimeError("backend down")
            return super().next_token_distribution(context, top_k)

    provider = Failing({0: 1.0})
    with pytest.raises(DictionaryBuildError) as err:
        build_dictionary(provider, {2: [(1,), (2,)]}, {2: 1})
    assert err.value.context == (2,)
    assert err.value.level == 2


def test_build_canonicalizes_context_order():
    provider = UniformProvider({0: 0.6, 1: 0.4})
    d1 = build_dictionary(provider, {2: [(3,), (1,), (2,)]}, {2: 2})
    d2 = build_dictionary(provider, {2: [(2,), (3,), (1,)]}, {2: 2})
    assert dictionary_to_bytes(d1) == dictionary_to_bytes(d2)


# --- lookup ---


def test_lookup_direct_hit():
    d = make_dict({(1,): [(2, 0.5)]})
    assert lookup(d, [1], 2) == 0.5


def test_lookup_token_outside_top_k_is_miss():
    d = make_dict({(1,): [(2, 0.5)]})
    assert lookup(d, [1], 3) is MISS


def test_lookup_unknown_context_is_miss():
    d = make_dict({(1,): [(2, 0.5)]})
    assert lookup(d, [9], 2) is MISS


def test_lookup_is_total_over_any_context_length():
    d = make_dict({(1,): [(2, 0.5)]})
    # no level for these lengths: MISS, never an exception
    assert lookup(d, [], 2) is MISS
    assert lookup(d, [1, 2, 3, 4, 5], 2) is MISS


# --- quantize ---


def reference_binary16(value: float) -> float:
    """Independent round-to-nearest-even binary16 via bit manipulation."""
    bits = struct.unpack(">I", struct.pack(">f", value))[0]
    sign = (bits >> 16) & 0x8000
    exp = (bits >> 23) & 0xFF
    mant = bits & 0x7FFFFF
    if exp == 0xFF:  # inf/nan
        half = sign | 0x7C00 | (0x200 if mant else 0)
    else:
        unbiased = exp - 127
        if unbiased > 15:
            half = sign | 0x7C00  # overflow to inf
        elif unbiased < -24:
            half = sign  # underflow to zero
        elif unbiased < -14:
            # subnormal: shift mantissa (with implicit bit) right
            shift = -unbiased - 14 + 13
            full = mant | 0x800000
            half_mant = full >> shift
            rem = full & ((1 << shift) - 1)
            tie = 1 << (shift - 1)
            if rem > tie or (rem == tie and half_mant & 1):
                half_mant += 1
            half = sign | half_mant
        else:
            half_mant = mant >> 13
            rem = mant & 0x1FFF
            if rem > 0x1000 or (rem == 0x1000 and half_mant & 1):
                half_mant += 1
            half = sign | ((unbiased + 15) << 10) + half_mant
    return float(np.frombuffer(struct.pack("<H", half & 0xFFFF), dtype=np.float16)[0])


def test_quantize_exact_for_representable_probs():
    d = make_dict({(1,): [(2, 0.5)]})
    q = quantize(d)
    assert q.levels[2].entries[(1,)][2] == 0.5
    assert q.quantized


def test_quantize_one_third_matches_reference_rounding():
    d = make_dict({(1,): [(2, 1 / 3)]})
    q = quantize(d)
    got = q.levels[2].entries[(1,)][2]
    assert got == reference_binary16(1 / 3)
    assert abs(got - 1 / 3) / (1 / 3) <= 2 ** -11


def test_quantize_is_idempotent():
    d = make_dict({(1,): [(2, 1 / 3), (3, 0.12345), (4, 0.0001234)]})
    q1 = quantize(d)
    q2 = quantize(q1)
    assert q1 == q2


def test_quantize_error_bound_over_random_probs():
    rng = np.random.default_rng(3)
    probs = rng.uniform(2 ** -14, 1.0, size=2000)
    entries = [(i + 1, float(p)) for i, p in enumerate(np.sort(probs)[::-1])]
    d = make_dict({(1,): entries})
    q = quantize(d)
    for tok, p in entries:
        qp = q.levels[2].entries[(1,)][tok]
        assert abs(qp - p) / p <= 2 ** -11
        assert qp == reference_binary16(p)


def test_quantize_resorts_after_rounding_ties():
    # two probabilities that collapse to the same binary16 value
    p_hi = 0.100001
    p_lo = 0.100000
    assert float(np.float16(p_hi)) == float(np.float16(p_lo))
    d = make_dict({(1,): [(7, p_hi), (3, p_lo)]})
    q = quantize(d)
    assert list(q.levels[2].entries[(1,)].keys()) == [3, 7]  # id tie-break after collapse


# --- estimate_storage ---


def test_storage_fixture_matches_published_cost():
    # 3 levels x 100k contexts x 10k probs x 8 bytes = 24e9 bytes ~ 22.35 GiB
    est = estimate_storage(4, 100000, 10000, 8)
    assert est.bytes == 24_000_000_000
    assert 22.3 < est.bytes / 2 ** 30 < 22.4
    assert sum(b for _, b in est.breakdown) == est.bytes
    assert [n for n, _ in est.breakdown] == [2, 3, 4]


def test_storage_single_cell():
    assert estimate_storage(2, 1, 1, 8).bytes == 8


def test_storage_linear_in_prob_width():
    full = estimate_storage(4, 1000, 50, 8).bytes
    half = estimate_storage(4, 1000, 50, 4).bytes
    assert half * 2 == full


def test_storage_rejects_nonpositive():
    with pytest.raises(ValueError):
        estimate_storage(0, 1, 1, 1)


# --- serialization ---


def build_two_level_dict(quantized=False):
    provider = UniformProvider({0: 0.5, 1: 0.3, 2: 0.2}, vocab_hash=0xDEADBEEF)
    d = build_dictionary(provider, {2: [(0,), (2,)], 3: [(0, 1), (1, 2)]}, {2: 3, 3: 2})
    return quantize(d) if quantized else d


@pytest.mark.parametrize("quantized", [False, True])
def test_round_trip_preserves_everything(tmp_path, quantized):
    d = build_two_level_dict(quantized)
    path = tmp_path / "uniform.dict"
    save_dictionary(d, path)
    loaded = load_dictionary(path)
    assert loaded.source_name == "uniform"  # derived from the file stem
    loaded.source_name = d.source_name
    assert loaded == d
    assert loaded.quantized == quantized
    # byte-stable re-serialization
    assert dictionary_to_bytes(loaded) == path.read_bytes()


def test_header_layout():
    d = build_two_level_dict()
    blob = dictionary_to_bytes(d)
    assert blob[:8] == b"LLMDICT1"
    id_width, prob_width, n_max, vocab_hash = struct.unpack_from("<BBBQ", blob, 8)
    assert (id_width, prob_width, n_max) == (4, 8, 3)
    assert vocab_hash == 0xDEADBEEF
    (keys_level2,) = struct.unpack_from("<I", blob, 19)
    assert keys_level2 == 2


def test_quantized_uses_narrow_widths():
    q = build_two_level_dict(quantized=True)
    blob = dictionary_to_bytes(q)
    id_width, prob_width, _, _ = struct.unpack_from("<BBBQ", blob, 8)
    assert (id_width, prob_width) == (2, 2)


def test_bad_magic_reports_offset_zero():
    with pytest.raises(DictionaryFormatError) as err:
        dictionary_from_bytes(b"NOTADICT" + b"\x00" * 16)
    assert err.value.offset == 0


def test_truncated_file_reports_offset():
    blob = dictionary_to_bytes(build_two_level_dict())
    with pytest.raises(DictionaryFormatError) as err:
        dictionary_from_bytes(blob[:25])
    assert err.value.offset <= 25
    assert "offset" in str(err.value)


def test_trailing_bytes_rejected():
    blob = dictionary_to_bytes(build_two_level_dict())
    with pytest.raises(DictionaryFormatError) as err:
        dictionary_from_bytes(blob + b"x")
    assert err.value.offset == len(blob)


def test_inspect_reports_levels(tmp_path):
    d = build_two_level_dict()
    path = tmp_path / "d.dict"
    save_dictionary(d, path)
    info = inspect_dictionary(path)
    assert info["n_max"] == 3
    assert info["quantized"] is False
    assert [lv["n"] for lv in info["levels"]] == [2, 3]
    assert info["levels"][0]["keys"] == 2
    assert info["file_bytes"] == len(dictionary_to_bytes(d))


def test_top_k_dominance_against_provider():
    # every stored prob >= every prob the provider assigned to unstored tokens
    rng = np.random.default_rng(11)
    raw = rng.dirichlet(np.ones(12))
    probs = {i: float(p) for i, p in enumerate(raw)}
    provider = UniformProvider(probs)
    d = build_dictionary(provider, {2: [(0,)]}, {2: 5})
    stored = d.levels[2].entries[(0,)]
    floor = min(stored.values())
    for tok, p in probs.items():
        if tok not in stored:
            assert p <= floor
