import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmslearn.secagg import (
    PRIME_128,
    PRIME_TEST_31,
    PRIME_TEST_97,
    ContributorError,
    EncodingRangeError,
    FixedPointCodec,
    SecAggSession,
    ShareCountError,
    SharingParams,
    SecretShare,
    TamperError,
    Transcript,
    detect_tampering,
    party_placement,
    reconstruct,
    secure_aggregate,
    share,
    share_linear,
)
from dmslearn.topology import make_subset_graph, make_topology

from oracles import naive_poly_eval, naive_reconstruct


def trio(prime=PRIME_TEST_97):
    return SharingParams(3, 1, prime)


def test_worked_shares():
    shares = share(5, trio(), coefficients=(3,))
    assert [(s.index, s.value) for s in shares] == [(1, 8), (2, 11), (3, 14)]


def test_worked_shares_match_poly_oracle():
    coeffs = (5, 3)
    shares = share(5, trio(), coefficients=(3,))
    for s in shares:
        assert s.value == naive_poly_eval(coeffs, s.index, PRIME_TEST_97)


def test_reconstruct_matches_lagrange_oracle():
    rng = np.random.default_rng(0)
    params = SharingParams(5, 2, PRIME_TEST_97)
    for _ in range(50):
        secret = int(rng.integers(PRIME_TEST_97))
        shares = share(secret, params, rng)
        picked = shares[:3]
        assert reconstruct(picked, params) == secret
        points = [(s.index, s.value) for s in picked]
        assert naive_reconstruct(points, PRIME_TEST_97) == secret


@given(
    secret=st.integers(min_value=0, max_value=PRIME_TEST_97 - 1),
    parties=st.integers(min_value=3, max_value=9),
    degree=st.integers(min_value=1, max_value=4),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
@settings(max_examples=200, deadline=None)
def test_round_trip_any_threshold_subset(secret, parties, degree, seed):
    if 2 * degree >= parties:
        return
    rng = np.random.default_rng(seed)
    params = SharingParams(parties, degree, PRIME_TEST_97)
    shares = share(secret, params, rng)
    order = rng.permutation(parties)[: params.threshold]
    picked = [shares[i] for i in order]
    assert reconstruct(picked, params) == secret


def test_every_threshold_subset_agrees():
    rng = np.random.default_rng(7)
    params = SharingParams(7, 3, PRIME_TEST_97)
    shares = share(42, params, rng)
    for combo in itertools.combinations(shares, params.threshold):
        assert reconstruct(list(combo), params) == 42


def test_too_few_shares_rejected():
    rng = np.random.default_rng(1)
    params = SharingParams(5, 2, PRIME_TEST_97)
    shares = share(9, params, rng)
    with pytest.raises(ShareCountError):
        reconstruct(shares[:2], params)


def test_tampering_detected_with_redundant_shares():
    rng = np.random.default_rng(3)
    params = SharingParams(5, 1, PRIME_TEST_97)
    shares = share(17, params, rng)
    assert detect_tampering(shares, params) is False
    bad = list(shares)
    bad[3] = SecretShare(index=bad[3].index, value=(bad[3].value + 1) % PRIME_TEST_97)
    assert detect_tampering(bad, params) is True
    with pytest.raises(TamperError):
        reconstruct(bad, params)


def test_tampering_sweep_all_positions():
    rng = np.random.default_rng(11)
    for parties, degree in ((4, 1), (5, 2), (7, 3)):
        params = SharingParams(parties, degree, PRIME_TEST_97)
        for _ in range(25):
            secret = int(rng.integers(PRIME_TEST_97))
            shares = share(secret, params, rng)
            pos = int(rng.integers(parties))
            delta = int(rng.integers(1, PRIME_TEST_97))
            bad = list(shares)
            bad[pos] = SecretShare(bad[pos].index, (bad[pos].value + delta) % PRIME_TEST_97)
            assert detect_tampering(bad, params) is True


def test_single_share_reveals_nothing():
    # Over the whole coefficient space, each party's share takes every field
    # value equally often no matter the secret: the two distributions for
    # any pair of secrets are identical.
    p = PRIME_TEST_31
    params = SharingParams(3, 1, p)
    for party in range(3):
        tables = []
        for secret in (0, 1, 17, 30):
            counts = [0] * p
            for c in range(p):
                s = share(secret, params, coefficients=(c,))[party]
                counts[s.value] += 1
            tables.append(counts)
        for counts in tables:
            assert counts == tables[0]
            assert all(v == 1 for v in counts)


def test_share_linear_homomorphism():
    rng = np.random.default_rng(5)
    params = SharingParams(5, 2, PRIME_TEST_97)
    x, y, scalar = 20, 33, 4
    sx = share(x, params, rng)
    sy = share(y, params, rng)
    combined = share_linear(sx, sy, scalar, params)
    assert reconstruct(combined[:3], params) == (x + scalar * y) % PRIME_TEST_97


def test_params_validation():
    with pytest.raises(ValueError):
        SharingParams(4, 0)  # degree zero leaks the secret to every party
    SharingParams(1, 0)  # the degenerate single-party case is allowed
    with pytest.raises(ValueError):
        SharingParams(4, 2)  # no honest majority: 2*degree >= parties
    with pytest.raises(ValueError):
        SharingParams(3, 3)
    with pytest.raises(ValueError):
        SharingParams(101, 1, PRIME_TEST_97)  # evaluation points must stay distinct
    assert SharingParams(5, 2).threshold == 3


def test_codec_worked_value():
    codec = FixedPointCodec()
    assert codec.encode(1.5) == 98304
    assert codec.decode(98304) == 1.5


def test_codec_negative_round_trip():
    codec = FixedPointCodec()
    v = codec.encode(-2.25)
    assert v == (PRIME_128 - codec.encode(2.25)) % PRIME_128
    assert codec.decode(v) == -2.25


def test_codec_range_error():
    codec = FixedPointCodec(fraction_bits=16, integer_bits=8)
    codec.encode(255.9)
    with pytest.raises(EncodingRangeError):
        codec.encode(256.0)
    with pytest.raises(EncodingRangeError):
        codec.encode(-256.0)


def test_codec_dyadic_vector_exact():
    codec = FixedPointCodec()
    rng = np.random.default_rng(2)
    vec = rng.integers(-(2**20), 2**20, size=64).astype(float) / codec.scale
    back = codec.decode_vector(codec.encode_vector(vec))
    assert np.array_equal(back, vec)


@given(st.floats(min_value=-1000.0, max_value=1000.0, allow_nan=False))
@settings(max_examples=200, deadline=None)
def test_codec_quantization_error_bounded(x):
    codec = FixedPointCodec()
    assert abs(codec.decode(codec.encode(x)) - x) <= 0.5 / codec.scale


def test_sum_headroom():
    codec = FixedPointCodec(fraction_bits=16, integer_bits=32)
    assert codec.sum_headroom(30)
    assert not codec.sum_headroom(2**80)


def session_of(n_contrib=3, prime=PRIME_128):
    params = SharingParams(3, 1, prime)
    return SecAggSession(
        params=params,
        contributors=tuple(range(n_contrib)),
        parties=(10, 11, 12),
        recipients=(0, 1, 2)[:n_contrib],
    )


def test_secure_sum_worked_example():
    codec = FixedPointCodec()
    rng = np.random.default_rng(0)
    vectors = [np.array([1.0]), np.array([2.0]), np.array([-0.5])]
    out = secure_aggregate(vectors, session_of(), codec, rng)
    assert out.shape == (1,)
    assert out[0] == 2.5


def test_secure_sum_matches_plaintext_bit_exact():
    codec = FixedPointCodec()
    rng = np.random.default_rng(9)
    for _ in range(30):
        vectors = [
            rng.integers(-(2**12), 2**12, size=100).astype(float) / codec.scale
            for _ in range(3)
        ]
        out = secure_aggregate(vectors, session_of(), codec, rng)
        assert np.array_equal(out, vectors[0] + vectors[1] + vectors[2])


def test_secure_sum_needs_three_contributors():
    codec = FixedPointCodec()
    rng = np.random.default_rng(0)
    params = SharingParams(3, 1)
    session = SecAggSession(params, contributors=(0, 1), parties=(5, 6, 7), recipients=(0,))
    with pytest.raises(ContributorError):
        secure_aggregate([np.ones(2), np.ones(2)], session, codec, rng)


def test_secure_sum_catches_corrupt_party():
    codec = FixedPointCodec()
    rng = np.random.default_rng(4)
    with pytest.raises(TamperError):
        secure_aggregate(
            [np.ones(2), np.ones(2), np.ones(2)],
            session_of(),
            codec,
            rng,
            corrupt_party=1,
        )


def test_transcript_message_counts():
    codec = FixedPointCodec()
    rng = np.random.default_rng(6)
    transcript = Transcript()
    session = session_of()
    secure_aggregate(
        [np.ones(3), np.ones(3), np.ones(3)],
        session,
        codec,
        rng,
        transcript=transcript,
        round_index=0,
    )
    contributors = len(session.contributors)
    parties = len(session.parties)
    recipients = len(session.recipients)
    assert transcript.messages == contributors * parties + parties * recipients
    assert transcript.reconstructions == recipients
    share_messages = sum(
        1 for e in transcript.entries if e.phase == "share"
    )
    assert share_messages == contributors * parties


def test_transcript_payload_hiding():
    codec = FixedPointCodec()
    rng = np.random.default_rng(8)
    bare = Transcript(record_payloads=False)
    secure_aggregate(
        [np.ones(2), np.ones(2), np.ones(2)],
        session_of(),
        codec,
        rng,
        transcript=bare,
    )
    assert bare.messages > 0
    assert list(bare.payload_values()) == []


def test_placement_fedavg():
    sessions = party_placement("fedavg", agent_count=10)
    assert len(sessions) == 1
    s = sessions[0]
    assert s.contributors == tuple(range(10))
    assert s.parties == (11, 12, 13)
    assert s.recipients == (10,)
    assert s.params.parties == 3 and s.params.degree == 1


def test_placement_ring():
    g = make_topology("ring", 6)
    sessions = party_placement("dring", graph=g)
    assert len(sessions) == 6
    for i, s in enumerate(sessions):
        assert s.label == f"dring:{i}"
        assert len(s.parties) == 3
        assert i in s.parties
        assert s.recipients == (i,)


def test_placement_subset():
    g = make_subset_graph(10, (0, 2, 3, 5, 7, 8, 9))
    sessions = party_placement("dms", graph=g)
    assert len(sessions) == 1
    s = sessions[0]
    assert s.parties == (0, 2, 3, 5, 7, 8, 9)
    assert s.params.parties == 7 and s.params.degree == 3
    assert s.recipients == s.parties


def test_placement_subset_too_small():
    g = make_subset_graph(8, (1, 4))
    with pytest.raises(ContributorError):
        party_placement("dms", graph=g)
