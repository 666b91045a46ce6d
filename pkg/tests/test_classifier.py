import io

import pytest
from hypothesis import given, strategies as st

from anycensus.classifier import (
    AnycastClassification, Verdict, candidate_set, classify, read_classifications, verdict_for,
    write_classifications,
)
from anycensus.domain import MeasurementSpec, Prefix, ProbeReply, Protocol, TargetAddress
from anycensus.netsim import SimDeployment, default_vps, generate_world


def reply(addr, rx, mid=1, tx=1):
    return ProbeReply(mid, TargetAddress.of(addr), tx, rx, 0, 10, Protocol.ICMP)


def test_verdicts():
    assert [verdict_for(n) for n in (0, 1, 2, 7)] == [Verdict.UNRESPONSIVE, Verdict.UNICAST, Verdict.CANDIDATE,
                                                      Verdict.CANDIDATE]


def test_classify_groups_by_prefix_and_honours_hitlist():
    rows = [reply("10.0.0.1", 1), reply("10.0.0.9", 2), reply("10.0.1.1", 3), reply("10.0.1.1", 3),
            reply("10.9.9.9", 1), reply("10.0.1.1", 4, mid=2)]
    spec = MeasurementSpec(1, "icmp", 4, "anycast", 1, (1,))
    hit = [Prefix.parse("10.0.0.0/24"), Prefix.parse("10.0.1.0/24"), Prefix.parse("10.0.2.0/24")]
    out = classify(rows, spec, hit)
    assert {str(p): c.verdict for p, c in out.items()} == {
        "10.0.0.0/24": Verdict.CANDIDATE, "10.0.1.0/24": Verdict.UNICAST, "10.0.2.0/24": Verdict.UNRESPONSIVE}
    assert out[Prefix.parse("10.0.0.0/24")].rx_vps == {1, 2}
    assert Prefix.parse("10.9.9.0/24") in classify(rows)


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(1, 5)), max_size=30), st.integers(0, 3), st.integers(1, 5))
def test_adding_a_row_never_reduces_vp_count(rows, extra_prefix, extra_vp):
    replies = [reply(f"10.0.{p}.1", vp) for p, vp in rows]
    before = classify(replies)
    after = classify(replies + [reply(f"10.0.{extra_prefix}.1", extra_vp)])
    for prefix, c in before.items():
        assert after[prefix].rx_vp_count >= c.rx_vp_count


def test_merge_is_associative_and_checks_keys():
    p = Prefix.parse("10.0.0.0/24")
    a, b, c = (AnycastClassification(p, Protocol.ICMP, frozenset(s)) for s in ({1}, {2}, {1, 3}))
    assert a.merge(b).merge(c) == a.merge(b.merge(c))
    assert a.merge(b).verdict is Verdict.CANDIDATE
    with pytest.raises(ValueError):
        a.merge(AnycastClassification(p, Protocol.TCP, frozenset()))


def test_candidate_set_adds_prior_confirmations():
    out = classify([reply("10.0.0.1", 1), reply("10.0.0.1", 2), reply("10.0.1.1", 1)])
    prior = [Prefix.parse("10.0.5.0/24"), Prefix.parse("10.0.0.0/24")]
    assert [str(p) for p in candidate_set(out, prior)] == ["10.0.0.0/24", "10.0.5.0/24"]
    assert candidate_set(list(out.values())) == [Prefix.parse("10.0.0.0/24")]


def test_line_file_round_trip():
    out = classify([reply("10.0.0.1", 2), reply("10.0.0.1", 1), reply("2001:db8::1", 3)])
    buf = io.StringIO()
    write_classifications(buf, out)
    first = buf.getvalue().splitlines()[0]
    assert first == ('{"prefix": "10.0.0.0/24", "protocol": "icmp", "rx_vp_count": 2, "rx_vps": [1, 2], '
                     '"verdict": "candidate"}')
    buf.seek(0)
    assert read_classifications(buf) == out


def test_sim_ground_truth_small_world():
    world = generate_world(21, vps=default_vps(8), n_unicast=60, n_anycast=15, n_confined=5, n_unresponsive=5)
    dep = SimDeployment(world, record_trace=False)
    dep.start()
    spec = MeasurementSpec(1, "icmp", 4, "anycast", 1000, tuple(range(1, 9)), 1000)
    m = dep.measure(spec, world.hitlist())
    out = classify(m.replies, spec, [t.prefix for t in world.targets])
    truth = world.ground_truth()
    for prefix, c in out.items():
        gt = truth[prefix]
        assert c.verdict is gt.expected_verdict
        assert c.rx_vps == gt.expected_rx_vps
        if gt.single_catchment:
            assert c.verdict is Verdict.UNICAST
    assert sum(gt.single_catchment for gt in truth.values()) == 5
