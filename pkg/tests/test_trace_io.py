import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from urllc_orch.errors import BadGeneratorParams, EmptyTrace, InsufficientHistory, ParseError, TooFewUes
from urllc_orch.trace_io import (
    ArrivalStream,
    TraceRecord,
    gen_synthetic,
    group_ues,
    history_from_stream,
    load_trace,
    make_source,
    tile_stream,
    trace_streams,
    window,
    write_trace,
)


def _write(tmp_path, text):
    p = tmp_path / "t.csv"
    p.write_text(text)
    return p


def test_load_trace_sorts_records(tmp_path):
    p = _write(tmp_path, "tti,ue_id,bits,rbs\n1,5,100,1\n0,7,50,0\n0,2,10,1\n")
    recs = load_trace(p)
    assert [(r.tti, r.ue_id) for r in recs] == [(0, 2), (0, 7), (1, 5)]


def test_load_trace_reports_line_number(tmp_path):
    p = _write(tmp_path, "tti,ue_id,bits,rbs\n0,1,10,1\n0,2,x,1\n")
    with pytest.raises(ParseError) as exc:
        load_trace(p)
    assert exc.value.line == 3


@pytest.mark.parametrize("text", ["", "tti,ue_id,bits,rbs\n"])
def test_empty_trace(tmp_path, text):
    with pytest.raises(EmptyTrace):
        load_trace(_write(tmp_path, text))


def test_bad_header_and_negative_values(tmp_path):
    with pytest.raises(ParseError):
        load_trace(_write(tmp_path, "a,b,c,d\n0,1,1,1\n"))
    with pytest.raises(ParseError):
        load_trace(_write(tmp_path, "tti,ue_id,bits,rbs\n0,1,-4,1\n"))


def test_write_then_load_round_trip(tmp_path):
    recs = [TraceRecord(3, 1, 40, 2), TraceRecord(0, 9, 8, 0)]
    p = tmp_path / "o.csv"
    write_trace(p, recs)
    assert load_trace(p) == sorted(recs)


def test_group_ues_orders_by_volume_with_remainder_last():
    recs = [TraceRecord(0, u, b, 0) for u, b in [(1, 10), (2, 50), (3, 30), (4, 30), (5, 5)]]
    g = group_ues(recs, 2)
    # descending volume, ties by id: 2, 3, 4, 1, 5
    assert g.groups == [[2, 3], [4, 1, 5]]
    assert g.bits[:, 0].tolist() == [80, 45]


def test_group_ues_too_few():
    with pytest.raises(TooFewUes):
        group_ues([TraceRecord(0, 1, 5, 0)], 2)


def test_constant_generator_example():
    s = gen_synthetic("constant", {"bits": 100, "bits_per_rb": 200}, 5, seed=0)
    assert s.x_d.tolist() == [100] * 5
    assert s.rbs_needed().tolist() == [1] * 5


def test_constant_generator_cuts_packets():
    s = gen_synthetic("constant", {"bits": 250, "pkt_size": 100}, 2, seed=0)
    assert s.pkt_size.tolist() == [100, 100, 50, 100, 100, 50]
    assert s.pkt_tti.tolist() == [0, 0, 0, 1, 1, 1]


def test_generators_are_deterministic():
    p = {"lam": 2.0, "pkt_size": {"values": [10, 20]}, "bits_per_rb": {"values": [3, 5]}}
    a = gen_synthetic("poisson_batch", p, 500, seed=4)
    b = gen_synthetic("poisson_batch", p, 500, seed=4)
    c = gen_synthetic("poisson_batch", p, 500, seed=5)
    for f in ("x_d", "pkt_tti", "pkt_size", "pkt_bpr"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert not np.array_equal(a.x_d, c.x_d)


def test_poisson_batch_mean():
    s = gen_synthetic("poisson_batch", {"lam": 2.0, "pkt_size": 100}, 50_000, seed=1)
    assert s.x_d.mean() == pytest.approx(200, rel=0.02)


def test_on_off_stationary_fraction():
    s = gen_synthetic("on_off", {"p_on": 0.1, "p_off": 0.3, "lam_on": 1.0, "pkt_size": 1}, 100_000, seed=2)
    # ON fraction = p_on / (p_on + p_off) = 0.25
    assert s.x_d.mean() == pytest.approx(0.25, rel=0.05)


@pytest.mark.parametrize(
    "kind, params",
    [
        ("nope", {}),
        ("poisson_batch", {"lam": -1, "pkt_size": 10}),
        ("poisson_batch", {"lam": 1}),
        ("on_off", {"p_on": 1.5, "p_off": 0.1, "lam_on": 1, "pkt_size": 1}),
        ("poisson_batch", {"lam": 1, "pkt_size": {"values": [1, 2], "probs": [0.7, 0.7]}}),
        ("constant", {"bits": 10, "bits_per_rb": 0}),
    ],
)
def test_bad_generator_params(kind, params):
    with pytest.raises(BadGeneratorParams):
        gen_synthetic(kind, params, 10, seed=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 4.0), st.integers(1, 300))
def test_stream_consistency(seed, lam, n):
    s = gen_synthetic("poisson_batch", {"lam": lam, "pkt_size": {"values": [7, 90]}, "bits_per_rb": 4}, n, seed)
    assert s.x_d.sum() == s.pkt_size.sum()
    assert np.all(np.diff(s.pkt_tti) >= 0)
    assert s.offsets[-1] == len(s.pkt_tti)
    for t in range(0, n, max(1, n // 7)):
        lo, hi = s.offsets[t], s.offsets[t + 1]
        assert s.pkt_size[lo:hi].sum() == s.x_d[t]


def test_trace_streams_use_trace_rbs(tmp_path):
    recs = [TraceRecord(0, 1, 400, 4), TraceRecord(1, 1, 90, 0), TraceRecord(1, 2, 10, 1)]
    streams = trace_streams(recs, 2, bits_per_rb=30, seed=0)
    assert streams[0].pkt_bpr.tolist() == [100, 30]
    assert streams[0].x_d.tolist() == [400, 90]
    assert streams[1].x_d.tolist() == [0, 10]


def test_trace_source_tiles_to_horizon(tmp_path):
    p = tmp_path / "tr.csv"
    write_trace(p, [TraceRecord(0, 1, 100, 1), TraceRecord(2, 1, 50, 1), TraceRecord(1, 2, 10, 1)])
    s = make_source({"kind": "trace", "path": str(p), "group": 0, "n_groups": 2}, 7, seed=0)
    assert s.x_d.tolist() == [100, 0, 50, 100, 0, 50, 100]
    assert s.pkt_tti.tolist() == [0, 2, 3, 5, 6]


def test_tile_stream_cuts():
    s = ArrivalStream(np.array([5, 0, 7]), np.array([0, 2]), np.array([5, 7]), np.array([1, 1]))
    t = tile_stream(s, 2)
    assert t.x_d.tolist() == [5, 0]
    assert t.pkt_tti.tolist() == [0]


def test_window_bounds_and_content():
    s = gen_synthetic("constant", {"bits": 100, "bits_per_rb": 30}, 100, seed=0)
    h = history_from_stream(s)
    w = window(h, 99, 40)
    assert w.t_obs == 40 and w.end_tti == 99
    assert w.packets.shape == (40, 2)
    assert w.packets[0].tolist() == [100, 4]
    with pytest.raises(InsufficientHistory):
        window(h, 10, 40)
    with pytest.raises(InsufficientHistory):
        window(h, 100, 40)
