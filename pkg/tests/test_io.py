import json

import numpy as np
import pytest

from iphfit import io
from iphfit.dist import Exponential, Shifted, Uniform, empirical_from_samples
from iphfit.iph import iph_shift, iph_slice
from iphfit.models import alternating_bit, collision_gsmp
from iphfit.phfit import ErlangFitter


def test_model_round_trip():
    m = alternating_bit(Shifted(Exponential(2.0), 4.06), messages=2)
    doc = json.loads(io.dumps(io.model_doc(m)))
    back = io.model_from_doc(doc)
    assert back.states == m.states and back.tie_order == m.tie_order
    assert back.active == m.active and back.succ == m.succ
    assert back.event_map["timeout"].delay == 10.0
    assert back.event_map["ack"].density.pdf(4.5) == pytest.approx(m.event_map["ack"].density.pdf(4.5))


def test_model_schema_rejects_unknown_fields():
    doc = io.model_doc(collision_gsmp())
    doc["colour"] = "red"
    with pytest.raises(io.FormatError, match="colour"):
        io.model_from_doc(doc)
    doc = io.model_doc(collision_gsmp())
    doc["events"][0]["shape"] = 2
    with pytest.raises(io.FormatError):
        io.model_from_doc(doc)


def test_rational_delay():
    doc = io.model_doc(collision_gsmp())
    doc["events"][2]["delay"] = "6/5"
    assert io.model_from_doc(doc).event_map["tx"].delay == pytest.approx(1.2)


@pytest.mark.parametrize("build", [
    lambda: iph_shift(ErlangFitter(), 3, Shifted(Exponential(1.0), 2.0)),
    lambda: iph_slice(ErlangFitter(), 6, 3, Uniform(0, 2)),
])
def test_chain_round_trip(build):
    res = build()
    doc = json.loads(io.dumps(io.chain_doc(res.chain, res.report())))
    back = io.chain_from_doc(doc)
    x = np.linspace(0, 5, 101)
    np.testing.assert_allclose(back.pdf(x), res.chain.pdf(x), atol=1e-12)
    assert doc["report"]["err"] == res.err


def test_density_round_trip_keeps_samples():
    e = empirical_from_samples([1.0, 1.5, 2.0, 2.2], 2)
    back = io.density_from_doc(json.loads(io.dumps(io.density_doc(e))))
    assert back.samples == e.samples


def test_ping_log_parsing():
    text = "PING example (1.2.3.4): 56 data bytes\n" + "\n".join(
        f"64 bytes from 1.2.3.4: icmp_seq={i} ttl=55 time={4.06 + i / 100:.2f} ms" for i in range(5)) + \
        "\n--- example ping statistics ---\nround-trip min/avg/max = 4.06/4.08/4.10 ms\n"
    values, problems = io.parse_samples(text)
    assert values == pytest.approx([4.06, 4.07, 4.08, 4.09, 4.10])
    assert problems == []


def test_plain_samples_with_bad_line():
    values, problems = io.parse_samples("1.5\n2.5\nabc\n\n3e-1\n")
    assert values == [1.5, 2.5, 0.3]
    assert problems == ["line 3: no sample found in 'abc'"]


def test_csv_text():
    assert io.csv_text(["a", "b"], [[1, 0.5]]) == "a,b\n1,0.5\n"


def test_validate_document_types():
    with pytest.raises(io.FormatError, match="type"):
        io.validate_document({"states": []})
    with pytest.raises(io.FormatError, match="unknown document type"):
        io.validate_document({"type": "spreadsheet"})
    job = {"type": "analyze", "model": "m.json", "queries": [{"kind": "reach", "goal": ["x"], "tempo": 1}]}
    with pytest.raises(io.FormatError, match="tempo"):
        io.validate_document(job)
