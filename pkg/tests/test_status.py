import re
import time
import xml.etree.ElementTree as ET

import pytest

from farmmon.collector import Ok, PollResult, VarError
from farmmon.config import parse_config
from farmmon.status import (
    ClusterStatus,
    HostState,
    HostStatus,
    NOTIFICATION_RING,
    Notification,
    PollOutcome,
    Severity,
    StatusView,
    UnknownHost,
    format_ts,
    serialize_status_xml,
)

DOC = """
<monitor>
  <host name="web1" polldelay="30" tag="farm1,client">
    <miblist>
      <mib id="load1" name="laLoad.1"/>
      <mib id="freeMem" name="memAvailReal.0"/>
    </miblist>
    <archives/>
    <graphs>
      <rrdgraph id="hourly.png" title="Hourly data">
        <line>DEF:a=load1:AVERAGE</line>
        <line>LINE1:a#000000</line>
      </rrdgraph>
    </graphs>
  </host>
  <host name="web2" polldelay="30">
    <miblist/>
    <archives/>
    <graphs/>
  </host>
</monitor>
"""


def make_view():
    return StatusView(parse_config(DOC))


def responded(host="web1", t=1018016032.0, values=None):
    values = values if values is not None else {"load1": Ok(120), "freeMem": Ok(433400)}
    return PollResult(host=host, time=t, outcome=PollOutcome.RESPONDED, values=values)


def timed_out(host="web1", t=1017937775.090771):
    return PollResult(host=host, time=t, outcome=PollOutcome.TIMEOUT, values={})


class TestView:
    def test_initial_state(self):
        snap = make_view().snapshot()
        assert [h.name for h in snap.hosts] == ["web1", "web2"]
        web1 = snap.hosts[0]
        assert web1.status == HostState.UNKNOWN
        assert web1.last_values == {}
        assert web1.graphs == (("hourly.png", "Hourly data"),)
        assert web1.notifications == ()
        assert web1.tags == ("farm1", "client")

    def test_responded_updates_values(self):
        view = make_view()
        view.apply_poll_result(responded(), {"load1": 1.2, "freeMem": 433400.0})
        host = view.snapshot_host("web1")
        assert host.status == HostState.OK
        assert host.last_values == {
            "load1": (1.2, 1018016032),
            "freeMem": (433400.0, 1018016032),
        }

    def test_unprocessable_value_keeps_previous(self):
        view = make_view()
        view.apply_poll_result(responded(t=1000.0), {"load1": 1.0, "freeMem": 2.0})
        # counter deltas need two samples, so the first pass yields None
        view.apply_poll_result(responded(t=1030.0), {"load1": None, "freeMem": 3.0})
        host = view.snapshot_host("web1")
        assert host.last_values["load1"] == (1.0, 1000)
        assert host.last_values["freeMem"] == (3.0, 1030)

    def test_timeout_keeps_stale_values(self):
        view = make_view()
        view.apply_poll_result(responded(t=1000.0), {"load1": 1.0, "freeMem": 2.0})
        view.apply_poll_result(timed_out(t=1030.0), {})
        host = view.snapshot_host("web1")
        assert host.status == HostState.TIMEOUT
        assert host.last_values["load1"] == (1.0, 1000)
        (note,) = host.notifications
        assert note.severity == Severity.CRITICAL
        assert note.message == "Timeout"
        assert note.ts == 1030.0

    def test_recovery_keeps_notification(self):
        view = make_view()
        view.apply_poll_result(timed_out(t=1000.0), {})
        view.apply_poll_result(responded(t=1030.0), {"load1": 1.0})
        host = view.snapshot_host("web1")
        assert host.status == HostState.OK
        assert len(host.notifications) == 1

    def test_var_errors_become_warnings(self):
        view = make_view()
        result = PollResult(
            host="web1", time=1000.0, outcome=PollOutcome.RESPONDED,
            values={"load1": Ok(5), "freeMem": VarError("noSuchName for freeMem")})
        view.apply_poll_result(result, {"load1": 5.0})
        host = view.snapshot_host("web1")
        (note,) = host.notifications
        assert note.severity == Severity.WARNING
        assert "noSuchName" in note.message

    def test_ring_is_bounded(self):
        view = make_view()
        for i in range(NOTIFICATION_RING + 7):
            view.apply_poll_result(timed_out(t=1000.0 + i), {})
        notes = view.snapshot_host("web1").notifications
        assert len(notes) == NOTIFICATION_RING
        assert notes[0].ts == 1007.0          # oldest seven were evicted
        assert notes[-1].ts == 1000.0 + NOTIFICATION_RING + 6

    def test_snapshot_isolation(self):
        view = make_view()
        view.apply_poll_result(responded(t=1000.0), {"load1": 1.0})
        before = view.snapshot()
        view.apply_poll_result(responded(t=1030.0), {"load1": 9.0})
        assert before.hosts[0].last_values["load1"] == (1.0, 1000)

    def test_unknown_host(self):
        view = make_view()
        with pytest.raises(UnknownHost):
            view.apply_poll_result(responded(host="nope"), {})
        with pytest.raises(UnknownHost):
            view.snapshot_host("nope")


class TestFormatTs:
    def test_six_digit_microseconds(self):
        text = format_ts(1017937775.090771)
        epoch, clock = text.split(" ")
        assert epoch == "1017937775.090771"
        hms = time.strftime("%H:%M:%S", time.localtime(1017937775))
        assert clock == f"{hms}.090771"

    def test_whole_second(self):
        assert format_ts(100.0).startswith("100.000000 ")

    def test_rounding_carry(self):
        text = format_ts(99.9999996)
        assert text.startswith("100.000000 ")

    def test_shape(self):
        assert re.fullmatch(r"\d+\.\d{6} \d{2}:\d{2}:\d{2}\.\d{6}",
                            format_ts(time.time()))


class TestSerialization:
    def test_document_shape(self):
        view = make_view()
        view.apply_poll_result(responded(t=1018016032.0),
                               {"load1": 0.97, "freeMem": 433400.0})
        text = serialize_status_xml(view.snapshot())
        root = ET.fromstring(text)
        assert root.tag == "hosts"
        web1, web2 = list(root)
        assert web1.attrib == {"name": "web1", "tag": "farm1,client", "status": "OK"}
        assert [c.tag for c in web1] == ["mibs", "graphs", "notifications"]
        mibs = list(web1.find("mibs"))
        assert [m.get("id") for m in mibs] == ["load1", "freeMem"]
        assert mibs[0].text == "0.970000"
        assert mibs[0].get("lastUpdated") == "1018016032"
        graph = web1.find("graphs")[0]
        assert graph.attrib == {"id": "hourly.png", "title": "Hourly data"}
        # web2 has no tags: the attribute is omitted entirely
        assert web2.attrib == {"name": "web2", "status": "UNKNOWN"}
        assert len(web2.find("mibs")) == 0

    def test_values_render_with_six_decimals(self):
        view = make_view()
        view.apply_poll_result(responded(t=1000.0),
                               {"load1": 534717280.0, "freeMem": 0.5})
        text = serialize_status_xml(view.snapshot())
        assert ">534717280.000000</mib>" in text
        assert ">0.500000</mib>" in text

    def test_notification_shape(self):
        view = make_view()
        view.apply_poll_result(timed_out(t=1017937775.090771), {})
        text = serialize_status_xml(view.snapshot())
        msg = ET.fromstring(text).find("host/notifications/msg")
        assert msg.get("severity") == "CRITICAL"
        assert msg.text == "Timeout"
        assert msg.get("ts").startswith("1017937775.090771 ")

    def test_escaping(self):
        host = HostStatus(
            name='a"b', tags=("x&y",), status=HostState.OK,
            last_values={}, graphs=(),
            notifications=(Notification(1.0, Severity.WARNING, "a <b> & c"),))
        text = serialize_status_xml(host)
        parsed = ET.fromstring(text)
        assert parsed[0].get("name") == 'a"b'
        assert parsed.find("host/notifications/msg").text == "a <b> & c"

    def test_single_host_document(self):
        view = make_view()
        text = serialize_status_xml(view.snapshot_host("web2"))
        root = ET.fromstring(text)
        assert root.tag == "hosts"
        assert len(root) == 1
        assert root[0].get("name") == "web2"

    def test_empty_cluster(self):
        assert serialize_status_xml(ClusterStatus(hosts=())) == "<hosts/>\n"

    def test_indentation_is_two_spaces(self):
        view = make_view()
        view.apply_poll_result(responded(), {"load1": 1.0})
        lines = serialize_status_xml(view.snapshot()).splitlines()
        assert lines[0] == "<hosts>"
        assert lines[1].startswith("  <host ")
        assert lines[2] == "    <mibs>"
        assert lines[3].startswith("      <mib ")
