import http.client
import os
import shlex
import shutil
import signal
import socket
import subprocess
import sys
import time
import xml.etree.ElementTree as ET

import pytest

from farmmon.agentsim import AgentScript, Constant, Counter, VarSpec, spawn_farm
from farmmon.cli import main, rrd_path_for, rrd_spec_for
from farmmon.config import HostConfig, MibSpec, RraSpec, parse_config, serialize_config
from farmmon.rrd import ArchiveSpec, ConsFunc, Rrd, RrdSpec

LOAD_OID = ".1.3.6.1.4.1.2021.10.1.5.1"
MEM_OID = ".1.3.6.1.4.1.2021.4.5.0"
DISK_OID = ".1.3.6.1.4.1.2021.13.15.1.1.5.1"

SCRIPT = AgentScript(variables=(
    VarSpec("load1", LOAD_OID, Constant(7.0)),
    VarSpec("memTotal", MEM_OID, Constant(513528.0)),
    VarSpec("diskRead1", DISK_OID, Counter(rate=100.0), kind="COUNTER"),
))

GOOD_CONFIG = """\
<monitor>
  <host name="web1" ip="127.0.0.1" polldelay="30">
    <miblist>
      <mib id="load1" name=".1.3.6.1.4.1.2021.10.1.5.1"/>
    </miblist>
    <archives>
      <rra cf="AVERAGE" granularity="30" expire="3000"/>
    </archives>
    <graphs/>
  </host>
</monitor>
"""

BAD_CONFIG = """\
<monitor>
  <host name="web1" ip="127.0.0.1" polldelay="30">
    <miblist>
      <mib id="load1" name=".1.3.6.1.4.1.2021.10.1.5.1"/>
    </miblist>
    <archives>
      <rra cf="AVERAGE" granularity="45" expire="3000"/>
    </archives>
    <graphs/>
  </host>
</monitor>
"""


def get(port, path, timeout=5.0):
    conn = http.client.HTTPConnection("127.0.0.1", port, timeout=timeout)
    try:
        conn.request("GET", path)
        resp = conn.getresponse()
        return resp.status, resp.read()
    finally:
        conn.close()


def wait_for_http(port, deadline=15.0):
    end = time.monotonic() + deadline
    while time.monotonic() < end:
        try:
            status, _ = get(port, "/status.html", timeout=1.0)
            if status == 200:
                return
        except OSError:
            pass
        time.sleep(0.1)
    raise AssertionError(f"no http server on port {port} after {deadline}s")


def wait_for_state(port, host, state, deadline=15.0):
    end = time.monotonic() + deadline
    while time.monotonic() < end:
        try:
            _, body = get(port, "/status.html", timeout=1.0)
            doc = ET.fromstring(body)
            for el in doc:
                if el.get("name") == host and el.get("status") == state:
                    return
        except OSError:
            pass
        time.sleep(0.2)
    raise AssertionError(f"host {host} never reached {state}")


def start_monitor(cfg_path, *extra):
    return subprocess.Popen(
        [sys.executable, "-m", "farmmon", "run", str(cfg_path),
         "--timeout", "1", "--retries", "0", "--flush-interval", "0.5", *extra],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE)


def stop_monitor(proc, timeout=20.0):
    proc.send_signal(signal.SIGTERM)
    try:
        out, err = proc.communicate(timeout=timeout)
    except subprocess.TimeoutExpired:
        proc.kill()
        out, err = proc.communicate()
        raise AssertionError(f"monitor did not exit on SIGTERM: {err.decode()}")
    return proc.returncode, out, err


def write_farm_config(farm, tmp_path, port, **kwargs):
    (tmp_path / "rrd").mkdir(exist_ok=True)
    (tmp_path / "html").mkdir(exist_ok=True)
    cfg = farm.monitor_config(
        polldelay=1.0, rrd_dir=str(tmp_path / "rrd"),
        html_dir=str(tmp_path / "html"), xslt_dir=str(tmp_path),
        http_port=port, **kwargs)
    path = tmp_path / "farm.xml"
    path.write_text(serialize_config(cfg))
    return path


class TestHelpers:
    def test_rrd_spec_mirrors_the_host(self):
        host = HostConfig(
            name="web1", ip="127.0.0.1", polldelay=30.0,
            mibs=(MibSpec(id="a", name=LOAD_OID),
                  MibSpec(id="b", name=MEM_OID)),
            rras=(RraSpec(cf=ConsFunc.AVERAGE, xff=0.5, granularity=30.0,
                          expire=3000.0),
                  RraSpec(cf=ConsFunc.MAX, xff=0.5, granularity=60.0,
                          expire=6000.0)))
        spec = rrd_spec_for(host)
        assert spec.step == 30.0
        assert spec.variables == ("a", "b")
        assert [a.cf for a in spec.archives] == [ConsFunc.AVERAGE, ConsFunc.MAX]
        assert [a.granularity for a in spec.archives] == [30.0, 60.0]

    def test_rrd_path(self):
        assert rrd_path_for("/var/data", "web1") == "/var/data/web1.rrd"


class TestCheck:
    def test_valid_config(self, tmp_path, capsys):
        path = tmp_path / "good.xml"
        path.write_text(GOOD_CONFIG)
        assert main(["check", str(path)]) == 0
        assert capsys.readouterr().err == ""

    def test_invalid_config_reports_diagnostics(self, tmp_path, capsys):
        path = tmp_path / "bad.xml"
        path.write_text(BAD_CONFIG)
        assert main(["check", str(path)]) == 1
        err = capsys.readouterr().err
        assert "granularity" in err

    def test_missing_file(self, tmp_path, capsys):
        assert main(["check", str(tmp_path / "nope.xml")]) == 1
        assert "cannot read config" in capsys.readouterr().err

    def test_console_script_installed(self, tmp_path):
        exe = shutil.which("farmmon")
        assert exe, "console script not on PATH"
        path = tmp_path / "good.xml"
        path.write_text(GOOD_CONFIG)
        proc = subprocess.run([exe, "check", str(path)], capture_output=True)
        assert proc.returncode == 0


class TestRrdDump:
    def test_dump(self, tmp_path, capsys):
        rrd = Rrd(RrdSpec(step=10.0, variables=("a",),
                          archives=(ArchiveSpec(ConsFunc.AVERAGE, 0.5, 10.0,
                                                100.0),)))
        rrd.update(1000.0, {"a": 1.5})
        rrd.update(1010.0, {"a": 2.5})
        path = tmp_path / "web1.rrd"
        rrd.save(str(path))
        assert main(["rrd-dump", str(path)]) == 0
        out = capsys.readouterr().out
        assert "step 10" in out
        assert "1.500000" in out

    def test_missing_file(self, tmp_path, capsys):
        assert main(["rrd-dump", str(tmp_path / "nope.rrd")]) == 1
        assert "cannot read archive" in capsys.readouterr().err

    def test_corrupt_file(self, tmp_path, capsys):
        path = tmp_path / "bad.rrd"
        path.write_bytes(b"not an archive at all")
        assert main(["rrd-dump", str(path)]) == 1
        assert "cannot read archive" in capsys.readouterr().err


class TestArgValidation:
    rejects = [
        ["run", "cfg.xml", "--timeout", "0"],
        ["run", "cfg.xml", "--timeout", "-1"],
        ["run", "cfg.xml", "--retries", "-1"],
        ["simfarm", "--count", "0"],
        [],
        ["frobnicate"],
    ]

    @pytest.mark.parametrize("argv", rejects)
    def test_rejected(self, argv):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2


class TestRun:
    def test_bad_config_path(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "nope.xml")]) == 1
        assert "config error" in capsys.readouterr().err

    def test_archive_spec_mismatch_refused(self, tmp_path, capsys):
        cfg = tmp_path / "m.xml"
        cfg.write_text(GOOD_CONFIG.replace(
            "<monitor>", f'<monitor pmc-rrd-dir="{tmp_path}">'))
        other = Rrd(RrdSpec(step=999.0, variables=("x",),
                            archives=(ArchiveSpec(ConsFunc.AVERAGE, 0.5,
                                                  999.0, 9990.0),)))
        other.save(str(tmp_path / "web1.rrd"))
        assert main(["run", str(cfg)]) == 1
        assert "archive error" in capsys.readouterr().err

    @pytest.mark.slow
    def test_bind_conflict_exits_2(self, tmp_path, free_port):
        with socket.socket() as blocker:
            blocker.bind(("", free_port))
            blocker.listen(1)
            farm = spawn_farm(1, SCRIPT, seed=23)
            try:
                cfg = write_farm_config(farm, tmp_path, free_port)
                proc = subprocess.Popen(
                    [sys.executable, "-m", "farmmon", "run", str(cfg)],
                    stdout=subprocess.PIPE, stderr=subprocess.PIPE)
                out, err = proc.communicate(timeout=30)
            finally:
                farm.stop()
        assert proc.returncode == 2
        assert b"cannot bind http port" in err

    @pytest.mark.slow
    def test_run_polls_and_shuts_down_cleanly(self, tmp_path, free_port):
        farm = spawn_farm(2, SCRIPT, seed=29)
        proc = None
        try:
            (tmp_path / "pretty.xsl").write_text("PRETTY\n")
            stub = tmp_path / "tf.py"
            stub.write_text("import sys\n"
                            "sheet = open(sys.argv[1]).read().strip()\n"
                            "sys.stdout.write(sheet + ':' + sys.stdin.read())\n")
            cmd = f"{shlex.quote(sys.executable)} {shlex.quote(str(stub))} {{}}"
            cfg = write_farm_config(farm, tmp_path, free_port)
            proc = start_monitor(cfg, "--xslt-processor", cmd)
            wait_for_http(free_port)

            # archives are created on disk at startup
            for name in ("sim0000", "sim0001"):
                assert (tmp_path / "rrd" / f"{name}.rrd").exists()

            wait_for_state(free_port, "sim0000", "OK")
            wait_for_state(free_port, "sim0001", "OK")

            status, body = get(free_port, "/sim0000/hourly.png")
            assert status == 200
            assert body.startswith(b"\x89PNG")

            status, body = get(free_port,
                               "/status.html?applyTransform=pretty.xsl")
            assert status == 200
            assert body.startswith(b"PRETTY:<hosts")

            time.sleep(2.5)     # let a few poll slots and one flush pass
            code, _, err = stop_monitor(proc)
            proc = None
            assert code == 0, err.decode()
        finally:
            if proc is not None:
                proc.kill()
                proc.communicate()
            farm.stop()

        # the saved archive contains consolidated values from the run
        loaded = Rrd.load(str(tmp_path / "rrd" / "sim0000.rrd"))
        ix = loaded.spec.variables.index("load1")
        rows = [(t, row) for t, row in loaded.archives[0].iter_rows()]
        assert any(row[ix] == 7.0 for _, row in rows)

    @pytest.mark.slow
    def test_restart_reloads_archives(self, tmp_path, free_port):
        farm = spawn_farm(1, SCRIPT, seed=31)
        try:
            cfg = write_farm_config(farm, tmp_path, free_port)
            for _ in range(2):
                proc = start_monitor(cfg)
                try:
                    wait_for_http(free_port)
                    wait_for_state(free_port, "sim0000", "OK")
                finally:
                    code, _, err = stop_monitor(proc)
                assert code == 0, err.decode()
        finally:
            farm.stop()


class TestSimfarm:
    @pytest.mark.slow
    def test_simfarm_emits_config_and_answers(self, tmp_path):
        out_cfg = tmp_path / "sim.xml"
        proc = subprocess.Popen(
            [sys.executable, "-m", "farmmon", "simfarm", "--count", "3",
             "--seed", "7", "--polldelay", "5",
             "--config-out", str(out_cfg)],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE)
        try:
            end = time.monotonic() + 15.0
            while time.monotonic() < end and not out_cfg.exists():
                time.sleep(0.1)
            assert out_cfg.exists()
            cfg = parse_config(out_cfg.read_text())
            assert len(cfg.hosts) == 3
            assert all(h.polldelay == 5.0 for h in cfg.hosts)
            # one of the advertised agents actually answers
            host = cfg.hosts[0]
            from farmmon.collector import poll_host
            from farmmon.status import PollOutcome
            result = poll_host(host, timeout=2.0, retries=1)
            assert result.outcome == PollOutcome.RESPONDED
            assert len(result.values) == len(host.mibs) == 25
        finally:
            proc.send_signal(signal.SIGTERM)
            out, err = proc.communicate(timeout=15)
        assert proc.returncode == 0
        assert b"started 3 agents" in err
