import json
import os
import subprocess

import pytest

import gpuvm

SMALL = {"workload": {"kind": "vecadd", "bytes": 1 << 20}}


def test_closed_forms():
    assert gpuvm.little_law_queue_depth(23, 12 * 2**30, 4096) == 72
    assert gpuvm.little_law_queue_depth(23, 12 * 2**30, 8192) == 36
    os_us, xfer_us = gpuvm.uvm_fault_service_time(64 << 10)
    assert os_us == pytest.approx(89.05)
    assert xfer_us == pytest.approx(11.007)
    assert gpuvm.oversubscription_level(1200, 1000) == pytest.approx(0.2)


def test_run_report_fields():
    r = gpuvm.run(SMALL)
    assert r["schema_version"] == gpuvm.SCHEMA_VERSION
    assert r["mode"] == "gpuvm"
    assert r["kernel_time_ns"] > 0
    assert 0.0 <= r["pcie_utilization"] <= 1.0 + 1e-9
    assert r["io_amplification"] >= 1.0
    assert r["config"]["workload"]["kind"] == "vecadd"


def test_dotted_and_nested_keys_agree():
    a = gpuvm.resolve_config({"nic.count": 2})
    b = gpuvm.resolve_config({"nic": {"count": 2}})
    assert a == b
    assert a["nic"]["count"] == 2


def test_bad_config_raises_value_error():
    with pytest.raises(ValueError):
        gpuvm.run({"runtime.page_size_bytes": 3000})
    with pytest.raises(gpuvm.ConfigError):
        gpuvm.run({"no_such_key": 1})


def test_sweep_and_compare():
    runs = gpuvm.sweep(SMALL, "queue_count", [8, 32])
    assert [r["config"]["nic"]["queue_count"] for r in runs] == [8, 32]
    g = gpuvm.run(SMALL)
    u = gpuvm.run({**SMALL, "mode": "uvm"})
    rows = {row["mode"]: row["speedup"] for row in gpuvm.compare([g, u], "uvm")}
    assert rows["uvm"] == pytest.approx(1.0)
    back = {row["mode"]: row["speedup"] for row in gpuvm.compare([g, u], "gpuvm")}
    assert rows["gpuvm"] * back["uvm"] == pytest.approx(1.0)


def test_csv_header_only_when_empty():
    text = gpuvm.report_csv([])
    assert text.count("\n") == 1
    assert text.startswith("mode,workload,seed")


def test_replay():
    assert gpuvm.replay_check(SMALL, 5)


@pytest.mark.skipif("GPUVM_CLI" not in os.environ, reason="CLI path not provided")
def test_cli_exit_codes(tmp_path):
    cli = os.environ["GPUVM_CLI"]
    ok = subprocess.run([cli, "run", "--workload.kind", "stream", "--workload.bytes", "65536"], capture_output=True)
    assert ok.returncode == 0
    assert json.loads(ok.stdout)["mode"] == "gpuvm"
    bad = subprocess.run([cli, "run", "--runtime.page_size_bytes", "3000"], capture_output=True)
    assert bad.returncode == 2
    missing = subprocess.run([cli, "run", "-c", str(tmp_path / "missing.json")], capture_output=True)
    assert missing.returncode == 4
    stall = subprocess.run(
        [cli, "run", "--workload.kind", "stream", "--workload.bytes", "65536", "--engine.watchdog_ms", "0.001"],
        capture_output=True,
    )
    assert stall.returncode == 3
    edges = tmp_path / "g.txt"
    edges.write_text("0 1\n1 2\n2 0\n")
    conv = subprocess.run([cli, "convert-graph", str(edges), str(tmp_path / "g.bcsr"), "--balanced"], capture_output=True)
    assert conv.returncode == 0
    assert json.loads(conv.stdout)["edges"] == 3
    report = tmp_path / "r.json"
    report.write_bytes(ok.stdout)
    again = subprocess.run([cli, "report", str(report)], capture_output=True)
    assert again.returncode == 0
    assert again.stdout == ok.stdout
