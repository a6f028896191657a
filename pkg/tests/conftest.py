import pytest

from flowaction.ingest import DeviceConfig, PacketRecord, Protocol

DEVICE = "10.0.0.2"
SERVER = "31.13.64.1"

# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pkt(t, outgoing=True, size=100, flags=("ACK", "PSH"), seq=0, payload=None,
        sport=43210, dport=443, server=SERVER, proto=Protocol.TCP):
    if payload is None:
        payload = max(0, size - 54)
    if outgoing:
        return PacketRecord(t, DEVICE, server, sport, dport, proto, size, frozenset(flags), seq, payload)
    return PacketRecord(t, server, DEVICE, dport, sport, proto, size, frozenset(flags), seq, payload)


@pytest.fixture
def device():
    return DeviceConfig(DEVICE)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
