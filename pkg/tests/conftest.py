import asyncio
import contextlib
import dataclasses
import socket

from ablmta.config import ServerConfig
from ablmta.server import MtaServer


def pytest_runtest_logreport(report):
    # One visible verdict line per acceptance criterion.
    if report.when == "call" and "test_acceptance" in report.nodeid:
        verdict = "PASS" if report.passed else "FAIL"
        name = report.nodeid.split("::")[-1]
        print(f"\nACCEPTANCE {verdict}: {name}", flush=True)


def run_async(coro):
    # No asyncio pytest plugin here; tests drive their own loop.
    return asyncio.run(coro)


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def make_config(**overrides) -> ServerConfig:
    base = ServerConfig(
        listen_address="127.0.0.1:0",
        admin_listen_address="127.0.0.1:0",
        greeting_domain="abl.test",
        command_timeout_s=10.0,
    )
    return dataclasses.replace(base, **overrides)


@contextlib.asynccontextmanager
async def running_server(clock=None, **overrides):
    kwargs = {}
    if clock is not None:
        kwargs["clock"] = clock
    server = MtaServer(make_config(**overrides), **kwargs)
    await server.start()
    try:
        yield server
    finally:
        await server.stop()


async def dialogue(host, port, chunks, src_ip=None, timeout=15.0, half_close=True):
    """Send every chunk in order, then read the complete server stream.

    The client half-closes after the last chunk (unless told not to) so
    scripts that do not end in QUIT still terminate: the server sees EOF
    once it has drained the input. Returns all bytes the server sent.
    """
    kwargs = {"local_addr": (src_ip, 0)} if src_ip else {}
    reader, writer = await asyncio.open_connection(host, port, **kwargs)
    try:
        for chunk in chunks:
            writer.write(chunk)
            try:
                await writer.drain()
            except (ConnectionError, OSError):
                break
        if half_close:
            with contextlib.suppress(ConnectionError, OSError, RuntimeError):
                if writer.can_write_eof():
                    writer.write_eof()
        return await asyncio.wait_for(reader.read(), timeout)
    finally:
        writer.close()
        with contextlib.suppress(ConnectionError, OSError):
            await writer.wait_closed()


async def admin_command(host, port, line: str, timeout=10.0) -> list[str]:
    """One admin round trip; returns data lines, raises on ERR."""
    reader, writer = await asyncio.open_connection(host, port)
    try:
        writer.write(line.encode("utf-8") + b"\n")
        await writer.drain()
        lines = []
        while True:
            raw = await asyncio.wait_for(reader.readline(), timeout)
            if not raw:
                raise ConnectionError("admin connection closed mid-response")
            text = raw.decode("utf-8").rstrip("\n")
            if text == "OK":
                return lines
            if text.startswith("ERR"):
                raise RuntimeError(text)
            lines.append(text)
    finally:
        writer.close()
        with contextlib.suppress(ConnectionError, OSError):
            await writer.wait_closed()
