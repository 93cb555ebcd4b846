#!/usr/bin/env python3
"""Regenerate the checked-in golden files.

Run from the repository root after an intentional behaviour change:

    python3 scripts/make_golden.py

Produces tests/golden/transcript_requests.ndjson and
transcript_responses.ndjson (lifecycle replay), plus iot_pair.json (the
canonical two-node IoT experiment document the authoring bindings must
reproduce byte-for-byte).
"""

import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from fastapi.testclient import TestClient

from fedcore.config import Config
from fedcore.core import CoreService
from fedcore.service import create_app
from tests.fixtures import IOT_PAIR_TEXT
from tests.transcript import replay, request_lines, run_prologue


def main() -> None:
    golden = ROOT / "tests" / "golden"
    golden.mkdir(exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        journal = pathlib.Path(tmp) / "core.journal"
        seed_core = CoreService(Config(agent_autostart=False, journal=str(journal)))
        run_prologue(seed_core)
        seed_core.close()

        replay_journal = pathlib.Path(tmp) / "replay.journal"
        shutil.copy(journal, replay_journal)
        app = create_app(Config(agent_autostart=False, journal=str(replay_journal)))
        with TestClient(app) as client:
            lines = request_lines()
            responses = replay(client, lines)

    (golden / "transcript_requests.ndjson").write_text("\n".join(lines) + "\n")
    (golden / "transcript_responses.ndjson").write_bytes(responses)
    (golden / "iot_pair.json").write_text(IOT_PAIR_TEXT + "\n")
    print(f"wrote {golden}/transcript_requests.ndjson ({len(lines)} requests)")
    print(f"wrote {golden}/transcript_responses.ndjson ({len(responses)} bytes)")
    print(f"wrote {golden}/iot_pair.json")


if __name__ == "__main__":
    main()
