"""Process entry point for a single agent.

The supervisor launches ``python -m circuitd.agent_main <deploy_root>
<agent>``; the process acquires the agent's lease (terminating any
predecessor), recovers its mailbox, and polls until SIGTERM. SIGKILL is
always safe: whatever was claimed stays in working/ for the next
activation.

Environment knobs: CIRCUITD_GRACE_S (lease takeover grace period),
CIRCUITD_HEARTBEAT_S (heartbeat/status interval).
"""

from __future__ import annotations

import os
import signal
import sys
import threading

from .errors import TakeoverFailed, BadPattern
from .runtime import HEARTBEAT_INTERVAL_S, run_agent
from .home import LEASE_GRACE_S
from .supervisor import load_manifest


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print("usage: python -m circuitd.agent_main <deploy_root> <agent>", file=sys.stderr)
        return 2
    deploy_root, name = argv

    grace_s = float(os.environ.get("CIRCUITD_GRACE_S", LEASE_GRACE_S))
    heartbeat_s = float(os.environ.get("CIRCUITD_HEARTBEAT_S", HEARTBEAT_INTERVAL_S))

    manifest = load_manifest(deploy_root)
    stop = threading.Event()

    def _on_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGTERM, _on_signal)
    signal.signal(signal.SIGINT, _on_signal)

    try:
        report = run_agent(
            deploy_root,
            manifest.circuit,
            name,
            stop,
            grace_s=grace_s,
            heartbeat_interval_s=heartbeat_s,
        )
    except TakeoverFailed as e:
        print(f"agent {name}: takeover failed: {e}", file=sys.stderr)
        return 3
    except BadPattern as e:
        print(f"agent {name}: bad configuration: {e}", file=sys.stderr)
        return 2
    print(
        f"agent {name}: processed={report.processed} requeued={report.requeued} "
        f"dead_lettered={report.dead_lettered} polls={report.polls} fenced={report.fenced}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
