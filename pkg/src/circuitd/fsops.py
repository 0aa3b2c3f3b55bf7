"""Thin file-system mutation layer.

Every state-changing file operation in the mailbox and agent-home goes
through an FsOps instance so tests can inject crashes at any single
operation and verify that no document id is ever lost or torn. The
default instance is plain os calls.
"""

from __future__ import annotations

import os


class FsOps:
    def mkdir(self, path: str) -> None:
        os.makedirs(path, exist_ok=True)

    def write_file(self, path: str, data: bytes, fsync: bool = False) -> None:
        with open(path, "wb") as f:
            f.write(data)
            if fsync:
                f.flush()
                os.fsync(f.fileno())

    def rename(self, src: str, dst: str) -> None:
        os.replace(src, dst)

    def unlink(self, path: str) -> None:
        os.unlink(path)


DEFAULT_FS = FsOps()
