from __future__ import annotations

import os
import random
import re
import threading
from concurrent.futures import ThreadPoolExecutor

import pytest

from circuitd.errors import NotClaimed, InvalidDocumentId
from circuitd.mailbox import (
    ENTRY_RE,
    ack,
    claim_next,
    depth,
    enqueue,
    mailbox_init,
    nack,
    recover,
)

from harness import CrashingFs, InjectedCrash


@pytest.fixture
def mbox(tmp_path):
    return mailbox_init(str(tmp_path / "mb"))


class TestInit:
    def test_fresh_creates_three_dirs(self, tmp_path):
        ref = mailbox_init(str(tmp_path / "mb"))
        for sub in ("tmp", "inbox", "working"):
            assert os.path.isdir(os.path.join(ref.path, sub))

    def test_idempotent(self, tmp_path):
        path = str(tmp_path / "mb")
        ref = mailbox_init(path)
        enqueue(ref, "d1")
        ref2 = mailbox_init(path)
        assert depth(ref2)["inbox"] == 1

    def test_regular_file_rejected(self, tmp_path):
        f = tmp_path / "file"
        f.write_text("x")
        with pytest.raises(OSError):
            mailbox_init(str(f))


class TestEnqueue:
    def test_single_entry_name(self, mbox):
        entry = enqueue(mbox, "d1")
        names = os.listdir(mbox.inbox)
        assert names == [entry.filename]
        assert ENTRY_RE.match(names[0])
        assert names[0].endswith("_d1.msg")

    def test_entry_file_is_empty(self, mbox):
        entry = enqueue(mbox, "d1")
        assert os.path.getsize(os.path.join(mbox.inbox, entry.filename)) == 0

    def test_bad_doc_id_rejected(self, mbox):
        for bad in ("", "a/b", "a b", "x" * 129):
            with pytest.raises(InvalidDocumentId):
                enqueue(mbox, bad)

    def test_duplicate_enqueue_yields_second_entry(self, mbox):
        enqueue(mbox, "d1")
        enqueue(mbox, "d1")
        assert depth(mbox)["inbox"] == 2

    def test_concurrent_enqueuers(self, mbox):
        # 1,000 logical enqueuers x 10 docs, over a thread pool
        def enqueuer(i):
            for j in range(10):
                enqueue(mbox, f"d{i:04d}.{j}")

        with ThreadPoolExecutor(max_workers=32) as pool:
            list(pool.map(enqueuer, range(1000)))
        assert depth(mbox)["inbox"] == 10_000
        assert all(ENTRY_RE.match(n) for n in os.listdir(mbox.inbox))

    def test_crash_between_write_and_rename(self, tmp_path):
        path = str(tmp_path / "mb")
        mbox = mailbox_init(path)
        fs = CrashingFs(crash_at=0, when="after")  # dies right after the tmp write
        with pytest.raises(InjectedCrash):
            enqueue(mbox, "d1", fs=fs)
        assert depth(mbox)["inbox"] == 0
        assert len(os.listdir(mbox.tmp)) == 1
        mailbox_init(path, tmp_gc_age_s=0.0)
        assert os.listdir(mbox.tmp) == []
        assert depth(mbox)["inbox"] == 0


class TestClaimAckNack:
    def test_fifo(self, mbox):
        enqueue(mbox, "d1")
        enqueue(mbox, "d2")
        assert claim_next(mbox).doc == "d1"
        assert claim_next(mbox).doc == "d2"

    def test_empty_returns_none(self, mbox):
        assert claim_next(mbox) is None

    def test_claim_moves_to_working(self, mbox):
        enqueue(mbox, "d1")
        entry = claim_next(mbox)
        assert depth(mbox) == {"inbox": 0, "working": 1}
        ack(mbox, entry)
        assert depth(mbox) == {"inbox": 0, "working": 0}

    def test_claim_order_matches_seq_log(self, mbox):
        # log-replay oracle: claim order equals the sort order of seq keys
        rng = random.Random(7)
        log = []
        for i in range(500):
            entry = enqueue(mbox, f"d{rng.randint(0, 10**9)}.{i}")
            log.append(entry)
        expected = [e.doc for e in sorted(log, key=lambda e: e.seq)]
        claimed = []
        while (e := claim_next(mbox)) is not None:
            claimed.append(e.doc)
            ack(mbox, e)
        assert claimed == expected

    def test_double_ack_raises(self, mbox):
        enqueue(mbox, "d1")
        entry = claim_next(mbox)
        ack(mbox, entry)
        with pytest.raises(NotClaimed):
            ack(mbox, entry)

    def test_nack_goes_to_the_back(self, mbox):
        enqueue(mbox, "d1")
        entry = claim_next(mbox)
        nack(mbox, entry)
        enqueue(mbox, "d2")
        assert claim_next(mbox).doc == "d1"  # requeued before d2 arrived

    def test_nack_requeues_behind_existing(self, mbox):
        enqueue(mbox, "d1")
        d1 = claim_next(mbox)
        nack(mbox, d1)
        # enqueue happened after the nack, so d1 is still first; but a doc
        # enqueued before the nack outranks it
        enqueue(mbox, "d3")
        d1b = claim_next(mbox)
        assert d1b.doc == "d1"
        nack(mbox, d1b)
        assert claim_next(mbox).doc == "d3"

    def test_nack_unclaimed_raises(self, mbox):
        enqueue(mbox, "d1")
        entry = claim_next(mbox)
        ack(mbox, entry)
        with pytest.raises(NotClaimed):
            nack(mbox, entry)

    def test_claim_nack_claim_same_doc_larger_seq(self, mbox):
        enqueue(mbox, "d1")
        first = claim_next(mbox)
        nack(mbox, first)
        second = claim_next(mbox)
        assert second.doc == "d1"
        assert second.seq > first.seq


class TestRecover:
    def test_orphan_recovered_first(self, mbox):
        enqueue(mbox, "d1")
        claim_next(mbox)  # crash: never acked
        enqueue(mbox, "d2")
        recovered = recover(mbox)
        assert [e.doc for e in recovered] == ["d1"]
        assert claim_next(mbox).doc == "d1"

    def test_clean_shutdown_empty(self, mbox):
        assert recover(mbox) == []

    def test_three_orphans_original_order(self, mbox):
        for d in ("a", "b", "c"):
            enqueue(mbox, d)
            claim_next(mbox)
        recovered = recover(mbox)
        assert [e.doc for e in recovered] == ["a", "b", "c"]
        assert [claim_next(mbox).doc for _ in range(3)] == ["a", "b", "c"]

    def test_sub_inbox_source_preserved(self, mbox):
        enqueue(mbox, "d1", source="edgeA")
        entry = claim_next(mbox)
        assert entry.source == "edgeA"
        recovered = recover(mbox)
        assert recovered[0].source == "edgeA"
        again = claim_next(mbox)
        assert again.source == "edgeA" and again.seq == entry.seq


class TestDepth:
    def test_empty(self, mbox):
        assert depth(mbox) == {"inbox": 0, "working": 0}

    def test_five_enqueued_one_claimed(self, mbox):
        for i in range(5):
            enqueue(mbox, f"d{i}")
        claim_next(mbox)
        assert depth(mbox) == {"inbox": 4, "working": 1}

    def test_monotone_under_enqueue_load(self, mbox):
        # with no claims, inbox depth never decreases
        stop = threading.Event()
        seen = []

        def watcher():
            while not stop.is_set():
                seen.append(depth(mbox)["inbox"])

        t = threading.Thread(target=watcher)
        t.start()
        for i in range(200):
            enqueue(mbox, f"d{i}")
        stop.set()
        t.join()
        assert all(a <= b for a, b in zip(seen, seen[1:]))


# -- crash-point conservation property -------------------------------------------

ACTIONS = ("enqueue", "claim", "ack", "nack", "recover")


def _conservation_trial(tmp_path, trial: int) -> None:
    """One randomized crash point; afterwards every id is accounted for."""
    rng = random.Random(trial)
    root = str(tmp_path / f"t{trial}")
    mbox = mailbox_init(root)

    script_len = rng.randint(3, 25)
    crash_at = rng.randint(0, script_len)  # fs-op index, not action index
    fs = CrashingFs(crash_at=crash_at, when=rng.choice(["before", "after"]))

    enq_returned: list[str] = []
    enq_attempted: list[str] = []
    ack_returned: list[str] = []
    ack_attempted: list[str] = []
    claimed = []
    next_doc = 0

    try:
        for _ in range(script_len):
            action = rng.choice(ACTIONS)
            if action == "enqueue" or not claimed and action in ("ack", "nack"):
                doc = f"d{next_doc:05d}"
                next_doc += 1
                enq_attempted.append(doc)
                enqueue(mbox, doc, fs=fs)
                enq_returned.append(doc)
            elif action == "claim":
                entry = claim_next(mbox, fs=fs)
                if entry is not None:
                    claimed.append(entry)
            elif action == "ack":
                entry = claimed.pop()
                ack_attempted.append(entry.doc)
                ack(mbox, entry, fs=fs)
                ack_returned.append(entry.doc)
            elif action == "nack":
                entry = claimed.pop()
                nack(mbox, entry, fs=fs)
            elif action == "recover":
                claimed.clear()
                recover(mbox, fs=fs, tmp_gc_age_s=10.0)
    except InjectedCrash:
        pass

    # post-crash accounting, before any recovery: nothing may be duplicated
    def docs_in(d):
        out = []
        for name in os.listdir(d):
            full = os.path.join(d, name)
            if os.path.isdir(full):
                out.extend(n.rpartition("_")[2][:-4] for n in os.listdir(full))
            elif name.endswith(".msg"):
                out.append(name.rpartition("_")[2][:-4])
        return out

    present = docs_in(mbox.inbox) + docs_in(mbox.working)
    counts = {d: present.count(d) for d in present}
    assert all(c == 1 for c in counts.values()), f"duplicated ids: {counts}"

    # conservation: returned-enqueues survive unless acked; the one
    # crashed-mid-flight enqueue/ack is allowed to be ambiguous
    ambiguous = (set(enq_attempted) - set(enq_returned)) | (set(ack_attempted) - set(ack_returned))
    for doc in enq_returned:
        if doc in ack_returned:
            assert doc not in counts, f"{doc} acked but still present"
        elif doc in ambiguous:
            assert counts.get(doc, 0) <= 1
        else:
            assert counts.get(doc, 0) == 1, f"{doc} lost"
    for doc in set(present):
        assert doc in enq_attempted, f"{doc} appeared from nowhere"

    # a recovery pass restores a clean single-state picture
    mailbox_init(root, tmp_gc_age_s=0.0)
    recover(mbox)
    assert docs_in(mbox.working) == []
    assert os.listdir(mbox.tmp) == []


def test_crash_point_conservation_sweep(tmp_path):
    for trial in range(300):
        _conservation_trial(tmp_path, trial)
