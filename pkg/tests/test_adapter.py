from __future__ import annotations

import os
import sys
import threading
import time

import pytest

from circuitd import home as h
from circuitd import mailbox as mb
from circuitd.adapter import gather_inputs, invoke_component, process_one
from circuitd.circuit import ComponentContract
from circuitd.context import AgentContext
from circuitd.errors import (
    ComponentTimeout,
    Fenced,
    MissingInput,
    MissingOutput,
    NonZeroExit,
)
from circuitd.runtime import AgentRuntime
from circuitd.supervisor import deploy, ingest

from harness import agent, circuit, copy_argv, wait_until, ThreadAgent


FAIL_ARGV = ["/bin/sh", "-c", "echo component exploded >&2; exit 1", "{out}"]


def chain_circuit(component_argv, threshold=3):
    return circuit("chain", [
        agent("root", kind="ingest-root"),
        agent("work", argv=component_argv, output_format="out.v1",
              failure_threshold=threshold, timeout_ms=3000),
        agent("sink", kind="translator", params={
            "mapping": "identity", "source": {"agent": "work", "format": "out.v1"},
            "output_format": "sunk.v1"}),
    ], [("root", "work"), ("work", "sink")])


@pytest.fixture
def ctx_factory(deploy_root):
    def make(spec, name):
        deploy(deploy_root, spec)
        return AgentContext.for_agent(deploy_root, spec, name)
    return make


class TestGatherInputs:
    def test_all_present(self, deploy_root, ctx_factory):
        spec = chain_circuit(copy_argv("root"))
        ctx = ctx_factory(spec, "work")
        h.put_knowledge(ctx.home_of("root"), h.KnowledgeRecord(
            agent="root", doc="d1", format="raw.v1", payload=b"x"))
        bindings = gather_inputs(ctx, spec.agent("work").component, "d1")
        assert bindings == {"{in:root.raw.v1}": h.knowledge_path(ctx.home_of("root"), "d1", "raw.v1")}

    def test_missing_names_the_placeholder(self, deploy_root, ctx_factory):
        spec = chain_circuit(copy_argv("root"))
        ctx = ctx_factory(spec, "work")
        with pytest.raises(MissingInput, match=r"\{in:root\.raw\.v1\}"):
            gather_inputs(ctx, spec.agent("work").component, "d1")

    def test_input_appearing_between_attempts(self, deploy_root, ctx_factory):
        spec = chain_circuit(copy_argv("root"))
        ctx = ctx_factory(spec, "work")
        contract = spec.agent("work").component
        with pytest.raises(MissingInput):
            gather_inputs(ctx, contract, "d1")
        h.put_knowledge(ctx.home_of("root"), h.KnowledgeRecord(
            agent="root", doc="d1", format="raw.v1", payload=b"x"))
        assert gather_inputs(ctx, contract, "d1")


class TestInvokeComponent:
    def test_identity_copy(self, tmp_path):
        src = tmp_path / "input"
        src.write_bytes(b"identity bytes")
        contract = ComponentContract(
            argv_template=("/bin/cp", "{in:a.b}", "{out}"),
            timeout_ms=2000, output_format="o.v1")
        result = invoke_component(
            contract, {"{in:a.b}": str(src)}, str(tmp_path), "d1")
        assert result.out_payload == b"identity bytes"
        assert result.exit_code == 0

    def test_timeout_kills(self, tmp_path):
        contract = ComponentContract(
            argv_template=("/bin/sleep", "5"), timeout_ms=150, output_format="o.v1")
        # {out} requirement is a parse-time rule; build directly for the test
        started = time.monotonic()
        with pytest.raises(ComponentTimeout):
            invoke_component(contract, {}, str(tmp_path), "d1")
        assert time.monotonic() - started < 3

    def test_exit_zero_without_output(self, tmp_path):
        contract = ComponentContract(
            argv_template=("/bin/true",), timeout_ms=1000, output_format="o.v1")
        with pytest.raises(MissingOutput):
            invoke_component(contract, {}, str(tmp_path), "d1")

    def test_nonzero_exit_captures_stderr(self, tmp_path):
        contract = ComponentContract(
            argv_template=("/bin/sh", "-c", "echo badness >&2; exit 7"),
            timeout_ms=1000, output_format="o.v1")
        with pytest.raises(NonZeroExit) as exc_info:
            invoke_component(contract, {}, str(tmp_path), "d1")
        assert exc_info.value.exit_code == 7
        assert "badness" in exc_info.value.stderr

    def test_env_vars_present(self, tmp_path):
        contract = ComponentContract(
            argv_template=("/bin/sh", "-c", 'echo "$CIRCUIT_AGENT/$CIRCUIT_DOC/$EXTRA" > {out}'),
            timeout_ms=1000, output_format="o.v1", env=(("EXTRA", "e1"),))
        result = invoke_component(contract, {}, str(tmp_path), "d9", agent_name="me")
        assert result.out_payload == b"me/d9/e1\n"


class TestProcessOne:
    def test_healthy_routes_downstream(self, deploy_root, ctx_factory):
        spec = chain_circuit(copy_argv("root"))
        ctx = ctx_factory(spec, "work")
        manifest = deploy(deploy_root, spec)
        doc = ingest(manifest, "root", b"hello")
        entry = mb.claim_next(ctx.home.mailbox)
        assert process_one(ctx, entry) == "done"
        assert h.get_knowledge(ctx.home, doc, "out.v1").payload == b"hello"
        assert mb.depth(ctx.home_of("sink").mailbox)["inbox"] == 1
        assert mb.depth(ctx.home.mailbox) == {"inbox": 0, "working": 0}

    def test_failure_below_threshold_requeues(self, deploy_root, ctx_factory):
        spec = chain_circuit(FAIL_ARGV, threshold=3)
        ctx = ctx_factory(spec, "work")
        manifest = deploy(deploy_root, spec)
        ingest(manifest, "root", b"x")
        entry = mb.claim_next(ctx.home.mailbox)
        assert process_one(ctx, entry) == "requeued"
        assert mb.depth(ctx.home.mailbox)["inbox"] == 1
        assert h.attempt_count(ctx.home, entry.doc) == 1

    def test_threshold_dead_letters_and_blocks_downstream(self, deploy_root, ctx_factory):
        spec = chain_circuit(FAIL_ARGV, threshold=3)
        ctx = ctx_factory(spec, "work")
        manifest = deploy(deploy_root, spec)
        doc = ingest(manifest, "root", b"x")
        outcomes = []
        for _ in range(3):
            entry = mb.claim_next(ctx.home.mailbox)
            outcomes.append(process_one(ctx, entry))
        assert outcomes == ["requeued", "requeued", "dead_lettered"]
        assert h.load_dead_letter(ctx.home, doc).attempts == 3
        # exactly 3 invocations in the call log, none forwarded downstream
        invocations = [r for r in h.read_log(ctx.home, "invocations.log") if r["doc"] == doc]
        assert len(invocations) == 3
        assert mb.depth(ctx.home_of("sink").mailbox)["inbox"] == 0

    def test_duplicate_claim_skips_invocation_but_reroutes(self, deploy_root, ctx_factory):
        spec = chain_circuit(copy_argv("root"))
        ctx = ctx_factory(spec, "work")
        manifest = deploy(deploy_root, spec)
        doc = ingest(manifest, "root", b"hello")
        entry = mb.claim_next(ctx.home.mailbox)
        process_one(ctx, entry)
        before = h.get_knowledge(ctx.home, doc, "out.v1")
        mb.enqueue(ctx.home.mailbox, doc)  # duplicate id arrives again
        process_one(ctx, mb.claim_next(ctx.home.mailbox))
        after = h.get_knowledge(ctx.home, doc, "out.v1")
        assert after.payload == before.payload
        invocations = [r for r in h.read_log(ctx.home, "invocations.log") if r["doc"] == doc]
        assert len(invocations) == 1  # dedup: the component ran once


class TestRunLoop:
    def test_empty_mailbox_polls(self, deploy_root):
        spec = chain_circuit(copy_argv("root"))
        deploy(deploy_root, spec)
        home = h.open_home(deploy_root, "work")
        lease = h.acquire_lease(home)
        runtime = AgentRuntime(deploy_root, spec, "work", lease, heartbeat_interval_s=0.1)
        stop = threading.Event()
        threading.Timer(0.35, stop.set).start()
        report = runtime.run(stop)
        assert report.processed == 0
        assert report.polls >= 3

    def test_hundred_docs_end_to_end(self, deploy_root):
        spec = chain_circuit(copy_argv("root"))
        manifest = deploy(deploy_root, spec)
        docs = [ingest(manifest, "root", f"payload {i}".encode()) for i in range(100)]
        worker = ThreadAgent(deploy_root, spec, "work").start()
        sink = ThreadAgent(deploy_root, spec, "sink").start()
        sink_home = h.open_home(deploy_root, "sink")
        try:
            wait_until(lambda: all(
                h.get_knowledge(sink_home, d, "sunk.v1") is not None for d in docs),
                timeout=30)
        finally:
            worker.join()
            sink.join()
        assert worker.report.processed == 100
        for d in docs:
            assert h.get_knowledge(sink_home, d, "sunk.v1").payload == \
                h.get_knowledge(h.open_home(deploy_root, "root"), d, "raw.v1").payload

    def test_fenced_mid_loop_exits_and_successor_recovers(self, deploy_root):
        spec = chain_circuit(copy_argv("root"))
        manifest = deploy(deploy_root, spec)
        home = h.open_home(deploy_root, "work")

        first = ThreadAgent(deploy_root, spec, "work", heartbeat_s=0.05).start()
        wait_until(lambda: h.read_lease(home) is not None)
        # direct takeover from this thread fences the runner
        usurper = h.acquire_lease(home, os.getpid(), grace_s=0.2)
        wait_until(lambda: not first.thread.is_alive(), timeout=10)
        assert first.report is not None and first.report.fenced
        h.release_lease(home, usurper)

        # an in-flight doc left in working/ is recovered by the successor
        doc = ingest(manifest, "root", b"orphan")
        mb.claim_next(home.mailbox)  # simulate a crash while claimed
        second = ThreadAgent(deploy_root, spec, "work").start()
        try:
            wait_until(lambda: h.get_knowledge(home, doc, "out.v1") is not None, timeout=10)
        finally:
            second.join()
