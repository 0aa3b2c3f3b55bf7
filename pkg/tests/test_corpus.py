from __future__ import annotations

import hashlib
import math
import os
import time

import pytest

from circuitd import supervisor as sv
from circuitd.control_api import serve_control_api
from circuitd.corpus import FlowProfile, generate, load_manifest, replay

from harness import agent, circuit


def corpus_digest(out_dir):
    digest = hashlib.sha256()
    for entry in load_manifest(out_dir):
        digest.update(entry["doc"].encode())
        with open(entry["path"], "rb") as f:
            digest.update(f.read())
    return digest.hexdigest()


class TestGenerate:
    def test_hourly_rate_and_volume(self, tmp_path):
        # 55 docs/hour at ~2 KiB each is ~110 KiB for a simulated hour
        profile = FlowProfile(docs_per_hour=55, avg_doc_bytes=2048,
                              duration_hours=1.0, seed=1)
        manifest = generate(profile, str(tmp_path))
        assert len(manifest) == 55
        total = sum(e["bytes"] for e in manifest)
        assert 0.85 * 55 * 2048 <= total <= 1.15 * 55 * 2048

    def test_seed_determinism(self, tmp_path):
        profile = FlowProfile(docs_per_hour=100, avg_doc_bytes=512,
                              duration_hours=1.0, seed=42)
        generate(profile, str(tmp_path / "a"))
        generate(profile, str(tmp_path / "b"))
        assert corpus_digest(str(tmp_path / "a")) == corpus_digest(str(tmp_path / "b"))

    def test_different_seed_differs(self, tmp_path):
        base = dict(docs_per_hour=100, avg_doc_bytes=512, duration_hours=1.0)
        generate(FlowProfile(seed=1, **base), str(tmp_path / "a"))
        generate(FlowProfile(seed=2, **base), str(tmp_path / "b"))
        assert corpus_digest(str(tmp_path / "a")) != corpus_digest(str(tmp_path / "b"))

    def test_avg_doc_bytes_within_five_percent(self, tmp_path):
        profile = FlowProfile(docs_per_hour=250, avg_doc_bytes=1024,
                              duration_hours=1.0, seed=7)
        manifest = generate(profile, str(tmp_path))
        assert len(manifest) >= 200
        avg = sum(e["bytes"] for e in manifest) / len(manifest)
        assert abs(avg - 1024) / 1024 < 0.05

    def test_single_topic_labels(self, tmp_path):
        profile = FlowProfile(docs_per_hour=60, avg_doc_bytes=256,
                              duration_hours=1.0, seed=3,
                              topic_distribution={"eco": 1.0})
        manifest = generate(profile, str(tmp_path))
        assert all(e["labels"] == ["eco"] for e in manifest)
        for e in manifest:
            first_line = open(e["path"], encoding="utf-8").readline()
            assert first_line == "#TOPICS: eco\n"

    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(ValueError):
            FlowProfile(docs_per_hour=1, avg_doc_bytes=1, duration_hours=1,
                        seed=1, topic_distribution={"a": 0.5, "b": 0.6})


@pytest.fixture
def api_deployment(deploy_root, fast_env):
    spec = circuit("sink-only", [
        agent("root", kind="ingest-root", poll_interval_ms=50),
        agent("keep", kind="translator", poll_interval_ms=50, params={
            "mapping": "identity", "source": {"agent": "root", "format": "raw.v1"},
            "output_format": "kept.v1"}),
    ], [("root", "keep")])
    manifest = sv.deploy(deploy_root, spec)
    server = serve_control_api(manifest, bind="127.0.0.1:0")
    yield manifest, f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


class TestReplay:
    def test_unpaced_replay_acks_everything(self, tmp_path, api_deployment):
        manifest, base = api_deployment
        profile = FlowProfile(docs_per_hour=40, avg_doc_bytes=200,
                              duration_hours=1.0, seed=11)
        generate(profile, str(tmp_path))
        report = replay(str(tmp_path), base, "root", speedup=math.inf)
        assert len(report.ids) == 40
        assigned = [a for (_, a, _) in report.ids]
        assert len(set(assigned)) == 40
        snaps = {s.agent: s for s in sv.status(manifest)}
        assert snaps["keep"].inbox_depth == 40

    def test_pacing_scales_with_speedup(self, tmp_path, api_deployment):
        _, base = api_deployment
        # 10 docs over a simulated hour at speedup 1800 -> about 2s of pacing
        profile = FlowProfile(docs_per_hour=10, avg_doc_bytes=128,
                              duration_hours=1.0, seed=12)
        generate(profile, str(tmp_path))
        started = time.monotonic()
        report = replay(str(tmp_path), base, "root", speedup=1800)
        elapsed = time.monotonic() - started
        assert len(report.ids) == 10
        assert 1.4 <= elapsed <= 4.0
