"""Circuit model: the declared DAG of agents that makes up an application.

A circuit is parsed from a strict JSON document, validated structurally
(acyclicity, reachability, per-kind degree rules), and then drives
deployment and routing. Parsing and validation are separate steps:
parse_circuit only checks document shape, validate_circuit returns every
graph-level violation as data.
"""

from __future__ import annotations

import heapq
import json
import re
from dataclasses import dataclass, field

from .errors import CircuitSyntaxError, InvalidCircuit, SchemaError, UnknownAgent, InvalidDocumentId

IDENTIFIER_RE = re.compile(r"^[A-Za-z0-9._-]{1,128}$")

AGENT_KINDS = (
    "adapter",
    "multiplexer",
    "synchronizer",
    "dispatcher",
    "filter",
    "translator",
    "networker-send",
    "networker-receive",
    "ingest-root",
)

DEFAULT_FAILURE_THRESHOLD = 3
DEFAULT_POLL_INTERVAL_MS = 500
DEFAULT_COMPONENT_TIMEOUT_MS = 30_000


def validate_doc_id(value: str) -> str:
    """Check a document id against the identifier charset and return it.

    Ids are embedded in file names, so path separators and whitespace are
    rejected outright.
    """
    if not isinstance(value, str) or not IDENTIFIER_RE.match(value):
        raise InvalidDocumentId(f"invalid document id: {value!r}")
    return value


def validate_identifier(value: str, what: str) -> str:
    if not isinstance(value, str) or not IDENTIFIER_RE.match(value):
        raise SchemaError(f"invalid {what}: {value!r} (must match {IDENTIFIER_RE.pattern})")
    return value


@dataclass(frozen=True)
class ComponentContract:
    """How an external executable is invoked for one document.

    argv_template entries may embed `{doc}`, `{in:<agent>.<format>}`
    (path of an upstream knowledge file) and `{out}` (path the component
    must write). Exit 0 plus an existing out file is success; anything
    else is a failed attempt.
    """

    argv_template: tuple[str, ...]
    timeout_ms: int = DEFAULT_COMPONENT_TIMEOUT_MS
    output_format: str = ""
    env: tuple[tuple[str, str], ...] = ()

    def input_refs(self) -> list[tuple[str, str]]:
        """All (agent, format) pairs referenced by {in:...} placeholders."""
        refs = []
        for arg in self.argv_template:
            for m in re.finditer(r"\{in:([^}]+)\}", arg):
                ref = m.group(1)
                agent, sep, fmt = ref.partition(".")
                if not sep or not agent or not fmt:
                    raise SchemaError(f"malformed input placeholder {{in:{ref}}}")
                refs.append((agent, fmt))
        return refs

    def out_placeholder_count(self) -> int:
        return sum(arg.count("{out}") for arg in self.argv_template)


@dataclass(frozen=True)
class AgentSpec:
    name: str
    kind: str
    component: ComponentContract | None = None
    params: dict = field(default_factory=dict)
    failure_threshold: int = DEFAULT_FAILURE_THRESHOLD
    poll_interval_ms: int = DEFAULT_POLL_INTERVAL_MS


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str


@dataclass(frozen=True)
class CircuitSpec:
    circuit_name: str
    agents: tuple[AgentSpec, ...]
    edges: tuple[Edge, ...]
    roots: tuple[str, ...]

    def agent(self, name: str) -> AgentSpec:
        for a in self.agents:
            if a.name == name:
                return a
        raise UnknownAgent(name)

    def agent_names(self) -> list[str]:
        return [a.name for a in self.agents]

    def upstream_of(self, name: str) -> list[str]:
        return sorted(e.src for e in self.edges if e.dst == name)

    def downstream_of(self, name: str) -> list[str]:
        return sorted(e.dst for e in self.edges if e.src == name)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self) -> str:
        return f"[{self.code}] {self.message}"


# -- parsing ------------------------------------------------------------------

_AGENT_FIELDS = {"name", "kind", "component", "params", "failure_threshold", "poll_interval_ms"}
_COMPONENT_FIELDS = {"argv_template", "timeout_ms", "output_format", "env"}
_TOP_FIELDS = {"circuit_name", "agents", "edges", "roots"}
_EDGE_FIELDS = {"from", "to"}

_PARAM_FIELDS_BY_KIND = {
    "adapter": set(),
    "multiplexer": set(),
    "synchronizer": {"mode"},
    "dispatcher": {"rule", "branches", "default"},
    "filter": {"predicate"},
    "translator": {"mapping", "source", "output_format"},
    "networker-send": {"transport", "formats"},
    "networker-receive": {"transport"},
    "ingest-root": set(),
}


def _reject_unknown(obj: dict, allowed: set, where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise SchemaError(f"unknown field(s) {sorted(unknown)} in {where}")


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise SchemaError(f"missing field '{key}' in {where}")
    return obj[key]


def _parse_component(obj, where: str) -> ComponentContract:
    if not isinstance(obj, dict):
        raise SchemaError(f"component must be an object in {where}")
    _reject_unknown(obj, _COMPONENT_FIELDS, f"{where}.component")
    argv = _require(obj, "argv_template", f"{where}.component")
    if not isinstance(argv, list) or not argv or not all(isinstance(a, str) for a in argv):
        raise SchemaError(f"argv_template must be a non-empty string array in {where}")
    fmt = _require(obj, "output_format", f"{where}.component")
    validate_identifier(fmt, f"output_format in {where}")
    timeout = obj.get("timeout_ms", DEFAULT_COMPONENT_TIMEOUT_MS)
    if not isinstance(timeout, int) or timeout <= 0:
        raise SchemaError(f"timeout_ms must be a positive int in {where}")
    env = obj.get("env", {})
    if not isinstance(env, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in env.items()
    ):
        raise SchemaError(f"env must be a string map in {where}")
    contract = ComponentContract(
        argv_template=tuple(argv),
        timeout_ms=timeout,
        output_format=fmt,
        env=tuple(sorted(env.items())),
    )
    if contract.out_placeholder_count() != 1:
        raise SchemaError(f"argv_template must contain exactly one {{out}} in {where}")
    contract.input_refs()  # raises on malformed {in:...}
    return contract


def _parse_agent(obj) -> AgentSpec:
    if not isinstance(obj, dict):
        raise SchemaError("agent entries must be objects")
    name = _require(obj, "name", "agent")
    validate_identifier(name, "agent name")
    where = f"agent '{name}'"
    _reject_unknown(obj, _AGENT_FIELDS, where)
    kind = _require(obj, "kind", where)
    if kind not in AGENT_KINDS:
        raise SchemaError(f"unknown kind '{kind}' in {where}")

    component = None
    if "component" in obj:
        component = _parse_component(obj["component"], where)
    if kind == "adapter" and component is None:
        raise SchemaError(f"{where}: kind 'adapter' requires a component")
    if component is not None and kind not in ("adapter", "translator"):
        raise SchemaError(f"{where}: kind '{kind}' does not take a component")

    params = obj.get("params", {})
    if not isinstance(params, dict):
        raise SchemaError(f"params must be an object in {where}")
    _reject_unknown(params, _PARAM_FIELDS_BY_KIND[kind], f"{where}.params")

    threshold = obj.get("failure_threshold", DEFAULT_FAILURE_THRESHOLD)
    if not isinstance(threshold, int) or threshold < 1:
        raise SchemaError(f"failure_threshold must be >= 1 in {where}")
    poll = obj.get("poll_interval_ms", DEFAULT_POLL_INTERVAL_MS)
    if not isinstance(poll, int) or poll <= 0:
        raise SchemaError(f"poll_interval_ms must be a positive int in {where}")

    return AgentSpec(
        name=name,
        kind=kind,
        component=component,
        params=params,
        failure_threshold=threshold,
        poll_interval_ms=poll,
    )


def parse_circuit(text: str) -> CircuitSpec:
    """Parse a circuit-spec JSON document. Performs no graph validation."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CircuitSyntaxError(f"malformed circuit document: {e.msg} at line {e.lineno} column {e.colno}") from e
    if not isinstance(doc, dict):
        raise SchemaError("circuit document must be a JSON object")
    _reject_unknown(doc, _TOP_FIELDS, "circuit document")

    name = _require(doc, "circuit_name", "circuit document")
    validate_identifier(name, "circuit_name")

    agents_raw = _require(doc, "agents", "circuit document")
    if not isinstance(agents_raw, list):
        raise SchemaError("agents must be an array")
    agents = [_parse_agent(a) for a in agents_raw]
    seen: set[str] = set()
    for a in agents:
        if a.name in seen:
            raise SchemaError(f"duplicate agent name '{a.name}'")
        seen.add(a.name)

    edges_raw = _require(doc, "edges", "circuit document")
    if not isinstance(edges_raw, list):
        raise SchemaError("edges must be an array")
    edges = []
    for e in edges_raw:
        if not isinstance(e, dict):
            raise SchemaError("edge entries must be objects")
        _reject_unknown(e, _EDGE_FIELDS, "edge")
        edges.append(Edge(src=_require(e, "from", "edge"), dst=_require(e, "to", "edge")))

    roots_raw = _require(doc, "roots", "circuit document")
    if not isinstance(roots_raw, list) or not all(isinstance(r, str) for r in roots_raw):
        raise SchemaError("roots must be a string array")

    return CircuitSpec(
        circuit_name=name,
        agents=tuple(agents),
        edges=tuple(edges),
        roots=tuple(roots_raw),
    )


def serialize_circuit(spec: CircuitSpec) -> str:
    """Render a CircuitSpec back to its JSON document form."""
    agents = []
    for a in spec.agents:
        obj: dict = {"name": a.name, "kind": a.kind}
        if a.component is not None:
            comp: dict = {
                "argv_template": list(a.component.argv_template),
                "timeout_ms": a.component.timeout_ms,
                "output_format": a.component.output_format,
            }
            if a.component.env:
                comp["env"] = dict(a.component.env)
            obj["component"] = comp
        if a.params:
            obj["params"] = a.params
        obj["failure_threshold"] = a.failure_threshold
        obj["poll_interval_ms"] = a.poll_interval_ms
        agents.append(obj)
    doc = {
        "circuit_name": spec.circuit_name,
        "agents": agents,
        "edges": [{"from": e.src, "to": e.dst} for e in spec.edges],
        "roots": list(spec.roots),
    }
    return json.dumps(doc, indent=2) + "\n"


# -- validation ---------------------------------------------------------------

def _find_cycle(names: list[str], out_edges: dict[str, list[str]]) -> list[str] | None:
    """Return one cycle as a witness path [a, b, ..., a], or None."""
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in names}
    parent: dict[str, str] = {}

    for start in names:
        if color[start] != WHITE:
            continue
        stack: list[tuple[str, int]] = [(start, 0)]
        color[start] = GRAY
        while stack:
            node, idx = stack[-1]
            succs = out_edges.get(node, [])
            if idx < len(succs):
                stack[-1] = (node, idx + 1)
                nxt = succs[idx]
                if nxt not in color:
                    continue  # dangling endpoint, reported separately
                if color[nxt] == GRAY:
                    chain = [node]
                    cur = node
                    while cur != nxt:
                        cur = parent[cur]
                        chain.append(cur)
                    chain.reverse()
                    return chain  # [nxt, ..., node]; caller closes the loop
                if color[nxt] == WHITE:
                    color[nxt] = GRAY
                    parent[nxt] = node
                    stack.append((nxt, 0))
            else:
                color[node] = BLACK
                stack.pop()
    return None


def validate_circuit(spec: CircuitSpec) -> list[Violation]:
    """Return every violated structural invariant; an empty list means deployable."""
    report: list[Violation] = []
    names = spec.agent_names()
    name_set = set(names)
    by_name = {a.name: a for a in spec.agents}

    for i, n in enumerate(names):
        if n in names[:i]:
            report.append(Violation("duplicate-name", f"agent name '{n}' declared twice"))

    out_edges: dict[str, list[str]] = {n: [] for n in names}
    in_deg = {n: 0 for n in names}
    out_deg = {n: 0 for n in names}
    for e in spec.edges:
        if e.src == e.dst:
            report.append(Violation("self-edge", f"edge {e.src} -> {e.dst} is a self-loop"))
            continue
        dangling = False
        for endpoint in (e.src, e.dst):
            if endpoint not in name_set:
                report.append(Violation("dangling-edge", f"edge endpoint '{endpoint}' is not a declared agent"))
                dangling = True
        if dangling:
            continue
        out_edges[e.src].append(e.dst)
        out_deg[e.src] += 1
        in_deg[e.dst] += 1

    cycle = _find_cycle(names, out_edges)
    if cycle is not None:
        path = cycle + [cycle[0]]
        report.append(Violation("cycle", "cycle detected: " + " -> ".join(path)))

    for r in spec.roots:
        if r not in name_set:
            report.append(Violation("bad-root", f"root '{r}' is not a declared agent"))
        elif by_name[r].kind != "ingest-root":
            report.append(Violation("bad-root", f"root '{r}' has kind '{by_name[r].kind}', expected ingest-root"))
    for a in spec.agents:
        if a.kind == "ingest-root" and a.name not in spec.roots:
            report.append(Violation("bad-root", f"ingest-root '{a.name}' is not listed in roots"))

    # Reachability: networker-receive agents are entry points fed from a
    # remote circuit, so they count as sources alongside the roots.
    if cycle is None:
        sources = [r for r in spec.roots if r in name_set]
        sources += [a.name for a in spec.agents if a.kind == "networker-receive"]
        seen_r = set(sources)
        frontier = list(sources)
        while frontier:
            cur = frontier.pop()
            for nxt in out_edges.get(cur, []):
                if nxt not in seen_r:
                    seen_r.add(nxt)
                    frontier.append(nxt)
        for n in names:
            if n not in seen_r:
                report.append(Violation("unreachable", f"agent '{n}' is not reachable from any root"))

    degree_rules = {
        "synchronizer": ("in", 2),
        "multiplexer": ("out", 2),
        "dispatcher": ("out", 2),
        "filter": ("in", 1),
        "translator": ("in", 1),
        "adapter": ("in", 1),
    }
    for a in spec.agents:
        rule = degree_rules.get(a.kind)
        if rule is not None:
            direction, minimum = rule
            actual = in_deg[a.name] if direction == "in" else out_deg[a.name]
            if actual < minimum:
                report.append(Violation(
                    "degree",
                    f"{a.kind} '{a.name}' has {direction}-degree {actual}, requires >= {minimum}",
                ))
        if a.kind == "networker-send" and out_deg[a.name] != 0:
            report.append(Violation(
                "degree", f"networker-send '{a.name}' has out-degree {out_deg[a.name]}, must be 0"))
        if a.kind == "networker-receive" and in_deg[a.name] != 0:
            report.append(Violation(
                "degree", f"networker-receive '{a.name}' has in-degree {in_deg[a.name]}, must be 0"))

    report.extend(_validate_params(spec, by_name))
    return report


def _predicate_violations(pred, where: str, upstream: set[str]) -> list[Violation]:
    out: list[Violation] = []
    if not isinstance(pred, dict) or "kind" not in pred:
        return [Violation("bad-params", f"{where}: predicate must be an object with a 'kind'")]
    kind = pred.get("kind")
    if kind == "const":
        if not isinstance(pred.get("value"), bool):
            out.append(Violation("bad-params", f"{where}: const predicate needs a boolean 'value'"))
    elif kind in ("knowledge_exists", "payload_regex"):
        agent = pred.get("agent")
        fmt = pred.get("format")
        if not agent or not fmt:
            out.append(Violation("bad-params", f"{where}: predicate needs 'agent' and 'format'"))
        elif agent not in upstream:
            out.append(Violation("bad-params", f"{where}: predicate agent '{agent}' is not upstream"))
        if kind == "payload_regex":
            pattern = pred.get("pattern")
            if not isinstance(pattern, str):
                out.append(Violation("bad-params", f"{where}: payload_regex needs a string 'pattern'"))
            else:
                try:
                    re.compile(pattern)
                except re.error as e:
                    out.append(Violation("bad-params", f"{where}: bad pattern: {e}"))
    else:
        out.append(Violation("bad-params", f"{where}: unknown predicate kind '{kind}'"))
    if "negate" in pred and not isinstance(pred["negate"], bool):
        out.append(Violation("bad-params", f"{where}: negate must be boolean"))
    return out


def _validate_params(spec: CircuitSpec, by_name: dict[str, AgentSpec]) -> list[Violation]:
    report: list[Violation] = []
    # Transitive-upstream sets are needed for filter/dispatcher predicates and
    # adapter input refs; compute them once (ignores cycles gracefully).
    upstream_closure: dict[str, set[str]] = {n: set() for n in by_name}
    in_edges: dict[str, list[str]] = {n: [] for n in by_name}
    for e in spec.edges:
        if e.src in by_name and e.dst in by_name and e.src != e.dst:
            in_edges[e.dst].append(e.src)

    def upstream_of(name: str, seen: set[str]) -> set[str]:
        if name in seen:
            return set()
        seen.add(name)
        result = set()
        for u in in_edges[name]:
            result.add(u)
            result |= upstream_of(u, seen)
        return result

    for n in by_name:
        upstream_closure[n] = upstream_of(n, set())

    for a in spec.agents:
        where = f"agent '{a.name}'"
        ups = upstream_closure[a.name]
        has_receive_upstream = any(by_name[u].kind == "networker-receive" for u in ups)

        if a.kind == "filter":
            if "predicate" not in a.params:
                report.append(Violation("missing-params", f"{where}: filter requires params.predicate"))
            else:
                report.extend(_predicate_violations(a.params["predicate"], where, ups))
        elif a.kind == "dispatcher":
            rule = a.params.get("rule")
            if rule not in ("round_robin", "hash_by_doc_id", "by_predicate"):
                report.append(Violation("missing-params", f"{where}: dispatcher requires params.rule"))
            elif rule == "by_predicate":
                downs = set(spec.downstream_of(a.name))
                branches = a.params.get("branches")
                default = a.params.get("default")
                if not isinstance(branches, list) or not branches:
                    report.append(Violation("bad-params", f"{where}: by_predicate requires non-empty branches"))
                else:
                    for b in branches:
                        if not isinstance(b, dict) or "predicate" not in b or "target" not in b:
                            report.append(Violation("bad-params", f"{where}: each branch needs predicate and target"))
                            continue
                        if b["target"] not in downs:
                            report.append(Violation("bad-params", f"{where}: branch target '{b['target']}' is not a downstream edge"))
                        report.extend(_predicate_violations(b["predicate"], where, ups))
                if default is None:
                    report.append(Violation("bad-params", f"{where}: by_predicate requires a default target"))
                elif default not in downs:
                    report.append(Violation("bad-params", f"{where}: default target '{default}' is not a downstream edge"))
        elif a.kind == "synchronizer":
            mode = a.params.get("mode")
            if mode is not None and mode not in ("barrier", "union"):
                report.append(Violation("bad-params", f"{where}: sync mode must be 'barrier' or 'union'"))
        elif a.kind == "translator":
            if a.component is None:
                if a.params.get("mapping") is None:
                    report.append(Violation("missing-params", f"{where}: translator requires params.mapping or a component"))
                src = a.params.get("source")
                if not isinstance(src, dict) or "agent" not in src or "format" not in src:
                    report.append(Violation("missing-params", f"{where}: translator requires params.source {{agent, format}}"))
                elif src["agent"] not in ups and not has_receive_upstream:
                    report.append(Violation("bad-params", f"{where}: source agent '{src['agent']}' is not upstream"))
                if not a.params.get("output_format"):
                    report.append(Violation("missing-params", f"{where}: translator requires params.output_format"))
        elif a.kind in ("networker-send", "networker-receive"):
            transport = a.params.get("transport")
            if not isinstance(transport, dict) or transport.get("kind") not in ("dir", "tcp"):
                report.append(Violation("missing-params", f"{where}: requires params.transport with kind dir|tcp"))
            if a.kind == "networker-send":
                formats = a.params.get("formats", [])
                if not isinstance(formats, list):
                    report.append(Violation("bad-params", f"{where}: formats must be a list"))
                else:
                    for f in formats:
                        if not isinstance(f, dict) or "agent" not in f or "format" not in f:
                            report.append(Violation("bad-params", f"{where}: each shipped format needs agent and format"))
                        elif f["agent"] not in ups and f["agent"] != a.name and not has_receive_upstream:
                            report.append(Violation("bad-params", f"{where}: shipped agent '{f['agent']}' is not upstream"))

        if a.kind == "adapter" and a.component is not None:
            for (agent, _fmt) in a.component.input_refs():
                if agent not in ups and not has_receive_upstream:
                    report.append(Violation(
                        "unknown-input",
                        f"{where}: component input references '{agent}' which is not upstream"))
    return report


# -- graph queries ------------------------------------------------------------

def topo_order(spec: CircuitSpec) -> list[str]:
    """Topological order of agent names, ties broken lexicographically.

    Raises InvalidCircuit if the edge relation contains a cycle.
    """
    names = spec.agent_names()
    in_deg = {n: 0 for n in names}
    out_edges: dict[str, list[str]] = {n: [] for n in names}
    for e in spec.edges:
        if e.src in in_deg and e.dst in in_deg:
            out_edges[e.src].append(e.dst)
            in_deg[e.dst] += 1

    ready = [n for n in names if in_deg[n] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for nxt in out_edges[n]:
            in_deg[nxt] -= 1
            if in_deg[nxt] == 0:
                heapq.heappush(ready, nxt)
    if len(order) != len(names):
        raise InvalidCircuit(f"circuit '{spec.circuit_name}' contains a cycle")
    return order


def reachable_set(spec: CircuitSpec, from_agent: str) -> set[str]:
    """All agents reachable from from_agent via directed edges (excluding itself)."""
    if from_agent not in set(spec.agent_names()):
        raise UnknownAgent(from_agent)
    out_edges: dict[str, list[str]] = {}
    for e in spec.edges:
        out_edges.setdefault(e.src, []).append(e.dst)
    seen: set[str] = set()
    frontier = [from_agent]
    while frontier:
        cur = frontier.pop()
        for nxt in out_edges.get(cur, []):
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return seen


def sync_mode_for(spec: CircuitSpec, sync_name: str) -> str:
    """Effective merge mode for a synchronizer.

    Explicit params win. Otherwise barrier when the synchronizer closes a
    multiplexer diamond (two or more of its in-branches originate at one
    multiplexer), else union.
    """
    agent = spec.agent(sync_name)
    mode = agent.params.get("mode")
    if mode in ("barrier", "union"):
        return mode
    in_neighbors = spec.upstream_of(sync_name)
    for m in spec.agents:
        if m.kind != "multiplexer":
            continue
        reach = reachable_set(spec, m.name) | {m.name}
        if len([u for u in in_neighbors if u in reach]) >= 2:
            return "barrier"
    return "union"
