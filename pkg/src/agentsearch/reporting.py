"""Run persistence, tree export, and leaderboards.

The state file is a versioned, checksummed JSON document, gzip-compressed
with a zeroed timestamp so identical runs produce byte-identical artifacts.
Candidate sources live inline in the document: one file reproduces every
report.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import io
import json
import os
import tempfile

from .core import RunState, SearchTree
from .errors import LedgerVersionError, PersistenceError

FORMAT_NAME = "agentsearch-ledger"
FORMAT_VERSION = 1
STATE_SUFFIX = ".agentsearch.json.gz"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def save_state(state: RunState, path: str) -> None:
    """Atomically write the run ledger; a crash mid-write leaves the old file."""
    payload = state.to_dict()
    body = canonical_json(payload)
    document = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "checksum": hashlib.sha256(body.encode("utf-8")).hexdigest(),
        "payload": payload,
    }
    raw = canonical_json(document).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd = None
    tmp_path = None
    try:
        fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".ledger-", suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fd = None
            with gzip.GzipFile(filename="", mode="wb", fileobj=fh, mtime=0) as gz:
                gz.write(raw)
        os.replace(tmp_path, path)
        tmp_path = None
    except OSError as exc:
        raise PersistenceError(f"cannot write state file {path}: {exc}") from exc
    finally:
        if tmp_path is not None:
            try:
                os.unlink(tmp_path)
            except OSError:
                pass


def load_state(path: str) -> RunState:
    """Load and verify a run ledger written by save_state."""
    try:
        with gzip.open(path, "rb") as fh:
            raw = fh.read()
    except (OSError, EOFError, gzip.BadGzipFile) as exc:
        raise PersistenceError(f"cannot read state file {path}: {exc}") from exc
    try:
        document = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise PersistenceError(f"state file {path} is not UTF-8: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise PersistenceError(
            f"state file {path} is corrupt: {exc.msg} at byte {exc.pos}"
        ) from exc
    if not isinstance(document, dict) or document.get("format") != FORMAT_NAME:
        raise PersistenceError(f"state file {path} is not a {FORMAT_NAME} document")
    version = document.get("version")
    if version != FORMAT_VERSION:
        raise LedgerVersionError(
            f"state file {path} has unsupported version {version!r} "
            f"(this build reads version {FORMAT_VERSION})"
        )
    payload = document.get("payload")
    expected = document.get("checksum")
    actual = hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()
    if actual != expected:
        raise PersistenceError(
            f"state file {path} failed its integrity check "
            f"(stored {expected!r}, computed {actual!r})"
        )
    try:
        return RunState.from_dict(payload)
    except Exception as exc:
        raise PersistenceError(f"state file {path} has a malformed payload: {exc}") from exc


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


def export_tree(tree: SearchTree, format: str = "dot") -> str:
    """Render the search tree as a dot graph or a JSON node/edge document.

    Every node appears with its id, label, depth, status, and statistics;
    the best feasible node is highlighted exactly once; first-layer order
    follows root creation order.
    """
    if format == "dot":
        return _export_dot(tree)
    if format in ("json", "json_graph"):
        return _export_json(tree)
    raise PersistenceError(f"unknown tree export format {format!r}")


def _node_caption(node) -> str:
    if node.feasible:
        stats = f"Q={node.value:.4f}, N={node.visit_count}, P={node.prior:.3f}"
    else:
        stats = f"{node.status}, P={node.prior:.3f}"
    return f"{node.id}: {node.label}\n{stats}"


def _export_dot(tree: SearchTree) -> str:
    best_id = tree.best_feasible().id if tree.archive else None
    lines = [
        "digraph search_tree {",
        "  rankdir=TB;",
        '  node [shape=ellipse, fontname="Helvetica"];',
        '  super_root [shape=box, label="super-root"];',
    ]
    ordered = list(tree.root_ids) + [
        nid for nid in sorted(tree.nodes) if nid not in set(tree.root_ids)
    ]
    for node_id in ordered:
        node = tree.nodes[node_id]
        attrs = [f'label="{_dot_escape(_node_caption(node))}"']
        if not node.feasible:
            attrs.append("style=dashed")
            attrs.append("color=gray50")
            attrs.append("fontcolor=gray50")
        if best_id is not None and node.id == best_id:
            attrs.append("penwidth=3")
            attrs.append("color=darkorange")
        lines.append(f"  n{node.id} [{', '.join(attrs)}];")
    for root_id in tree.root_ids:
        lines.append(f"  super_root -> n{root_id};")
    for node_id in ordered:
        for child_id in tree.nodes[node_id].children:
            lines.append(f"  n{node_id} -> n{child_id};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _export_json(tree: SearchTree) -> str:
    best_id = tree.best_feasible().id if tree.archive else None
    nodes = [{"id": "super_root", "label": "super-root", "depth": 0, "status": "virtual"}]
    edges = []
    ordered = list(tree.root_ids) + [
        nid for nid in sorted(tree.nodes) if nid not in set(tree.root_ids)
    ]
    for node_id in ordered:
        node = tree.nodes[node_id]
        nodes.append(
            {
                "id": node.id,
                "label": node.label,
                "depth": node.depth,
                "status": node.status,
                "q": node.value if node.feasible else None,
                "n": node.visit_count,
                "prior": node.prior,
                "best": node.id == best_id,
            }
        )
    for root_id in tree.root_ids:
        edges.append(["super_root", root_id])
    for node_id in ordered:
        for child_id in tree.nodes[node_id].children:
            edges.append([node_id, child_id])
    return json.dumps({"nodes": nodes, "edges": edges, "best": best_id}, indent=2) + "\n"


_TYPE_BY_ORIGIN = {"crossover": "Crossover", "mutation": "Mutation"}

LEADERBOARD_COLUMNS = (
    "rank",
    "generation",
    "node_value",
    "gini",
    "spearman",
    "rmse",
    "error_rate",
    "type",
    "method",
)


def leaderboard(state: RunState, top_n: int) -> list[dict]:
    """Top feasible candidates by node value (fitness, else tree reward)."""
    if top_n < 1:
        raise PersistenceError(f"top_n must be >= 1, got {top_n}")
    if state.evolution is not None and state.evolution.nodes:
        pool = [n for n in state.evolution.nodes.values() if n.feasible]
    elif state.tree is not None:
        pool = [state.tree.nodes[i] for i in state.tree.archive]
    else:
        pool = []

    def value_of(node):
        return node.fitness if node.fitness is not None else node.value

    pool.sort(key=lambda n: (-value_of(n), n.id))
    rows = []
    for rank, node in enumerate(pool[:top_n], start=1):
        rows.append(
            {
                "rank": rank,
                "generation": f"gen_{node.generation or 0}",
                "node_value": value_of(node),
                "gini": node.metrics.norm_gini,
                "spearman": node.metrics.spearman,
                "rmse": node.metrics.rmse,
                "error_rate": node.metrics.er,
                "type": _TYPE_BY_ORIGIN.get(node.origin, "Init"),
                "method": node.label,
                "id": node.id,
            }
        )
    return rows


_TEXT_HEADERS = {
    "rank": "Rank",
    "generation": "Gen",
    "node_value": "NodeValue",
    "gini": "Gini",
    "spearman": "Spearman",
    "rmse": "RMSE",
    "error_rate": "ErrorRate",
    "type": "Type",
    "method": "Method",
}

_TEXT_FORMATS = {
    "node_value": "{:.6f}",
    "gini": "{:.4f}",
    "spearman": "{:.4f}",
    "rmse": "{:.2f}",
    "error_rate": "{:.4f}",
}


def render_leaderboard_text(rows: list[dict]) -> str:
    cells = [[_TEXT_HEADERS[c] for c in LEADERBOARD_COLUMNS]]
    for row in rows:
        rendered = []
        for column in LEADERBOARD_COLUMNS:
            value = row[column]
            fmt = _TEXT_FORMATS.get(column)
            rendered.append(fmt.format(value) if fmt else str(value))
        cells.append(rendered)
    widths = [max(len(line[i]) for line in cells) for i in range(len(LEADERBOARD_COLUMNS))]
    lines = []
    for line in cells:
        lines.append("  ".join(text.ljust(width) for text, width in zip(line, widths)).rstrip())
    return "\n".join(lines) + "\n"


def render_leaderboard_csv(rows: list[dict]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(LEADERBOARD_COLUMNS)
    for row in rows:
        writer.writerow([row[c] for c in LEADERBOARD_COLUMNS])
    return buffer.getvalue()
