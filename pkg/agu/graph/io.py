"""
Text formats for graphs, masks and unlearning requests.

graph.tsv    header ``n d C``, n lines ``node_id<TAB>label<TAB>f1,...,fd``,
             a ``#edges`` line, then one ``u<TAB>v`` line per undirected edge.
masks.tsv    ``node_id<TAB>train|test`` per line.
request.tsv  ``node|edge|feature`` then one id or ``u<TAB>v`` per line.
"""
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from agu.graph.graph import Graph, RequestKind, UnlearnRequest, canonical_edge
from agu.utils.exceptions import GraphFormatError

logger = logging.getLogger(__name__)

GRAPH_FILE = "graph.tsv"
MASKS_FILE = "masks.tsv"
EDGES_MARKER = "#edges"


def _lines(path: Path) -> list[tuple[int, str]]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise GraphFormatError(f"cannot read file: {e}", path=str(path))
    return [(number, line.rstrip("\r")) for number, line in enumerate(text.split("\n"), start=1) if line.strip()]


def _parse_int(token: str, path: Path, line: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise GraphFormatError(f"{what} {token!r} is not an integer", path=str(path), line=line)


def read_graph(path: Path, masks_path: Optional[Path] = None) -> Graph:
    """
    Parse graph.tsv (and optionally masks.tsv) into a Graph.

    Raises:
        GraphFormatError: with the offending line number
    """
    path = Path(path)
    lines = _lines(path)
    if not lines:
        raise GraphFormatError("empty graph file", path=str(path))

    header_line, header = lines[0]
    parts = header.split()
    if len(parts) != 3:
        raise GraphFormatError("header must be 'n d C'", path=str(path), line=header_line)
    n, d, num_classes = (_parse_int(p, path, header_line, "header field") for p in parts)
    if n < 0 or d < 0 or num_classes < 1:
        raise GraphFormatError(f"header needs n >= 0, d >= 0 and C >= 1, got {n} {d} {num_classes}",
                               path=str(path), line=header_line)

    if len(lines) < n + 2 or lines[n + 1][1].strip() != EDGES_MARKER:
        marker_line = lines[n + 1][0] if len(lines) > n + 1 else lines[-1][0]
        raise GraphFormatError(f"expected {n} feature lines followed by '{EDGES_MARKER}'",
                               path=str(path), line=marker_line)

    features = np.zeros((n, d), dtype=np.float64)
    labels = np.zeros(n, dtype=np.int64)
    seen = set()
    for number, line in lines[1:n + 1]:
        fields = line.split("\t")
        if len(fields) != 3:
            raise GraphFormatError("feature line needs node_id, label and features", path=str(path), line=number)
        node = _parse_int(fields[0], path, number, "node id")
        if not 0 <= node < n:
            raise GraphFormatError(f"node id {node} out of range [0, {n})", path=str(path), line=number)
        if node in seen:
            raise GraphFormatError(f"node {node} listed twice", path=str(path), line=number)
        seen.add(node)
        label = _parse_int(fields[1], path, number, "label")
        if not 0 <= label < num_classes:
            raise GraphFormatError(f"label {label} out of range [0, {num_classes})", path=str(path), line=number)
        values = fields[2].split(",") if d else []
        if len(values) != d:
            raise GraphFormatError(f"expected {d} features, found {len(values)}", path=str(path), line=number)
        try:
            features[node] = [float(v) for v in values]
        except ValueError:
            raise GraphFormatError("feature value is not a number", path=str(path), line=number)
        labels[node] = label

    edges = []
    seen_edges = set()
    for number, line in lines[n + 2:]:
        fields = line.split("\t")
        if len(fields) != 2:
            raise GraphFormatError("edge line must be 'u<TAB>v'", path=str(path), line=number)
        u = _parse_int(fields[0], path, number, "node id")
        v = _parse_int(fields[1], path, number, "node id")
        if not (0 <= u < n and 0 <= v < n):
            raise GraphFormatError(f"edge ({u}, {v}) references a node outside [0, {n})",
                                   path=str(path), line=number)
        if u == v:
            raise GraphFormatError(f"self-loop on node {u}", path=str(path), line=number)
        edge = canonical_edge(u, v)
        if edge in seen_edges:
            raise GraphFormatError(f"duplicate edge ({u}, {v})", path=str(path), line=number)
        seen_edges.add(edge)
        edges.append(edge)

    train_mask = np.zeros(n, dtype=bool)
    test_mask = np.zeros(n, dtype=bool)
    if masks_path is not None:
        train_mask, test_mask = read_masks(Path(masks_path), n)

    graph = Graph.from_edges(n, edges, features=features, labels=labels, train_mask=train_mask,
                             test_mask=test_mask, num_classes=num_classes)
    logger.info(f"Loaded graph from {path}: {graph.n} nodes, {graph.num_edges} edges")
    return graph


def read_masks(path: Path, n: int) -> tuple[np.ndarray, np.ndarray]:
    train_mask = np.zeros(n, dtype=bool)
    test_mask = np.zeros(n, dtype=bool)
    seen = set()
    for number, line in _lines(path):
        fields = line.split("\t")
        if len(fields) != 2:
            raise GraphFormatError("mask line must be 'node_id<TAB>train|test'", path=str(path), line=number)
        node = _parse_int(fields[0], path, number, "node id")
        if not 0 <= node < n:
            raise GraphFormatError(f"node id {node} out of range [0, {n})", path=str(path), line=number)
        if node in seen:
            raise GraphFormatError(f"node {node} listed twice", path=str(path), line=number)
        seen.add(node)
        split = fields[1].strip()
        if split == "train":
            train_mask[node] = True
        elif split == "test":
            test_mask[node] = True
        else:
            raise GraphFormatError(f"unknown split {split!r}", path=str(path), line=number)
    return train_mask, test_mask


def read_request(path: Path) -> UnlearnRequest:
    """
    Parse request.tsv. Empty requests are rejected.
    """
    path = Path(path)
    lines = _lines(path)
    if not lines:
        raise GraphFormatError("empty request file", path=str(path))
    kind_line, kind_token = lines[0]
    try:
        kind = RequestKind(kind_token.strip())
    except ValueError:
        raise GraphFormatError(f"unknown request kind {kind_token.strip()!r}", path=str(path), line=kind_line)
    if len(lines) == 1:
        raise GraphFormatError("request removes nothing", path=str(path), line=kind_line)

    if kind is RequestKind.EDGE:
        pairs = set()
        for number, line in lines[1:]:
            fields = line.split("\t")
            if len(fields) != 2:
                raise GraphFormatError("edge line must be 'u<TAB>v'", path=str(path), line=number)
            edge = canonical_edge(_parse_int(fields[0], path, number, "node id"),
                                  _parse_int(fields[1], path, number, "node id"))
            if edge in pairs:
                raise GraphFormatError(f"duplicate edge {edge}", path=str(path), line=number)
            pairs.add(edge)
        return UnlearnRequest.edges(pairs)

    nodes = set()
    for number, line in lines[1:]:
        node = _parse_int(line.strip(), path, number, "node id")
        if node in nodes:
            raise GraphFormatError(f"node {node} listed twice", path=str(path), line=number)
        nodes.add(node)
    return UnlearnRequest(kind, node_ids=frozenset(nodes))


def write_graph(graph: Graph, path: Path) -> None:
    lines = [f"{graph.n} {graph.d} {graph.num_classes}"]
    for node in range(graph.n):
        values = ",".join(repr(float(x)) for x in graph.features[node])
        lines.append(f"{node}\t{int(graph.labels[node])}\t{values}")
    lines.append(EDGES_MARKER)
    lines.extend(f"{u}\t{v}" for u, v in graph.edges())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_masks(graph: Graph, path: Path) -> None:
    lines = []
    for node in range(graph.n):
        if graph.train_mask[node]:
            lines.append(f"{node}\ttrain")
        elif graph.test_mask[node]:
            lines.append(f"{node}\ttest")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_request(request: UnlearnRequest, path: Path) -> None:
    lines = [request.kind.value]
    if request.kind is RequestKind.EDGE:
        lines.extend(f"{u}\t{v}" for u, v in request.sorted_edges())
    else:
        lines.extend(str(v) for v in request.sorted_nodes())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_graph_dir(graph: Graph, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_graph(graph, directory / GRAPH_FILE)
    write_masks(graph, directory / MASKS_FILE)
    logger.info(f"Wrote {directory / GRAPH_FILE} and {directory / MASKS_FILE}")


def load_graph_dir(location: Path, masks_path: Optional[Path] = None) -> Graph:
    """
    Load a graph from a directory holding graph.tsv/masks.tsv, or from a graph.tsv path.
    """
    location = Path(location)
    graph_path = location / GRAPH_FILE if location.is_dir() else location
    if masks_path is None:
        candidate = graph_path.parent / MASKS_FILE
        masks_path = candidate if candidate.exists() else None
    if not graph_path.exists():
        raise GraphFormatError("graph file not found", path=str(graph_path))
    return read_graph(graph_path, masks_path)


__all__ = [
    "load_graph_dir",
    "read_graph",
    "read_masks",
    "read_request",
    "save_graph_dir",
    "write_graph",
    "write_masks",
    "write_request",
]
