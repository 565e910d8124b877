"""Heterogeneous graph representation, dataset I/O, and meta-path adjacency.

Dataset directory layout:
    graph.json            node types, relation triples, meta-path specs, target type
    nodes_<type>.tsv      one node id per line; target type may append TAB label
    edges_<relation>.tsv  src_id TAB dst_id
    features_<type>.bin   magic HGF1, u64 LE dims N d, then N*d float32 LE row-major
    features_<type>.csv   accepted alternative (comma-separated floats)

A meta-path is an ordered list of relation steps. A step is either a stored
relation name ("AP") or "~name" for its reverse ("~AP" walks paper->author
over the AP edge list). Consecutive steps must compose (dst type of step k
equals src type of step k+1) and both endpoints must be the target type.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FEATURES_MAGIC = b"HGF1"


class DatasetError(Exception):
    """Malformed dataset; message carries file (and line where applicable)."""


@dataclass(frozen=True)
class Relation:
    name: str
    src_type: str
    dst_type: str
    edges: np.ndarray  # (E, 2) int64 [src_index, dst_index]


@dataclass(frozen=True)
class MetaPathSpec:
    name: str
    relations: tuple  # relation steps, each "name" or "~name"


@dataclass(frozen=True)
class RelationSubgraph:
    src_type: str
    dst_type: str
    edges: np.ndarray  # (E, 2) int64


@dataclass
class HeteroGraph:
    node_types: list
    node_counts: dict
    relations: dict  # name -> Relation
    features: dict  # type -> (N_t, d_t) float32
    labels: np.ndarray | None  # per target node, -1 where unlabeled
    target_type: str
    metapaths: list  # of MetaPathSpec
    node_ids: dict | None = None  # type -> list of string ids, as loaded

    def resolve_step(self, step: str) -> RelationSubgraph:
        """Resolve one meta-path step, honoring the "~name" reverse spelling."""
        if step.startswith("~"):
            rel = self.relations.get(step[1:])
            if rel is None:
                raise KeyError(f"unknown relation '{step[1:]}' (from step '{step}')")
            return RelationSubgraph(rel.dst_type, rel.src_type, rel.edges[:, ::-1])
        rel = self.relations.get(step)
        if rel is None:
            raise KeyError(f"unknown relation '{step}'")
        return RelationSubgraph(rel.src_type, rel.dst_type, rel.edges)

    def step_types(self, spec: MetaPathSpec) -> list:
        """Node-type sequence along a meta-path, e.g. [author, paper, author]."""
        seq = []
        for k, step in enumerate(spec.relations):
            sub = self.resolve_step(step)
            if k == 0:
                seq.append(sub.src_type)
            elif seq[-1] != sub.src_type:
                raise ValueError(
                    f"meta-path '{spec.name}' does not compose: step {k} starts at "
                    f"'{sub.src_type}' but previous step ends at '{seq[-1]}'"
                )
            seq.append(sub.dst_type)
        return seq


@dataclass
class MetaPathGraph:
    """Adjacency over target nodes induced by one meta-path.

    Edges are kept both as a dense binary matrix and as an (E, 2) list in
    canonical order (destination-major, then source), which fixes the edge
    indexing that mask plans refer to.
    """

    spec: MetaPathSpec
    n_nodes: int
    adjacency: np.ndarray  # (N, N) bool
    edges: np.ndarray = field(init=False)
    out_degree: np.ndarray = field(init=False)
    in_degree: np.ndarray = field(init=False)

    def __post_init__(self):
        dst, src = np.nonzero(self.adjacency.T)
        self.edges = np.column_stack([src, dst]).astype(np.int64)
        self.out_degree = self.adjacency.sum(axis=1).astype(np.int64)
        self.in_degree = self.adjacency.sum(axis=0).astype(np.int64)

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def without_edges(self, edge_indices) -> "MetaPathGraph":
        """A copy with the given edge indices (into self.edges) removed."""
        keep = np.ones(self.n_edges, dtype=bool)
        keep[np.asarray(list(edge_indices), dtype=np.int64)] = False
        adj = np.zeros_like(self.adjacency)
        kept = self.edges[keep]
        adj[kept[:, 0], kept[:, 1]] = True
        return MetaPathGraph(self.spec, self.n_nodes, adj)


def build_metapath_adjacency(g: HeteroGraph, spec: MetaPathSpec, self_loops: bool = False) -> MetaPathGraph:
    """Binarized product of the step incidence matrices, diagonal zeroed
    unless self_loops."""
    counts = metapath_count_matrix(g, spec)
    adj = counts > 0
    if not self_loops:
        np.fill_diagonal(adj, False)
    return MetaPathGraph(spec, g.node_counts[g.target_type], adj)


def metapath_count_matrix(g: HeteroGraph, spec: MetaPathSpec) -> np.ndarray:
    """Path-multiplicity matrix (number of typed walks per node pair)."""
    seq = g.step_types(spec)
    if seq[0] != g.target_type or seq[-1] != g.target_type:
        raise ValueError(
            f"meta-path '{spec.name}' must start and end at target type "
            f"'{g.target_type}', got {seq[0]}..{seq[-1]}"
        )
    # float64 matmul hits BLAS; counts are exact integers well below 2^53
    acc = np.eye(g.node_counts[g.target_type], dtype=np.float64)
    for step in spec.relations:
        sub = g.resolve_step(step)
        inc = np.zeros((g.node_counts[sub.src_type], g.node_counts[sub.dst_type]), dtype=np.float64)
        inc[sub.edges[:, 0], sub.edges[:, 1]] = 1.0
        acc = acc @ inc
    return np.rint(acc).astype(np.int64)


def extract_relation_subgraph(g: HeteroGraph, relation_id: str) -> RelationSubgraph:
    try:
        return g.resolve_step(relation_id)
    except KeyError as exc:
        raise KeyError(f"unknown relation id '{relation_id}'") from exc


def validate(g: HeteroGraph) -> list:
    """Report violated invariants; empty list means the graph is consistent."""
    problems = []
    for name, rel in g.relations.items():
        for side, tname in (("src", rel.src_type), ("dst", rel.dst_type)):
            if tname not in g.node_counts:
                problems.append(f"relation '{name}': unknown {side} type '{tname}'")
                continue
            col = rel.edges[:, 0 if side == "src" else 1]
            if col.size and (col.min() < 0 or col.max() >= g.node_counts[tname]):
                problems.append(
                    f"relation '{name}': {side} index out of range for type "
                    f"'{tname}' (count {g.node_counts[tname]})"
                )
    for tname, feats in g.features.items():
        if feats.shape[0] != g.node_counts.get(tname, -1):
            problems.append(
                f"features for '{tname}': {feats.shape[0]} rows but "
                f"{g.node_counts.get(tname)} nodes"
            )
    if g.target_type not in g.node_counts:
        problems.append(f"target type '{g.target_type}' has no nodes")
    if g.labels is not None and g.target_type in g.node_counts:
        if g.labels.shape[0] != g.node_counts[g.target_type]:
            problems.append(
                f"labels: {g.labels.shape[0]} entries but "
                f"{g.node_counts[g.target_type]} target nodes"
            )
    for spec in g.metapaths:
        try:
            seq = g.step_types(spec)
        except (KeyError, ValueError) as exc:
            problems.append(f"meta-path '{spec.name}': {exc}")
            continue
        if seq[0] != g.target_type or seq[-1] != g.target_type:
            problems.append(
                f"meta-path '{spec.name}': endpoints {seq[0]}..{seq[-1]} are not "
                f"the target type '{g.target_type}'"
            )
    return problems


# ---------------------------------------------------------------------------
# dataset I/O


def _read_features_bin(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if data[:4] != FEATURES_MAGIC:
        raise DatasetError(f"{path}: bad magic {data[:4]!r}, expected {FEATURES_MAGIC!r}")
    n, d = struct.unpack("<QQ", data[4:20])
    need = 20 + n * d * 4
    if len(data) != need:
        raise DatasetError(f"{path}: expected {need} bytes for {n}x{d} floats, got {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=20).reshape(n, d).astype(np.float32)


def _read_features_csv(path: Path) -> np.ndarray:
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(v) for v in line.split(",")]
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DatasetError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            rows.append(row)
    return np.asarray(rows, dtype=np.float32).reshape(len(rows), width or 0)


def write_features_bin(path, feats: np.ndarray):
    feats = np.asarray(feats, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(FEATURES_MAGIC)
        fh.write(struct.pack("<QQ", feats.shape[0], feats.shape[1]))
        fh.write(np.ascontiguousarray(feats, dtype="<f4").tobytes())


def load_dataset(dataset_dir) -> HeteroGraph:
    """Load and fully validate a dataset directory; raises DatasetError."""
    root = Path(dataset_dir)
    cfg_path = root / "graph.json"
    if not cfg_path.exists():
        raise DatasetError(f"{cfg_path}: missing graph config file")
    try:
        cfg = json.loads(cfg_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{cfg_path}: invalid JSON ({exc})") from exc

    for key in ("node_types", "relations", "target_type", "metapaths"):
        if key not in cfg:
            raise DatasetError(f"{cfg_path}: missing key '{key}'")

    node_types = list(cfg["node_types"])
    target_type = cfg["target_type"]
    if target_type not in node_types:
        raise DatasetError(f"{cfg_path}: target_type '{target_type}' not in node_types")

    node_counts = {}
    ids = {}
    labels = None
    for tname in node_types:
        path = root / f"nodes_{tname}.tsv"
        if not path.exists():
            raise DatasetError(f"{path}: missing node file for type '{tname}'")
        id_map = {}
        type_labels = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                node_id = parts[0]
                if node_id in id_map:
                    raise DatasetError(f"{path}:{lineno}: duplicate node id '{node_id}'")
                id_map[node_id] = len(id_map)
                if len(parts) > 1 and parts[1] != "":
                    try:
                        type_labels.append(int(parts[1]))
                    except ValueError as exc:
                        raise DatasetError(f"{path}:{lineno}: bad label '{parts[1]}'") from exc
                else:
                    type_labels.append(-1)
        ids[tname] = id_map
        node_counts[tname] = len(id_map)
        if tname == target_type and any(v >= 0 for v in type_labels):
            labels = np.asarray(type_labels, dtype=np.int64)

    relations = {}
    for rel_cfg in cfg["relations"]:
        for key in ("name", "src", "dst"):
            if key not in rel_cfg:
                raise DatasetError(f"{cfg_path}: relation entry missing '{key}'")
        name, src_t, dst_t = rel_cfg["name"], rel_cfg["src"], rel_cfg["dst"]
        if src_t not in node_counts or dst_t not in node_counts:
            raise DatasetError(f"{cfg_path}: relation '{name}' references unknown node type")
        path = root / f"edges_{name}.tsv"
        if not path.exists():
            raise DatasetError(f"{path}: missing edge file for relation '{name}'")
        pairs = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise DatasetError(f"{path}:{lineno}: expected 'src<TAB>dst'")
                src_id, dst_id = parts
                if src_id not in ids[src_t]:
                    raise DatasetError(
                        f"{path}:{lineno}: unknown {src_t} id '{src_id}' "
                        f"({node_counts[src_t]} {src_t} nodes defined)"
                    )
                if dst_id not in ids[dst_t]:
                    raise DatasetError(
                        f"{path}:{lineno}: unknown {dst_t} id '{dst_id}' "
                        f"({node_counts[dst_t]} {dst_t} nodes defined)"
                    )
                pairs.append((ids[src_t][src_id], ids[dst_t][dst_id]))
        edges = np.asarray(pairs, dtype=np.int64).reshape(len(pairs), 2)
        relations[name] = Relation(name, src_t, dst_t, edges)

    features = {}
    for tname in node_types:
        bin_path = root / f"features_{tname}.bin"
        csv_path = root / f"features_{tname}.csv"
        if bin_path.exists():
            feats = _read_features_bin(bin_path)
            src = bin_path
        elif csv_path.exists():
            feats = _read_features_csv(csv_path)
            src = csv_path
        else:
            continue
        if feats.shape[0] != node_counts[tname]:
            raise DatasetError(
                f"{src}: {feats.shape[0]} feature rows but {node_counts[tname]} "
                f"'{tname}' nodes"
            )
        features[tname] = feats

    metapaths = []
    for mp_cfg in cfg["metapaths"]:
        if "name" not in mp_cfg or "relations" not in mp_cfg:
            raise DatasetError(f"{cfg_path}: metapath entry missing 'name' or 'relations'")
        metapaths.append(MetaPathSpec(mp_cfg["name"], tuple(mp_cfg["relations"])))

    g = HeteroGraph(
        node_types=node_types,
        node_counts=node_counts,
        relations=relations,
        features=features,
        labels=labels,
        target_type=target_type,
        metapaths=metapaths,
        node_ids={t: list(m) for t, m in ids.items()},
    )
    problems = validate(g)
    if problems:
        raise DatasetError(f"{cfg_path}: invalid dataset: " + "; ".join(problems))
    return g


def build_all_metapath_graphs(g: HeteroGraph, self_loops: bool = False) -> dict:
    return {spec.name: build_metapath_adjacency(g, spec, self_loops=self_loops) for spec in g.metapaths}
