import json

import numpy as np
import pytest

from hetmae import hetgraph


def write_dataset(
    root,
    node_types,
    relations,
    edges,
    target_type,
    metapaths,
    labels=None,
    features=None,
):
    """Write a dataset directory from plain dicts.

    node_types: {type: count}; relations: [(name, src, dst)];
    edges: {name: [(src_idx, dst_idx)]}; metapaths: [(name, [steps])];
    labels: list of ints for target nodes; features: {type: 2-D array}.
    """
    root.mkdir(parents=True, exist_ok=True)
    cfg = {
        "node_types": list(node_types),
        "relations": [{"name": n, "src": s, "dst": d} for n, s, d in relations],
        "target_type": target_type,
        "metapaths": [{"name": n, "relations": list(r)} for n, r in metapaths],
    }
    (root / "graph.json").write_text(json.dumps(cfg, indent=1, sort_keys=True))
    for tname, count in node_types.items():
        lines = []
        for i in range(count):
            if tname == target_type and labels is not None:
                lines.append(f"{i}\t{labels[i]}")
            else:
                lines.append(str(i))
        (root / f"nodes_{tname}.tsv").write_text("\n".join(lines) + ("\n" if lines else ""))
    for name, _, _ in relations:
        pairs = edges.get(name, [])
        text = "".join(f"{s}\t{d}\n" for s, d in pairs)
        (root / f"edges_{name}.tsv").write_text(text)
    for tname, feats in (features or {}).items():
        hetgraph.write_features_bin(root / f"features_{tname}.bin", np.asarray(feats))
    return root


@pytest.fixture
def toy_dataset(tmp_path):
    """2 authors, 2 papers, AP = {(0,0),(1,0),(1,1)}, meta-path APA."""
    return write_dataset(
        tmp_path / "toy",
        node_types={"author": 2, "paper": 2},
        relations=[("AP", "author", "paper")],
        edges={"AP": [(0, 0), (1, 0), (1, 1)]},
        target_type="author",
        metapaths=[("APA", ["AP", "~AP"])],
        labels=[0, 1],
        features={
            "author": [[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]],
            "paper": [[0.3, 0.7], [0.9, 0.1]],
        },
    )


def make_toy_hetero(rng, n_tar=10, n_paper=6, n_conf=3, d_tar=4, d_paper=3, d_conf=3):
    """Small two-meta-path academic graph with random features, for model tests."""
    ap = [(a, p) for a in range(n_tar) for p in range(n_paper) if rng.random() < 0.4]
    ac = [(a, c) for a in range(n_tar) for c in range(n_conf) if rng.random() < 0.5]
    # every author keeps at least one paper so the graph is not degenerate
    papers = {a for a, _ in ap}
    for a in range(n_tar):
        if a not in papers:
            ap.append((a, int(rng.integers(n_paper))))
    relations = {
        "AP": hetgraph.Relation("AP", "author", "paper", np.asarray(sorted(ap), dtype=np.int64)),
        "AC": hetgraph.Relation("AC", "author", "conf", np.asarray(sorted(ac), dtype=np.int64).reshape(len(ac), 2)),
    }
    g = hetgraph.HeteroGraph(
        node_types=["author", "paper", "conf"],
        node_counts={"author": n_tar, "paper": n_paper, "conf": n_conf},
        relations=relations,
        features={
            "author": rng.normal(size=(n_tar, d_tar)).astype(np.float32),
            "paper": rng.normal(size=(n_paper, d_paper)).astype(np.float32),
            "conf": rng.normal(size=(n_conf, d_conf)).astype(np.float32),
        },
        labels=np.asarray([i % 2 for i in range(n_tar)], dtype=np.int64),
        target_type="author",
        metapaths=[
            hetgraph.MetaPathSpec("APA", ("AP", "~AP")),
            hetgraph.MetaPathSpec("ACA", ("AC", "~AC")),
        ],
    )
    return g


def random_typed_graph(rng, n_types=3, max_nodes=12, edge_prob=0.25):
    """A random HeteroGraph over generic types t0..t(k-1) with chain relations."""
    names = [f"t{i}" for i in range(n_types)]
    counts = {n: int(rng.integers(2, max_nodes + 1)) for n in names}
    relations = {}
    for i in range(n_types - 1):
        a, b = names[i], names[i + 1]
        pairs = [
            (s, d)
            for s in range(counts[a])
            for d in range(counts[b])
            if rng.random() < edge_prob
        ]
        rel = f"R{i}"
        relations[rel] = hetgraph.Relation(
            rel, a, b, np.asarray(pairs, dtype=np.int64).reshape(len(pairs), 2)
        )
    return hetgraph.HeteroGraph(
        node_types=names,
        node_counts=counts,
        relations=relations,
        features={},
        labels=None,
        target_type=names[0],
        metapaths=[],
    )
