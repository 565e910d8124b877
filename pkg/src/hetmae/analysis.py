"""Mask-policy structural analysis and synthetic benchmark generation.

The structural study counts weakly connected components of a meta-path graph
under each masking strategy across rates and seeds; the synthetic generator
writes desk-scale academic-style datasets (author/paper/conf) with planted
class structure, power-law degrees, and tunable meta-path homophily in the
standard dataset directory format.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import masking
from .hetgraph import MetaPathGraph


def count_components(mpg: MetaPathGraph) -> int:
    """Weakly connected components by union-find; isolated nodes count."""
    parent = np.arange(mpg.n_nodes)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:  # path compression
            parent[x], x = root, parent[x]
        return root

    for s, d in mpg.edges:
        rs, rd = find(int(s)), find(int(d))
        if rs != rd:
            parent[rs] = rd
    return int(sum(1 for i in range(mpg.n_nodes) if find(i) == i))


@dataclass
class ComponentRecord:
    strategy: str
    rate: float
    seed: int
    count: int


def mask_sweep(
    mpg: MetaPathGraph,
    strategies,
    rates,
    n_seeds: int,
    attention: np.ndarray | None = None,
    jobs: int = 1,
) -> list:
    """Component counts for every (strategy, rate, seed) cell.

    Rates must be ascending in [0, 1). The attention strategy uses the given
    per-edge coefficients; without them it falls back to random masking, the
    same rule the trainer applies before any encoder pass exists.
    """
    rates = [float(r) for r in rates]
    if any(not 0.0 <= r < 1.0 for r in rates):
        raise ValueError("rates must lie in [0, 1)")
    if sorted(rates) != rates:
        raise ValueError("rates must be ascending")
    for s in strategies:
        if s not in masking.STRATEGIES:
            raise ValueError(f"unknown strategy '{s}'")
    cells = [
        (si, ri, seed)
        for si in range(len(strategies))
        for ri in range(len(rates))
        for seed in range(n_seeds)
    ]

    def run_cell(cell):
        si, ri, seed = cell
        strategy, rate = strategies[si], rates[ri]
        rng = np.random.default_rng((seed, si, ri))
        att = None if attention is None else {mpg.spec.name: attention}
        plan = masking.plan_edge_masks({mpg.spec.name: mpg}, strategy, rate, rng,
                                       attention=att, seed=seed)
        count = count_components(masking.apply_mask(mpg, plan))
        return ComponentRecord(strategy=strategy, rate=rate, seed=seed, count=count)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run_cell, cells))
    return [run_cell(cell) for cell in cells]


def summarize_components(records: list) -> list:
    """(strategy, rate) -> mean and std of component counts across seeds."""
    keys = sorted({(r.strategy, r.rate) for r in records})
    rows = []
    for strategy, rate in keys:
        counts = np.asarray([r.count for r in records if (r.strategy, r.rate) == (strategy, rate)])
        rows.append(
            {"strategy": strategy, "rate": rate, "mean": float(counts.mean()), "std": float(counts.std())}
        )
    return rows


def write_components_csv(path, records: list):
    with open(path, "w") as fh:
        fh.write("strategy,rate,seed,count\n")
        for r in records:
            fh.write(f"{r.strategy},{r.rate:.4g},{r.seed},{r.count}\n")


def write_components_summary_csv(path, rows: list):
    with open(path, "w") as fh:
        fh.write("strategy,rate,mean,std\n")
        for r in rows:
            fh.write(f"{r['strategy']},{r['rate']:.4g},{r['mean']:.4f},{r['std']:.4f}\n")


# ---------------------------------------------------------------------------
# synthetic datasets


@dataclass
class SyntheticSpec:
    """Planted-structure generator settings for a desk-scale benchmark.

    Papers draw an author count from paper_size_probs (sizes 1, 2, ...) and
    fill the slots by preferential attachment over power-law author activity,
    giving the co-author meta-path graph hubs with low-degree satellites.
    Conference attendance is drawn per author with small power-law degrees.
    """

    seed: int = 0
    n_classes: int = 3
    node_counts: dict = field(
        default_factory=lambda: {"author": 500, "paper": 600, "conf": 40}
    )
    feature_dims: dict = field(
        default_factory=lambda: {"author": 16, "paper": 16, "conf": 8}
    )
    feature_noise: dict = field(
        default_factory=lambda: {"author": 1.3, "paper": 0.35, "conf": 0.3}
    )
    center_scale: float = 1.0
    degree_exponent: dict = field(default_factory=lambda: {"AP": 2.5, "AC": 2.8})
    max_degree: dict = field(default_factory=lambda: {"AP": 60, "AC": 4})
    paper_size_probs: list = field(default_factory=lambda: [0.15, 0.7, 0.15])
    homophily: float = 0.7

    def validate(self):
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if not 0.0 <= self.homophily <= 1.0:
            raise ValueError("homophily must lie in [0, 1]")
        for t in ("author", "paper", "conf"):
            if self.node_counts.get(t, 0) < self.n_classes:
                raise ValueError(f"need at least n_classes '{t}' nodes")
        if abs(sum(self.paper_size_probs) - 1.0) > 1e-9 or any(p < 0 for p in self.paper_size_probs):
            raise ValueError("paper_size_probs must be a probability vector")
        return self

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        raw = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**raw).validate()


def _balanced_classes(n, k, rng):
    base = np.arange(n) % k
    return base[rng.permutation(n)]


def _powerlaw_degrees(n, exponent, max_degree, rng):
    deg = rng.zipf(exponent, size=n)
    return np.clip(deg, 1, max_degree)


def gen_synthetic(spec: SyntheticSpec, out_dir) -> Path:
    """Write a dataset directory with planted classes; byte-deterministic."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    counts = spec.node_counts
    k = spec.n_classes
    classes = {t: _balanced_classes(counts[t], k, rng) for t in ("author", "paper", "conf")}

    edges = {}

    # papers: bipartite configuration model; author stubs follow a power law,
    # paper author counts follow paper_size_probs, stubs matched within the
    # paper's class with probability homophily
    author_deg = _powerlaw_degrees(
        counts["author"], spec.degree_exponent["AP"], spec.max_degree["AP"], rng
    ).astype(np.int64)
    class_pools = {}
    for c in range(k):
        members = np.flatnonzero(classes["author"] == c)
        stubs = np.repeat(members, author_deg[members])
        class_pools[c] = list(rng.permutation(stubs))
    global_pool = list(rng.permutation(np.repeat(np.arange(counts["author"]), author_deg)))
    remaining = author_deg.copy()

    def draw_author(pool):
        while pool:
            a = int(pool.pop())
            if remaining[a] > 0:
                remaining[a] -= 1
                return a
        return None

    sizes = rng.choice(
        np.arange(1, len(spec.paper_size_probs) + 1),
        size=counts["paper"],
        p=spec.paper_size_probs,
    )
    ap_pairs = set()
    for p in range(counts["paper"]):
        cls = classes["paper"][p]
        for _ in range(int(sizes[p])):
            same_class = rng.random() < spec.homophily
            author = draw_author(class_pools[cls] if same_class else global_pool)
            if author is None and not (same_class and spec.homophily >= 1.0):
                author = draw_author(global_pool if same_class else class_pools[cls])
            if author is not None:
                ap_pairs.add((author, p))
    edges["AP"] = sorted(ap_pairs)

    # conference attendance: per-author stubs, homophilous venue choice
    conf_pools = [np.flatnonzero(classes["conf"] == c) for c in range(k)]
    degrees = _powerlaw_degrees(
        counts["author"], spec.degree_exponent["AC"], min(spec.max_degree["AC"], counts["conf"]), rng
    )
    ac_pairs = set()
    for a in range(counts["author"]):
        cls = classes["author"][a]
        for _ in range(int(degrees[a])):
            if rng.random() < spec.homophily:
                pool = conf_pools[cls]
                target = int(pool[rng.integers(pool.size)])
            else:
                target = int(rng.integers(counts["conf"]))
            ac_pairs.add((a, target))
    edges["AC"] = sorted(ac_pairs)

    features = {}
    for t in ("author", "paper", "conf"):
        d = spec.feature_dims[t]
        centers = rng.normal(size=(k, d)) * spec.center_scale
        noise = rng.normal(size=(counts[t], d)) * spec.feature_noise[t]
        features[t] = (centers[classes[t]] + noise).astype(np.float32)

    cfg = {
        "node_types": ["author", "paper", "conf"],
        "relations": [
            {"name": "AP", "src": "author", "dst": "paper"},
            {"name": "AC", "src": "author", "dst": "conf"},
        ],
        "target_type": "author",
        "metapaths": [
            {"name": "APA", "relations": ["AP", "~AP"]},
            {"name": "ACA", "relations": ["AC", "~AC"]},
        ],
    }
    (out / "graph.json").write_text(json.dumps(cfg, indent=1, sort_keys=True))
    for t in ("author", "paper", "conf"):
        lines = []
        for i in range(counts[t]):
            if t == "author":
                lines.append(f"{i}\t{classes['author'][i]}")
            else:
                lines.append(str(i))
        (out / f"nodes_{t}.tsv").write_text("\n".join(lines) + "\n")
    for rel in ("AP", "AC"):
        (out / f"edges_{rel}.tsv").write_text(
            "".join(f"{s}\t{d}\n" for s, d in edges[rel])
        )
    from .hetgraph import write_features_bin

    for t in ("author", "paper", "conf"):
        write_features_bin(out / f"features_{t}.bin", features[t])
    return out


def default_benchmark_spec(seed: int = 0) -> SyntheticSpec:
    return SyntheticSpec(seed=seed)


def export_for_tsne(embeddings: np.ndarray, labels, path):
    """Label + coordinates TSV for external projection tools; -1 = unlabeled."""
    embeddings = np.asarray(embeddings)
    with open(path, "w") as fh:
        for i, row in enumerate(embeddings):
            label = -1 if labels is None else int(labels[i])
            fh.write(str(label) + "\t" + "\t".join(f"{v:.8g}" for v in row) + "\n")
