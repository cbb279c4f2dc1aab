"""Graphs, hypergraphs, factor graphs and tree/hypertree partitions.

Node ids are dense 0-based integers. Cluster ids follow input order.
Intra-cluster edge/factor sets are always derived from the clusters
(edge-maximality), never user-supplied.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field


class TopologyError(ValueError):
    pass


class NotAPartition(TopologyError):
    pass


class NonTreeCluster(TopologyError):
    def __init__(self, cluster_index, cycle_edge=None):
        self.cluster_index = cluster_index
        self.cycle_edge = cycle_edge
        msg = f"cluster {cluster_index} does not induce a tree"
        if cycle_edge is not None:
            msg += f" (cycle closed by edge {cycle_edge})"
        super().__init__(msg)


class DisconnectedQuery(TopologyError):
    pass


class InvalidParams(TopologyError):
    pass


class IncompatiblePartition(TopologyError):
    pass


class NonOverlapWarning(UserWarning):
    """Single-gateway condition violated; rate bookkeeping may be loose."""


def _normalize_edge(i, j):
    if i == j:
        raise TopologyError(f"self-loop at node {i}")
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes 0..m-1."""

    node_count: int
    edges: frozenset

    def __init__(self, node_count, edges):
        if node_count <= 0:
            raise TopologyError("node_count must be positive")
        norm = set()
        for (i, j) in edges:
            e = _normalize_edge(int(i), int(j))
            if not (0 <= e[0] < node_count and 0 <= e[1] < node_count):
                raise TopologyError(f"edge {e} out of range")
            norm.add(e)
        object.__setattr__(self, "node_count", int(node_count))
        object.__setattr__(self, "edges", frozenset(norm))

    @property
    def m(self):
        return self.node_count

    def neighbors(self, i):
        return self.adjacency()[i]

    def adjacency(self):
        adj = getattr(self, "_adj", None)
        if adj is None:
            adj = [set() for _ in range(self.m)]
            for (i, j) in self.edges:
                adj[i].add(j)
                adj[j].add(i)
            adj = [frozenset(s) for s in adj]
            object.__setattr__(self, "_adj", adj)
        return adj

    def bfs_dist(self, src):
        dist = [-1] * self.m
        dist[src] = 0
        q = deque([src])
        adj = self.adjacency()
        while q:
            u = q.popleft()
            for v in adj[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    q.append(v)
        return dist

    def is_connected(self):
        return all(d >= 0 for d in self.bfs_dist(0))

    def diameter(self):
        best = 0
        for s in range(self.m):
            d = self.bfs_dist(s)
            if any(x < 0 for x in d):
                raise DisconnectedQuery("diameter of a disconnected graph")
            best = max(best, max(d))
        return best

    def degree(self, i):
        return len(self.adjacency()[i])

    def subgraph_edges(self, nodes):
        ns = set(nodes)
        return {e for e in self.edges if e[0] in ns and e[1] in ns}


@dataclass(frozen=True)
class Hypergraph:
    """Hypergraph with hyperedges of size >= 2; |w|=2 is the pairwise case."""

    node_count: int
    hyperedges: tuple

    def __init__(self, node_count, hyperedges):
        if node_count <= 0:
            raise TopologyError("node_count must be positive")
        seen = set()
        norm = []
        for w in hyperedges:
            t = tuple(sorted(set(int(i) for i in w)))
            if len(t) < 2:
                raise TopologyError(f"hyperedge {w} has fewer than 2 nodes")
            if not all(0 <= i < node_count for i in t):
                raise TopologyError(f"hyperedge {t} out of range")
            if t in seen:
                raise TopologyError(f"duplicate hyperedge {t}")
            seen.add(t)
            norm.append(t)
        object.__setattr__(self, "node_count", int(node_count))
        object.__setattr__(self, "hyperedges", tuple(norm))

    @property
    def m(self):
        return self.node_count

    def is_pairwise(self):
        return all(len(w) == 2 for w in self.hyperedges)

    def to_graph(self):
        if not self.is_pairwise():
            raise TopologyError("hypergraph has hyperedges of size > 2")
        return Graph(self.m, set(self.hyperedges))

    def incident(self, i):
        return [w for w in self.hyperedges if i in w]

    def factor_graph(self):
        return FactorGraph(self)


class FactorGraph:
    """Bipartite incidence view of a hypergraph.

    Variable nodes are 0..m-1; factor nodes are hyperedge indices into
    ``hypergraph.hyperedges``. Incidence (i, w) exists iff i in w.
    """

    def __init__(self, hypergraph):
        self.hypergraph = hypergraph
        self.m = hypergraph.m
        self.factors = hypergraph.hyperedges
        self.var_adj = [[] for _ in range(self.m)]
        for a, w in enumerate(self.factors):
            for i in w:
                self.var_adj[i].append(a)

    @property
    def incidence_count(self):
        return sum(len(w) for w in self.factors)

    def components(self):
        """Connected components over variable and factor nodes."""
        comp = {}
        cid = 0
        for start in range(self.m):
            if ("v", start) in comp:
                continue
            comp[("v", start)] = cid
            q = deque([("v", start)])
            while q:
                kind, u = q.popleft()
                if kind == "v":
                    for a in self.var_adj[u]:
                        if ("f", a) not in comp:
                            comp[("f", a)] = cid
                            q.append(("f", a))
                else:
                    for i in self.factors[u]:
                        if ("v", i) not in comp:
                            comp[("v", i)] = cid
                            q.append(("v", i))
            cid += 1
        for a in range(len(self.factors)):
            if ("f", a) not in comp:  # unreachable only if factor empty
                comp[("f", a)] = cid
                cid += 1
        return comp, cid

    def is_acyclic(self):
        """Berge-acyclicity: bipartite edge count == node count - #components."""
        _, ncomp = self.components()
        nodes = self.m + len(self.factors)
        return self.incidence_count == nodes - ncomp

    def is_connected(self):
        _, ncomp = self.components()
        return ncomp == 1

    def bfs_dist(self, src_kind, src):
        """Distances from a variable ('v', i) or factor ('f', a) node."""
        dist = {(src_kind, src): 0}
        q = deque([(src_kind, src)])
        while q:
            kind, u = q.popleft()
            du = dist[(kind, u)]
            if kind == "v":
                nbrs = (("f", a) for a in self.var_adj[u])
            else:
                nbrs = (("v", i) for i in self.factors[u])
            for node in nbrs:
                if node not in dist:
                    dist[node] = du + 1
                    q.append(node)
        return dist

    def diameter(self):
        best = 0
        for i in range(self.m):
            d = self.bfs_dist("v", i)
            if len(d) < self.m + len(self.factors):
                raise DisconnectedQuery("diameter of a disconnected factor graph")
            best = max(best, max(d.values()))
        return best


def factor_distances(fg):
    """BFS distance tables on a factor graph.

    Returns (dist_f, d_vv, d_vf) where dist_f[(kind,u)][(kind,v)] is the
    bipartite hop count, d_vv[i][j] = dist_f/2 between variables and
    d_vf[i][a] = (dist_f - 1)/2 between variable i and factor a.
    Unreachable pairs are absent from the tables.
    """
    dist_f = {}
    d_vv = {}
    d_vf = {}
    for i in range(fg.m):
        table = fg.bfs_dist("v", i)
        dist_f[("v", i)] = table
        d_vv[i] = {}
        d_vf[i] = {}
        for (kind, u), val in table.items():
            if kind == "v":
                d_vv[i][u] = val // 2
            else:
                d_vf[i][u] = (val - 1) // 2 if val > 0 else 0
    return dist_f, d_vv, d_vf


def _tree_check(nodes, edges):
    """Return (is_tree, cycle_edge). Singletons are trees."""
    nodes = list(nodes)
    if len(edges) > len(nodes) - 1:
        # find an edge closing a cycle in a growing spanning forest
        parent = {u: u for u in nodes}

        def find(u):
            while parent[u] != u:
                parent[u] = parent[parent[u]]
                u = parent[u]
            return u

        for (a, b) in sorted(edges):
            ra, rb = find(a), find(b)
            if ra == rb:
                return False, (a, b)
            parent[ra] = rb
        return False, None
    if len(edges) < len(nodes) - 1:
        return False, None  # disconnected: a forest, not a single tree
    # |E| == |V|-1: tree iff connected
    adj = {u: [] for u in nodes}
    for (a, b) in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = {nodes[0]}
    q = deque([nodes[0]])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                q.append(v)
    return len(seen) == len(nodes), None


@dataclass
class TreePartition:
    """Tree-cluster partition of a graph with all derived quantities.

    Fields follow the validated construction in :func:`validate_tree_partition`;
    construct through that function rather than directly.
    """

    graph: Graph
    clusters: tuple                 # tuple of tuples of node ids
    intra_edges: tuple              # per-cluster frozenset of edges
    cluster_of: tuple               # node -> cluster index
    dist: tuple                     # per-cluster dict {(i, j): hop count}
    diameters: tuple                # D_r per cluster
    n_in: tuple                     # node -> frozenset of in-cluster neighbors
    n_out: tuple                    # node -> frozenset of out-of-cluster neighbors
    cluster_ext: tuple              # N_{C_r}: frozenset of external neighbor nodes
    leaves: tuple                   # B_r per cluster
    external_cover: frozenset       # J: cluster indices covering all ext neighborhoods
    nonoverlap_ok: bool
    nonoverlap_violations: tuple = field(default_factory=tuple)

    @property
    def p(self):
        return len(self.clusters)

    @property
    def max_diameter(self):
        return max(self.diameters) if self.diameters else 0

    def d(self, i, j):
        """Intra-cluster tree distance; i and j must share a cluster."""
        r = self.cluster_of[i]
        if self.cluster_of[j] != r:
            raise TopologyError(f"{i} and {j} are in different clusters")
        return self.dist[r][(i, j)]

    def gateway(self, r, k):
        """The boundary node(s) of cluster r adjacent to external node k."""
        return sorted(j for j in self.clusters[r] if k in self.graph.adjacency()[j])


def validate_tree_partition(graph, clusters, warn_nonoverlap=True):
    """Validate clusters and derive the full TreePartition.

    Raises NotAPartition / NonTreeCluster on structural failures; the
    single-gateway condition is only a warning (the surrogate machinery
    stays valid without it).
    """
    cl = [tuple(sorted(set(int(i) for i in c))) for c in clusters]
    covered = [c for c in cl for _ in c]
    flat = [i for c in cl for i in c]
    if len(flat) != len(set(flat)) or set(flat) != set(range(graph.m)):
        raise NotAPartition("clusters must be disjoint and cover all nodes")
    del covered

    cluster_of = [0] * graph.m
    for r, c in enumerate(cl):
        for i in c:
            cluster_of[i] = r

    intra = []
    for r, c in enumerate(cl):
        edges = graph.subgraph_edges(c)
        ok, cyc = _tree_check(c, edges)
        if not ok:
            raise NonTreeCluster(r, cyc)
        intra.append(frozenset(edges))

    adj = graph.adjacency()
    n_in = []
    n_out = []
    for i in range(graph.m):
        r = cluster_of[i]
        cset = set(cl[r])
        n_in.append(frozenset(adj[i] & cset))
        n_out.append(frozenset(adj[i] - cset))

    dist = []
    diameters = []
    leaves = []
    cluster_ext = []
    for r, c in enumerate(cl):
        local = {u: [] for u in c}
        for (a, b) in intra[r]:
            local[a].append(b)
            local[b].append(a)
        table = {}
        dmax = 0
        for s in c:
            dd = {s: 0}
            q = deque([s])
            while q:
                u = q.popleft()
                for v in local[u]:
                    if v not in dd:
                        dd[v] = dd[u] + 1
                        q.append(v)
            for t, val in dd.items():
                table[(s, t)] = val
                dmax = max(dmax, val)
        dist.append(table)
        diameters.append(dmax)
        leaves.append(tuple(i for i in c if len(n_in[i]) == 1))
        cluster_ext.append(frozenset().union(*[n_out[i] for i in c]) if c else frozenset())

    violations = []
    for r, c in enumerate(cl):
        for k in cluster_ext[r]:
            if len(adj[k] & set(c)) > 1:
                violations.append((k, r))
    nonoverlap_ok = not violations
    if violations and warn_nonoverlap:
        warnings.warn(
            f"external nodes touching a cluster at more than one gateway: {violations[:5]}",
            NonOverlapWarning,
            stacklevel=2,
        )

    part = TreePartition(
        graph=graph,
        clusters=tuple(cl),
        intra_edges=tuple(intra),
        cluster_of=tuple(cluster_of),
        dist=tuple(dist),
        diameters=tuple(diameters),
        n_in=tuple(n_in),
        n_out=tuple(n_out),
        cluster_ext=tuple(cluster_ext),
        leaves=tuple(leaves),
        external_cover=frozenset(),
        nonoverlap_ok=nonoverlap_ok,
        nonoverlap_violations=tuple(violations),
    )
    part.external_cover = minimal_external_cover(part)
    return part


def minimal_external_cover(partition):
    """Minimal cluster index set J whose clusters cover all external
    neighborhoods of non-singleton clusters.

    Clusters are disjoint, so each node of the union is covered by exactly
    one cluster and the minimal cover is unique (lowest-index tie-breaking
    is therefore vacuous).
    """
    universe = set()
    for r, c in enumerate(partition.clusters):
        if len(c) > 1:
            universe |= partition.cluster_ext[r]
    return frozenset(partition.cluster_of[k] for k in universe)


@dataclass
class HyperPartition:
    """Hypertree-cluster partition of a hypergraph (factor-graph view).

    ``factors`` may be a labeled list of (parent_id, support) pairs coming
    from a split; for plain hypergraphs parent_id equals the hyperedge index.
    """

    hypergraph: Hypergraph
    clusters: tuple
    cluster_of: tuple
    intra_factors: tuple        # per-cluster tuple of factor indices
    factor_cluster: tuple       # factor index -> cluster index or -1 (inter-cluster)
    n_in: tuple                 # node -> tuple of intra factor indices
    n_out: tuple                # node -> tuple of inter factor indices
    dist_vv: tuple              # per-cluster dict {(i, j): d(i,j)} (factor-graph /2)
    dist_vf: tuple              # per-cluster dict {(i, a): d(i, w)}
    diameters: tuple            # D_r = diam(F_r) per cluster (factor-graph hops)

    @property
    def p(self):
        return len(self.clusters)

    @property
    def max_delay(self):
        """Bound on delays: max_r diam(F_r)/2."""
        return max((d // 2 for d in self.diameters), default=0)

    def d(self, i, j):
        r = self.cluster_of[i]
        return self.dist_vv[r][(i, j)]


def validate_hyper_partition(hypergraph, clusters, intra_factors=None,
                             require_maximal=True):
    """Validate a hypertree partition.

    With ``intra_factors=None`` the intra sets are derived maximally
    (every factor fully inside a cluster is intra). Passing explicit
    per-cluster factor index lists disables maximality (the split-cluster
    case), but each chosen factor must still sit inside its cluster.
    Each induced factor graph must be acyclic (forest; singleton-style
    clusters with no factors are fine).
    """
    cl = [tuple(sorted(set(int(i) for i in c))) for c in clusters]
    flat = [i for c in cl for i in c]
    if len(flat) != len(set(flat)) or set(flat) != set(range(hypergraph.m)):
        raise NotAPartition("clusters must be disjoint and cover all nodes")
    cluster_of = [0] * hypergraph.m
    for r, c in enumerate(cl):
        for i in c:
            cluster_of[i] = r

    factors = hypergraph.hyperedges
    if intra_factors is None:
        intra = [[] for _ in cl]
        for a, w in enumerate(factors):
            rs = {cluster_of[i] for i in w}
            if len(rs) == 1:
                intra[next(iter(rs))].append(a)
    else:
        if len(intra_factors) != len(cl):
            raise IncompatiblePartition("one intra factor list per cluster required")
        intra = [sorted(set(int(a) for a in lst)) for lst in intra_factors]
        for r, lst in enumerate(intra):
            for a in lst:
                if not set(factors[a]) <= set(cl[r]):
                    raise IncompatiblePartition(
                        f"factor {a} not contained in cluster {r}")

    factor_cluster = [-1] * len(factors)
    for r, lst in enumerate(intra):
        for a in lst:
            if factor_cluster[a] != -1:
                raise IncompatiblePartition(f"factor {a} assigned to two clusters")
            factor_cluster[a] = r

    n_in = [[] for _ in range(hypergraph.m)]
    n_out = [[] for _ in range(hypergraph.m)]
    for a, w in enumerate(factors):
        for i in w:
            if factor_cluster[a] == cluster_of[i]:
                n_in[i].append(a)
            else:
                n_out[i].append(a)

    dist_vv = []
    dist_vf = []
    diameters = []
    for r, c in enumerate(cl):
        # acyclicity of the induced bipartite graph
        inc = sum(len(factors[a]) for a in intra[r])
        nodes = len(c) + len(intra[r])
        local_adj_v = {i: [a for a in n_in[i]] for i in c}
        comp = {}
        cid = 0
        for s in c:
            if s in comp:
                continue
            comp[s] = cid
            q = deque([("v", s)])
            while q:
                kind, u = q.popleft()
                if kind == "v":
                    for a in local_adj_v[u]:
                        if ("f", a) not in comp:
                            comp[("f", a)] = cid
                            q.append(("f", a))
                else:
                    for i in factors[u]:
                        if i not in comp:
                            comp[i] = cid
                            q.append(("v", i))
            cid += 1
        if inc != nodes - cid:
            raise NonTreeCluster(r)
        dvv = {}
        dvf = {}
        dmax = 0
        for s in c:
            dd = {("v", s): 0}
            q = deque([("v", s)])
            while q:
                kind, u = q.popleft()
                du = dd[(kind, u)]
                nbrs = ((("f", a) for a in local_adj_v[u]) if kind == "v"
                        else (("v", i) for i in factors[u]))
                for node in nbrs:
                    if node not in dd:
                        dd[node] = du + 1
                        q.append(node)
            for (kind, u), val in dd.items():
                dmax = max(dmax, val)
                if kind == "v":
                    dvv[(s, u)] = val // 2
                else:
                    dvf[(s, u)] = (val - 1) // 2 if val > 0 else 0
        dist_vv.append(dvv)
        dist_vf.append(dvf)
        diameters.append(dmax)

    return HyperPartition(
        hypergraph=hypergraph,
        clusters=tuple(cl),
        cluster_of=tuple(cluster_of),
        intra_factors=tuple(tuple(lst) for lst in intra),
        factor_cluster=tuple(factor_cluster),
        n_in=tuple(tuple(lst) for lst in n_in),
        n_out=tuple(tuple(lst) for lst in n_out),
        dist_vv=tuple(dist_vv),
        dist_vf=tuple(dist_vf),
        diameters=tuple(diameters),
    )


# ---------------------------------------------------------------------------
# deterministic topology / partition families


def generate_topology(kind, **params):
    """Deterministic test topologies.

    kinds: ring(m), grid2d(side), dumbbell(clique, path) /
    two_cliques_path(clique, path), hyper_ring(n_edges, edge_size).
    """
    if kind == "ring":
        m = int(params["m"])
        if m < 3:
            raise InvalidParams("ring needs m >= 3")
        return Graph(m, {(i, (i + 1) % m) for i in range(m)})
    if kind == "grid2d":
        s = int(params["side"])
        if s < 2:
            raise InvalidParams("grid2d needs side >= 2")
        edges = set()
        for r in range(s):
            for c in range(s):
                u = r * s + c
                if c + 1 < s:
                    edges.add((u, u + 1))
                if r + 1 < s:
                    edges.add((u, u + s))
        return Graph(s * s, edges)
    if kind in ("dumbbell", "two_cliques_path"):
        k = int(params.get("clique", 7))
        path = int(params["path"])
        if k < 2 or path < 1:
            raise InvalidParams("need clique >= 2 and path >= 1")
        # nodes: clique A = 0..k-1, path = k..k+path-1, clique B = k+path..k+path+k-1
        edges = set()
        for i in range(k):
            for j in range(i + 1, k):
                edges.add((i, j))
                edges.add((k + path + i, k + path + j))
        chain = [k - 1] + list(range(k, k + path)) + [k + path]
        for a, b in zip(chain, chain[1:]):
            edges.add(_normalize_edge(a, b))
        return Graph(2 * k + path, edges)
    if kind == "hyper_ring":
        ne = int(params["n_edges"])
        sz = int(params["edge_size"])
        if ne < 2 or sz < 2:
            raise InvalidParams("need n_edges >= 2 and edge_size >= 2")
        m = ne * (sz - 1)
        hyperedges = []
        for k in range(ne):
            start = k * (sz - 1)
            hyperedges.append(tuple((start + t) % m for t in range(sz)))
        return Hypergraph(m, hyperedges)
    raise InvalidParams(f"unknown topology kind {kind!r}")


def generate_partition(kind, graph, D=None, clusters=None):
    """Parametric partition families used throughout the benchmarks."""
    m = graph.m
    if kind == "all_singletons":
        return validate_tree_partition(graph, [[i] for i in range(m)])
    if kind == "whole_tree":
        return validate_tree_partition(graph, [list(range(m))])
    if kind == "ring_P1":
        if D is None or not (1 <= D <= m - 2):
            raise IncompatiblePartition("ring_P1 needs 1 <= D <= m-2")
        cl = [list(range(D + 1))] + [[i] for i in range(D + 1, m)]
        return validate_tree_partition(graph, cl)
    if kind == "ring_P2":
        if D is None or (m % (D + 1)) != 0:
            raise IncompatiblePartition("ring_P2 needs (D+1) | m")
        step = D + 1
        cl = [list(range(r * step, (r + 1) * step)) for r in range(m // step)]
        return validate_tree_partition(graph, cl)
    if kind == "grid_rows":
        s = int(round(m ** 0.5))
        if s * s != m:
            raise IncompatiblePartition("grid_rows needs a perfect square m")
        if D is None or not (1 <= D <= s - 1):
            raise IncompatiblePartition("grid_rows needs 1 <= D <= sqrt(m)-1")
        cl = [list(range(r * s, r * s + D + 1)) for r in range(s)]
        taken = {i for c in cl for i in c}
        cl += [[i] for i in range(m) if i not in taken]
        return validate_tree_partition(graph, cl)
    if kind == "custom":
        return validate_tree_partition(graph, clusters)
    raise IncompatiblePartition(f"unknown partition kind {kind!r}")


# ---------------------------------------------------------------------------
# text formats


def write_graph(g):
    """Text format: header 'm <int>', one line per (hyper)edge."""
    lines = [f"m {g.m}"]
    if isinstance(g, Graph):
        for (i, j) in sorted(g.edges):
            lines.append(f"{i} {j}")
    else:
        for w in g.hyperedges:
            lines.append(" ".join(str(i) for i in w))
    return "\n".join(lines) + "\n"


def read_graph(text):
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    head = lines[0].split()
    if head[0] != "m":
        raise TopologyError("expected header 'm <int>'")
    m = int(head[1])
    rows = [tuple(int(t) for t in ln.split()) for ln in lines[1:]]
    if all(len(r) == 2 for r in rows):
        return Graph(m, set(rows))
    return Hypergraph(m, rows)


def write_partition(partition):
    return "\n".join(" ".join(str(i) for i in c) for c in partition.clusters) + "\n"


def read_partition_clusters(text):
    return [[int(t) for t in ln.split()] for ln in text.strip().splitlines() if ln.strip()]
