//! Relational retrieval: Random Walk with Restart from a target attached to
//! the database relation graph, top-K ranking and reference span selection.
//!
//! Node indices are 0-based. After augmentation the target is node `N`.

use serde::{Deserialize, Serialize};

use crate::data::{Snippet, TimeSeriesDB};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("node {node} out of range for {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("self-loop on node {0} in relation graph")]
    SelfLoop(usize),
    #[error("target has no relations")]
    EmptyRelations,
    #[error("damping factor {0} outside (0, 1)")]
    InvalidDamping(f64),
    #[error("random walk did not converge in {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("requested {k} references but only {available} candidates")]
    TooFewCandidates { k: usize, available: usize },
    #[error("reference window [{start}, {end}) outside recorded range [{db_start}, {db_end})")]
    OutOfRange { start: i64, end: i64, db_start: i64, db_end: i64 },
    #[error("invalid span policy: {0}")]
    InvalidPolicy(String),
}

/// Undirected, unweighted relation graph.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationGraph {
    adj: Vec<Vec<usize>>,
}

impl RelationGraph {
    /// Graph with `n` nodes and no edges.
    pub fn new(n: usize) -> Self {
        Self { adj: vec![Vec::new(); n] }
    }

    /// Repeated edges, in either orientation, are merged.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            for node in [a, b] {
                if node >= n {
                    return Err(GraphError::NodeOutOfRange { node, n });
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { adj })
    }

    pub fn ring(n: usize) -> Self {
        let edges: Vec<(usize, usize)> = match n {
            0 | 1 => vec![],
            2 => vec![(0, 1)],
            _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        };
        Self::from_edges(n, &edges).expect("ring edges are valid")
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.len()
    }

    /// Sorted neighbour list.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj.get(a).is_some_and(|l| l.binary_search(&b).is_ok())
    }

    /// Each edge once as `(a, b)` with `a < b`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(a, l)| l.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
    }

    pub fn n_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// The base graph plus a target node `N` linked to `relations`.
#[derive(Clone, Debug)]
pub struct AugmentedGraph<'g> {
    pub base: &'g RelationGraph,
    pub relations: Vec<usize>,
}

impl AugmentedGraph<'_> {
    pub fn n_total(&self) -> usize {
        self.base.n_nodes() + 1
    }

    pub fn target(&self) -> usize {
        self.base.n_nodes()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let t = self.target();
        match (a == t, b == t) {
            (true, true) => false,
            (true, false) => self.relations.binary_search(&b).is_ok(),
            (false, true) => self.relations.binary_search(&a).is_ok(),
            (false, false) => self.base.has_edge(a, b),
        }
    }
}

pub fn augment_adjacency<'g>(base: &'g RelationGraph, relations: &[usize]) -> Result<AugmentedGraph<'g>, GraphError> {
    if relations.is_empty() {
        return Err(GraphError::EmptyRelations);
    }
    let n = base.n_nodes();
    if let Some(&node) = relations.iter().find(|&&r| r >= n) {
        return Err(GraphError::NodeOutOfRange { node, n });
    }
    let mut relations = relations.to_vec();
    relations.sort_unstable();
    relations.dedup();
    Ok(AugmentedGraph { base, relations })
}

/// Column-stochastic transition matrix `Ã(i, j) = A(i, j) / deg(j)`, stored
/// by column. Isolated nodes get a self-loop.
#[derive(Clone, Debug)]
pub struct TransitionMatrix {
    cols: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

impl TransitionMatrix {
    fn from_columns(cols: Vec<Vec<usize>>) -> Self {
        let mut cols = cols;
        for (j, c) in cols.iter_mut().enumerate() {
            if c.is_empty() {
                c.push(j);
            }
        }
        let weights = cols.iter().map(|c| 1.0 / c.len() as f64).collect();
        Self { cols, weights }
    }

    pub fn from_graph(g: &RelationGraph) -> Self {
        Self::from_columns(g.adj.clone())
    }

    pub fn n(&self) -> usize {
        self.cols.len()
    }

    /// `y = Ã x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for ((col, &w), &xj) in self.cols.iter().zip(&self.weights).zip(x) {
            let share = w * xj;
            for &i in col {
                y[i] += share;
            }
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut out = vec![vec![0.0; n]; n];
        for (j, (col, &w)) in self.cols.iter().zip(&self.weights).enumerate() {
            for &i in col {
                out[i][j] += w;
            }
        }
        out
    }
}

pub fn normalize_adjacency(g: &AugmentedGraph) -> TransitionMatrix {
    let t = g.target();
    let mut cols: Vec<Vec<usize>> = g.base.adj.clone();
    for &r in &g.relations {
        cols[r].push(t);
    }
    cols.push(g.relations.clone());
    TransitionMatrix::from_columns(cols)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RwrParams {
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RwrParams {
    fn default() -> Self {
        Self { c: 0.9, tol: 1e-10, max_iter: 10_000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProximityVector {
    pub p: Vec<f64>,
    pub damping: f64,
    pub iterations: usize,
}

/// Power iteration `p <- c Ã p + (1 - c) e` from `p = e`, where `e` is the
/// one-hot vector at `restart`, until the max-norm change drops below `tol`.
pub fn rwr_solve(a: &TransitionMatrix, restart: usize, params: &RwrParams) -> Result<ProximityVector, GraphError> {
    let RwrParams { c, tol, max_iter } = *params;
    if !(c > 0.0 && c < 1.0) {
        return Err(GraphError::InvalidDamping(c));
    }
    let n = a.n();
    if restart >= n {
        return Err(GraphError::NodeOutOfRange { node: restart, n });
    }
    let mut p = vec![0.0; n];
    p[restart] = 1.0;
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        a.apply(&p, &mut next);
        residual = 0.0;
        for (i, (q, old)) in next.iter_mut().zip(&p).enumerate() {
            *q *= c;
            if i == restart {
                *q += 1.0 - c;
            }
            residual = f64::max(residual, (*q - old).abs());
        }
        std::mem::swap(&mut p, &mut next);
        if residual < tol {
            return Ok(ProximityVector { p, damping: c, iterations: it });
        }
    }
    Err(GraphError::NotConverged { iterations: max_iter, residual })
}

/// Indices of the `k` highest scores among `0..p.len() - 1` (the last entry
/// is the target itself) minus `exclude`; descending score, ties by index.
pub fn top_k_references(p: &[f64], k: usize, exclude: &[usize]) -> Result<Vec<usize>, GraphError> {
    let n = p.len().saturating_sub(1);
    let mut cand: Vec<usize> = (0..n).filter(|i| !exclude.contains(i)).collect();
    if k > cand.len() {
        return Err(GraphError::TooFewCandidates { k, available: cand.len() });
    }
    cand.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    cand.truncate(k);
    Ok(cand)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanMode {
    Imputation,
    ForecastingPeriodic,
    ForecastingHistoryOnly,
}

/// How far back (`delta_t` steps) a reference window sits from the target's.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanPolicy {
    pub mode: SpanMode,
    pub delta_t: usize,
}

impl SpanPolicy {
    pub fn imputation() -> Self {
        Self { mode: SpanMode::Imputation, delta_t: 0 }
    }

    pub fn forecasting_periodic(period: usize) -> Result<Self, GraphError> {
        if period == 0 {
            return Err(GraphError::InvalidPolicy("period must be positive".into()));
        }
        Ok(Self { mode: SpanMode::ForecastingPeriodic, delta_t: period })
    }

    /// The reference window ends where the target's observed prefix `tau` ends.
    pub fn forecasting_history_only(len: usize, tau: usize) -> Result<Self, GraphError> {
        if tau == 0 || tau >= len {
            return Err(GraphError::InvalidPolicy(format!("observed prefix {tau} of {len} steps")));
        }
        Ok(Self { mode: SpanMode::ForecastingHistoryOnly, delta_t: len - tau })
    }

    pub fn allows_self(&self) -> bool {
        self.delta_t > 0
    }
}

pub fn select_reference_span(
    db: &TimeSeriesDB,
    reference: usize,
    target_start: i64,
    len: usize,
    policy: &SpanPolicy,
) -> Result<Snippet, GraphError> {
    let start = target_start - policy.delta_t as i64;
    db.window(reference, start, len).map_err(|_| GraphError::OutOfRange {
        start,
        end: start + len as i64,
        db_start: db.start_time(),
        db_end: db.end_time(),
    })
}

/// Who is asking: relation set, nodes never to return, and the target window.
#[derive(Clone, Debug)]
pub struct RetrievalQuery {
    pub target_id: String,
    pub relations: Vec<usize>,
    pub exclude: Vec<usize>,
    pub start: i64,
    pub len: usize,
}

impl RetrievalQuery {
    /// A database series retrieving from the other series. With
    /// `include_self` its own history becomes a candidate too.
    pub fn for_series(db: &TimeSeriesDB, series: usize, start: i64, len: usize, include_self: bool) -> Self {
        let mut relations = db.graph().neighbors(series).to_vec();
        let exclude = if include_self {
            relations.push(series);
            vec![]
        } else {
            vec![series]
        };
        Self { target_id: db.series_ids()[series].clone(), relations, exclude, start, len }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RetrievedRef {
    pub series_id: String,
    pub score: f64,
    pub span_start: i64,
    #[serde(skip)]
    pub index: usize,
    #[serde(skip)]
    pub snippet: Snippet,
}

#[derive(Clone, Debug, Serialize)]
pub struct Retrieval {
    pub target_id: String,
    pub k: usize,
    pub c: f64,
    pub references: Vec<RetrievedRef>,
}

impl Retrieval {
    pub fn snippets(&self) -> Vec<Snippet> {
        self.references.iter().map(|r| r.snippet.clone()).collect()
    }
}

/// Ranked `(node, score)` pairs for a query, before span selection.
pub fn rank(
    graph: &RelationGraph,
    relations: &[usize],
    exclude: &[usize],
    k: usize,
    params: &RwrParams,
) -> Result<Vec<(usize, f64)>, GraphError> {
    let aug = augment_adjacency(graph, relations)?;
    let a = normalize_adjacency(&aug);
    let prox = rwr_solve(&a, aug.target(), params)?;
    let top = top_k_references(&prox.p, k, exclude)?;
    Ok(top.into_iter().map(|i| (i, prox.p[i])).collect())
}

/// augment -> normalize -> solve -> top-K -> span selection.
pub fn retrieve(
    db: &TimeSeriesDB,
    query: &RetrievalQuery,
    k: usize,
    policy: &SpanPolicy,
    params: &RwrParams,
) -> Result<Retrieval, GraphError> {
    let ranked = rank(db.graph(), &query.relations, &query.exclude, k, params)?;
    attach_spans(db, query, &ranked, policy, params.c)
}

pub fn attach_spans(
    db: &TimeSeriesDB,
    query: &RetrievalQuery,
    ranked: &[(usize, f64)],
    policy: &SpanPolicy,
    c: f64,
) -> Result<Retrieval, GraphError> {
    let references = ranked
        .iter()
        .map(|&(index, score)| {
            let snippet = select_reference_span(db, index, query.start, query.len, policy)?;
            Ok(RetrievedRef {
                series_id: db.series_ids()[index].clone(),
                score,
                span_start: snippet.start,
                index,
                snippet,
            })
        })
        .collect::<Result<Vec<_>, GraphError>>()?;
    Ok(Retrieval { target_id: query.target_id.clone(), k: ranked.len(), c, references })
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::data::DatasetMeta;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `(1 - c)(I - cÃ)^{-1} e` by dense LU.
    fn dense_rwr(a: &TransitionMatrix, restart: usize, c: f64) -> Vec<f64> {
        let n = a.n();
        let dense = a.to_dense();
        let m = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - c * dense[i][j]);
        let mut e = DVector::zeros(n);
        e[restart] = 1.0 - c;
        m.lu().solve(&e).expect("I - cÃ is nonsingular").iter().copied().collect()
    }

    fn random_graph(n: usize, density: f64, rng: &mut ChaCha8Rng) -> RelationGraph {
        let mut edges = vec![];
        for a in 0..n {
            for b in a + 1..n {
                if rng.random_bool(density) {
                    edges.push((a, b));
                }
            }
        }
        RelationGraph::from_edges(n, &edges).unwrap()
    }

    fn db_for(graph: RelationGraph, tp: usize) -> TimeSeriesDB {
        let n = graph.n_nodes();
        let meta = DatasetMeta { n, t_prime: tp, v: 1, start_time: 0, step_unit: "hour".into(), period: 4 };
        let values = (0..n * tp).map(|i| i as f64).collect();
        TimeSeriesDB::new(meta, (0..n).map(|i| format!("s{i}")).collect(), values, graph).unwrap()
    }

    #[test]
    fn augment_examples() {
        let g = RelationGraph::from_edges(2, &[(0, 1)]).unwrap();
        let aug = augment_adjacency(&g, &[0]).unwrap();
        assert_eq!(aug.n_total(), 3);
        assert!(aug.has_edge(0, 1) && aug.has_edge(0, 2) && aug.has_edge(2, 0));
        assert!(!aug.has_edge(1, 2));
        let aug = augment_adjacency(&g, &[0, 1]).unwrap();
        assert!(aug.has_edge(2, 0) && aug.has_edge(2, 1));
        assert_eq!(augment_adjacency(&g, &[]).unwrap_err(), GraphError::EmptyRelations);
        assert!(augment_adjacency(&g, &[2]).is_err());
    }

    #[test]
    fn normalization_examples() {
        let g = RelationGraph::from_edges(2, &[(0, 1)]).unwrap();
        assert_eq!(TransitionMatrix::from_graph(&g).to_dense(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);

        let g = RelationGraph::from_edges(3, &[(0, 1)]).unwrap();
        let d = TransitionMatrix::from_graph(&g).to_dense();
        assert_eq!((d[0][2], d[1][2], d[2][2]), (0.0, 0.0, 1.0));

        let star = RelationGraph::from_edges(5, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let aug = augment_adjacency(&star, &[0]).unwrap();
        let d = normalize_adjacency(&aug).to_dense();
        for j in 0..6 {
            let sum: f64 = (0..6).map(|i| d[i][j]).sum();
            assert!((sum - 1.0).abs() < 1e-15);
            for i in 0..6 {
                let expected = if aug.has_edge(i, j) {
                    let deg = (0..6).filter(|&x| aug.has_edge(x, j)).count();
                    1.0 / deg as f64
                } else if i == j && (0..6).all(|x| !aug.has_edge(x, j)) {
                    1.0
                } else {
                    0.0
                };
                assert_eq!(d[i][j], expected, "({i}, {j})");
            }
        }
    }

    #[test]
    fn two_cycle_closed_form() {
        let g = RelationGraph::from_edges(2, &[(0, 1)]).unwrap();
        let p = rwr_solve(&TransitionMatrix::from_graph(&g), 1, &RwrParams::default()).unwrap();
        // solve [[1, -0.9], [-0.9, 1]] p = [0, 0.1] by hand
        let det = 1.0 - 0.81;
        let expected = [0.9 * 0.1 / det, 0.1 / det];
        assert!((p.p[0] - expected[0]).abs() < 1e-9);
        assert!((p.p[1] - expected[1]).abs() < 1e-9);
        assert!((p.p[0] - 0.473684).abs() < 1e-6);
    }

    #[test]
    fn single_node_fixed_point() {
        let p = rwr_solve(&TransitionMatrix::from_graph(&RelationGraph::new(1)), 0, &RwrParams::default()).unwrap();
        assert!((p.p[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_graph_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = random_graph(10, 0.3, &mut rng);
        let a = TransitionMatrix::from_graph(&g);
        let p = rwr_solve(&a, 3, &RwrParams::default()).unwrap();
        let oracle = dense_rwr(&a, 3, 0.9);
        let diff = p.p.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn bad_parameters() {
        let a = TransitionMatrix::from_graph(&RelationGraph::ring(4));
        assert!(matches!(rwr_solve(&a, 0, &RwrParams { c: 1.0, ..Default::default() }), Err(GraphError::InvalidDamping(_))));
        let tight = RwrParams { max_iter: 3, ..Default::default() };
        assert!(matches!(rwr_solve(&a, 0, &tight), Err(GraphError::NotConverged { .. })));
    }

    #[test]
    fn top_k_examples() {
        // trailing entry plays the target
        assert_eq!(top_k_references(&[0.3, 0.5, 0.2, 0.0], 1, &[]).unwrap(), vec![1]);
        assert_eq!(top_k_references(&[0.4, 0.4, 0.2], 2, &[]).unwrap(), vec![0, 1]);
        assert_eq!(
            top_k_references(&[0.3, 0.5, 0.2, 0.0], 5, &[]).unwrap_err(),
            GraphError::TooFewCandidates { k: 5, available: 3 }
        );
        assert_eq!(top_k_references(&[0.3, 0.5, 0.2, 0.9], 1, &[1]).unwrap(), vec![0]);
    }

    #[test]
    fn span_examples() {
        let db = db_for(RelationGraph::ring(3), 400);
        let weekly = SpanPolicy::forecasting_periodic(168).unwrap();
        assert_eq!(select_reference_span(&db, 1, 200, 24, &weekly).unwrap().start, 32);
        assert_eq!(select_reference_span(&db, 1, 200, 24, &SpanPolicy::imputation()).unwrap().start, 200);
        assert!(matches!(select_reference_span(&db, 1, 0, 24, &weekly), Err(GraphError::OutOfRange { .. })));
        let hist = SpanPolicy::forecasting_history_only(24, 6).unwrap();
        let s = select_reference_span(&db, 1, 200, 24, &hist).unwrap();
        assert_eq!(s.end(), 206);
    }

    #[test]
    fn retrieve_forced_choice() {
        let db = db_for(RelationGraph::from_edges(3, &[(0, 1)]).unwrap(), 8);
        let q = RetrievalQuery { target_id: "new".into(), relations: vec![1], exclude: vec![], start: 2, len: 4 };
        let r = retrieve(&db, &q, 1, &SpanPolicy::imputation(), &RwrParams::default()).unwrap();
        assert_eq!(r.references[0].series_id, "s1");
        assert_eq!(r.references[0].snippet, db.window(1, 2, 4).unwrap());
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["references"][0]["span_start"], 2);
        assert_eq!(json["c"], 0.9);
    }

    #[test]
    fn self_history_ranks_first() {
        let db = db_for(RelationGraph::ring(12), 48);
        for s in 0..12 {
            let q = RetrievalQuery::for_series(&db, s, 24, 8, true);
            let policy = SpanPolicy::forecasting_periodic(4).unwrap();
            let r = retrieve(&db, &q, 3, &policy, &RwrParams::default()).unwrap();
            assert_eq!(r.references[0].index, s);
            assert_eq!(r.references[0].span_start, 20);
        }
        let q = RetrievalQuery::for_series(&db, 5, 24, 8, false);
        let r = retrieve(&db, &q, 3, &SpanPolicy::imputation(), &RwrParams::default()).unwrap();
        assert!(r.references.iter().all(|x| x.index != 5));
    }

    #[test]
    fn top_k_matches_dense_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let g = random_graph(20, 0.2, &mut rng);
        let rel = [2, 7, 11];
        let aug = augment_adjacency(&g, &rel).unwrap();
        let oracle = dense_rwr(&normalize_adjacency(&aug), 20, 0.9);
        let mut brute: Vec<usize> = (0..20).collect();
        brute.sort_by(|&a, &b| oracle[b].partial_cmp(&oracle[a]).unwrap().then(a.cmp(&b)));
        let got: Vec<usize> = rank(&g, &rel, &[], 5, &RwrParams::default()).unwrap().into_iter().map(|x| x.0).collect();
        assert_eq!(got, brute[..5].to_vec());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn iterative_matches_closed_form(seed in any::<u64>(), n in 1usize..50, density in 0.0f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(n, density, &mut rng);
            let rel: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.2)).collect();
            let rel = if rel.is_empty() { vec![rng.random_range(0..n)] } else { rel };
            let aug = augment_adjacency(&g, &rel).unwrap();
            let a = normalize_adjacency(&aug);
            let p = rwr_solve(&a, n, &RwrParams::default()).unwrap();
            let oracle = dense_rwr(&a, n, 0.9);
            for (x, y) in p.p.iter().zip(&oracle) {
                prop_assert!((x - y).abs() < 1e-8);
                prop_assert!(*x >= 0.0);
            }
            prop_assert!((p.p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn restart_dominates_at_small_damping(seed in any::<u64>(), n in 2usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(n, 0.3, &mut rng);
            let a = TransitionMatrix::from_graph(&g);
            let restart = rng.random_range(0..n);
            let p = rwr_solve(&a, restart, &RwrParams { c: 1e-6, ..Default::default() }).unwrap();
            for (i, x) in p.p.iter().enumerate() {
                let e = if i == restart { 1.0 } else { 0.0 };
                prop_assert!((x - e).abs() < 1e-6);
            }
        }

        #[test]
        fn top_k_scale_invariant(p in proptest::collection::vec(0.0f64..1.0, 2..40), scale in 1e-3f64..1e3, k in 1usize..5) {
            let k = k.min(p.len() - 1);
            let scaled: Vec<f64> = p.iter().map(|x| x * scale).collect();
            prop_assert_eq!(top_k_references(&p, k, &[]).unwrap(), top_k_references(&scaled, k, &[]).unwrap());
        }

        #[test]
        fn history_only_never_sees_future(len in 2usize..24, tau_frac in 0.05f64..0.95, start in 30i64..60) {
            let tau = ((len as f64 * tau_frac) as usize).clamp(1, len - 1);
            let db = db_for(RelationGraph::ring(4), 100);
            let policy = SpanPolicy::forecasting_history_only(len, tau).unwrap();
            let q = RetrievalQuery::for_series(&db, 0, start, len, true);
            let r = retrieve(&db, &q, 3, &policy, &RwrParams::default()).unwrap();
            for x in &r.references {
                prop_assert!(x.snippet.end() <= start + tau as i64);
            }
        }
    }
}
