//! Stochastic block model: graph generation, belief propagation with side
//! information, anchor-aligned local belief propagation for the vanilla
//! model, and permutation-minimized accuracy.

use std::fmt;
use std::str::FromStr;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bp::{iterate, BpParams, OffspringDist};
use crate::channels::{make_channel, permutations, Channel, ChannelSpec};
use crate::error::{invalid, Error, Result};
use crate::linalg::symmetric_eigenvalues;
use crate::rng;
use crate::simplex::PottsParams;
use crate::treesim::Observation;

/// Marks a vertex that an initializer left unlabeled.
pub const UNLABELED: u8 = u8::MAX;

/// A sampled graph together with its ground-truth communities.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmInstance {
    pub n: usize,
    pub q: usize,
    pub a: f64,
    pub b: f64,
    pub seed: u64,
    /// Unordered edges with `u < v`, sorted.
    pub edges: Vec<(u32, u32)>,
    pub labels: Vec<u8>,
}

impl SbmInstance {
    /// `λ = (a − b)/(a + (q−1)b)`.
    pub fn lambda(&self) -> f64 {
        sbm_lambda(self.q, self.a, self.b)
    }

    /// Expected degree `d = (a + (q−1)b)/q`.
    pub fn mean_degree(&self) -> f64 {
        sbm_degree(self.q, self.a, self.b)
    }

    pub fn graph(&self) -> Graph {
        Graph::from_edges(self.n, &self.edges)
    }

    /// Header line `n q a b seed` followed by one `u v` line per edge.
    pub fn graph_text(&self) -> String {
        let mut out = format!("{} {} {} {} {}\n", self.n, self.q, self.a, self.b, self.seed);
        for (u, v) in &self.edges {
            out.push_str(&format!("{u} {v}\n"));
        }
        out
    }

    pub fn labels_text(&self) -> String {
        let mut out = String::with_capacity(self.n * 2);
        for x in &self.labels {
            out.push_str(&format!("{x}\n"));
        }
        out
    }

    /// Parses the graph and label formats written by [`graph_text`] and
    /// [`labels_text`].
    ///
    /// [`graph_text`]: SbmInstance::graph_text
    /// [`labels_text`]: SbmInstance::labels_text
    pub fn from_text(graph: &str, labels: &str) -> Result<Self> {
        let mut lines = graph.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| invalid("empty graph file"))?;
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 5 {
            return Err(invalid("graph header must read `n q a b seed`"));
        }
        let bad = |what: &str| invalid(format!("bad {what} in graph header"));
        let n: usize = f[0].parse().map_err(|_| bad("n"))?;
        let q: usize = f[1].parse().map_err(|_| bad("q"))?;
        let a: f64 = f[2].parse().map_err(|_| bad("a"))?;
        let b: f64 = f[3].parse().map_err(|_| bad("b"))?;
        let seed: u64 = f[4].parse().map_err(|_| bad("seed"))?;
        check_params(n, q, a, b)?;
        let mut edges = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut it = line.split_whitespace().map(str::parse::<u32>);
            let (Some(Ok(u)), Some(Ok(v)), None) = (it.next(), it.next(), it.next()) else {
                return Err(invalid(format!("bad edge line {}: `{line}`", i + 2)));
            };
            if u as usize >= n || v as usize >= n || u == v {
                return Err(invalid(format!("edge ({u}, {v}) invalid for n = {n}")));
            }
            edges.push((u.min(v), u.max(v)));
        }
        edges.sort_unstable();
        edges.dedup();
        let labels = labels
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| match l.trim().parse::<u8>() {
                Ok(x) if (x as usize) < q => Ok(x),
                _ => Err(invalid(format!("bad label `{l}`"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: labels.len(),
            });
        }
        Ok(SbmInstance {
            n,
            q,
            a,
            b,
            seed,
            edges,
            labels,
        })
    }
}

pub fn sbm_lambda(q: usize, a: f64, b: f64) -> f64 {
    (a - b) / (a + (q as f64 - 1.0) * b)
}

pub fn sbm_degree(q: usize, a: f64, b: f64) -> f64 {
    (a + (q as f64 - 1.0) * b) / q as f64
}

fn check_params(n: usize, q: usize, a: f64, b: f64) -> Result<()> {
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    if !(2..UNLABELED as usize).contains(&q) {
        return Err(invalid(format!("q = {q} outside [2, 254]")));
    }
    for (name, x) in [("a", a), ("b", b)] {
        if !(x.is_finite() && x >= 0.0 && x <= n as f64) {
            return Err(invalid(format!("{name} = {x} must lie in [0, n]")));
        }
    }
    if a + b <= 0.0 {
        return Err(invalid("a and b cannot both vanish"));
    }
    Ok(())
}

/// Samples labels uniformly and every unordered pair independently with
/// probability `a/n` (same label) or `b/n` (different labels).
///
/// Pairs are visited by geometric skipping, so the cost is `O(nq + |E|)`.
pub fn generate(n: usize, q: usize, a: f64, b: f64, seed: u64) -> Result<SbmInstance> {
    check_params(n, q, a, b)?;
    let mut rng = rng::stream(seed, 0);
    let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..q) as u8).collect();
    let mut groups = vec![Vec::new(); q];
    for (v, &x) in labels.iter().enumerate() {
        groups[x as usize].push(v as u32);
    }
    let mut edges = Vec::new();
    for g in 0..q {
        for h in g..q {
            let p = if g == h { a } else { b } / n as f64;
            for (ii, &i) in groups[g].iter().enumerate() {
                let targets = if g == h { &groups[h][ii + 1..] } else { &groups[h][..] };
                skip_sample(targets.len(), p, &mut rng, |t| {
                    let j = targets[t];
                    edges.push((i.min(j), i.max(j)));
                });
            }
        }
    }
    edges.sort_unstable();
    Ok(SbmInstance {
        n,
        q,
        a,
        b,
        seed,
        edges,
        labels,
    })
}

/// Calls `f` on each index of `0..len` kept independently with probability `p`.
fn skip_sample<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R, mut f: impl FnMut(usize)) {
    if p <= 0.0 {
        return;
    }
    if p >= 1.0 {
        (0..len).for_each(f);
        return;
    }
    let log_miss = (-p).ln_1p();
    let mut idx = 0usize;
    loop {
        let u: f64 = 1.0 - rng.gen::<f64>();
        let skip = (u.ln() / log_miss).floor();
        if skip >= (len - idx) as f64 {
            return;
        }
        idx += skip as usize;
        f(idx);
        idx += 1;
    }
}

/// Compressed adjacency lists with sorted neighbors.
#[derive(Debug, Clone)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Graph {
    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Self {
        let mut deg = vec![0usize; n];
        for &(u, v) in edges {
            deg[u as usize] += 1;
            deg[v as usize] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for v in 0..n {
            offsets[v + 1] = offsets[v] + deg[v];
        }
        let mut fill = offsets[..n].to_vec();
        let mut targets = vec![0u32; offsets[n]];
        for &(u, v) in edges {
            targets[fill[u as usize]] = v;
            fill[u as usize] += 1;
            targets[fill[v as usize]] = u;
            fill[v as usize] += 1;
        }
        for v in 0..n {
            targets[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Graph { offsets, targets }
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// For each directed slot `u → v`, the slot of `v → u`.
    fn reverse_slots(&self) -> Vec<usize> {
        let mut rev = vec![0usize; self.targets.len()];
        for u in 0..self.n() {
            for e in self.offsets[u]..self.offsets[u + 1] {
                let v = self.targets[e] as usize;
                let k = self
                    .neighbors(v)
                    .binary_search(&(u as u32))
                    .expect("adjacency is symmetric");
                rev[e] = self.offsets[v] + k;
            }
        }
        rev
    }

    /// Whether the radius-`depth` ball around `v` induces a tree.
    pub fn neighborhood_is_tree(&self, v: usize, depth: usize) -> bool {
        let mut dist = std::collections::HashMap::new();
        dist.insert(v, 0usize);
        let mut frontier = vec![v];
        let mut ball = vec![v];
        for d in 1..=depth {
            let mut next = Vec::new();
            for &u in &frontier {
                for &w in self.neighbors(u) {
                    let w = w as usize;
                    if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                        e.insert(d);
                        next.push(w);
                    }
                }
            }
            ball.extend_from_slice(&next);
            frontier = next;
        }
        let inside: usize = ball
            .iter()
            .map(|&u| self.neighbors(u).iter().filter(|&&w| dist.contains_key(&(w as usize))).count())
            .sum();
        inside / 2 == ball.len() - 1
    }
}

/// Side information `Y_v ~ W(·|X_v)`, stored as per-vertex likelihood
/// vectors `(W(Y_v|i))_i` up to scale.
#[derive(Debug, Clone)]
pub struct SideInfo {
    pub spec: ChannelSpec,
    pub obs: Observation,
}

impl SideInfo {
    pub fn draw(labels: &[u8], q: usize, spec: &ChannelSpec, seed: u64) -> Result<Self> {
        let channel = make_channel(spec, q)?;
        let mut rng = rng::stream(seed, 1);
        Ok(SideInfo {
            spec: spec.clone(),
            obs: Observation::draw(&channel, labels, &mut rng),
        })
    }

    pub fn channel(&self) -> Result<Channel> {
        make_channel(&self.spec, self.obs.q)
    }
}

/// `⌊(log₁₀ n)^0.9⌋`, the default number of message-passing rounds.
///
/// Any fixed base gives `r → ∞` with `|B(v, r)| = n^{o(1)}`; base 10 keeps
/// balls nearly tree-like at `n ≤ 10⁵` (3 rounds at `n = 3·10⁴`).
pub fn default_rounds(n: usize) -> usize {
    (n.max(1) as f64).log10().powf(0.9).floor() as usize
}

/// Final marginals and hard decisions of a belief propagation run.
#[derive(Debug, Clone)]
pub struct BpOutput {
    pub rounds: usize,
    /// Row-major `n × q` vertex marginals.
    pub marginals: Vec<f64>,
    pub labels: Vec<u8>,
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 && s.is_finite() {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        let u = 1.0 / v.len() as f64;
        v.fill(u);
    }
}

/// Index of the largest entry; ties go to the smallest index.
fn argmax(v: &[f64]) -> u8 {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best as u8
}

/// Belief propagation with side information: messages start at the
/// normalized side-information likelihood, run `rounds` synchronous
/// updates (default [`default_rounds`]), and each vertex takes the argmax
/// of its final marginal.
pub fn bp_side_info(graph: &Graph, side: &SideInfo, lambda: f64, rounds: Option<usize>) -> Result<BpOutput> {
    let q = side.obs.q;
    let n = graph.n();
    if side.obs.like.len() != n * q {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: side.obs.like.len() / q,
        });
    }
    if side.channel()?.is_trivial() {
        return Err(invalid("side information through the trivial channel carries no signal"));
    }
    let potts = PottsParams::new(q, lambda)?;
    let rounds = rounds.unwrap_or_else(|| default_rounds(n));

    let mut prior = side.obs.like.clone();
    prior.par_chunks_mut(q).for_each(normalize);

    let m = graph.targets.len();
    let rev = graph.reverse_slots();
    let mut msg = vec![0.0; m * q];
    for u in 0..n {
        for e in graph.offsets[u]..graph.offsets[u + 1] {
            msg[e * q..(e + 1) * q].copy_from_slice(&prior[u * q..(u + 1) * q]);
        }
    }
    let mut next = vec![0.0; m * q];
    for _ in 0..rounds {
        let mut slices = Vec::with_capacity(n);
        let mut rest = next.as_mut_slice();
        for u in 0..n {
            let (head, tail) = rest.split_at_mut(graph.degree(u) * q);
            slices.push(head);
            rest = tail;
        }
        slices.into_par_iter().enumerate().for_each_init(
            || Scratch::new(q),
            |scr, (u, out)| {
                vertex_update(graph, &rev, &msg, &prior[u * q..(u + 1) * q], u, potts.lambda, scr, Some(out));
            },
        );
        std::mem::swap(&mut msg, &mut next);
    }

    let mut marginals = vec![0.0; n * q];
    marginals.par_chunks_mut(q).enumerate().for_each_init(
        || Scratch::new(q),
        |scr, (u, out)| {
            let b = vertex_update(graph, &rev, &msg, &prior[u * q..(u + 1) * q], u, potts.lambda, scr, None);
            out.copy_from_slice(b);
        },
    );
    let labels = marginals.chunks(q).map(argmax).collect();
    Ok(BpOutput {
        rounds,
        marginals,
        labels,
    })
}

struct Scratch {
    q: usize,
    prefix: Vec<f64>,
    suffix: Vec<f64>,
    factor: Vec<f64>,
}

impl Scratch {
    fn new(q: usize) -> Self {
        Scratch {
            q,
            prefix: Vec::new(),
            suffix: Vec::new(),
            factor: Vec::new(),
        }
    }
}

/// Computes the outgoing messages of `u` into `out` (one per incident edge,
/// each excluding its own target) and returns the full marginal of `u`.
#[allow(clippy::too_many_arguments)]
fn vertex_update<'s>(
    graph: &Graph,
    rev: &[usize],
    msg: &[f64],
    prior: &[f64],
    u: usize,
    lambda: f64,
    scr: &'s mut Scratch,
    out: Option<&mut [f64]>,
) -> &'s [f64] {
    let q = scr.q;
    let deg = graph.degree(u);
    let base = graph.offsets[u];
    let flat = (1.0 - lambda) / q as f64;
    scr.factor.clear();
    for k in 0..deg {
        let incoming = &msg[rev[base + k] * q..(rev[base + k] + 1) * q];
        scr.factor.extend(incoming.iter().map(|&m| lambda * m + flat));
    }
    scr.prefix.resize((deg + 1) * q, 0.0);
    scr.prefix[..q].copy_from_slice(prior);
    for k in 0..deg {
        let (done, rest) = scr.prefix.split_at_mut((k + 1) * q);
        let cur = &mut rest[..q];
        for i in 0..q {
            cur[i] = done[k * q + i] * scr.factor[k * q + i];
        }
        normalize(cur);
    }
    if let Some(out) = out {
        scr.suffix.resize((deg + 1) * q, 0.0);
        scr.suffix[deg * q..].fill(1.0);
        for k in (0..deg).rev() {
            let (head, tail) = scr.suffix.split_at_mut((k + 1) * q);
            let cur = &mut head[k * q..];
            for i in 0..q {
                cur[i] = tail[i] * scr.factor[k * q + i];
            }
            normalize(cur);
        }
        for k in 0..deg {
            let o = &mut out[k * q..(k + 1) * q];
            for i in 0..q {
                o[i] = scr.prefix[k * q + i] * scr.suffix[(k + 1) * q + i];
            }
            normalize(o);
        }
    }
    &scr.prefix[deg * q..]
}

/// Largest number of agreements `Σ_y C[τ(y)][y]` over permutations `τ`,
/// where `C[x][y]` counts vertices with truth `x` and estimate `y`.
/// Exhaustive for `q ≤ 6`, optimal assignment otherwise.
pub fn max_agreement(confusion: &[Vec<usize>]) -> usize {
    if confusion.len() <= 6 {
        max_agreement_exhaustive(confusion)
    } else {
        max_agreement_assignment(confusion)
    }
}

pub fn max_agreement_exhaustive(confusion: &[Vec<usize>]) -> usize {
    let q = confusion.len();
    permutations(q)
        .iter()
        .map(|tau| (0..q).map(|y| confusion[tau[y]][y]).sum())
        .max()
        .unwrap_or(0)
}

pub fn max_agreement_assignment(confusion: &[Vec<usize>]) -> usize {
    let q = confusion.len();
    let weights = Matrix::from_fn(q, q, |(y, x)| confusion[x][y] as i64);
    kuhn_munkres(&weights).0 as usize
}

pub fn confusion(x: &[u8], xhat: &[u8], q: usize) -> Result<Vec<Vec<usize>>> {
    if x.len() != xhat.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: xhat.len(),
        });
    }
    let mut c = vec![vec![0usize; q]; q];
    for (&a, &b) in x.iter().zip(xhat) {
        if a as usize >= q || b as usize >= q {
            return Err(invalid(format!("label outside [0, {q})")));
        }
        c[a as usize][b as usize] += 1;
    }
    Ok(c)
}

/// `1 − (1/n) min_τ Σ_i 1{X_i ≠ τ(X̂_i)}`.
pub fn accuracy(x: &[u8], xhat: &[u8], q: usize) -> Result<f64> {
    if x.is_empty() {
        return Err(invalid("accuracy of an empty labeling"));
    }
    let c = confusion(x, xhat, q)?;
    Ok(max_agreement(&c) as f64 / x.len() as f64)
}

/// A stand-in for an initial recovery algorithm.
pub trait Initializer: Sync {
    /// Labels every vertex with `keep[v]` set, working on the subgraph they
    /// induce; other entries are [`UNLABELED`].
    fn run(&self, graph: &Graph, keep: &[bool]) -> Vec<u8>;
}

/// Transition matrix of the oracle initializer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitializerSpec {
    /// Rows of `P_η`.
    Potts(f64),
    /// An explicit row-stochastic matrix.
    Matrix(Vec<Vec<f64>>),
}

impl InitializerSpec {
    pub fn matrix(&self, q: usize) -> Result<Vec<Vec<f64>>> {
        let f = match self {
            InitializerSpec::Potts(eta) => {
                let p = PottsParams::new(q, *eta)?;
                crate::simplex::potts_matrix(&p)
            }
            InitializerSpec::Matrix(m) => m.clone(),
        };
        if f.len() != q || f.iter().any(|r| r.len() != q) {
            return Err(Error::DimensionMismatch {
                expected: q,
                found: f.len(),
            });
        }
        for row in &f {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&x| !(x >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("initializer row {row:?} is not a distribution")));
            }
        }
        Ok(f)
    }
}

/// `potts:η` or `matrix:r11,r12,...;r21,...`.
impl FromStr for InitializerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.trim().split_once(':').ok_or_else(|| invalid(format!("bad initializer `{s}`")))?;
        match kind.trim() {
            "potts" => arg
                .trim()
                .parse()
                .map(InitializerSpec::Potts)
                .map_err(|_| invalid(format!("bad initializer `{s}`"))),
            "matrix" => arg
                .split(';')
                .map(|row| row.split(',').map(|x| x.trim().parse::<f64>()).collect())
                .collect::<std::result::Result<Vec<Vec<f64>>, _>>()
                .map(InitializerSpec::Matrix)
                .map_err(|_| invalid(format!("bad initializer `{s}`"))),
            other => Err(invalid(format!("unknown initializer kind `{other}`"))),
        }
    }
}

impl fmt::Display for InitializerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitializerSpec::Potts(eta) => write!(f, "potts:{eta}"),
            InitializerSpec::Matrix(m) => {
                let rows: Vec<String> = m
                    .iter()
                    .map(|r| r.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","))
                    .collect();
                write!(f, "matrix:{}", rows.join(";"))
            }
        }
    }
}

/// Ground truth seen through a fixed transition matrix `F`: vertex `v`
/// gets `Y_v ~ F(X_v, ·)` from a generator keyed by `(seed, v)`, so every
/// call labels a vertex the same way.
#[derive(Debug, Clone)]
pub struct OracleInitializer {
    truth: Vec<u8>,
    cumulative: Vec<Vec<f64>>,
    seed: u64,
    sigma_min: f64,
}

impl OracleInitializer {
    pub fn new(truth: &[u8], q: usize, spec: &InitializerSpec, seed: u64) -> Result<Self> {
        let f = spec.matrix(q)?;
        if let Some(&x) = truth.iter().find(|&&x| x as usize >= q) {
            return Err(invalid(format!("label {x} outside [0, {q})")));
        }
        let ftf: Vec<Vec<f64>> = (0..q)
            .map(|i| (0..q).map(|j| (0..q).map(|k| f[k][i] * f[k][j]).sum()).collect())
            .collect();
        let sigma_min = symmetric_eigenvalues(&ftf)[0].max(0.0).sqrt();
        let cumulative = f
            .iter()
            .map(|row| {
                row.iter()
                    .scan(0.0, |acc, x| {
                        *acc += x;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();
        Ok(OracleInitializer {
            truth: truth.to_vec(),
            cumulative,
            seed,
            sigma_min,
        })
    }

    /// Smallest singular value of `F`.
    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    /// `F` must be invertible with margin for anchor alignment to work.
    pub fn is_valid_for_vanilla(&self) -> bool {
        self.sigma_min > 1e-9
    }

    fn label(&self, v: usize) -> u8 {
        let row = &self.cumulative[self.truth[v] as usize];
        if row[0] >= 1.0 {
            return 0;
        }
        let u: f64 = rng::fast_stream(self.seed, v as u64).gen();
        row.iter().position(|&c| u < c).unwrap_or(row.len() - 1) as u8
    }
}

impl Initializer for OracleInitializer {
    fn run(&self, graph: &Graph, keep: &[bool]) -> Vec<u8> {
        debug_assert_eq!(graph.n(), self.truth.len());
        keep.iter()
            .enumerate()
            .map(|(v, &k)| if k { self.label(v) } else { UNLABELED })
            .collect()
    }
}

/// Settings for [`bp_vanilla`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VanillaParams {
    /// Ball radius `r`; `None` uses [`default_rounds`].
    pub rounds: Option<usize>,
    /// Number of vertices outside the hold-out set to classify.
    pub sample: usize,
    pub seed: u64,
    /// Reuse the global initial labeling instead of re-running the
    /// initializer with each ball removed. Cheaper, but the boundary labels
    /// then depend on edges inside the ball.
    pub reuse_global: bool,
    pub boundary: BoundaryEstimate,
}

/// How the boundary channel `M^v` is read off the hold-out profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryEstimate {
    /// Row `i` is the normalized profile of anchor `u_i` alone.
    Anchors,
    /// Rows are the components of a `q`-component multinomial mixture
    /// fitted by EM to all hold-out profiles, started from their aligned
    /// argmax classes. Avoids the zero entries a single small profile
    /// produces, which would veto hypotheses outright.
    Mixture,
}

impl FromStr for BoundaryEstimate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "anchors" => Ok(BoundaryEstimate::Anchors),
            "mixture" => Ok(BoundaryEstimate::Mixture),
            other => Err(invalid(format!("unknown boundary estimate `{other}`"))),
        }
    }
}

impl fmt::Display for BoundaryEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryEstimate::Anchors => "anchors",
            BoundaryEstimate::Mixture => "mixture",
        })
    }
}

/// EM for an equal-weight mixture of `q` multinomials over label profiles
/// already expressed in aligned coordinates. Returns the component
/// distributions as rows.
fn fit_mixture(profiles: &[Vec<f64>], s: i64) -> Vec<Vec<f64>> {
    let q = profiles.first().map_or(0, Vec::len);
    let mut resp: Vec<Vec<f64>> = profiles
        .iter()
        .map(|c| {
            let key: Vec<f64> = c.iter().map(|&x| s as f64 * x).collect();
            let best = key.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ties: Vec<usize> = (0..q).filter(|&i| key[i] == best).collect();
            let mut r = vec![0.0; q];
            for &i in &ties {
                r[i] = 1.0 / ties.len() as f64;
            }
            r
        })
        .collect();
    let mut m = vec![vec![1.0 / q as f64; q]; q];
    for _ in 0..500 {
        // M-step with a half-count prior per cell
        let mut next = vec![vec![0.5; q]; q];
        for (c, r) in profiles.iter().zip(&resp) {
            for i in 0..q {
                for j in 0..q {
                    next[i][j] += r[i] * c[j];
                }
            }
        }
        for row in next.iter_mut() {
            normalize(row);
        }
        let shift: f64 = (0..q).flat_map(|i| (0..q).map(move |j| (i, j))).map(|(i, j)| (next[i][j] - m[i][j]).abs()).sum();
        m = next;
        // E-step
        let logm: Vec<Vec<f64>> = m.iter().map(|row| row.iter().map(|x| x.ln()).collect()).collect();
        for (c, r) in profiles.iter().zip(resp.iter_mut()) {
            let ll: Vec<f64> = (0..q).map(|i| (0..q).map(|j| c[j] * logm[i][j]).sum()).collect();
            let top = ll.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for i in 0..q {
                r[i] = (ll[i] - top).exp();
            }
            normalize(r);
        }
        if shift < 1e-10 {
            break;
        }
    }
    m
}

impl Default for VanillaParams {
    fn default() -> Self {
        VanillaParams {
            rounds: None,
            sample: 2000,
            seed: 0,
            reuse_global: false,
            boundary: BoundaryEstimate::Mixture,
        }
    }
}

/// Result of [`bp_vanilla`] on the sampled vertices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VanillaOutcome {
    pub rounds: usize,
    pub holdout: Vec<u32>,
    /// `anchors[i]` is the hold-out vertex chosen for color `i`.
    pub anchors: Vec<u32>,
    pub vertices: Vec<u32>,
    /// Estimates for `vertices`; color 0 where alignment failed.
    pub labels: Vec<u8>,
    pub aligned: Vec<bool>,
    pub reuse_global: bool,
}

impl VanillaOutcome {
    pub fn aligned_fraction(&self) -> f64 {
        if self.aligned.is_empty() {
            return 0.0;
        }
        self.aligned.iter().filter(|&&a| a).count() as f64 / self.aligned.len() as f64
    }

    /// Permutation-minimized accuracy on the sampled vertices, counting
    /// alignment failures with their fallback label.
    pub fn accuracy(&self, truth: &[u8], q: usize) -> Result<f64> {
        let x: Vec<u8> = self.vertices.iter().map(|&v| truth[v as usize]).collect();
        accuracy(&x, &self.labels, q)
    }
}

/// Local belief propagation for the vanilla model, aligned through anchor
/// vertices held out from the initializer.
///
/// A hold-out set `U` of `⌊√n⌋` vertices is drawn and the initializer
/// labels `G∖U`. For each color `i` an anchor `u_i ∈ U` is picked among
/// hold-out vertices with at least `√(ln n)` neighbors outside `U` whose
/// neighbor-label profile is strictly dominated (in direction `s = sign λ`)
/// by label `i`; among those the one with the widest margin wins. Then for
/// each sampled vertex `v`, the initializer is re-run without `U` and the
/// ball `B(v, r−1)`, its labels are permuted to match the anchor profiles,
/// the boundary channel `M^v` is read off the anchor profiles, and the
/// posterior of `X_v` is computed by passing messages inward through the
/// ball from the labels on `∂B(v, r)`.
pub fn bp_vanilla(
    graph: &Graph,
    q: usize,
    lambda: f64,
    init: &dyn Initializer,
    params: &VanillaParams,
) -> Result<VanillaOutcome> {
    let n = graph.n();
    let potts = PottsParams::new(q, lambda)?;
    if lambda == 0.0 {
        return Err(invalid("λ = 0 leaves no community signal in the graph"));
    }
    let s: i64 = if lambda > 0.0 { 1 } else { -1 };
    let r = params.rounds.unwrap_or_else(|| default_rounds(n));
    if r == 0 {
        return Err(invalid("ball radius must be at least 1"));
    }

    let u_size = (n as f64).sqrt().floor() as usize;
    let mut rng = rng::stream(params.seed, 0);
    let mut holdout: Vec<u32> = index::sample(&mut rng, n, u_size).into_iter().map(|v| v as u32).collect();
    holdout.sort_unstable();
    let mut in_u = vec![false; n];
    for &u in &holdout {
        in_u[u as usize] = true;
    }

    let keep: Vec<bool> = in_u.iter().map(|&x| !x).collect();
    let y = init.run(graph, &keep);
    let min_deg = (n as f64).ln().max(0.0).sqrt();
    let profile = |u: usize, labels: &[u8]| -> Vec<i64> {
        let mut c = vec![0i64; q];
        for &w in graph.neighbors(u) {
            let l = labels[w as usize];
            if l != UNLABELED {
                c[l as usize] += 1;
            }
        }
        c
    };

    let mut anchors = Vec::with_capacity(q);
    for i in 0..q {
        let mut best: Option<(i64, usize, u32)> = None;
        for &u in &holdout {
            let outside = graph.neighbors(u as usize).iter().filter(|&&w| !in_u[w as usize]).count();
            if (outside as f64) < min_deg {
                continue;
            }
            let c = profile(u as usize, &y);
            let margin = (0..q).filter(|&j| j != i).map(|j| s * (c[i] - c[j])).min().unwrap_or(0);
            if margin <= 0 {
                continue;
            }
            let key = (margin, outside, u);
            let better = match best {
                None => true,
                Some((m, d, w)) => (margin, outside) > (m, d) || ((margin, outside) == (m, d) && u < w),
            };
            if better {
                best = Some(key);
            }
        }
        match best {
            Some((_, _, u)) => anchors.push(u),
            None => return Err(Error::Recovery(format!("no anchor vertex found for color {i}"))),
        }
    }

    let pool: Vec<u32> = (0..n as u32).filter(|&v| !in_u[v as usize]).collect();
    let m = params.sample.min(pool.len());
    let mut vertices: Vec<u32> = index::sample(&mut rng, pool.len(), m).into_iter().map(|i| pool[i]).collect();
    vertices.sort_unstable();

    let ctx = VanillaCtx {
        graph,
        q,
        lambda: potts.lambda,
        s,
        r,
        in_u: &in_u,
        anchors: &anchors,
        global: &y,
        holdout: &holdout,
        init,
        reuse_global: params.reuse_global,
        boundary: params.boundary,
    };
    let results: Vec<Option<u8>> = vertices
        .par_iter()
        .map_init(|| BallScratch::new(n), |scr, &v| ctx.classify(v as usize, scr))
        .collect();

    Ok(VanillaOutcome {
        rounds: r,
        holdout,
        anchors,
        labels: results.iter().map(|x| x.unwrap_or(0)).collect(),
        aligned: results.iter().map(Option::is_some).collect(),
        vertices,
        reuse_global: params.reuse_global,
    })
}

struct VanillaCtx<'a> {
    graph: &'a Graph,
    q: usize,
    lambda: f64,
    s: i64,
    r: usize,
    in_u: &'a [bool],
    anchors: &'a [u32],
    global: &'a [u8],
    holdout: &'a [u32],
    init: &'a dyn Initializer,
    reuse_global: bool,
    boundary: BoundaryEstimate,
}

struct BallScratch {
    dist: Vec<u32>,
    slot: Vec<u32>,
    levels: Vec<Vec<u32>>,
    keep: Vec<bool>,
    belief: Vec<f64>,
}

impl BallScratch {
    fn new(n: usize) -> Self {
        BallScratch {
            dist: vec![u32::MAX; n],
            slot: vec![0; n],
            levels: Vec::new(),
            keep: vec![false; n],
            belief: Vec::new(),
        }
    }
}

impl VanillaCtx<'_> {
    /// Returns `None` when the anchor profiles admit no alignment.
    fn classify(&self, v: usize, scr: &mut BallScratch) -> Option<u8> {
        let (r, g) = (self.r, self.graph);

        // breadth-first levels 0..=r around v
        scr.levels.clear();
        scr.levels.push(vec![v as u32]);
        scr.dist[v] = 0;
        for d in 1..=r {
            let mut next = Vec::new();
            for &u in &scr.levels[d - 1] {
                for &w in g.neighbors(u as usize) {
                    if scr.dist[w as usize] == u32::MAX {
                        scr.dist[w as usize] = d as u32;
                        next.push(w);
                    }
                }
            }
            scr.levels.push(next);
        }

        let labels_v;
        let labels: &[u8] = if self.reuse_global {
            self.global
        } else {
            for (w, k) in scr.keep.iter_mut().enumerate() {
                *k = !self.in_u[w] && scr.dist[w] >= r as u32;
            }
            labels_v = self.init.run(g, &scr.keep);
            &labels_v
        };

        let out = self.align_and_propagate(labels, scr);
        for level in &scr.levels {
            for &u in level {
                scr.dist[u as usize] = u32::MAX;
            }
        }
        out
    }

    fn align_and_propagate(&self, labels: &[u8], scr: &mut BallScratch) -> Option<u8> {
        let (q, r, g, s) = (self.q, self.r, self.graph, self.s);
        let usable = |w: usize| !self.in_u[w] && (self.reuse_global || scr.dist[w] >= r as u32) && labels[w] != UNLABELED;

        // anchor profiles in the initializer's own coordinates
        let mut counts = vec![vec![0i64; q]; q];
        for (i, &a) in self.anchors.iter().enumerate() {
            for &w in g.neighbors(a as usize) {
                if usable(w as usize) {
                    counts[i][labels[w as usize] as usize] += 1;
                }
            }
        }
        // tau maps the initializer's label y_i onto anchor color i
        let mut tau = vec![usize::MAX; q];
        for (i, c) in counts.iter().enumerate() {
            let mut order: Vec<usize> = (0..q).collect();
            order.sort_by_key(|&j| std::cmp::Reverse(s * c[j]));
            if q > 1 && s * c[order[0]] == s * c[order[1]] {
                return None;
            }
            let yi = order[0];
            if tau[yi] != usize::MAX {
                return None;
            }
            tau[yi] = i;
        }
        let mv = match self.boundary {
            BoundaryEstimate::Anchors => {
                // M^v[i][τ(y)] = N(u_i, y) / Σ_y N(u_i, y)
                let mut mv = vec![vec![0.0; q]; q];
                for (i, c) in counts.iter().enumerate() {
                    let total: i64 = c.iter().sum();
                    if total == 0 {
                        return None;
                    }
                    for y in 0..q {
                        mv[i][tau[y]] = c[y] as f64 / total as f64;
                    }
                }
                mv
            }
            BoundaryEstimate::Mixture => {
                let profiles: Vec<Vec<f64>> = self
                    .holdout
                    .iter()
                    .map(|&u| {
                        let mut c = vec![0.0; q];
                        for &w in g.neighbors(u as usize) {
                            if usable(w as usize) {
                                c[tau[labels[w as usize] as usize]] += 1.0;
                            }
                        }
                        c
                    })
                    .filter(|c| c.iter().sum::<f64>() > 0.0)
                    .collect();
                fit_mixture(&profiles, s)
            }
        };

        // inward pass over B(v, r−1), boundary labels on ∂B(v, r)
        let ball: usize = scr.levels[..r].iter().map(Vec::len).sum();
        scr.belief.clear();
        scr.belief.resize(ball * q, 1.0);
        let mut k = 0u32;
        for level in &scr.levels[..r] {
            for &u in level {
                scr.slot[u as usize] = k;
                k += 1;
            }
        }
        let flat = (1.0 - self.lambda) / q as f64;
        let mut acc = vec![0.0; q];
        for d in (0..r).rev() {
            for &u in &scr.levels[d] {
                acc.fill(1.0);
                for &w in g.neighbors(u as usize) {
                    let w = w as usize;
                    if scr.dist[w] != d as u32 + 1 {
                        continue;
                    }
                    if d + 1 == r {
                        if !usable(w) {
                            continue;
                        }
                        let y = tau[labels[w] as usize];
                        for i in 0..q {
                            acc[i] *= mv[i][y];
                        }
                    } else {
                        let b = &scr.belief[scr.slot[w] as usize * q..(scr.slot[w] as usize + 1) * q];
                        for i in 0..q {
                            acc[i] *= self.lambda * b[i] + flat;
                        }
                    }
                    let mx = acc.iter().cloned().fold(0.0, f64::max);
                    if mx > 0.0 && mx < 1e-200 {
                        acc.iter_mut().for_each(|x| *x /= mx);
                    }
                }
                normalize(&mut acc);
                let at = scr.slot[u as usize] as usize * q;
                scr.belief[at..at + q].copy_from_slice(&acc);
            }
        }
        Some(argmax(&scr.belief[..q]))
    }
}

/// Density-evolution accuracy `1 − lim_k P_e` for the tree matching
/// `(q, a, b)`, starting from `m0` with optional survey.
fn tree_accuracy(q: usize, a: f64, b: f64, m0: &Channel, survey: Option<Channel>, cap: usize, seed: u64) -> Result<f64> {
    let potts = PottsParams::new(q, sbm_lambda(q, a, b))?;
    let offspring = OffspringDist::poisson(sbm_degree(q, a, b))?;
    let mut p = BpParams::new(potts, offspring).with_cap(cap).with_seed(seed);
    if let Some(w) = survey {
        p = p.with_survey(w);
    }
    let trace = iterate(m0, &p, 80, 1e-9)?;
    let tail = if trace.converged { 1 } else { 10 };
    let rows = &trace.rows[trace.rows.len() - tail..];
    let pe = rows.iter().map(|r| r.measures.p_e).sum::<f64>() / rows.len() as f64;
    Ok(1.0 - pe)
}

/// `1 − lim_k P_e(σ_ρ | T_k, ω_{T_k})` for side information through `w`.
pub fn tree_prediction_side(q: usize, a: f64, b: f64, w: &ChannelSpec, cap: usize, seed: u64) -> Result<f64> {
    tree_accuracy(q, a, b, &Channel::trivial(q), Some(make_channel(w, q)?), cap, seed)
}

/// `1 − lim_k P_e(σ_ρ | T_k, σ_{L_k})`, the accuracy with perfect boundary.
pub fn tree_prediction_vanilla(q: usize, a: f64, b: f64, cap: usize, seed: u64) -> Result<f64> {
    tree_accuracy(q, a, b, &Channel::identity(q), None, cap, seed)
}
