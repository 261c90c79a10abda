//! Global solvers for the one-bit ML problem.
//!
//! The objective `Σ_i g_i(x)` over `x ∈ {-1,1}^K` is replaced by `Σ_i w_i`
//! with `w_i` bounded below by tangent planes of the convex `g_i`. There
//! are `N·2^K` such planes; [`solve_gobmd`] generates them lazily inside a
//! single branch-and-bound tree, adding the tangent at an integral LP
//! point whenever that point still underestimates some `g_i`.
//! [`solve_incremental`] is the outer-loop variant that solves each
//! restricted MILP to optimality before adding cuts.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::rc::Rc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::zero_forcing;
use crate::lp::{solve_lp_with, Basis, LpOptions, LpProblem, LpRow, LpStatus};
use crate::model::{signs_to_real, RealInstance};
use crate::special::{Cut, LossContext};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeSelection {
    BestBound,
    DepthFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchRule {
    MostFractional,
    LowestIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutMode {
    /// Tangents only at integral LP points.
    IntegralOnly,
    /// Also linearize at fractional LP points before branching.
    AlsoFractional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolScope {
    /// Every cut is visible to every node.
    Global,
    /// A node sees the cuts inherited from its ancestors plus its own.
    PerNode,
}

macro_rules! impl_from_str {
    ($ty:ty { $($name:literal => $variant:expr),+ $(,)? }) => {
        impl std::str::FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::InvalidConfig(format!(
                        "unknown {} `{other}` (expected one of: {})",
                        stringify!($ty),
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

impl_from_str!(NodeSelection { "best-bound" => NodeSelection::BestBound, "depth-first" => NodeSelection::DepthFirst });
impl_from_str!(BranchRule { "most-fractional" => BranchRule::MostFractional, "lowest-index" => BranchRule::LowestIndex });
impl_from_str!(CutMode { "integral-only" => CutMode::IntegralOnly, "also-fractional" => CutMode::AlsoFractional });
impl_from_str!(PoolScope { "global" => PoolScope::Global, "per-node" => PoolScope::PerNode });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub node_selection: NodeSelection,
    pub branch_rule: BranchRule,
    pub eps_int: f64,
    pub eps_cut: f64,
    pub eps_prune: f64,
    pub node_limit: u64,
    /// Seconds.
    pub time_limit: Option<f64>,
    pub cut_mode: CutMode,
    pub pool_scope: PoolScope,
    /// Fractional cut rounds per node when `cut_mode` allows them.
    pub max_fractional_rounds: usize,
    /// Per-LP pivot cap; `None` uses the LP default.
    pub lp_max_iterations: Option<usize>,
    /// Record `(open-node minimum, upper bound)` after every node.
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            node_selection: NodeSelection::BestBound,
            branch_rule: BranchRule::MostFractional,
            eps_int: 1e-6,
            eps_cut: 1e-6,
            eps_prune: 1e-9,
            node_limit: 1_000_000,
            time_limit: None,
            cut_mode: CutMode::IntegralOnly,
            pool_scope: PoolScope::Global,
            max_fractional_rounds: 3,
            lp_max_iterations: None,
            record_trace: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eps_int", self.eps_int), ("eps_cut", self.eps_cut), ("eps_prune", self.eps_prune)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.eps_int >= 1.0 {
            return Err(Error::InvalidConfig("eps_int must be below 1".into()));
        }
        if let Some(t) = self.time_limit {
            if t.is_nan() || t < 0.0 {
                return Err(Error::InvalidConfig(format!("time_limit must be nonnegative, got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    NodeLimit,
    TimeLimit,
    /// An LP could not be solved to a certified optimum; the search result
    /// is not claimed optimal.
    NumericalFailure,
    /// The detector makes no optimality claim (zero forcing).
    Heuristic,
}

impl SolveStatus {
    pub fn is_limit(self) -> bool {
        matches!(self, SolveStatus::NodeLimit | SolveStatus::TimeLimit | SolveStatus::NumericalFailure)
    }
}

/// Set `S` of active tangent cuts, deduplicated on `(row, point)`.
#[derive(Debug, Clone)]
pub struct CutPool {
    n: usize,
    k: usize,
    cuts: Vec<Cut>,
    index: HashSet<(usize, Vec<u64>)>,
}

impl CutPool {
    pub fn new(n: usize, k: usize) -> Self {
        CutPool { n, k, cuts: Vec::new(), index: HashSet::new() }
    }

    fn key(row: usize, point: &[f64]) -> (usize, Vec<u64>) {
        // -0.0 and 0.0 are the same linearization point
        (row, point.iter().map(|v| (v + 0.0).to_bits()).collect())
    }

    pub fn contains(&self, row: usize, point: &[f64]) -> bool {
        self.index.contains(&Self::key(row, point))
    }

    /// Adds the cut and returns its id, or `None` if `(row, point)` is already present.
    pub fn insert(&mut self, cut: Cut) -> Option<usize> {
        if !self.index.insert(Self::key(cut.row, &cut.point)) {
            return None;
        }
        self.cuts.push(cut);
        Some(self.cuts.len() - 1)
    }

    /// Id of the cut at `(row, point)`, generating it if needed.
    fn get_or_make(&mut self, ctx: &LossContext, row: usize, point: &[f64]) -> Result<(usize, bool)> {
        if self.contains(row, point) {
            let id = self
                .cuts
                .iter()
                .position(|c| c.row == row && c.point.iter().zip(point).all(|(a, b)| a + 0.0 == b + 0.0))
                .expect("indexed cut is stored");
            return Ok((id, false));
        }
        let cut = ctx.make_cut(row, point)?;
        Ok((self.insert(cut).expect("not yet present"), true))
    }

    pub fn cuts(&self) -> &[Cut] {
        &self.cuts
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    /// `|C| = N · 2^K`.
    pub fn capacity(&self) -> f64 {
        self.n as f64 * 2f64.powi(self.k as i32)
    }

    pub fn ratio(&self) -> f64 {
        self.len() as f64 / self.capacity()
    }
}

/// Pool seeded with the tangents of every `g_i` at the zero-forcing point.
pub fn initial_cuts(inst: &RealInstance, ctx: &LossContext) -> Result<CutPool> {
    let zf = signs_to_real(&zero_forcing(inst)?);
    let mut pool = CutPool::new(inst.n(), inst.k());
    for i in 0..inst.n() {
        pool.insert(ctx.make_cut(i, &zf)?);
    }
    Ok(pool)
}

/// Rows `i` with `w_i < g_i(x) − eps_cut`.
pub fn violated_rows(ctx: &LossContext, x: &[f64], w: &[f64], eps_cut: f64) -> Result<Vec<usize>> {
    if x.len() != ctx.k() || w.len() != ctx.n() {
        return Err(Error::Dimension(format!(
            "violated_rows: x has {} entries (K = {}), w has {} (N = {})",
            x.len(),
            ctx.k(),
            w.len(),
            ctx.n()
        )));
    }
    Ok((0..ctx.n()).filter(|&i| w[i] < ctx.loss(i, x) - eps_cut).collect())
}

fn is_fractional(v: f64, eps_int: f64) -> bool {
    v.abs() < 1.0 - eps_int
}

/// Branching coordinate, or `None` when `x` is integral within `eps_int`.
pub fn select_branch_var(x: &[f64], rule: BranchRule, eps_int: f64) -> Option<usize> {
    let mut frac = x.iter().enumerate().filter(|(_, v)| is_fractional(**v, eps_int));
    match rule {
        BranchRule::LowestIndex => frac.next().map(|(j, _)| j),
        BranchRule::MostFractional => frac
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(a.0.cmp(&b.0)))
            .map(|(j, _)| j),
    }
}

/// Subproblem of the tree: fixed coordinates plus the LP bound inherited from its parent.
#[derive(Debug, Clone)]
pub struct Node {
    /// `+1` / `-1` for fixed coordinates, `0` for free ones.
    pub fixed: Vec<i8>,
    pub bound: f64,
    pub depth: u32,
    pub warm: Option<Basis>,
    /// Cut ids visible to this node under [`PoolScope::PerNode`].
    active: Option<Rc<Vec<usize>>>,
    seq: u64,
}

impl Node {
    pub fn root(k: usize) -> Self {
        Node { fixed: vec![0; k], bound: f64::NEG_INFINITY, depth: 0, warm: None, active: None, seq: 0 }
    }

    pub fn fixed_pos(&self) -> Vec<usize> {
        self.fixed.iter().enumerate().filter(|(_, &v)| v == 1).map(|(j, _)| j).collect()
    }

    pub fn fixed_neg(&self) -> Vec<usize> {
        self.fixed.iter().enumerate().filter(|(_, &v)| v == -1).map(|(j, _)| j).collect()
    }
}

struct BestBoundEntry(Node);

impl PartialEq for BestBoundEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for BestBoundEntry {}

impl PartialOrd for BestBoundEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for BestBoundEntry {
    // max-heap: smallest bound, then deepest, then earliest inserted is greatest
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .bound
            .total_cmp(&self.0.bound)
            .then(self.0.depth.cmp(&other.0.depth))
            .then(other.0.seq.cmp(&self.0.seq))
    }
}

/// Open subproblems, popped according to a [`NodeSelection`] rule.
pub struct NodeQueue {
    rule: NodeSelection,
    heap: BinaryHeap<BestBoundEntry>,
    stack: Vec<Node>,
    next_seq: u64,
}

impl NodeQueue {
    pub fn new(rule: NodeSelection) -> Self {
        NodeQueue { rule, heap: BinaryHeap::new(), stack: Vec::new(), next_seq: 0 }
    }

    pub fn push(&mut self, mut node: Node) {
        node.seq = self.next_seq;
        self.next_seq += 1;
        match self.rule {
            NodeSelection::BestBound => self.heap.push(BestBoundEntry(node)),
            NodeSelection::DepthFirst => self.stack.push(node),
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len() + self.stack.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn min_bound(&self) -> f64 {
        match self.rule {
            NodeSelection::BestBound => self.heap.peek().map_or(f64::INFINITY, |e| e.0.bound),
            NodeSelection::DepthFirst => self.stack.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min),
        }
    }

    fn pop(&mut self) -> Option<Node> {
        match self.rule {
            NodeSelection::BestBound => self.heap.pop().map(|e| e.0),
            NodeSelection::DepthFirst => self.stack.pop(),
        }
    }
}

/// Removes and returns the next node under the queue's rule.
pub fn select_node(queue: &mut NodeQueue) -> Result<Node> {
    queue.pop().ok_or_else(|| Error::InvalidConfig("select_node on an empty pool".into()))
}

/// Best known feasible point and its objective `U`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Incumbent {
    pub x_best: Vec<i8>,
    pub w_best: Vec<f64>,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncumbentEvent {
    pub node: u64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub node: u64,
    /// Minimum bound over the open nodes and the node just processed.
    pub open_min: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub detector: String,
    pub status: SolveStatus,
    pub x_star: Option<Vec<i8>>,
    pub objective: Option<f64>,
    pub lower_bound: f64,
    pub nodes_processed: u64,
    pub lp_solves: u64,
    pub lp_iterations: u64,
    pub cuts_added: u64,
    pub pool_size: u64,
    pub ratio_s_over_c: f64,
    pub wall_time: f64,
    pub incumbent_history: Vec<IncumbentEvent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outer_bounds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_ties: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_evaluated: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TracePoint>,
    pub options: SolverOptions,
}

impl SolveReport {
    /// Report with no point, no work counted and status optimal.
    pub fn new(detector: &str, opts: &SolverOptions) -> Self {
        SolveReport {
            detector: detector.to_string(),
            status: SolveStatus::Optimal,
            x_star: None,
            objective: None,
            lower_bound: f64::NEG_INFINITY,
            nodes_processed: 0,
            lp_solves: 0,
            lp_iterations: 0,
            cuts_added: 0,
            pool_size: 0,
            ratio_s_over_c: 0.0,
            wall_time: 0.0,
            incumbent_history: Vec::new(),
            outer_bounds: Vec::new(),
            oracle_ties: None,
            n_evaluated: None,
            trace: Vec::new(),
            options: opts.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// Lazy tangent generation at integral points.
    Generate,
    /// Restricted MILP over a fixed pool.
    FixedPool,
}

struct Counters {
    nodes: u64,
    lp_solves: u64,
    lp_iterations: u64,
    cuts_added: u64,
}

struct SearchOutcome {
    status: SolveStatus,
    incumbent: Option<Incumbent>,
    lower_bound: f64,
    history: Vec<IncumbentEvent>,
    trace: Vec<TracePoint>,
}

struct Search<'a> {
    ctx: &'a LossContext,
    opts: &'a SolverOptions,
    lp_opts: LpOptions,
    mode: Mode,
    start: Instant,
    node_budget: u64,
    counters: Counters,
}

impl<'a> Search<'a> {
    fn time_up(&self) -> bool {
        self.opts
            .time_limit
            .is_some_and(|t| self.start.elapsed().as_secs_f64() >= t)
    }

    fn build_lp(&self, pool: &CutPool, node: &Node, active: Option<&[usize]>) -> LpProblem {
        let mut lp = LpProblem::new(self.ctx.k(), self.ctx.n());
        for (j, &v) in node.fixed.iter().enumerate() {
            if v != 0 {
                lp.fix_in_place(j, v).expect("fixings are consistent by construction");
            }
        }
        let push = |lp: &mut LpProblem, cut: &Cut| lp.push_row(LpRow::from(cut)).expect("cuts are finite");
        match active {
            Some(ids) => ids.iter().for_each(|&id| push(&mut lp, &pool.cuts[id])),
            None => pool.cuts.iter().for_each(|c| push(&mut lp, c)),
        }
        lp
    }

    fn solve(&mut self, lp: &LpProblem, warm: Option<&Basis>) -> Result<crate::lp::LpSolution> {
        self.counters.lp_solves += 1;
        let mut sol = solve_lp_with(lp, warm, &self.lp_opts)?;
        self.counters.lp_iterations += sol.iterations as u64;
        if sol.status == LpStatus::IterationLimit && sol.warm_started {
            self.counters.lp_solves += 1;
            sol = solve_lp_with(lp, None, &self.lp_opts)?;
            self.counters.lp_iterations += sol.iterations as u64;
        }
        Ok(sol)
    }

    fn run(&mut self, pool: &mut CutPool) -> Result<SearchOutcome> {
        let opts = self.opts;
        let k = self.ctx.k();
        let mut queue = NodeQueue::new(opts.node_selection);
        let mut root = Node::root(k);
        if opts.pool_scope == PoolScope::PerNode && self.mode == Mode::Generate {
            root.active = Some(Rc::new((0..pool.len()).collect()));
        }
        queue.push(root);

        let mut upper = f64::INFINITY;
        let mut incumbent: Option<Incumbent> = None;
        let mut history = Vec::new();
        let mut trace = Vec::new();
        let mut status = SolveStatus::Optimal;
        let mut failed_bound = f64::INFINITY;

        while let Some(node) = queue.pop() {
            if node.bound >= upper - opts.eps_prune {
                continue;
            }
            if self.counters.nodes >= self.node_budget || self.time_up() {
                status = if self.time_up() { SolveStatus::TimeLimit } else { SolveStatus::NodeLimit };
                let open = queue.min_bound().min(node.bound);
                return Ok(SearchOutcome {
                    status,
                    incumbent,
                    lower_bound: open.min(upper).min(failed_bound),
                    history,
                    trace,
                });
            }
            self.counters.nodes += 1;
            let node_bound = node.bound;

            let mut active: Option<Vec<usize>> = node.active.as_ref().map(|a| a.as_ref().clone());
            let mut lp = self.build_lp(pool, &node, active.as_deref());
            let mut warm = node.warm.clone();
            let mut fractional_rounds = 0;

            loop {
                let sol = self.solve(&lp, warm.as_ref())?;
                match sol.status {
                    LpStatus::Optimal => {}
                    LpStatus::Infeasible => {
                        log::warn!("node LP infeasible at depth {}; pruning", node.depth);
                        break;
                    }
                    LpStatus::IterationLimit => {
                        log::warn!("node LP hit its iteration cap at depth {}", node.depth);
                        status = SolveStatus::NumericalFailure;
                        failed_bound = failed_bound.min(node_bound);
                        break;
                    }
                }
                let f_lp = sol.objective;
                // case (1): the subtree cannot beat the incumbent
                if f_lp >= upper - opts.eps_prune {
                    break;
                }
                match select_branch_var(&sol.x, opts.branch_rule, opts.eps_int) {
                    None => {
                        let signs: Vec<i8> = sol.x.iter().map(|&v| crate::model::sgn(v)).collect();
                        let xr = signs_to_real(&signs);
                        if self.mode == Mode::FixedPool {
                            if f_lp < upper {
                                upper = f_lp;
                                incumbent = Some(Incumbent { x_best: signs, w_best: sol.w.clone(), upper });
                                history.push(IncumbentEvent { node: self.counters.nodes, upper });
                            }
                            break;
                        }
                        let violated = violated_rows(self.ctx, &xr, &sol.w, opts.eps_cut)?;
                        let added = if violated.is_empty() {
                            0
                        } else {
                            self.add_cuts(pool, &mut lp, active.as_mut(), &violated, &xr)?
                        };
                        if added == 0 {
                            // case (2.1): the LP point is feasible for the full problem
                            if !violated.is_empty() {
                                log::debug!("violated rows already cut at this point; accepting");
                            }
                            let w: Vec<f64> = (0..self.ctx.n()).map(|i| self.ctx.loss(i, &xr)).collect();
                            let value: f64 = w.iter().sum();
                            if value < upper {
                                upper = value;
                                incumbent = Some(Incumbent { x_best: signs, w_best: w, upper });
                                history.push(IncumbentEvent { node: self.counters.nodes, upper });
                            }
                            break;
                        }
                        // case (2.2): tightened relaxation, solve again
                        warm = sol.basis;
                    }
                    Some(j) => {
                        if self.mode == Mode::Generate
                            && opts.cut_mode == CutMode::AlsoFractional
                            && fractional_rounds < opts.max_fractional_rounds
                        {
                            let violated = violated_rows(self.ctx, &sol.x, &sol.w, opts.eps_cut)?;
                            if !violated.is_empty() {
                                let added = self.add_cuts(pool, &mut lp, active.as_mut(), &violated, &sol.x)?;
                                if added > 0 {
                                    fractional_rounds += 1;
                                    warm = sol.basis;
                                    continue;
                                }
                            }
                        }
                        // case (3): branch on x_j
                        let shared = active.take().map(Rc::new);
                        let preferred: i8 = if sol.x[j] >= 0.0 { 1 } else { -1 };
                        let make = |v: i8| {
                            let mut fixed = node.fixed.clone();
                            fixed[j] = v;
                            Node {
                                fixed,
                                // the parent's bound is valid too; keeps LP noise from
                                // lowering bounds down the tree
                                bound: f_lp.max(node_bound),
                                depth: node.depth + 1,
                                warm: sol.basis.clone(),
                                active: shared.clone(),
                                seq: 0,
                            }
                        };
                        let order = match opts.node_selection {
                            NodeSelection::DepthFirst => [-preferred, preferred],
                            NodeSelection::BestBound => [preferred, -preferred],
                        };
                        for v in order {
                            queue.push(make(v));
                        }
                        break;
                    }
                }
            }

            if opts.record_trace {
                trace.push(TracePoint {
                    node: self.counters.nodes,
                    open_min: queue.min_bound().min(upper),
                    upper,
                });
            }
        }

        Ok(SearchOutcome {
            status,
            incumbent,
            lower_bound: if status == SolveStatus::Optimal { upper } else { upper.min(failed_bound) },
            history,
            trace,
        })
    }

    /// Adds tangents at `point` for `rows` to the pool and the current LP.
    /// Returns how many rows the LP gained.
    fn add_cuts(
        &mut self,
        pool: &mut CutPool,
        lp: &mut LpProblem,
        active: Option<&mut Vec<usize>>,
        rows: &[usize],
        point: &[f64],
    ) -> Result<usize> {
        let mut added = 0;
        match active {
            None => {
                for &i in rows {
                    let (id, fresh) = pool.get_or_make(self.ctx, i, point)?;
                    if fresh {
                        lp.push_row(LpRow::from(&pool.cuts[id]))?;
                        self.counters.cuts_added += 1;
                        added += 1;
                    }
                }
            }
            Some(ids) => {
                for &i in rows {
                    let (id, fresh) = pool.get_or_make(self.ctx, i, point)?;
                    if fresh {
                        self.counters.cuts_added += 1;
                    }
                    if !ids.contains(&id) {
                        ids.push(id);
                        lp.push_row(LpRow::from(&pool.cuts[id]))?;
                        added += 1;
                    }
                }
            }
        }
        Ok(added)
    }
}

fn finish_report(
    report: &mut SolveReport,
    ctx: &LossContext,
    pool: &CutPool,
    incumbent: Option<&Incumbent>,
    counters: &Counters,
    start: Instant,
) {
    if let Some(inc) = incumbent {
        report.objective = Some(ctx.f_obj_signs(&inc.x_best));
        report.x_star = Some(inc.x_best.clone());
    }
    report.nodes_processed = counters.nodes;
    report.lp_solves = counters.lp_solves;
    report.lp_iterations = counters.lp_iterations;
    report.cuts_added = counters.cuts_added;
    report.pool_size = pool.len() as u64;
    report.ratio_s_over_c = pool.ratio();
    report.wall_time = start.elapsed().as_secs_f64();
}

/// Branch-and-bound with tangent cuts generated on demand, started from the
/// zero-forcing cuts.
pub fn solve_gobmd(inst: &RealInstance, opts: &SolverOptions) -> Result<SolveReport> {
    let start = Instant::now();
    inst.validate()?;
    opts.validate()?;
    let ctx = LossContext::new(inst);
    let mut pool = initial_cuts(inst, &ctx)?;
    solve_gobmd_with_pool(&ctx, &mut pool, opts, start)
}

/// Same as [`solve_gobmd`] from a caller-supplied initial pool.
pub fn solve_gobmd_from(ctx: &LossContext, pool: &mut CutPool, opts: &SolverOptions) -> Result<SolveReport> {
    opts.validate()?;
    solve_gobmd_with_pool(ctx, pool, opts, Instant::now())
}

fn solve_gobmd_with_pool(
    ctx: &LossContext,
    pool: &mut CutPool,
    opts: &SolverOptions,
    start: Instant,
) -> Result<SolveReport> {
    let mut search = Search {
        ctx,
        opts,
        lp_opts: LpOptions { max_iterations: opts.lp_max_iterations },
        mode: Mode::Generate,
        start,
        node_budget: opts.node_limit,
        counters: Counters { nodes: 0, lp_solves: 0, lp_iterations: 0, cuts_added: 0 },
    };
    let out = search.run(pool)?;
    let mut report = SolveReport::new("gobmd", opts);
    report.status = out.status;
    report.lower_bound = out.lower_bound;
    report.incumbent_history = out.history;
    report.trace = out.trace;
    finish_report(&mut report, ctx, pool, out.incumbent.as_ref(), &search.counters, start);
    Ok(report)
}

/// Outer loop: solve the MILP restricted to the current pool exactly, add
/// the tangents its solution violates, repeat until none are violated.
pub fn solve_incremental(inst: &RealInstance, opts: &SolverOptions) -> Result<SolveReport> {
    let start = Instant::now();
    inst.validate()?;
    opts.validate()?;
    let ctx = LossContext::new(inst);
    let mut pool = initial_cuts(inst, &ctx)?;
    let inner = SolverOptions { pool_scope: PoolScope::Global, record_trace: false, ..opts.clone() };
    let mut counters = Counters { nodes: 0, lp_solves: 0, lp_iterations: 0, cuts_added: 0 };
    let mut report = SolveReport::new("incremental", opts);
    let mut best: Option<Incumbent> = None;

    loop {
        let mut search = Search {
            ctx: &ctx,
            opts: &inner,
            lp_opts: LpOptions { max_iterations: opts.lp_max_iterations },
            mode: Mode::FixedPool,
            start,
            node_budget: opts.node_limit.saturating_sub(counters.nodes),
            counters: Counters { nodes: 0, lp_solves: 0, lp_iterations: 0, cuts_added: 0 },
        };
        let out = search.run(&mut pool)?;
        counters.nodes += search.counters.nodes;
        counters.lp_solves += search.counters.lp_solves;
        counters.lp_iterations += search.counters.lp_iterations;

        if out.status != SolveStatus::Optimal {
            report.status = out.status;
            report.lower_bound = report.outer_bounds.last().copied().unwrap_or(f64::NEG_INFINITY);
            break;
        }
        let Some(inc) = out.incumbent else {
            // a restricted MILP over the box always has a solution
            report.status = SolveStatus::NumericalFailure;
            break;
        };
        report.outer_bounds.push(inc.upper);
        let xr = signs_to_real(&inc.x_best);
        let violated = violated_rows(&ctx, &xr, &inc.w_best, opts.eps_cut)?;
        let mut added = 0;
        for &i in &violated {
            if pool.insert(ctx.make_cut(i, &xr)?).is_some() {
                added += 1;
            }
        }
        counters.cuts_added += added;
        let value = ctx.f_obj_signs(&inc.x_best);
        if best.as_ref().is_none_or(|b| value < b.upper) {
            let w = (0..ctx.n()).map(|i| ctx.loss(i, &xr)).collect();
            best = Some(Incumbent { x_best: inc.x_best.clone(), w_best: w, upper: value });
            report.incumbent_history.push(IncumbentEvent { node: counters.nodes, upper: value });
        }
        if violated.is_empty() || added == 0 {
            report.status = SolveStatus::Optimal;
            report.lower_bound = inc.upper;
            // the restricted optimum is itself optimal here
            best = Some(Incumbent { x_best: inc.x_best, w_best: inc.w_best, upper: value });
            break;
        }
        if search.time_up() {
            report.status = SolveStatus::TimeLimit;
            report.lower_bound = inc.upper;
            break;
        }
    }
    finish_report(&mut report, &ctx, &pool, best.as_ref(), &counters, start);
    Ok(report)
}
