//! Best-first branch and bound over parameter boxes.
//!
//! Each node gets a lower bound `β(M)` and a feasible candidate from its case.
//! Nodes with `β(M) ≥ E* − ε` are pruned, the remaining node with the lowest
//! bound is bisected along its longest edge, and the search stops when no
//! node is left or a limit is hit.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::interval::ParamBox;

/// Bound evaluation of one box.
#[derive(Debug, Clone)]
pub struct NodeEval<C> {
    /// Lower bound of the energy over the box.
    pub beta: f64,
    /// Energy of `candidate`.
    pub upper: f64,
    pub candidate: C,
    /// Set when the case had to repair its upper-bound computation.
    pub flagged: bool,
}

/// A problem the driver can search.
pub trait BoundCase: Sync {
    type Candidate: Clone + Send;

    fn initial_box(&self) -> ParamBox;

    /// `min(n_x, n_y)`; the tolerance is `ε = scale · ε₀`.
    fn epsilon_scale(&self) -> usize;

    fn evaluate(&self, node: &ParamBox) -> Result<NodeEval<Self::Candidate>>;

    /// Local descent from a new incumbent. Must return a feasible candidate
    /// with its true energy, and only when that energy is lower.
    fn polish(&self, _candidate: &Self::Candidate, _value: f64) -> Option<(Self::Candidate, f64)> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub max_nodes: usize,
    pub max_depth: Option<usize>,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_nodes: 1_000_000, max_depth: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnbConfig {
    pub eps0: f64,
    pub limits: Limits,
    /// Nodes bisected per iteration; 1 is plain best-first.
    pub batch: usize,
    pub polish: Polish,
}

/// When the driver calls [`BoundCase::polish`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Polish {
    /// Upper bounds come from the node evaluation only.
    #[default]
    Off,
    /// Each new incumbent.
    Incumbent,
    /// Every evaluated node's candidate.
    Every,
}

impl std::str::FromStr for Polish {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" | "false" => Ok(Polish::Off),
            "incumbent" | "true" => Ok(Polish::Incumbent),
            "every" => Ok(Polish::Every),
            _ => Err(Error::Config(format!("unknown polish mode {s:?}"))),
        }
    }
}

impl BnbConfig {
    pub fn new(eps0: f64) -> Self {
        Self { eps0, limits: Limits::default(), batch: 1, polish: Polish::Off }
    }

    /// `ε₀ = 0` with branching depth capped at 10.
    pub fn heuristic() -> Self {
        Self { eps0: 0.0, limits: Limits { max_depth: Some(10), ..Limits::default() }, batch: 1, polish: Polish::Off }
    }
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self::new(8.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    DepthLimited,
    NodeBudget,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Converged => "converged",
            Status::DepthLimited => "depth_limited",
            Status::NodeBudget => "node_budget",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub best_upper: f64,
    pub best_lower: f64,
    pub n_active: usize,
    pub selected_widths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub nodes_evaluated: usize,
    pub flagged_nodes: usize,
}

impl Trace {
    /// `iter,best_upper,best_lower,n_active,w0,w1,...`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let dim = self.records.first().map_or(0, |r| r.selected_widths.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["iter", "best_upper", "best_lower", "n_active"].map(String::from).to_vec();
        header.extend((0..dim).map(|k| format!("w{k}")));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![r.iter.to_string(), r.best_upper.to_string(), r.best_lower.to_string(), r.n_active.to_string()];
            row.extend(r.selected_widths.iter().map(f64::to_string));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("{other:?}")),
    }
}

#[derive(Debug, Clone)]
pub struct Outcome<C> {
    pub candidate: C,
    pub best_upper: f64,
    /// Lowest bound over nodes not proven within `ε`; equals the last
    /// selected bound on convergence.
    pub best_lower: f64,
    pub epsilon: f64,
    pub status: Status,
    pub trace: Trace,
}

/// A callback failure, with the trace up to that point.
#[derive(Debug, thiserror::Error)]
#[error("node evaluation failed after {} iterations: {source}", trace.records.len())]
pub struct Aborted {
    #[source]
    pub source: Error,
    pub trace: Trace,
}

struct Node {
    beta: f64,
    seq: u64,
    depth: usize,
    bx: ParamBox,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // reversed: the max-heap pops the lowest β, earliest inserted first
    fn cmp(&self, other: &Self) -> Ordering {
        other.beta.total_cmp(&self.beta).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Runs the search from the case's initial box.
pub fn run<B: BoundCase>(case: &B, config: &BnbConfig) -> std::result::Result<Outcome<B::Candidate>, Aborted> {
    run_from(case, case.initial_box(), config)
}

pub fn run_from<B: BoundCase>(case: &B, initial: ParamBox, config: &BnbConfig) -> std::result::Result<Outcome<B::Candidate>, Aborted> {
    let epsilon = case.epsilon_scale() as f64 * config.eps0;
    let mut trace = Trace::default();
    let abort = |source: Error, trace: &Trace| Aborted { source, trace: trace.clone() };

    let root = case.evaluate(&initial).map_err(|e| abort(e, &trace))?;
    trace.nodes_evaluated = 1;
    trace.flagged_nodes += root.flagged as usize;
    let mut best_upper = root.upper;
    let mut best = root.candidate;
    if config.polish != Polish::Off {
        if let Some((c, v)) = case.polish(&best, best_upper) {
            best = c;
            best_upper = v;
        }
    }

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(Node { beta: root.beta, seq, depth: 0, bx: initial });
    let mut stranded_lower = f64::INFINITY;
    let mut last_lower = root.beta.min(best_upper);
    let mut status = Status::Converged;
    let batch = config.batch.max(1);

    loop {
        // the heap top has the lowest β, so pruning it until one survives prunes all
        while heap.peek().is_some_and(|n| n.beta >= best_upper - epsilon) {
            heap.pop();
        }
        let Some(front) = heap.peek() else { break };
        last_lower = front.beta;

        let mut selected = Vec::with_capacity(batch);
        while selected.len() < batch {
            let Some(node) = heap.pop() else { break };
            if node.beta >= best_upper - epsilon {
                continue;
            }
            if config.limits.max_depth.is_some_and(|d| node.depth >= d) {
                stranded_lower = stranded_lower.min(node.beta);
                status = Status::DepthLimited;
                continue;
            }
            selected.push(node);
        }
        if selected.is_empty() {
            continue;
        }
        if trace.nodes_evaluated + 2 * selected.len() > config.limits.max_nodes {
            for node in selected {
                heap.push(node);
            }
            status = Status::NodeBudget;
            break;
        }
        trace.records.push(TraceRecord {
            iter: trace.records.len(),
            best_upper,
            best_lower: last_lower.min(stranded_lower),
            n_active: heap.len() + selected.len(),
            selected_widths: selected[0].bx.widths(),
        });

        let mut children = Vec::with_capacity(2 * selected.len());
        for node in &selected {
            let (a, b) = node.bx.bisect_longest_edge().map_err(|e| abort(e, &trace))?;
            children.push((a, node.depth + 1, node.beta));
            children.push((b, node.depth + 1, node.beta));
        }
        // collect keeps child order, so the reduction below is deterministic
        let evals: Vec<Result<NodeEval<B::Candidate>>> = children
            .par_iter()
            .map(|(bx, _, _)| {
                let mut eval = case.evaluate(bx)?;
                if config.polish == Polish::Every {
                    if let Some((c, v)) = case.polish(&eval.candidate, eval.upper) {
                        eval.candidate = c;
                        eval.upper = v;
                    }
                }
                Ok(eval)
            })
            .collect();
        for ((bx, depth, parent_beta), eval) in children.into_iter().zip(evals) {
            let eval = eval.map_err(|e| abort(e, &trace))?;
            trace.nodes_evaluated += 1;
            trace.flagged_nodes += eval.flagged as usize;
            if eval.upper < best_upper {
                best_upper = eval.upper;
                best = eval.candidate;
                if config.polish == Polish::Incumbent {
                    if let Some((c, v)) = case.polish(&best, best_upper) {
                        best = c;
                        best_upper = v;
                    }
                }
            }
            let beta = eval.beta.max(parent_beta);
            if beta < best_upper - epsilon {
                seq += 1;
                heap.push(Node { beta, seq, depth, bx });
            }
        }
    }

    let open_lower = heap.iter().map(|n| n.beta).fold(stranded_lower, f64::min);
    let best_lower = if heap.is_empty() && stranded_lower.is_infinite() { last_lower } else { open_lower };
    Ok(Outcome { candidate: best, best_upper, best_lower: best_lower.min(best_upper), epsilon, status, trace })
}
