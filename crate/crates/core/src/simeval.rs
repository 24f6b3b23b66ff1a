//! Deterministic event queue and the two-link backlog experiment.
//!
//! Content sizes are in kilobits and link capacities in kilobits per second.
//! Each link is a fluid queue draining at its capacity.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Capacity of each link in the two-link experiment, in kb/s.
pub const LINK_CAPACITY_KBPS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum WorkloadError {
    #[error("Pareto shape must be > 1, got {0}")]
    Shape(f64),
    #[error("Pareto scale must be > 0, got {0}")]
    Scale(f64),
    #[error("load fraction must be in (0, 1], got {0}")]
    Load(f64),
}

struct Scheduled<E> {
    time: f64,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    // BinaryHeap is a max-heap; reverse so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Time-ordered event queue. Events at equal times pop in insertion order.
pub struct EventQueue<E> {
    heap: BinaryHeap<Scheduled<E>>,
    now: f64,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self { heap: BinaryHeap::new(), now: 0.0, next_seq: 0 }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Current simulation clock, in seconds.
    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedules at an absolute time. Times in the past are clamped to now.
    pub fn schedule_at(&mut self, time: f64, event: E) {
        let time = if time < self.now { self.now } else { time };
        self.heap.push(Scheduled { time, seq: self.next_seq, event });
        self.next_seq += 1;
    }

    pub fn schedule_in(&mut self, delay: f64, event: E) {
        self.schedule_at(self.now + delay.max(0.0), event);
    }

    pub fn pop(&mut self) -> Option<(f64, E)> {
        let s = self.heap.pop()?;
        self.now = s.time;
        Some((s.time, s.event))
    }
}

/// A link modeled as a fluid queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidLinkQueue {
    pub capacity: f64,
    pub backlog: f64,
}

impl FluidLinkQueue {
    pub fn new(capacity: f64) -> Self {
        Self { capacity, backlog: 0.0 }
    }

    pub fn is_empty(&self) -> bool {
        self.backlog <= 0.0
    }

    pub fn enqueue(&mut self, amount: f64) {
        self.backlog += amount;
    }

    /// Drains for `dt` seconds and returns the integral of the backlog over
    /// that interval.
    pub fn drain(&mut self, dt: f64) -> f64 {
        let b = self.backlog;
        let drained = self.capacity * dt;
        if b >= drained {
            self.backlog = b - drained;
            dt * (b - drained / 2.0)
        } else {
            self.backlog = 0.0;
            // Linear decay to zero over b / capacity seconds.
            b * b / (2.0 * self.capacity)
        }
    }
}

/// Pareto size distribution with shape `alpha` and scale (minimum) `x_m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParetoWorkload {
    pub alpha: f64,
    pub x_m: f64,
    pub seed: u64,
}

impl ParetoWorkload {
    pub fn new(alpha: f64, x_m: f64, seed: u64) -> Result<Self, WorkloadError> {
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(WorkloadError::Shape(alpha));
        }
        if !(x_m > 0.0 && x_m.is_finite()) {
            return Err(WorkloadError::Scale(x_m));
        }
        Ok(Self { alpha, x_m, seed })
    }

    /// Workload whose mean offered load is `rho` of the two-link capacity.
    pub fn for_load(alpha: f64, rho: f64, seed: u64) -> Result<Self, WorkloadError> {
        Self::new(alpha, scale_for_load(alpha, rho)?, seed)
    }

    pub fn mean(&self) -> f64 {
        self.alpha * self.x_m / (self.alpha - 1.0)
    }

    /// Infinite deterministic stream of sizes in kilobits.
    pub fn stream(&self) -> ParetoStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(SIZE_STREAM);
        ParetoStream { alpha: self.alpha, x_m: self.x_m, rng }
    }
}

const SIZE_STREAM: u64 = 0;
const POLICY_STREAM: u64 = 1;

pub struct ParetoStream {
    alpha: f64,
    x_m: f64,
    rng: ChaCha8Rng,
}

impl Iterator for ParetoStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(pareto_sample(self.alpha, self.x_m, &mut self.rng))
    }
}

/// Inverse-CDF draw `x_m * U^(-1/alpha)` with `U` uniform on (0, 1].
pub fn pareto_sample<R: Rng + ?Sized>(alpha: f64, x_m: f64, rng: &mut R) -> f64 {
    let u = 1.0 - rng.gen::<f64>();
    pareto_quantile(alpha, x_m, u)
}

pub fn pareto_quantile(alpha: f64, x_m: f64, u: f64) -> f64 {
    x_m * u.powf(-1.0 / alpha)
}

/// Scale giving a mean size of `2 * rho` kilobits, i.e. offered load `rho`
/// against the 2 kb/s of total capacity.
pub fn scale_for_load(alpha: f64, rho: f64) -> Result<f64, WorkloadError> {
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(WorkloadError::Shape(alpha));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(WorkloadError::Load(rho));
    }
    Ok(2.0 * rho * (alpha - 1.0) / alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    /// Size-oblivious: take an empty link if there is one, else a random one.
    Oblivious,
    /// Size-aware: take the link with the smaller backlog.
    LeastBacklog,
}

/// Empty link if exactly one is empty; link 0 if both are; a fair coin
/// flip otherwise.
pub fn policy1_assign<R: Rng + ?Sized>(backlogs: [f64; 2], rng: &mut R) -> usize {
    match (backlogs[0] <= 0.0, backlogs[1] <= 0.0) {
        (true, _) => 0,
        (false, true) => 1,
        (false, false) => usize::from(rng.gen::<bool>()),
    }
}

/// Argmin of the backlogs, ties to link 0.
pub fn policy2_assign(backlogs: [f64; 2]) -> usize {
    usize::from(backlogs[1] < backlogs[0])
}

/// Runs the two-link experiment over an explicit size sequence. One content
/// arrives at each integer time `t = 1..=horizon`; the returned value is the
/// time-average of total backlog over `[0, horizon]`, in kilobits.
pub fn run_two_link_with_sizes<I, R>(sizes: I, horizon: u64, policy: Policy, rng: &mut R) -> f64
where
    I: IntoIterator<Item = f64>,
    R: Rng + ?Sized,
{
    assert!(horizon >= 1, "horizon must be at least one second");
    let mut links = [FluidLinkQueue::new(LINK_CAPACITY_KBPS); 2];
    // Nothing is queued before the first arrival at t = 1.
    let mut area = 0.0;
    let mut sizes = sizes.into_iter();
    for _t in 1..horizon {
        let size = sizes.next().expect("size stream ended early");
        let backlogs = [links[0].backlog, links[1].backlog];
        let pick = match policy {
            Policy::Oblivious => policy1_assign(backlogs, rng),
            Policy::LeastBacklog => policy2_assign(backlogs),
        };
        links[pick].enqueue(size);
        area += links[0].drain(1.0) + links[1].drain(1.0);
    }
    // The arrival at t = horizon adds no area inside the window.
    area / horizon as f64
}

/// Average total backlog for one `(alpha, rho, seed, policy)` cell.
pub fn run_two_link_experiment(
    alpha: f64,
    rho: f64,
    horizon: u64,
    seed: u64,
    policy: Policy,
) -> Result<f64, WorkloadError> {
    let workload = ParetoWorkload::for_load(alpha, rho, seed)?;
    let mut coin = policy_rng(seed);
    Ok(run_two_link_with_sizes(workload.stream(), horizon, policy, &mut coin))
}

/// Generator for Policy 1's coin flips, independent of the size stream.
pub fn policy_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(POLICY_STREAM);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub rho: f64,
    pub seed: u64,
    pub avg_backlog_p1_kb: f64,
    pub avg_backlog_p2_kb: f64,
    pub gain_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub alpha: f64,
    pub rho: f64,
    pub seeds: usize,
    pub mean_gain_pct: f64,
    pub max_gain_pct: f64,
    pub min_gain_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<AlphaSummary>,
}

impl SweepTable {
    /// Mean over alphas of the per-alpha mean gain.
    pub fn overall_mean_gain(&self) -> f64 {
        self.summary.iter().map(|s| s.mean_gain_pct).sum::<f64>() / self.summary.len() as f64
    }

    /// Largest per-alpha mean gain.
    pub fn max_mean_gain(&self) -> f64 {
        self.summary.iter().map(|s| s.mean_gain_pct).fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn gain_pct(p1: f64, p2: f64) -> f64 {
    if p1 > 0.0 {
        100.0 * (p1 - p2) / p1
    } else {
        0.0
    }
}

/// One coupled cell: both policies see the same size sequence.
pub fn run_cell(alpha: f64, rho: f64, horizon: u64, seed: u64) -> Result<SweepRow, WorkloadError> {
    let workload = ParetoWorkload::for_load(alpha, rho, seed)?;
    let sizes: Vec<f64> = workload.stream().take(horizon as usize).collect();
    let p1 = run_two_link_with_sizes(sizes.iter().copied(), horizon, Policy::Oblivious, &mut policy_rng(seed));
    let p2 = run_two_link_with_sizes(sizes.iter().copied(), horizon, Policy::LeastBacklog, &mut policy_rng(seed));
    Ok(SweepRow {
        alpha,
        rho,
        seed,
        avg_backlog_p1_kb: p1,
        avg_backlog_p2_kb: p2,
        gain_pct: gain_pct(p1, p2),
    })
}

pub fn summarize(alpha: f64, rho: f64, rows: &[SweepRow]) -> AlphaSummary {
    let gains = rows.iter().map(|r| r.gain_pct);
    AlphaSummary {
        alpha,
        rho,
        seeds: rows.len(),
        mean_gain_pct: gains.clone().sum::<f64>() / rows.len() as f64,
        max_gain_pct: gains.clone().fold(f64::NEG_INFINITY, f64::max),
        min_gain_pct: gains.fold(f64::INFINITY, f64::min),
    }
}

/// Runs every `(alpha, seed)` cell and summarizes gains per alpha.
pub fn sweep_alpha(alphas: &[f64], rho: f64, horizon: u64, seeds: &[u64]) -> Result<SweepTable, WorkloadError> {
    assert!(!seeds.is_empty(), "sweep needs at least one seed");
    let mut table = SweepTable::default();
    for &alpha in alphas {
        let rows = seeds
            .iter()
            .map(|&seed| run_cell(alpha, rho, horizon, seed))
            .collect::<Result<Vec<_>, _>>()?;
        table.summary.push(summarize(alpha, rho, &rows));
        table.rows.extend(rows);
    }
    Ok(table)
}

/// `min, min + step, ..., max` with values rounded to 10 decimals so that
/// accumulated float error does not leak into output.
pub fn alpha_grid(min: f64, max: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0 && max >= min);
    let n = ((max - min) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|i| ((min + i as f64 * step) * 1e10).round() / 1e10).collect()
}
