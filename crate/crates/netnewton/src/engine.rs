//! Deterministic event simulator for the asynchronous method, plus the
//! synchronous truncated-series baseline and an asynchronous gossip baseline.
//!
//! The simulator is strictly sequential: one activation per discrete step,
//! sampled from the activation schedule. Wall-clock time enters only through
//! an optional per-agent cost model (one activation of agent `i` costs
//! `cost_i` gradient-evaluation units; a synchronous iteration costs the
//! slowest agent's `cost_i` since all agents work in parallel).
//!
//! Everything is bit-deterministic given the schedule seed.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DVector;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::newton::{
    compute_d_block, compute_d0_i, compute_g_i, compute_newton_dir_i, step_active_agent,
    AgentState, TheoryConstants,
};
use crate::objectives::ProblemSpec;
use crate::{Error, Result};

/// How the active agent's stepsize is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationMode {
    /// `x_i += eps d_i`. The paper's experiments use this even with
    /// nonuniform activation (an `eps/p_i = 1` configuration); with uniform
    /// probabilities it equals the scaled mode at stepsize `n eps`.
    Unscaled,
    /// `x_i += (eps / p_i) d_i`, the form the convergence theory analyzes.
    Scaled,
}

impl fmt::Display for ActivationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationMode::Unscaled => write!(f, "unscaled"),
            ActivationMode::Scaled => write!(f, "scaled"),
        }
    }
}

/// Who wakes up, how often, and how their step is scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSchedule {
    p: Vec<f64>,
    mode: ActivationMode,
    seed: u64,
}

impl ActivationSchedule {
    /// Entries must lie in (0, 1) and sum to 1 within 1e-9. The single-agent
    /// degenerate schedule `[1.0]` is allowed so one-agent sanity runs work.
    pub fn new(p: Vec<f64>, mode: ActivationMode, seed: u64) -> Result<ActivationSchedule> {
        if p.is_empty() {
            return Err(Error::Schedule("empty activation probabilities".into()));
        }
        let upper_open = p.len() > 1;
        let mut total = 0.0;
        for &pi in &p {
            let in_range = pi > 0.0 && if upper_open { pi < 1.0 } else { pi <= 1.0 };
            if !in_range {
                return Err(Error::Schedule(format!(
                    "activation probability {pi} outside (0, 1)"
                )));
            }
            total += pi;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Schedule(format!(
                "activation probabilities sum to {total}, expected 1"
            )));
        }
        Ok(ActivationSchedule { p, mode, seed })
    }

    pub fn uniform(n: usize, mode: ActivationMode, seed: u64) -> Result<ActivationSchedule> {
        ActivationSchedule::new(vec![1.0 / n as f64; n.max(1)], mode, seed)
    }

    pub fn n(&self) -> usize {
        self.p.len()
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn mode(&self) -> ActivationMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pi_min(&self) -> f64 {
        self.p.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn pi_max(&self) -> f64 {
        self.p.iter().cloned().fold(0.0, f64::max)
    }

    /// Same probabilities and mode under a different seed.
    pub fn with_seed(&self, seed: u64) -> ActivationSchedule {
        ActivationSchedule {
            p: self.p.clone(),
            mode: self.mode,
            seed,
        }
    }
}

/// Per-agent activation cost in gradient-evaluation time units.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeModel {
    costs: Vec<f64>,
}

impl TimeModel {
    pub fn new(costs: Vec<f64>) -> Result<TimeModel> {
        if costs.is_empty() || costs.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
            return Err(Error::Schedule(
                "time model costs must be positive and finite".into(),
            ));
        }
        Ok(TimeModel { costs })
    }

    pub fn uniform(n: usize) -> TimeModel {
        TimeModel {
            costs: vec![1.0; n],
        }
    }

    /// All agents cost 1 except `agent`, which costs `factor`.
    pub fn slow_agent(n: usize, agent: usize, factor: f64) -> Result<TimeModel> {
        if agent >= n {
            return Err(Error::Schedule(format!(
                "slow agent {agent} out of range for {n} agents"
            )));
        }
        let mut costs = vec![1.0; n];
        costs[agent] = factor;
        TimeModel::new(costs)
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn max_cost(&self) -> f64 {
        self.costs.iter().cloned().fold(0.0, f64::max)
    }
}

/// Everything one run needs. `x0 = None` starts from the all-zeros vector.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub spec: ProblemSpec,
    pub schedule: ActivationSchedule,
    pub eps: f64,
    /// Total activations (asynchronous) or iterations (synchronous).
    pub t_max: usize,
    /// Full-state snapshot stride; the objective is recorded every step.
    pub record_every: usize,
    pub x0: Option<DVector<f64>>,
    pub time_model: Option<TimeModel>,
    /// Stop early once the recorded objective falls to this value.
    pub f_target: Option<f64>,
}

impl RunConfig {
    pub fn new(spec: ProblemSpec, schedule: ActivationSchedule, eps: f64, t_max: usize) -> RunConfig {
        RunConfig {
            spec,
            schedule,
            eps,
            t_max,
            record_every: 1,
            x0: None,
            time_model: None,
            f_target: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.schedule.n() != self.spec.n() {
            return Err(Error::Schedule(format!(
                "schedule has {} probabilities for {} agents",
                self.schedule.n(),
                self.spec.n()
            )));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::Schedule(format!(
                "stepsize must be positive and finite, got {}",
                self.eps
            )));
        }
        if self.record_every == 0 {
            return Err(Error::Schedule("record_every must be >= 1".into()));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != self.spec.stacked_len() {
                return Err(Error::Dimension {
                    context: "run x0",
                    expected: self.spec.stacked_len(),
                    got: x0.len(),
                });
            }
        }
        if let Some(tm) = &self.time_model {
            if tm.costs().len() != self.spec.n() {
                return Err(Error::Dimension {
                    context: "time model",
                    expected: self.spec.n(),
                    got: tm.costs().len(),
                });
            }
        }
        Ok(())
    }

    fn initial_x(&self) -> DVector<f64> {
        self.x0
            .clone()
            .unwrap_or_else(|| DVector::zeros(self.spec.stacked_len()))
    }
}

/// Which algorithm produced a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    AsyncNewton,
    SyncNewton { k: usize },
    Gossip,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::AsyncNewton => write!(f, "async_newton"),
            Algorithm::SyncNewton { k } => write!(f, "sync_newton_{k}"),
            Algorithm::Gossip => write!(f, "gossip"),
        }
    }
}

/// One recorded step: the objective after activation `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: usize,
    /// Active agent; `None` for the initial record and synchronous
    /// iterations, the initiating agent for gossip.
    pub active: Option<usize>,
    pub f_value: f64,
    pub elapsed: f64,
}

/// A full-state snapshot. `prev_active` holds the active agent's block as
/// it was *before* this activation, so the previous iterate (and with it
/// the previous splitting matrix) can be reconstructed exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: usize,
    pub x: DVector<f64>,
    pub prev_active: Option<(usize, DVector<f64>)>,
}

impl Snapshot {
    /// The iterate one activation earlier: this snapshot's state with the
    /// active agent's block rolled back. Without activation info (initial
    /// record, synchronous or gossip traces) the state itself is returned.
    pub fn previous_x(&self) -> DVector<f64> {
        let mut x = self.x.clone();
        if let Some((agent, block)) = &self.prev_active {
            x.rows_mut(agent * block.len(), block.len()).copy_from(block);
        }
        x
    }
}

/// The output of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub algorithm: Algorithm,
    pub records: Vec<TraceRecord>,
    pub snapshots: Vec<Snapshot>,
    pub final_x: DVector<f64>,
}

impl Trace {
    pub fn final_f(&self) -> f64 {
        self.records.last().expect("trace has an initial record").f_value
    }

    pub fn final_elapsed(&self) -> f64 {
        self.records.last().expect("trace has an initial record").elapsed
    }
}

struct TraceBuilder {
    algorithm: Algorithm,
    record_every: usize,
    records: Vec<TraceRecord>,
    snapshots: Vec<Snapshot>,
}

impl TraceBuilder {
    fn new(algorithm: Algorithm, record_every: usize, x0: &DVector<f64>, f0: f64) -> TraceBuilder {
        TraceBuilder {
            algorithm,
            record_every,
            records: vec![TraceRecord {
                t: 0,
                active: None,
                f_value: f0,
                elapsed: 0.0,
            }],
            snapshots: vec![Snapshot {
                t: 0,
                x: x0.clone(),
                prev_active: None,
            }],
        }
    }

    fn push(
        &mut self,
        t: usize,
        active: Option<usize>,
        f_value: f64,
        elapsed: f64,
        x: &DVector<f64>,
        prev_active: Option<(usize, DVector<f64>)>,
    ) {
        self.records.push(TraceRecord {
            t,
            active,
            f_value,
            elapsed,
        });
        if t % self.record_every == 0 {
            self.snapshots.push(Snapshot {
                t,
                x: x.clone(),
                prev_active,
            });
        }
    }

    fn finish(mut self, t: usize, x: DVector<f64>, prev_active: Option<(usize, DVector<f64>)>) -> Trace {
        if self.snapshots.last().map(|s| s.t) != Some(t) {
            self.snapshots.push(Snapshot {
                t,
                x: x.clone(),
                prev_active,
            });
        }
        Trace {
            algorithm: self.algorithm,
            records: self.records,
            snapshots: self.snapshots,
            final_x: x,
        }
    }
}

/// Per-agent directions computed exactly as the agents compute them, with
/// every buffer synchronized to the global state `x`. Stacked, this equals
/// `-hatH^{-1} g` from the dense oracle.
pub fn fresh_directions(spec: &ProblemSpec, x: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, dim) = (spec.n(), spec.dim());
    let w = spec.w();
    let mut d_mats = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    let mut d0 = Vec::with_capacity(n);
    for i in 0..n {
        let x_i = x.rows(i * dim, dim).into_owned();
        let buf: BTreeMap<usize, DVector<f64>> = w
            .neighbors(i)
            .iter()
            .map(|&j| (j, x.rows(j * dim, dim).into_owned()))
            .collect();
        let d_mat = compute_d_block(spec.local(i), &x_i, spec.alpha(), w.diag(i))?;
        let g_i = compute_g_i(spec.local(i), &x_i, spec.alpha(), w, i, &buf)?;
        d0.push(compute_d0_i(&d_mat, &g_i)?);
        d_mats.push(d_mat);
        grads.push(g_i);
    }
    let mut out = DVector::zeros(spec.stacked_len());
    for i in 0..n {
        let buf_d0: BTreeMap<usize, DVector<f64>> = w
            .neighbors(i)
            .iter()
            .map(|&j| (j, d0[j].clone()))
            .collect();
        let d_i = compute_newton_dir_i(&d_mats[i], &grads[i], &d0[i], w, i, &buf_d0)?;
        out.rows_mut(i * dim, dim).copy_from(&d_i);
    }
    Ok(out)
}

fn init_agents(spec: &ProblemSpec, x: &DVector<f64>) -> Result<Vec<AgentState>> {
    let (n, dim) = (spec.n(), spec.dim());
    let w = spec.w();
    // Initial broadcast: every buffer holds the true neighbor state.
    let mut agents: Vec<AgentState> = (0..n)
        .map(|i| {
            let x_i = x.rows(i * dim, dim).into_owned();
            let buf_x: BTreeMap<usize, DVector<f64>> = w
                .neighbors(i)
                .iter()
                .map(|&j| (j, x.rows(j * dim, dim).into_owned()))
                .collect();
            AgentState {
                x: x_i,
                d_mat: nalgebra::DMatrix::zeros(dim, dim),
                g: DVector::zeros(dim),
                d0: DVector::zeros(dim),
                buf_x,
                buf_d0: BTreeMap::new(),
            }
        })
        .collect();
    for i in 0..n {
        let d_mat = compute_d_block(spec.local(i), &agents[i].x, spec.alpha(), w.diag(i))?;
        let g = compute_g_i(spec.local(i), &agents[i].x, spec.alpha(), w, i, &agents[i].buf_x)?;
        let d0 = compute_d0_i(&d_mat, &g)?;
        agents[i].d_mat = d_mat;
        agents[i].g = g;
        agents[i].d0 = d0;
    }
    // Exchange the initial zeroth-order directions.
    for i in 0..n {
        for &j in w.neighbors(i) {
            let d0_j = agents[j].d0.clone();
            agents[i].buf_d0.insert(j, d0_j);
        }
    }
    Ok(agents)
}

fn stack(agents: &[AgentState], dim: usize) -> DVector<f64> {
    let mut x = DVector::zeros(agents.len() * dim);
    for (i, a) in agents.iter().enumerate() {
        x.rows_mut(i * dim, dim).copy_from(&a.x);
    }
    x
}

/// Runs the asynchronous method: per activation the sampled agent takes a
/// step from its buffered view, rebroadcasts, and its neighbors refresh and
/// rebroadcast their own zeroth-order directions (which their neighbors
/// passively store).
pub fn run_async_newton(cfg: &RunConfig) -> Result<Trace> {
    cfg.validate()?;
    let spec = &cfg.spec;
    let (n, dim) = (spec.n(), spec.dim());
    let w = spec.w();
    let x0 = cfg.initial_x();
    let mut agents = init_agents(spec, &x0)?;
    let costs = cfg
        .time_model
        .clone()
        .unwrap_or_else(|| TimeModel::uniform(n));

    let f0 = spec.penalized_value(&x0)?;
    let mut builder = TraceBuilder::new(Algorithm::AsyncNewton, cfg.record_every, &x0, f0);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.schedule.seed());
    let sampler = WeightedIndex::new(cfg.schedule.p())
        .map_err(|e| Error::Schedule(format!("invalid activation weights: {e}")))?;
    let scaled = cfg.schedule.mode() == ActivationMode::Scaled;

    let mut elapsed = 0.0;
    let mut last_t = 0;
    let mut last_prev: Option<(usize, DVector<f64>)> = None;
    for t in 1..=cfg.t_max {
        let i = sampler.sample(&mut rng);

        // The active agent recomputes from its buffers and steps.
        let (g_i, d0_i) = {
            let a = &agents[i];
            let g = compute_g_i(spec.local(i), &a.x, spec.alpha(), w, i, &a.buf_x)?;
            let d0 = compute_d0_i(&a.d_mat, &g)?;
            (g, d0)
        };
        let d_i = compute_newton_dir_i(
            &agents[i].d_mat,
            &g_i,
            &d0_i,
            w,
            i,
            &agents[i].buf_d0,
        )?;
        let prev_block = agents[i].x.clone();
        let new_x = step_active_agent(&prev_block, &d_i, cfg.eps, cfg.schedule.p()[i], scaled);
        agents[i].x = new_x;
        agents[i].g = g_i;
        agents[i].d0 = d0_i;

        // Refresh the active agent's own block quantities at the new iterate.
        agents[i].d_mat = compute_d_block(spec.local(i), &agents[i].x, spec.alpha(), w.diag(i))?;
        agents[i].g = compute_g_i(spec.local(i), &agents[i].x, spec.alpha(), w, i, &agents[i].buf_x)?;
        agents[i].d0 = compute_d0_i(&agents[i].d_mat, &agents[i].g)?;

        // Broadcast the new iterate and direction to the neighborhood.
        let x_i = agents[i].x.clone();
        let d0_i = agents[i].d0.clone();
        for &j in w.neighbors(i) {
            agents[j].buf_x.insert(i, x_i.clone());
            agents[j].buf_d0.insert(i, d0_i.clone());
        }

        // Each neighbor refreshes its own gradient and direction against the
        // new information and rebroadcasts the direction; the rebroadcast
        // reaches all of that neighbor's neighbors, the active agent included.
        for &j in w.neighbors(i) {
            let g_j = compute_g_i(spec.local(j), &agents[j].x, spec.alpha(), w, j, &agents[j].buf_x)?;
            let d0_j = compute_d0_i(&agents[j].d_mat, &g_j)?;
            agents[j].g = g_j;
            agents[j].d0 = d0_j.clone();
            for &l in w.neighbors(j) {
                agents[l].buf_d0.insert(j, d0_j.clone());
            }
        }

        elapsed += costs.costs()[i];
        let x = stack(&agents, dim);
        let f = spec.penalized_value(&x)?;
        let prev = Some((i, prev_block));
        builder.push(t, Some(i), f, elapsed, &x, prev.clone());
        last_t = t;
        last_prev = prev;
        if cfg.f_target.is_some_and(|target| f <= target) {
            break;
        }
    }
    Ok(builder.finish(last_t, stack(&agents, dim), last_prev))
}

/// Runs the synchronous truncated-series baseline: every iteration all
/// agents rebuild their blocks from the current global state, run `k + 1`
/// series terms by repeated neighbor exchanges, and step simultaneously
/// with stepsize `eps`. One iteration costs the slowest agent's time.
pub fn run_sync_newton(cfg: &RunConfig, k: usize) -> Result<Trace> {
    cfg.validate()?;
    let spec = &cfg.spec;
    let (n, dim) = (spec.n(), spec.dim());
    let w = spec.w();
    let mut x = cfg.initial_x();
    let costs = cfg
        .time_model
        .clone()
        .unwrap_or_else(|| TimeModel::uniform(n));
    let iter_cost = costs.max_cost();

    let f0 = spec.penalized_value(&x)?;
    let mut builder = TraceBuilder::new(Algorithm::SyncNewton { k }, cfg.record_every, &x, f0);
    let mut elapsed = 0.0;
    let mut last_t = 0;
    for t in 1..=cfg.t_max {
        let mut d_mats = Vec::with_capacity(n);
        let mut grads = Vec::with_capacity(n);
        for i in 0..n {
            let x_i = x.rows(i * dim, dim).into_owned();
            d_mats.push(compute_d_block(spec.local(i), &x_i, spec.alpha(), w.diag(i))?);
            let buf: BTreeMap<usize, DVector<f64>> = w
                .neighbors(i)
                .iter()
                .map(|&j| (j, x.rows(j * dim, dim).into_owned()))
                .collect();
            grads.push(compute_g_i(spec.local(i), &x_i, spec.alpha(), w, i, &buf)?);
        }
        let mut dirs: Vec<DVector<f64>> = (0..n)
            .map(|i| compute_d0_i(&d_mats[i], &grads[i]))
            .collect::<Result<_>>()?;
        for _ in 0..k {
            let prev = dirs.clone();
            for i in 0..n {
                let mut rhs = &prev[i] * (1.0 - w.diag(i));
                rhs -= &grads[i];
                for &j in w.neighbors(i) {
                    rhs.axpy(w.entry(i, j), &prev[j], 1.0);
                }
                dirs[i] = d_mats[i]
                    .clone()
                    .cholesky()
                    .ok_or_else(|| {
                        Error::Solve("splitting block D_ii is not positive definite".into())
                    })?
                    .solve(&rhs);
            }
        }
        for i in 0..n {
            let stepped = {
                let x_i = x.rows(i * dim, dim).into_owned();
                x_i + &dirs[i] * cfg.eps
            };
            x.rows_mut(i * dim, dim).copy_from(&stepped);
        }
        elapsed += iter_cost;
        let f = spec.penalized_value(&x)?;
        builder.push(t, None, f, elapsed, &x, None);
        last_t = t;
        if cfg.f_target.is_some_and(|target| f <= target) {
            break;
        }
    }
    Ok(builder.finish(last_t, x, None))
}

/// Runs the gossip baseline for the constrained consensus problem: the
/// sampled initiator and a uniformly random neighbor average their
/// iterates, then each takes a local gradient step with its own
/// diminishing stepsize `1 / (own update count)`. The recorded objective
/// is `sum_i f_i(z_i)`, not the penalized objective.
pub fn run_gossip(cfg: &RunConfig) -> Result<Trace> {
    cfg.validate()?;
    let spec = &cfg.spec;
    let (n, dim) = (spec.n(), spec.dim());
    if n < 2 {
        return Err(Error::Topology("gossip needs at least two agents".into()));
    }
    let w = spec.w();
    let mut z = cfg.initial_x();
    let costs = cfg
        .time_model
        .clone()
        .unwrap_or_else(|| TimeModel::uniform(n));
    let mut counts = vec![0usize; n];

    let sum_locals = |z: &DVector<f64>| -> Result<f64> {
        let mut total = 0.0;
        for i in 0..n {
            total += spec.local(i).value(&z.rows(i * dim, dim).into_owned())?;
        }
        Ok(total)
    };

    let f0 = sum_locals(&z)?;
    let mut builder = TraceBuilder::new(Algorithm::Gossip, cfg.record_every, &z, f0);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.schedule.seed());
    let sampler = WeightedIndex::new(cfg.schedule.p())
        .map_err(|e| Error::Schedule(format!("invalid activation weights: {e}")))?;

    let mut elapsed = 0.0;
    let mut last_t = 0;
    for t in 1..=cfg.t_max {
        let i = sampler.sample(&mut rng);
        let neighbors = w.neighbors(i);
        let j = neighbors[rng.gen_range(0..neighbors.len())];

        let avg = (z.rows(i * dim, dim) + z.rows(j * dim, dim)) * 0.5;
        counts[i] += 1;
        counts[j] += 1;
        let g_i = spec.local(i).gradient(&avg.clone_owned())?;
        let g_j = spec.local(j).gradient(&avg.clone_owned())?;
        let z_i = &avg - g_i * (1.0 / counts[i] as f64);
        let z_j = &avg - g_j * (1.0 / counts[j] as f64);
        z.rows_mut(i * dim, dim).copy_from(&z_i);
        z.rows_mut(j * dim, dim).copy_from(&z_j);

        // Both agents evaluate one gradient in parallel.
        elapsed += costs.costs()[i].max(costs.costs()[j]);
        let f = sum_locals(&z)?;
        builder.push(t, Some(i), f, elapsed, &z, None);
        last_t = t;
        if cfg.f_target.is_some_and(|target| f <= target) {
            break;
        }
    }
    Ok(builder.finish(last_t, z, None))
}

/// Exact one-step conditional expectations at a synchronized state: both
/// sides of the descent inequality and of the weighted-error recursion,
/// computed by enumerating all `n` activation outcomes (no sampling).
#[derive(Debug, Clone, PartialEq)]
pub struct OneStepExpectation {
    pub f_at_x: f64,
    pub grad_norm_sq: f64,
    /// `E[F(x+)] = sum_i p_i F(x after agent i steps)`.
    pub expected_f: f64,
    /// `F(x) - (eps lambda - eps^2 Lambda^2 / (2 lambda pi)) ||g||^2`.
    pub descent_rhs: f64,
    /// `||D(x)^{1/2} (x - x*)||`.
    pub weighted_err_before: f64,
    /// `E[||D(x)^{1/2} (x+ - x*)||]`.
    pub recursion_lhs: f64,
    /// `Gamma1 w^2 + Gamma(2) w` with `w` the weighted error before.
    pub recursion_rhs: f64,
    /// The scaled-mode stepsize the constants were evaluated at.
    pub eps_effective: f64,
}

/// Enumerates the one-step expectation at `x`. Buffers are taken as fresh
/// (the state is synchronized), which is exactly the simulator's situation
/// after any activation. In unscaled mode the activation probabilities must
/// be uniform; the equivalent scaled stepsize `eps p` is used.
pub fn enumerate_one_step(
    spec: &ProblemSpec,
    schedule: &ActivationSchedule,
    eps: f64,
    x: &DVector<f64>,
    x_star: &DVector<f64>,
) -> Result<OneStepExpectation> {
    if schedule.n() != spec.n() {
        return Err(Error::Schedule(format!(
            "schedule has {} probabilities for {} agents",
            schedule.n(),
            spec.n()
        )));
    }
    let eps_effective = match schedule.mode() {
        ActivationMode::Scaled => eps,
        ActivationMode::Unscaled => {
            if schedule.pi_max() - schedule.pi_min() > 1e-12 {
                return Err(Error::Schedule(
                    "one-step enumeration in unscaled mode needs uniform probabilities".into(),
                ));
            }
            eps * schedule.p()[0]
        }
    };
    let constants = TheoryConstants::for_problem(spec, schedule.p(), eps_effective)?;
    let (n, dim) = (spec.n(), spec.dim());

    let f_at_x = spec.penalized_value(x)?;
    let g = spec.penalized_gradient(x)?;
    let grad_norm_sq = g.norm_squared();
    let dirs = fresh_directions(spec, x)?;

    let d_blocks: Vec<nalgebra::DMatrix<f64>> = (0..n)
        .map(|i| {
            compute_d_block(
                spec.local(i),
                &x.rows(i * dim, dim).into_owned(),
                spec.alpha(),
                spec.w().diag(i),
            )
        })
        .collect::<Result<_>>()?;
    let weighted = |v: &DVector<f64>| -> f64 {
        let mut total = 0.0;
        for i in 0..n {
            let vi = v.rows(i * dim, dim).into_owned();
            total += (&d_blocks[i] * &vi).dot(&vi);
        }
        total.sqrt()
    };

    let mut expected_f = 0.0;
    let mut recursion_lhs = 0.0;
    for i in 0..n {
        let mut x_plus = x.clone();
        let step = eps_effective / schedule.p()[i];
        {
            let block = x.rows(i * dim, dim).into_owned() + dirs.rows(i * dim, dim) * step;
            x_plus.rows_mut(i * dim, dim).copy_from(&block);
        }
        let pi = schedule.p()[i];
        expected_f += pi * spec.penalized_value(&x_plus)?;
        recursion_lhs += pi * weighted(&(&x_plus - x_star));
    }

    let coeff = eps_effective * constants.lambda
        - eps_effective * eps_effective * constants.big_lambda * constants.big_lambda
            / (2.0 * constants.lambda * constants.pi_min);
    let descent_rhs = f_at_x - coeff * grad_norm_sq;

    let weighted_err_before = weighted(&(x - x_star));
    let f_star = spec.penalized_value(x_star)?;
    let gap0 = (f_at_x - f_star).max(0.0);
    let recursion_rhs = constants.gamma1 * weighted_err_before * weighted_err_before
        + constants.gamma_t(2.0, gap0) * weighted_err_before;

    Ok(OneStepExpectation {
        f_at_x,
        grad_norm_sq,
        expected_f,
        descent_rhs,
        weighted_err_before,
        recursion_lhs,
        recursion_rhs,
        eps_effective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::newton::{dense_hat_h_inverse, series_inverse_k};
    use crate::objectives::LocalObjective;
    use crate::topology::{build_consensus, build_graph, GraphKind};
    use approx::assert_relative_eq;

    fn vec1(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    /// Five quadratic agents on K5: c=1, b_i = i+1, alpha = 1. The penalized
    /// optimum is x*_i = (2(i+1) + 3)/3 with F* = 10/3 and F(0) = 55.
    fn quad_k5() -> ProblemSpec {
        let g = build_graph(GraphKind::Complete, 5, 0).unwrap();
        ProblemSpec::new(
            (0..5)
                .map(|i| LocalObjective::quadratic(1.0, vec1(i as f64 + 1.0)).unwrap())
                .collect(),
            1.0,
            build_consensus(&g),
        )
        .unwrap()
    }

    fn k5_x_star() -> DVector<f64> {
        DVector::from_fn(5, |i, _| (2.0 * (i as f64 + 1.0) + 3.0) / 3.0)
    }

    fn k5_eps_as_max() -> f64 {
        // delta = Delta = 0.2, m = M = 2, alpha = 1, uniform p on 5 agents.
        0.4 * 81.0 / 169.0
    }

    #[test]
    fn zero_activations_returns_initial_record_only() {
        let spec = quad_k5();
        let schedule = ActivationSchedule::uniform(5, ActivationMode::Scaled, 1).unwrap();
        let cfg = RunConfig::new(spec, schedule, 0.1, 0);
        let trace = run_async_newton(&cfg).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.records[0].t, 0);
        assert_eq!(trace.final_x, DVector::zeros(5));
        assert_relative_eq!(trace.final_f(), 55.0, max_relative = 1e-15);
    }

    #[test]
    fn runs_are_bit_deterministic_in_the_seed() {
        let spec = quad_k5();
        let schedule = ActivationSchedule::uniform(5, ActivationMode::Scaled, 7).unwrap();
        let cfg = RunConfig::new(spec, schedule, 0.9 * k5_eps_as_max(), 300);
        let a = run_async_newton(&cfg).unwrap();
        let b = run_async_newton(&cfg).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.t, rb.t);
            assert_eq!(ra.active, rb.active);
            assert_eq!(ra.f_value.to_bits(), rb.f_value.to_bits());
            assert_eq!(ra.elapsed.to_bits(), rb.elapsed.to_bits());
        }
        assert_eq!(a.final_x, b.final_x);

        let mut other = cfg.clone();
        other.schedule = other.schedule.with_seed(8);
        let c = run_async_newton(&other).unwrap();
        let order = |t: &Trace| t.records[1..50].iter().map(|r| r.active).collect::<Vec<_>>();
        assert_ne!(
            order(&a),
            order(&c),
            "different seeds should explore different activation orders"
        );
    }

    #[test]
    fn single_agent_descends_monotonically() {
        let g = build_graph(GraphKind::Complete, 1, 0).unwrap();
        let spec = ProblemSpec::new(
            vec![LocalObjective::quadratic(1.0, vec1(5.0)).unwrap()],
            1.0,
            build_consensus(&g),
        )
        .unwrap();
        let schedule = ActivationSchedule::new(vec![1.0], ActivationMode::Scaled, 0).unwrap();
        let cfg = RunConfig::new(spec, schedule, 0.5, 50);
        let trace = run_async_newton(&cfg).unwrap();
        for pair in trace.records.windows(2) {
            assert!(
                pair[1].f_value < pair[0].f_value,
                "objective must strictly decrease: {} -> {}",
                pair[0].f_value,
                pair[1].f_value
            );
        }
        assert!((trace.final_x[0] - 5.0).abs() < 1e-6);
    }

    #[test]
    fn only_the_active_block_changes() {
        let spec = quad_k5();
        let schedule = ActivationSchedule::uniform(5, ActivationMode::Scaled, 3).unwrap();
        let cfg = RunConfig::new(spec, schedule, 0.1, 40);
        let trace = run_async_newton(&cfg).unwrap();
        for pair in trace.snapshots.windows(2) {
            let (before, after) = (&pair[0], &pair[1]);
            if after.t != before.t + 1 {
                continue;
            }
            let active = after
                .prev_active
                .as_ref()
                .expect("activation snapshots carry the previous block")
                .0;
            for i in 0..5 {
                if i == active {
                    continue;
                }
                assert_eq!(before.x[i], after.x[i], "inactive block {i} moved at t={}", after.t);
            }
        }
    }

    #[test]
    fn every_step_matches_the_dense_direction_at_the_previous_state() {
        // The sequential simulator keeps all buffers synchronized, so each
        // activation must take exactly the dense fresh-state step.
        let spec = quad_k5();
        let schedule = ActivationSchedule::uniform(5, ActivationMode::Scaled, 11).unwrap();
        let eps = 0.9 * k5_eps_as_max();
        let cfg = RunConfig::new(spec.clone(), schedule.clone(), eps, 60);
        let trace = run_async_newton(&cfg).unwrap();
        for pair in trace.snapshots.windows(2) {
            let (before, after) = (&pair[0], &pair[1]);
            if after.t != before.t + 1 {
                continue;
            }
            let (active, _) = after.prev_active.clone().unwrap();
            let dense = -(dense_hat_h_inverse(&spec, &before.x).unwrap()
                * spec.penalized_gradient(&before.x).unwrap());
            let predicted = before.x[active] + eps / schedule.p()[active] * dense[active];
            assert!(
                (after.x[active] - predicted).abs() < 1e-12,
                "t={} active={active}",
                after.t
            );
        }
    }

    #[test]
    fn k5_quadratic_reaches_small_relative_error() {
        let spec = quad_k5();
        // Reference optimum for c=1, b_i=i on K5 with alpha=1: x*_i = 2i/3 + 1.
        let f_star = spec
            .penalized_value(&k5_x_star())
            .unwrap();
        let f0 = 55.0;
        let schedule = ActivationSchedule::uniform(5, ActivationMode::Scaled, 19).unwrap();
        let cfg = RunConfig::new(spec, schedule, 0.9 * k5_eps_as_max(), 5000);
        let trace = run_async_newton(&cfg).unwrap();
        let rel = (trace.final_f() - f_star) / (f0 - f_star);
        assert!(rel < 1e-3, "relative error {rel} too large");
        assert!(rel >= 0.0);
    }

    #[test]
    fn sync_one_iteration_equals_dense_two_term_step() {
        let spec = quad_k5();
        let schedule = ActivationSchedule::uniform(5, ActivationMode::Scaled, 0).unwrap();
        let eps = 0.3;
        let x0 = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, -1.0]);
        let mut cfg = RunConfig::new(spec.clone(), schedule, eps, 1);
        cfg.x0 = Some(x0.clone());
        let trace = run_sync_newton(&cfg, 1).unwrap();
        let dense = &x0
            - dense_hat_h_inverse(&spec, &x0).unwrap()
                * spec.penalized_gradient(&x0).unwrap()
                * eps;
        assert!((trace.final_x - dense).norm() < 1e-12);
    }

    #[test]
    fn sync_zero_terms_is_block_diagonal_descent() {
        let spec = quad_k5();
        let schedule = ActivationSchedule::uniform(5, ActivationMode::Scaled, 0).unwrap();
        let eps = 0.3;
        let x0 = DVector::from_vec(vec![0.5, 1.5, -0.5, 2.0, 1.0]);
        let mut cfg = RunConfig::new(spec.clone(), schedule, eps, 1);
        cfg.x0 = Some(x0.clone());
        let trace = run_sync_newton(&cfg, 0).unwrap();
        let dense = &x0
            - series_inverse_k(&spec, &x0, 0).unwrap()
                * spec.penalized_gradient(&x0).unwrap()
                * eps;
        assert!((trace.final_x - dense).norm() < 1e-12);
    }

    #[test]
    fn frozen_sweep_equals_one_sync_iteration() {
        let spec = quad_k5();
        let eps = 0.25;
        let x0 = DVector::from_vec(vec![2.0, -1.0, 0.0, 1.0, 4.0]);
        // Every agent steps once (unscaled) from the same frozen snapshot.
        let sweep = &x0 + fresh_directions(&spec, &x0).unwrap() * eps;
        let schedule = ActivationSchedule::uniform(5, ActivationMode::Scaled, 0).unwrap();
        let mut cfg = RunConfig::new(spec, schedule, eps, 1);
        cfg.x0 = Some(x0);
        let sync = run_sync_newton(&cfg, 1).unwrap();
        assert!((sweep - sync.final_x).norm() < 1e-12);
    }

    #[test]
    fn sync_slow_agent_iteration_cost_is_the_maximum() {
        let spec = quad_k5();
        let schedule = ActivationSchedule::uniform(5, ActivationMode::Scaled, 0).unwrap();
        let mut cfg = RunConfig::new(spec, schedule, 0.1, 7);
        cfg.time_model = Some(TimeModel::slow_agent(5, 2, 100.0).unwrap());
        let trace = run_sync_newton(&cfg, 1).unwrap();
        assert_relative_eq!(trace.final_elapsed(), 700.0, max_relative = 1e-15);
    }

    #[test]
    fn async_elapsed_accumulates_active_agent_costs() {
        let spec = quad_k5();
        let schedule = ActivationSchedule::uniform(5, ActivationMode::Scaled, 23).unwrap();
        let mut cfg = RunConfig::new(spec, schedule, 0.1, 200);
        cfg.time_model = Some(TimeModel::slow_agent(5, 0, 100.0).unwrap());
        let trace = run_async_newton(&cfg).unwrap();
        let mut expected = 0.0;
        for r in &trace.records[1..] {
            expected += if r.active == Some(0) { 100.0 } else { 1.0 };
        }
        assert_relative_eq!(trace.final_elapsed(), expected, max_relative = 1e-12);
        assert!(trace.records[1..].iter().any(|r| r.active == Some(0)));
    }

    #[test]
    fn empirical_activation_frequencies_match_schedule() {
        let p = vec![2.0 / 15.0, 13.0 / 60.0, 13.0 / 60.0, 13.0 / 60.0, 13.0 / 60.0];
        let schedule = ActivationSchedule::new(p.clone(), ActivationMode::Scaled, 77).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(schedule.seed());
        let sampler = WeightedIndex::new(schedule.p()).unwrap();
        let draws = 100_000usize;
        let mut counts = [0usize; 5];
        for _ in 0..draws {
            counts[sampler.sample(&mut rng)] += 1;
        }
        let chi_sq: f64 = counts
            .iter()
            .zip(&p)
            .map(|(&obs, &pi)| {
                let exp = pi * draws as f64;
                (obs as f64 - exp).powi(2) / exp
            })
            .sum();
        // 4 degrees of freedom, significance 0.001.
        assert!(chi_sq < 18.467, "chi-square statistic {chi_sq} too large");
    }

    #[test]
    fn gossip_identical_objectives_follow_shared_recursion() {
        // Two identical agents starting equal: averaging is a no-op and both
        // agents' counts advance together, so z(t) = z(t-1) - (1/t) grad f.
        let g = build_graph(GraphKind::Complete, 2, 0).unwrap();
        let spec = ProblemSpec::new(
            vec![
                LocalObjective::quadratic(1.0, vec1(4.0)).unwrap(),
                LocalObjective::quadratic(1.0, vec1(4.0)).unwrap(),
            ],
            1.0,
            build_consensus(&g),
        )
        .unwrap();
        let schedule = ActivationSchedule::uniform(2, ActivationMode::Scaled, 5).unwrap();
        let mut cfg = RunConfig::new(spec, schedule, 0.1, 30);
        cfg.x0 = Some(DVector::from_vec(vec![1.0, 1.0]));
        let trace = run_gossip(&cfg).unwrap();
        let mut z = 1.0f64;
        for t in 1..=30usize {
            z -= 1.0 / t as f64 * (2.0 * (z - 4.0));
            let snap = &trace.snapshots[t];
            assert_relative_eq!(snap.x[0], z, max_relative = 1e-12);
            assert_relative_eq!(snap.x[1], z, max_relative = 1e-12);
        }
    }

    #[test]
    fn gossip_converges_toward_the_consensus_optimum() {
        let spec = quad_k5();
        // argmin sum (x - b_i)^2 over a shared x: the mean of b = 3.
        let schedule = ActivationSchedule::uniform(5, ActivationMode::Scaled, 13).unwrap();
        let cfg = RunConfig::new(spec, schedule, 0.1, 10_000);
        let trace = run_gossip(&cfg).unwrap();
        let err = |x: &DVector<f64>| (x - DVector::from_element(5, 3.0)).norm();
        let start = err(&trace.snapshots[0].x);
        let early = err(&trace.snapshots[1000].x);
        let end = err(&trace.final_x);
        assert!(early < start);
        assert!(end < 0.2, "final consensus error {end} too large");
        assert!(end < early);
    }

    #[test]
    fn gossip_rejects_single_agent() {
        let g = build_graph(GraphKind::Complete, 1, 0).unwrap();
        let spec = ProblemSpec::new(
            vec![LocalObjective::quadratic(1.0, vec1(0.0)).unwrap()],
            1.0,
            build_consensus(&g),
        )
        .unwrap();
        let schedule = ActivationSchedule::new(vec![1.0], ActivationMode::Scaled, 0).unwrap();
        let cfg = RunConfig::new(spec, schedule, 0.1, 10);
        assert!(run_gossip(&cfg).is_err());
    }

    #[test]
    fn descent_inequality_holds_at_random_states() {
        let spec = quad_k5();
        let x_star = k5_x_star();
        let schedule = ActivationSchedule::uniform(5, ActivationMode::Scaled, 0).unwrap();
        let eps = 0.9 * k5_eps_as_max();
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        for _ in 0..200 {
            let x = DVector::from_fn(5, |_, _| (rng.gen::<f64>() * 2.0 - 1.0) * 10.0);
            let one = enumerate_one_step(&spec, &schedule, eps, &x, &x_star).unwrap();
            assert!(
                one.expected_f <= one.descent_rhs + 1e-10,
                "descent inequality violated: {} > {}",
                one.expected_f,
                one.descent_rhs
            );
        }
    }

    #[test]
    fn weighted_error_recursion_holds_at_random_states() {
        let spec = quad_k5();
        let x_star = k5_x_star();
        let schedule = ActivationSchedule::uniform(5, ActivationMode::Scaled, 0).unwrap();
        let eps = 0.9 * k5_eps_as_max();
        let mut rng = ChaCha20Rng::seed_from_u64(37);
        for _ in 0..200 {
            let x = DVector::from_fn(5, |_, _| (rng.gen::<f64>() * 2.0 - 1.0) * 10.0);
            let one = enumerate_one_step(&spec, &schedule, eps, &x, &x_star).unwrap();
            assert!(
                one.recursion_lhs <= one.recursion_rhs + 1e-9,
                "recursion violated: {} > {}",
                one.recursion_lhs,
                one.recursion_rhs
            );
        }
    }

    #[test]
    fn enumeration_at_the_optimum_is_stationary() {
        let spec = quad_k5();
        let x_star = k5_x_star();
        let schedule = ActivationSchedule::uniform(5, ActivationMode::Scaled, 0).unwrap();
        let one = enumerate_one_step(&spec, &schedule, 0.1, &x_star, &x_star).unwrap();
        let f_star = spec.penalized_value(&x_star).unwrap();
        assert_relative_eq!(one.expected_f, f_star, max_relative = 1e-10);
        assert!(one.grad_norm_sq < 1e-20);
        assert!(one.recursion_lhs < 1e-9);
    }

    #[test]
    fn unscaled_uniform_enumeration_converts_the_stepsize() {
        let spec = quad_k5();
        let x_star = k5_x_star();
        let x = DVector::from_vec(vec![1.0, 2.0, 0.0, -1.0, 3.0]);
        let unscaled = ActivationSchedule::uniform(5, ActivationMode::Unscaled, 0).unwrap();
        let scaled = ActivationSchedule::uniform(5, ActivationMode::Scaled, 0).unwrap();
        let a = enumerate_one_step(&spec, &unscaled, 0.9, &x, &x_star).unwrap();
        let b = enumerate_one_step(&spec, &scaled, 0.18, &x, &x_star).unwrap();
        assert_relative_eq!(a.eps_effective, 0.18, max_relative = 1e-15);
        assert_relative_eq!(a.expected_f, b.expected_f, max_relative = 1e-14);

        let nonuniform = ActivationSchedule::new(
            vec![0.4, 0.15, 0.15, 0.15, 0.15],
            ActivationMode::Unscaled,
            0,
        )
        .unwrap();
        assert!(enumerate_one_step(&spec, &nonuniform, 0.9, &x, &x_star).is_err());
    }

    #[test]
    fn early_stop_truncates_the_run() {
        let spec = quad_k5();
        let f_star = spec
            .penalized_value(&k5_x_star())
            .unwrap();
        let schedule = ActivationSchedule::uniform(5, ActivationMode::Scaled, 3).unwrap();
        let mut cfg = RunConfig::new(spec, schedule, 0.9 * k5_eps_as_max(), 100_000);
        let target = f_star + 1e-2 * (55.0 - f_star);
        cfg.f_target = Some(target);
        let trace = run_async_newton(&cfg).unwrap();
        assert!(trace.records.len() < 100_000);
        assert!(trace.final_f() <= target);
        // All but the last record sit above the target.
        for r in &trace.records[..trace.records.len() - 1] {
            assert!(r.f_value > target);
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(ActivationSchedule::new(vec![], ActivationMode::Scaled, 0).is_err());
        assert!(ActivationSchedule::new(vec![0.5, 0.6], ActivationMode::Scaled, 0).is_err());
        assert!(ActivationSchedule::new(vec![1.0, 0.0], ActivationMode::Scaled, 0).is_err());
        assert!(ActivationSchedule::new(vec![1.0], ActivationMode::Scaled, 0).is_ok());
        let s = ActivationSchedule::new(vec![0.25; 4], ActivationMode::Unscaled, 9).unwrap();
        assert_eq!(s.pi_min(), 0.25);
        assert_eq!(s.pi_max(), 0.25);
    }

    #[test]
    fn run_config_validation() {
        let spec = quad_k5();
        let schedule = ActivationSchedule::uniform(4, ActivationMode::Scaled, 0).unwrap();
        let cfg = RunConfig::new(spec.clone(), schedule, 0.1, 10);
        assert!(run_async_newton(&cfg).is_err());

        let schedule5 = ActivationSchedule::uniform(5, ActivationMode::Scaled, 0).unwrap();
        let mut bad_eps = RunConfig::new(spec.clone(), schedule5.clone(), -1.0, 10);
        assert!(run_async_newton(&bad_eps).is_err());
        bad_eps.eps = 0.1;
        bad_eps.x0 = Some(DVector::zeros(3));
        assert!(run_async_newton(&bad_eps).is_err());
    }
}
