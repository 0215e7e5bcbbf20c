//! Monte Carlo checks: finite populations under a threshold policy,
//! regeneration cycles, and discounted policy costs.
//!
//! Every agent, cycle chunk and replication chunk draws from its own ChaCha
//! stream, and partial sums are combined in index order, so results do not
//! depend on thread scheduling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::GameModel;
use crate::error::{Error, Result};
use crate::kernels::TransitionKernel;
use crate::mdp::Threshold;
use crate::stationary::StationaryDistribution;

const AGENT_CHUNK: usize = 64;
const CYCLE_CHUNK: usize = 1024;

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Law of `x_0`, shared by all agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitialLaw {
    AllZero,
    Uniform,
    /// Atom `atom0` at 0 plus the remaining mass spread according to a
    /// piecewise-linear density given on uniform nodes over `[0, 1]`.
    Custom { atom0: f64, density: Vec<f64> },
}

impl InitialLaw {
    fn check(&self) -> Result<()> {
        if let InitialLaw::Custom { atom0, density } = self {
            if !(0.0..=1.0).contains(atom0) {
                return Err(Error::InvalidConfig(format!("initial atom {atom0} outside [0, 1]")));
            }
            if density.len() < 2 || density.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::InvalidConfig("initial density needs >= 2 nonnegative values".into()));
            }
            if *atom0 < 1.0 && density.iter().all(|&p| p == 0.0) {
                return Err(Error::InvalidConfig("initial density has no mass".into()));
            }
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            InitialLaw::AllZero => 0.0,
            InitialLaw::Uniform => rng.random(),
            InitialLaw::Custom { atom0, density } => {
                if rng.random::<f64>() < *atom0 {
                    return 0.0;
                }
                sample_piecewise_linear(density, rng.random())
            }
        }
    }
}

/// Inverse CDF of the normalized piecewise-linear density with node values `p`.
fn sample_piecewise_linear(p: &[f64], u: f64) -> f64 {
    let m = p.len() - 1;
    let h = 1.0 / m as f64;
    let cells: Vec<f64> = p.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).collect();
    let total: f64 = cells.iter().sum();
    let mut target = u * total;
    for (k, &mass) in cells.iter().enumerate() {
        if target <= mass || k == m - 1 {
            // within the cell the density is p0 + s t; solve p0 t + s t²/2 = target
            let (p0, s) = (p[k], (p[k + 1] - p[k]) / h);
            let t = if s.abs() < 1e-12 {
                target / p0.max(1e-300)
            } else {
                (-p0 + (p0 * p0 + 2.0 * s * target).max(0.0).sqrt()) / s
            };
            return (k as f64 * h + t.clamp(0.0, h)).min(1.0);
        }
        target -= mass;
    }
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub agents: usize,
    pub horizon: usize,
    pub seed: u64,
    pub initial_law: InitialLaw,
    pub policy: Threshold,
    pub burn_in: usize,
    /// Histogram bins on `[0, 1]`; must divide the grid size for comparisons.
    pub bins: usize,
}

impl SimConfig {
    pub fn new(agents: usize, horizon: usize, burn_in: usize, policy: Threshold, seed: u64) -> Self {
        SimConfig { agents, horizon, seed, initial_law: InitialLaw::AllZero, policy, burn_in, bins: 50 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 {
            return Err(Error::InvalidConfig("need at least one agent".into()));
        }
        if self.horizon <= self.burn_in {
            return Err(Error::InvalidConfig(format!(
                "horizon {} must exceed burn_in {}",
                self.horizon, self.burn_in
            )));
        }
        if self.bins == 0 {
            return Err(Error::InvalidConfig("need at least one histogram bin".into()));
        }
        self.initial_law.check()
    }
}

/// Ratio estimator for regeneration cycles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CycleStats {
    pub cycles: usize,
    /// `E τ`, steps until the first state `>= θ`.
    pub mean_tau: f64,
    pub stderr_tau: f64,
    /// `E Σ_{t=0}^{τ} Y_t`.
    pub mean_cycle_sum: f64,
    pub stderr_cycle_sum: f64,
    /// `E S / (1 + E τ)`.
    pub ratio: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct CycleAcc {
    n: f64,
    l: f64,
    s: f64,
    ll: f64,
    ss: f64,
    ls: f64,
}

impl CycleAcc {
    fn push(&mut self, len: f64, sum: f64) {
        self.n += 1.0;
        self.l += len;
        self.s += sum;
        self.ll += len * len;
        self.ss += sum * sum;
        self.ls += len * sum;
    }

    fn merge(&mut self, o: &CycleAcc) {
        self.n += o.n;
        self.l += o.l;
        self.s += o.s;
        self.ll += o.ll;
        self.ss += o.ss;
        self.ls += o.ls;
    }

    fn finish(&self) -> CycleStats {
        let n = self.n;
        if n < 1.0 {
            return CycleStats::default();
        }
        let (ml, ms) = (self.l / n, self.s / n);
        let ratio = ms / ml;
        let (mut stderr, mut se_l, mut se_s) = (f64::NAN, f64::NAN, f64::NAN);
        if n >= 2.0 {
            let k = n / (n - 1.0);
            let var_l = k * (self.ll / n - ml * ml);
            let var_s = k * (self.ss / n - ms * ms);
            let cov = k * (self.ls / n - ml * ms);
            let var = (var_s - 2.0 * ratio * cov + ratio * ratio * var_l).max(0.0);
            stderr = (var / n).sqrt() / ml;
            se_l = (var_l.max(0.0) / n).sqrt();
            se_s = (var_s.max(0.0) / n).sqrt();
        }
        CycleStats {
            cycles: n as usize,
            mean_tau: ml - 1.0,
            stderr_tau: se_l,
            mean_cycle_sum: ms,
            stderr_cycle_sum: se_s,
            ratio,
            stderr,
        }
    }
}

/// Discounted-cost estimate of one threshold policy at a frozen mean field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyCost {
    pub theta: Threshold,
    pub mean: f64,
    pub stderr: f64,
    pub replications: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimStats {
    /// Population average `x^(N)_t` for `t = 0..T`.
    pub trajectory: Vec<f64>,
    /// Time average of each agent over `[burn_in, T)`.
    pub agent_averages: Vec<f64>,
    pub time_average: f64,
    pub time_average_stderr: f64,
    pub bins: usize,
    /// Mass of the nonzero states in each bin over the terminal window.
    pub histogram: Vec<f64>,
    /// Frequency of the state exactly 0 over the terminal window.
    pub atom0_frequency: f64,
    /// Agent states at `t = T − 1`.
    pub final_states: Vec<f64>,
    /// Completed cycles that started at 0 inside the terminal window.
    pub cycles: CycleStats,
    pub policy_costs: Vec<PolicyCost>,
}

impl SimStats {
    pub fn histogram_total(&self) -> f64 {
        self.atom0_frequency + self.histogram.iter().sum::<f64>()
    }
}

struct ChunkResult {
    trajectory: Vec<f64>,
    averages: Vec<f64>,
    counts: Vec<u64>,
    zeros: u64,
    finals: Vec<f64>,
    cycles: CycleAcc,
}

fn bin_of(x: f64, bins: usize) -> usize {
    ((x * bins as f64) as usize).min(bins - 1)
}

fn simulate_chunk(kernel: &TransitionKernel, cfg: &SimConfig, agents: std::ops::Range<usize>) -> ChunkResult {
    let mut out = ChunkResult {
        trajectory: vec![0.0; cfg.horizon],
        averages: Vec::with_capacity(agents.len()),
        counts: vec![0; cfg.bins],
        zeros: 0,
        finals: Vec::with_capacity(agents.len()),
        cycles: CycleAcc::default(),
    };
    let window = (cfg.horizon - cfg.burn_in) as f64;
    for i in agents {
        let mut rng = stream(cfg.seed, i as u64);
        let mut x = cfg.initial_law.sample(&mut rng);
        let mut sum = 0.0;
        let mut cycle: Option<(f64, f64)> = None;
        for t in 0..cfg.horizon {
            out.trajectory[t] += x;
            if t >= cfg.burn_in {
                sum += x;
                if x == 0.0 {
                    out.zeros += 1;
                } else {
                    out.counts[bin_of(x, cfg.bins)] += 1;
                }
                if cycle.is_none() && x == 0.0 {
                    cycle = Some((0.0, 0.0));
                }
            }
            let acts = cfg.policy.acts_at(x);
            if let Some((len, s)) = cycle.as_mut() {
                *len += 1.0;
                *s += x;
                if acts {
                    out.cycles.push(*len, *s);
                    cycle = None;
                }
            }
            if t + 1 < cfg.horizon {
                x = if acts { 0.0 } else { kernel.sample(x, &mut rng) };
            }
        }
        out.averages.push(sum / window);
        out.finals.push(x);
    }
    out
}

/// Evolve `N` independent agents under the configured threshold policy.
pub fn simulate_population(model: &GameModel, cfg: &SimConfig) -> Result<SimStats> {
    cfg.validate()?;
    let chunks: Vec<ChunkResult> = (0..cfg.agents.div_ceil(AGENT_CHUNK))
        .into_par_iter()
        .map(|c| {
            let start = c * AGENT_CHUNK;
            simulate_chunk(&model.kernel, cfg, start..(start + AGENT_CHUNK).min(cfg.agents))
        })
        .collect();

    let n = cfg.agents as f64;
    let mut trajectory = vec![0.0; cfg.horizon];
    let mut counts = vec![0u64; cfg.bins];
    let mut zeros = 0u64;
    let mut agent_averages = Vec::with_capacity(cfg.agents);
    let mut final_states = Vec::with_capacity(cfg.agents);
    let mut cycles = CycleAcc::default();
    for c in &chunks {
        for (t, v) in trajectory.iter_mut().zip(&c.trajectory) {
            *t += v;
        }
        for (a, b) in counts.iter_mut().zip(&c.counts) {
            *a += b;
        }
        zeros += c.zeros;
        agent_averages.extend_from_slice(&c.averages);
        final_states.extend_from_slice(&c.finals);
        cycles.merge(&c.cycles);
    }
    for t in trajectory.iter_mut() {
        *t /= n;
    }
    let time_average = agent_averages.iter().sum::<f64>() / n;
    let time_average_stderr = if cfg.agents >= 2 {
        let var = agent_averages.iter().map(|a| (a - time_average).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        f64::NAN
    };
    let samples = n * (cfg.horizon - cfg.burn_in) as f64;
    Ok(SimStats {
        trajectory,
        agent_averages,
        time_average,
        time_average_stderr,
        bins: cfg.bins,
        histogram: counts.iter().map(|&k| k as f64 / samples).collect(),
        atom0_frequency: zeros as f64 / samples,
        final_states,
        cycles: cycles.finish(),
        policy_costs: Vec::new(),
    })
}

/// I.i.d. regeneration cycles from `Y_0 = 0`, each ending at the first
/// `Y_τ >= θ` with `S = Σ_{t=0}^{τ} Y_t`.
pub fn cycle_statistics(kernel: &TransitionKernel, theta: f64, replications: usize, seed: u64) -> Result<CycleStats> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidInterval { a: 0.0, b: theta });
    }
    if replications < 100 {
        return Err(Error::InvalidConfig(format!("need at least 100 cycles, got {replications}")));
    }
    let chunks: Vec<CycleAcc> = (0..replications.div_ceil(CYCLE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c as u64);
            let mut acc = CycleAcc::default();
            for _ in c * CYCLE_CHUNK..((c + 1) * CYCLE_CHUNK).min(replications) {
                let (mut y, mut tau, mut s) = (0.0, 0usize, 0.0);
                loop {
                    s += y;
                    if y >= theta {
                        break;
                    }
                    y = kernel.sample(y, &mut rng);
                    tau += 1;
                }
                acc.push((tau + 1) as f64, s);
            }
            acc
        })
        .collect();
    let mut total = CycleAcc::default();
    for c in &chunks {
        total.merge(c);
    }
    Ok(total.finish())
}

/// Horizon `H` with `β^H · max cost / (1 − β)` below the tail bound.
pub const COST_TAIL_BOUND: f64 = 1e-4;

pub fn required_horizon(model: &GameModel, z: f64) -> usize {
    let beta = model.cost.beta;
    let max_cost = model.cost.cost(1.0, z).abs().max(model.cost.cost(0.0, z).abs()) + model.cost.gamma;
    let h = (COST_TAIL_BOUND * (1.0 - beta) / max_cost).ln() / beta.ln();
    h.ceil().max(1.0) as usize + 1
}

/// Monte Carlo estimate of `E Σ_{t<H} β^t c(x_t, z, a_t)` under a threshold policy.
pub fn evaluate_policy_cost(
    model: &GameModel,
    z: f64,
    theta: Threshold,
    x0: f64,
    replications: usize,
    horizon: usize,
    seed: u64,
) -> Result<PolicyCost> {
    let cost = &model.cost;
    let beta = cost.beta;
    let max_cost = cost.cost(1.0, z).abs().max(cost.cost(0.0, z).abs()) + cost.gamma;
    let tail = beta.powi(horizon as i32) * max_cost / (1.0 - beta);
    if !(tail < COST_TAIL_BOUND) {
        return Err(Error::InsufficientHorizon { horizon, tail });
    }
    if replications < 2 {
        return Err(Error::InvalidConfig("need at least 2 replications".into()));
    }
    let chunks: Vec<(f64, f64)> = (0..replications.div_ceil(CYCLE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c as u64);
            let (mut s, mut ss) = (0.0, 0.0);
            for _ in c * CYCLE_CHUNK..((c + 1) * CYCLE_CHUNK).min(replications) {
                let (mut x, mut disc, mut total) = (x0, 1.0, 0.0);
                for _ in 0..horizon {
                    let acts = theta.acts_at(x);
                    total += disc * (cost.cost(x, z) + if acts { cost.gamma } else { 0.0 });
                    x = if acts { 0.0 } else { model.kernel.sample(x, &mut rng) };
                    disc *= beta;
                }
                s += total;
                ss += total * total;
            }
            (s, ss)
        })
        .collect();
    let (s, ss) = chunks.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = replications as f64;
    let mean = s / n;
    let var = (ss / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(PolicyCost { theta, mean, stderr: (var / n).sqrt(), replications, horizon })
}

/// Binned masses of a stationary law: atom at 0 and `bins` equal cells
/// (an atom at 1 falls into the last cell).
pub fn binned_stationary(dist: &StationaryDistribution, bins: usize) -> Result<(f64, Vec<f64>)> {
    let n = dist.grid().n();
    if bins == 0 || n % bins != 0 {
        return Err(Error::BinMismatch);
    }
    let mut masses: Vec<f64> = (0..bins)
        .map(|k| dist.integrate_density(k as f64 / bins as f64, (k + 1) as f64 / bins as f64, |_| 1.0))
        .collect();
    if dist.atom_at_one {
        masses[bins - 1] += 1.0;
    }
    Ok((dist.atom0, masses))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistributionDistance {
    /// Total variation between the binned laws.
    pub tv: f64,
    /// First Wasserstein distance between the empirical law of the final
    /// states and the analytic law, `∫ |F_N − F|` on the grid nodes.
    pub w1: f64,
}

pub fn empirical_vs_stationary(stats: &SimStats, dist: &StationaryDistribution) -> Result<DistributionDistance> {
    let (atom, masses) = binned_stationary(dist, stats.bins)?;
    let tv = 0.5
        * ((stats.atom0_frequency - atom).abs()
            + stats.histogram.iter().zip(&masses).map(|(a, b)| (a - b).abs()).sum::<f64>());

    let mut sorted = stats.final_states.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let grid = dist.grid();
    let xs = grid.nodes();
    // analytic CDF at the nodes by cumulative trapezoid
    let (px, py) = dist.polyline();
    let mut cdf = Vec::with_capacity(xs.len());
    let mut acc = dist.atom0;
    let mut k = 0;
    for &x in xs {
        while k + 1 < px.len() && px[k + 1] <= x {
            acc += 0.5 * (px[k + 1] - px[k]) * (py[k] + py[k + 1]);
            k += 1;
        }
        let one = if dist.atom_at_one && x >= 1.0 { 1.0 } else { 0.0 };
        cdf.push(acc + one);
    }
    let diffs: Vec<f64> = xs
        .iter()
        .zip(&cdf)
        .map(|(&x, &f)| {
            let emp = sorted.partition_point(|&s| s <= x) as f64 / n;
            (emp - f).abs()
        })
        .collect();
    let w1 = diffs.windows(2).map(|d| 0.5 * grid.h() * (d[0] + d[1])).sum();
    Ok(DistributionDistance { tv, w1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::CostModel;
    use crate::numerics::make_grid;
    use crate::stationary::stationary_distribution;

    fn model() -> GameModel {
        let grid = make_grid(500).unwrap();
        GameModel::new(TransitionKernel::Uniform, CostModel::linear(0.2, 0.5, 0.9), &grid).unwrap()
    }

    #[test]
    fn zero_policy_stays_at_zero() {
        let mut cfg = SimConfig::new(100, 50, 10, Threshold::Zero, 1);
        cfg.initial_law = InitialLaw::Uniform;
        let s = simulate_population(&model(), &cfg).unwrap();
        assert!(s.trajectory[1..].iter().all(|&x| x == 0.0));
        assert_eq!(s.atom0_frequency, 1.0);
    }

    #[test]
    fn above_one_increases() {
        let cfg = SimConfig::new(500, 100, 10, Threshold::AboveOne, 2);
        let s = simulate_population(&model(), &cfg).unwrap();
        assert!(s.trajectory.windows(2).all(|w| w[1] >= w[0]));
        assert!(s.trajectory[99] > 0.99);
        assert_eq!(s.cycles.cycles, 0);
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SimConfig::new(300, 200, 50, Threshold::Interior(0.5), 42);
        let a = simulate_population(&model(), &cfg).unwrap();
        let b = simulate_population(&model(), &cfg).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.histogram, b.histogram);
        assert_eq!(a.time_average.to_bits(), b.time_average.to_bits());
    }

    #[test]
    fn histogram_sums_to_one_and_no_spurious_atoms() {
        let cfg = SimConfig::new(2000, 300, 100, Threshold::Interior(0.5), 5);
        let s = simulate_population(&model(), &cfg).unwrap();
        assert!((s.histogram_total() - 1.0).abs() < 1e-12);
        let mut nonzero: Vec<f64> = s.final_states.iter().copied().filter(|&x| x != 0.0).collect();
        nonzero.sort_by(f64::total_cmp);
        assert!(nonzero.windows(2).all(|w| w[0] != w[1]));
        assert!(s.time_average_stderr.is_finite() && s.time_average_stderr > 0.0);
    }

    #[test]
    fn cycles_match_hitting_time_and_are_monotone() {
        let k = TransitionKernel::Uniform;
        let a = cycle_statistics(&k, 0.3, 20_000, 9).unwrap();
        let b = cycle_statistics(&k, 0.6, 20_000, 9).unwrap();
        assert!(a.ratio < b.ratio);
        let exact = 1.0 - (1.0f64 - 0.6).ln();
        assert!((b.mean_tau - exact).abs() < 4.0 * b.stderr_tau, "{b:?}");
        assert!(cycle_statistics(&k, 0.3, 10, 9).is_err());
    }

    #[test]
    fn zero_policy_cost_closed_form() {
        let m = model();
        let z = 0.3;
        let h = required_horizon(&m, z);
        let r = evaluate_policy_cost(&m, z, Threshold::Zero, 0.0, 100, h, 3).unwrap();
        let exact = (m.cost.cost(0.0, z) + m.cost.gamma) / (1.0 - m.cost.beta);
        assert!((r.mean - exact).abs() < 1e-3, "{} vs {exact}", r.mean);
        assert!(matches!(
            evaluate_policy_cost(&m, z, Threshold::Zero, 0.0, 100, 5, 3),
            Err(Error::InsufficientHorizon { .. })
        ));
    }

    #[test]
    fn synthetic_binned_law_has_zero_distance() {
        let grid = make_grid(500).unwrap();
        let dist = stationary_distribution(&TransitionKernel::Uniform, Threshold::Interior(0.4), &grid).unwrap();
        let (atom, masses) = binned_stationary(&dist, 50).unwrap();
        let stats = SimStats {
            trajectory: vec![],
            agent_averages: vec![],
            time_average: 0.0,
            time_average_stderr: 0.0,
            bins: 50,
            histogram: masses,
            atom0_frequency: atom,
            final_states: vec![0.0],
            cycles: CycleStats::default(),
            policy_costs: vec![],
        };
        let d = empirical_vs_stationary(&stats, &dist).unwrap();
        assert!(d.tv < 1e-15);
        let bad = SimStats { bins: 7, ..stats };
        assert!(matches!(empirical_vs_stationary(&bad, &dist), Err(Error::BinMismatch)));
    }

    #[test]
    fn custom_initial_law_sampling() {
        let law = InitialLaw::Custom { atom0: 0.25, density: vec![0.0, 1.0, 2.0] };
        let mut rng = stream(3, 0);
        let draws: Vec<f64> = (0..100_000).map(|_| law.sample(&mut rng)).collect();
        let zeros = draws.iter().filter(|&&x| x == 0.0).count() as f64 / 1e5;
        assert!((zeros - 0.25).abs() < 0.01);
        // density 2x on [0, 1]: mean 2/3
        let pos: Vec<f64> = draws.into_iter().filter(|&x| x > 0.0).collect();
        let mean = pos.iter().sum::<f64>() / pos.len() as f64;
        assert!((mean - 2.0 / 3.0).abs() < 0.01, "{mean}");
    }
}
