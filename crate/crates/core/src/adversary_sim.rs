//! Pulse-level Monte Carlo of the three-source protocol with a block-aware
//! adversarial channel, used as ground truth for the bounds.
//!
//! Pulses are grouped into blocks of `block_len`. Within a block every source
//! shares the same intensity drift and the adversary applies one
//! transmittance to all pulses, without knowing which source each pulse came
//! from. Each block draws from its own ChaCha stream keyed by
//! `(seed, block index)`, so the outcome does not depend on how blocks are
//! scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoy_bounds::{self, FractionBound, ObservedTallies, Selection};
use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::source_model::{poisson_coefficient, SourceBounds};

/// Photon-number buckets kept in the truth tables; the last one collects
/// every `k >= PHOTON_BUCKETS - 1`.
pub const PHOTON_BUCKETS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Vacuum = 0,
    Decoy = 1,
    Signal = 2,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Vacuum, Source::Decoy, Source::Signal];
}

/// How each pulse's intensity deviates from its source's nominal value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum IntensityLaw {
    Stable,
    /// Even blocks are strong (`x (1 + delta)`), odd blocks weak
    /// (`x (1 - delta)`).
    StrongWeakBlocks { delta: f64 },
    /// Independent per-pulse offset uniform in `[x (1 - delta), x (1 + delta)]`.
    UniformJitter { delta: f64 },
}

impl IntensityLaw {
    fn delta(&self) -> f64 {
        match *self {
            Self::Stable => 0.0,
            Self::StrongWeakBlocks { delta } | Self::UniformJitter { delta } => delta,
        }
    }
}

/// Transmittance applied by the adversary to each block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ChannelLaw {
    Uniform { eta: f64 },
    /// Strong (even) blocks see `eta_ratio * eta_weak`, weak blocks `eta_weak`.
    StrongWeak { eta_weak: f64, eta_ratio: f64 },
    /// Explicit per-block transmittances, cycled by block index.
    PerBlock { etas: Vec<f64> },
}

impl ChannelLaw {
    fn eta(&self, block: u64) -> f64 {
        match self {
            Self::Uniform { eta } => *eta,
            Self::StrongWeak { eta_weak, eta_ratio } => {
                if is_strong(block) {
                    eta_weak * eta_ratio
                } else {
                    *eta_weak
                }
            }
            Self::PerBlock { etas } => etas[(block % etas.len() as u64) as usize],
        }
    }

    fn validate(&self) -> Result<()> {
        let etas: Vec<f64> = match self {
            Self::Uniform { eta } => vec![*eta],
            Self::StrongWeak { eta_weak, eta_ratio } => {
                if eta_ratio.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                    return Err(Error::Scenario(format!("eta_ratio = {eta_ratio} must be positive")));
                }
                vec![*eta_weak, eta_weak * eta_ratio]
            }
            Self::PerBlock { etas } => {
                if etas.is_empty() {
                    return Err(Error::Scenario("per-block channel needs at least one eta".into()));
                }
                etas.clone()
            }
        };
        match etas.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            Some(e) => Err(Error::Scenario(format!("transmittance {e} outside [0, 1]"))),
            None => Ok(()),
        }
    }
}

fn is_strong(block: u64) -> bool {
    block.is_multiple_of(2)
}

/// Generative description of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub pulses: u64,
    pub selection: Selection,
    pub decoy_mu: f64,
    pub signal_mu: f64,
    #[serde(default)]
    pub vacuum_mu: f64,
    pub intensity_law: IntensityLaw,
    pub channel_law: ChannelLaw,
    #[serde(default)]
    pub dark_rate: f64,
    /// Probability that a photon-triggered count carries a bit error.
    #[serde(default)]
    pub misalignment: f64,
    pub block_len: u64,
    pub seed: u64,
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        Selection::new(self.selection.p0, self.selection.p, self.selection.pp)
            .map_err(|e| Error::Scenario(e.to_string()))?;
        if self.block_len == 0 || self.pulses == 0 || !self.pulses.is_multiple_of(self.block_len) {
            return Err(Error::Scenario(format!(
                "block length {} must be positive and divide the pulse count {}",
                self.block_len, self.pulses
            )));
        }
        for (name, mu) in [("decoy_mu", self.decoy_mu), ("signal_mu", self.signal_mu), ("vacuum_mu", self.vacuum_mu)] {
            if !(mu.is_finite() && mu >= 0.0) {
                return Err(Error::Scenario(format!("{name} = {mu} must be a non-negative intensity")));
            }
        }
        let delta = self.intensity_law.delta();
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::Scenario(format!("intensity offset {delta} outside [0, 1)")));
        }
        for (name, v) in [("dark_rate", self.dark_rate), ("misalignment", self.misalignment)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Scenario(format!("{name} = {v} outside [0, 1]")));
            }
        }
        self.channel_law.validate()
    }

    fn nominal(&self, source: Source) -> f64 {
        match source {
            Source::Vacuum => self.vacuum_mu,
            Source::Decoy => self.decoy_mu,
            Source::Signal => self.signal_mu,
        }
    }

    pub fn blocks(&self) -> u64 {
        self.pulses / self.block_len
    }
}

/// Pulse tallies by photon-number bucket and source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct PhotonTable {
    pub counts: [[u64; 3]; PHOTON_BUCKETS],
}

impl PhotonTable {
    pub fn get(&self, k: usize, source: Source) -> u64 {
        self.counts[k][source as usize]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn source_total(&self, source: Source) -> u64 {
        self.counts.iter().map(|row| row[source as usize]).sum()
    }

    fn merge(mut self, other: &Self) -> Self {
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
        self
    }
}

/// Realized intensity range per source; `None` if the source never fired.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RealizedIntensities {
    pub ranges: [Option<Interval>; 3],
}

impl RealizedIntensities {
    fn observe(&mut self, source: Source, mu: f64) {
        let slot = &mut self.ranges[source as usize];
        *slot = Some(match *slot {
            None => Interval::point(mu),
            Some(iv) => Interval { lo: iv.lo.min(mu), hi: iv.hi.max(mu) },
        });
    }

    fn merge(mut self, other: &Self) -> Self {
        for (a, b) in self.ranges.iter_mut().zip(other.ranges.iter()) {
            *a = match (*a, *b) {
                (None, x) | (x, None) => x,
                (Some(x), Some(y)) => Some(Interval { lo: x.lo.min(y.lo), hi: x.hi.max(y.hi) }),
            };
        }
        self
    }

    pub fn get(&self, source: Source) -> Option<Interval> {
        self.ranges[source as usize]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct BlockTally {
    emitted: PhotonTable,
    counted: PhotonTable,
    errors: [u64; 3],
    realized: RealizedIntensities,
}

impl BlockTally {
    fn merge(self, other: Self) -> Self {
        Self {
            emitted: self.emitted.merge(&other.emitted),
            counted: self.counted.merge(&other.counted),
            errors: [
                self.errors[0] + other.errors[0],
                self.errors[1] + other.errors[1],
                self.errors[2] + other.errors[2],
            ],
            realized: self.realized.merge(&other.realized),
        }
    }
}

/// Tallies plus the ground truth the analysis never sees.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimOutcome {
    pub tallies: ObservedTallies,
    /// Emitted pulses by (photon number, source).
    pub emitted: PhotonTable,
    /// Counted pulses by (photon number, source): the sets `c_k` split by
    /// source.
    pub counted: PhotonTable,
    /// Exact fraction of signal counts caused by single-photon pulses.
    pub truth_delta1_signal: f64,
    pub realized: RealizedIntensities,
}

impl SimOutcome {
    /// Observed yield of `k`-photon pulses from `source`, with the pulse
    /// count it was estimated from.
    pub fn yield_of(&self, k: usize, source: Source) -> (f64, u64) {
        let n = self.emitted.get(k, source);
        let c = self.counted.get(k, source);
        (if n == 0 { 0.0 } else { c as f64 / n as f64 }, n)
    }
}

fn sample_photons(rng: &mut ChaCha8Rng, mu: f64, cached: Option<&Poisson<f64>>) -> u64 {
    if mu <= 0.0 {
        return 0;
    }
    match cached {
        Some(d) => d.sample(rng) as u64,
        None => Poisson::new(mu).map(|d| d.sample(rng) as u64).unwrap_or(0),
    }
}

fn simulate_block(sc: &SimScenario, block: u64) -> BlockTally {
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    rng.set_stream(block);
    let mut tally = BlockTally::default();
    let eta = sc.channel_law.eta(block);
    let sel = sc.selection;

    let block_factor = match sc.intensity_law {
        IntensityLaw::Stable | IntensityLaw::UniformJitter { .. } => 1.0,
        IntensityLaw::StrongWeakBlocks { delta } => {
            if is_strong(block) {
                1.0 + delta
            } else {
                1.0 - delta
            }
        }
    };
    let jitter = match sc.intensity_law {
        IntensityLaw::UniformJitter { delta } => delta,
        _ => 0.0,
    };
    let block_mu = Source::ALL.map(|s| sc.nominal(s) * block_factor);
    let cached: [Option<Poisson<f64>>; 3] = if jitter == 0.0 {
        block_mu.map(|mu| if mu > 0.0 { Poisson::new(mu).ok() } else { None })
    } else {
        [None, None, None]
    };
    if jitter == 0.0 {
        for s in Source::ALL {
            if sel_prob(sel, s) > 0.0 {
                tally.realized.observe(s, block_mu[s as usize]);
            }
        }
    }

    for _ in 0..sc.block_len {
        let u: f64 = rng.random();
        let source = if u < sel.p0 {
            Source::Vacuum
        } else if u < sel.p0 + sel.p {
            Source::Decoy
        } else {
            Source::Signal
        };
        let si = source as usize;
        let k = if jitter == 0.0 {
            sample_photons(&mut rng, block_mu[si], cached[si].as_ref())
        } else {
            let mu = block_mu[si] * (1.0 + jitter * (2.0 * rng.random::<f64>() - 1.0));
            tally.realized.observe(source, mu);
            sample_photons(&mut rng, mu, None)
        };
        let bucket = (k as usize).min(PHOTON_BUCKETS - 1);
        tally.emitted.counts[bucket][si] += 1;

        let mut survived = false;
        for _ in 0..k {
            if rng.random::<f64>() < eta {
                survived = true;
                break;
            }
        }
        let dark = sc.dark_rate > 0.0 && rng.random::<f64>() < sc.dark_rate;
        if survived || dark {
            tally.counted.counts[bucket][si] += 1;
            let p_err = if survived { sc.misalignment } else { 0.5 };
            if p_err > 0.0 && rng.random::<f64>() < p_err {
                tally.errors[si] += 1;
            }
        }
    }
    tally
}

fn sel_prob(sel: Selection, s: Source) -> f64 {
    match s {
        Source::Vacuum => sel.p0,
        Source::Decoy => sel.p,
        Source::Signal => sel.pp,
    }
}

fn assemble(sc: &SimScenario, total: BlockTally) -> SimOutcome {
    let n0 = total.counted.source_total(Source::Vacuum);
    let nd = total.counted.source_total(Source::Decoy);
    let ns = total.counted.source_total(Source::Signal);
    let qber = |errors: u64, counts: u64| {
        if counts == 0 {
            0.0
        } else {
            (errors as f64 / counts as f64).min(0.5)
        }
    };
    let tallies = ObservedTallies {
        pulses: sc.pulses,
        selection: sc.selection,
        n0,
        nd,
        ns,
        t0_signal: qber(total.errors[Source::Signal as usize], ns),
        t0_decoy: qber(total.errors[Source::Decoy as usize], nd),
    };
    let truth_delta1_signal = if ns == 0 {
        0.0
    } else {
        total.counted.get(1, Source::Signal) as f64 / ns as f64
    };
    SimOutcome {
        tallies,
        emitted: total.emitted,
        counted: total.counted,
        truth_delta1_signal,
        realized: total.realized,
    }
}

/// Runs the scenario on the current rayon pool.
pub fn run_simulation(sc: &SimScenario) -> Result<SimOutcome> {
    sc.validate()?;
    let total = (0..sc.blocks())
        .into_par_iter()
        .map(|b| simulate_block(sc, b))
        .reduce(BlockTally::default, BlockTally::merge);
    Ok(assemble(sc, total))
}

/// Runs the scenario on a dedicated pool of `threads` workers.
pub fn run_simulation_with_threads(sc: &SimScenario, threads: usize) -> Result<SimOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Scenario(format!("cannot build thread pool: {e}")))?;
    pool.install(|| run_simulation(sc))
}

/// Ratio `Y^D_{m,1} / Y^S_{m,1}` of single-photon-out yields for `m`-photon
/// input pulses under an attenuator that is `(1 + eps)` too strong in half
/// the blocks and `(1 - eps)` too weak in the other half, while the adversary
/// applies `eta_ratio` times more transmittance to the strong blocks.
///
/// The binomial coefficient and the absolute transmittance scale cancel.
pub fn appendix_yield_ratio(lambda_d: f64, lambda_s: f64, m: u64, eps: f64, eta_ratio: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::Domain("photon number m must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Domain(format!("eps = {eps} outside [0, 1)")));
    }
    if !(eta_ratio > 0.0 && eta_ratio.is_finite()) {
        return Err(Error::Domain(format!("eta_ratio = {eta_ratio} must be positive")));
    }
    for (name, l) in [("lambda_d", lambda_d), ("lambda_s", lambda_s)] {
        if !(l > 0.0 && (1.0 + eps) * l <= 1.0) {
            return Err(Error::Domain(format!("{name} = {l} must satisfy 0 < (1 + eps) lambda <= 1")));
        }
    }
    if eps == 0.0 {
        return Ok(1.0);
    }

    // Yield with weights w± = (1 ± eps) lambda (1 - (1 ± eps) lambda)^{m-1},
    // written through rho = w+ / w- to stay finite for huge m.
    let block_yield = |lambda: f64| {
        let tail = (m - 1) as f64 * ((-(1.0 + eps) * lambda).ln_1p() - (-(1.0 - eps) * lambda).ln_1p());
        let ln_rho = (1.0 + eps).ln() - (1.0 - eps).ln() + if m == 1 { 0.0 } else { tail };
        let rho = ln_rho.exp();
        if rho.is_infinite() {
            eta_ratio
        } else {
            (rho * eta_ratio + 1.0) / (rho + 1.0)
        }
    };
    Ok(block_yield(lambda_d) / block_yield(lambda_s))
}

/// Outcome of comparing the certified bound to the simulated truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerificationReport {
    pub pass: bool,
    pub bound: f64,
    pub truth: f64,
    /// `truth - bound`; non-negative on PASS.
    pub margin: f64,
    pub fraction: FractionBound,
}

const COVERAGE_TOL: f64 = 1e-12;

fn check_coverage(outcome: &SimOutcome, bounds: &SourceBounds) -> Result<()> {
    for (source, declared) in [(Source::Decoy, &bounds.decoy), (Source::Signal, &bounds.signal)] {
        let Some(range) = outcome.realized.get(source) else { continue };
        let mut probes = vec![range.lo, range.hi];
        // Interior maxima of mu^k e^-mu sit at mu = k.
        probes.extend([1.0, 2.0].into_iter().filter(|m| range.contains(*m)));
        for mu in probes {
            for (k, iv) in [(0u32, declared.zero), (1, declared.one), (2, declared.two)] {
                let c = poisson_coefficient(mu, k);
                if !iv.contains_with_tol(c, COVERAGE_TOL) {
                    return Err(Error::Coverage(format!(
                        "{source:?} intensity {mu} gives a_{k} = {c:.9e} outside declared [{:.9e}, {:.9e}]",
                        iv.lo, iv.hi
                    )));
                }
            }
        }
    }
    if let Some(range) = outcome.realized.get(Source::Vacuum) {
        let b0 = (-range.hi).exp();
        if b0 < bounds.b0_lo * (1.0 - COVERAGE_TOL) {
            return Err(Error::Coverage(format!(
                "vacuum intensity {} gives b_0 = {b0:.9e} below declared b0_lo = {:.9e}",
                range.hi, bounds.b0_lo
            )));
        }
    }
    Ok(())
}

/// Evaluates the single-photon bound at the worst admissible `D0` and
/// compares it with the simulated truth.
pub fn verify_bound(outcome: &SimOutcome, bounds: &SourceBounds, sigma_mult: f64) -> Result<VerificationReport> {
    check_coverage(outcome, bounds)?;
    let fraction = decoy_bounds::worst_fraction_bound(&outcome.tallies, bounds, sigma_mult)?;
    let bound = fraction.delta1_signal_lo;
    let truth = outcome.truth_delta1_signal;
    Ok(VerificationReport { pass: bound <= truth, bound, truth, margin: truth - bound, fraction })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(channel: ChannelLaw, dark: f64) -> SimScenario {
        SimScenario {
            pulses: 200_000,
            selection: Selection::new(0.1, 0.4, 0.5).unwrap(),
            decoy_mu: 0.2,
            signal_mu: 0.6,
            vacuum_mu: 0.0,
            intensity_law: IntensityLaw::Stable,
            channel_law: channel,
            dark_rate: dark,
            misalignment: 0.0,
            block_len: 10_000,
            seed: 7,
        }
    }

    #[test]
    fn blind_channel_counts_nothing() {
        let out = run_simulation(&scenario(ChannelLaw::Uniform { eta: 0.0 }, 0.0)).unwrap();
        assert_eq!(out.tallies.total_counts(), 0);
        assert_eq!(out.counted.total(), 0);
        assert_eq!(out.truth_delta1_signal, 0.0);
        assert_eq!(out.emitted.total(), 200_000);
    }

    #[test]
    fn perfect_channel_counts_non_vacuum() {
        let out = run_simulation(&scenario(ChannelLaw::Uniform { eta: 1.0 }, 0.0)).unwrap();
        for s in Source::ALL {
            assert_eq!(out.counted.get(0, s), 0);
            for k in 1..PHOTON_BUCKETS {
                assert_eq!(out.counted.get(k, s), out.emitted.get(k, s));
            }
        }
        let signal_nonvac = out.emitted.source_total(Source::Signal) - out.emitted.get(0, Source::Signal);
        let expect = out.emitted.get(1, Source::Signal) as f64 / signal_nonvac as f64;
        assert_eq!(out.truth_delta1_signal, expect);
        assert_eq!(out.tallies.n0, 0);
    }

    #[test]
    fn conservation() {
        let out = run_simulation(&scenario(ChannelLaw::StrongWeak { eta_weak: 0.1, eta_ratio: 5.0 }, 1e-3)).unwrap();
        assert_eq!(out.counted.total(), out.tallies.total_counts());
        assert!(out.tallies.n0 > 0);
    }

    #[test]
    fn same_seed_same_outcome() {
        let sc = scenario(ChannelLaw::Uniform { eta: 0.2 }, 1e-4);
        assert_eq!(run_simulation(&sc).unwrap(), run_simulation(&sc).unwrap());
        let mut other = sc.clone();
        other.seed = 8;
        assert_ne!(run_simulation(&sc).unwrap(), run_simulation(&other).unwrap());
    }

    #[test]
    fn invalid_scenarios() {
        let mut sc = scenario(ChannelLaw::Uniform { eta: 0.2 }, 0.0);
        sc.block_len = 30_000;
        assert!(matches!(run_simulation(&sc), Err(Error::Scenario(_))));
        let sc = scenario(ChannelLaw::Uniform { eta: 1.2 }, 0.0);
        assert!(run_simulation(&sc).is_err());
        let sc = scenario(ChannelLaw::StrongWeak { eta_weak: 0.3, eta_ratio: 5.0 }, 0.0);
        assert!(run_simulation(&sc).is_err());
    }

    #[test]
    fn appendix_trivial_cases() {
        assert_eq!(appendix_yield_ratio(0.01, 0.05, 10, 0.01, 1.0).unwrap(), 1.0);
        assert_eq!(appendix_yield_ratio(0.03, 0.03, 10, 0.01, 5.0).unwrap(), 1.0);
        assert_eq!(appendix_yield_ratio(0.01, 0.05, 10, 0.0, 5.0).unwrap(), 1.0);
        assert!(appendix_yield_ratio(0.01, 0.05, 10, 0.01, 5.0).unwrap() > 1.0025);
        assert!(appendix_yield_ratio(0.9, 0.05, 10, 0.2, 5.0).is_err());
        assert!(appendix_yield_ratio(0.01, 0.05, 0, 0.01, 5.0).is_err());
    }

    #[test]
    fn appendix_matches_direct_weights() {
        // Direct evaluation of the weighted yields for small m.
        let direct = |l: f64, m: i32, e: f64, r: f64| {
            let wp = (1.0 + e) * l * (1.0 - (1.0 + e) * l).powi(m - 1);
            let wm = (1.0 - e) * l * (1.0 - (1.0 - e) * l).powi(m - 1);
            (wp * r + wm) / (wp + wm)
        };
        for m in [1, 2, 10, 40] {
            let expect = direct(0.01, m, 0.01, 5.0) / direct(0.05, m, 0.01, 5.0);
            let got = appendix_yield_ratio(0.01, 0.05, m as u64, 0.01, 5.0).unwrap();
            assert!((got - expect).abs() < 1e-13, "m = {m}: {got} vs {expect}");
        }
        let huge = appendix_yield_ratio(0.01, 0.05, 10_000_000, 0.01, 5.0).unwrap();
        assert!(huge.is_finite() && (1.0 / 5.0..=5.0).contains(&huge));
    }

    #[test]
    fn appendix_converges_as_eps_shrinks() {
        let mut prev = f64::INFINITY;
        for eps in [0.04, 0.02, 0.01, 0.005, 0.001, 1e-4, 1e-6] {
            let r = appendix_yield_ratio(0.01, 0.05, 10, eps, 5.0).unwrap();
            assert!(r >= 1.0 && r < prev, "eps = {eps}: {r}");
            prev = r;
        }
        assert!(prev - 1.0 < 1e-6);
    }
}
