//! Monte Carlo estimators for crossing, loop and variance observables, and exact FKG / CBC checks.

use std::collections::HashMap;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::connect::{max_cluster_diameter, Adjacency, CompiledEvent, EventSpec, LevelPredicate};
use crate::error::{invalid, Error, Result};
use crate::exact::{enumerate, exact_event_prob, free_vertex_count, ratio_f64};
use crate::height::HeightFunction;
use crate::lattice::{
    build_even_box, build_even_rect, build_rect, build_torus, Annulus, BoundaryCondition, Domain, ValueSet,
    Vertex,
};
use crate::mcmc::{drive, half_width, run_chains, split_rhat, Chain, ChainConfig, ScanOrder};

/// Largest free-vertex count for which `estimate_event` switches to the exact oracle.
pub const ORACLE_FREE_LIMIT: usize = 20;

/// Run-level settings shared by the estimators. `None` fields take the estimator's default.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSettings {
    pub seed: u64,
    pub chains: usize,
    pub threads: usize,
    /// Sweeps per chain after burn-in.
    pub sweeps: Option<u64>,
    pub burn_in: Option<u64>,
    pub thin: Option<u64>,
    #[serde(default)]
    pub scan: ScanOrder,
    /// Use the exact oracle when the instance is small enough.
    #[serde(default = "yes")]
    pub use_oracle: bool,
}

fn yes() -> bool {
    true
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings { seed: 1, chains: 8, threads: 1, sweeps: None, burn_in: None, thin: None, scan: ScanOrder::default(), use_oracle: true }
    }
}

impl RunSettings {
    pub fn with_seed(seed: u64) -> RunSettings {
        RunSettings { seed, ..RunSettings::default() }
    }

    /// Chain configuration with burn-in 20·N² (N the L∞ half-width) unless overridden.
    pub fn chain_config(&self, d: &Domain, default_sweeps: u64, default_thin: u64) -> ChainConfig {
        let n = half_width(d).max(1) as u64;
        let burn_in = self.burn_in.unwrap_or(20 * n * n);
        let sweeps = self.sweeps.unwrap_or(default_sweeps).max(1);
        let thin = self.thin.unwrap_or(default_thin).max(1);
        ChainConfig { sweeps: burn_in + sweeps, burn_in, thin, seed: self.seed, chain_index: 0, scan: self.scan }
    }

    fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return invalid("at least one chain is required");
        }
        Ok(())
    }
}

/// Exact probability as a reduced fraction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: String,
    pub den: String,
}

impl From<&BigRational> for Fraction {
    fn from(r: &BigRational) -> Self {
        Fraction { num: r.numer().to_string(), den: r.denom().to_string() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventStats {
    pub label: String,
    pub spec: Option<EventSpec>,
    pub trials: u64,
    pub hits: u64,
    pub p_hat: f64,
    /// √(p̂(1−p̂)/trials).
    pub std_err: f64,
    /// Batch-means standard error pooled over chains; accounts for autocorrelation.
    pub batch_std_err: f64,
    pub seed: u64,
    pub chains: usize,
    pub rhat: f64,
    /// Set when the value comes from the exact oracle instead of sampling.
    pub exact: Option<Fraction>,
}

impl EventStats {
    /// The larger of the binomial and batch-means errors.
    pub fn sigma(&self) -> f64 {
        self.std_err.max(self.batch_std_err)
    }

    fn from_traces(label: String, spec: Option<EventSpec>, traces: &[Vec<bool>], seed: u64) -> EventStats {
        let trials: u64 = traces.iter().map(|t| t.len() as u64).sum();
        let hits: u64 = traces.iter().map(|t| t.iter().filter(|&&b| b).count() as u64).sum();
        let p_hat = if trials == 0 { 0.0 } else { hits as f64 / trials as f64 };
        let std_err = if trials == 0 { 0.0 } else { (p_hat * (1.0 - p_hat) / trials as f64).sqrt() };
        let f: Vec<Vec<f64>> = traces.iter().map(|t| t.iter().map(|&b| b as u8 as f64).collect()).collect();
        EventStats {
            label,
            spec,
            trials,
            hits,
            p_hat,
            std_err,
            batch_std_err: batch_means_se(&f),
            seed,
            chains: traces.len(),
            rhat: split_rhat(&f),
            exact: None,
        }
    }

    fn from_exact(label: String, spec: Option<EventSpec>, p: &BigRational, seed: u64) -> EventStats {
        EventStats {
            label,
            spec,
            trials: 0,
            hits: 0,
            p_hat: ratio_f64(p),
            std_err: 0.0,
            batch_std_err: 0.0,
            seed,
            chains: 0,
            rhat: 1.0,
            exact: Some(p.into()),
        }
    }
}

/// Second-moment statistics of h_u, or of h_u − h_v when a pair is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceStats {
    pub label: String,
    pub n: i64,
    pub u: Vertex,
    pub v: Option<Vertex>,
    pub trials: u64,
    /// Sample mean of the observable.
    pub mean: f64,
    /// Sample mean of its square; for the symmetric measures used here this is the variance.
    pub variance: f64,
    /// Jackknife over chains.
    pub std_err: f64,
    pub chains: usize,
    pub seed: u64,
    pub rhat: f64,
}

/// Standard error from 20 batches per chain, pooled.
pub fn batch_means_se(traces: &[Vec<f64>]) -> f64 {
    const BATCHES: usize = 20;
    let mut means = Vec::new();
    for t in traces {
        let len = t.len() / BATCHES;
        if len == 0 {
            continue;
        }
        for b in 0..BATCHES {
            means.push(t[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64);
        }
    }
    if means.len() < 2 {
        return 0.0;
    }
    let k = means.len() as f64;
    let m = means.iter().sum::<f64>() / k;
    let var = means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (k - 1.0);
    (var / k).sqrt()
}

/// Jackknife estimate and standard error of `stat` over leave-one-chain-out subsets.
/// `stat` receives the chain indices kept.
pub fn jackknife<F>(chains: usize, stat: F) -> (f64, f64)
where
    F: Fn(&[usize]) -> f64,
{
    let all: Vec<usize> = (0..chains).collect();
    let full = stat(&all);
    if chains < 2 {
        return (full, 0.0);
    }
    let loo: Vec<f64> = (0..chains)
        .map(|i| {
            let keep: Vec<usize> = all.iter().copied().filter(|&j| j != i).collect();
            stat(&keep)
        })
        .collect();
    let c = chains as f64;
    let mean = loo.iter().sum::<f64>() / c;
    let var = (c - 1.0) / c * loo.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (full, var.sqrt())
}

/// Ordinary least squares y = intercept + slope·x.
pub fn least_squares(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Runs the chains and records `f` on every retained state.
pub fn traces<T, F>(d: &Arc<Domain>, bc: &BoundaryCondition, cfg: &ChainConfig, run: &RunSettings, f: F) -> Result<Vec<Vec<T>>>
where
    T: Send,
    F: Fn(&Chain) -> T + Sync,
{
    run.validate()?;
    run_chains(d, bc, cfg, run.chains, run.threads, |k, mut chain| {
        let mut out = Vec::with_capacity(cfg.retained() as usize);
        drive(&mut chain, &cfg.with_chain(k as u64), |c| out.push(f(c)))?;
        Ok(out)
    })
}

fn event_traces(
    d: &Arc<Domain>,
    bc: &BoundaryCondition,
    ev: &CompiledEvent,
    cfg: &ChainConfig,
    run: &RunSettings,
) -> Result<Vec<Vec<bool>>> {
    traces(d, bc, cfg, run, |c| ev.eval(&c.snapshot()))
}

fn oracle_supports(d: &Domain, bc: &BoundaryCondition) -> bool {
    free_vertex_count(d, bc).is_ok_and(|f| f <= ORACLE_FREE_LIMIT)
}

/// Probability of `spec` under the uniform measure. Small instances go to the exact oracle when
/// `run.use_oracle` is set; otherwise chains of 50·N² sweeps thinned every N sweeps are used.
pub fn estimate_event(d: &Arc<Domain>, bc: &BoundaryCondition, spec: &EventSpec, run: &RunSettings) -> Result<EventStats> {
    bc.validate(d)?;
    if !crate::lattice::is_admissible(d, bc)? {
        return invalid("inadmissible boundary condition");
    }
    let ev = spec.compile(d)?;
    let label = "event".to_string();
    if run.use_oracle && oracle_supports(d, bc) {
        let p = exact_event_prob(d, bc, |h| ev.eval(h))?;
        return Ok(EventStats::from_exact(label, Some(spec.clone()), &p, run.seed));
    }
    let n = half_width(d).max(1) as u64;
    let cfg = run.chain_config(d, 50 * n * n, n);
    let t = event_traces(d, bc, &ev, &cfg, run)?;
    Ok(EventStats::from_traces(label, Some(spec.clone()), &t, run.seed))
}

/// The event A_n: a ×-loop of h ≥ 2 in Λ_{2n} ∖ Λ_n around the origin.
pub fn a_n_event(n: i32) -> Result<EventSpec> {
    Ok(EventSpec::circuit(Annulus::new(Vertex::ORIGIN, n, 2 * n)?, LevelPredicate::at_least(2), Adjacency::Cross))
}

/// Estimate of a_n under zero boundary condition on Λ_{5n}. Defaults: 10·N² sweeps per chain,
/// thinned every N/2 sweeps.
pub fn a_n_estimate(n: i32, run: &RunSettings) -> Result<EventStats> {
    if n < 1 {
        return invalid("a_n needs n >= 1");
    }
    let d = Arc::new(build_even_box(5 * n)?);
    let bc = BoundaryCondition::zero(&d)?;
    let spec = a_n_event(n)?;
    let ev = spec.compile(&d)?;
    let w = half_width(&d) as u64;
    let cfg = run.chain_config(&d, 10 * w * w, (w / 2).max(1));
    let t = event_traces(&d, &bc, &ev, &cfg, run)?;
    Ok(EventStats::from_traces(format!("a_{n}"), Some(spec), &t, run.seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenormRow {
    pub n: i32,
    pub a_n: f64,
    pub a_2n: f64,
    /// a_{2n} / a_n²; NaN when a_n = 0.
    pub ratio: f64,
}

/// (n, a_n, a_{2n}, a_{2n}/a_n²) for every n whose double is also present.
pub fn renorm_table(stats: &[(i32, EventStats)]) -> Vec<RenormRow> {
    let by_n: HashMap<i32, f64> = stats.iter().map(|(n, s)| (*n, s.p_hat)).collect();
    let mut rows: Vec<RenormRow> = stats
        .iter()
        .filter_map(|(n, s)| {
            let a2 = *by_n.get(&(2 * n))?;
            let ratio = if s.p_hat > 0.0 { a2 / (s.p_hat * s.p_hat) } else { f64::NAN };
            Some(RenormRow { n: *n, a_n: s.p_hat, a_2n: a2, ratio })
        })
        .collect();
    rows.sort_by_key(|r| r.n);
    rows
}

/// Second moment of h at `v` (or of h_u − h_v over `pairs`, averaged) from chain traces.
fn second_moment_stats(label: String, n: i64, u: Vertex, v: Option<Vertex>, t: &[Vec<f64>], seed: u64) -> VarianceStats {
    let chains = t.len();
    let sums: Vec<(f64, f64, f64)> = t
        .iter()
        .map(|c| (c.len() as f64, c.iter().sum::<f64>(), c.iter().map(|x| x * x).sum::<f64>()))
        .collect();
    let pooled = |keep: &[usize], idx: usize| -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for &k in keep {
            den += sums[k].0;
            num += if idx == 1 { sums[k].1 } else { sums[k].2 };
        }
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    };
    let (variance, std_err) = jackknife(chains, |keep| pooled(keep, 2));
    VarianceStats {
        label,
        n,
        u,
        v,
        trials: t.iter().map(|c| c.len() as u64).sum(),
        mean: pooled(&(0..chains).collect::<Vec<_>>(), 1),
        variance,
        std_err,
        chains,
        seed,
        rhat: split_rhat(t),
    }
}

/// Second moment of h at `v` under the given instance.
pub fn vertex_variance(d: &Arc<Domain>, bc: &BoundaryCondition, v: Vertex, n: i64, run: &RunSettings) -> Result<VarianceStats> {
    let i = d.index(v).ok_or_else(|| Error::InvalidArgument(format!("{v:?} outside the domain")))?;
    let w = half_width(d).max(1) as u64;
    let cfg = run.chain_config(d, 8000 * w, 1);
    let t = traces(d, bc, &cfg, run, |c| c.value(i) as f64)?;
    Ok(second_moment_stats(format!("h0^2 n={n}"), n, v, None, &t, run.seed))
}

/// φ⁰[h_0²] on Λ_n^even for each n. Defaults: 8 chains, about 8000·n sweeps per chain after
/// burn-in, every sweep recorded.
pub fn variance_scan(ns: &[i32], run: &RunSettings) -> Result<Vec<VarianceStats>> {
    ns.iter()
        .map(|&n| {
            let d = Arc::new(build_even_box(n)?);
            let bc = BoundaryCondition::zero(&d)?;
            vertex_variance(&d, &bc, Vertex::ORIGIN, n as i64, run)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Jackknife error of the slope, when chain-level data is available.
    pub slope_err: Option<f64>,
}

/// Least-squares fit of variance against ln n.
pub fn log_fit(rows: &[VarianceStats]) -> Option<LogFit> {
    let x: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.variance).collect();
    least_squares(&x, &y).map(|(slope, intercept)| LogFit { slope, intercept, slope_err: None })
}

/// E[(h_u − h_v)²] on T_n, averaged over all translates of the pair.
pub fn torus_pair_variance(n: u32, u: Vertex, v: Vertex, run: &RunSettings) -> Result<VarianceStats> {
    let scan = torus_scan_with(n, &[(u, v)], run)?;
    Ok(scan.rows.into_iter().next().expect("one pair"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusScan {
    pub rows: Vec<VarianceStats>,
    /// Fit of E[(h_u − h_v)²] against ln ‖u − v‖₁ over pairs with u ≠ v.
    pub fit: Option<LogFit>,
}

/// Diagonal separations (k, k) from the origin for each k.
pub fn torus_scan(n: u32, ks: &[i32], run: &RunSettings) -> Result<TorusScan> {
    let pairs: Vec<(Vertex, Vertex)> = ks.iter().map(|&k| (Vertex::ORIGIN, Vertex::new(k, k))).collect();
    torus_scan_with(n, &pairs, run)
}

fn torus_scan_with(n: u32, pairs: &[(Vertex, Vertex)], run: &RunSettings) -> Result<TorusScan> {
    if n == 0 || n % 2 == 1 {
        return invalid(format!("torus period must be even and positive, got {n}"));
    }
    let d = Arc::new(build_torus(n)?);
    let mut bc = BoundaryCondition::new();
    bc.set(Vertex::ORIGIN, ValueSet::fixed(0));
    let len = d.len();
    let shifts: Vec<Vec<(usize, usize)>> = pairs
        .iter()
        .map(|(u, v)| {
            (0..len)
                .map(|i| {
                    let w = d.vertex(i);
                    let a = d.index(w.shift(u.x, u.y)).expect("torus wraps");
                    let b = d.index(w.shift(v.x, v.y)).expect("torus wraps");
                    (a, b)
                })
                .collect()
        })
        .collect();
    let nn = n as u64;
    let cfg = run.chain_config(&d, 2000 * nn, 4);
    let t: Vec<Vec<Vec<f64>>> = traces(&d, &bc, &cfg, run, |c| {
        let vals = c.values();
        shifts
            .iter()
            .map(|s| {
                let sum: i64 = s.iter().map(|&(a, b)| ((vals[a] - vals[b]) as i64).pow(2)).sum();
                sum as f64 / len as f64
            })
            .collect()
    })?;
    let chains = t.len();
    let mut rows = Vec::new();
    for (p, (u, v)) in pairs.iter().enumerate() {
        let per: Vec<Vec<f64>> = t.iter().map(|c| c.iter().map(|x| x[p].sqrt()).collect()).collect();
        let mut s = second_moment_stats(format!("torus n={n}"), n as i64, *u, Some(*v), &per, run.seed);
        s.mean = f64::NAN;
        rows.push(s);
    }
    let fit_idx: Vec<usize> = (0..pairs.len()).filter(|&p| pairs[p].0 != pairs[p].1).collect();
    let fit = if fit_idx.len() >= 2 {
        let x: Vec<f64> = fit_idx
            .iter()
            .map(|&p| (torus_l1(n as i32, pairs[p].0, pairs[p].1) as f64).ln())
            .collect();
        let sums: Vec<Vec<f64>> = (0..chains)
            .map(|c| fit_idx.iter().map(|&p| t[c].iter().map(|x| x[p]).sum::<f64>()).collect())
            .collect();
        let counts: Vec<f64> = t.iter().map(|c| c.len() as f64).collect();
        let slope_of = |keep: &[usize]| -> f64 {
            let den: f64 = keep.iter().map(|&c| counts[c]).sum();
            let y: Vec<f64> = (0..fit_idx.len()).map(|j| keep.iter().map(|&c| sums[c][j]).sum::<f64>() / den).collect();
            least_squares(&x, &y).map_or(f64::NAN, |f| f.0)
        };
        let (slope, err) = jackknife(chains, slope_of);
        let y: Vec<f64> = fit_idx.iter().map(|&p| rows[p].variance).collect();
        least_squares(&x, &y).map(|(_, intercept)| LogFit { slope, intercept, slope_err: Some(err) })
    } else {
        None
    };
    Ok(TorusScan { rows, fit })
}

/// ‖u − v‖₁ on the torus of period n.
pub fn torus_l1(n: i32, u: Vertex, v: Vertex) -> i32 {
    let dx = (u.x - v.x).rem_euclid(n);
    let dy = (u.y - v.y).rem_euclid(n);
    dx.min(n - dx) + dy.min(n - dy)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiameterRow {
    pub k: i32,
    pub stats: EventStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiameterDecay {
    pub n: i32,
    pub r: i32,
    pub rows: Vec<DiameterRow>,
    /// Slope of ln p against k over the rows with p > 0.
    pub slope: Option<f64>,
}

/// P[some ×-cluster of h ≥ k inside Λ_{rn} has diameter ≥ n] under zero boundary on Λ_{5n},
/// for each k. Defaults: r = 2, 10·N² sweeps per chain thinned every N/2 sweeps.
pub fn diameter_decay(n: i32, r: i32, ks: &[i32], run: &RunSettings) -> Result<DiameterDecay> {
    if n < 1 || r < 1 || r > 5 {
        return invalid("diameter decay needs n >= 1 and 1 <= r <= 5");
    }
    let d = Arc::new(build_even_box(5 * n)?);
    let bc = BoundaryCondition::zero(&d)?;
    let region = build_rect(-r * n, r * n, -r * n, r * n)?;
    let w = half_width(&d) as u64;
    let cfg = run.chain_config(&d, 10 * w * w, (w / 2).max(1));
    let t: Vec<Vec<Vec<bool>>> = traces(&d, &bc, &cfg, run, |c| {
        let h = c.snapshot();
        ks.iter()
            .map(|&k| max_cluster_diameter(&h, &region, &LevelPredicate::at_least(k), Adjacency::Cross) >= n)
            .collect()
    })?;
    let rows: Vec<DiameterRow> = ks
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let per: Vec<Vec<bool>> = t.iter().map(|c| c.iter().map(|x| x[j]).collect()).collect();
            DiameterRow { k, stats: EventStats::from_traces(format!("diam k={k}"), None, &per, run.seed) }
        })
        .collect();
    let pos: Vec<&DiameterRow> = rows.iter().filter(|r| r.stats.p_hat > 0.0).collect();
    let x: Vec<f64> = pos.iter().map(|r| r.k as f64).collect();
    let y: Vec<f64> = pos.iter().map(|r| r.stats.p_hat.ln()).collect();
    let slope = least_squares(&x, &y).map(|f| f.0);
    Ok(DiameterDecay { n, r, rows, slope })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RswReport {
    pub n: i32,
    pub rho: i32,
    /// Vertical ×-crossing of h ≥ 2 in Λ_{ρn,n} under zero boundary on D.
    pub vertical: EventStats,
    /// Horizontal ×-crossing of h ≥ 2 in Λ_{ρn,n} under zero boundary on D.
    pub horizontal_narrow: EventStats,
    /// Horizontal ×-crossing of h ≥ 2 in Λ_{ρn,n} under zero boundary on the widened domain.
    pub horizontal: EventStats,
    /// Vertical estimate 3σ above 0 implies a positive horizontal estimate.
    pub implication_holds: bool,
}

/// D is the even rectangle around [−(ρ+1)n, (ρ+1)n] × [−2n, 2n]; the widened domain is the union of
/// its translates by (k, 0) for |k| ≤ 2ρn.
pub fn rsw_spot_check(n: i32, rho: i32, run: &RunSettings) -> Result<RswReport> {
    if n < 1 || rho < 1 {
        return invalid("rsw check needs n, rho >= 1");
    }
    let (w, p) = (rho * n, LevelPredicate::at_least(2));
    let horiz = EventSpec::rect_crossing(-w, w, -n, n, false, p.clone(), Adjacency::Cross);
    let vert = EventSpec::rect_crossing(-w, w, -n, n, true, p, Adjacency::Cross);
    let d = Arc::new(build_even_rect((rho + 1) * n, 2 * n)?);
    let wide = Arc::new(build_even_rect((3 * rho + 1) * n, 2 * n)?);
    let run = RunSettings { use_oracle: false, ..run.clone() };
    let est = |dom: &Arc<Domain>, spec: &EventSpec, tag: u64, label: &str| -> Result<EventStats> {
        let bc = BoundaryCondition::zero(dom)?;
        let ev = spec.compile(dom)?;
        let w = half_width(dom) as u64;
        let r = RunSettings { seed: crate::mcmc::derive_seed(run.seed, tag, "rsw"), ..run.clone() };
        let cfg = r.chain_config(dom, 10 * w * w, (w / 2).max(1));
        let t = event_traces(dom, &bc, &ev, &cfg, &r)?;
        Ok(EventStats::from_traces(label.to_string(), Some(spec.clone()), &t, r.seed))
    };
    let vertical = est(&d, &vert, 0, "vertical D")?;
    let horizontal_narrow = est(&d, &horiz, 1, "horizontal D")?;
    let horizontal = est(&wide, &horiz, 2, "horizontal widened")?;
    let implication_holds = vertical.p_hat - 3.0 * vertical.sigma() <= 0.0 || horizontal.p_hat > 0.0;
    Ok(RswReport { n, rho, vertical, horizontal_narrow, horizontal, implication_holds })
}

/// A function of the height configuration used by the exact FKG and CBC checks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// 1{h_v ≥ t}.
    Threshold { v: Vertex, t: i32 },
    /// h_v.
    Height { v: Vertex },
    /// Indicator of an event.
    Event(EventSpec),
}

/// Whether observables act on h or on |h|.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Monotonicity {
    #[default]
    Signed,
    Absolute,
}

enum Compiled {
    Threshold(usize, i32),
    Height(usize),
    Event(CompiledEvent),
}

fn compile_family(d: &Arc<Domain>, family: &[Observable]) -> Result<Vec<Compiled>> {
    let idx = |v: &Vertex| d.index(*v).ok_or_else(|| Error::InvalidArgument(format!("{v:?} outside the domain")));
    family
        .iter()
        .map(|o| {
            Ok(match o {
                Observable::Threshold { v, t } => Compiled::Threshold(idx(v)?, *t),
                Observable::Height { v } => Compiled::Height(idx(v)?),
                Observable::Event(e) => Compiled::Event(e.compile(d)?),
            })
        })
        .collect()
}

impl Compiled {
    fn eval(&self, h: &HeightFunction) -> i64 {
        match self {
            Compiled::Threshold(i, t) => (h.at(*i) >= *t) as i64,
            Compiled::Height(i) => h.at(*i) as i64,
            Compiled::Event(e) => e.eval(h) as i64,
        }
    }
}

/// Enumerated states (as |h| in absolute mode) with every observable evaluated.
struct Table {
    states: Vec<HeightFunction>,
    values: Vec<Vec<i64>>,
}

fn tabulate(d: &Arc<Domain>, bc: &BoundaryCondition, family: &[Observable], mode: Monotonicity) -> Result<Table> {
    let comp = compile_family(d, family)?;
    let mut states = Vec::new();
    for h in enumerate(d, bc)? {
        let h = match mode {
            Monotonicity::Signed => h,
            Monotonicity::Absolute => {
                let vals = h.values().iter().map(|x| x.abs()).collect();
                HeightFunction::new(d.clone(), vals)?
            }
        };
        states.push(h);
    }
    if states.is_empty() {
        return invalid("inadmissible boundary condition");
    }
    let values = comp.iter().map(|c| states.iter().map(|h| c.eval(h)).collect()).collect();
    Ok(Table { states, values })
}

/// Checks every observable along the comparable pairs that differ at one vertex. In signed mode
/// these pairs generate the pointwise order of Hom(D,B,κ).
fn check_increasing(t: &Table, family: &[Observable]) -> Result<()> {
    let index: HashMap<&[i32], usize> = t.states.iter().enumerate().map(|(i, h)| (h.values(), i)).collect();
    let mut buf: Vec<i32> = Vec::new();
    for (s, h) in t.states.iter().enumerate() {
        for i in 0..h.values().len() {
            buf.clear();
            buf.extend_from_slice(h.values());
            buf[i] += 2;
            let Some(&s2) = index.get(buf.as_slice()) else { continue };
            for (k, f) in t.values.iter().enumerate() {
                if f[s] > f[s2] {
                    return invalid(format!(
                        "observable {} ({:?}) is not increasing: witness pair {} and {}",
                        k,
                        family[k],
                        crate::height::height_to_json(h),
                        crate::height::height_to_json(&t.states[s2])
                    ));
                }
            }
        }
    }
    Ok(())
}

fn rational(num: i128, den: i128) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Covariance {
    pub f: usize,
    pub g: usize,
    pub cov: Fraction,
    pub nonnegative: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FkgReport {
    pub mode: Monotonicity,
    pub states: usize,
    pub covariances: Vec<Covariance>,
    pub passed: bool,
}

/// Exact covariance of every pair of family members under the uniform measure.
pub fn fkg_check_exact(d: &Arc<Domain>, bc: &BoundaryCondition, family: &[Observable], mode: Monotonicity) -> Result<FkgReport> {
    bc.validate(d)?;
    if mode == Monotonicity::Absolute && bc.pos_part().is_none() {
        return invalid("absolute mode needs an |h|-adapted boundary condition");
    }
    let t = tabulate(d, bc, family, mode)?;
    check_increasing(&t, family)?;
    let z = t.states.len() as i128;
    let sums: Vec<i128> = t.values.iter().map(|f| f.iter().map(|&x| x as i128).sum()).collect();
    let mut covariances = Vec::new();
    for f in 0..family.len() {
        for g in f..family.len() {
            let fg: i128 = t.values[f].iter().zip(&t.values[g]).map(|(&a, &b)| a as i128 * b as i128).sum();
            let num = z * fg - sums[f] * sums[g];
            covariances.push(Covariance { f, g, cov: (&rational(num, z * z)).into(), nonnegative: num >= 0 });
        }
    }
    let passed = covariances.iter().all(|c| c.nonnegative);
    Ok(FkgReport { mode, states: t.states.len(), covariances, passed })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CbcRow {
    pub index: usize,
    pub low: Fraction,
    pub high: Fraction,
    pub monotone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CbcReport {
    pub mode: Monotonicity,
    pub rows: Vec<CbcRow>,
    pub passed: bool,
}

/// Values a set allows for |h| at a vertex of the given parity, as a hull.
fn abs_hull(s: &ValueSet, parity: u8) -> (i32, i32) {
    let (lo, hi) = s.hull();
    let top = lo.unsigned_abs().max(hi.unsigned_abs()).min(i32::MAX as u32) as i32;
    let bottom = if lo <= 0 && hi >= 0 { parity as i32 } else { lo.abs().min(hi.abs()) };
    (bottom, top)
}

/// Whether the values of the given parity (or their absolute values) leave no gaps.
fn is_parity_interval(s: &ValueSet, parity: u8, abs: bool) -> bool {
    match s {
        ValueSet::Interval { .. } => true,
        ValueSet::Finite(v) => {
            let mut vals: Vec<i32> = v
                .iter()
                .filter(|x| x.rem_euclid(2) as u8 == parity)
                .map(|&x| if abs { x.abs() } else { x })
                .collect();
            vals.sort_unstable();
            vals.dedup();
            vals.windows(2).all(|w| w[1] - w[0] == 2)
        }
    }
}

fn check_cbc_hypotheses(d: &Domain, low: &BoundaryCondition, high: &BoundaryCondition, mode: Monotonicity) -> Result<()> {
    let sl: Vec<Vertex> = low.support().collect();
    let sh: Vec<Vertex> = high.support().collect();
    if sl != sh {
        return invalid("boundary conditions must share their support");
    }
    for (v, a) in low.iter() {
        let b = high.get(*v).expect("same support");
        let p = d.canon(*v).parity();
        let abs = mode == Monotonicity::Absolute;
        if !is_parity_interval(a, p, abs) || !is_parity_interval(b, p, abs) {
            return invalid(format!("value sets at {v:?} are not intervals"));
        }
        let (ha, hb) = match mode {
            Monotonicity::Signed => (a.hull(), b.hull()),
            Monotonicity::Absolute => (abs_hull(a, p), abs_hull(b, p)),
        };
        if ha.0 > hb.0 || ha.1 > hb.1 {
            return invalid(format!("interval ends at {v:?} are not ordered: {ha:?} vs {hb:?}"));
        }
    }
    if mode == Monotonicity::Absolute {
        let (Some(pl), Some(ph)) = (low.pos_part(), high.pos_part()) else {
            return invalid("absolute mode needs |h|-adapted boundary conditions");
        };
        if !pl.is_subset(ph) {
            return invalid("B_pos of the lower condition must be contained in that of the upper one");
        }
    }
    Ok(())
}

/// Exact expectations of each family member under both boundary conditions; passes iff none
/// decreases from `low` to `high`.
pub fn cbc_check_exact(
    d: &Arc<Domain>,
    low: &BoundaryCondition,
    high: &BoundaryCondition,
    family: &[Observable],
    mode: Monotonicity,
) -> Result<CbcReport> {
    low.validate(d)?;
    high.validate(d)?;
    check_cbc_hypotheses(d, low, high, mode)?;
    let tl = tabulate(d, low, family, mode)?;
    let th = tabulate(d, high, family, mode)?;
    let (zl, zh) = (tl.states.len() as i128, th.states.len() as i128);
    let rows: Vec<CbcRow> = (0..family.len())
        .map(|k| {
            let sl: i128 = tl.values[k].iter().map(|&x| x as i128).sum();
            let sh: i128 = th.values[k].iter().map(|&x| x as i128).sum();
            CbcRow { index: k, low: (&rational(sl, zl)).into(), high: (&rational(sh, zh)).into(), monotone: sl * zh <= sh * zl }
        })
        .collect();
    let passed = rows.iter().all(|r| r.monotone);
    Ok(CbcReport { mode, rows, passed })
}

/// Threshold indicators 1{h_v ≥ t} for every non-fixed vertex and every t in the propagated range
/// above its minimum, plus two crossing indicators of the rectangle `rect` = (x0, x1, y0, y1) when given.
pub fn threshold_family(d: &Arc<Domain>, bc: &BoundaryCondition, rect: Option<(i32, i32, i32, i32)>) -> Result<Vec<Observable>> {
    let crate::lattice::Propagation::Bounded(b) = crate::lattice::propagate(d, bc)? else {
        return invalid("threshold family needs a bounded admissible instance");
    };
    let mut out = Vec::new();
    for i in 0..d.len() {
        let mut t = b.lo[i] + 2;
        while t <= b.hi[i] {
            out.push(Observable::Threshold { v: d.vertex(i), t });
            t += 2;
        }
    }
    if let Some((x0, x1, y0, y1)) = rect {
        out.push(Observable::Event(EventSpec::rect_crossing(x0, x1, y0, y1, false, LevelPredicate::at_least(0), Adjacency::NN)));
        out.push(Observable::Event(EventSpec::rect_crossing(x0, x1, y0, y1, true, LevelPredicate::at_least(1), Adjacency::Cross)));
    }
    Ok(out)
}

/// Same as [`threshold_family`] for |h|: thresholds from 1 up to the largest |h| allowed.
pub fn abs_threshold_family(d: &Arc<Domain>, bc: &BoundaryCondition) -> Result<Vec<Observable>> {
    let crate::lattice::Propagation::Bounded(b) = crate::lattice::propagate(d, bc)? else {
        return invalid("threshold family needs a bounded admissible instance");
    };
    let mut out = Vec::new();
    for i in 0..d.len() {
        let top = b.lo[i].abs().max(b.hi[i].abs());
        for t in 1..=top {
            out.push(Observable::Threshold { v: d.vertex(i), t });
        }
    }
    Ok(out)
}

/// Formats a float with 9 significant digits in plain decimal notation.
pub fn fmt9(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    let prec = (8 - mag).max(0) as usize;
    let s = format!("{x:.prec$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// CSV text with a header row and LF line endings.
pub fn to_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

pub const EVENT_HEADER: [&str; 9] = ["label", "param", "p_hat", "std_err", "batch_std_err", "trials", "hits", "seed", "exact"];

pub fn event_row(param: &str, s: &EventStats) -> Vec<String> {
    vec![
        s.label.clone(),
        param.to_string(),
        fmt9(s.p_hat),
        fmt9(s.std_err),
        fmt9(s.batch_std_err),
        s.trials.to_string(),
        s.hits.to_string(),
        s.seed.to_string(),
        s.exact.as_ref().map(|f| format!("{}/{}", f.num, f.den)).unwrap_or_default(),
    ]
}

pub const VARIANCE_HEADER: [&str; 9] = ["label", "n", "u", "v", "variance", "std_err", "mean", "trials", "seed"];

pub fn variance_row(s: &VarianceStats) -> Vec<String> {
    let vs = |v: Vertex| format!("{}:{}", v.x, v.y);
    vec![
        s.label.clone(),
        s.n.to_string(),
        vs(s.u),
        s.v.map(vs).unwrap_or_default(),
        fmt9(s.variance),
        fmt9(s.std_err),
        fmt9(s.mean),
        s.trials.to_string(),
        s.seed.to_string(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_split_square, single_vertex_instance};

    fn quick(seed: u64) -> RunSettings {
        RunSettings { seed, chains: 4, threads: 1, sweeps: Some(4000), burn_in: Some(200), thin: Some(1), ..RunSettings::default() }
    }

    #[test]
    fn fmt9_digits() {
        assert_eq!(fmt9(0.0), "0");
        assert_eq!(fmt9(1.0), "1");
        assert_eq!(fmt9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt9(123.456), "123.456");
        assert_eq!(fmt9(-2.5e-3), "-0.0025");
        assert_eq!(fmt9(1234567890.0), "1234567890");
    }

    #[test]
    fn jackknife_of_mean_is_standard_error() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let (m, se) = jackknife(4, |k| k.iter().map(|&i| xs[i]).sum::<f64>() / k.len() as f64);
        assert_eq!(m, 2.5);
        let sd = (xs.iter().map(|x| (x - 2.5) * (x - 2.5)).sum::<f64>() / 3.0).sqrt();
        assert!((se - sd / 2.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_exact_line() {
        let (s, i) = least_squares(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((s - 2.0).abs() < 1e-12 && (i - 1.0).abs() < 1e-12);
        assert!(least_squares(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn always_true_event() {
        let d = Arc::new(build_even_box(3).unwrap());
        let bc = BoundaryCondition::zero(&d).unwrap();
        let spec = EventSpec::rect_crossing(-1, 1, -1, 1, false, LevelPredicate::within(-100, 100), Adjacency::NN);
        let run = RunSettings { use_oracle: false, ..quick(3) };
        let s = estimate_event(&d, &bc, &spec, &run).unwrap();
        assert_eq!(s.p_hat, 1.0);
        assert_eq!(s.std_err, 0.0);
        assert_eq!(s.hits, s.trials);
    }

    #[test]
    fn split_square_estimate_matches_oracle() {
        let (q, bc) = build_split_square(3).unwrap();
        let spec = EventSpec::crossing(&q.rotated(), LevelPredicate::at_least(2), Adjacency::Cross);
        let exact = estimate_event(&q.domain, &bc, &spec, &quick(5)).unwrap();
        let p = exact.exact.clone().expect("oracle used");
        assert_eq!((p.num.as_str(), p.den.as_str()), ("135", "137"));
        let run = RunSettings { use_oracle: false, sweeps: Some(20000), thin: Some(2), ..quick(5) };
        let mc = estimate_event(&q.domain, &bc, &spec, &run).unwrap();
        assert!(mc.exact.is_none());
        assert!((mc.p_hat - exact.p_hat).abs() <= 3.0 * mc.sigma(), "{} vs {p:?}", mc.p_hat);
    }

    #[test]
    fn single_vertex_variance_is_one() {
        let (d, bc) = single_vertex_instance(1, 0).unwrap();
        let d = Arc::new(d);
        let s = vertex_variance(&d, &bc, Vertex::new(1, 0), 0, &quick(1)).unwrap();
        assert_eq!(s.variance, 1.0);
        assert_eq!(s.std_err, 0.0);
    }

    #[test]
    fn torus_identical_pair_is_zero() {
        let s = torus_pair_variance(4, Vertex::ORIGIN, Vertex::ORIGIN, &quick(2)).unwrap();
        assert_eq!(s.variance, 0.0);
        assert!(torus_pair_variance(3, Vertex::ORIGIN, Vertex::ORIGIN, &quick(2)).is_err());
    }

    #[test]
    fn torus_two_nearest_neighbours() {
        let d = Arc::new(build_torus(2).unwrap());
        let mut bc = BoundaryCondition::new();
        bc.set(Vertex::ORIGIN, ValueSet::fixed(0));
        let exact = crate::exact::exact_expectation(&d, &bc, |h| {
            let g = crate::height::gradient(h, Vertex::ORIGIN, Vertex::new(1, 0)).unwrap() as i64;
            g * g
        })
        .unwrap();
        assert_eq!(exact, rational(1, 1));
        let s = torus_pair_variance(2, Vertex::ORIGIN, Vertex::new(1, 0), &quick(9)).unwrap();
        assert!((s.variance - 1.0).abs() <= 3.0 * s.std_err + 1e-12);
    }

    #[test]
    fn a_1_is_zero() {
        let s = a_n_estimate(1, &quick(4)).unwrap();
        assert_eq!(s.hits, 0);
    }

    #[test]
    fn renorm_rows_pair_doubles() {
        let mk = |p: f64| EventStats::from_traces("x".into(), None, &[vec![true]], 0).clone_with(p);
        let rows = renorm_table(&[(2, mk(0.5)), (4, mk(0.2)), (3, mk(0.1))]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].n, 2);
        assert!((rows[0].ratio - 0.8).abs() < 1e-12);
    }

    impl EventStats {
        fn clone_with(mut self, p: f64) -> EventStats {
            self.p_hat = p;
            self
        }
    }

    #[test]
    fn diameter_probabilities_decrease() {
        let run = RunSettings { sweeps: Some(2000), thin: Some(4), ..quick(6) };
        let t = diameter_decay(2, 2, &[1, 2, 3, 50], &run).unwrap();
        let p: Vec<f64> = t.rows.iter().map(|r| r.stats.p_hat).collect();
        assert!(p.windows(2).all(|w| w[0] >= w[1]), "{p:?}");
        assert_eq!(p[3], 0.0);
    }

    #[test]
    fn fkg_single_vertex_quarter() {
        let (d, bc) = single_vertex_instance(1, 0).unwrap();
        let d = Arc::new(d);
        let f = Observable::Threshold { v: Vertex::new(1, 0), t: 1 };
        let r = fkg_check_exact(&d, &bc, &[f.clone(), f], Monotonicity::Signed).unwrap();
        assert!(r.passed);
        assert_eq!(r.covariances[1].cov, Fraction { num: "1".into(), den: "4".into() });
    }

    #[test]
    fn fkg_rejects_decreasing_member() {
        let (d, bc) = single_vertex_instance(1, 0).unwrap();
        let d = Arc::new(d);
        let spec = EventSpec::rect_crossing(1, 1, 0, 0, false, LevelPredicate::at_most(0), Adjacency::NN);
        let err = fkg_check_exact(&d, &bc, &[Observable::Event(spec)], Monotonicity::Signed).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(m) if m.contains("witness")));
    }

    #[test]
    fn cbc_single_vertex_constant_bcs() {
        let (d, lo) = single_vertex_instance(1, 0).unwrap();
        let (_, hi) = single_vertex_instance(1, 2).unwrap();
        let d = Arc::new(d);
        let v = Vertex::new(1, 0);
        let r = cbc_check_exact(&d, &lo, &hi, &[Observable::Height { v }], Monotonicity::Signed).unwrap();
        assert!(r.passed);
        assert_eq!(r.rows[0].low, Fraction { num: "0".into(), den: "1".into() });
        assert_eq!(r.rows[0].high, Fraction { num: "2".into(), den: "1".into() });
        let same = cbc_check_exact(&d, &lo, &lo, &[Observable::Height { v }], Monotonicity::Signed).unwrap();
        assert_eq!(same.rows[0].low, same.rows[0].high);
        assert!(cbc_check_exact(&d, &hi, &lo, &[Observable::Height { v }], Monotonicity::Signed).is_err());
    }
}
