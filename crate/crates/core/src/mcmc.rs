//! Heat-bath single-site Glauber dynamics for the uniform measure on Hom(D,B,κ).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::height::HeightFunction;
use crate::lattice::{propagate, BoundaryCondition, Domain, Propagation, ValueSet, Vertex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScanOrder {
    /// Row-major order over the free vertices.
    Raster,
    /// All even free vertices, then all odd ones, each in row-major order.
    #[default]
    Checkerboard,
    /// |free| uniformly random site picks per sweep.
    Random,
}

impl std::str::FromStr for ScanOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<ScanOrder> {
        match s {
            "raster" => Ok(ScanOrder::Raster),
            "checkerboard" => Ok(ScanOrder::Checkerboard),
            "random" => Ok(ScanOrder::Random),
            _ => invalid(format!("unknown scan order {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub sweeps: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub seed: u64,
    pub chain_index: u64,
    #[serde(default)]
    pub scan: ScanOrder,
}

impl ChainConfig {
    /// Heuristic defaults: burn-in 20·N² and thinning N² sweeps, N the L∞ half-width,
    /// with `samples` retained states.
    pub fn for_domain(d: &Domain, seed: u64, samples: u64) -> ChainConfig {
        let n = half_width(d).max(1) as u64;
        let burn_in = 20 * n * n;
        let thin = n * n;
        ChainConfig { sweeps: burn_in + thin * samples.max(1), burn_in, thin, seed, chain_index: 0, scan: ScanOrder::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweeps <= self.burn_in {
            return invalid(format!("sweeps {} must exceed burn_in {}", self.sweeps, self.burn_in));
        }
        if self.thin == 0 {
            return invalid("thin must be at least 1");
        }
        Ok(())
    }

    pub fn retained(&self) -> u64 {
        self.sweeps.saturating_sub(self.burn_in) / self.thin.max(1)
    }

    pub fn with_chain(&self, chain_index: u64) -> ChainConfig {
        ChainConfig { chain_index, ..self.clone() }
    }
}

/// L∞ half-width of the bounding box.
pub fn half_width(d: &Domain) -> i32 {
    let (_, _, w, h) = d.bbox();
    (w.max(h) - 1) / 2
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a of the tag bytes.
fn tag_hash(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Seed for one chain: splitmix64 applied over master, chain index and tag in turn.
/// Each stage is a bijection, so distinct chain indices never collide for fixed master and tag.
pub fn derive_seed(master: u64, chain_index: u64, tag: &str) -> u64 {
    let z = splitmix(master);
    let z = splitmix(z ^ chain_index);
    splitmix(z ^ tag_hash(tag))
}

fn extremal(d: &Arc<Domain>, bc: &BoundaryCondition, max: bool) -> Result<HeightFunction> {
    match propagate(d, bc)? {
        Propagation::Bounded(b) => HeightFunction::new(d.clone(), if max { b.hi } else { b.lo }),
        Propagation::Empty => invalid("inadmissible boundary condition"),
        Propagation::Unbounded => invalid("boundary condition does not bound every component"),
    }
}

/// Pointwise-lowest element of Hom(D,B,κ).
pub fn minimal_height(d: &Arc<Domain>, bc: &BoundaryCondition) -> Result<HeightFunction> {
    extremal(d, bc, false)
}

/// Pointwise-highest element of Hom(D,B,κ).
pub fn maximal_height(d: &Arc<Domain>, bc: &BoundaryCondition) -> Result<HeightFunction> {
    extremal(d, bc, true)
}

fn allowed(nbrs: impl Iterator<Item = i32>, set: Option<&ValueSet>, parity: u8) -> Vec<i32> {
    let mut lo = i32::MIN;
    let mut hi = i32::MAX;
    let mut any = false;
    for x in nbrs {
        any = true;
        lo = lo.max(x - 1);
        hi = hi.min(x + 1);
    }
    let mut out = Vec::with_capacity(2);
    if any {
        let mut x = lo;
        while x <= hi {
            if set.is_none_or(|s| s.contains(x)) {
                out.push(x);
            }
            x += 2;
        }
    } else if let Some(s) = set {
        out = s.elements(parity).unwrap_or_default();
    }
    out
}

/// Resamples h_v uniformly from S(v) = ∩_{u∼v} {h_u ± 1} ∩ bc(v).
pub fn heat_bath_step<R: Rng + ?Sized>(
    h: &HeightFunction,
    bc: &BoundaryCondition,
    v: Vertex,
    rng: &mut R,
) -> Result<HeightFunction> {
    let d = h.domain();
    let Some(i) = d.index(v) else {
        return invalid(format!("{v:?} is not in the domain"));
    };
    let cv = d.canon(v);
    if d.is_torus() && cv == h.base() {
        return invalid("the torus base vertex is never updated");
    }
    let set = bc.get(cv);
    if set.and_then(|s| s.singleton()).is_some() {
        return invalid(format!("{v:?} is fixed by the boundary condition"));
    }
    let s = allowed(d.nn_indices(i).map(|j| h.at(j)), set, cv.parity());
    if s.is_empty() {
        return Err(Error::Corruption(format!("no admissible value at {v:?}")));
    }
    let mut out = h.clone();
    out.values_mut()[i] = s[rng.gen_range(0..s.len())];
    Ok(out)
}

struct Generic {
    values: Vec<i32>,
    order: Vec<usize>,
    sets: Vec<Option<ValueSet>>,
    par: Vec<u8>,
}

/// Two sublattice arrays over a padded bounding box, updated with a branch-free
/// min/max kernel. Used when every free vertex has four neighbours and no set constraint.
struct Fast {
    x0: i32,
    y0: i32,
    stride: usize,
    rows: usize,
    arr: [Vec<i16>; 2],
    mask: [Vec<i16>; 2],
    coins: [Vec<u16>; 2],
    ghosts: [Vec<(u32, u32)>; 2],
    pos: Vec<(u8, u32)>,
    bit: u32,
}

enum Backend {
    Generic(Generic),
    Fast(Box<Fast>),
}

pub struct Chain {
    domain: Arc<Domain>,
    base: Vertex,
    backend: Backend,
    rng: ChaCha8Rng,
    scan: ScanOrder,
    sweeps: u64,
}

impl Fast {
    fn cell(&self, x: i32, y: i32) -> (usize, usize) {
        let q = (x + y).rem_euclid(2) as usize;
        let r = (y - self.y0) as usize;
        let off = (self.x0 + y + q as i32).rem_euclid(2);
        let j = ((x - self.x0 - off) / 2) as usize;
        (q, r * self.stride + j)
    }

    fn build(d: &Arc<Domain>, free: &[bool], values: &[i32]) -> Option<Fast> {
        let (bx, by, w, h) = d.bbox();
        let (x0, y0) = (bx - 2, by - 1);
        let (pw, ph) = (w + 4, h + 2);
        let stride = pw as usize / 2 + 3;
        let rows = ph as usize;
        let mut f = Fast {
            x0,
            y0,
            stride,
            rows,
            arr: [vec![0; stride * rows], vec![0; stride * rows]],
            mask: [vec![0; stride * rows], vec![0; stride * rows]],
            coins: [vec![0; stride * rows], vec![0; stride * rows]],
            ghosts: [Vec::new(), Vec::new()],
            pos: Vec::with_capacity(d.len()),
            bit: 0,
        };
        for (i, v) in d.vertices().iter().enumerate() {
            let x = i16::try_from(values[i]).ok()?;
            let (q, k) = f.cell(v.x, v.y);
            f.arr[q][k] = x;
            f.mask[q][k] = if free[i] { -1 } else { 0 };
            f.pos.push((q as u8, k as u32));
        }
        if d.is_torus() {
            for y in y0..y0 + ph {
                for x in x0..x0 + pw {
                    if d.vertices().binary_search(&Vertex::new(x, y)).is_ok() {
                        continue;
                    }
                    let c = d.canon(Vertex::new(x, y));
                    let (q, k) = f.cell(x, y);
                    let (qc, kc) = f.cell(c.x, c.y);
                    debug_assert_eq!(q, qc);
                    f.ghosts[q].push((k as u32, kc as u32));
                }
            }
            for q in 0..2 {
                f.copy_ghosts(q);
            }
        }
        Some(f)
    }

    fn get(&self, i: usize) -> i32 {
        let (q, k) = self.pos[i];
        self.arr[q as usize][k as usize] as i32
    }

    fn sweep(&mut self, rng: &mut ChaCha8Rng) {
        if self.bit == 0 {
            rng.fill(&mut self.coins[0][..]);
            rng.fill(&mut self.coins[1][..]);
        }
        for q in 0..2 {
            dispatch_half_sweep(self, q);
            self.copy_ghosts(q);
        }
        self.bit = (self.bit + 1) % 16;
    }

    fn copy_ghosts(&mut self, q: usize) {
        let a = &mut self.arr[q];
        for &(g, c) in &self.ghosts[q] {
            a[g as usize] = a[c as usize];
        }
    }
}

#[inline(always)]
fn half_sweep_body(f: &mut Fast, q: usize) {
    let s = f.stride;
    let n = s - 2;
    let bit = f.bit;
    let (a0, a1) = f.arr.split_at_mut(1);
    let (cur_arr, other) = if q == 0 { (&mut a0[0], &a1[0]) } else { (&mut a1[0], &a0[0]) };
    let mask_arr = &f.mask[q];
    let coin_arr = &f.coins[q];
    for r in 1..f.rows - 1 {
        let off = (f.x0 + f.y0 + r as i32 + q as i32).rem_euclid(2) as usize;
        let base = r * s;
        let cur = &mut cur_arr[base + 1..base + 1 + n];
        let mask = &mask_arr[base + 1..base + 1 + n];
        let coins = &coin_arr[base + 1..base + 1 + n];
        let l = &other[base + off..base + off + n];
        let rt = &other[base + 1 + off..base + 1 + off + n];
        let up = &other[base + s + 1..base + s + 1 + n];
        let dn = &other[base - s + 1..base - s + 1 + n];
        for k in 0..n {
            let mn = l[k].min(rt[k]).min(up[k].min(dn[k]));
            let mx = l[k].max(rt[k]).max(up[k].max(dn[k]));
            let c = ((coins[k] >> bit) & 1) as i16;
            let down = ((mn == mx) as i16) & c;
            let new = mn + 1 - 2 * down;
            cur[k] = (new & mask[k]) | (cur[k] & !mask[k]);
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn half_sweep_avx2(f: &mut Fast, q: usize) {
    half_sweep_body(f, q)
}

fn dispatch_half_sweep(f: &mut Fast, q: usize) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { half_sweep_avx2(f, q) };
            return;
        }
    }
    half_sweep_body(f, q)
}

impl Generic {
    fn sweep(&mut self, d: &Domain, rng: &mut ChaCha8Rng, random: bool) -> Result<()> {
        let n = self.order.len();
        for k in 0..n {
            let i = if random { self.order[rng.gen_range(0..n)] } else { self.order[k] };
            let vals = &self.values;
            let s = allowed(d.nn_indices(i).map(|j| vals[j]), self.sets[i].as_ref(), self.par[i]);
            match s.len() {
                0 => return Err(Error::Corruption(format!("no admissible value at {:?}", d.vertex(i)))),
                1 => self.values[i] = s[0],
                m => self.values[i] = s[rng.gen_range(0..m)],
            }
        }
        Ok(())
    }
}

impl Chain {
    pub fn new(d: &Arc<Domain>, bc: &BoundaryCondition, init: &HeightFunction, cfg: &ChainConfig) -> Result<Chain> {
        cfg.validate()?;
        if init.domain().as_ref() != d.as_ref() {
            return invalid("initial state lives on a different domain");
        }
        if !init.validate() {
            return invalid("initial state is not a homomorphism");
        }
        let sets = bc.per_index(d)?;
        for (i, s) in sets.iter().enumerate() {
            if s.as_ref().is_some_and(|s| !s.contains(init.at(i))) {
                return invalid(format!("initial state violates the boundary condition at {:?}", d.vertex(i)));
            }
        }
        let base = init.base();
        let base_idx = if d.is_torus() { d.index(base) } else { None };
        let free: Vec<bool> = (0..d.len())
            .map(|i| Some(i) != base_idx && sets[i].as_ref().is_none_or(|s| s.singleton().is_none()))
            .collect();
        let par: Vec<u8> = d.vertices().iter().map(|v| v.parity()).collect();
        let fast_ok = cfg.scan == ScanOrder::Checkerboard
            && (0..d.len()).all(|i| !free[i] || (sets[i].is_none() && d.degree(i) == 4));
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, cfg.chain_index, "chain"));
        let backend = match fast_ok.then(|| Fast::build(d, &free, init.values())).flatten() {
            Some(f) => Backend::Fast(Box::new(f)),
            None => {
                let mut order: Vec<usize> = (0..d.len()).filter(|&i| free[i]).collect();
                if cfg.scan == ScanOrder::Checkerboard {
                    order.sort_by_key(|&i| par[i]);
                }
                Backend::Generic(Generic { values: init.values().to_vec(), order, sets, par })
            }
        };
        Ok(Chain { domain: d.clone(), base, backend, rng, scan: cfg.scan, sweeps: 0 })
    }

    pub fn is_fast(&self) -> bool {
        matches!(self.backend, Backend::Fast(_))
    }

    pub fn sweeps_done(&self) -> u64 {
        self.sweeps
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    /// One proposed update per free vertex.
    pub fn sweep(&mut self) -> Result<()> {
        match &mut self.backend {
            Backend::Fast(f) => f.sweep(&mut self.rng),
            Backend::Generic(g) => g.sweep(&self.domain, &mut self.rng, self.scan == ScanOrder::Random)?,
        }
        self.sweeps += 1;
        Ok(())
    }

    /// Value at a domain index.
    pub fn value(&self, i: usize) -> i32 {
        match &self.backend {
            Backend::Fast(f) => f.get(i),
            Backend::Generic(g) => g.values[i],
        }
    }

    pub fn value_at(&self, v: Vertex) -> Option<i32> {
        self.domain.index(v).map(|i| self.value(i))
    }

    pub fn values(&self) -> Vec<i32> {
        (0..self.domain.len()).map(|i| self.value(i)).collect()
    }

    pub fn snapshot(&self) -> HeightFunction {
        HeightFunction::new(self.domain.clone(), self.values())
            .and_then(|h| h.with_base(self.base))
            .expect("chain state matches its domain")
    }
}

/// Runs the chain, calling `observe` on every retained state.
pub fn run_chain_with<F>(d: &Arc<Domain>, bc: &BoundaryCondition, init: &HeightFunction, cfg: &ChainConfig, mut observe: F) -> Result<()>
where
    F: FnMut(&Chain),
{
    let mut chain = Chain::new(d, bc, init, cfg)?;
    for s in 1..=cfg.sweeps {
        chain.sweep()?;
        if s > cfg.burn_in && (s - cfg.burn_in) % cfg.thin == 0 {
            observe(&chain);
        }
    }
    Ok(())
}

/// Retained samples as a vector.
pub fn run_chain(d: &Arc<Domain>, bc: &BoundaryCondition, init: &HeightFunction, cfg: &ChainConfig) -> Result<Vec<HeightFunction>> {
    let mut out = Vec::with_capacity(cfg.retained() as usize);
    run_chain_with(d, bc, init, cfg, |c| out.push(c.snapshot()))?;
    Ok(out)
}

/// Runs `chains` independent chains on up to `threads` workers. Even chains start from the
/// minimal state and odd ones from the maximal state; chain k uses `cfg.with_chain(k)`.
/// Results come back in chain order.
pub fn run_chains<T, F>(
    d: &Arc<Domain>,
    bc: &BoundaryCondition,
    cfg: &ChainConfig,
    chains: usize,
    threads: usize,
    work: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, Chain) -> Result<T> + Sync,
{
    let lo = minimal_height(d, bc)?;
    let hi = maximal_height(d, bc)?;
    cfg.validate()?;
    let threads = threads.clamp(1, chains.max(1));
    let mut slots: Vec<Option<Result<T>>> = (0..chains).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let k = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if k >= chains {
                    break;
                }
                let init = if k % 2 == 0 { &lo } else { &hi };
                let r = Chain::new(d, bc, init, &cfg.with_chain(k as u64)).and_then(|c| work(k, c));
                results.lock().expect("result lock")[k] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every chain ran")).collect()
}

/// Drives a chain through burn-in and thinning, feeding retained states to `observe`.
pub fn drive<F>(chain: &mut Chain, cfg: &ChainConfig, mut observe: F) -> Result<()>
where
    F: FnMut(&Chain),
{
    while chain.sweeps_done() < cfg.sweeps {
        chain.sweep()?;
        let s = chain.sweeps_done();
        if s > cfg.burn_in && (s - cfg.burn_in) % cfg.thin == 0 {
            observe(chain);
        }
    }
    Ok(())
}

/// Split-R̂ over chains of scalar traces: each trace is halved and the between/within
/// variance ratio computed over the halves. Returns 1 when all halves are constant.
pub fn split_rhat(traces: &[Vec<f64>]) -> f64 {
    let halves: Vec<&[f64]> = traces
        .iter()
        .filter(|t| t.len() >= 4)
        .flat_map(|t| {
            let m = t.len() / 2;
            [&t[..m], &t[t.len() - m..]]
        })
        .collect();
    if halves.len() < 2 {
        return f64::NAN;
    }
    let n = halves[0].len().min(halves.iter().map(|h| h.len()).min().unwrap_or(0)) as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / h.len() as f64).collect();
    let vars: Vec<f64> = halves
        .iter()
        .zip(&means)
        .map(|(h, m)| h.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (h.len() as f64 - 1.0))
        .collect();
    let k = halves.len() as f64;
    let grand = means.iter().sum::<f64>() / k;
    let b = n * means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (k - 1.0);
    let w = vars.iter().sum::<f64>() / k;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::enumerate;
    use crate::lattice::{build_even_box, build_torus, single_vertex_instance};
    use std::collections::HashMap;

    #[test]
    fn heat_bath_flat_neighbours() {
        let (d, bc) = single_vertex_instance(1, 0).unwrap();
        let d = Arc::new(d);
        let h = minimal_height(&d, &bc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ups = 0;
        for _ in 0..4000 {
            let g = heat_bath_step(&h, &bc, Vertex::new(1, 0), &mut rng).unwrap();
            ups += (g.get(Vertex::new(1, 0)) == Some(1)) as i32;
        }
        assert!((ups - 2000).abs() < 3 * 32, "{ups}");
    }

    #[test]
    fn heat_bath_forced_and_fixed() {
        let c = Vertex::new(1, 0);
        let mut verts = vec![c];
        verts.extend(c.nn());
        let d = Arc::new(Domain::general(verts));
        let mut bc = BoundaryCondition::new();
        for (k, u) in c.nn().enumerate() {
            bc.set(u, ValueSet::fixed(if k < 2 { 0 } else { 2 }));
        }
        let h = minimal_height(&d, &bc).unwrap();
        assert_eq!(h.get(c), Some(1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(heat_bath_step(&h, &bc, c, &mut rng).unwrap().get(c), Some(1));
        }
        assert!(heat_bath_step(&h, &bc, Vertex::new(0, 0), &mut rng).is_err());
    }

    #[test]
    fn seeds_differ_by_index_and_tag() {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let s: u64 = r.gen();
            assert_ne!(derive_seed(s, 0, "t"), derive_seed(s, 1, "t"));
            assert_ne!(derive_seed(s, 0, "t"), derive_seed(s, 0, "u"));
        }
        assert_eq!(derive_seed(1, 2, "chain"), derive_seed(1, 2, "chain"));
    }

    fn histogram(d: &Arc<Domain>, bc: &BoundaryCondition, scan: ScanOrder) -> (HashMap<Vec<i32>, usize>, usize, bool) {
        let cfg = ChainConfig { sweeps: 20_100, burn_in: 100, thin: 1, seed: 11, chain_index: 0, scan };
        let init = minimal_height(d, bc).unwrap();
        let mut hist = HashMap::new();
        let mut chain = Chain::new(d, bc, &init, &cfg).unwrap();
        let fast = chain.is_fast();
        let mut n = 0;
        drive(&mut chain, &cfg, |c| {
            *hist.entry(c.values()).or_insert(0) += 1;
            n += 1;
        })
        .unwrap();
        (hist, n, fast)
    }

    #[test]
    fn backends_match_uniform_on_small_box() {
        let d = Arc::new(build_even_box(1).unwrap());
        let bc = BoundaryCondition::zero(&d).unwrap();
        let states: Vec<Vec<i32>> = enumerate(&d, &bc).unwrap().map(|h| h.values().to_vec()).collect();
        for scan in [ScanOrder::Checkerboard, ScanOrder::Raster, ScanOrder::Random] {
            let (hist, n, fast) = histogram(&d, &bc, scan);
            assert_eq!(fast, scan == ScanOrder::Checkerboard);
            let tv: f64 = states
                .iter()
                .map(|s| (hist.get(s).copied().unwrap_or(0) as f64 / n as f64 - 1.0 / states.len() as f64).abs())
                .sum::<f64>()
                / 2.0;
            assert!(tv < 0.03, "{scan:?}: tv {tv}");
            assert_eq!(hist.len(), states.len());
        }
    }

    #[test]
    fn torus_backends_match_uniform() {
        let d = Arc::new(build_torus(4).unwrap());
        let mut bc = BoundaryCondition::new();
        bc.set(Vertex::ORIGIN, ValueSet::fixed(0));
        let states: Vec<Vec<i32>> = enumerate(&d, &bc).unwrap().map(|h| h.values().to_vec()).collect();
        for scan in [ScanOrder::Checkerboard, ScanOrder::Raster] {
            let cfg = ChainConfig { sweeps: 300_500, burn_in: 500, thin: 1, seed: 5, chain_index: 0, scan };
            let init = minimal_height(&d, &bc).unwrap();
            let mut hist: HashMap<Vec<i32>, usize> = HashMap::new();
            run_chain_with(&d, &bc, &init, &cfg, |c| *hist.entry(c.values()).or_insert(0) += 1).unwrap();
            let n = cfg.retained() as f64;
            let tv: f64 = states
                .iter()
                .map(|s| (hist.get(s).copied().unwrap_or(0) as f64 / n - 1.0 / states.len() as f64).abs())
                .sum::<f64>()
                / 2.0;
            assert!(tv < 0.05, "{scan:?}: tv {tv}");
        }
    }

    #[test]
    fn torus_base_stays_fixed() {
        let d = Arc::new(build_torus(4).unwrap());
        let mut bc = BoundaryCondition::new();
        bc.set(Vertex::ORIGIN, ValueSet::fixed(0));
        let cfg = ChainConfig { sweeps: 200, burn_in: 10, thin: 7, seed: 1, chain_index: 0, scan: ScanOrder::Checkerboard };
        let init = minimal_height(&d, &bc).unwrap();
        let samples = run_chain(&d, &bc, &init, &cfg).unwrap();
        assert_eq!(samples.len() as u64, cfg.retained());
        for h in &samples {
            assert!(h.validate());
            assert_eq!(h.get(Vertex::ORIGIN), Some(0));
        }
        assert!(Chain::new(&d, &bc, &init, &cfg).unwrap().is_fast());
    }

    #[test]
    fn same_seed_same_stream() {
        let d = Arc::new(build_even_box(3).unwrap());
        let bc = BoundaryCondition::zero(&d).unwrap();
        let cfg = ChainConfig { sweeps: 60, burn_in: 10, thin: 5, seed: 5, chain_index: 2, scan: ScanOrder::Checkerboard };
        let init = minimal_height(&d, &bc).unwrap();
        let a = run_chain(&d, &bc, &init, &cfg).unwrap();
        assert_eq!(a, run_chain(&d, &bc, &init, &cfg).unwrap());
        assert_ne!(a, run_chain(&d, &bc, &init, &cfg.with_chain(3)).unwrap());
        assert!(a.iter().all(|h| h.validate()));
    }

    #[test]
    fn chains_run_in_order() {
        let d = Arc::new(build_even_box(2).unwrap());
        let bc = BoundaryCondition::zero(&d).unwrap();
        let cfg = ChainConfig { sweeps: 50, burn_in: 0, thin: 50, seed: 5, chain_index: 0, scan: ScanOrder::Raster };
        let out = run_chains(&d, &bc, &cfg, 4, 3, |k, c| Ok((k, c.value_at(Vertex::ORIGIN).unwrap()))).unwrap();
        assert_eq!(out.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert!(out.iter().all(|x| x.1 % 2 == 0));
    }

    #[test]
    fn rhat_of_identical_chains_is_near_one() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let traces: Vec<Vec<f64>> = (0..4).map(|_| (0..1000).map(|_| r.gen::<f64>()).collect()).collect();
        let v = split_rhat(&traces);
        assert!((v - 1.0).abs() < 0.02, "{v}");
        let shifted = vec![vec![0.0; 100], vec![1.0; 100]];
        assert!(split_rhat(&shifted) > 1.1);
    }
}
