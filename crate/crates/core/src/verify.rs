//! Exhaustive verification suites: duality, annulus duality, FKG/CBC, the arrow bijection,
//! sampler correctness and oracle cross-checks.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::connect::{annulus_duality_sides, duality_check_with, Adjacency, Outcome};
use crate::error::Result;
use crate::estimate::{
    abs_threshold_family, cbc_check_exact, fkg_check_exact, threshold_family, Monotonicity, Observable,
};
use crate::exact::{enumerate, free_vertex_count, transfer_count};
use crate::height::{arrows_to_heights, decode_arrows, encode_arrows, height_to_json, heights_to_arrows, HeightFunction};
use crate::lattice::{
    build_even_box, build_rect, build_torus, instance_to_json, is_admissible, single_vertex_instance, BoundaryCondition,
    Domain, Quad, ValueSet, Vertex,
};
use crate::mcmc::{run_chain, ChainConfig, ScanOrder};

/// Outcome of one suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub checks: u64,
    pub failures: u64,
    pub seconds: f64,
    pub details: Vec<String>,
    /// First failing configuration, replayable as an instance plus height function.
    pub counterexample: Option<serde_json::Value>,
}

impl SuiteReport {
    fn new(name: &str) -> SuiteReport {
        SuiteReport { name: name.into(), checks: 0, failures: 0, seconds: 0.0, details: Vec::new(), counterexample: None }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checks > 0
    }

    fn record(&mut self, ok: bool, witness: impl FnOnce() -> serde_json::Value) {
        self.checks += 1;
        if !ok {
            self.failures += 1;
            if self.counterexample.is_none() {
                self.counterexample = Some(witness());
            }
        }
    }
}

fn timed(name: &str, body: impl FnOnce(&mut SuiteReport) -> Result<()>) -> Result<SuiteReport> {
    let t = Instant::now();
    let mut r = SuiteReport::new(name);
    body(&mut r)?;
    r.seconds = t.elapsed().as_secs_f64();
    Ok(r)
}

fn witness(d: &Domain, bc: &BoundaryCondition, h: &HeightFunction, extra: serde_json::Value) -> serde_json::Value {
    let instance: serde_json::Value = serde_json::from_str(&instance_to_json(d, bc)).expect("instance JSON");
    let height: serde_json::Value = serde_json::from_str(&height_to_json(h)).expect("height JSON");
    json!({ "instance": instance, "height": height, "detail": extra })
}

/// Quads checked on a rectangle: the corner quad plus every quad whose corners share a parity.
fn rect_quads(q0: &Quad) -> Vec<Quad> {
    let d = q0.domain.clone();
    let bd = d.boundary().to_vec();
    let n = bd.len();
    let mut out = vec![q0.clone()];
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                for l in k + 1..n {
                    let c = [bd[i], bd[j], bd[k], bd[l]];
                    if c.iter().all(|v| v.parity() == c[0].parity()) {
                        if let Ok(q) = Quad::new(d.clone(), c[0], c[1], c[2], c[3]) {
                            out.push(q);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Boundary conditions tried on a quad: one pinned corner, and arc bounds at levels −2..2 with
/// slack 0, 1 and 3, the corners fixed to the level.
fn quad_bcs(q: &Quad) -> Result<Vec<BoundaryCondition>> {
    let d = &q.domain;
    let mut out = Vec::new();
    let mut pinned = BoundaryCondition::new();
    pinned.set(q.a, ValueSet::fixed(q.a.parity() as i32));
    out.push(pinned);
    for k in -2..=2 {
        for up in [0, 1, 3] {
            let mut bc = BoundaryCondition::new();
            for v in d.boundary() {
                bc.set(*v, ValueSet::interval(k - up, k + up));
            }
            for v in q.arcs[0].iter().chain(&q.arcs[2]) {
                bc.set(*v, ValueSet::interval(k, k + up));
            }
            for v in q.arcs[1].iter().chain(&q.arcs[3]) {
                bc.set(*v, ValueSet::interval(k - up, k));
            }
            for v in [q.a, q.b, q.c, q.d] {
                bc.set(v, ValueSet::fixed(k));
            }
            if is_admissible(d, &bc).unwrap_or(false) {
                out.push(bc);
            }
        }
    }
    Ok(out)
}

/// Every configuration of every test boundary condition on rectangles up to `max_size`² and every
/// level m ∈ {−2, …, 2}. `fault` replaces the ×-adjacency of the blocking identity by NN.
pub fn duality_suite(max_size: i32, fault: bool) -> Result<SuiteReport> {
    let cross = if fault { Adjacency::NN } else { Adjacency::Cross };
    timed("duality", |r| {
        let mut tally: HashMap<&'static str, [u64; 3]> = HashMap::new();
        for w in 2..=max_size {
            for hh in 2..=max_size {
                let q0 = Quad::rect(0, w - 1, 0, hh - 1)?;
                for q in rect_quads(&q0) {
                    for bc in quad_bcs(&q)? {
                        for h in enumerate(&q.domain, &bc)? {
                            for m in -2..=2 {
                                let rep = duality_check_with(&h, &q, m, Some(&bc), cross);
                                for (name, o) in rep.outcomes() {
                                    let e = tally.entry(name).or_insert([0; 3]);
                                    match o {
                                        Outcome::Holds => e[0] += 1,
                                        Outcome::Fails => e[1] += 1,
                                        Outcome::NotApplicable => e[2] += 1,
                                    }
                                    if o != Outcome::NotApplicable {
                                        r.record(o == Outcome::Holds, || {
                                            witness(
                                                &q.domain,
                                                &bc,
                                                &h,
                                                json!({ "identity": name, "m": m, "quad": [q.a, q.b, q.c, q.d] }),
                                            )
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut names: Vec<_> = tally.into_iter().collect();
        names.sort();
        for (name, [h, f, na]) in names {
            r.details.push(format!("{name}: holds {h}, fails {f}, not applicable {na}"));
        }
        Ok(())
    })
}

/// Exactly one side of the annulus duality at m = 1 on every configuration of Λ₂^even with zero
/// boundary condition.
pub fn annulus_suite() -> Result<SuiteReport> {
    timed("annulus", |r| {
        let d = Arc::new(build_even_box(2)?);
        let bc = BoundaryCondition::zero(&d)?;
        let (mut crossings, mut loops) = (0u64, 0u64);
        for h in enumerate(&d, &bc)? {
            let (c, l) = annulus_duality_sides(&h, 1)?;
            crossings += c as u64;
            loops += l as u64;
            r.record(c != l, || witness(&d, &bc, &h, json!({ "crossing": c, "loop": l })));
        }
        r.details.push(format!("{} configurations, {crossings} crossings, {loops} loops", r.checks));
        Ok(())
    })
}

/// Closed ±1 walk around the rectangle border, starting from the parity value at the first vertex.
fn border_walk(d: &Domain, steps: &[i32]) -> BoundaryCondition {
    let bd = d.boundary();
    let mut bc = BoundaryCondition::new();
    let mut x = bd[0].parity() as i32;
    for (i, v) in bd.iter().enumerate() {
        bc.set(*v, ValueSet::fixed(x));
        x += steps[i];
    }
    bc
}

fn random_steps(len: usize, rng: &mut ChaCha8Rng) -> Vec<i32> {
    let mut s: Vec<i32> = (0..len).map(|i| if i < len / 2 { 1 } else { -1 }).collect();
    s.shuffle(rng);
    s
}

/// Instances with at most 12 free vertices used by the FKG, CBC and irreducibility checks.
pub fn small_instances(seed: u64) -> Result<Vec<(Arc<Domain>, BoundaryCondition, Option<(i32, i32, i32, i32)>)>> {
    let mut out = Vec::new();
    for (p, g) in [(1u8, 0), (0, 1)] {
        let (d, bc) = single_vertex_instance(p, g)?;
        out.push((Arc::new(d), bc, None));
    }
    let box1 = Arc::new(build_even_box(1)?);
    for g in [0, 2] {
        out.push((box1.clone(), BoundaryCondition::constant(&box1, g)?, Some((-1, 1, -1, 1))));
    }
    let r3 = Arc::new(build_rect(0, 2, 0, 2)?);
    let len3 = r3.boundary().len();
    for mask in 0u32..(1 << len3) {
        if mask.count_ones() as usize * 2 != len3 {
            continue;
        }
        let steps: Vec<i32> = (0..len3).map(|i| if mask >> i & 1 == 1 { 1 } else { -1 }).collect();
        let bc = border_walk(&r3, &steps);
        if is_admissible(&r3, &bc)? {
            out.push((r3.clone(), bc, Some((0, 2, 0, 2))));
        }
    }
    let r5 = Arc::new(build_rect(0, 4, 0, 4)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut walks = 0;
    while walks < 64 {
        let bc = border_walk(&r5, &random_steps(r5.boundary().len(), &mut rng));
        if is_admissible(&r5, &bc)? {
            out.push((r5.clone(), bc, Some((0, 4, 0, 4))));
            walks += 1;
        }
    }
    let r34 = Arc::new(build_rect(0, 2, 0, 3)?);
    let mut intervals = 0;
    while intervals < 32 {
        let mut bc = BoundaryCondition::new();
        for v in r34.boundary() {
            let c = rng.gen_range(-2..=2);
            let w = rng.gen_range(0..=2);
            bc.set(*v, ValueSet::interval(c - w, c + w));
        }
        if bc.validate(&r34).is_ok() && is_admissible(&r34, &bc)? {
            out.push((r34.clone(), bc, Some((0, 2, 0, 3))));
            intervals += 1;
        }
    }
    let t2 = Arc::new(build_torus(2)?);
    let mut pin = BoundaryCondition::new();
    pin.set(Vertex::ORIGIN, ValueSet::fixed(0));
    out.push((t2, pin, None));
    for (d, bc, _) in &out {
        assert!(free_vertex_count(d, bc)? <= 12);
    }
    Ok(out)
}

/// An |h|-adapted condition on the 5×5 rectangle border: `pos` vertices take a fixed value
/// |x| and the others the symmetric pair ±x.
fn adapted(d: &Domain, vals: &[i32], pos: &[bool]) -> BoundaryCondition {
    let mut bc = BoundaryCondition::new();
    let mut bpos = std::collections::BTreeSet::new();
    for (i, v) in d.boundary().iter().enumerate() {
        let x = vals[i].abs();
        if pos[i] {
            bc.set(*v, ValueSet::fixed(x));
            bpos.insert(*v);
        } else {
            bc.set(*v, ValueSet::finite(vec![-x, x]));
        }
    }
    bc.set_pos_part(Some(bpos));
    bc
}

/// FKG for h over threshold and crossing families on every small instance, and FKG for |h| on
/// |h|-adapted conditions.
pub fn fkg_suite(seed: u64) -> Result<SuiteReport> {
    timed("fkg", |r| {
        for (d, bc, rect) in small_instances(seed)? {
            let fam = threshold_family(&d, &bc, rect)?;
            let rep = fkg_check_exact(&d, &bc, &fam, Monotonicity::Signed)?;
            for c in &rep.covariances {
                r.record(c.nonnegative, || json!({ "instance": instance_json(&d, &bc), "pair": [c.f, c.g], "cov": c.cov }));
            }
        }
        let signed = r.checks;
        for (d, bc) in adapted_instances(seed)? {
            let fam = abs_threshold_family(&d, &bc)?;
            let rep = fkg_check_exact(&d, &bc, &fam, Monotonicity::Absolute)?;
            for c in &rep.covariances {
                r.record(c.nonnegative, || json!({ "instance": instance_json(&d, &bc), "pair": [c.f, c.g], "mode": "abs" }));
            }
        }
        r.details.push(format!("{signed} covariances for h, {} for |h|", r.checks - signed));
        Ok(())
    })
}

fn instance_json(d: &Domain, bc: &BoundaryCondition) -> serde_json::Value {
    serde_json::from_str(&instance_to_json(d, bc)).expect("instance JSON")
}

fn adapted_instances(seed: u64) -> Result<Vec<(Arc<Domain>, BoundaryCondition)>> {
    let d = Arc::new(build_rect(0, 4, 0, 4)?);
    let len = d.boundary().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xab5);
    let mut out = Vec::new();
    while out.len() < 12 {
        let steps = random_steps(len, &mut rng);
        let mut vals = vec![0; len];
        let mut x = d.boundary()[0].parity() as i32;
        for i in 0..len {
            vals[i] = x;
            x += steps[i];
        }
        let pos: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.5)).collect();
        let bc = adapted(&d, &vals, &pos);
        if bc.validate(&d).is_ok() && is_admissible(&d, &bc)? {
            out.push((d.clone(), bc));
        }
    }
    Ok(out)
}

/// CBC on random nested-interval pairs over the 3×3 and 5×5 rectangles, identical pairs, and
/// B_pos-nested |h|-adapted pairs.
pub fn cbc_suite(seed: u64) -> Result<SuiteReport> {
    timed("cbc", |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xcbc);
        for (x1, y1, pairs) in [(2, 2, 40), (4, 4, 20)] {
            let d = Arc::new(build_rect(0, x1, 0, y1)?);
            let mut made = 0;
            while made < pairs {
                let mut low = BoundaryCondition::new();
                let mut high = BoundaryCondition::new();
                for v in d.boundary() {
                    let a = rng.gen_range(-3..=1);
                    let b = a + rng.gen_range(0..=2);
                    let (da, db) = (rng.gen_range(0..=2), rng.gen_range(0..=2));
                    low.set(*v, ValueSet::interval(a, b));
                    high.set(*v, ValueSet::interval(a + da, b + db.max(da)));
                }
                let ok = |bc: &BoundaryCondition| bc.validate(&d).is_ok() && is_admissible(&d, bc).unwrap_or(false);
                if !ok(&low) || !ok(&high) {
                    continue;
                }
                made += 1;
                let fam = range_family(&d, -4, 4);
                let rep = cbc_check_exact(&d, &low, &high, &fam, Monotonicity::Signed)?;
                for row in &rep.rows {
                    r.record(row.monotone, || json!({ "low": instance_json(&d, &low), "high": instance_json(&d, &high), "index": row.index }));
                }
                let same = cbc_check_exact(&d, &low, &low, &fam, Monotonicity::Signed)?;
                for row in &same.rows {
                    r.record(row.low == row.high, || json!({ "identical": instance_json(&d, &low), "index": row.index }));
                }
            }
        }
        let signed = r.checks;
        let adapted = adapted_instances(seed)?;
        for (d, low) in &adapted {
            let mut high = low.clone();
            let mut bpos = low.pos_part().cloned().unwrap_or_default();
            for v in d.boundary() {
                if bpos.contains(v) {
                    continue;
                }
                let (_, x) = low.get(*v).expect("border").hull();
                if rng.gen_bool(0.5) {
                    high.set(*v, ValueSet::fixed(x));
                    bpos.insert(*v);
                }
            }
            high.set_pos_part(Some(bpos));
            if high.validate(d).is_err() || !is_admissible(d, &high)? {
                continue;
            }
            let fam: Vec<Observable> = (0..d.len())
                .flat_map(|i| (1..=4).map(move |t| (i, t)))
                .map(|(i, t)| Observable::Threshold { v: d.vertex(i), t })
                .collect();
            let rep = cbc_check_exact(d, low, &high, &fam, Monotonicity::Absolute)?;
            for row in &rep.rows {
                r.record(row.monotone, || json!({ "low": instance_json(d, low), "high": instance_json(d, &high), "index": row.index, "mode": "abs" }));
            }
        }
        r.details.push(format!("{signed} expectation comparisons for h, {} for |h|", r.checks - signed));
        Ok(())
    })
}

fn range_family(d: &Domain, lo: i32, hi: i32) -> Vec<Observable> {
    let mut out = Vec::new();
    for &v in d.vertices() {
        for t in lo..=hi {
            out.push(Observable::Threshold { v, t });
        }
        out.push(Observable::Height { v });
    }
    out
}

/// Heights → arrows → heights is the identity, the ice rule holds, and the binary encoding
/// round-trips.
pub fn round_trip_ok(h: &HeightFunction) -> Result<bool> {
    let a = heights_to_arrows(h)?;
    if !a.ice_rule_holds() || decode_arrows(&encode_arrows(&a)?)? != a {
        return Ok(false);
    }
    let lifted = match arrows_to_heights(&a, 0) {
        Ok(l) => l,
        Err(_) => arrows_to_heights(&a, 1)?,
    };
    let b = lifted.base();
    let Some(off) = h.get(b).zip(lifted.get(b)).map(|(x, y)| x - y) else {
        return Ok(false);
    };
    Ok(h.domain().len() == lifted.domain().len()
        && h.domain().vertices().iter().all(|&v| lifted.get(v).map(|x| x + off) == h.get(v)))
}

/// T₂ exhaustively, then `samples` chain states on T₈ and on Λ₄^even.
pub fn bijection_suite(seed: u64, samples: u64) -> Result<SuiteReport> {
    timed("bijection", |r| {
        let t2 = Arc::new(build_torus(2)?);
        let mut pin = BoundaryCondition::new();
        pin.set(Vertex::ORIGIN, ValueSet::fixed(0));
        for h in enumerate(&t2, &pin)? {
            let ok = round_trip_ok(&h)?;
            r.record(ok, || witness(&t2, &pin, &h, json!("torus 2")));
        }
        let t8 = Arc::new(build_torus(8)?);
        let box4 = Arc::new(build_even_box(4)?);
        let zero = BoundaryCondition::zero(&box4)?;
        for (d, bc) in [(t8, pin.clone()), (box4, zero)] {
            let cfg = ChainConfig { sweeps: 100 + 5 * samples / 2, burn_in: 100, thin: 5, seed, chain_index: 0, scan: ScanOrder::Checkerboard };
            let init = crate::mcmc::minimal_height(&d, &bc)?;
            for h in run_chain(&d, &bc, &init, &cfg)?.iter().take(samples as usize / 2) {
                let ok = round_trip_ok(h)?;
                r.record(ok, || witness(&d, &bc, h, json!("chain sample")));
            }
        }
        r.details.push(format!("{} round trips", r.checks));
        Ok(())
    })
}

/// Total variation distance between the empirical law of chain states and the uniform law on
/// the enumerated configurations.
pub fn tv_distance(d: &Arc<Domain>, bc: &BoundaryCondition, cfg: &ChainConfig) -> Result<(f64, usize)> {
    let states: Vec<Vec<i32>> = enumerate(d, bc)?.map(|h| h.values().to_vec()).collect();
    let mut counts: HashMap<Vec<i32>, u64> = states.iter().map(|s| (s.clone(), 0)).collect();
    let init = crate::mcmc::minimal_height(d, bc)?;
    let mut total = 0u64;
    let mut stray = 0u64;
    crate::mcmc::run_chain_with(d, bc, &init, cfg, |c| {
        total += 1;
        match counts.get_mut(&c.values()) {
            Some(k) => *k += 1,
            None => stray += 1,
        }
    })?;
    let u = 1.0 / states.len() as f64;
    let tv = 0.5 * (counts.values().map(|&k| (k as f64 / total as f64 - u).abs()).sum::<f64>() + stray as f64 / total as f64);
    Ok((tv, states.len()))
}

/// Whether single-site moves connect all of Hom(D,B,κ).
pub fn single_site_connected(d: &Arc<Domain>, bc: &BoundaryCondition) -> Result<bool> {
    let states: Vec<Vec<i32>> = enumerate(d, bc)?.map(|h| h.values().to_vec()).collect();
    let index: HashMap<&[i32], usize> = states.iter().enumerate().map(|(i, s)| (s.as_slice(), i)).collect();
    let mut uf = crate::connect::UnionFind::new(states.len());
    let mut buf = Vec::new();
    for (i, s) in states.iter().enumerate() {
        for v in 0..s.len() {
            buf.clear();
            buf.extend_from_slice(s);
            buf[v] += 2;
            if let Some(&j) = index.get(buf.as_slice()) {
                uf.union(i, j);
            }
        }
    }
    let root = uf.find(0);
    Ok((0..states.len()).all(|i| uf.find(i) == root))
}

/// Maximum TV distance accepted by the sampler suite.
pub const TV_LIMIT: f64 = 0.02;

/// TV distance of `samples` states on Λ₁^even with zero boundary condition, and single-site
/// connectivity on every small instance.
pub fn sampler_suite(seed: u64, samples: u64) -> Result<SuiteReport> {
    timed("sampler", |r| {
        let d = Arc::new(build_even_box(1)?);
        let bc = BoundaryCondition::zero(&d)?;
        let cfg = ChainConfig { sweeps: 1000 + samples, burn_in: 1000, thin: 1, seed, chain_index: 0, scan: ScanOrder::Checkerboard };
        let (tv, k) = tv_distance(&d, &bc, &cfg)?;
        r.details.push(format!("tv {tv:.5} over {k} states from {samples} samples"));
        r.record(tv < TV_LIMIT, || json!({ "tv": tv, "states": k }));
        let mut n = 0;
        for (d, bc, _) in small_instances(seed)? {
            let ok = single_site_connected(&d, &bc)?;
            n += 1;
            r.record(ok, || json!({ "disconnected": instance_json(&d, &bc) }));
        }
        r.details.push(format!("{n} instances connected"));
        Ok(())
    })
}

/// Enumeration and transfer-matrix counts agree.
pub fn oracle_suite(seed: u64) -> Result<SuiteReport> {
    timed("oracle", |r| {
        let mut cases: Vec<(Arc<Domain>, BoundaryCondition)> = Vec::new();
        for n in 1..=2 {
            let d = Arc::new(build_even_box(n)?);
            cases.push((d.clone(), BoundaryCondition::zero(&d)?));
        }
        for (d, bc, _) in small_instances(seed)? {
            if !d.is_torus() {
                cases.push((d, bc));
            }
        }
        let t4 = Arc::new(build_torus(4)?);
        let mut pin = BoundaryCondition::new();
        pin.set(Vertex::ORIGIN, ValueSet::fixed(0));
        cases.push((t4, pin));
        for (d, bc) in &cases {
            let e = enumerate(d, bc)?.count();
            let t = transfer_count(d, bc)?.total;
            r.record(t == e.into(), || json!({ "instance": instance_json(d, bc), "enumerated": e, "transfer": t.to_string() }));
        }
        r.details.push(format!("{} instances", cases.len()));
        Ok(())
    })
}

/// Default sizes for the full run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub max_size: i32,
    pub bijection_samples: u64,
    pub sampler_samples: u64,
    pub fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { seed: 1, max_size: 4, bijection_samples: 1000, sampler_samples: 100_000, fault: false }
    }
}

pub fn verify_all(o: &VerifyOptions) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        duality_suite(o.max_size, o.fault)?,
        annulus_suite()?,
        fkg_suite(o.seed)?,
        cbc_suite(o.seed)?,
        bijection_suite(o.seed, o.bijection_samples)?,
        sampler_suite(o.seed, o.sampler_samples)?,
        oracle_suite(o.seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grid_duality_passes() {
        let r = duality_suite(3, false).unwrap();
        assert!(r.passed(), "{:?}", r.details);
    }

    #[test]
    fn injected_fault_is_caught_with_counterexample() {
        let r = duality_suite(2, true).unwrap();
        assert!(r.failures > 0);
        let ce = r.counterexample.unwrap();
        assert_eq!(ce["detail"]["identity"], "blocking");
        let inst = serde_json::to_string(&ce["instance"]).unwrap();
        assert!(crate::lattice::instance_from_json(&inst).is_ok());
    }

    #[test]
    fn small_instances_are_small() {
        for (d, bc, _) in small_instances(3).unwrap() {
            assert!(free_vertex_count(&d, &bc).unwrap() <= 12);
        }
    }

    #[test]
    fn round_trip_on_parity_function() {
        let d = Arc::new(build_even_box(2).unwrap());
        assert!(round_trip_ok(&HeightFunction::parity_function(d)).unwrap());
    }
}
