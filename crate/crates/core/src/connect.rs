//! Crossings, annulus circuits, nested loops and cluster diameters.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::height::HeightFunction;
use crate::lattice::{Annulus, BoundaryCondition, Domain, Quad, ValueSet, Vertex, CROSS_OFFSETS, NN_OFFSETS};

pub const STAR_OFFSETS: [(i32, i32); 8] = [(2, 0), (0, 2), (-2, 0), (0, -2), (1, 1), (-1, 1), (-1, -1), (1, -1)];
const KING_OFFSETS: [(i32, i32); 8] = [(1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, 1), (-1, -1), (1, -1)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adjacency {
    /// Euclidean distance 1.
    NN,
    /// Euclidean distance √2.
    Cross,
    /// Graph distance exactly 2.
    Star,
}

impl Adjacency {
    pub fn offsets(self) -> &'static [(i32, i32)] {
        match self {
            Adjacency::NN => &NN_OFFSETS,
            Adjacency::Cross => &CROSS_OFFSETS,
            Adjacency::Star => &STAR_OFFSETS,
        }
    }

    /// Offsets of the blocking adjacency for circuits of this kind.
    fn dual_offsets(self) -> &'static [(i32, i32)] {
        match self {
            Adjacency::NN => &KING_OFFSETS,
            Adjacency::Cross => &STAR_OFFSETS,
            Adjacency::Star => &CROSS_OFFSETS,
        }
    }
}

impl std::str::FromStr for Adjacency {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Adjacency> {
        match s {
            "nn" => Ok(Adjacency::NN),
            "cross" | "x" => Ok(Adjacency::Cross),
            "star" | "*" => Ok(Adjacency::Star),
            _ => invalid(format!("unknown adjacency {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    Identity,
    Absolute,
    Shift(i32),
}

/// Membership of a transformed height in a value set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelPredicate {
    #[serde(default)]
    pub transform: Transform,
    pub set: ValueSet,
}

impl LevelPredicate {
    pub fn new(transform: Transform, set: ValueSet) -> LevelPredicate {
        LevelPredicate { transform, set }
    }

    pub fn at_least(m: i32) -> LevelPredicate {
        LevelPredicate::new(Transform::Identity, ValueSet::at_least(m))
    }

    pub fn greater(m: i32) -> LevelPredicate {
        LevelPredicate::at_least(m + 1)
    }

    pub fn at_most(m: i32) -> LevelPredicate {
        LevelPredicate::new(Transform::Identity, ValueSet::at_most(m))
    }

    pub fn less(m: i32) -> LevelPredicate {
        LevelPredicate::at_most(m - 1)
    }

    pub fn equal(m: i32) -> LevelPredicate {
        LevelPredicate::new(Transform::Identity, ValueSet::fixed(m))
    }

    pub fn within(lo: i32, hi: i32) -> LevelPredicate {
        LevelPredicate::new(Transform::Identity, ValueSet::interval(lo, hi))
    }

    pub fn abs_at_least(m: i32) -> LevelPredicate {
        LevelPredicate::new(Transform::Absolute, ValueSet::at_least(m))
    }

    pub fn holds(&self, x: i32) -> bool {
        let y = match self.transform {
            Transform::Identity => x,
            Transform::Absolute => x.abs(),
            Transform::Shift(c) => x + c,
        };
        self.set.contains(y)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Corners in counter-clockwise order, resolved against the instance domain.
    Quad { a: Vertex, b: Vertex, c: Vertex, d: Vertex },
    /// Sub-rectangle [x0, x1] x [y0, y1] of the instance domain, crossed left to right, or
    /// bottom to top when `vertical` is set.
    Rect {
        x0: i32,
        x1: i32,
        y0: i32,
        y1: i32,
        #[serde(default)]
        vertical: bool,
    },
    Annulus(Annulus),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Path from arc [ab] to arc [cd].
    Crossing,
    /// Circuit around the annulus center.
    Circuit,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSpec {
    pub target: Target,
    pub predicate: LevelPredicate,
    pub adjacency: Adjacency,
    pub mode: Mode,
}

/// An event bound to a domain, ready for repeated evaluation.
#[derive(Clone, Debug)]
pub enum CompiledEvent {
    Crossing { quad: Quad, predicate: LevelPredicate, adjacency: Adjacency },
    Circuit { annulus: Annulus, predicate: LevelPredicate, adjacency: Adjacency },
}

impl EventSpec {
    pub fn crossing(q: &Quad, predicate: LevelPredicate, adjacency: Adjacency) -> EventSpec {
        EventSpec { target: Target::Quad { a: q.a, b: q.b, c: q.c, d: q.d }, predicate, adjacency, mode: Mode::Crossing }
    }

    pub fn rect_crossing(x0: i32, x1: i32, y0: i32, y1: i32, vertical: bool, predicate: LevelPredicate, adjacency: Adjacency) -> EventSpec {
        EventSpec { target: Target::Rect { x0, x1, y0, y1, vertical }, predicate, adjacency, mode: Mode::Crossing }
    }

    pub fn circuit(a: Annulus, predicate: LevelPredicate, adjacency: Adjacency) -> EventSpec {
        EventSpec { target: Target::Annulus(a), predicate, adjacency, mode: Mode::Circuit }
    }

    pub fn compile(&self, d: &Arc<Domain>) -> Result<CompiledEvent> {
        match (&self.target, self.mode) {
            (Target::Quad { a, b, c, d: dd }, Mode::Crossing) => Ok(CompiledEvent::Crossing {
                quad: Quad::new(d.clone(), *a, *b, *c, *dd)?,
                predicate: self.predicate.clone(),
                adjacency: self.adjacency,
            }),
            (Target::Rect { x0, x1, y0, y1, vertical }, Mode::Crossing) => {
                let q = Quad::rect(*x0, *x1, *y0, *y1)?;
                if let Some(v) = q.domain.vertices().iter().find(|v| !d.contains(**v)) {
                    return invalid(format!("rectangle vertex {v:?} outside the domain"));
                }
                let quad = if *vertical { q.rotated() } else { q };
                Ok(CompiledEvent::Crossing { quad, predicate: self.predicate.clone(), adjacency: self.adjacency })
            }
            (Target::Annulus(a), Mode::Circuit) => {
                if let Some(v) = a.vertices().into_iter().find(|v| !d.contains(*v)) {
                    return invalid(format!("annulus vertex {v:?} outside the domain"));
                }
                Ok(CompiledEvent::Circuit { annulus: *a, predicate: self.predicate.clone(), adjacency: self.adjacency })
            }
            (Target::Quad { .. } | Target::Rect { .. }, Mode::Circuit) => invalid("circuit mode needs an annulus target"),
            (Target::Annulus(_), Mode::Crossing) => invalid("crossing mode needs a quad target"),
        }
    }
}

impl CompiledEvent {
    pub fn eval(&self, h: &HeightFunction) -> bool {
        match self {
            CompiledEvent::Crossing { quad, predicate, adjacency } => crosses(h, quad, predicate, *adjacency),
            CompiledEvent::Circuit { annulus, predicate, adjacency } => {
                circuit_in_annulus(h, annulus, predicate, *adjacency).unwrap_or(false)
            }
        }
    }
}

/// Value of `h` at `v`, if defined.
fn height_at(h: &HeightFunction, v: Vertex) -> Option<i32> {
    h.get(v)
}

fn qualifying(h: &HeightFunction, d: &Domain, p: &LevelPredicate) -> Vec<bool> {
    if std::ptr::eq(h.domain().as_ref(), d) || h.domain().as_ref() == d {
        h.values().iter().map(|&x| p.holds(x)).collect()
    } else {
        d.vertices().iter().map(|&v| height_at(h, v).is_some_and(|x| p.holds(x))).collect()
    }
}

/// Search over the qualifying vertices of `d` from `sources` until a vertex in `targets` is hit.
fn reaches(d: &Domain, ok: &[bool], adj: Adjacency, sources: &[Vertex], targets: &[Vertex]) -> bool {
    let mut is_target = vec![false; d.len()];
    for &t in targets {
        if let Some(i) = d.index(t) {
            is_target[i] = ok[i];
        }
    }
    let mut seen = vec![false; d.len()];
    let mut queue = VecDeque::new();
    for &s in sources {
        if let Some(i) = d.index(s) {
            if ok[i] && !seen[i] {
                if is_target[i] {
                    return true;
                }
                seen[i] = true;
                queue.push_back(i);
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        let v = d.vertex(i);
        for &(dx, dy) in adj.offsets() {
            if let Some(j) = d.index(v.shift(dx, dy)) {
                if ok[j] && !seen[j] {
                    if is_target[j] {
                        return true;
                    }
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    false
}

/// Whether an `adj`-path of vertices satisfying `p` joins arc [ab] to arc [cd] inside the quad domain.
pub fn crosses(h: &HeightFunction, q: &Quad, p: &LevelPredicate, adj: Adjacency) -> bool {
    let ok = qualifying(h, &q.domain, p);
    reaches(&q.domain, &ok, adj, &q.arcs[0], &q.arcs[2])
}

fn annulus_values(h: &HeightFunction, a: &Annulus) -> Result<Vec<(Vertex, i32)>> {
    a.vertices()
        .into_iter()
        .map(|v| match height_at(h, v) {
            Some(x) => Ok((v, x)),
            None => invalid(format!("annulus vertex {v:?} outside the domain")),
        })
        .collect()
}

/// Whether the qualifying vertices of the annulus contain an `adj`-circuit winding around its center.
/// Decided by the absence of a blocking path (in the dual adjacency) of non-qualifying vertices
/// from the hole to the outside. Cross and Star paths keep vertex parity, so each parity class is
/// blocked separately.
pub fn circuit_in_annulus(h: &HeightFunction, a: &Annulus, p: &LevelPredicate, adj: Adjacency) -> Result<bool> {
    if a.inner == 0 && adj == Adjacency::Star {
        return invalid("star circuits need a nonempty hole beyond the center");
    }
    let vals = annulus_values(h, a)?;
    let c = a.center;
    let r = a.outer + 2;
    let side = (2 * r + 1) as usize;
    let idx = |v: Vertex| ((v.y - c.y + r) as usize) * side + (v.x - c.x + r) as usize;
    // 0 = open (qualifying), 1 = closed annulus vertex, 2 = hole, 3 = outside
    let mut state = vec![3u8; side * side];
    for y in -r..=r {
        for x in -r..=r {
            let v = c.shift(x, y);
            if v.linf_dist(c) <= a.inner {
                state[idx(v)] = 2;
            }
        }
    }
    for &(v, x) in &vals {
        state[idx(v)] = if p.holds(x) { 0 } else { 1 };
    }
    let offsets = adj.dual_offsets();
    let mut seen = vec![false; side * side];
    let mut queue = VecDeque::new();
    for y in -r..=r {
        for x in -r..=r {
            let v = c.shift(x, y);
            if state[idx(v)] == 2 {
                seen[idx(v)] = true;
                queue.push_back(v);
            }
        }
    }
    // A center of the other parity sits inside a diamond of its four neighbours.
    if a.inner == 0 && adj == Adjacency::Cross {
        for u in c.nn() {
            if state[idx(u)] == 1 && !seen[idx(u)] {
                seen[idx(u)] = true;
                queue.push_back(u);
            }
        }
    }
    let mut escaped = [false; 2];
    while let Some(v) = queue.pop_front() {
        for &(dx, dy) in offsets {
            let u = v.shift(dx, dy);
            if u.linf_dist(c) > r {
                continue;
            }
            let k = idx(u);
            if seen[k] {
                continue;
            }
            match state[k] {
                1 | 2 => {
                    seen[k] = true;
                    queue.push_back(u);
                }
                3 => escaped[u.parity() as usize] = true,
                _ => {}
            }
        }
    }
    Ok(match adj {
        Adjacency::NN => !escaped[0] && !escaped[1],
        _ => !escaped[0] || !escaped[1],
    })
}

/// Direct detector: some `adj`-component of qualifying annulus vertices contains a cycle of
/// nonzero winding number around the center (angle lifting along a spanning forest).
pub fn circuit_by_winding(h: &HeightFunction, a: &Annulus, p: &LevelPredicate, adj: Adjacency) -> Result<bool> {
    let vals = annulus_values(h, a)?;
    let c = a.center;
    let open: std::collections::HashSet<Vertex> = vals.iter().filter(|(_, x)| p.holds(*x)).map(|(v, _)| *v).collect();
    let angle = |v: Vertex| ((v.y - c.y) as f64).atan2((v.x - c.x) as f64);
    let step = |u: Vertex, v: Vertex| {
        let mut d = angle(v) - angle(u);
        while d > std::f64::consts::PI {
            d -= 2.0 * std::f64::consts::PI;
        }
        while d <= -std::f64::consts::PI {
            d += 2.0 * std::f64::consts::PI;
        }
        d
    };
    let mut lifted: std::collections::HashMap<Vertex, f64> = std::collections::HashMap::new();
    let mut order: Vec<Vertex> = open.iter().copied().collect();
    order.sort();
    for &s in &order {
        if lifted.contains_key(&s) {
            continue;
        }
        lifted.insert(s, angle(s));
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            let tu = lifted[&u];
            for &(dx, dy) in adj.offsets() {
                let v = u.shift(dx, dy);
                if !open.contains(&v) {
                    continue;
                }
                let tv = tu + step(u, v);
                match lifted.get(&v) {
                    None => {
                        lifted.insert(v, tv);
                        queue.push_back(v);
                    }
                    Some(&old) => {
                        if (old - tv).abs() > 1.0 {
                            return Ok(true);
                        }
                    }
                }
            }
        }
    }
    Ok(false)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Holds,
    Fails,
    NotApplicable,
}

impl Outcome {
    fn of(applicable: bool, lhs: bool, rhs: bool) -> Outcome {
        match (applicable, lhs == rhs) {
            (false, _) => Outcome::NotApplicable,
            (true, true) => Outcome::Holds,
            (true, false) => Outcome::Fails,
        }
    }
}

/// Per-identity outcomes of the quad duality relations for one configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualityReport {
    /// ×-crossing of h>m fails ⇔ NN-crossing of h≤m on the rotated quad.
    pub blocking: Outcome,
    /// NN-crossing of h≤m ⇔ *-crossing of h<m on the rotated quad.
    pub star: Outcome,
    /// ×-crossing of h<m implies *-crossing of h<m on the rotated quad.
    pub inclusion: Outcome,
    /// Under arc bounds: NN-crossing of h≥m ⇔ NN-crossing of h∈{m,m+1}.
    pub two_levels: Outcome,
    /// Under arc bounds: NN-crossing of h≥m ⇔ *-crossing of h=m+1.
    pub star_level: Outcome,
    /// Under arc bounds: ×-crossing of h≥m ⇔ ×-crossing of h=m.
    pub cross_level: Outcome,
    /// For m ≥ 1: NN-crossing of |h|≥m ⇔ NN-crossing of h≥m or of h≤−m.
    pub absolute: Outcome,
}

impl DualityReport {
    pub fn outcomes(&self) -> [(&'static str, Outcome); 7] {
        [
            ("blocking", self.blocking),
            ("star", self.star),
            ("inclusion", self.inclusion),
            ("two_levels", self.two_levels),
            ("star_level", self.star_level),
            ("cross_level", self.cross_level),
            ("absolute", self.absolute),
        ]
    }

    pub fn holds(&self) -> bool {
        self.outcomes().iter().all(|(_, o)| *o != Outcome::Fails)
    }
}

/// Smallest k with κ ⊂ [k,∞] on [ab]∪[cd] and κ ⊂ [−∞,k] on [bc]∪[da], if any.
pub fn arc_threshold(q: &Quad, bc: &BoundaryCondition) -> Option<i32> {
    let mut k = i32::MIN;
    for arc in [&q.arcs[1], &q.arcs[3]] {
        for v in arc {
            let s = bc.get(*v)?;
            let (_, hi) = s.hull();
            if hi >= crate::lattice::POS_INF {
                return None;
            }
            k = k.max(hi);
        }
    }
    for arc in [&q.arcs[0], &q.arcs[2]] {
        for v in arc {
            let (lo, _) = bc.get(*v)?.hull();
            if lo < k {
                return None;
            }
        }
    }
    Some(k)
}

/// Checks the quad duality relations for `h` at level `m`. The arc-bound relations apply only
/// when `bc` satisfies their hypothesis for some k ≤ m. The two *-path relations apply only when
/// no vertex of the arcs they start and end on has height exactly m, since a path may otherwise
/// begin at such a vertex while its *-shortcut cannot.
pub fn duality_check(h: &HeightFunction, q: &Quad, m: i32, bc: Option<&BoundaryCondition>) -> DualityReport {
    duality_check_with(h, q, m, bc, Adjacency::Cross)
}

/// [`duality_check`] with the adjacency of the blocking ×-crossing replaced by `cross`.
/// Anything other than `Adjacency::Cross` is a deliberate fault for mutation testing.
pub fn duality_check_with(h: &HeightFunction, q: &Quad, m: i32, bc: Option<&BoundaryCondition>, cross: Adjacency) -> DualityReport {
    let r = q.rotated();
    let x_gt = crosses(h, q, &LevelPredicate::greater(m), cross);
    let nn_le = crosses(h, &r, &LevelPredicate::at_most(m), Adjacency::NN);
    let star_lt = crosses(h, &r, &LevelPredicate::less(m), Adjacency::Star);
    let x_lt = crosses(h, &r, &LevelPredicate::less(m), Adjacency::Cross);
    let side_arcs_avoid_m = [&q.arcs[1], &q.arcs[3]].iter().all(|arc| arc.iter().all(|v| h.get(*v) != Some(m)));

    let arc_ok = bc.and_then(|b| arc_threshold(q, b)).is_some_and(|k| m >= k);
    let end_arcs_avoid_m = [&q.arcs[0], &q.arcs[2]].iter().all(|arc| arc.iter().all(|v| h.get(*v) != Some(m)));
    let nn_ge = crosses(h, q, &LevelPredicate::at_least(m), Adjacency::NN);
    let nn_pair = crosses(h, q, &LevelPredicate::within(m, m + 1), Adjacency::NN);
    let star_eq = crosses(h, q, &LevelPredicate::equal(m + 1), Adjacency::Star);
    let x_ge = crosses(h, q, &LevelPredicate::at_least(m), Adjacency::Cross);
    let x_eq = crosses(h, q, &LevelPredicate::equal(m), Adjacency::Cross);

    let abs = if m >= 1 {
        let a = crosses(h, q, &LevelPredicate::abs_at_least(m), Adjacency::NN);
        let b = crosses(h, q, &LevelPredicate::at_least(m), Adjacency::NN)
            || crosses(h, q, &LevelPredicate::at_most(-m), Adjacency::NN);
        Outcome::of(true, a, b)
    } else {
        Outcome::NotApplicable
    };
    DualityReport {
        blocking: Outcome::of(true, !x_gt, nn_le),
        star: Outcome::of(side_arcs_avoid_m, nn_le, star_lt),
        inclusion: Outcome::of(true, !x_lt || star_lt, true),
        two_levels: Outcome::of(arc_ok, nn_ge, nn_pair),
        star_level: Outcome::of(arc_ok && end_arcs_avoid_m, nn_ge, star_eq),
        cross_level: Outcome::of(arc_ok, x_ge, x_eq),
        absolute: abs,
    }
}

/// Exactly one of: an NN-crossing of |h| ≥ 1 from ∂Λ_m to ∂Λ_{2m}, or a ×-loop of h = 0
/// in the closed annulus between them surrounding the origin.
pub fn annulus_duality_check(h: &HeightFunction, m: i32) -> Result<bool> {
    let (crossing, loop_) = annulus_duality_sides(h, m)?;
    Ok(crossing != loop_)
}

/// Both sides of the annulus duality: (crossing of |h| ≥ 1, ×-loop of h = 0).
pub fn annulus_duality_sides(h: &HeightFunction, m: i32) -> Result<(bool, bool)> {
    if m < 1 {
        return invalid("annulus radius must be at least 1");
    }
    let a = Annulus::new(Vertex::ORIGIN, m - 1, 2 * m)?;
    let verts = a.vertices();
    if let Some(v) = verts.iter().find(|v| h.get(**v).is_none()) {
        return invalid(format!("{v:?} outside the domain"));
    }
    let ring = Domain::general(verts.iter().copied());
    let ok: Vec<bool> = ring.vertices().iter().map(|v| h.get(*v).is_some_and(|x| x.abs() >= 1)).collect();
    let inner: Vec<Vertex> = verts.iter().copied().filter(|v| v.linf() == m).collect();
    let outer: Vec<Vertex> = verts.iter().copied().filter(|v| v.linf() == 2 * m).collect();
    let crossing = reaches(&ring, &ok, Adjacency::NN, &inner, &outer);
    let loop_ = circuit_in_annulus(h, &a, &LevelPredicate::equal(0), Adjacency::Cross)?;
    Ok((crossing, loop_))
}

/// Outermost ×-loop of h ≥ 2k around the origin.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopInfo {
    pub k: i32,
    /// Vertices of the loop, sorted by angle around the origin.
    pub vertices: Vec<Vertex>,
    /// Largest L∞ distance from the origin.
    pub radius: i32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestedLoops {
    pub loops: Vec<LoopInfo>,
    /// census[i] = #{k : radius ∈ [2^i, 2^{i+1})}
    pub census: Vec<usize>,
}

/// Boundary of the region enclosed by the outermost ×-circuit of `open` sites of parity
/// `parity` around the origin, computed on the faces of the ×-lattice (diamonds centred at
/// the other parity). Returns None if no circuit surrounds the origin.
fn outermost_loop(open: &dyn Fn(Vertex) -> bool, parity: u8, x0: i32, x1: i32, y0: i32, y1: i32) -> Option<Vec<Vertex>> {
    let (fx0, fx1, fy0, fy1) = (x0 - 2, x1 + 2, y0 - 2, y1 + 2);
    let w = (fx1 - fx0 + 1) as usize;
    let hgt = (fy1 - fy0 + 1) as usize;
    let fid = |v: Vertex| ((v.y - fy0) as usize) * w + (v.x - fx0) as usize;
    let is_face = |v: Vertex| v.parity() != parity && v.x >= fx0 && v.x <= fx1 && v.y >= fy0 && v.y <= fy1;
    let mut outside = vec![false; w * hgt];
    let mut queue = VecDeque::new();
    for y in fy0..=fy1 {
        for x in fx0..=fx1 {
            let v = Vertex::new(x, y);
            if is_face(v) && (x < x0 || x > x1 || y < y0 || y > y1) {
                outside[fid(v)] = true;
                queue.push_back(v);
            }
        }
    }
    while let Some(f) = queue.pop_front() {
        for (dx, dy) in CROSS_OFFSETS {
            let g = f.shift(dx, dy);
            if !is_face(g) || outside[fid(g)] {
                continue;
            }
            if open(f.shift(dx, 0)) && open(f.shift(0, dy)) {
                continue;
            }
            outside[fid(g)] = true;
            queue.push_back(g);
        }
    }
    let o = Vertex::ORIGIN;
    let seeds: Vec<Vertex> = if o.parity() != parity { vec![o] } else { o.nn().collect() };
    if seeds.iter().any(|f| !is_face(*f) || outside[fid(*f)]) {
        return None;
    }
    let mut inside = vec![false; w * hgt];
    for &s in &seeds {
        inside[fid(s)] = true;
        queue.push_back(s);
    }
    while let Some(f) = queue.pop_front() {
        for (dx, dy) in CROSS_OFFSETS {
            let g = f.shift(dx, dy);
            if is_face(g) && !outside[fid(g)] && !inside[fid(g)] {
                inside[fid(g)] = true;
                queue.push_back(g);
            }
        }
    }
    let mut out = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let s = Vertex::new(x, y);
            if s.parity() != parity {
                continue;
            }
            let flags: Vec<bool> = s.nn().map(|f| is_face(f) && inside[fid(f)]).collect();
            if flags.iter().any(|b| *b) && flags.iter().any(|b| !*b) {
                out.push(s);
            }
        }
    }
    Some(out)
}

fn by_angle(mut vs: Vec<Vertex>) -> Vec<Vertex> {
    vs.sort_by(|a, b| {
        let ta = (a.y as f64).atan2(a.x as f64);
        let tb = (b.y as f64).atan2(b.x as f64);
        ta.total_cmp(&tb).then(a.cmp(b))
    });
    vs
}

/// For k = 1, 2, … the outermost ×-loop of h ≥ 2k inside `region` surrounding the origin, while
/// one exists, with the dyadic census of radii. Of the two parity classes the loop with the
/// larger radius is reported.
pub fn nested_loops(h: &HeightFunction, region: &Domain) -> NestedLoops {
    let (x0, y0, w, hh) = region.bbox();
    let (x1, y1) = (x0 + w - 1, y0 + hh - 1);
    let mut loops = Vec::new();
    let max = region.vertices().iter().filter_map(|v| h.get(*v)).max().unwrap_or(0);
    let mut k = 1;
    while 2 * k <= max {
        let level = 2 * k;
        let open = |v: Vertex| region.contains(v) && h.get(v).is_some_and(|x| x >= level);
        let best = [0u8, 1]
            .into_iter()
            .filter_map(|p| outermost_loop(&open, p, x0, x1, y0, y1))
            .map(|vs| {
                let r = vs.iter().map(|v| v.linf()).max().unwrap_or(0);
                (r, vs)
            })
            .max_by_key(|(r, _)| *r);
        match best {
            Some((radius, vs)) => loops.push(LoopInfo { k, vertices: by_angle(vs), radius }),
            None => break,
        }
        k += 1;
    }
    let mut census = Vec::new();
    for l in &loops {
        if l.radius < 1 {
            continue;
        }
        let i = (31 - (l.radius as u32).leading_zeros()) as usize;
        if census.len() <= i {
            census.resize(i + 1, 0);
        }
        census[i] += 1;
    }
    NestedLoops { loops, census }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> UnionFind {
        UnionFind { parent: (0..n as u32).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] as usize != x {
            let p = self.parent[x] as usize;
            self.parent[x] = self.parent[p];
            x = p;
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a as u32;
        self.size[a] += self.size[b];
        true
    }
}

/// Largest L∞ diameter of an `adj`-cluster of vertices of `region` satisfying `p`; 0 if none qualify.
pub fn max_cluster_diameter(h: &HeightFunction, region: &Domain, p: &LevelPredicate, adj: Adjacency) -> i32 {
    let ok = qualifying(h, region, p);
    let n = region.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        if !ok[i] {
            continue;
        }
        let v = region.vertex(i);
        for &(dx, dy) in adj.offsets() {
            if let Some(j) = region.index(v.shift(dx, dy)) {
                if ok[j] {
                    uf.union(i, j);
                }
            }
        }
    }
    let mut ext: std::collections::HashMap<usize, (i32, i32, i32, i32)> = std::collections::HashMap::new();
    for i in 0..n {
        if !ok[i] {
            continue;
        }
        let v = region.vertex(i);
        let e = ext.entry(uf.find(i)).or_insert((v.x, v.x, v.y, v.y));
        e.0 = e.0.min(v.x);
        e.1 = e.1.max(v.x);
        e.2 = e.2.min(v.y);
        e.3 = e.3.max(v.y);
    }
    ext.values().map(|e| (e.1 - e.0).max(e.3 - e.2)).max().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::enumerate;
    use crate::lattice::{build_even_box, build_rect};

    fn parity_on(d: Domain) -> HeightFunction {
        HeightFunction::parity_function(Arc::new(d))
    }

    #[test]
    fn parity_function_crossings() {
        let q = Quad::rect(0, 4, 0, 3).unwrap();
        let h = HeightFunction::parity_function(q.domain.clone());
        assert!(crosses(&h, &q, &LevelPredicate::at_least(0), Adjacency::NN));
        assert!(!crosses(&h, &q, &LevelPredicate::at_least(2), Adjacency::Cross));
        assert!(crosses(&h, &q, &LevelPredicate::equal(1), Adjacency::Cross));
        assert!(!crosses(&h, &q, &LevelPredicate::equal(1), Adjacency::NN));
    }

    #[test]
    fn parity_function_duality_at_zero() {
        let q = Quad::rect(0, 3, 0, 3).unwrap();
        let h = HeightFunction::parity_function(q.domain.clone());
        assert!(crosses(&h, &q, &LevelPredicate::greater(0), Adjacency::Cross));
        assert!(!crosses(&h, &q.rotated(), &LevelPredicate::at_most(0), Adjacency::NN));
        assert!(duality_check(&h, &q, 0, None).holds());
    }

    #[test]
    fn parity_function_circuits() {
        let h = parity_on(build_rect(-5, 5, -5, 5).unwrap());
        let a = Annulus::new(Vertex::ORIGIN, 1, 4).unwrap();
        assert!(circuit_in_annulus(&h, &a, &LevelPredicate::equal(0), Adjacency::Cross).unwrap());
        assert!(circuit_by_winding(&h, &a, &LevelPredicate::equal(0), Adjacency::Cross).unwrap());
        assert!(!circuit_in_annulus(&h, &a, &LevelPredicate::at_least(2), Adjacency::Cross).unwrap());
        assert!(!circuit_in_annulus(&h, &a, &LevelPredicate::equal(0), Adjacency::NN).unwrap());
        let big = Annulus::new(Vertex::ORIGIN, 1, 9).unwrap();
        assert!(circuit_in_annulus(&h, &big, &LevelPredicate::equal(0), Adjacency::Cross).is_err());
    }

    #[test]
    fn canonical_and_winding_detectors_agree_exhaustively() {
        let d = Arc::new(build_even_box(2).unwrap());
        let bc = BoundaryCondition::zero(&d).unwrap();
        let annuli = [Annulus::new(Vertex::ORIGIN, 0, 2).unwrap(), Annulus::new(Vertex::ORIGIN, 1, 2).unwrap()];
        let mut n = 0;
        for h in enumerate(&d, &bc).unwrap() {
            for a in &annuli {
                for p in [LevelPredicate::equal(0), LevelPredicate::at_least(1), LevelPredicate::at_most(0), LevelPredicate::abs_at_least(1)] {
                    for adj in [Adjacency::NN, Adjacency::Cross, Adjacency::Star] {
                        if a.inner == 0 && adj == Adjacency::Star {
                            continue;
                        }
                        let x = circuit_in_annulus(&h, a, &p, adj).unwrap();
                        let y = circuit_by_winding(&h, a, &p, adj).unwrap();
                        assert_eq!(x, y, "{a:?} {p:?} {adj:?} {:?}", h.values());
                        n += 1;
                    }
                }
            }
        }
        assert!(n > 1000);
    }

    #[test]
    fn annulus_duality_on_parity_and_plus() {
        let d = Arc::new(build_rect(-4, 4, -4, 4).unwrap());
        let h = HeightFunction::parity_function(d.clone());
        let (crossing, loop_) = annulus_duality_sides(&h, 2).unwrap();
        assert!(!crossing && loop_);
        let plus = HeightFunction::new(d.clone(), d.vertices().iter().map(|v| 1 + v.parity() as i32).collect()).unwrap();
        let (crossing, loop_) = annulus_duality_sides(&plus, 2).unwrap();
        assert!(crossing && !loop_);
    }

    #[test]
    fn nested_loops_basic() {
        let d = build_rect(-6, 6, -6, 6).unwrap();
        let one = parity_on(d.clone());
        assert!(nested_loops(&one, &d).loops.is_empty());
        let dd = Arc::new(d.clone());
        let vals = dd.vertices().iter().map(|v| {
            let t = 8 - v.l1();
            if t > v.parity() as i32 { t } else { v.parity() as i32 }
        });
        let h = HeightFunction::new(dd.clone(), vals.collect()).unwrap();
        assert!(h.validate());
        let nl = nested_loops(&h, &d);
        let radii: Vec<i32> = nl.loops.iter().map(|l| l.radius).collect();
        assert_eq!(radii, vec![6, 4, 2]);
        assert_eq!(nl.census, vec![0, 1, 2]);
    }

    #[test]
    fn diameters() {
        let d = build_rect(-3, 3, -3, 3).unwrap();
        let h = parity_on(d.clone());
        assert_eq!(max_cluster_diameter(&h, &d, &LevelPredicate::at_least(2), Adjacency::Cross), 0);
        assert_eq!(max_cluster_diameter(&h, &d, &LevelPredicate::equal(1), Adjacency::Cross), 6);
        assert_eq!(max_cluster_diameter(&h, &d, &LevelPredicate::equal(1), Adjacency::NN), 0);
        assert_eq!(max_cluster_diameter(&h, &d, &LevelPredicate::at_least(0), Adjacency::NN), 6);
    }

    #[test]
    fn event_spec_round_trip() {
        let q = Quad::rect(0, 3, 0, 3).unwrap();
        let e = EventSpec::crossing(&q, LevelPredicate::at_least(1), Adjacency::NN);
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(serde_json::from_str::<EventSpec>(&s).unwrap(), e);
        let c = e.compile(&q.domain).unwrap();
        assert!(c.eval(&HeightFunction::parity_function(q.domain.clone())) == false);
        let bad = EventSpec { mode: Mode::Circuit, ..e };
        assert!(bad.compile(&q.domain).is_err());
    }
}
