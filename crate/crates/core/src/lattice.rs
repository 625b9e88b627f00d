//! Lattice geometry: vertices, domains, quads, annuli and boundary conditions.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const NEG_INF: i32 = i32::MIN / 4;
pub const POS_INF: i32 = i32::MAX / 4;
const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Vertex {
    pub x: i32,
    pub y: i32,
}

impl From<[i32; 2]> for Vertex {
    fn from(a: [i32; 2]) -> Self {
        Vertex { x: a[0], y: a[1] }
    }
}

impl From<Vertex> for [i32; 2] {
    fn from(v: Vertex) -> Self {
        [v.x, v.y]
    }
}

// Row-major: by y, then x.
impl Ord for Vertex {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for Vertex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub const NN_OFFSETS: [(i32, i32); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];
pub const CROSS_OFFSETS: [(i32, i32); 4] = [(1, 1), (-1, 1), (-1, -1), (1, -1)];

impl Vertex {
    pub const ORIGIN: Vertex = Vertex { x: 0, y: 0 };

    pub const fn new(x: i32, y: i32) -> Self {
        Vertex { x, y }
    }

    /// 0 for even, 1 for odd.
    pub fn parity(self) -> u8 {
        (self.x + self.y).rem_euclid(2) as u8
    }

    pub fn is_even(self) -> bool {
        self.parity() == 0
    }

    pub fn shift(self, dx: i32, dy: i32) -> Vertex {
        Vertex::new(self.x + dx, self.y + dy)
    }

    pub fn linf(self) -> i32 {
        self.x.abs().max(self.y.abs())
    }

    pub fn l1(self) -> i32 {
        self.x.abs() + self.y.abs()
    }

    pub fn l1_dist(self, o: Vertex) -> i32 {
        (self.x - o.x).abs() + (self.y - o.y).abs()
    }

    pub fn linf_dist(self, o: Vertex) -> i32 {
        (self.x - o.x).abs().max((self.y - o.y).abs())
    }

    pub fn nn(self) -> impl Iterator<Item = Vertex> {
        NN_OFFSETS.into_iter().map(move |(dx, dy)| self.shift(dx, dy))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    EvenDomain,
    MixedDomain,
    TorusWrap(u32),
    General,
}

/// Finite vertex set with cached indexing and nearest-neighbour table.
#[derive(Clone, Debug)]
pub struct Domain {
    kind: DomainKind,
    vertices: Vec<Vertex>,
    boundary: Vec<Vertex>,
    x0: i32,
    y0: i32,
    w: i32,
    h: i32,
    slots: Vec<u32>,
    nbrs: Vec<[u32; 4]>,
}

impl Eq for Domain {}

impl PartialEq for Domain {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.vertices == other.vertices && self.boundary == other.boundary
    }
}

impl Domain {
    fn assemble(kind: DomainKind, mut vertices: Vec<Vertex>, boundary: Option<Vec<Vertex>>) -> Domain {
        vertices.sort();
        vertices.dedup();
        let (mut x0, mut y0, mut x1, mut y1) = (0, 0, -1, -1);
        if let Some(f) = vertices.first() {
            (x0, y0, x1, y1) = (f.x, f.y, f.x, f.y);
        }
        for v in &vertices {
            x0 = x0.min(v.x);
            x1 = x1.max(v.x);
            y0 = y0.min(v.y);
            y1 = y1.max(v.y);
        }
        let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
        let mut slots = vec![NONE; (w.max(0) as usize) * (h.max(0) as usize)];
        for (i, v) in vertices.iter().enumerate() {
            slots[((v.y - y0) * w + (v.x - x0)) as usize] = i as u32;
        }
        let mut d = Domain { kind, vertices, boundary: Vec::new(), x0, y0, w, h, slots, nbrs: Vec::new() };
        d.nbrs = (0..d.vertices.len())
            .map(|i| {
                let v = d.vertices[i];
                let mut out = [NONE; 4];
                for (k, (dx, dy)) in NN_OFFSETS.iter().enumerate() {
                    if let Some(j) = d.index(v.shift(*dx, *dy)) {
                        out[k] = j as u32;
                    }
                }
                out
            })
            .collect();
        d.boundary = match boundary {
            Some(b) => b,
            None if matches!(kind, DomainKind::TorusWrap(_)) => Vec::new(),
            None => d.vertices.iter().copied().filter(|v| v.nn().any(|u| !d.contains(u))).collect(),
        };
        d
    }

    /// Domain with boundary computed as the vertices having a neighbour outside, row-major.
    pub fn general(vertices: impl IntoIterator<Item = Vertex>) -> Domain {
        Domain::assemble(DomainKind::General, vertices.into_iter().collect(), None)
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn boundary(&self) -> &[Vertex] {
        &self.boundary
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn torus_period(&self) -> Option<u32> {
        match self.kind {
            DomainKind::TorusWrap(n) => Some(n),
            _ => None,
        }
    }

    pub fn is_torus(&self) -> bool {
        self.torus_period().is_some()
    }

    /// Bounding box as (x0, y0, width, height).
    pub fn bbox(&self) -> (i32, i32, i32, i32) {
        (self.x0, self.y0, self.w, self.h)
    }

    /// Canonical representative of v (wrapped on the torus).
    pub fn canon(&self, v: Vertex) -> Vertex {
        match self.torus_period() {
            Some(n) => Vertex::new(v.x.rem_euclid(n as i32), v.y.rem_euclid(n as i32)),
            None => v,
        }
    }

    pub fn index(&self, v: Vertex) -> Option<usize> {
        let v = self.canon(v);
        let (dx, dy) = (v.x - self.x0, v.y - self.y0);
        if dx < 0 || dy < 0 || dx >= self.w || dy >= self.h {
            return None;
        }
        let s = self.slots[(dy * self.w + dx) as usize];
        (s != NONE).then_some(s as usize)
    }

    pub fn contains(&self, v: Vertex) -> bool {
        self.index(v).is_some()
    }

    pub fn vertex(&self, i: usize) -> Vertex {
        self.vertices[i]
    }

    /// Nearest-neighbour indices of vertex i in order E, N, W, S; `None` where absent.
    pub fn nn_slots(&self, i: usize) -> [Option<usize>; 4] {
        self.nbrs[i].map(|j| (j != NONE).then_some(j as usize))
    }

    pub fn nn_indices(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.nbrs[i].iter().filter(|&&j| j != NONE).map(|&j| j as usize)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.nbrs[i].iter().filter(|&&j| j != NONE).count()
    }

    /// Nearest-neighbour edges (i, j) with i < j, each once; torus wrap edges included.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.len() {
            for j in self.nn_indices(i) {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Connected components under nearest-neighbour adjacency; returns component id per vertex.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let mut comp = vec![usize::MAX; self.len()];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for s in 0..self.len() {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = count;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for v in self.nn_indices(u) {
                    if comp[v] == usize::MAX {
                        comp[v] = count;
                        queue.push_back(v);
                    }
                }
            }
            count += 1;
        }
        (comp, count)
    }

    /// Graph distances inside the domain from a set of sources.
    pub fn bfs_distances(&self, sources: &[usize]) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.len()];
        let mut queue = VecDeque::new();
        for &s in sources {
            if dist[s] != 0 {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            for v in self.nn_indices(u) {
                if dist[v] == u32::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

/// Orders a ×-circuit counter-clockwise, starting from its lowest-then-leftmost vertex and
/// always taking the right-most available turn.
pub fn order_cross_circuit(set: &[Vertex]) -> Option<Vec<Vertex>> {
    let members: BTreeSet<Vertex> = set.iter().copied().collect();
    let start = *members.iter().next()?;
    let mut out = vec![start];
    let mut dir = (1, 1);
    let mut cur = start.shift(1, 1);
    if !members.contains(&cur) {
        return None;
    }
    while cur != start {
        if out.len() > members.len() {
            return None;
        }
        out.push(cur);
        let (dx, dy) = dir;
        let prefs = [(dy, -dx), (dx, dy), (-dy, dx)];
        let next = prefs.into_iter().find(|&(ex, ey)| members.contains(&cur.shift(ex, ey)))?;
        dir = next;
        cur = cur.shift(next.0, next.1);
    }
    Some(out)
}

/// Vertices NN-reachable from `seed` without entering `walls`; `None` if the fill escapes `limit` in L∞.
pub fn flood_fill(walls: &BTreeSet<Vertex>, seed: Vertex, limit: i32) -> Option<BTreeSet<Vertex>> {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([seed]);
    seen.insert(seed);
    while let Some(u) = queue.pop_front() {
        if u.linf() > limit {
            return None;
        }
        for v in u.nn() {
            if !walls.contains(&v) && seen.insert(v) {
                queue.push_back(v);
            }
        }
    }
    Some(seen)
}

/// Even domain around [-a, a] x [-b, b]: the rectangle plus the even vertices just outside it.
/// Its boundary is the outermost even ×-circuit in the two-layer ring around the rectangle.
pub fn build_even_rect(a: i32, b: i32) -> Result<Domain> {
    build_even_rect_at(-a, a, -b, b)
}

fn build_even_rect_at(x0: i32, x1: i32, y0: i32, y1: i32) -> Result<Domain> {
    if x1 < x0 || y1 < y0 {
        return invalid("empty rectangle");
    }
    let mut verts = Vec::new();
    for y in y0 - 1..=y1 + 1 {
        for x in x0 - 1..=x1 + 1 {
            let v = Vertex::new(x, y);
            let inside = (x0..=x1).contains(&x) && (y0..=y1).contains(&y);
            let touches = v.nn().any(|u| (x0..=x1).contains(&u.x) && (y0..=y1).contains(&u.y));
            if inside || (touches && v.is_even()) {
                verts.push(v);
            }
        }
    }
    let tmp = Domain::general(verts.clone());
    let circuit = order_cross_circuit(tmp.boundary())
        .ok_or_else(|| Error::Corruption("even rectangle boundary is not a ×-circuit".into()))?;
    if circuit.len() != tmp.boundary().len() {
        return Err(Error::Corruption("even rectangle circuit misses boundary vertices".into()));
    }
    Ok(Domain::assemble(DomainKind::EvenDomain, verts, Some(circuit)))
}

/// The even box around Λ_n.
pub fn build_even_box(n: i32) -> Result<Domain> {
    if n < 1 {
        return invalid(format!("even box needs n >= 1, got {n}"));
    }
    build_even_rect(n, n)
}

/// Full rectangle [x0, x1] x [y0, y1]; boundary ordered counter-clockwise from the top-left corner.
pub fn build_rect(x0: i32, x1: i32, y0: i32, y1: i32) -> Result<Domain> {
    if x1 < x0 || y1 < y0 {
        return invalid("empty rectangle");
    }
    let mut verts = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            verts.push(Vertex::new(x, y));
        }
    }
    let border = rect_border_ccw(x0, x1, y0, y1);
    Ok(Domain::assemble(DomainKind::General, verts, Some(border)))
}

fn rect_border_ccw(x0: i32, x1: i32, y0: i32, y1: i32) -> Vec<Vertex> {
    let mut out = Vec::new();
    out.extend((y0..=y1).rev().map(|y| Vertex::new(x0, y)));
    out.extend((x0..=x1).map(|x| Vertex::new(x, y0)));
    out.extend((y0..=y1).map(|y| Vertex::new(x1, y)));
    out.extend((x0..=x1).rev().map(|x| Vertex::new(x, y1)));
    let mut seen = BTreeSet::new();
    out.retain(|v| seen.insert(*v));
    out
}

pub fn build_torus(n: u32) -> Result<Domain> {
    if n == 0 || n % 2 == 1 {
        return invalid(format!("torus period must be even and positive, got {n}"));
    }
    let n = n as i32;
    let verts = (0..n).flat_map(|y| (0..n).map(move |x| Vertex::new(x, y))).collect();
    Ok(Domain::assemble(DomainKind::TorusWrap(n as u32), verts, None))
}

/// Approximation of [-n, n] x [0, m] with its 0/g boundary condition; odd n is replaced by 2⌊n/2⌋.
pub fn build_strip_rect(n: i32, m: i32, g: i32) -> Result<(Domain, BoundaryCondition)> {
    if n < 1 || m < 1 || g < 0 {
        return invalid("strip rectangle needs n, m >= 1 and g >= 0");
    }
    let n = (2 * (n / 2)).max(2);
    let mut verts = Vec::new();
    let mut bottom = Vec::new();
    for y in -1..=m + 1 {
        for x in -n - 1..=n + 1 {
            let v = Vertex::new(x, y);
            let inside = (-n..=n).contains(&x) && (0..=m).contains(&y);
            let touches_side_or_top = v.nn().any(|u| (-n..=n).contains(&u.x) && (0..=m).contains(&u.y)) && y >= 0;
            if inside || (touches_side_or_top && v.is_even()) {
                verts.push(v);
            } else if y == -1 && (-n..=n).contains(&x) && v.parity() as i32 == g % 2 {
                verts.push(v);
            }
            if (y == -1 || y == 0) && (-n..=n).contains(&x) && v.parity() as i32 == g % 2 {
                bottom.push(v);
            }
        }
    }
    let kind = if g % 2 == 0 { DomainKind::EvenDomain } else { DomainKind::MixedDomain };
    let tmp = Domain::general(verts.clone());
    let boundary: Vec<Vertex> = if g % 2 == 0 {
        order_cross_circuit(tmp.boundary()).ok_or_else(|| Error::Corruption("strip boundary".into()))?
    } else {
        let mut b = tmp.boundary().to_vec();
        b.sort_by(|p, q| angle_key(*p, n, m).partial_cmp(&angle_key(*q, n, m)).unwrap_or(Ordering::Equal));
        b
    };
    let d = Domain::assemble(kind, verts, Some(boundary));
    let mut bc = BoundaryCondition::new();
    let bottom_set: Vec<Vertex> = bottom.into_iter().filter(|v| d.contains(*v)).collect();
    for &v in d.boundary() {
        let dist = bottom_set.iter().map(|b| v.l1_dist(*b)).min().unwrap_or(i32::MAX);
        bc.set(v, ValueSet::fixed((g - dist).max(0)));
    }
    Ok((d, bc))
}

fn angle_key(v: Vertex, _n: i32, m: i32) -> f64 {
    let cy = m as f64 / 2.0;
    let a = (v.y as f64 - cy).atan2(v.x as f64);
    if a < -std::f64::consts::FRAC_PI_2 {
        a + 2.0 * std::f64::consts::PI
    } else {
        a
    }
}

/// Even box with 4 on the top and bottom sides, 0 on the left and right sides and 2 at the
/// corners (±n, ±n); quad corners a=(-n,n), b=(-n,-n), c=(n,-n), d=(n,n).
pub fn build_split_square(n: i32) -> Result<(Quad, BoundaryCondition)> {
    let d = Arc::new(build_even_box(n)?);
    let mut bc = BoundaryCondition::new();
    for &v in d.boundary() {
        let val = if v.x.abs() == n && v.y.abs() == n {
            2
        } else if v.y.abs() >= n {
            4
        } else {
            0
        };
        bc.set(v, ValueSet::fixed(val));
    }
    let q = Quad::new(d, Vertex::new(-n, n), Vertex::new(-n, -n), Vertex::new(n, -n), Vertex::new(n, n))?;
    Ok((q, bc))
}

/// Mixed box: even ×-arcs at x ∈ {±w, ±(w+1)} for |y| ≤ n joined by odd ×-arcs at
/// y ∈ {±n, ±(n+1)}; boundary condition 2 on the even arcs and 1 on the odd arcs.
pub fn build_mixed_box(w: i32, n: i32) -> Result<(Quad, BoundaryCondition)> {
    if w < 1 || n < 1 {
        return invalid("mixed box needs w, n >= 1");
    }
    let xr = if (w + n) % 2 == 0 { w } else { w + 1 };
    let xl = -xr;
    let even_col = |side: i32, y: i32| -> Vertex {
        let base = if side > 0 { w } else { -w - 1 };
        if (base + y).rem_euclid(2) == 0 {
            Vertex::new(base, y)
        } else {
            Vertex::new(base + 1, y)
        }
    };
    let left: Vec<Vertex> = (-n..=n).rev().map(|y| even_col(-1, y)).collect();
    let right: Vec<Vertex> = (-n..=n).map(|y| even_col(1, y)).collect();
    let odd_row = |top: bool, x: i32| -> Vertex {
        let (y_in, y_out) = if top { (n, n + 1) } else { (-n, -n - 1) };
        if (x + y_in).rem_euclid(2) == 1 {
            Vertex::new(x, y_in)
        } else {
            Vertex::new(x, y_out)
        }
    };
    let (lb, rb) = (left[left.len() - 1], right[0]);
    let bottom: Vec<Vertex> = (lb.x + 1..rb.x).map(|x| odd_row(false, x)).collect();
    let (rt, lt) = (right[right.len() - 1], left[0]);
    let top: Vec<Vertex> = (lt.x + 1..rt.x).rev().map(|x| odd_row(true, x)).collect();
    let _ = (xl, xr);
    let mut boundary = left.clone();
    boundary.extend(&bottom);
    boundary.extend(&right);
    boundary.extend(&top);
    let walls: BTreeSet<Vertex> = boundary.iter().copied().collect();
    let inner = flood_fill(&walls, Vertex::ORIGIN, w + n + 4)
        .ok_or_else(|| Error::Corruption("mixed box boundary does not enclose the origin".into()))?;
    let verts: Vec<Vertex> = walls.iter().copied().chain(inner).collect();
    let d = Arc::new(Domain::assemble(DomainKind::MixedDomain, verts, Some(boundary)));
    let mut bc = BoundaryCondition::new();
    for &v in d.boundary() {
        bc.set(v, ValueSet::fixed(if v.is_even() { 2 } else { 1 }));
    }
    let q = Quad::new(d, lt, lb, rb, rt)?;
    Ok((q, bc))
}

/// Domain with four marked boundary points in counter-clockwise order.
#[derive(Clone, Debug, PartialEq)]
pub struct Quad {
    pub domain: Arc<Domain>,
    pub a: Vertex,
    pub b: Vertex,
    pub c: Vertex,
    pub d: Vertex,
    /// Arcs [ab], [bc], [cd], [da].
    pub arcs: [Vec<Vertex>; 4],
}

impl Quad {
    pub fn new(domain: Arc<Domain>, a: Vertex, b: Vertex, c: Vertex, d: Vertex) -> Result<Quad> {
        let bd = domain.boundary();
        let pos = |v: Vertex| bd.iter().position(|&u| u == v);
        let (Some(ia), Some(ib), Some(ic), Some(id)) = (pos(a), pos(b), pos(c), pos(d)) else {
            return invalid("quad corners must lie on the ordered boundary");
        };
        let len = bd.len();
        let off = |i: usize| (i + len - ia) % len;
        if !(off(ib) <= off(ic) && off(ic) <= off(id)) {
            return invalid("quad corners are not in counter-clockwise order");
        }
        let arc = |from: usize, to: usize| -> Vec<Vertex> {
            let mut out = vec![bd[from]];
            let mut i = from;
            while i != to {
                i = (i + 1) % len;
                out.push(bd[i]);
            }
            out
        };
        let arcs = [arc(ia, ib), arc(ib, ic), arc(ic, id), arc(id, ia)];
        Ok(Quad { domain, a, b, c, d, arcs })
    }

    /// Full rectangle quad with corners top-left, bottom-left, bottom-right, top-right.
    pub fn rect(x0: i32, x1: i32, y0: i32, y1: i32) -> Result<Quad> {
        let d = Arc::new(build_rect(x0, x1, y0, y1)?);
        Quad::new(d, Vertex::new(x0, y1), Vertex::new(x0, y0), Vertex::new(x1, y0), Vertex::new(x1, y1))
    }

    /// The same domain with marks (b, c, d, a).
    pub fn rotated(&self) -> Quad {
        let [ab, bc, cd, da] = self.arcs.clone();
        Quad { domain: self.domain.clone(), a: self.b, b: self.c, c: self.d, d: self.a, arcs: [bc, cd, da, ab] }
    }

    /// Open arc: the closed arc without its two endpoints.
    pub fn open_arc(&self, k: usize) -> &[Vertex] {
        let arc = &self.arcs[k];
        if arc.len() <= 2 {
            &arc[0..0]
        } else {
            &arc[1..arc.len() - 1]
        }
    }
}

/// L∞ annulus: points with inner < |v − center|∞ ≤ outer. With inner = 0 only the center is removed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annulus {
    pub center: Vertex,
    pub inner: i32,
    pub outer: i32,
}

impl Annulus {
    pub fn new(center: Vertex, inner: i32, outer: i32) -> Result<Annulus> {
        if !(0 <= inner && inner < outer) {
            return invalid(format!("annulus needs 0 <= inner < outer, got {inner}, {outer}"));
        }
        Ok(Annulus { center, inner, outer })
    }

    pub fn contains(&self, v: Vertex) -> bool {
        let r = v.linf_dist(self.center);
        self.inner < r && r <= self.outer
    }

    pub fn vertices(&self) -> Vec<Vertex> {
        let mut out = Vec::new();
        for y in -self.outer..=self.outer {
            for x in -self.outer..=self.outer {
                let v = self.center.shift(x, y);
                if self.contains(v) {
                    out.push(v);
                }
            }
        }
        out
    }
}

/// Allowed values at one vertex.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "ValueSetRepr", into = "ValueSetRepr")]
pub enum ValueSet {
    /// Integer interval; ends equal to NEG_INF / POS_INF are unbounded.
    Interval { lo: i32, hi: i32 },
    /// Sorted, deduplicated finite set.
    Finite(Vec<i32>),
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ValueSetRepr {
    Interval([Option<i32>; 2]),
    Finite(Vec<i32>),
}

impl From<ValueSetRepr> for ValueSet {
    fn from(r: ValueSetRepr) -> Self {
        match r {
            ValueSetRepr::Interval([lo, hi]) => ValueSet::interval(lo.unwrap_or(NEG_INF), hi.unwrap_or(POS_INF)),
            ValueSetRepr::Finite(v) => ValueSet::finite(v),
        }
    }
}

impl From<ValueSet> for ValueSetRepr {
    fn from(s: ValueSet) -> Self {
        match s {
            ValueSet::Interval { lo, hi } => {
                ValueSetRepr::Interval([(lo > NEG_INF).then_some(lo), (hi < POS_INF).then_some(hi)])
            }
            ValueSet::Finite(v) => ValueSetRepr::Finite(v),
        }
    }
}

fn snap_up(x: i32, parity: u8) -> i32 {
    if (x.rem_euclid(2) as u8) == parity {
        x
    } else {
        x + 1
    }
}

fn snap_down(x: i32, parity: u8) -> i32 {
    if (x.rem_euclid(2) as u8) == parity {
        x
    } else {
        x - 1
    }
}

impl ValueSet {
    pub fn fixed(v: i32) -> ValueSet {
        ValueSet::Interval { lo: v, hi: v }
    }

    pub fn interval(lo: i32, hi: i32) -> ValueSet {
        ValueSet::Interval { lo: lo.max(NEG_INF), hi: hi.min(POS_INF) }
    }

    pub fn at_least(lo: i32) -> ValueSet {
        ValueSet::interval(lo, POS_INF)
    }

    pub fn at_most(hi: i32) -> ValueSet {
        ValueSet::interval(NEG_INF, hi)
    }

    pub fn all() -> ValueSet {
        ValueSet::interval(NEG_INF, POS_INF)
    }

    pub fn finite(mut vals: Vec<i32>) -> ValueSet {
        vals.sort_unstable();
        vals.dedup();
        ValueSet::Finite(vals)
    }

    pub fn contains(&self, x: i32) -> bool {
        match self {
            ValueSet::Interval { lo, hi } => *lo <= x && x <= *hi,
            ValueSet::Finite(v) => v.binary_search(&x).is_ok(),
        }
    }

    pub fn hull(&self) -> (i32, i32) {
        match self {
            ValueSet::Interval { lo, hi } => (*lo, *hi),
            ValueSet::Finite(v) => match (v.first(), v.last()) {
                (Some(a), Some(b)) => (*a, *b),
                _ => (POS_INF, NEG_INF),
            },
        }
    }

    pub fn is_bounded(&self) -> bool {
        let (lo, hi) = self.hull();
        lo > NEG_INF && hi < POS_INF
    }

    pub fn singleton(&self) -> Option<i32> {
        match self {
            ValueSet::Interval { lo, hi } if lo == hi => Some(*lo),
            ValueSet::Finite(v) if v.len() == 1 => Some(v[0]),
            _ => None,
        }
    }

    /// Smallest element ≥ x with the given parity.
    pub fn first_at_least(&self, x: i32, parity: u8) -> Option<i32> {
        match self {
            ValueSet::Interval { lo, hi } => {
                let c = snap_up(x.max(*lo), parity);
                (c <= *hi).then_some(c)
            }
            ValueSet::Finite(v) => {
                let start = v.partition_point(|&e| e < x);
                v[start..].iter().copied().find(|e| e.rem_euclid(2) as u8 == parity)
            }
        }
    }

    /// Largest element ≤ x with the given parity.
    pub fn last_at_most(&self, x: i32, parity: u8) -> Option<i32> {
        match self {
            ValueSet::Interval { lo, hi } => {
                let c = snap_down(x.min(*hi), parity);
                (c >= *lo).then_some(c)
            }
            ValueSet::Finite(v) => {
                let end = v.partition_point(|&e| e <= x);
                v[..end].iter().rev().copied().find(|e| e.rem_euclid(2) as u8 == parity)
            }
        }
    }

    pub fn has_parity(&self, parity: u8) -> bool {
        self.first_at_least(NEG_INF, parity).is_some()
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            ValueSet::Interval { lo, hi } => *lo == -*hi,
            ValueSet::Finite(v) => v.iter().all(|x| v.binary_search(&-x).is_ok()),
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.hull().0 >= 0
    }

    /// Elements with the given parity, if bounded.
    pub fn elements(&self, parity: u8) -> Option<Vec<i32>> {
        if !self.is_bounded() {
            return None;
        }
        let (lo, hi) = self.hull();
        Some((lo..=hi).filter(|x| x.rem_euclid(2) as u8 == parity && self.contains(*x)).collect())
    }
}

/// Per-vertex allowed value sets (B, κ), with an optional positive part for |h|-adapted conditions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    values: BTreeMap<Vertex, ValueSet>,
    pos_part: Option<BTreeSet<Vertex>>,
}

impl BoundaryCondition {
    pub fn new() -> BoundaryCondition {
        BoundaryCondition::default()
    }

    /// Value `g` on every boundary vertex.
    pub fn constant(d: &Domain, g: i32) -> Result<BoundaryCondition> {
        let mut bc = BoundaryCondition::new();
        for &v in d.boundary() {
            if (g - v.parity() as i32).rem_euclid(2) != 0 {
                return invalid(format!("constant {g} has the wrong parity at {v:?}"));
            }
            bc.set(v, ValueSet::fixed(g));
        }
        Ok(bc)
    }

    pub fn zero(d: &Domain) -> Result<BoundaryCondition> {
        BoundaryCondition::constant(d, 0)
    }

    /// `outer` on [ab] ∪ [cd], `inner` on (bc) ∪ (da).
    pub fn quad_arcs(q: &Quad, outer: i32, inner: i32) -> BoundaryCondition {
        let mut bc = BoundaryCondition::new();
        for k in [1, 3] {
            for &v in q.open_arc(k) {
                bc.set(v, ValueSet::fixed(inner));
            }
        }
        for k in [0, 2] {
            for &v in &q.arcs[k] {
                bc.set(v, ValueSet::fixed(outer));
            }
        }
        bc
    }

    pub fn set(&mut self, v: Vertex, s: ValueSet) {
        self.values.insert(v, s);
    }

    pub fn remove(&mut self, v: Vertex) {
        self.values.remove(&v);
    }

    pub fn get(&self, v: Vertex) -> Option<&ValueSet> {
        self.values.get(&v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vertex, &ValueSet)> {
        self.values.iter()
    }

    pub fn support(&self) -> impl Iterator<Item = Vertex> + '_ {
        self.values.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn pos_part(&self) -> Option<&BTreeSet<Vertex>> {
        self.pos_part.as_ref()
    }

    pub fn set_pos_part(&mut self, p: Option<BTreeSet<Vertex>>) {
        self.pos_part = p;
    }

    /// Checks support, nonemptiness, parity consistency and the |h|-adapted split.
    pub fn validate(&self, d: &Domain) -> Result<()> {
        for (v, s) in &self.values {
            if !d.contains(*v) {
                return invalid(format!("boundary vertex {v:?} outside the domain"));
            }
            if !s.has_parity(d.canon(*v).parity()) {
                return invalid(format!("value set at {v:?} has no value of the vertex parity"));
            }
        }
        if let Some(pos) = &self.pos_part {
            for (v, s) in &self.values {
                if pos.contains(v) {
                    if !s.is_nonnegative() {
                        return invalid(format!("B_pos vertex {v:?} allows negative values"));
                    }
                } else if !s.is_symmetric() {
                    return invalid(format!("vertex {v:?} outside B_pos has an asymmetric set"));
                }
            }
            if pos.iter().any(|v| !self.values.contains_key(v)) {
                return invalid("B_pos is not contained in the support");
            }
        }
        Ok(())
    }

    /// Value sets indexed by domain vertex.
    pub fn per_index(&self, d: &Domain) -> Result<Vec<Option<ValueSet>>> {
        let mut out = vec![None; d.len()];
        for (v, s) in &self.values {
            let Some(i) = d.index(*v) else {
                return invalid(format!("boundary vertex {v:?} outside the domain"));
            };
            out[i] = Some(s.clone());
        }
        Ok(out)
    }
}

/// Per-vertex propagated bounds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bounds {
    pub lo: Vec<i32>,
    pub hi: Vec<i32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Propagation {
    Empty,
    Unbounded,
    Bounded(Bounds),
}

fn tighten_lo(mut x: i32, hi: i32, pv: u8, sv: Option<&ValueSet>, du: (&Option<ValueSet>, i32, i32, u8)) -> i32 {
    let (su, lo_u, hi_u, pu) = du;
    if lo_u <= NEG_INF {
        return x;
    }
    loop {
        if x > hi {
            return x;
        }
        let start = (x - 1).max(lo_u);
        let w = match su {
            Some(s) => s.first_at_least(start, pu),
            None => Some(snap_up(start, pu)),
        };
        let Some(w) = w.filter(|&w| w <= hi_u) else {
            return POS_INF;
        };
        let cand = x.max(w - 1);
        let cand = match sv {
            Some(s) => s.first_at_least(cand, pv).unwrap_or(POS_INF),
            None => snap_up(cand, pv),
        };
        if cand == x {
            return x;
        }
        x = cand;
    }
}

fn tighten_hi(mut x: i32, lo: i32, pv: u8, sv: Option<&ValueSet>, du: (&Option<ValueSet>, i32, i32, u8)) -> i32 {
    let (su, lo_u, hi_u, pu) = du;
    if hi_u >= POS_INF {
        return x;
    }
    loop {
        if x < lo {
            return x;
        }
        let start = (x + 1).min(hi_u);
        let w = match su {
            Some(s) => s.last_at_most(start, pu),
            None => Some(snap_down(start, pu)),
        };
        let Some(w) = w.filter(|&w| w >= lo_u) else {
            return NEG_INF;
        };
        let cand = x.min(w + 1);
        let cand = match sv {
            Some(s) => s.last_at_most(cand, pv).unwrap_or(NEG_INF),
            None => snap_down(cand, pv),
        };
        if cand == x {
            return x;
        }
        x = cand;
    }
}

/// Bounds-consistency propagation of the ±1 edge constraint. At the fixpoint the vector of
/// lower bounds is itself the pointwise-minimal homomorphism (and the upper bounds the maximal one).
pub fn propagate(d: &Domain, bc: &BoundaryCondition) -> Result<Propagation> {
    bc.validate(d)?;
    let sets = bc.per_index(d)?;
    let n = d.len();
    let (comp, ncomp) = d.components();
    let mut bounded = vec![false; ncomp];
    for i in 0..n {
        if sets[i].as_ref().is_some_and(|s| s.is_bounded()) {
            bounded[comp[i]] = true;
        }
    }
    if bounded.iter().any(|b| !b) {
        return Ok(Propagation::Unbounded);
    }
    let par: Vec<u8> = d.vertices().iter().map(|v| d.canon(*v).parity()).collect();
    let mut lo = vec![NEG_INF; n];
    let mut hi = vec![POS_INF; n];
    for i in 0..n {
        if let Some(s) = &sets[i] {
            let (a, b) = s.hull();
            lo[i] = if a <= NEG_INF { NEG_INF } else { s.first_at_least(a, par[i]).unwrap_or(POS_INF) };
            hi[i] = if b >= POS_INF { POS_INF } else { s.last_at_most(b, par[i]).unwrap_or(NEG_INF) };
            if lo[i] > hi[i] {
                return Ok(Propagation::Empty);
            }
        }
    }
    let all: Vec<usize> = (0..n).collect();
    if !run_propagation(d, &sets, &par, &mut lo, &mut hi, &all) {
        return Ok(Propagation::Empty);
    }
    Ok(Propagation::Bounded(Bounds { lo, hi }))
}

/// Worklist propagation from `seeds` until fixpoint; false if some domain empties.
pub(crate) fn run_propagation(
    d: &Domain,
    sets: &[Option<ValueSet>],
    par: &[u8],
    lo: &mut [i32],
    hi: &mut [i32],
    seeds: &[usize],
) -> bool {
    let n = d.len();
    let mut queue: VecDeque<usize> = seeds.iter().copied().collect();
    let mut queued = vec![false; n];
    for &s in seeds {
        queued[s] = true;
    }
    while let Some(u) = queue.pop_front() {
        queued[u] = false;
        for v in d.nn_indices(u) {
            let du = (&sets[u], lo[u], hi[u], par[u]);
            let nl = tighten_lo(lo[v], hi[v], par[v], sets[v].as_ref(), du);
            let nh = tighten_hi(hi[v], nl, par[v], sets[v].as_ref(), du);
            if nl > nh || nl >= POS_INF || nh <= NEG_INF {
                return false;
            }
            if nl != lo[v] || nh != hi[v] {
                lo[v] = nl;
                hi[v] = nh;
                if !queued[v] {
                    queued[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    true
}

/// True iff the set of homomorphisms satisfying `bc` is nonempty and finite.
pub fn is_admissible(d: &Domain, bc: &BoundaryCondition) -> Result<bool> {
    Ok(matches!(propagate(d, bc)?, Propagation::Bounded(_)))
}

#[derive(Serialize, Deserialize)]
struct BcEntry {
    v: Vertex,
    set: ValueSet,
}

#[derive(Serialize, Deserialize)]
struct InstanceDoc {
    kind: DomainKind,
    vertices: Vec<Vertex>,
    boundary: Vec<Vertex>,
    bc: Vec<BcEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pos_part: Option<Vec<Vertex>>,
}

/// Serializes a domain and boundary condition as one JSON document.
pub fn instance_to_json(d: &Domain, bc: &BoundaryCondition) -> String {
    let doc = InstanceDoc {
        kind: d.kind(),
        vertices: d.vertices().to_vec(),
        boundary: d.boundary().to_vec(),
        bc: bc.iter().map(|(v, s)| BcEntry { v: *v, set: s.clone() }).collect(),
        pos_part: bc.pos_part().map(|p| p.iter().copied().collect()),
    };
    serde_json::to_string(&doc).expect("instance serializes")
}

pub fn instance_from_json(s: &str) -> Result<(Domain, BoundaryCondition)> {
    let doc: InstanceDoc = serde_json::from_str(s).map_err(|e| Error::InvalidArgument(format!("instance JSON: {e}")))?;
    let d = match doc.kind {
        DomainKind::TorusWrap(n) => build_torus(n)?,
        kind => Domain::assemble(kind, doc.vertices, Some(doc.boundary)),
    };
    let mut bc = BoundaryCondition::new();
    for e in doc.bc {
        bc.set(e.v, e.set);
    }
    bc.set_pos_part(doc.pos_part.map(|p| p.into_iter().collect()));
    bc.validate(&d)?;
    Ok((d, bc))
}

/// Interior vertex with its four neighbours on the boundary: the smallest oracle instance.
pub fn single_vertex_instance(center_parity: u8, nbr_value: i32) -> Result<(Domain, BoundaryCondition)> {
    let c = Vertex::new(center_parity as i32, 0);
    let mut verts = vec![c];
    verts.extend(c.nn());
    let d = Domain::general(verts);
    let mut bc = BoundaryCondition::new();
    for u in c.nn() {
        bc.set(u, ValueSet::fixed(nbr_value));
    }
    bc.validate(&d)?;
    Ok((d, bc))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flood_count(n: i32) -> usize {
        let d = build_even_box(n).unwrap();
        let walls: BTreeSet<Vertex> = d.boundary().iter().copied().collect();
        let inner = flood_fill(&walls, Vertex::ORIGIN, n + 3).unwrap();
        inner.len() + walls.len()
    }

    #[test]
    fn even_box_one_is_the_diamond() {
        let d = build_even_box(1).unwrap();
        assert_eq!(d.len(), 13);
        assert_eq!(d.boundary().len(), 8);
        assert!(d.contains(Vertex::ORIGIN));
        let b = d.boundary();
        for k in 0..b.len() {
            let (p, q) = (b[k], b[(k + 1) % b.len()]);
            assert_eq!(((p.x - q.x).abs(), (p.y - q.y).abs()), (1, 1));
        }
    }

    #[test]
    fn even_box_counts_match_flood_fill() {
        for n in 1..=8 {
            let d = build_even_box(n).unwrap();
            assert_eq!(d.len(), flood_count(n), "n={n}");
            assert_eq!(d.boundary().len(), 8 * n as usize);
            for v in d.boundary() {
                assert!(v.is_even());
                assert!(v.nn().any(|u| !d.contains(u)));
            }
        }
    }

    #[test]
    fn odd_corner_rectangle_keeps_outer_route() {
        let d = build_even_rect(1, 2).unwrap();
        assert_eq!(d.kind(), DomainKind::EvenDomain);
        assert_eq!(d.boundary().len(), d.vertices().iter().filter(|v| v.nn().any(|u| !d.contains(u))).count());
    }

    #[test]
    fn rect_quad_arcs_partition_border() {
        let q = Quad::rect(0, 3, 0, 2).unwrap();
        let total: usize = q.arcs.iter().map(|a| a.len()).sum();
        assert_eq!(total, q.domain.boundary().len() + 4);
        assert_eq!(q.arcs[0], vec![Vertex::new(0, 2), Vertex::new(0, 1), Vertex::new(0, 0)]);
        assert_eq!(q.arcs[1].last(), Some(&Vertex::new(3, 0)));
        let r = q.rotated();
        assert_eq!(r.arcs[0], q.arcs[1]);
    }

    #[test]
    fn value_set_snapping() {
        let s = ValueSet::finite(vec![-4, -1, 2, 6]);
        assert_eq!(s.first_at_least(-3, 0), Some(2));
        assert_eq!(s.last_at_most(5, 1), Some(-1));
        let i = ValueSet::interval(-3, 3);
        assert_eq!(i.first_at_least(-5, 0), Some(-2));
        assert_eq!(i.last_at_most(10, 0), Some(2));
        assert!(ValueSet::at_least(0).has_parity(1));
        assert!(!ValueSet::fixed(2).has_parity(1));
    }

    #[test]
    fn single_vertex_admissibility() {
        let (d, bc) = single_vertex_instance(1, 0).unwrap();
        assert!(is_admissible(&d, &bc).unwrap());
        let Propagation::Bounded(b) = propagate(&d, &bc).unwrap() else { panic!() };
        let i = d.index(Vertex::new(1, 0)).unwrap();
        assert_eq!((b.lo[i], b.hi[i]), (-1, 1));
    }

    #[test]
    fn distance_two_gap_of_four_is_inadmissible() {
        let d = Domain::general([Vertex::new(0, 0), Vertex::new(1, 0), Vertex::new(2, 0)]);
        let mut bc = BoundaryCondition::new();
        bc.set(Vertex::new(0, 0), ValueSet::fixed(0));
        bc.set(Vertex::new(2, 0), ValueSet::fixed(4));
        assert!(!is_admissible(&d, &bc).unwrap());
    }

    #[test]
    fn unconstrained_component_is_infinite() {
        let d = Domain::general([Vertex::new(0, 0), Vertex::new(5, 5)]);
        let mut bc = BoundaryCondition::new();
        bc.set(Vertex::new(0, 0), ValueSet::fixed(0));
        assert_eq!(propagate(&d, &bc).unwrap(), Propagation::Unbounded);
        bc.set(Vertex::new(5, 5), ValueSet::at_least(0));
        assert_eq!(propagate(&d, &bc).unwrap(), Propagation::Unbounded);
    }

    #[test]
    fn support_outside_domain_errors() {
        let d = Domain::general([Vertex::new(0, 0)]);
        let mut bc = BoundaryCondition::new();
        bc.set(Vertex::new(3, 3), ValueSet::fixed(0));
        assert!(is_admissible(&d, &bc).is_err());
    }

    #[test]
    fn strip_rect_zero_and_staircase() {
        let (d, bc) = build_strip_rect(4, 4, 0).unwrap();
        assert!(bc.iter().all(|(_, s)| s.singleton() == Some(0)));
        assert!(is_admissible(&d, &bc).unwrap());
        let (d, bc) = build_strip_rect(4, 4, 2).unwrap();
        assert!(is_admissible(&d, &bc).unwrap());
        let b = d.boundary();
        for k in 0..b.len() {
            let (p, q) = (b[k], b[(k + 1) % b.len()]);
            let (vp, vq) = (bc.get(p).unwrap().singleton().unwrap(), bc.get(q).unwrap().singleton().unwrap());
            assert!((vp - vq).abs() <= 2);
        }
        let right: Vec<i32> = b
            .iter()
            .filter(|v| v.x >= 4 && v.y >= 0)
            .map(|v| bc.get(*v).unwrap().singleton().unwrap())
            .collect();
        assert!(right.contains(&2) && right.contains(&0));
        assert!(right.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn strip_rect_odd_g_has_odd_bottom() {
        let (d, bc) = build_strip_rect(5, 4, 1).unwrap();
        assert_eq!(d.kind(), DomainKind::MixedDomain);
        assert!(d.contains(Vertex::new(1, 0)) && d.contains(Vertex::new(0, -1)));
        assert!(!d.contains(Vertex::new(1, -1)));
        assert_eq!(bc.get(Vertex::new(0, -1)).unwrap().singleton(), Some(1));
        assert!(is_admissible(&d, &bc).unwrap());
    }

    #[test]
    fn split_square_is_admissible() {
        for n in 1..=3 {
            let (q, bc) = build_split_square(n).unwrap();
            assert!(is_admissible(&q.domain, &bc).unwrap());
            assert_eq!(q.arcs.iter().map(|a| a.len()).sum::<usize>(), q.domain.boundary().len() + 4);
        }
    }

    #[test]
    fn mixed_box_boundary_alternates_parities() {
        let (q, bc) = build_mixed_box(1, 2).unwrap();
        assert!(is_admissible(&q.domain, &bc).unwrap());
        assert!(q.arcs[0].iter().all(|v| v.is_even()));
        assert!(q.open_arc(1).iter().all(|v| !v.is_even()));
        for v in q.domain.boundary() {
            assert!(v.nn().any(|u| !q.domain.contains(u)));
        }
    }

    #[test]
    fn instance_json_round_trip() {
        let (q, mut bc) = build_split_square(2).unwrap();
        bc.set(Vertex::ORIGIN, ValueSet::interval(NEG_INF, 4));
        let s = instance_to_json(&q.domain, &bc);
        let (d2, bc2) = instance_from_json(&s).unwrap();
        assert_eq!(*q.domain, d2);
        assert_eq!(bc, bc2);
    }

    #[test]
    fn torus_wraps() {
        let t = build_torus(4).unwrap();
        assert_eq!(t.len(), 16);
        assert!(t.boundary().is_empty());
        assert_eq!(t.index(Vertex::new(-1, 5)), t.index(Vertex::new(3, 1)));
        assert!((0..t.len()).all(|i| t.degree(i) == 4));
        assert!(build_torus(3).is_err());
    }
}
