//! Height functions, the arrow bijection and torus gradients.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{build_torus, Domain, Vertex};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeightFunction {
    domain: Arc<Domain>,
    values: Vec<i32>,
    base: Vertex,
}

impl HeightFunction {
    /// Values indexed like `domain.vertices()`. The base defaults to the first vertex,
    /// or (0,0) on the torus.
    pub fn new(domain: Arc<Domain>, values: Vec<i32>) -> Result<HeightFunction> {
        if values.len() != domain.len() {
            return invalid(format!("{} values for {} vertices", values.len(), domain.len()));
        }
        let base = if domain.is_torus() {
            Vertex::ORIGIN
        } else {
            domain.vertices().first().copied().unwrap_or(Vertex::ORIGIN)
        };
        Ok(HeightFunction { domain, values, base })
    }

    pub fn from_map(domain: Arc<Domain>, map: &BTreeMap<Vertex, i32>) -> Result<HeightFunction> {
        let mut values = Vec::with_capacity(domain.len());
        for v in domain.vertices() {
            match map.get(v) {
                Some(x) => values.push(*x),
                None => return invalid(format!("missing value at {v:?}")),
            }
        }
        HeightFunction::new(domain, values)
    }

    /// h_v = parity(v).
    pub fn parity_function(domain: Arc<Domain>) -> HeightFunction {
        let values = domain.vertices().iter().map(|v| v.parity() as i32).collect();
        HeightFunction::new(domain, values).expect("sizes match")
    }

    pub fn with_base(mut self, base: Vertex) -> Result<HeightFunction> {
        if !self.domain.contains(base) {
            return invalid(format!("base {base:?} outside the domain"));
        }
        self.base = self.domain.canon(base);
        Ok(self)
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [i32] {
        &mut self.values
    }

    pub fn base(&self) -> Vertex {
        self.base
    }

    pub fn get(&self, v: Vertex) -> Option<i32> {
        self.domain.index(v).map(|i| self.values[i])
    }

    pub fn at(&self, i: usize) -> i32 {
        self.values[i]
    }

    /// Edge increments are ±1 and values have the parity of their vertex.
    pub fn validate(&self) -> bool {
        let d = &self.domain;
        for (i, v) in d.vertices().iter().enumerate() {
            if (self.values[i] - v.parity() as i32).rem_euclid(2) != 0 {
                return false;
            }
            for j in d.nn_indices(i) {
                if (self.values[i] - self.values[j]).abs() != 1 {
                    return false;
                }
            }
        }
        true
    }

    /// Maximum absolute value.
    pub fn max_abs(&self) -> i32 {
        self.values.iter().map(|x| x.abs()).max().unwrap_or(0)
    }

    /// Same values shifted so that h(base) = 0.
    pub fn rebased(&self, base: Vertex) -> Result<HeightFunction> {
        let Some(b) = self.get(base) else {
            return invalid(format!("base {base:?} outside the domain"));
        };
        if b % 2 != 0 {
            return invalid("re-basing at an odd vertex breaks the parity convention");
        }
        let values = self.values.iter().map(|x| x - b).collect();
        HeightFunction::new(self.domain.clone(), values)?.with_base(base)
    }
}

/// Validity check over an explicit map; missing vertices are an error.
pub fn validate_map(domain: Arc<Domain>, map: &BTreeMap<Vertex, i32>) -> Result<bool> {
    Ok(HeightFunction::from_map(domain, map)?.validate())
}

/// h_u − h_v. On the torus values are single-valued lifts, so the difference is representative-free.
pub fn gradient(h: &HeightFunction, u: Vertex, v: Vertex) -> Result<i32> {
    match (h.get(u), h.get(v)) {
        (Some(a), Some(b)) => Ok(a - b),
        _ => invalid(format!("gradient endpoints {u:?}, {v:?} must lie in the domain")),
    }
}

/// One bit per primal edge (u, u+e), e ∈ {E, N}: bit set iff h increases along the edge.
/// The dual arrow then crosses the primal edge from its left (90° counter-clockwise) to its right.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArrowConfiguration {
    pub x0: i32,
    pub y0: i32,
    pub width: u32,
    pub height: u32,
    pub period: Option<u32>,
    present: Vec<bool>,
    up: Vec<bool>,
}

const DIRS: [(i32, i32); 2] = [(1, 0), (0, 1)];

impl ArrowConfiguration {
    fn slot(&self, u: Vertex, dir: usize) -> Option<usize> {
        let (dx, dy) = (u.x - self.x0, u.y - self.y0);
        if dx < 0 || dy < 0 || dx >= self.width as i32 || dy >= self.height as i32 {
            return None;
        }
        Some(((dy as usize) * self.width as usize + dx as usize) * 2 + dir)
    }

    fn canon(&self, u: Vertex) -> Vertex {
        match self.period {
            Some(n) => Vertex::new(u.x.rem_euclid(n as i32), u.y.rem_euclid(n as i32)),
            None => u,
        }
    }

    /// Orientation of edge (u, u+e): Some(true) if h increases along it.
    pub fn get(&self, u: Vertex, dir: usize) -> Option<bool> {
        let s = self.slot(self.canon(u), dir)?;
        self.present[s].then_some(self.up[s])
    }

    pub fn edge_count(&self) -> usize {
        self.present.iter().filter(|p| **p).count()
    }

    fn base_points(&self) -> impl Iterator<Item = Vertex> + '_ {
        (0..self.height as i32)
            .flat_map(move |y| (0..self.width as i32).map(move |x| Vertex::new(self.x0 + x, self.y0 + y)))
    }

    /// Faces (lower-left corner) whose four edges are all present.
    pub fn complete_faces(&self) -> Vec<Vertex> {
        self.base_points()
            .filter(|&u| {
                self.get(u, 0).is_some()
                    && self.get(u, 1).is_some()
                    && self.get(u.shift(0, 1), 0).is_some()
                    && self.get(u.shift(1, 0), 1).is_some()
            })
            .collect()
    }

    /// Bits (bottom, right, top, left) of the face with lower-left corner u.
    fn face_bits(&self, u: Vertex) -> Option<[bool; 4]> {
        Some([self.get(u, 0)?, self.get(u.shift(1, 0), 1)?, self.get(u.shift(0, 1), 0)?, self.get(u, 1)?])
    }

    /// Number of arrows pointing into the dual vertex at the centre of face u.
    pub fn in_count(&self, u: Vertex) -> Option<u8> {
        let [b, r, t, l] = self.face_bits(u)?;
        Some((!b) as u8 + t as u8 + l as u8 + (!r) as u8)
    }

    pub fn ice_rule_holds(&self) -> bool {
        self.complete_faces().into_iter().all(|u| self.in_count(u) == Some(2))
    }

    /// Local type 1..=6 of the dual vertex at face u: 1,2 and 3,4 have both horizontal and both
    /// vertical arrows aligned, 5 and 6 have horizontal arrows both in (resp. both out).
    pub fn vertex_type(&self, u: Vertex) -> Option<u8> {
        let [b, r, t, l] = self.face_bits(u)?;
        match (l, r, t, b) {
            (true, true, false, false) => Some(1),
            (false, false, true, true) => Some(2),
            (true, true, true, true) => Some(3),
            (false, false, false, false) => Some(4),
            (true, false, false, true) => Some(5),
            (false, true, true, false) => Some(6),
            _ => None,
        }
    }

    /// Counts of types 1..=6 over complete faces; `None` if some face violates the ice rule.
    pub fn type_census(&self) -> Option<[usize; 6]> {
        let mut out = [0; 6];
        for u in self.complete_faces() {
            out[self.vertex_type(u)? as usize - 1] += 1;
        }
        Some(out)
    }

    /// Configuration of one local type on every face of the domain.
    pub fn frozen(t: &Domain, ty: u8) -> Result<ArrowConfiguration> {
        let f: fn(i32, i32) -> i32 = match ty {
            1 => |x, y| y - x,
            2 => |x, y| x - y,
            3 => |x, y| x + y,
            4 => |x, y| -x - y,
            _ => return invalid("frozen configurations exist for types 1..=4 only"),
        };
        let mut a = ArrowConfiguration::empty_for(t);
        for &u in t.vertices() {
            for (k, (dx, dy)) in DIRS.iter().enumerate() {
                let s = a.slot(u, k).expect("in box");
                a.up[s] = a.present[s] && f(u.x + dx, u.y + dy) > f(u.x, u.y);
            }
        }
        Ok(a)
    }

    fn empty_for(d: &Domain) -> ArrowConfiguration {
        let (x0, y0, w, h) = match d.torus_period() {
            Some(n) => (0, 0, n as i32, n as i32),
            None => d.bbox(),
        };
        let mut a = ArrowConfiguration {
            x0,
            y0,
            width: w.max(0) as u32,
            height: h.max(0) as u32,
            period: d.torus_period(),
            present: vec![false; (w.max(0) * h.max(0) * 2) as usize],
            up: vec![false; (w.max(0) * h.max(0) * 2) as usize],
        };
        for &u in d.vertices() {
            for (k, (dx, dy)) in DIRS.iter().enumerate() {
                if d.contains(u.shift(*dx, *dy)) {
                    let s = a.slot(u, k).expect("in box");
                    a.present[s] = true;
                }
            }
        }
        a
    }
}

pub fn heights_to_arrows(h: &HeightFunction) -> Result<ArrowConfiguration> {
    if !h.validate() {
        return invalid("height function is not a valid homomorphism");
    }
    let d = h.domain();
    let mut a = ArrowConfiguration::empty_for(d);
    for (i, &u) in d.vertices().iter().enumerate() {
        for (k, (dx, dy)) in DIRS.iter().enumerate() {
            if let Some(j) = d.index(u.shift(*dx, *dy)) {
                let s = a.slot(u, k).expect("in box");
                a.up[s] = h.at(j) - h.at(i) == 1;
            }
        }
    }
    Ok(a)
}

/// Lifts arrows to the unique height function with value `base_value` at the base vertex
/// (the origin on the torus, else the lowest-then-leftmost edge endpoint).
pub fn arrows_to_heights(a: &ArrowConfiguration, base_value: i32) -> Result<HeightFunction> {
    if !a.ice_rule_holds() {
        return invalid("ice rule violated");
    }
    let domain = match a.period {
        Some(n) => {
            for line in 0..n as i32 {
                let row: i32 = (0..n as i32).map(|x| if a.get(Vertex::new(x, line), 0) == Some(true) { 1 } else { -1 }).sum();
                let col: i32 = (0..n as i32).map(|y| if a.get(Vertex::new(line, y), 1) == Some(true) { 1 } else { -1 }).sum();
                if row != 0 || col != 0 {
                    return Err(Error::Winding(format!("unbalanced arrows on line {line}")));
                }
            }
            build_torus(n)?
        }
        None => {
            let mut verts = Vec::new();
            for u in a.base_points() {
                for (k, (dx, dy)) in DIRS.iter().enumerate() {
                    if a.get(u, k).is_some() {
                        verts.push(u);
                        verts.push(u.shift(*dx, *dy));
                    }
                }
            }
            Domain::general(verts)
        }
    };
    let domain = Arc::new(domain);
    if domain.is_empty() {
        return invalid("no edges to lift");
    }
    let base = if domain.is_torus() { Vertex::ORIGIN } else { domain.vertex(0) };
    if (base_value - base.parity() as i32).rem_euclid(2) != 0 {
        return invalid("base value has the wrong parity");
    }
    let n = domain.len();
    let mut vals: Vec<Option<i32>> = vec![None; n];
    let bi = domain.index(base).expect("base in domain");
    vals[bi] = Some(base_value);
    let mut queue = VecDeque::from([bi]);
    let step = |u: Vertex, v: Vertex| -> Option<i32> {
        for (k, (dx, dy)) in DIRS.iter().enumerate() {
            if domain.canon(u.shift(*dx, *dy)) == domain.canon(v) {
                if let Some(b) = a.get(u, k) {
                    return Some(if b { 1 } else { -1 });
                }
            }
            if domain.canon(v.shift(*dx, *dy)) == domain.canon(u) {
                if let Some(b) = a.get(v, k) {
                    return Some(if b { -1 } else { 1 });
                }
            }
        }
        None
    };
    while let Some(i) = queue.pop_front() {
        let u = domain.vertex(i);
        for j in domain.nn_indices(i) {
            if vals[j].is_none() {
                let v = domain.vertex(j);
                let s = step(u, v).ok_or_else(|| Error::Corruption("edge without orientation".into()))?;
                vals[j] = Some(vals[i].expect("visited") + s);
                queue.push_back(j);
            }
        }
    }
    let values: Option<Vec<i32>> = vals.into_iter().collect();
    let Some(values) = values else {
        return invalid("arrow configuration is disconnected");
    };
    let h = HeightFunction::new(domain, values)?.with_base(base)?;
    if heights_to_arrows(&h).ok().as_ref() != Some(a) {
        return invalid("arrows do not lift consistently");
    }
    Ok(h)
}

const MAGIC: &[u8; 4] = b"SQIA";
const FORMAT_VERSION: u8 = 1;

/// 16-byte header then presence bits and orientation bits, LSB-first.
pub fn encode_arrows(a: &ArrowConfiguration) -> Result<Vec<u8>> {
    let fits16 = |x: i64| (i16::MIN as i64..=i16::MAX as i64).contains(&x);
    if a.width > u16::MAX as u32 || a.height > u16::MAX as u32 || !fits16(a.x0 as i64) || !fits16(a.y0 as i64) {
        return invalid("arrow box exceeds the binary format range");
    }
    let mut out = Vec::with_capacity(16 + a.present.len() / 4 + 2);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(a.width as u16).to_le_bytes());
    out.extend_from_slice(&(a.height as u16).to_le_bytes());
    out.extend_from_slice(&(a.x0 as i16).to_le_bytes());
    out.extend_from_slice(&(a.y0 as i16).to_le_bytes());
    out.push(a.period.is_some() as u8);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&[0, 0]);
    for bits in [&a.present, &a.up] {
        for chunk in bits.chunks(8) {
            let mut byte = 0u8;
            for (k, b) in chunk.iter().enumerate() {
                byte |= (*b as u8) << k;
            }
            out.push(byte);
        }
    }
    Ok(out)
}

pub fn decode_arrows(bytes: &[u8]) -> Result<ArrowConfiguration> {
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return invalid("not an arrow file");
    }
    let u16_at = |k: usize| u16::from_le_bytes([bytes[k], bytes[k + 1]]);
    let i16_at = |k: usize| i16::from_le_bytes([bytes[k], bytes[k + 1]]);
    let (w, h) = (u16_at(4) as u32, u16_at(6) as u32);
    let (x0, y0) = (i16_at(8) as i32, i16_at(10) as i32);
    let torus = bytes[12] == 1;
    if bytes[13] != FORMAT_VERSION {
        return invalid(format!("unsupported arrow format version {}", bytes[13]));
    }
    if torus && (w != h || x0 != 0 || y0 != 0) {
        return invalid("torus arrow file must be square at the origin");
    }
    let nbits = (w * h * 2) as usize;
    let nbytes = nbits.div_ceil(8);
    if bytes.len() != 16 + 2 * nbytes {
        return invalid("arrow payload length mismatch");
    }
    let unpack = |off: usize| -> Vec<bool> { (0..nbits).map(|k| bytes[off + k / 8] >> (k % 8) & 1 == 1).collect() };
    let present = unpack(16);
    let up = unpack(16 + nbytes);
    if up.iter().zip(&present).any(|(u, p)| *u && !*p) {
        return invalid("orientation bit set on an absent edge");
    }
    Ok(ArrowConfiguration { x0, y0, width: w, height: h, period: torus.then_some(w), present, up })
}

#[derive(Serialize, Deserialize)]
struct HeightDoc {
    base: Vertex,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    torus: Option<u32>,
    values: Vec<[i32; 3]>,
}

pub fn height_to_json(h: &HeightFunction) -> String {
    let doc = HeightDoc {
        base: h.base(),
        torus: h.domain().torus_period(),
        values: h.domain().vertices().iter().zip(h.values()).map(|(v, x)| [v.x, v.y, *x]).collect(),
    };
    serde_json::to_string(&doc).expect("height serializes")
}

/// Reads a height function; the domain is the listed vertex set (or the torus).
pub fn height_from_json(s: &str) -> Result<HeightFunction> {
    let doc: HeightDoc = serde_json::from_str(s).map_err(|e| Error::InvalidArgument(format!("height JSON: {e}")))?;
    let domain = match doc.torus {
        Some(n) => build_torus(n)?,
        None => Domain::general(doc.values.iter().map(|t| Vertex::new(t[0], t[1]))),
    };
    let map: BTreeMap<Vertex, i32> = doc.values.iter().map(|t| (domain.canon(Vertex::new(t[0], t[1])), t[2])).collect();
    HeightFunction::from_map(Arc::new(domain), &map)?.with_base(doc.base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_even_box, build_rect};

    #[test]
    fn parity_function_is_valid_and_zero_is_not() {
        let d = Arc::new(build_even_box(3).unwrap());
        assert!(HeightFunction::parity_function(d.clone()).validate());
        let z = HeightFunction::new(d.clone(), vec![0; d.len()]).unwrap();
        assert!(!z.validate());
    }

    #[test]
    fn missing_value_errors() {
        let d = Arc::new(build_rect(0, 1, 0, 1).unwrap());
        let mut m = BTreeMap::new();
        m.insert(Vertex::new(0, 0), 0);
        assert!(validate_map(d, &m).is_err());
    }

    #[test]
    fn parity_function_census_alternates_c_types() {
        let d = Arc::new(build_rect(0, 4, 0, 4).unwrap());
        let a = heights_to_arrows(&HeightFunction::parity_function(d)).unwrap();
        assert_eq!(a.type_census(), Some([0, 0, 0, 0, 8, 8]));
        assert_eq!(a.vertex_type(Vertex::new(0, 0)), Some(5));
        assert_eq!(a.vertex_type(Vertex::new(1, 0)), Some(6));
    }

    #[test]
    fn frozen_configurations_lift_linearly() {
        let expected: [fn(i32, i32) -> i32; 4] = [|x, y| y - x, |x, y| x - y, |x, y| x + y, |x, y| -x - y];
        for ty in 1..=4u8 {
            let a = ArrowConfiguration::frozen(&build_rect(0, 4, 0, 4).unwrap(), ty).unwrap();
            assert_eq!(a.type_census().unwrap()[ty as usize - 1], 16);
            let h = arrows_to_heights(&a, 0).unwrap();
            let f = expected[ty as usize - 1];
            let b = h.base();
            for &v in h.domain().vertices() {
                assert_eq!(gradient(&h, v, b).unwrap(), f(v.x, v.y) - f(b.x, b.y));
            }
        }
    }

    #[test]
    fn unbalanced_torus_row_is_a_winding_error() {
        let mut a = ArrowConfiguration::frozen(&build_torus(4).unwrap(), 1).unwrap();
        assert!(matches!(arrows_to_heights(&a, 0), Err(Error::Winding(_))));
        a = heights_to_arrows(&HeightFunction::parity_function(Arc::new(build_torus(4).unwrap()))).unwrap();
        assert!(arrows_to_heights(&a, 0).is_ok());
    }

    #[test]
    fn ice_violation_is_invalid() {
        let d = Arc::new(build_rect(0, 1, 0, 1).unwrap());
        let mut a = heights_to_arrows(&HeightFunction::parity_function(d)).unwrap();
        a.up[0] = !a.up[0];
        assert!(matches!(arrows_to_heights(&a, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn binary_round_trip() {
        let d = Arc::new(build_even_box(2).unwrap());
        let a = heights_to_arrows(&HeightFunction::parity_function(d)).unwrap();
        let bytes = encode_arrows(&a).unwrap();
        assert_eq!(&bytes[0..4], b"SQIA");
        assert_eq!(decode_arrows(&bytes).unwrap(), a);
        let mut bad = bytes.clone();
        bad.pop();
        assert!(decode_arrows(&bad).is_err());
    }

    #[test]
    fn json_round_trip() {
        let d = Arc::new(build_torus(4).unwrap());
        let h = HeightFunction::parity_function(d);
        let back = height_from_json(&height_to_json(&h)).unwrap();
        assert_eq!(back, h);
    }
}
