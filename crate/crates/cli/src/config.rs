use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use squareice::connect::EventSpec;
use squareice::estimate::RunSettings;
use squareice::lattice::{
    build_even_box, build_even_rect, build_split_square, build_mixed_box, build_strip_rect, build_torus, instance_from_json,
    single_vertex_instance, BoundaryCondition, Domain, ValueSet, Vertex,
};
use squareice::mcmc::ScanOrder;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Csv,
    Json,
}

/// One experiment. Every field can come from the JSON config file or from a flag; flags win.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub command: Option<String>,
    /// Scan or verify suite name.
    pub kind: Option<String>,
    /// Named instance such as "even-box:4", or an inline instance document.
    pub instance: Option<serde_json::Value>,
    pub event: Option<EventSpec>,
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub sweeps: Option<u64>,
    pub burn_in: Option<u64>,
    pub thin: Option<u64>,
    pub scan: Option<ScanOrder>,
    pub threads: Option<usize>,
    pub use_oracle: Option<bool>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    pub n: Option<Vec<i32>>,
    pub k: Option<Vec<i32>>,
    pub r: Option<i32>,
    pub level: Option<i32>,
    pub samples: Option<u64>,
    pub exact: Option<bool>,
    pub max_size: Option<i32>,
    pub inject_fault: Option<bool>,
    pub dump_dir: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f; } )*
    };
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(mut self, top: Config) -> Config {
        overlay!(self, top; command, kind, instance, event, seed, chains, sweeps, burn_in, thin, scan, threads,
            use_oracle, output, format, n, k, r, level, samples, exact, max_size, inject_fault, dump_dir);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    /// First 16 hex digits of the SHA-256 of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        format!("{digest:x}")[..16].to_string()
    }

    pub fn run_settings(&self) -> Result<RunSettings, String> {
        let d = RunSettings::default();
        let s = RunSettings {
            seed: self.seed(),
            chains: self.chains.unwrap_or(d.chains),
            threads: self.threads.unwrap_or(d.threads).max(1),
            sweeps: self.sweeps,
            burn_in: self.burn_in,
            thin: self.thin,
            scan: self.scan.unwrap_or_default(),
            use_oracle: self.use_oracle.unwrap_or(true),
        };
        if s.chains == 0 {
            return Err("--chains must be at least 1".into());
        }
        if s.thin == Some(0) {
            return Err("--thin must be at least 1".into());
        }
        Ok(s)
    }

    pub fn instance(&self) -> Result<(Arc<Domain>, BoundaryCondition), String> {
        match &self.instance {
            None => Err("an instance is required (--instance NAME or inline JSON)".into()),
            Some(serde_json::Value::String(s)) => parse_instance(s),
            Some(v) => load_inline(&v.to_string()),
        }
    }

    pub fn event(&self) -> Result<&EventSpec, String> {
        self.event.as_ref().ok_or_else(|| "an event is required (--event JSON)".into())
    }
}

fn load_inline(s: &str) -> Result<(Arc<Domain>, BoundaryCondition), String> {
    instance_from_json(s).map(|(d, bc)| (Arc::new(d), bc)).map_err(|e| e.to_string())
}

fn ints(args: &str, count: usize, name: &str) -> Result<Vec<i32>, String> {
    let v: Vec<i32> = args
        .split(',')
        .map(|t| t.trim().parse::<i32>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("instance {name} expects {count} integer parameter(s), got {args:?}"))?;
    if v.len() != count {
        return Err(format!("instance {name} expects {count} integer parameter(s), got {args:?}"));
    }
    Ok(v)
}

/// Named instances, inline JSON, or `@path` to an instance document.
pub fn parse_instance(spec: &str) -> Result<(Arc<Domain>, BoundaryCondition), String> {
    let spec = spec.trim();
    if spec.starts_with('{') {
        return load_inline(spec);
    }
    if let Some(path) = spec.strip_prefix('@') {
        let text = std::fs::read_to_string(path).map_err(|e| format!("reading {path}: {e}"))?;
        return load_inline(&text);
    }
    let (name, args) = spec.split_once(':').unwrap_or((spec, ""));
    let lib = |e: squareice::Error| e.to_string();
    let zero = |d: Domain| -> Result<(Arc<Domain>, BoundaryCondition), String> {
        let bc = BoundaryCondition::zero(&d).map_err(lib)?;
        Ok((Arc::new(d), bc))
    };
    match name {
        "single-vertex" | "single-vertex-odd" => {
            let (d, bc) = single_vertex_instance(1, 0).map_err(lib)?;
            Ok((Arc::new(d), bc))
        }
        "single-vertex-even" => {
            let (d, bc) = single_vertex_instance(0, 1).map_err(lib)?;
            Ok((Arc::new(d), bc))
        }
        "even-box" | "box" => zero(build_even_box(ints(args, 1, name)?[0]).map_err(lib)?),
        "even-rect" => {
            let v = ints(args, 2, name)?;
            zero(build_even_rect(v[0], v[1]).map_err(lib)?)
        }
        "split-square" => {
            let (q, bc) = build_split_square(ints(args, 1, name)?[0]).map_err(lib)?;
            Ok((q.domain, bc))
        }
        "mixed-box" => {
            let v = ints(args, 2, name)?;
            let (q, bc) = build_mixed_box(v[0], v[1]).map_err(lib)?;
            Ok((q.domain, bc))
        }
        "strip" => {
            let v = ints(args, 3, name)?;
            let (d, bc) = build_strip_rect(v[0], v[1], v[2]).map_err(lib)?;
            Ok((Arc::new(d), bc))
        }
        "torus" => {
            let n = ints(args, 1, name)?[0];
            if n < 1 {
                return Err("torus period must be positive".into());
            }
            let d = build_torus(n as u32).map_err(lib)?;
            let mut bc = BoundaryCondition::new();
            bc.set(Vertex::ORIGIN, ValueSet::fixed(0));
            Ok((Arc::new(d), bc))
        }
        _ => Err(format!(
            "unknown instance {spec:?}; expected single-vertex, single-vertex-even, even-box:N, even-rect:A,B, split-square:N, \
             mixed-box:W,N, strip:N,M,G, torus:N, inline JSON or @file"
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file_values() {
        let file = Config { seed: Some(3), chains: Some(2), ..Config::default() };
        let flags = Config { seed: Some(9), ..Config::default() };
        let c = file.overlay(flags);
        assert_eq!((c.seed, c.chains), (Some(9), Some(2)));
    }

    #[test]
    fn hash_tracks_content() {
        let a = Config { seed: Some(1), ..Config::default() };
        let b = Config { seed: Some(2), ..Config::default() };
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn named_instances_parse() {
        for s in ["single-vertex", "even-box:3", "even-rect:4,2", "split-square:2", "mixed-box:2,2", "strip:4,4,2", "torus:4"] {
            assert!(parse_instance(s).is_ok(), "{s}");
        }
        assert!(parse_instance("even-box:x").is_err());
        assert!(parse_instance("hexagon:3").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<Config>(r#"{"sede": 3}"#).is_err());
        let c: Config = serde_json::from_str(r#"{"command": "count", "instance": "even-box:2"}"#).unwrap();
        assert!(c.instance().is_ok());
    }
}
