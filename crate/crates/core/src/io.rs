//! On-disk formats.
//!
//! * Mixture parameter documents (JSON): what each worker sends back. The
//!   numeric payload is `K` means of length `d`, `K` variances and `K`
//!   explicit uniform weights, i.e. `K(d + 2)` scalars.
//! * Component files: columnar text, one `weight variance mean…` row per
//!   product component, with a `key=value` provenance header.
//! * Draw files: columnar text, one parameter vector per row.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::combine::{CombineMethod, ComponentSampleSet};
use crate::error::{Error, Result};
use crate::mixture::{GaussianComponent, MixtureApprox, ProductMixture};

pub const MIXTURE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureMeta {
    pub shard_id: usize,
    #[serde(rename = "M")]
    pub shards: usize,
    pub prior_temper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDocument {
    pub version: u32,
    pub dim: usize,
    #[serde(rename = "K")]
    pub components: usize,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
    pub weights: Vec<f64>,
    pub meta: MixtureMeta,
}

impl MixtureDocument {
    pub fn from_mixture(mixture: &MixtureApprox, meta: MixtureMeta) -> Self {
        let k = mixture.len();
        Self {
            version: MIXTURE_FORMAT_VERSION,
            dim: mixture.dim(),
            components: k,
            means: mixture.components().iter().map(|c| c.mean().to_vec()).collect(),
            variances: mixture.components().iter().map(GaussianComponent::variance).collect(),
            weights: vec![1.0 / k as f64; k],
            meta,
        }
    }

    pub fn to_mixture(&self) -> std::result::Result<MixtureApprox, String> {
        if self.version != MIXTURE_FORMAT_VERSION {
            return Err(format!("unsupported mixture format version {}", self.version));
        }
        if self.means.len() != self.components
            || self.variances.len() != self.components
            || self.weights.len() != self.components
        {
            return Err(format!("document declares K={} but arrays disagree", self.components));
        }
        if self.means.iter().any(|m| m.len() != self.dim) {
            return Err(format!("document declares dim={} but a mean has another length", self.dim));
        }
        let uniform = 1.0 / self.components as f64;
        if self.weights.iter().any(|w| (w - uniform).abs() > 1e-12) {
            return Err("mixture weights must be uniform".into());
        }
        MixtureApprox::from_parts(self.means.clone(), self.variances.clone()).map_err(|e| e.to_string())
    }

    /// Numeric scalars carried by the document: `K·d` means, `K` variances,
    /// `K` weights.
    pub fn payload_scalars(&self) -> usize {
        self.means.iter().map(Vec::len).sum::<usize>() + self.variances.len() + self.weights.len()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("mixture document serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), reason: e.to_string() })
    }
}

/// Weighted product components as stored in a component file.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentFile {
    pub header: BTreeMap<String, String>,
    /// `(weight, component)`; weights sum to one.
    pub components: Vec<(f64, GaussianComponent)>,
}

impl ComponentFile {
    pub fn from_samples(set: &ComponentSampleSet) -> Result<Self> {
        let p = &set.provenance;
        let mut header = BTreeMap::new();
        header.insert("method".into(), p.method.as_str().into());
        header.insert("seed".into(), p.seed.to_string());
        header.insert("R".into(), p.samples.to_string());
        header.insert("burn_in".into(), p.burn_in.to_string());
        header.insert("M".into(), p.factors.to_string());
        header.insert("K".into(), p.components.to_string());
        if !p.rounds.is_empty() {
            let rounds: Vec<String> = p.rounds.iter().map(usize::to_string).collect();
            header.insert("rounds".into(), rounds.join(","));
        }
        let w = 1.0 / set.len() as f64;
        let components = set
            .means
            .iter()
            .zip(&set.variances)
            .map(|(m, v)| Ok((w, GaussianComponent::new(m.clone(), *v)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { header, components })
    }

    pub fn from_product(product: &ProductMixture, factors: usize, k: usize) -> Result<Self> {
        let mut header = BTreeMap::new();
        header.insert("method".into(), CombineMethod::Exact.as_str().into());
        header.insert("M".into(), factors.to_string());
        header.insert("K".into(), k.to_string());
        let components = product
            .normalized_weights()
            .into_iter()
            .zip(product.components())
            .map(|(w, c)| Ok((w, GaussianComponent::new(c.mean.clone(), c.variance)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { header, components })
    }

    pub fn method(&self) -> Option<CombineMethod> {
        self.header.get("method").and_then(|m| m.parse().ok())
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |(_, c)| c.dim())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# epvi-components");
        for (k, v) in &self.header {
            let _ = write!(out, " {k}={v}");
        }
        let _ = writeln!(out, " dim={} rows={}", self.dim(), self.components.len());
        for (w, c) in &self.components {
            let _ = write!(out, "{w} {}", c.variance());
            for m in c.mean() {
                let _ = write!(out, " {m}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        let mut header = parse_header(lines.next().ok_or("empty component file")?, "# epvi-components")?;
        let dim: usize = take_usize(&mut header, "dim")?;
        let rows: usize = take_usize(&mut header, "rows")?;
        let mut components = Vec::with_capacity(rows);
        for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let values = parse_row(line, i + 2)?;
            if values.len() != dim + 2 {
                return Err(format!("line {}: expected {} values, got {}", i + 2, dim + 2, values.len()));
            }
            let c = GaussianComponent::new(values[2..].to_vec(), values[1]).map_err(|e| format!("line {}: {e}", i + 2))?;
            components.push((values[0], c));
        }
        if components.len() != rows {
            return Err(format!("header declares {rows} rows, found {}", components.len()));
        }
        Ok(Self { header, components })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::MissingInput(format!("{}: {e}", path.display())))?;
        Self::from_text(&text).map_err(|reason| Error::Parse { path: path.to_path_buf(), reason })
    }
}

/// Write parameter draws, one per row.
pub fn write_draws(path: &Path, draws: &[Vec<f64>], seed: u64) -> Result<()> {
    let dim = draws.first().map_or(0, Vec::len);
    let mut out = format!("# epvi-draws count={} dim={dim} seed={seed}\n", draws.len());
    for d in draws {
        let row: Vec<String> = d.iter().map(f64::to_string).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_draws(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::MissingInput(format!("{}: {e}", path.display())))?;
    let parse = || -> std::result::Result<Vec<Vec<f64>>, String> {
        let mut lines = text.lines();
        let mut header = parse_header(lines.next().ok_or("empty draws file")?, "# epvi-draws")?;
        let count = take_usize(&mut header, "count")?;
        let dim = take_usize(&mut header, "dim")?;
        let draws: Vec<Vec<f64>> = lines
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| parse_row(l, i + 2))
            .collect::<std::result::Result<_, _>>()?;
        if draws.len() != count || draws.iter().any(|d| d.len() != dim) {
            return Err(format!("expected {count} rows of {dim} values"));
        }
        Ok(draws)
    };
    parse().map_err(|reason| Error::Parse { path: path.to_path_buf(), reason })
}

fn parse_header(line: &str, tag: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let rest = line.strip_prefix(tag).ok_or_else(|| format!("missing '{tag}' header"))?;
    rest.split_whitespace()
        .map(|field| {
            field
                .split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| format!("bad header field '{field}'"))
        })
        .collect()
}

fn take_usize(header: &mut BTreeMap<String, String>, key: &str) -> std::result::Result<usize, String> {
    header
        .remove(key)
        .ok_or_else(|| format!("header is missing '{key}'"))?
        .parse()
        .map_err(|_| format!("header field '{key}' is not an integer"))
}

fn parse_row(line: &str, lineno: usize) -> std::result::Result<Vec<f64>, String> {
    line.split_whitespace()
        .map(|v| v.parse::<f64>().map_err(|e| format!("line {lineno}: {e}")))
        .collect()
}
