//! Versioned JSON containers for fitted states and simulation truth, plus the
//! TOML run configuration.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{DesignMatrix, Factor, FilterSettings, TermGroup};
use crate::error::{Error, Result};
use crate::model::{FitConfig, Hyperparams};
use crate::state::VariationalState;
use crate::synth::GroundTruth;

pub const STATE_SCHEMA: &str = "stbs_state_v1";
pub const TRUTH_SCHEMA: &str = "stbs_truth_v1";

/// Position of the fit-loop random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngPosition {
    pub seed: u64,
    /// Decimal string; JSON numbers cannot hold every u128.
    #[serde(with = "u128_string")]
    pub word_pos: u128,
}

/// External ids that map the compacted indices of the state back to input
/// files.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataMaps {
    pub doc_ids: Vec<usize>,
    pub term_ids: Vec<usize>,
    pub author_ids: Vec<usize>,
    pub vocab: Option<Vec<String>>,
    /// Compacted author index of every document.
    pub doc_authors: Vec<usize>,
    pub design: DesignData,
}

/// Serializable form of a [`DesignMatrix`]; `x` is row-major.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DesignData {
    pub rows: usize,
    pub cols: usize,
    pub x: Vec<f64>,
    pub column_names: Vec<String>,
    pub term_groups: Vec<TermGroup>,
    pub factors: Vec<Factor>,
    pub interaction_main: Option<String>,
}

impl From<&DesignMatrix> for DesignData {
    fn from(d: &DesignMatrix) -> Self {
        let (rows, cols) = d.x.shape();
        Self {
            rows,
            cols,
            x: (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).map(|(r, c)| d.x[(r, c)]).collect(),
            column_names: d.column_names.clone(),
            term_groups: d.term_groups.clone(),
            factors: d.factors.clone(),
            interaction_main: d.interaction_main.clone(),
        }
    }
}

impl DesignData {
    pub fn to_design(&self) -> Result<DesignMatrix> {
        if self.x.len() != self.rows * self.cols || self.column_names.len() != self.cols {
            return Err(Error::Dimension("stored design has inconsistent shape".into()));
        }
        Ok(DesignMatrix {
            x: nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.x),
            column_names: self.column_names.clone(),
            term_groups: self.term_groups.clone(),
            factors: self.factors.clone(),
            interaction_main: self.interaction_main.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFile {
    pub schema: String,
    pub hyper: Hyperparams,
    pub config: FitConfig,
    pub rng: RngPosition,
    pub epochs_done: usize,
    pub trace: Vec<f64>,
    pub data: DataMaps,
    pub state: VariationalState,
}

impl StateFile {
    pub fn new(
        hyper: Hyperparams,
        config: FitConfig,
        word_pos: u128,
        epochs_done: usize,
        trace: Vec<f64>,
        data: DataMaps,
        state: VariationalState,
    ) -> Self {
        Self {
            schema: STATE_SCHEMA.into(),
            hyper,
            rng: RngPosition { seed: config.seed, word_pos },
            config,
            epochs_done,
            trace,
            data,
            state,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: Self = read_versioned(path, STATE_SCHEMA)?;
        f.hyper.validate()?;
        f.config.validate()?;
        f.state.validate()?;
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub schema: String,
    pub hyper: Hyperparams,
    pub truth: GroundTruth,
}

impl TruthFile {
    pub fn new(hyper: Hyperparams, truth: GroundTruth) -> Self {
        Self { schema: TRUTH_SCHEMA.into(), hyper, truth }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_versioned(path, TRUTH_SCHEMA)
    }
}

/// Run configuration; every section is optional and unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub fit: FitConfig,
    pub hyper: Hyperparams,
    /// Baseline label per covariate column.
    pub baselines: BTreeMap<String, String>,
    pub filters: FilterSettings,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.fit.validate()?;
        c.hyper.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Reads `author_id,<value>` rows, e.g. anchor positions.
pub fn read_author_values(path: &Path) -> Result<BTreeMap<usize, f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let parse_err = |line: u64, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    if rdr.headers()?.get(0).map(str::trim) != Some("author_id") || rdr.headers()?.len() != 2 {
        return Err(parse_err(1, "expected header `author_id,<value>`".into()));
    }
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id: usize = rec[0].trim().parse().map_err(|_| parse_err(line, format!("invalid author id `{}`", &rec[0])))?;
        let x: f64 = rec[1].trim().parse().map_err(|_| parse_err(line, format!("invalid value `{}`", &rec[1])))?;
        if !x.is_finite() {
            return Err(parse_err(line, format!("non-finite value `{}`", &rec[1])));
        }
        if out.insert(id, x).is_some() {
            return Err(parse_err(line, format!("author {id} listed twice")));
        }
    }
    Ok(out)
}

/// Values for the given author ids, in order; every id must be present.
pub fn values_for_authors(values: &BTreeMap<usize, f64>, author_ids: &[usize]) -> Result<Vec<f64>> {
    author_ids
        .iter()
        .map(|a| values.get(a).copied().ok_or_else(|| Error::Corpus(format!("no value for author {a}"))))
        .collect()
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn read_versioned<T: DeserializeOwned>(path: &Path, expected: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let found = value.get("schema").and_then(|s| s.as_str()).unwrap_or("<missing>");
    if found != expected {
        return Err(Error::Schema { expected: expected.into(), found: found.into() });
    }
    Ok(serde_json::from_value(value)?)
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
