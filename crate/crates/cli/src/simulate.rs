use std::path::PathBuf;

use clap::Args;
use stbs::corpus::{CovariateColumn, CovariateTable, DesignMatrix};
use stbs::io::{read_author_values, values_for_authors, RunConfig, TruthFile};
use stbs::model::Hyperparams;
use stbs::synth::{generate, BlockTruth, Overrides};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub v: usize,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub a: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Formula over the simulated covariates `group` (a/b) and `null` (x/y).
    #[arg(long, default_value = "~ group + null")]
    pub formula: String,
    /// Block-structured topics with one dominant topic per document.
    #[arg(long)]
    pub block: bool,
    /// Fix every author's position, `author_id,position`, for all topics.
    #[arg(long)]
    pub pin_positions: Option<PathBuf>,
    /// TOML file whose [hyper] section replaces the simulation preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Covariates of author `i`: `group` alternates, `null` alternates in pairs.
pub fn covariate_table(num_authors: usize) -> CovariateTable {
    let col = |name: &str, labels: [&str; 2], pick: &dyn Fn(usize) -> usize| CovariateColumn {
        name: name.into(),
        labels: (0..num_authors).map(|i| labels[pick(i)].to_string()).collect(),
        baseline: Some(labels[0].into()),
    };
    CovariateTable {
        author_ids: (0..num_authors).collect(),
        columns: vec![col("group", ["a", "b"], &|i| i % 2), col("null", ["x", "y"], &|i| (i / 2) % 2)],
    }
}

pub fn run(a: SimulateArgs) -> anyhow::Result<()> {
    anyhow::ensure!(a.a >= 4, "--a must be at least 4 so both covariates vary");
    let hyper = match &a.config {
        Some(p) => RunConfig::load(p)?.hyper,
        None => Hyperparams::simulation(),
    };
    let table = covariate_table(a.a);
    let design = DesignMatrix::build(&table, &a.formula)?;
    let mut ov = if a.block {
        BlockTruth::default().overrides(a.d, a.v, a.k, a.seed.wrapping_add(1))
    } else {
        Overrides::default()
    };
    if let Some(p) = &a.pin_positions {
        ov.ideal = Some(values_for_authors(&read_author_values(p)?, &table.author_ids)?);
    }
    let (m, truth) = generate(&hyper, a.d, a.v, a.k, a.a, &design, a.seed, &ov)?;
    std::fs::create_dir_all(&a.out)?;
    m.write_counts(&a.out.join("counts.csv"))?;
    m.write_authors(&a.out.join("authors.csv"))?;
    table.write(&a.out.join("covariates.csv"))?;
    TruthFile::new(hyper, truth).save(&a.out.join("truth.json"))?;
    Ok(())
}
