use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use clap::Args;
use stbs::corpus::{apply_corpus_filters, CovariateTable, DesignMatrix, DocTermMatrix, FilterSettings};
use stbs::hpf::fit_hpf;
use stbs::inference::{init_state, Fitter};
use stbs::io::{read_author_values, values_for_authors, DataMaps, DesignData, RunConfig, StateFile};
use stbs::model::{ExpectationMode, PositionMode};

use crate::manifest::Manifest;

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Counts file, `doc_id,term_id,count`.
    #[arg(long)]
    pub counts: PathBuf,
    /// Authors file, `doc_id,author_id`.
    #[arg(long)]
    pub authors: PathBuf,
    /// Covariates file, `author_id,<col>...`. Required unless the formula is `~ 1`.
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Vocabulary, one term per line.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Regression formula, e.g. `~ party + gender` or `~ party * (gender + region)`.
    #[arg(long)]
    pub formula: String,
    /// Baseline level, `column=label`; repeatable. Overrides the config file.
    #[arg(long = "baseline", value_name = "COL=LABEL")]
    pub baselines: Vec<String>,
    /// TOML run configuration with [fit], [hyper], [baselines], [filters].
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Apply the corpus filters from the config (built-in defaults otherwise).
    #[arg(long)]
    pub filter: bool,
    /// Initial positions, `author_id,position`; zeros if omitted.
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub hpf_iters: Option<usize>,
    /// `topic-specific` or `fixed`.
    #[arg(long)]
    pub positions: Option<String>,
    /// `exact` or `geometric`.
    #[arg(long)]
    pub expectation: Option<String>,
    /// Write a checkpoint every N epochs (0 disables).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue a saved state; its settings are kept except `--epochs`.
    #[arg(long, conflicts_with = "init")]
    pub resume: Option<PathBuf>,
    /// Start from a saved state instead of the Poisson warm start.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_baselines(list: &[String]) -> anyhow::Result<BTreeMap<String, String>> {
    list.iter()
        .map(|s| {
            let (k, v) = s.split_once('=').with_context(|| format!("baseline `{s}` is not COL=LABEL"))?;
            Ok((k.trim().to_string(), v.to_string()))
        })
        .collect()
}

/// Corpus and design as seen by the fit: filtered, compacted and aligned.
pub struct Inputs {
    pub m: DocTermMatrix,
    pub design: DesignMatrix,
    pub files: Vec<PathBuf>,
}

pub fn load_inputs(
    counts: &Path,
    authors: &Path,
    vocab: Option<&Path>,
    covariates: Option<&Path>,
    formula: &str,
    baselines: &BTreeMap<String, String>,
    filters: Option<&FilterSettings>,
) -> anyhow::Result<Inputs> {
    let mut files = vec![counts.to_path_buf(), authors.to_path_buf()];
    let mut m = DocTermMatrix::load_counts(counts)?.with_authors(authors)?;
    if let Some(v) = vocab {
        m = m.with_vocab(v)?;
        files.push(v.to_path_buf());
    }
    m = apply_corpus_filters(&m, filters.unwrap_or(&FilterSettings::identity()))?;
    m.validate()?;
    let table = match covariates {
        Some(p) => {
            files.push(p.to_path_buf());
            CovariateTable::load(p)?.with_baselines(baselines)?.select_authors(m.author_ids())?
        }
        None => CovariateTable { author_ids: m.author_ids().to_vec(), columns: Vec::new() },
    };
    let design = DesignMatrix::build(&table, formula)?;
    Ok(Inputs { m, design, files })
}

pub fn run(a: FitArgs) -> anyhow::Result<()> {
    let mut rc = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    rc.baselines.extend(parse_baselines(&a.baselines)?);
    let cfg = &mut rc.fit;
    if let Some(v) = a.k {
        cfg.num_topics = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.mc_samples {
        cfg.mc_samples = v;
    }
    if let Some(v) = a.hpf_iters {
        cfg.hpf_iters = v;
    }
    if let Some(v) = a.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if let Some(p) = &a.positions {
        cfg.positions = match p.as_str() {
            "topic-specific" => PositionMode::TopicSpecific,
            "fixed" => PositionMode::FixedAcrossTopics,
            other => bail!("--positions must be `topic-specific` or `fixed`, got `{other}`"),
        };
    }
    if let Some(e) = &a.expectation {
        cfg.expectation = match e.as_str() {
            "exact" => ExpectationMode::Exact,
            "geometric" => ExpectationMode::Geometric,
            other => bail!("--expectation must be `exact` or `geometric`, got `{other}`"),
        };
    }
    cfg.validate()?;
    rc.hyper.validate()?;

    let inputs = load_inputs(
        &a.counts,
        &a.authors,
        a.vocab.as_deref(),
        a.covariates.as_deref(),
        &a.formula,
        &rc.baselines,
        a.filter.then_some(&rc.filters),
    )?;
    let (m, design) = (&inputs.m, &inputs.design);
    let data = DataMaps {
        doc_ids: m.doc_ids().to_vec(),
        term_ids: m.term_ids().to_vec(),
        author_ids: m.author_ids().to_vec(),
        vocab: m.vocab().map(<[String]>::to_vec),
        doc_authors: m.doc_authors().to_vec(),
        design: DesignData::from(design),
    };

    std::fs::create_dir_all(&a.out)?;
    let mut manifest = Manifest::new("fit", serde_json::to_value(&rc)?, rc.fit.seed);
    for f in &inputs.files {
        manifest.input(f)?;
    }

    let mut hpf_trace = Vec::new();
    let mut fitter = if let Some(p) = &a.resume {
        manifest.input(p)?;
        let saved = StateFile::load(p).with_context(|| format!("loading {}", p.display()))?;
        ensure!(
            saved.data.doc_ids == data.doc_ids && saved.data.term_ids == data.term_ids && saved.data.author_ids == data.author_ids,
            "resumed state was fitted on a different corpus"
        );
        ensure!(saved.data.design == data.design, "resumed state was fitted with a different design");
        let mut cfg = saved.config.clone();
        if let Some(e) = a.epochs {
            cfg.epochs = e;
        }
        rc.fit = cfg.clone();
        rc.hyper = saved.hyper;
        let mut f = Fitter::new(m, design, saved.hyper, cfg, saved.state)?;
        f.resume_at(saved.rng.word_pos, saved.epochs_done);
        f.trace = saved.trace;
        f
    } else {
        let state = if let Some(p) = &a.init {
            manifest.input(p)?;
            let saved = StateFile::load(p).with_context(|| format!("loading {}", p.display()))?;
            ensure!(saved.data.doc_ids == data.doc_ids, "initial state was fitted on a different corpus");
            saved.state
        } else {
            let anchors = match &a.anchors {
                Some(p) => {
                    manifest.input(p)?;
                    values_for_authors(&read_author_values(p)?, m.author_ids())?
                }
                None => vec![0.0; m.num_authors()],
            };
            let hpf = fit_hpf(m, rc.fit.num_topics, &rc.hyper, rc.fit.hpf_iters, rc.fit.seed)?;
            hpf_trace = hpf.trace.clone();
            init_state(&hpf, &anchors, design, &rc.hyper, &rc.fit)?
        };
        Fitter::new(m, design, rc.hyper, rc.fit.clone(), state)?
    };

    let checkpoint = a.out.join("checkpoint.json");
    let every = rc.fit.checkpoint_every;
    while fitter.epochs_done < fitter.config().epochs {
        let start = fitter.trace.len();
        fitter.run_epoch(&mut |_| Ok(()))?;
        let epoch = &fitter.trace[start..];
        let mean = epoch.iter().sum::<f64>() / epoch.len().max(1) as f64;
        eprintln!("epoch {} elbo {mean:.6}", fitter.epochs_done);
        if every > 0 && fitter.epochs_done % every == 0 {
            snapshot(&fitter, &data).save(&checkpoint)?;
        }
    }

    fitter.state.check_finite(fitter.state.step)?;
    ensure!(fitter.trace.iter().all(|x| x.is_finite()), "non-finite ELBO in trace");
    let state_path = a.out.join("state.json");
    snapshot(&fitter, &data).save(&state_path)?;
    let trace_path = a.out.join("trace.csv");
    write_trace(&trace_path, &fitter.trace)?;
    manifest.output(&state_path)?;
    manifest.output(&trace_path)?;
    if !hpf_trace.is_empty() {
        let p = a.out.join("hpf_trace.csv");
        write_trace(&p, &hpf_trace)?;
        manifest.output(&p)?;
    }
    manifest.settings = serde_json::to_value(&rc)?;
    manifest.write(&a.out)?;
    Ok(())
}

fn snapshot(f: &Fitter, data: &DataMaps) -> StateFile {
    StateFile::new(
        *f.hyper(),
        f.config().clone(),
        f.rng_word_pos(),
        f.epochs_done,
        f.trace.clone(),
        data.clone(),
        f.state.clone(),
    )
}

fn write_trace(path: &Path, trace: &[f64]) -> anyhow::Result<()> {
    let mut out = String::from("step,elbo\n");
    for (i, x) in trace.iter().enumerate() {
        out.push_str(&format!("{},{x}\n", i + 1));
    }
    std::fs::write(path, out)?;
    Ok(())
}
