use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Args;
use stbs::corpus::DocTermMatrix;
use stbs::io::StateFile;
use stbs::postprocess::{build_report, write_report, write_section, ReportInputs, ReportSettings, Section};

use crate::manifest::Manifest;

#[derive(Args, Debug)]
pub struct SummarizeArgs {
    /// State file written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Counts file of the fit; needed for influential documents.
    #[arg(long, requires = "authors")]
    pub counts: Option<PathBuf>,
    #[arg(long)]
    pub authors: Option<PathBuf>,
    /// `all`, `polarity`, `positions`, `terms`, `regression` or `influential`.
    #[arg(long, default_value = "all")]
    pub what: String,
    #[arg(long, default_value_t = 10)]
    pub top_n: usize,
    /// Position at which terms are ranked; -1, 0 and 1 if omitted.
    #[arg(long, allow_hyphen_values = true)]
    pub ideology: Option<f64>,
    /// Documents with the largest topic intensity scored for influence.
    #[arg(long, default_value_t = 100)]
    pub pool: usize,
    #[arg(long, default_value_t = 10)]
    pub top_docs: usize,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Covariate used to group positions.
    #[arg(long)]
    pub main: Option<String>,
    /// Output directory; defaults to the directory of the state file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(a: SummarizeArgs) -> anyhow::Result<()> {
    let sections: Vec<Section> = match a.what.as_str() {
        "all" => Section::ALL.to_vec(),
        "polarity" => vec![Section::Polarity],
        "positions" => vec![Section::Positions],
        "terms" => vec![Section::Terms],
        "regression" => vec![Section::Regression],
        "influential" => vec![Section::Influential],
        other => bail!("unknown --what `{other}`"),
    };
    let file = StateFile::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let data = &file.data;
    let design = data.design.to_design()?;
    let counts = match (&a.counts, &a.authors) {
        (Some(c), Some(au)) => {
            let raw = DocTermMatrix::load_counts(c)?.with_authors(au)?;
            Some(raw.select_ids(&data.doc_ids, &data.term_ids)?)
        }
        _ => None,
    };
    if sections.contains(&Section::Influential) && a.what != "all" && counts.is_none() {
        bail!("influential documents need --counts and --authors");
    }
    let labels: Vec<String> = match &data.vocab {
        Some(v) => v.clone(),
        None => data.term_ids.iter().map(|t| t.to_string()).collect(),
    };
    let settings = ReportSettings {
        top_n: a.top_n,
        positions: a.ideology.map_or(vec![-1.0, 0.0, 1.0], |i| vec![i]),
        pool_size: a.pool,
        influential: a.top_docs,
        bins: a.bins,
        main: a.main.clone(),
    };
    let inputs = ReportInputs {
        design: &design,
        doc_authors: &data.doc_authors,
        author_ids: &data.author_ids,
        term_labels: &labels,
        counts: counts.as_ref(),
    };
    let report = build_report(&file.state, &inputs, &settings)?;

    let out = match &a.out {
        Some(o) => o.clone(),
        None => a.model.parent().map(|p| p.to_path_buf()).unwrap_or_default(),
    };
    std::fs::create_dir_all(&out)?;
    let mut manifest = Manifest::new("summarize", serde_json::json!({ "what": a.what }), file.config.seed);
    manifest.input(&a.model)?;
    if a.what == "all" {
        let p = out.join("report.json");
        write_report(&report, &p)?;
        manifest.output(&p)?;
    }
    for sec in sections {
        write_section(&report, &file.state, &out, sec)?;
    }
    let m = manifest;
    let mp = out.join("summary_manifest.json");
    stbs::io::write_json(&m, &mp)?;
    Ok(())
}
