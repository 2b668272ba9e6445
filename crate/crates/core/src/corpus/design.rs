//! Categorical covariates and treatment-coded design matrices.
//!
//! Formulas follow `~ term (+ term)*` where a term is `1`, a column name, or
//! `main * (c1 + c2 + ...)`. The crossed form expands to the main effects of
//! `main` and every `ci`, plus all pairwise products of their non-baseline
//! indicator columns.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateColumn {
    pub name: String,
    /// One label per author, in table row order.
    pub labels: Vec<String>,
    pub baseline: Option<String>,
}

/// Raw categorical author covariates, one row per author.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    pub author_ids: Vec<usize>,
    pub columns: Vec<CovariateColumn>,
}

impl CovariateTable {
    /// Reads `author_id,<col1>,<col2>,...`.
    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let header = rdr.headers()?.clone();
        if header.get(0).map(str::trim) != Some("author_id") {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: "first column must be `author_id`".into(),
            });
        }
        let mut columns: Vec<CovariateColumn> = header
            .iter()
            .skip(1)
            .map(|n| CovariateColumn {
                name: n.trim().to_string(),
                labels: Vec::new(),
                baseline: None,
            })
            .collect();
        let mut author_ids = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let id: usize = rec[0].trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("invalid author id `{}`", &rec[0]),
            })?;
            if author_ids.contains(&id) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("author {id} listed twice"),
                });
            }
            author_ids.push(id);
            for (col, field) in columns.iter_mut().zip(rec.iter().skip(1)) {
                col.labels.push(field.to_string());
            }
        }
        Ok(Self { author_ids, columns })
    }

    /// Writes the table in the format read by [`CovariateTable::load`].
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["author_id".to_string()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        for (row, id) in self.author_ids.iter().enumerate() {
            let mut rec = vec![id.to_string()];
            rec.extend(self.columns.iter().map(|c| c.labels[row].clone()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Declares baseline labels. Each baseline must name an existing column
    /// and occur among that column's labels.
    pub fn with_baselines(mut self, baselines: &BTreeMap<String, String>) -> Result<Self> {
        for (name, base) in baselines {
            let col = self
                .columns
                .iter_mut()
                .find(|c| &c.name == name)
                .ok_or_else(|| Error::Formula(format!("baseline declared for unknown column `{name}`")))?;
            if !col.labels.iter().any(|l| l == base) {
                return Err(Error::Formula(format!(
                    "baseline `{base}` does not occur in column `{name}`"
                )));
            }
            col.baseline = Some(base.clone());
        }
        Ok(self)
    }

    pub fn num_authors(&self) -> usize {
        self.author_ids.len()
    }

    pub fn column(&self, name: &str) -> Option<&CovariateColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Reorders rows to follow `author_ids` (e.g. the compacted authors of a
    /// filtered corpus).
    pub fn select_authors(&self, author_ids: &[usize]) -> Result<Self> {
        let pos: BTreeMap<usize, usize> = self.author_ids.iter().enumerate().map(|(i, &a)| (a, i)).collect();
        let rows = author_ids
            .iter()
            .map(|a| pos.get(a).copied().ok_or_else(|| Error::Corpus(format!("author {a} has no covariates"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            author_ids: author_ids.to_vec(),
            columns: self
                .columns
                .iter()
                .map(|c| CovariateColumn {
                    name: c.name.clone(),
                    labels: rows.iter().map(|&r| c.labels[r].clone()).collect(),
                    baseline: c.baseline.clone(),
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Main,
    Interaction,
}

/// Columns that are tested jointly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermGroup {
    pub name: String,
    pub kind: TermKind,
    pub columns: Vec<usize>,
}

/// A covariate used by the formula, with its level coding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    /// Levels with the baseline first, remaining levels sorted.
    pub levels: Vec<String>,
    /// Level index per author.
    pub codes: Vec<usize>,
}

impl Factor {
    pub fn level_counts(&self) -> Vec<usize> {
        let mut out = vec![0; self.levels.len()];
        for &c in &self.codes {
            out[c] += 1;
        }
        out
    }
}

/// A x L treatment-coded model matrix with a leading intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub term_groups: Vec<TermGroup>,
    pub factors: Vec<Factor>,
    /// Main covariate of a crossed formula, if any.
    pub interaction_main: Option<String>,
}

impl DesignMatrix {
    pub fn num_authors(&self) -> usize {
        self.x.nrows()
    }

    pub fn num_columns(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, a: usize) -> Vec<f64> {
        self.x.row(a).iter().copied().collect()
    }

    pub fn factor(&self, name: &str) -> Option<&Factor> {
        self.factors.iter().find(|f| f.name == name)
    }

    /// Intercept-only design for `num_authors` authors.
    pub fn intercept_only(num_authors: usize) -> Self {
        Self {
            x: DMatrix::from_element(num_authors, 1, 1.0),
            column_names: vec!["(Intercept)".into()],
            term_groups: Vec::new(),
            factors: Vec::new(),
            interaction_main: None,
        }
    }

    pub fn build(table: &CovariateTable, formula: &str) -> Result<Self> {
        build_design_matrix(table, formula)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum FormulaTerm {
    Intercept,
    Main(String),
    Crossed { main: String, others: Vec<String> },
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    src: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Tilde,
    Plus,
    Star,
    LParen,
    RParen,
    Name(String),
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<Tok>> {
        let mut lx = Lexer {
            chars: src.char_indices().peekable(),
            src,
        };
        let mut out = Vec::new();
        while let Some(&(i, c)) = lx.chars.peek() {
            match c {
                c if c.is_whitespace() => {
                    lx.chars.next();
                }
                '~' | '+' | '*' | '(' | ')' => {
                    lx.chars.next();
                    out.push(match c {
                        '~' => Tok::Tilde,
                        '+' => Tok::Plus,
                        '*' => Tok::Star,
                        '(' => Tok::LParen,
                        _ => Tok::RParen,
                    });
                }
                c if c.is_alphanumeric() || c == '_' || c == '.' => {
                    let start = i;
                    let mut end = i;
                    while let Some(&(j, c)) = lx.chars.peek() {
                        if c.is_alphanumeric() || c == '_' || c == '.' {
                            end = j + c.len_utf8();
                            lx.chars.next();
                        } else {
                            break;
                        }
                    }
                    out.push(Tok::Name(lx.src[start..end].to_string()));
                }
                other => return Err(Error::Formula(format!("unexpected character `{other}` at {i}"))),
            }
        }
        Ok(out)
    }
}

fn parse_formula(src: &str) -> Result<Vec<FormulaTerm>> {
    let toks = Lexer::tokens(src)?;
    let mut it = toks.into_iter().peekable();
    if it.next() != Some(Tok::Tilde) {
        return Err(Error::Formula("formula must start with `~`".into()));
    }
    let name = |t: Option<Tok>| match t {
        Some(Tok::Name(n)) => Ok(n),
        other => Err(Error::Formula(format!("expected a column name, found {other:?}"))),
    };
    let mut terms = Vec::new();
    loop {
        let n = name(it.next())?;
        if it.peek() == Some(&Tok::Star) {
            it.next();
            let others = if it.peek() == Some(&Tok::LParen) {
                it.next();
                let mut others = vec![name(it.next())?];
                loop {
                    match it.next() {
                        Some(Tok::Plus) => others.push(name(it.next())?),
                        Some(Tok::RParen) => break,
                        other => return Err(Error::Formula(format!("expected `+` or `)`, found {other:?}"))),
                    }
                }
                others
            } else {
                vec![name(it.next())?]
            };
            terms.push(FormulaTerm::Crossed { main: n, others });
        } else if n == "1" {
            terms.push(FormulaTerm::Intercept);
        } else {
            terms.push(FormulaTerm::Main(n));
        }
        match it.next() {
            None => break,
            Some(Tok::Plus) => continue,
            Some(t) => return Err(Error::Formula(format!("unexpected token {t:?}"))),
        }
    }
    Ok(terms)
}

fn make_factor(table: &CovariateTable, name: &str) -> Result<Factor> {
    let col = table
        .column(name)
        .ok_or_else(|| Error::Formula(format!("unknown column `{name}`")))?;
    let baseline = col
        .baseline
        .as_ref()
        .ok_or_else(|| Error::Formula(format!("no baseline declared for column `{name}`")))?;
    let mut others: Vec<String> = col.labels.iter().filter(|l| *l != baseline).cloned().collect();
    others.sort();
    others.dedup();
    let mut levels = vec![baseline.clone()];
    levels.extend(others);
    let codes = col
        .labels
        .iter()
        .map(|l| levels.iter().position(|x| x == l).unwrap_or(0))
        .collect();
    Ok(Factor {
        name: name.to_string(),
        levels,
        codes,
    })
}

/// Expands `formula` against `table` into a treatment-coded design.
pub fn build_design_matrix(table: &CovariateTable, formula: &str) -> Result<DesignMatrix> {
    let terms = parse_formula(formula)?;
    let mut mains: Vec<String> = Vec::new();
    let mut crosses: Vec<(String, String)> = Vec::new();
    let mut interaction_main = None;
    let push_main = |n: &String, mains: &mut Vec<String>| {
        if !mains.contains(n) {
            mains.push(n.clone());
        }
    };
    for t in &terms {
        match t {
            FormulaTerm::Intercept => {}
            FormulaTerm::Main(n) => push_main(n, &mut mains),
            FormulaTerm::Crossed { main, others } => {
                push_main(main, &mut mains);
                for o in others {
                    if o == main {
                        return Err(Error::Formula(format!("`{main}` crossed with itself")));
                    }
                    push_main(o, &mut mains);
                    if !crosses.contains(&(main.clone(), o.clone())) {
                        crosses.push((main.clone(), o.clone()));
                    }
                }
                interaction_main.get_or_insert_with(|| main.clone());
            }
        }
    }
    let factors = mains
        .iter()
        .map(|n| make_factor(table, n))
        .collect::<Result<Vec<_>>>()?;
    let a = table.num_authors();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; a]];
    let mut names = vec!["(Intercept)".to_string()];
    let mut groups = Vec::new();
    // Column index per (factor, non-baseline level).
    let mut level_cols: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (fi, f) in factors.iter().enumerate() {
        let mut idx = Vec::new();
        for lvl in 1..f.levels.len() {
            level_cols.insert((fi, lvl), cols.len());
            idx.push(cols.len());
            names.push(format!("{}[{}]", f.name, f.levels[lvl]));
            cols.push(f.codes.iter().map(|&c| if c == lvl { 1.0 } else { 0.0 }).collect());
        }
        groups.push(TermGroup {
            name: f.name.clone(),
            kind: TermKind::Main,
            columns: idx,
        });
    }
    for (m, o) in &crosses {
        let mi = mains.iter().position(|x| x == m).unwrap();
        let oi = mains.iter().position(|x| x == o).unwrap();
        let mut idx = Vec::new();
        for ml in 1..factors[mi].levels.len() {
            for ol in 1..factors[oi].levels.len() {
                let pc = &cols[level_cols[&(mi, ml)]];
                let oc = &cols[level_cols[&(oi, ol)]];
                let prod: Vec<f64> = pc.iter().zip(oc).map(|(x, y)| x * y).collect();
                idx.push(cols.len());
                names.push(format!("{}:{}", names[level_cols[&(mi, ml)]], names[level_cols[&(oi, ol)]]));
                cols.push(prod);
            }
        }
        groups.push(TermGroup {
            name: format!("{m}:{o}"),
            kind: TermKind::Interaction,
            columns: idx,
        });
    }
    let l = cols.len();
    let x = DMatrix::from_fn(a, l, |r, c| cols[c][r]);
    Ok(DesignMatrix {
        x,
        column_names: names,
        term_groups: groups,
        factors,
        interaction_main,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn covariate_file_round_trip() {
        let t = CovariateTable {
            author_ids: vec![4, 0, 7],
            columns: vec![
                CovariateColumn { name: "party".into(), labels: vec!["D".into(), "R".into(), "D".into()], baseline: None },
                CovariateColumn { name: "region".into(), labels: vec!["n, e".into(), "s".into(), "w".into()], baseline: None },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        t.write(&p).unwrap();
        assert_eq!(CovariateTable::load(&p).unwrap(), t);
    }

    fn table(cols: &[(&str, Vec<&str>, &str)]) -> CovariateTable {
        let n = cols[0].1.len();
        CovariateTable {
            author_ids: (0..n).collect(),
            columns: cols
                .iter()
                .map(|(name, labels, base)| CovariateColumn {
                    name: name.to_string(),
                    labels: labels.iter().map(|s| s.to_string()).collect(),
                    baseline: Some(base.to_string()),
                })
                .collect(),
        }
    }

    /// Builds a 99-author table with the given level counts, cycling labels
    /// and leaving the (last party level, last religion level) cell empty.
    fn senate_like() -> CovariateTable {
        let spec: [(&str, usize); 6] = [
            ("party", 3),
            ("gender", 2),
            ("region", 5),
            ("generation", 3),
            ("experience", 3),
            ("religion", 8),
        ];
        let n = 99;
        let mut cols = Vec::new();
        for (i, (name, k)) in spec.iter().enumerate() {
            let labels: Vec<String> = (0..n).map(|a| format!("{name}{}", (a * (i + 1) + a / 7) % k)).collect();
            cols.push(CovariateColumn {
                name: name.to_string(),
                labels,
                baseline: Some(format!("{name}0")),
            });
        }
        // Empty out party2 x religion7.
        for a in 0..n {
            if cols[0].labels[a] == "party2" && cols[5].labels[a] == "religion7" {
                cols[5].labels[a] = "religion0".into();
            }
        }
        CovariateTable {
            author_ids: (0..n).collect(),
            columns: cols,
        }
    }

    #[test]
    fn two_level_party() {
        let t = table(&[("party", vec!["Democrat", "Republican", "Democrat"], "Democrat")]);
        let d = build_design_matrix(&t, "~ party").unwrap();
        assert_eq!(d.num_columns(), 2);
        assert_eq!(d.term_groups.len(), 1);
        assert_eq!(d.term_groups[0].name, "party");
        assert_eq!(d.term_groups[0].columns, vec![1]);
        assert_eq!(d.x.column(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 0.0]);
        assert_eq!(d.column_names[1], "party[Republican]");
    }

    #[test]
    fn additive_and_interaction_column_counts() {
        let t = senate_like();
        for c in &t.columns {
            let mut l = c.labels.clone();
            l.sort();
            l.dedup();
            assert!(l.len() >= 2);
        }
        let add = build_design_matrix(&t, "~ party + gender + region + generation + experience + religion").unwrap();
        // 1 + 2 + 1 + 4 + 2 + 2 + 7
        assert_eq!(add.num_columns(), 19);
        let int = build_design_matrix(&t, "~ party * (gender + region + generation + experience + religion)").unwrap();
        assert_eq!(int.num_columns(), 19 + 2 * 16);
        assert_eq!(int.interaction_main.as_deref(), Some("party"));
        assert_eq!(int.term_groups.len(), 11);
        let idx = int
            .column_names
            .iter()
            .position(|n| n == "party[party2]:religion[religion7]")
            .unwrap();
        assert!(int.x.column(idx).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn intercept_only() {
        let t = table(&[("g", vec!["a", "b"], "a")]);
        let d = build_design_matrix(&t, "~ 1").unwrap();
        assert_eq!(d.num_columns(), 1);
        assert!(d.term_groups.is_empty());
    }

    #[test]
    fn formula_errors() {
        let t = table(&[("g", vec!["a", "b"], "a")]);
        assert!(matches!(build_design_matrix(&t, "~ h"), Err(Error::Formula(_))));
        assert!(matches!(build_design_matrix(&t, "g"), Err(Error::Formula(_))));
        assert!(matches!(build_design_matrix(&t, "~ g +"), Err(Error::Formula(_))));
        assert!(matches!(build_design_matrix(&t, "~ g * (g)"), Err(Error::Formula(_))));
        assert!(matches!(build_design_matrix(&t, "~ g $"), Err(Error::Formula(_))));
    }

    #[test]
    fn baselines_must_exist() {
        let t = table(&[("g", vec!["a", "b"], "a")]);
        let mut b = BTreeMap::new();
        b.insert("g".to_string(), "zz".to_string());
        assert!(t.clone().with_baselines(&b).is_err());
        b.insert("g".to_string(), "b".to_string());
        let t = t.with_baselines(&b).unwrap();
        let d = build_design_matrix(&t, "~ g").unwrap();
        assert_eq!(d.column_names[1], "g[a]");
    }

    #[test]
    fn labels_are_case_sensitive() {
        let t = table(&[("g", vec!["a", "A", "a"], "a")]);
        let d = build_design_matrix(&t, "~ g").unwrap();
        assert_eq!(d.num_columns(), 2);
    }

    proptest! {
        #[test]
        fn design_invariants(
            g1 in proptest::collection::vec(0usize..3, 4..30),
            seed in 0usize..1000,
        ) {
            let n = g1.len();
            let l1: Vec<String> = g1.iter().map(|c| format!("p{c}")).collect();
            let l2: Vec<String> = (0..n).map(|a| format!("q{}", (a * 7 + seed) % 4)).collect();
            let l3: Vec<String> = (0..n).map(|a| format!("r{}", (a + seed) % 2)).collect();
            let t = CovariateTable {
                author_ids: (0..n).collect(),
                columns: vec![
                    CovariateColumn { name: "p".into(), labels: l1.clone(), baseline: Some(l1[0].clone()) },
                    CovariateColumn { name: "q".into(), labels: l2.clone(), baseline: Some(l2[0].clone()) },
                    CovariateColumn { name: "r".into(), labels: l3.clone(), baseline: Some(l3[0].clone()) },
                ],
            };
            let d = build_design_matrix(&t, "~ p * (q + r)").unwrap();
            prop_assert_eq!(d.x.column(0).sum(), n as f64);
            let mut seen = vec![0usize; d.num_columns()];
            for g in &d.term_groups {
                for &c in &g.columns { seen[c] += 1; }
                if g.kind == TermKind::Main {
                    for a in 0..n {
                        let s: f64 = g.columns.iter().map(|&c| d.x[(a, c)]).sum();
                        prop_assert!(s <= 1.0);
                    }
                }
            }
            prop_assert!(seen[1..].iter().all(|&s| s == 1));
            for (c, name) in d.column_names.iter().enumerate() {
                if let Some((lhs, rhs)) = name.split_once(':') {
                    let i = d.column_names.iter().position(|n| n == lhs).unwrap();
                    let j = d.column_names.iter().position(|n| n == rhs).unwrap();
                    for a in 0..n {
                        prop_assert_eq!(d.x[(a, c)], d.x[(a, i)] * d.x[(a, j)]);
                    }
                }
            }
        }
    }
}
