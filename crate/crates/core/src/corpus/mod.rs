//! Document-term counts, author assignments, corpus filters and design
//! matrices built from categorical author covariates.

mod design;

pub use design::{CovariateColumn, CovariateTable, DesignMatrix, Factor, TermGroup, TermKind};

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse D x V count matrix in compressed-row form, with a document to
/// author map. Row `d` holds the nonzero counts of document `d` sorted by
/// term index.
///
/// Documents, terms and authors are stored with compact indices; the
/// `*_ids` vectors map them back to the identifiers used in input files.
#[derive(Debug, Clone, PartialEq)]
pub struct DocTermMatrix {
    num_terms: usize,
    doc_ptr: Vec<usize>,
    terms: Vec<u32>,
    counts: Vec<u32>,
    doc_author: Vec<usize>,
    num_authors: usize,
    doc_ids: Vec<usize>,
    term_ids: Vec<usize>,
    author_ids: Vec<usize>,
    vocab: Option<Vec<String>>,
}

/// Thresholds for [`apply_corpus_filters`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSettings {
    pub min_doc_frac: f64,
    pub max_doc_frac: f64,
    pub min_authors_per_term: usize,
    pub min_docs_per_author: usize,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            min_doc_frac: 0.001,
            max_doc_frac: 0.30,
            min_authors_per_term: 10,
            min_docs_per_author: 24,
        }
    }
}

impl FilterSettings {
    /// Thresholds that keep every nonempty document and used term.
    pub fn identity() -> Self {
        Self {
            min_doc_frac: 0.0,
            max_doc_frac: 1.0,
            min_authors_per_term: 1,
            min_docs_per_author: 1,
        }
    }
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn check_header(path: &Path, rdr: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?.clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(parse_err(
            path,
            1,
            format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, i: usize) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| parse_err(path, line, format!("missing field {}", i + 1)))?;
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid integer `{raw}`")))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?)
}

impl DocTermMatrix {
    /// Builds a matrix from `(doc, term, count)` triplets. Documents without
    /// an author entry in `doc_author` are rejected.
    pub fn from_triplets(
        num_docs: usize,
        num_terms: usize,
        triplets: &[(usize, usize, u32)],
        doc_author: Vec<usize>,
    ) -> Result<Self> {
        if doc_author.len() != num_docs {
            return Err(Error::Corpus(format!(
                "{} author assignments for {num_docs} documents",
                doc_author.len()
            )));
        }
        let mut sorted = triplets.to_vec();
        sorted.sort_unstable_by_key(|&(d, v, _)| (d, v));
        let mut doc_ptr = vec![0usize; num_docs + 1];
        let mut terms = Vec::with_capacity(sorted.len());
        let mut counts = Vec::with_capacity(sorted.len());
        for (i, &(d, v, c)) in sorted.iter().enumerate() {
            if d >= num_docs || v >= num_terms {
                return Err(Error::Corpus(format!("entry ({d}, {v}) out of range")));
            }
            if c == 0 {
                return Err(Error::Corpus(format!("entry ({d}, {v}) has zero count")));
            }
            if i > 0 && sorted[i - 1].0 == d && sorted[i - 1].1 == v {
                return Err(Error::Corpus(format!("duplicate entry ({d}, {v})")));
            }
            doc_ptr[d + 1] += 1;
            terms.push(v as u32);
            counts.push(c);
        }
        for d in 0..num_docs {
            doc_ptr[d + 1] += doc_ptr[d];
        }
        let num_authors = doc_author.iter().map(|&a| a + 1).max().unwrap_or(0);
        Ok(Self {
            num_terms,
            doc_ptr,
            terms,
            counts,
            doc_author,
            num_authors,
            doc_ids: (0..num_docs).collect(),
            term_ids: (0..num_terms).collect(),
            author_ids: (0..num_authors).collect(),
            vocab: None,
        })
    }

    /// Reads a `doc_id,term_id,count` file. The result has no author
    /// assignments yet; see [`DocTermMatrix::with_authors`].
    pub fn load_counts(path: &Path) -> Result<Self> {
        let mut rdr = csv_reader(path)?;
        check_header(path, &mut rdr, &["doc_id", "term_id", "count"])?;
        let mut triplets = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != 3 {
                return Err(parse_err(path, line, format!("expected 3 fields, found {}", rec.len())));
            }
            let d: usize = parse_field(path, line, &rec, 0)?;
            let v: usize = parse_field(path, line, &rec, 1)?;
            let c: i64 = parse_field(path, line, &rec, 2)?;
            if c <= 0 {
                return Err(parse_err(path, line, format!("count must be positive, got {c}")));
            }
            let c = u32::try_from(c).map_err(|_| parse_err(path, line, "count too large"))?;
            if !seen.insert((d, v)) {
                return Err(parse_err(path, line, format!("duplicate pair ({d}, {v})")));
            }
            triplets.push((d, v, c));
        }
        if triplets.is_empty() {
            return Err(Error::Corpus("no non-empty documents".into()));
        }
        let num_docs = triplets.iter().map(|t| t.0 + 1).max().unwrap_or(0);
        let num_terms = triplets.iter().map(|t| t.1 + 1).max().unwrap_or(0);
        let mut m = Self::from_triplets(num_docs, num_terms, &triplets, vec![0; num_docs])?;
        m.doc_author.clear();
        m.num_authors = 0;
        m.author_ids.clear();
        Ok(m)
    }

    /// Writes the counts back in the input format using the original ids.
    pub fn write_counts(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "doc_id,term_id,count")?;
        for (d, v, c) in self.entries() {
            writeln!(w, "{},{},{}", self.doc_ids[d], self.term_ids[v], c)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_authors(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "doc_id,author_id")?;
        for d in 0..self.num_docs() {
            writeln!(w, "{},{}", self.doc_ids[d], self.author_ids[self.doc_author[d]])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Attaches author assignments read from a `doc_id,author_id` file.
    /// Documents listed there but absent from the counts become empty rows.
    pub fn with_authors(mut self, path: &Path) -> Result<Self> {
        let mut rdr = csv_reader(path)?;
        check_header(path, &mut rdr, &["doc_id", "author_id"])?;
        let mut map = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != 2 {
                return Err(parse_err(path, line, format!("expected 2 fields, found {}", rec.len())));
            }
            let d: usize = parse_field(path, line, &rec, 0)?;
            let a: usize = parse_field(path, line, &rec, 1)?;
            if map.insert(d, a).is_some() {
                return Err(parse_err(path, line, format!("document {d} assigned twice")));
            }
        }
        let num_docs = self.num_docs().max(map.keys().next_back().map_or(0, |d| d + 1));
        let mut doc_author = Vec::with_capacity(num_docs);
        for d in 0..num_docs {
            match map.get(&d) {
                Some(&a) => doc_author.push(a),
                None => return Err(Error::Corpus(format!("document {d} has no author"))),
            }
        }
        let extra = num_docs - self.num_docs();
        let last = *self.doc_ptr.last().unwrap_or(&0);
        self.doc_ptr.extend(std::iter::repeat_n(last, extra));
        self.doc_ids = (0..num_docs).collect();
        self.num_authors = doc_author.iter().map(|&a| a + 1).max().unwrap_or(0);
        self.author_ids = (0..self.num_authors).collect();
        self.doc_author = doc_author;
        Ok(self)
    }

    /// Attaches a vocabulary file (one term per line, line number = term id).
    pub fn with_vocab(mut self, path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut vocab = Vec::new();
        for line in reader.lines() {
            vocab.push(line?.trim_end_matches('\r').to_string());
        }
        let max_id = self.term_ids.iter().copied().max().unwrap_or(0);
        if max_id >= vocab.len() {
            return Err(Error::Corpus(format!(
                "vocabulary has {} entries but term id {max_id} is used",
                vocab.len()
            )));
        }
        self.vocab = Some(self.term_ids.iter().map(|&t| vocab[t].clone()).collect());
        Ok(self)
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ptr.len() - 1
    }

    pub fn num_terms(&self) -> usize {
        self.num_terms
    }

    pub fn num_authors(&self) -> usize {
        self.num_authors
    }

    pub fn nnz(&self) -> usize {
        self.terms.len()
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn author(&self, doc: usize) -> usize {
        self.doc_author[doc]
    }

    pub fn doc_authors(&self) -> &[usize] {
        &self.doc_author
    }

    pub fn doc_ids(&self) -> &[usize] {
        &self.doc_ids
    }

    pub fn term_ids(&self) -> &[usize] {
        &self.term_ids
    }

    pub fn author_ids(&self) -> &[usize] {
        &self.author_ids
    }

    pub fn vocab(&self) -> Option<&[String]> {
        self.vocab.as_deref()
    }

    /// Display label for a compact term index.
    pub fn term_label(&self, v: usize) -> String {
        match &self.vocab {
            Some(vocab) => vocab[v].clone(),
            None => self.term_ids[v].to_string(),
        }
    }

    /// Nonzero `(term, count)` pairs of one document.
    pub fn row(&self, doc: usize) -> impl Iterator<Item = (usize, u32)> + '_ {
        let (lo, hi) = (self.doc_ptr[doc], self.doc_ptr[doc + 1]);
        self.terms[lo..hi]
            .iter()
            .zip(&self.counts[lo..hi])
            .map(|(&v, &c)| (v as usize, c))
    }

    pub fn row_terms(&self, doc: usize) -> &[u32] {
        &self.terms[self.doc_ptr[doc]..self.doc_ptr[doc + 1]]
    }

    pub fn row_counts(&self, doc: usize) -> &[u32] {
        &self.counts[self.doc_ptr[doc]..self.doc_ptr[doc + 1]]
    }

    pub fn doc_len(&self, doc: usize) -> u64 {
        self.row_counts(doc).iter().map(|&c| c as u64).sum()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        (0..self.num_docs()).flat_map(move |d| self.row(d).map(move |(v, c)| (d, v, c)))
    }

    /// Count lookup, zero when absent.
    pub fn get(&self, doc: usize, term: usize) -> u32 {
        let row = self.row_terms(doc);
        match row.binary_search(&(term as u32)) {
            Ok(i) => self.row_counts(doc)[i],
            Err(_) => 0,
        }
    }

    /// Documents grouped by author, in increasing document order.
    pub fn docs_by_author(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_authors];
        for (d, &a) in self.doc_author.iter().enumerate() {
            out[a].push(d);
        }
        out
    }

    /// Checks the invariants required before fitting.
    pub fn validate(&self) -> Result<()> {
        if self.doc_author.len() != self.num_docs() {
            return Err(Error::Corpus("author assignments missing".into()));
        }
        if self.nnz() == 0 {
            return Err(Error::Corpus("no non-empty documents".into()));
        }
        if let Some(d) = (0..self.num_docs()).find(|&d| self.doc_ptr[d] == self.doc_ptr[d + 1]) {
            return Err(Error::Corpus(format!(
                "document {} is empty; apply the corpus filters first",
                self.doc_ids[d]
            )));
        }
        if let Some((a, _)) = self.docs_by_author().iter().enumerate().find(|(_, ds)| ds.is_empty()) {
            return Err(Error::Corpus(format!("author {} has no documents", self.author_ids[a])));
        }
        Ok(())
    }

    /// Rebuilds the compacted matrix of an earlier run from its external
    /// document and term ids, e.g. to pair raw input files with a saved
    /// state.
    pub fn select_ids(&self, doc_ids: &[usize], term_ids: &[usize]) -> Result<Self> {
        let lookup = |ids: &[usize], want: &[usize], what: &str| -> Result<Vec<usize>> {
            let pos: std::collections::HashMap<usize, usize> = ids.iter().enumerate().map(|(i, &x)| (x, i)).collect();
            let mut out = Vec::with_capacity(want.len());
            for w in want {
                let i = *pos.get(w).ok_or_else(|| Error::Corpus(format!("{what} id {w} not present")))?;
                if out.last().is_some_and(|&prev| prev >= i) {
                    return Err(Error::Corpus(format!("{what} ids are not in input order")));
                }
                out.push(i);
            }
            Ok(out)
        };
        let docs = lookup(&self.doc_ids, doc_ids, "document")?;
        let mut keep_terms = vec![false; self.num_terms];
        for i in lookup(&self.term_ids, term_ids, "term")? {
            keep_terms[i] = true;
        }
        Ok(self.subset(&docs, &keep_terms))
    }

    /// Keeps the listed documents and terms (each given in increasing
    /// compact order), re-indexing everything and dropping authors left
    /// without documents.
    fn subset(&self, keep_docs: &[usize], keep_terms: &[bool]) -> Self {
        let mut term_map = vec![usize::MAX; self.num_terms];
        let mut term_ids = Vec::new();
        let mut vocab = self.vocab.as_ref().map(|_| Vec::new());
        for (v, &keep) in keep_terms.iter().enumerate() {
            if keep {
                term_map[v] = term_ids.len();
                term_ids.push(self.term_ids[v]);
                if let (Some(out), Some(src)) = (vocab.as_mut(), self.vocab.as_ref()) {
                    out.push(src[v].clone());
                }
            }
        }
        let mut author_map = vec![usize::MAX; self.num_authors];
        let mut author_ids = Vec::new();
        for &d in keep_docs {
            let a = self.doc_author[d];
            if author_map[a] == usize::MAX {
                author_map[a] = 0;
            }
        }
        for a in 0..self.num_authors {
            if author_map[a] != usize::MAX {
                author_map[a] = author_ids.len();
                author_ids.push(self.author_ids[a]);
            }
        }
        let mut doc_ptr = vec![0];
        let mut terms = Vec::new();
        let mut counts = Vec::new();
        let mut doc_author = Vec::new();
        let mut doc_ids = Vec::new();
        for &d in keep_docs {
            for (v, c) in self.row(d) {
                if term_map[v] != usize::MAX {
                    terms.push(term_map[v] as u32);
                    counts.push(c);
                }
            }
            doc_ptr.push(terms.len());
            doc_author.push(author_map[self.doc_author[d]]);
            doc_ids.push(self.doc_ids[d]);
        }
        Self {
            num_terms: term_ids.len(),
            doc_ptr,
            terms,
            counts,
            doc_author,
            num_authors: author_ids.len(),
            doc_ids,
            term_ids,
            author_ids,
            vocab,
        }
    }
}

/// One pass of: document-frequency band, author spread per term, author
/// speech count, empty-document removal and index compaction.
fn filter_pass(m: &DocTermMatrix, s: &FilterSettings) -> DocTermMatrix {
    let n_docs = m.num_docs() as f64;
    let mut df = vec![0usize; m.num_terms()];
    for &v in &m.terms {
        df[v as usize] += 1;
    }
    let mut keep_term: Vec<bool> = df
        .iter()
        .map(|&c| c > 0 && c as f64 >= s.min_doc_frac * n_docs && c as f64 <= s.max_doc_frac * n_docs)
        .collect();

    let mut authors_per_term: Vec<Vec<usize>> = vec![Vec::new(); m.num_terms()];
    for d in 0..m.num_docs() {
        let a = m.author(d);
        for &v in m.row_terms(d) {
            let list = &mut authors_per_term[v as usize];
            if list.last() != Some(&a) && !list.contains(&a) {
                list.push(a);
            }
        }
    }
    for (v, keep) in keep_term.iter_mut().enumerate() {
        if authors_per_term[v].len() < s.min_authors_per_term {
            *keep = false;
        }
    }

    let by_author = m.docs_by_author();
    let keep_docs: Vec<usize> = (0..m.num_docs())
        .filter(|&d| by_author[m.author(d)].len() >= s.min_docs_per_author)
        .filter(|&d| m.row_terms(d).iter().any(|&v| keep_term[v as usize]))
        .collect();

    // Terms that lost every occurrence with the removed documents go too.
    let mut used = vec![false; m.num_terms()];
    for &d in &keep_docs {
        for &v in m.row_terms(d) {
            used[v as usize] = true;
        }
    }
    for (k, u) in keep_term.iter_mut().zip(used) {
        *k = *k && u;
    }
    m.subset(&keep_docs, &keep_term)
}

/// Applies the corpus filters, repeating the pass until nothing changes so
/// that the result is a fixed point of the filter.
pub fn apply_corpus_filters(m: &DocTermMatrix, s: &FilterSettings) -> Result<DocTermMatrix> {
    if !(0.0 <= s.min_doc_frac && s.min_doc_frac < s.max_doc_frac && s.max_doc_frac <= 1.0) {
        return Err(Error::Config(format!(
            "document-frequency band must satisfy 0 <= min < max <= 1, got [{}, {}]",
            s.min_doc_frac, s.max_doc_frac
        )));
    }
    if m.doc_author.len() != m.num_docs() {
        return Err(Error::Corpus("author assignments missing".into()));
    }
    let mut cur = filter_pass(m, s);
    loop {
        if cur.nnz() == 0 {
            return Err(Error::Corpus("empty corpus after filtering".into()));
        }
        let next = filter_pass(&cur, s);
        if next == cur {
            return Ok(cur);
        }
        cur = next;
    }
}
