//! CSV ingestion driven by feature presets, the clean-region split of the
//! UNSW-NB15 stream, and contaminated test batches.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::stats;

/// How the label column maps to the attack class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelRule {
    /// Listed values are attacks; everything else is normal.
    Positive(HashSet<String>),
    /// Listed values are normal; everything else is an attack.
    Normal(HashSet<String>),
}

impl LabelRule {
    pub fn is_attack(&self, label: &str) -> bool {
        match self {
            LabelRule::Positive(set) => set.contains(label),
            LabelRule::Normal(set) => !set.contains(label),
        }
    }
}

/// Which columns of a CSV are features, and how rows are labelled.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePreset {
    pub name: String,
    /// Whether the first record holds column names.
    pub header: bool,
    /// Column names of a headerless file, in file order.
    pub columns: Option<Vec<String>>,
    /// Feature columns in model order; `None` takes every column that is not
    /// a label, category or excluded column.
    pub features: Option<Vec<String>>,
    pub exclude: Vec<String>,
    pub label_column: Option<String>,
    pub label_rule: Option<LabelRule>,
    /// Suffix removed from label and category values (KDD'99 writes
    /// `normal.`).
    pub label_trim_suffix: Option<String>,
    pub category_column: Option<String>,
    pub category_aliases: BTreeMap<String, String>,
    /// Row count of the complete public dataset, checked on request.
    pub expected_rows: Option<usize>,
    /// Number of components the reference analysis reports for this data.
    pub expected_components: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetFile {
    name: String,
    #[serde(default = "yes")]
    header: bool,
    columns: Option<Vec<String>>,
    features: Option<Vec<String>>,
    #[serde(default)]
    exclude: Vec<String>,
    label_column: Option<String>,
    positive_labels: Option<Vec<String>>,
    normal_labels: Option<Vec<String>>,
    label_trim_suffix: Option<String>,
    category_column: Option<String>,
    #[serde(default)]
    category_aliases: BTreeMap<String, String>,
    expected_rows: Option<usize>,
    expected_components: Option<usize>,
}

fn yes() -> bool {
    true
}

impl FeaturePreset {
    /// Parses a preset file (TOML).
    pub fn parse(text: &str) -> Result<Self> {
        let f: PresetFile =
            toml::from_str(text).map_err(|e| Error::Format(format!("preset: {e}")))?;
        let label_rule = match (f.positive_labels, f.normal_labels) {
            (Some(_), Some(_)) => {
                return Err(Error::Format(
                    "preset: give either positive_labels or normal_labels, not both".into(),
                ))
            }
            (Some(p), None) => Some(LabelRule::Positive(p.into_iter().collect())),
            (None, Some(n)) => Some(LabelRule::Normal(n.into_iter().collect())),
            (None, None) => None,
        };
        let preset = FeaturePreset {
            name: f.name,
            header: f.header,
            columns: f.columns,
            features: f.features,
            exclude: f.exclude,
            label_column: f.label_column,
            label_rule,
            label_trim_suffix: f.label_trim_suffix,
            category_column: f.category_column,
            category_aliases: f.category_aliases,
            expected_rows: f.expected_rows,
            expected_components: f.expected_components,
        };
        preset.validate()?;
        Ok(preset)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::parse(&text).map_err(|e| e.in_file(path))
    }

    /// Headered CSV: every column except `label_column` is a feature; labels
    /// equal to one of `positive` are attacks.
    pub fn generic(label_column: Option<&str>, positive: &[&str]) -> Self {
        FeaturePreset {
            name: "generic".into(),
            header: true,
            columns: None,
            features: None,
            exclude: Vec::new(),
            label_column: label_column.map(str::to_owned),
            label_rule: label_column
                .map(|_| LabelRule::Positive(positive.iter().map(|s| s.to_string()).collect())),
            label_trim_suffix: None,
            category_column: None,
            category_aliases: BTreeMap::new(),
            expected_rows: None,
            expected_components: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.header && self.columns.is_none() {
            return Err(Error::Format(
                "preset: a headerless preset must list its columns".into(),
            ));
        }
        if self.label_column.is_some() != self.label_rule.is_some() {
            return Err(Error::Format(
                "preset: label_column needs positive_labels or normal_labels (and vice versa)"
                    .into(),
            ));
        }
        if let Some(features) = &self.features {
            if features.is_empty() {
                return Err(Error::Format("preset: feature list is empty".into()));
            }
            let mut seen = HashSet::new();
            for f in features {
                if !seen.insert(f) {
                    return Err(Error::Format(format!("preset: feature `{f}` listed twice")));
                }
                if Some(f) == self.label_column.as_ref() || Some(f) == self.category_column.as_ref()
                {
                    return Err(Error::Format(format!(
                        "preset: `{f}` is both a feature and a label column"
                    )));
                }
            }
        }
        if let Some(columns) = &self.columns {
            let known: HashSet<&String> = columns.iter().collect();
            let referenced = self
                .features
                .iter()
                .flatten()
                .chain(&self.label_column)
                .chain(&self.category_column);
            for name in referenced {
                if !known.contains(name) {
                    return Err(Error::Format(format!(
                        "preset: `{name}` is not among the declared columns"
                    )));
                }
            }
        }
        Ok(())
    }

    fn normalize(&self, value: &str) -> String {
        let v = value.trim();
        let v = match &self.label_trim_suffix {
            Some(s) => v.strip_suffix(s.as_str()).unwrap_or(v),
            None => v,
        };
        v.to_owned()
    }

    fn normalize_category(&self, value: &str) -> String {
        let v = self.normalize(value);
        self.category_aliases.get(&v).cloned().unwrap_or(v)
    }
}

/// Feature matrix with per-row labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub y: DataMatrix,
    pub feature_names: Vec<String>,
    /// `true` = attack. `None` when the preset has no label column.
    pub labels: Option<Vec<bool>>,
    pub categories: Option<Vec<String>>,
    /// 0-based data-row index in the source file(s).
    pub row_ids: Vec<usize>,
}

impl LabeledDataset {
    pub fn rows(&self) -> usize {
        self.y.rows()
    }

    pub fn select_rows(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            y: self.y.select_rows(idx),
            feature_names: self.feature_names.clone(),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            categories: self
                .categories
                .as_ref()
                .map(|c| idx.iter().map(|&i| c[i].clone()).collect()),
            row_ids: idx.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    pub fn attack_count(&self) -> usize {
        self.labels.iter().flatten().filter(|&&l| l).count()
    }

    /// Rows per category, sorted by name.
    pub fn category_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for c in self.categories.iter().flatten() {
            *counts.entry(c.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Removes zero-variance columns, returning their names.
    pub fn drop_constant_columns(&mut self) -> Vec<String> {
        let p = self.y.cols();
        let constant: Vec<bool> = (0..p)
            .map(|j| {
                let first = self.y.get(0, j);
                self.y.row_iter().all(|r| r[j] == first)
            })
            .collect();
        if self.y.rows() == 0 || !constant.iter().any(|&c| c) {
            return Vec::new();
        }
        let keep: Vec<usize> = (0..p).filter(|&j| !constant[j]).collect();
        let dropped = (0..p)
            .filter(|&j| constant[j])
            .map(|j| self.feature_names[j].clone())
            .collect();
        self.y = self.y.select_columns(&keep);
        self.feature_names = keep.iter().map(|&j| self.feature_names[j].clone()).collect();
        dropped
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Skip malformed rows (and count them) instead of failing.
    pub skip_malformed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    pub dataset: LabeledDataset,
    pub skipped_rows: usize,
}

struct Layout {
    features: Vec<usize>,
    feature_names: Vec<String>,
    label: Option<usize>,
    category: Option<usize>,
    width: usize,
}

fn resolve_layout(preset: &FeaturePreset, names: &[String]) -> Result<Layout> {
    let position = |name: &str| -> Result<usize> {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let label = preset.label_column.as_deref().map(position).transpose()?;
    let category = preset.category_column.as_deref().map(position).transpose()?;
    let feature_names: Vec<String> = match &preset.features {
        Some(f) => f.clone(),
        None => names
            .iter()
            .enumerate()
            .filter(|(i, n)| {
                Some(*i) != label && Some(*i) != category && !preset.exclude.contains(n)
            })
            .map(|(_, n)| n.clone())
            .collect(),
    };
    if feature_names.is_empty() {
        return Err(Error::Format("no feature columns selected".into()));
    }
    let features = feature_names
        .iter()
        .map(|n| position(n))
        .collect::<Result<_>>()?;
    Ok(Layout {
        features,
        feature_names,
        label,
        category,
        width: names.len(),
    })
}

/// Streaming accumulator shared by the single- and multi-file loaders.
struct Loader<'a> {
    preset: &'a FeaturePreset,
    options: LoadOptions,
    layout: Option<Layout>,
    values: Vec<f64>,
    labels: Vec<bool>,
    categories: Vec<String>,
    row_ids: Vec<usize>,
    next_row: usize,
    skipped: usize,
    first_error: Option<(usize, String)>,
}

impl<'a> Loader<'a> {
    fn new(preset: &'a FeaturePreset, options: LoadOptions) -> Self {
        Loader {
            preset,
            options,
            layout: None,
            values: Vec::new(),
            labels: Vec::new(),
            categories: Vec::new(),
            row_ids: Vec::new(),
            next_row: 0,
            skipped: 0,
            first_error: None,
        }
    }

    fn read<R: Read>(&mut self, reader: R) -> Result<()> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = rdr.records();
        let names: Vec<String> = if self.preset.header {
            match records.next() {
                Some(r) => r?.iter().map(str::to_owned).collect(),
                None => return Ok(()),
            }
        } else {
            self.preset.columns.clone().unwrap_or_default()
        };
        let layout = resolve_layout(self.preset, &names)?;
        if let Some(prev) = &self.layout {
            if prev.feature_names != layout.feature_names || prev.width != layout.width {
                return Err(Error::Format(
                    "input files disagree on their columns".into(),
                ));
            }
        }
        self.layout = Some(layout);
        let mut row_values = Vec::new();
        for record in records {
            let row = self.next_row;
            self.next_row += 1;
            let record = record?;
            match self.parse_row(&record, &mut row_values) {
                Ok((label, category)) => {
                    self.values.extend_from_slice(&row_values);
                    if let Some(l) = label {
                        self.labels.push(l);
                    }
                    if let Some(c) = category {
                        self.categories.push(c);
                    }
                    self.row_ids.push(row);
                }
                Err(message) => {
                    self.skipped += 1;
                    if self.first_error.is_none() {
                        self.first_error = Some((row + 1, message));
                    }
                }
            }
        }
        Ok(())
    }

    fn parse_row(
        &self,
        record: &csv::StringRecord,
        out: &mut Vec<f64>,
    ) -> std::result::Result<(Option<bool>, Option<String>), String> {
        let layout = self.layout.as_ref().expect("layout resolved");
        if record.len() != layout.width {
            return Err(format!(
                "expected {} fields, found {}",
                layout.width,
                record.len()
            ));
        }
        out.clear();
        for (&col, name) in layout.features.iter().zip(&layout.feature_names) {
            let field = &record[col];
            if field.is_empty() {
                return Err(format!("missing value in `{name}`"));
            }
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => out.push(v),
                _ => return Err(format!("`{name}` is not a finite number: {field:?}")),
            }
        }
        let label = layout.label.map(|i| {
            let rule = self.preset.label_rule.as_ref().expect("validated");
            rule.is_attack(&self.preset.normalize(&record[i]))
        });
        let category = layout
            .category
            .map(|i| self.preset.normalize_category(&record[i]));
        Ok((label, category))
    }

    fn finish(self) -> Result<LoadReport> {
        let layout = self.layout.ok_or(Error::EmptyInput)?;
        if let Some((first_row, first_message)) = self.first_error.clone() {
            if !self.options.skip_malformed {
                return Err(Error::MalformedRows {
                    count: self.skipped,
                    first_row,
                    first_message,
                });
            }
        }
        if self.row_ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        let rows = self.row_ids.len();
        let y = DataMatrix::new(rows, layout.features.len(), self.values)?;
        Ok(LoadReport {
            dataset: LabeledDataset {
                y,
                feature_names: layout.feature_names,
                labels: layout.label.map(|_| self.labels),
                categories: layout.category.map(|_| self.categories),
                row_ids: self.row_ids,
            },
            skipped_rows: self.skipped,
        })
    }
}

/// Loads CSV text from a reader. Row numbers in errors are 1-based data rows.
pub fn load_csv_reader<R: Read>(
    reader: R,
    preset: &FeaturePreset,
    options: LoadOptions,
) -> Result<LoadReport> {
    let mut loader = Loader::new(preset, options);
    loader.read(reader)?;
    loader.finish()
}

pub fn load_csv(path: &Path, preset: &FeaturePreset, options: LoadOptions) -> Result<LoadReport> {
    load_csv_files(&[path], preset, options)
}

/// Loads several files as one stream (e.g. the four UNSW-NB15 parts, in
/// order); row indices continue across files.
pub fn load_csv_files<P: AsRef<Path>>(
    paths: &[P],
    preset: &FeaturePreset,
    options: LoadOptions,
) -> Result<LoadReport> {
    let mut loader = Loader::new(preset, options);
    for path in paths {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::from(e).in_file(path))?;
        loader
            .read(io::BufReader::with_capacity(1 << 20, file))
            .map_err(|e| e.in_file(path))?;
    }
    loader.finish()
}

/// First data row (0-based) of the clean training region.
pub const UNSW_TRAIN_START: usize = 300_000;
/// One past the last training row (0-based).
pub const UNSW_TRAIN_END: usize = 900_000;
/// Rows needed for the clean region to be complete.
pub const UNSW_MIN_ROWS: usize = 1_087_248;

/// Training rows 300,001-900,000 (1-based) of the full UNSW-NB15 stream;
/// every other row is the test set.
pub fn split_unsw_clean(dataset: &LabeledDataset) -> Result<(LabeledDataset, LabeledDataset)> {
    if dataset.rows() < UNSW_MIN_ROWS {
        return Err(Error::DatasetTooSmall {
            need: UNSW_MIN_ROWS,
            got: dataset.rows(),
        });
    }
    let train: Vec<usize> = (UNSW_TRAIN_START..UNSW_TRAIN_END).collect();
    let test: Vec<usize> = (0..UNSW_TRAIN_START)
        .chain(UNSW_TRAIN_END..dataset.rows())
        .collect();
    Ok((dataset.select_rows(&train), dataset.select_rows(&test)))
}

/// Restricts the attack pool of [`contaminate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CategoryFilter {
    All,
    /// One attack category (case-insensitive).
    Category(String),
    /// Categories with fewer than `below` rows in the attack pool.
    Rare { below: usize },
}

impl CategoryFilter {
    pub fn describe(&self) -> String {
        match self {
            CategoryFilter::All => "all attacks".into(),
            CategoryFilter::Category(c) => format!("category `{c}`"),
            CategoryFilter::Rare { below } => format!("categories with < {below} rows"),
        }
    }
}

/// Draws `clean_count` normal rows of `clean` and `attack_count` attack rows
/// of `attacks` (uniformly, without replacement) and shuffles them together.
///
/// Rows of `clean` count as normal unless labelled otherwise; rows of
/// `attacks` must be labelled.
pub fn contaminate(
    clean: &LabeledDataset,
    attacks: &LabeledDataset,
    clean_count: usize,
    attack_count: usize,
    filter: &CategoryFilter,
    seed: u64,
) -> Result<LabeledDataset> {
    if clean.feature_names != attacks.feature_names {
        return Err(Error::Format(
            "clean and attack data have different feature columns".into(),
        ));
    }
    let clean_pool: Vec<usize> = match &clean.labels {
        Some(l) => (0..clean.rows()).filter(|&i| !l[i]).collect(),
        None => (0..clean.rows()).collect(),
    };
    let attack_labels = attacks
        .labels
        .as_ref()
        .ok_or_else(|| Error::MissingColumn("label".into()))?;
    let mut attack_pool: Vec<usize> = (0..attacks.rows()).filter(|&i| attack_labels[i]).collect();
    if *filter != CategoryFilter::All {
        let cats = attacks
            .categories
            .as_ref()
            .ok_or_else(|| Error::MissingColumn("attack category".into()))?;
        match filter {
            CategoryFilter::Category(name) => {
                attack_pool.retain(|&i| cats[i].eq_ignore_ascii_case(name));
            }
            CategoryFilter::Rare { below } => {
                let mut counts: HashMap<&str, usize> = HashMap::new();
                for &i in &attack_pool {
                    *counts.entry(cats[i].as_str()).or_insert(0) += 1;
                }
                attack_pool.retain(|&i| counts[cats[i].as_str()] < *below);
            }
            CategoryFilter::All => unreachable!(),
        }
    }
    for (name, pool, want) in [
        ("clean".to_string(), &clean_pool, clean_count),
        (filter.describe(), &attack_pool, attack_count),
    ] {
        if pool.len() < want {
            return Err(Error::InsufficientPool {
                pool: name,
                available: pool.len(),
                requested: want,
            });
        }
    }
    let mut rng = stats::rng_from_seed(seed);
    let clean_rows: Vec<usize> = index::sample(&mut rng, clean_pool.len(), clean_count)
        .into_iter()
        .map(|k| clean_pool[k])
        .collect();
    let attack_rows: Vec<usize> = index::sample(&mut rng, attack_pool.len(), attack_count)
        .into_iter()
        .map(|k| attack_pool[k])
        .collect();
    // (from attacks?, row)
    let mut picks: Vec<(bool, usize)> = clean_rows
        .into_iter()
        .map(|r| (false, r))
        .chain(attack_rows.into_iter().map(|r| (true, r)))
        .collect();
    picks.shuffle(&mut rng);

    let p = clean.y.cols();
    let mut values = Vec::with_capacity(picks.len() * p);
    let mut categories = Vec::with_capacity(picks.len());
    let has_categories = clean.categories.is_some() || attacks.categories.is_some();
    for &(is_attack, r) in &picks {
        let src = if is_attack { attacks } else { clean };
        values.extend_from_slice(src.y.row(r));
        categories.push(match &src.categories {
            Some(c) => c[r].clone(),
            None if is_attack => "attack".into(),
            None => "normal".into(),
        });
    }
    Ok(LabeledDataset {
        y: DataMatrix::new(picks.len(), p, values)?,
        feature_names: clean.feature_names.clone(),
        labels: Some(picks.iter().map(|&(a, _)| a).collect()),
        categories: has_categories.then_some(categories),
        row_ids: picks.iter().map(|&(_, r)| r).collect(),
    })
}

/// Writes the features with a trailing `label` column (1 = attack) and, when
/// present, a `category` column.
pub fn write_labeled_csv<W: Write>(writer: W, dataset: &LabeledDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = dataset.feature_names.iter().map(String::as_str).collect();
    if dataset.labels.is_some() {
        header.push("label");
    }
    if dataset.categories.is_some() {
        header.push("category");
    }
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..dataset.rows() {
        record.clear();
        record.extend(dataset.y.row(i).iter().map(|v| v.to_string()));
        if let Some(l) = &dataset.labels {
            record.push(if l[i] { "1" } else { "0" }.to_string());
        }
        if let Some(c) = &dataset.categories {
            record.push(c[i].clone());
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Preset reading back files written by [`write_labeled_csv`].
pub fn labeled_csv_preset() -> FeaturePreset {
    FeaturePreset {
        category_column: Some("category".into()),
        ..FeaturePreset::generic(Some("label"), &["1"])
    }
}
