use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::CrfError;

/// Ordered set of output labels shared by every position of a chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    labels: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self, CrfError> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(CrfError::TooFewLabels(labels.len()));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if index.insert(label.clone(), i).is_some() {
                return Err(CrfError::DuplicateLabel(label.clone()));
            }
        }
        Ok(Self { labels, index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn names(&self) -> &[String] {
        &self.labels
    }
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = CrfError;

    fn try_from(labels: Vec<String>) -> Result<Self, Self::Error> {
        LabelSet::new(labels)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(set: LabelSet) -> Self {
        set.labels
    }
}

/// An input chain: tokens plus optional per-token dense vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<String>,
    dense: Option<Vec<Vec<f64>>>,
}

impl TokenSequence {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self, CrfError> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(CrfError::EmptySequence);
        }
        Ok(Self {
            tokens,
            dense: None,
        })
    }

    pub fn with_dense(mut self, dense: Vec<Vec<f64>>) -> Result<Self, CrfError> {
        if dense.len() != self.tokens.len() {
            return Err(CrfError::DenseShape {
                expected: self.tokens.len(),
                found: dense.len(),
            });
        }
        if let Some(first) = dense.first() {
            if let Some(bad) = dense.iter().find(|row| row.len() != first.len()) {
                return Err(CrfError::DenseShape {
                    expected: first.len(),
                    found: bad.len(),
                });
            }
        }
        self.dense = Some(dense);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn dense(&self) -> Option<&[Vec<f64>]> {
        self.dense.as_deref()
    }
}

/// Append-only bidirectional map between observation attribute names and
/// dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureRegistry {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl FeatureRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get_or_insert(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), i);
        i
    }

    pub(crate) fn from_names(names: Vec<String>) -> Result<Self, CrfError> {
        let mut registry = Self::new();
        for name in names {
            if registry.get(&name).is_some() {
                return Err(CrfError::Checkpoint(format!(
                    "duplicate feature name {name:?}"
                )));
            }
            registry.get_or_insert(&name);
        }
        Ok(registry)
    }
}

/// Sparse attribute vector for one position. Zero values are never stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureVector(BTreeMap<usize, f64>);

impl FeatureVector {
    pub fn get(&self, index: usize) -> Option<f64> {
        self.0.get(&index).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0.iter().map(|(&i, &v)| (i, v))
    }

    fn add(&mut self, index: usize, value: f64) {
        if value == 0.0 {
            return;
        }
        let slot = self.0.entry(index).or_insert(0.0);
        *slot += value;
        if *slot == 0.0 {
            self.0.remove(&index);
        }
    }
}

const SENTENCE_START: &str = "<S>";
const SENTENCE_END: &str = "</S>";

/// Word shape: uppercase to `X`, lowercase to `x`, digits to `d`, anything
/// else kept verbatim.
pub fn word_shape(token: &str) -> String {
    token
        .chars()
        .map(|c| {
            if c.is_uppercase() {
                'X'
            } else if c.is_lowercase() {
                'x'
            } else if c.is_numeric() {
                'd'
            } else {
                c
            }
        })
        .collect()
}

/// Named observation attributes for a position, in template order.
pub fn feature_names(x: &TokenSequence, position: usize) -> Vec<(String, f64)> {
    let token = &x.tokens[position];
    let chars: Vec<char> = token.chars().collect();
    let prefix: String = chars.iter().take(3).collect();
    let suffix: String = chars[chars.len().saturating_sub(3)..].iter().collect();
    let prev = if position == 0 {
        SENTENCE_START
    } else {
        &x.tokens[position - 1]
    };
    let next = x
        .tokens
        .get(position + 1)
        .map(String::as_str)
        .unwrap_or(SENTENCE_END);

    let mut out = vec![
        (format!("word={token}"), 1.0),
        (format!("lowercase={}", token.to_lowercase()), 1.0),
        (format!("prefix3={prefix}"), 1.0),
        (format!("suffix3={suffix}"), 1.0),
        (format!("shape={}", word_shape(token)), 1.0),
        (format!("prev_word={prev}"), 1.0),
        (format!("next_word={next}"), 1.0),
    ];
    if let Some(dense) = x.dense() {
        out.extend(
            dense[position]
                .iter()
                .enumerate()
                .map(|(j, &v)| (format!("dense[{j}]"), v)),
        );
    }
    out
}

/// Extracts the sparse attribute vector at `position`. With `allow_new`
/// unknown attributes are registered; otherwise they are dropped.
pub fn extract_features(
    x: &TokenSequence,
    position: usize,
    registry: &mut FeatureRegistry,
    allow_new: bool,
) -> FeatureVector {
    if !allow_new {
        return lookup_features(x, position, registry);
    }
    let mut fv = FeatureVector::default();
    for (name, value) in feature_names(x, position) {
        if value == 0.0 {
            continue;
        }
        let idx = registry.get_or_insert(&name);
        fv.add(idx, value);
    }
    fv
}

/// Read-only variant of [`extract_features`]: unknown attributes are dropped.
pub fn lookup_features(
    x: &TokenSequence,
    position: usize,
    registry: &FeatureRegistry,
) -> FeatureVector {
    let mut fv = FeatureVector::default();
    for (name, value) in feature_names(x, position) {
        if let Some(idx) = registry.get(&name) {
            fv.add(idx, value);
        }
    }
    fv
}
