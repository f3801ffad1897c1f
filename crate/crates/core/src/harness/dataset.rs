use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crf::{LabelSet, TokenSequence};
use crate::error::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Sequence,
    /// Every example is a chain of length one.
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: usize,
    pub input: TokenSequence,
    pub gold: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub label_set: LabelSet,
    pub task_kind: TaskKind,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, label_set: LabelSet) -> Result<Self, HarnessError> {
        if examples.is_empty() {
            return Err(HarnessError::Config("dataset has no examples".into()));
        }
        for ex in &examples {
            if ex.gold.len() != ex.input.len() || ex.gold.iter().any(|&y| y >= label_set.len()) {
                return Err(HarnessError::Config(format!(
                    "example {} has inconsistent gold labels",
                    ex.id
                )));
            }
        }
        let task_kind = if examples.iter().all(|e| e.input.len() == 1) {
            TaskKind::Classification
        } else {
            TaskKind::Sequence
        };
        Ok(Self {
            examples,
            label_set,
            task_kind,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.examples.iter().map(|e| e.input.len()).sum()
    }

    /// Writes the tab-separated format read by [`load_sequence_dataset`].
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (k, ex) in self.examples.iter().enumerate() {
            if k > 0 {
                writeln!(w)?;
            }
            for (i, token) in ex.input.tokens().iter().enumerate() {
                write!(w, "{token}\t{}", self.label_set.name(ex.gold[i]))?;
                if let Some(dense) = ex.input.dense() {
                    for v in &dense[i] {
                        write!(w, "\t{v}")?;
                    }
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .map_err(|e| HarnessError::io(path, e))?;
        fs::write(path, buf).map_err(|e| HarnessError::io(path, e))
    }
}

/// Blank-line separated sentences of `token<TAB>label[<TAB>dense...]`
/// lines. Labels are indexed in first-seen order.
pub fn parse_sequence_dataset(text: &str, source: &str) -> Result<Dataset, HarnessError> {
    let err = |line: usize, message: String| HarnessError::Parse {
        path: source.to_owned(),
        line,
        message,
    };

    let mut labels: Vec<String> = Vec::new();
    let mut examples = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut gold: Vec<usize> = Vec::new();
    let mut dense: Vec<Vec<f64>> = Vec::new();
    let mut start_line = 1;

    let mut flush = |tokens: &mut Vec<String>,
                     gold: &mut Vec<usize>,
                     dense: &mut Vec<Vec<f64>>,
                     line: usize|
     -> Result<(), HarnessError> {
        if tokens.is_empty() {
            return Ok(());
        }
        let mut input =
            TokenSequence::new(std::mem::take(tokens)).map_err(|e| err(line, e.to_string()))?;
        let dense_rows = std::mem::take(dense);
        if dense_rows.iter().any(|r| !r.is_empty()) {
            input = input
                .with_dense(dense_rows)
                .map_err(|e| err(line, format!("inconsistent dense features: {e}")))?;
        }
        examples.push(Example {
            id: examples.len(),
            input,
            gold: std::mem::take(gold),
        });
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut tokens, &mut gold, &mut dense, start_line)?;
            start_line = line_no + 1;
            continue;
        }
        let mut fields = line.split('\t');
        let token = fields.next().unwrap_or_default();
        let label = fields
            .next()
            .ok_or_else(|| err(line_no, "expected token<TAB>label".into()))?;
        if token.is_empty() || label.is_empty() {
            return Err(err(line_no, "empty token or label".into()));
        }
        let features = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(line_no, format!("bad feature value {f:?}")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let label_idx = match labels.iter().position(|l| l == label) {
            Some(i) => i,
            None => {
                labels.push(label.to_owned());
                labels.len() - 1
            }
        };
        tokens.push(token.to_owned());
        gold.push(label_idx);
        dense.push(features);
    }
    flush(&mut tokens, &mut gold, &mut dense, start_line)?;

    if examples.is_empty() {
        return Err(err(0, "no examples".into()));
    }
    let label_set = LabelSet::new(labels).map_err(|e| err(0, e.to_string()))?;
    Dataset::new(examples, label_set)
}

pub fn load_sequence_dataset(path: impl AsRef<Path>) -> Result<Dataset, HarnessError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_sequence_dataset(&text, &path.display().to_string())
}
