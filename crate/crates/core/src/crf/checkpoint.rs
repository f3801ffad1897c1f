use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CrfModel, FeatureRegistry, LabelSet};
use crate::error::CrfError;

pub const CHECKPOINT_FORMAT: &str = "otj-crf-v1";

// Floats are stored as their IEEE-754 bit patterns so a save/load cycle is
// exact.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    labels: LabelSet,
    features: Vec<String>,
    weights: Vec<u64>,
    accumulators: Vec<u64>,
}

impl CrfModel {
    pub fn write_checkpoint<W: Write>(&self, writer: W) -> Result<(), CrfError> {
        let record = Checkpoint {
            format: CHECKPOINT_FORMAT.to_owned(),
            labels: self.label_set.clone(),
            features: self.registry.names().to_vec(),
            weights: self.weights.iter().map(|w| w.to_bits()).collect(),
            accumulators: self.accumulators.iter().map(|a| a.to_bits()).collect(),
        };
        serde_json::to_writer(writer, &record).map_err(|e| CrfError::Checkpoint(e.to_string()))
    }

    pub fn read_checkpoint<R: Read>(reader: R) -> Result<Self, CrfError> {
        let record: Checkpoint =
            serde_json::from_reader(reader).map_err(|e| CrfError::Checkpoint(e.to_string()))?;
        if record.format != CHECKPOINT_FORMAT {
            return Err(CrfError::Checkpoint(format!(
                "unsupported format tag {:?}",
                record.format
            )));
        }
        CrfModel::from_parts(
            record.labels,
            FeatureRegistry::from_names(record.features)?,
            record.weights.into_iter().map(f64::from_bits).collect(),
            record
                .accumulators
                .into_iter()
                .map(f64::from_bits)
                .collect(),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CrfError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| CrfError::Io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        self.write_checkpoint(&mut w)?;
        w.flush()
            .map_err(|e| CrfError::Io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CrfError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| CrfError::Io(path.display().to_string(), e))?;
        Self::read_checkpoint(BufReader::new(file))
    }
}
