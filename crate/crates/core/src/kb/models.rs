use std::path::Path;

use ndarray::Array2;

use super::{aggregate, io, InitStrategy, KbError};
use crate::net::{blob, QNetwork};

pub const ARCHIVE_MAGIC: [u8; 4] = *b"DQMA";
pub const ARCHIVE_VERSION: u32 = 1;

/// Trained source-task networks, kept only for the model-source ablation
/// and the distillation baseline.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelArchive {
    nets: Vec<QNetwork>,
}

impl ModelArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, net: QNetwork) -> Result<(), KbError> {
        if let Some(first) = self.nets.first() {
            if !first.same_architecture(&net) {
                return Err(KbError::Archive(format!(
                    "network dims {:?} differ from archive dims {:?}",
                    net.dims(),
                    first.dims()
                )));
            }
        }
        self.nets.push(net);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    pub fn nets(&self) -> &[QNetwork] {
        &self.nets
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.nets.first().map(QNetwork::output_dim)
    }

    /// Model outputs for a batch of states, one `batch × actions` matrix per
    /// archived network.
    pub fn forward_all(&self, states: &Array2<f64>) -> Result<Vec<Array2<f64>>, KbError> {
        self.nets
            .iter()
            .map(|n| n.forward_batch(states).map_err(KbError::from))
            .collect()
    }

    /// Per-action aggregate of the archived networks' outputs for a batch.
    pub fn aggregate_batch(&self, states: &Array2<f64>, strategy: &InitStrategy) -> Result<Array2<f64>, KbError> {
        if self.nets.is_empty() {
            return Err(KbError::Archive("empty model archive".into()));
        }
        let outputs = self.forward_all(states)?;
        let (rows, cols) = outputs[0].dim();
        let mut out = Array2::zeros((rows, cols));
        let mut values = vec![0.0; outputs.len()];
        for i in 0..rows {
            for a in 0..cols {
                for (k, o) in outputs.iter().enumerate() {
                    values[k] = o[[i, a]];
                }
                out[[i, a]] = aggregate(&values, strategy);
            }
        }
        Ok(out)
    }

    /// Elementwise mean of the archived networks' outputs (the averaged
    /// teacher of the distillation baseline).
    pub fn mean_output(&self, states: &Array2<f64>) -> Result<Array2<f64>, KbError> {
        if self.nets.is_empty() {
            return Err(KbError::Archive("empty model archive".into()));
        }
        let outputs = self.forward_all(states)?;
        let mut sum = Array2::zeros(outputs[0].raw_dim());
        for o in &outputs {
            sum += o;
        }
        Ok(sum / outputs.len() as f64)
    }
}

/// Q∅(s, ·) aggregated over archived source networks.
pub fn q_init_from_models(archive: &ModelArchive, strategy: &InitStrategy, state: &[f64]) -> Result<Vec<f64>, KbError> {
    if archive.is_empty() {
        return Err(KbError::Archive("empty model archive".into()));
    }
    let outputs = archive
        .nets()
        .iter()
        .map(|n| n.forward(state))
        .collect::<Result<Vec<_>, _>>()?;
    let actions = outputs[0].len();
    Ok((0..actions)
        .map(|a| {
            let values: Vec<f64> = outputs.iter().map(|o| o[a]).collect();
            aggregate(&values, strategy)
        })
        .collect())
}

/// Writes `DQMA`, u32 version, u32 count, the network blobs, CRC32.
pub fn archive_save(archive: &ModelArchive, path: &Path) -> Result<(), KbError> {
    let mut out = Vec::new();
    out.extend(ARCHIVE_MAGIC);
    out.extend(ARCHIVE_VERSION.to_le_bytes());
    out.extend((archive.len() as u32).to_le_bytes());
    for net in archive.nets() {
        out.extend(blob::to_bytes(net));
    }
    io::write_with_crc(path, out)
}

pub fn archive_load(path: &Path) -> Result<ModelArchive, KbError> {
    let body = io::read_checked(path, ARCHIVE_MAGIC, ARCHIVE_VERSION)?;
    let corrupt = |reason: String| KbError::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let count_bytes = body.get(..4).ok_or_else(|| corrupt("missing model count".into()))?;
    let count = u32::from_le_bytes(count_bytes.try_into().unwrap()) as usize;
    let mut pos = 4;
    let mut archive = ModelArchive::new();
    for i in 0..count {
        let (net, used) = blob::from_bytes(&body[pos..]).map_err(|e| corrupt(format!("model {i}: {e}")))?;
        pos += used;
        archive.push(net)?;
    }
    if pos != body.len() {
        return Err(corrupt(format!("{} trailing bytes", body.len() - pos)));
    }
    Ok(archive)
}
