//! Core records shared by training and evaluation: embedding batches,
//! classifier weights, synthetic batches, trial lists, corpus manifests.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

/// A mini-batch of per-utterance embeddings with integer class labels.
#[derive(Clone, Debug)]
pub struct EmbeddingBatch {
    /// [B x d]
    pub embeddings: Tensor,
    pub labels: Vec<usize>,
    pub is_synthetic: bool,
}

impl EmbeddingBatch {
    pub fn validate(&self) -> Result<()> {
        if self.embeddings.rows == 0 {
            return Err(Error::Degenerate("empty batch".into()));
        }
        if self.labels.len() != self.embeddings.rows {
            return Err(Error::Dimension {
                expected: self.embeddings.rows,
                got: self.labels.len(),
            });
        }
        if !self.embeddings.all_finite() {
            return Err(Error::Degenerate("non-finite embedding entry".into()));
        }
        Ok(())
    }
}

/// AM-Softmax weight matrix W [d x C]; columns are class anchors. Columns are
/// L2-normalized only inside cosine-logit computation, never in storage.
#[derive(Clone, Debug)]
pub struct ClassifierWeights {
    pub w: Tensor,
}

impl ClassifierWeights {
    pub fn class_count(&self) -> usize {
        self.w.cols
    }

    pub fn dim(&self) -> usize {
        self.w.rows
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.w.rows).map(|i| self.w.at(i, j)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.w.all_finite() {
            return Err(Error::Degenerate("non-finite classifier weight".into()));
        }
        Ok(())
    }
}

/// Per-batch synthetic classes: mixed embeddings, mixed weight columns, and
/// fresh labels disjoint from the real label range.
#[derive(Clone, Debug)]
pub struct SyntheticBatch {
    /// [B' x d]
    pub embeddings: Tensor,
    /// values >= C
    pub labels: Vec<usize>,
    /// [d x B'] mixed weight columns, one per synthetic row
    pub weights: Tensor,
    /// unordered source-label pair per row, stored (min, max)
    pub pair_map: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trial {
    pub is_target: bool,
    pub enroll_id: String,
    pub test_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

impl TrialList {
    pub fn validate(&self) -> Result<()> {
        let targets = self.trials.iter().filter(|t| t.is_target).count();
        if targets == 0 || targets == self.trials.len() {
            return Err(Error::DegenerateTrials);
        }
        Ok(())
    }

    /// One trial per line: `label enroll_id test_id`, label 1 = target.
    pub fn from_string(text: &str) -> Result<TrialList> {
        let mut trials = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected `label enroll test`, got `{raw}`"),
                });
            }
            let is_target = match parts[0] {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("trial label must be 0 or 1, got `{other}`"),
                    })
                }
            };
            trials.push(Trial {
                is_target,
                enroll_id: parts[1].to_string(),
                test_id: parts[2].to_string(),
            });
        }
        if trials.is_empty() {
            return Err(Error::DegenerateTrials);
        }
        Ok(TrialList { trials })
    }

    pub fn to_string(&self) -> String {
        let mut out = String::new();
        for t in &self.trials {
            out.push_str(&format!(
                "{} {} {}\n",
                if t.is_target { 1 } else { 0 },
                t.enroll_id,
                t.test_id
            ));
        }
        out
    }

    pub fn load(path: &Path) -> Result<TrialList> {
        TrialList::from_string(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string())?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub speaker_label: String,
    pub source: String,
}

/// Corpus manifest: one utterance per line, `utterance_id speaker_label source`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn from_string(text: &str) -> Result<Manifest> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected `utterance_id speaker_label source`, got `{raw}`"),
                });
            }
            entries.push(ManifestEntry {
                utterance_id: parts[0].to_string(),
                speaker_label: parts[1].to_string(),
                source: parts[2].to_string(),
            });
        }
        Ok(Manifest { entries })
    }

    pub fn to_string(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{} {} {}\n",
                e.utterance_id, e.speaker_label, e.source
            ));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        Manifest::from_string(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string())?;
        Ok(())
    }

    /// Distinct speaker labels in first-appearance order mapped to 0..C-1.
    pub fn label_map(&self) -> Vec<(String, usize)> {
        let mut map: Vec<(String, usize)> = Vec::new();
        for e in &self.entries {
            if !map.iter().any(|(l, _)| l == &e.speaker_label) {
                let idx = map.len();
                map.push((e.speaker_label.clone(), idx));
            }
        }
        map
    }
}
