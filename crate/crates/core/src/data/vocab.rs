use crate::error::{Error, Result};

/// The fifteen label strings, in output-index order.
pub const CLASS_NAMES: [&str; 15] = [
    "Atelectasis",
    "Cardiomegaly",
    "Consolidation",
    "Edema",
    "Effusion",
    "Emphysema",
    "Fibrosis",
    "Hernia",
    "Infiltration",
    "Mass",
    "Nodule",
    "Pleural_Thickening",
    "Pneumonia",
    "Pneumothorax",
    "No Finding",
];

pub const NUM_CLASSES: usize = CLASS_NAMES.len();

/// Index of "No Finding", which excludes every other label.
pub const NO_FINDING: usize = 14;

/// Fixed mapping between label strings and multi-hot indices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassVocabulary;

impl ClassVocabulary {
    pub fn len(&self) -> usize {
        NUM_CLASSES
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> &'static [&'static str] {
        &CLASS_NAMES
    }

    pub fn name(&self, index: usize) -> &'static str {
        CLASS_NAMES[index]
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        CLASS_NAMES.iter().position(|c| *c == name)
    }

    /// Multi-hot vector for a set of label tokens. `row` only labels errors.
    pub fn encode<'a>(&self, tokens: impl IntoIterator<Item = &'a str>, row: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; NUM_CLASSES];
        for token in tokens {
            let i = self.index(token).ok_or_else(|| Error::UnknownLabel {
                token: token.to_string(),
                row,
            })?;
            out[i] = 1.0;
        }
        check_exclusive(&out, row)?;
        Ok(out)
    }

    /// Label names set in a multi-hot vector, in index order.
    pub fn decode(&self, labels: &[f64]) -> Vec<&'static str> {
        labels
            .iter()
            .zip(CLASS_NAMES)
            .filter(|(v, _)| **v > 0.5)
            .map(|(_, n)| n)
            .collect()
    }
}

/// "No Finding" may not co-occur with a disease label.
pub fn check_exclusive(labels: &[f64], row: usize) -> Result<()> {
    let diseases = labels.iter().enumerate().any(|(i, v)| i != NO_FINDING && *v > 0.5);
    if labels.get(NO_FINDING).is_some_and(|v| *v > 0.5) && diseases {
        return Err(Error::Format(format!("row {row}: `No Finding` combined with a disease label")));
    }
    Ok(())
}
