use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split `{other}`"))),
        }
    }
}

/// Fractions of the corpus assigned to validation and test; the rest trains.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { val: 0.1, test: 0.2 }
    }
}

/// Uniform value in `[0,1)` from the SHA-256 digest of `image_id`.
fn hash_unit(image_id: &str) -> f64 {
    let digest = Sha256::digest(image_id.as_bytes());
    let v = u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"));
    (v >> 11) as f64 / (1u64 << 53) as f64
}

/// Deterministic split of one image by its id alone.
pub fn assign_split(image_id: &str, fractions: SplitFractions) -> Split {
    let u = hash_unit(image_id);
    if u < fractions.test {
        Split::Test
    } else if u < fractions.test + fractions.val {
        Split::Val
    } else {
        Split::Train
    }
}

/// `image_id<TAB>split` lines, in the given order.
pub fn write_manifest(path: &Path, assignments: &[(String, Split)]) -> Result<()> {
    let mut text = String::new();
    for (id, split) in assignments {
        text.push_str(id);
        text.push('\t');
        text.push_str(split.name());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<(String, Split)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let (id, split) = line.split_once('\t').ok_or_else(|| Error::Decode {
                path: path.to_path_buf(),
                message: format!("line {}: expected `image_id<TAB>split`", i + 1),
            })?;
            Ok((id.to_string(), split.trim().parse()?))
        })
        .collect()
}
