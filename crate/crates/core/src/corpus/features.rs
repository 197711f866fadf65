//! Precomputed per-token contextual feature vectors.
//!
//! Binary container: records of `u32 sentence_index`, `u32 token_count`,
//! then `token_count × dim` little-endian `f32`s, in any order, with a
//! JSON sidecar at `<path>.json` holding `{"dim": D, "sentences": N}`.
//!
//! Text container (`.txt`): one line of whitespace-separated floats per
//! token, a blank line after each sentence; sentence keys are positional
//! and the dimension is taken from the first vector.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CorpusError, Sentence};
use crate::autodiff::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    dim: usize,
    /// Flat `tokens × dim` buffer per sentence.
    sentences: Vec<Vec<f32>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    dim: usize,
    sentences: usize,
    #[serde(default = "default_dtype")]
    dtype: String,
}

fn default_dtype() -> String {
    "f32".into()
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

impl FeatureFile {
    pub fn new(dim: usize, sentences: Vec<Vec<f32>>) -> Result<Self, CorpusError> {
        if dim == 0 {
            return Err(CorpusError::Feature("dimension must be positive".into()));
        }
        if let Some(i) = sentences.iter().position(|s| s.len() % dim != 0) {
            return Err(CorpusError::Feature(format!(
                "sentence {i} has {} values, not a multiple of {dim}",
                sentences[i].len()
            )));
        }
        Ok(FeatureFile { dim, sentences })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self, sentence: usize) -> Option<usize> {
        self.sentences.get(sentence).map(|s| s.len() / self.dim)
    }

    /// Features of one sentence as a `[tokens, dim]` tensor.
    pub fn tensor(&self, sentence: usize) -> Result<Tensor, CorpusError> {
        let s = self
            .sentences
            .get(sentence)
            .ok_or(CorpusError::MissingSentence(sentence))?;
        let data = s.iter().map(|&x| f64::from(x)).collect();
        Ok(Tensor::new(&[s.len() / self.dim, self.dim], data).expect("multiple of dim"))
    }

    /// Checks the 1:1 sentence and token correspondence with a corpus.
    pub fn check_alignment<'a>(&self, corpus: impl IntoIterator<Item = &'a Sentence>) -> Result<(), CorpusError> {
        let mut count = 0;
        for (i, sent) in corpus.into_iter().enumerate() {
            let found = self.token_count(i).ok_or(CorpusError::MissingSentence(i))?;
            if found != sent.len() {
                return Err(CorpusError::Alignment {
                    sentence: i,
                    expected: sent.len(),
                    found,
                });
            }
            count += 1;
        }
        if count != self.len() {
            return Err(CorpusError::Feature(format!(
                "{} feature records for {count} sentences",
                self.len()
            )));
        }
        Ok(())
    }
}

pub fn load_features(path: &Path) -> Result<FeatureFile, CorpusError> {
    if path.extension().is_some_and(|e| e == "txt") {
        load_text(path)
    } else {
        load_binary(path)
    }
}

fn load_text(path: &Path) -> Result<FeatureFile, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let mut dim = None;
    let mut sentences = Vec::new();
    let mut current: Vec<f32> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        let v = line
            .split_whitespace()
            .map(str::parse::<f32>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CorpusError::Feature(format!("line {}: {e}", i + 1)))?;
        let d = *dim.get_or_insert(v.len());
        if v.len() != d {
            return Err(CorpusError::Feature(format!(
                "line {}: vector of length {} but dimension is {d}",
                i + 1,
                v.len()
            )));
        }
        current.extend(v);
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    FeatureFile::new(dim.unwrap_or(1), sentences)
}

fn load_binary(path: &Path) -> Result<FeatureFile, CorpusError> {
    let side_path = sidecar_path(path);
    let side_text = std::fs::read_to_string(&side_path).map_err(|e| CorpusError::io(&side_path, e))?;
    let side: Sidecar = serde_json::from_str(&side_text).map_err(|e| CorpusError::Feature(format!("sidecar: {e}")))?;
    if side.dtype != "f32" {
        return Err(CorpusError::Feature(format!("unsupported dtype {}", side.dtype)));
    }
    let bytes = std::fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    let mut slots: Vec<Option<Vec<f32>>> = vec![None; side.sentences];
    let mut pos = 0;
    let read_u32 = |pos: &mut usize| -> Result<u32, CorpusError> {
        let b = bytes
            .get(*pos..*pos + 4)
            .ok_or_else(|| CorpusError::Feature("truncated record header".into()))?;
        *pos += 4;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    };
    while pos < bytes.len() {
        let idx = read_u32(&mut pos)? as usize;
        let n = read_u32(&mut pos)? as usize;
        let len = n * side.dim * 4;
        let body = bytes
            .get(pos..pos + len)
            .ok_or_else(|| CorpusError::Feature(format!("truncated record for sentence {idx}")))?;
        pos += len;
        let slot = slots
            .get_mut(idx)
            .ok_or_else(|| CorpusError::Feature(format!("sentence key {idx} beyond declared {}", side.sentences)))?;
        if slot.is_some() {
            return Err(CorpusError::Feature(format!("duplicate sentence key {idx}")));
        }
        *slot = Some(
            body.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    let sentences = slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or(CorpusError::MissingSentence(i)))
        .collect::<Result<Vec<_>, _>>()?;
    FeatureFile::new(side.dim, sentences)
}

/// Writes the binary container and its sidecar.
pub fn write_features_binary(path: &Path, features: &FeatureFile) -> Result<(), CorpusError> {
    let mut bytes = Vec::new();
    for (i, s) in features.sentences.iter().enumerate() {
        bytes.extend((i as u32).to_le_bytes());
        bytes.extend(((s.len() / features.dim) as u32).to_le_bytes());
        for x in s {
            bytes.extend(x.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| CorpusError::io(path, e))?;
    let side = Sidecar {
        dim: features.dim,
        sentences: features.len(),
        dtype: "f32".into(),
    };
    let side_path = sidecar_path(path);
    std::fs::write(&side_path, serde_json::to_string(&side).unwrap()).map_err(|e| CorpusError::io(&side_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Token;

    fn sentence(n: usize) -> Sentence {
        Sentence {
            tokens: (1..=n).map(|i| Token::new(i, "w", "w")).collect(),
            predicates: vec![],
        }
    }

    #[test]
    fn binary_round_trip_and_alignment() {
        let ff = FeatureFile::new(3, vec![vec![0.5; 15], vec![1.0; 6]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        write_features_binary(&p, &ff).unwrap();
        let back = load_features(&p).unwrap();
        assert_eq!(back, ff);
        assert_eq!(back.tensor(0).unwrap().shape(), &[5, 3]);
        back.check_alignment([&sentence(5), &sentence(2)]).unwrap();
        assert!(matches!(
            back.check_alignment([&sentence(5), &sentence(3)]),
            Err(CorpusError::Alignment { sentence: 1, .. })
        ));
    }

    #[test]
    fn missing_sentence_key() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let mut bytes = Vec::new();
        bytes.extend(0u32.to_le_bytes());
        bytes.extend(1u32.to_le_bytes());
        bytes.extend(1.0f32.to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        std::fs::write(sidecar_path(&p), r#"{"dim":1,"sentences":2}"#).unwrap();
        assert!(matches!(load_features(&p), Err(CorpusError::MissingSentence(1))));
    }

    #[test]
    fn text_dimension_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        std::fs::write(&p, "1 2 3\n4 5 6\n\n7 8\n").unwrap();
        assert!(load_features(&p).is_err());
        std::fs::write(&p, "1 2 3\n4 5 6\n\n7 8 9\n").unwrap();
        let f = load_features(&p).unwrap();
        assert_eq!((f.dim(), f.len(), f.token_count(0)), (3, 2, Some(2)));
    }
}
