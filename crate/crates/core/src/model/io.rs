use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{center_embeddings_with, ModelParams, Representation};
use crate::corpus::{ConditionManifest, Topology, Vocabulary};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8; 4] = b"CWEV";
pub const MODEL_VERSION: u32 = 1;

/// Vocabulary and manifest files stored next to a model file:
/// `m.bin` → `m.vocab.tsv`, `m.manifest.json`.
pub fn sidecar_paths(model: &Path) -> (PathBuf, PathBuf) {
    (
        model.with_extension("vocab.tsv"),
        model.with_extension("manifest.json"),
    )
}

/// Parameters together with the vocabulary and manifest they were trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedModel<T> {
    pub params: ModelParams<T>,
    pub vocab: Vocabulary,
    pub manifest: ConditionManifest,
}

impl<T: Scalar> SavedModel<T> {
    pub fn new(
        params: ModelParams<T>,
        vocab: Vocabulary,
        manifest: ConditionManifest,
    ) -> Result<Self> {
        if params.n_words != vocab.len() || params.n_conditions != manifest.len() {
            return Err(Error::Format(format!(
                "model shape (|W|={}, C={}) does not match vocabulary ({}) and manifest ({})",
                params.n_words,
                params.n_conditions,
                vocab.len(),
                manifest.len()
            )));
        }
        Ok(SavedModel {
            params,
            vocab,
            manifest,
        })
    }

    /// Binary parameter file; tensors are narrowed to `f32`.
    pub fn write_params<W: Write>(&self, mut w: W) -> Result<()> {
        let p = &self.params;
        w.write_all(MODEL_MAGIC)?;
        w.write_u32::<LittleEndian>(MODEL_VERSION)?;
        w.write_u32::<LittleEndian>(p.n_words as u32)?;
        w.write_u32::<LittleEndian>(p.n_conditions as u32)?;
        w.write_u32::<LittleEndian>(p.dim as u32)?;
        w.write_u8(self.manifest.topology.to_u8())?;
        for (_, tensor) in p.tensors() {
            for &x in tensor {
                w.write_f32::<LittleEndian>(x.as_f64() as f32)?;
            }
        }
        Ok(())
    }

    /// Reads the binary parameter file, returning the stored topology too.
    pub fn read_params<R: Read>(mut r: R) -> Result<(ModelParams<T>, Topology)> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("not a model file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {version}"
            )));
        }
        let n_words = r.read_u32::<LittleEndian>()? as usize;
        let n_conditions = r.read_u32::<LittleEndian>()? as usize;
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let topology = Topology::from_u8(r.read_u8()?)?;
        let mut p = ModelParams::zeros(n_words, n_conditions, dim)?;
        for (_, tensor) in p.tensors_mut() {
            for x in tensor.iter_mut() {
                *x = T::of(r.read_f32::<LittleEndian>()? as f64);
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after model tensors".into()));
        }
        Ok((p, topology))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_params(&mut w)?;
        w.flush()?;
        let (vocab_path, manifest_path) = sidecar_paths(path);
        self.vocab.save(&vocab_path)?;
        self.manifest.save(&manifest_path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, topology) = Self::read_params(BufReader::new(fs::File::open(path)?))?;
        let (vocab_path, manifest_path) = sidecar_paths(path);
        let vocab = Vocabulary::load(&vocab_path)?;
        let manifest = ConditionManifest::load(&manifest_path)?;
        if manifest.topology != topology {
            return Err(Error::Format(format!(
                "manifest topology {:?} disagrees with model header {:?}",
                manifest.topology, topology
            )));
        }
        Self::new(params, vocab, manifest)
    }
}

/// Writes `word<TAB>condition<TAB>x1 x2 ... xm` lines of centered
/// embeddings, condition-major.
pub fn write_text_export<T: Scalar, W: Write>(
    model: &SavedModel<T>,
    repr: Representation,
    mut w: W,
) -> Result<()> {
    let m = model.params.dim;
    for (c, cond) in model.manifest.conditions.iter().enumerate() {
        let centered = center_embeddings_with(&model.params, c, repr)?;
        for (word, row) in model.vocab.words().iter().zip(centered.chunks_exact(m)) {
            write!(w, "{word}\t{cond}\t")?;
            for (k, x) in row.iter().enumerate() {
                if k > 0 {
                    w.write_all(b" ")?;
                }
                write!(w, "{x}")?;
            }
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Externally produced per-condition embeddings in the text interop format.
///
/// Words and conditions are numbered in order of first appearance. A word
/// need not be present in every condition.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbeddings<T> {
    pub words: Vec<String>,
    pub conditions: Vec<String>,
    pub dim: usize,
    /// Per condition: `|W| × m` row-major, zero where absent.
    pub matrices: Vec<Vec<T>>,
    /// Per condition: whether each word has a vector.
    pub present: Vec<Vec<bool>>,
}

pub fn read_text_embeddings<T: Scalar>(path: &Path) -> Result<TextEmbeddings<T>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut word_ids: HashMap<String, usize> = HashMap::new();
    let mut cond_ids: HashMap<String, usize> = HashMap::new();
    let mut words = Vec::new();
    let mut conditions = Vec::new();
    let mut rows: Vec<(usize, usize, Vec<T>)> = Vec::new();
    let mut dim = None;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let mut fields = line.splitn(3, '\t');
        let (Some(word), Some(cond), Some(values)) = (fields.next(), fields.next(), fields.next())
        else {
            return Err(err("expected word<TAB>condition<TAB>values".into()));
        };
        let vector: Vec<T> = values
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>()
                    .map(T::of)
                    .map_err(|_| err(format!("bad number `{s}`")))
            })
            .collect::<Result<_>>()?;
        match dim {
            None if vector.is_empty() => return Err(err("empty vector".into())),
            None => dim = Some(vector.len()),
            Some(d) if d != vector.len() => {
                return Err(err(format!(
                    "vector has {} values, expected {d}",
                    vector.len()
                )))
            }
            _ => {}
        }
        let w = *word_ids.entry(word.to_string()).or_insert_with(|| {
            words.push(word.to_string());
            words.len() - 1
        });
        let c = *cond_ids.entry(cond.to_string()).or_insert_with(|| {
            conditions.push(cond.to_string());
            conditions.len() - 1
        });
        rows.push((w, c, vector));
    }
    let dim = dim.ok_or_else(|| Error::Format(format!("{}: no embeddings", path.display())))?;
    let mut matrices = vec![vec![T::zero(); words.len() * dim]; conditions.len()];
    let mut present = vec![vec![false; words.len()]; conditions.len()];
    for (w, c, vector) in rows {
        if std::mem::replace(&mut present[c][w], true) {
            return Err(Error::Format(format!(
                "duplicate embedding for `{}` in condition `{}`",
                words[w], conditions[c]
            )));
        }
        matrices[c][w * dim..(w + 1) * dim].copy_from_slice(&vector);
    }
    Ok(TextEmbeddings {
        words,
        conditions,
        dim,
        matrices,
        present,
    })
}
