//! Sparse per-condition co-occurrence tensor.

use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

pub const SHARD_MAGIC: &[u8; 4] = b"CO0C";
pub const SHARD_VERSION: u32 = 1;
pub const DEFAULT_WINDOW: usize = 5;

/// One nonzero cell `X[i, j, c]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoocEntry {
    pub i: u32,
    pub j: u32,
    pub c: u16,
    pub x: f64,
}

/// Nonzero co-occurrence cells, sorted by `(c, i, j)`, plus per-condition
/// totals.
#[derive(Clone, Debug, PartialEq)]
pub struct CoocTensor {
    n_words: usize,
    n_conditions: usize,
    window: usize,
    entries: Vec<CoocEntry>,
    totals: Vec<f64>,
}

impl CoocTensor {
    /// Builds a tensor from arbitrary entries. Duplicate cells are summed and
    /// non-positive values rejected.
    pub fn from_entries(
        n_words: usize,
        n_conditions: usize,
        window: usize,
        entries: impl IntoIterator<Item = CoocEntry>,
    ) -> Result<Self> {
        let mut cells: HashMap<(u16, u32, u32), f64> = HashMap::new();
        for e in entries {
            if e.i as usize >= n_words || e.j as usize >= n_words {
                return Err(Error::OutOfRange {
                    what: "word id",
                    index: e.i.max(e.j) as usize,
                    size: n_words,
                });
            }
            if e.c as usize >= n_conditions {
                return Err(Error::OutOfRange {
                    what: "condition",
                    index: e.c as usize,
                    size: n_conditions,
                });
            }
            if !(e.x > 0.0 && e.x.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "co-occurrence value must be positive and finite, got {}",
                    e.x
                )));
            }
            *cells.entry((e.c, e.i, e.j)).or_insert(0.0) += e.x;
        }
        let mut entries: Vec<CoocEntry> = cells
            .into_iter()
            .map(|((c, i, j), x)| CoocEntry { i, j, c, x })
            .collect();
        entries.sort_unstable_by_key(|e| (e.c, e.i, e.j));
        Ok(Self::from_sorted(n_words, n_conditions, window, entries))
    }

    fn from_sorted(
        n_words: usize,
        n_conditions: usize,
        window: usize,
        entries: Vec<CoocEntry>,
    ) -> Self {
        let mut totals = vec![0.0; n_conditions];
        for e in &entries {
            totals[e.c as usize] += e.x;
        }
        CoocTensor {
            n_words,
            n_conditions,
            window,
            entries,
            totals,
        }
    }

    pub fn n_words(&self) -> usize {
        self.n_words
    }

    pub fn n_conditions(&self) -> usize {
        self.n_conditions
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn entries(&self) -> &[CoocEntry] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn totals(&self) -> &[f64] {
        &self.totals
    }

    /// Number of nonzero entries per condition.
    pub fn nnz_by_condition(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_conditions];
        for e in &self.entries {
            out[e.c as usize] += 1;
        }
        out
    }

    pub fn get(&self, i: u32, j: u32, c: u16) -> Option<f64> {
        self.entries
            .binary_search_by_key(&(c, i, j), |e| (e.c, e.i, e.j))
            .ok()
            .map(|k| self.entries[k].x)
    }

    /// Writes the `i<TAB>j<TAB>c<TAB>x` debug export.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.entries {
            writeln!(w, "{}\t{}\t{}\t{}", e.i, e.j, e.c, e.x)?;
        }
        Ok(())
    }

    /// Writes entries of a subset of conditions as one binary shard.
    pub fn write_shard<W: Write>(&self, mut w: W, conditions: Option<usize>) -> Result<()> {
        w.write_all(SHARD_MAGIC)?;
        w.write_u32::<LittleEndian>(SHARD_VERSION)?;
        w.write_u32::<LittleEndian>(self.n_words as u32)?;
        w.write_u32::<LittleEndian>(self.n_conditions as u32)?;
        w.write_u32::<LittleEndian>(self.window as u32)?;
        for e in &self.entries {
            if conditions.is_some_and(|c| c != e.c as usize) {
                continue;
            }
            w.write_u32::<LittleEndian>(e.i)?;
            w.write_u32::<LittleEndian>(e.j)?;
            w.write_u16::<LittleEndian>(e.c)?;
            w.write_f64::<LittleEndian>(e.x)?;
        }
        Ok(())
    }

    pub fn read_shard<R: Read>(r: R) -> Result<Self> {
        Self::read_shards(std::iter::once(r))
    }

    /// Merges shards that share a header.
    pub fn read_shards<R: Read>(readers: impl IntoIterator<Item = R>) -> Result<Self> {
        let mut header: Option<(usize, usize, usize)> = None;
        let mut entries = Vec::new();
        for mut r in readers {
            let mut magic = [0u8; 4];
            r.read_exact(&mut magic)?;
            if &magic != SHARD_MAGIC {
                return Err(Error::Format("not a co-occurrence shard".into()));
            }
            let version = r.read_u32::<LittleEndian>()?;
            if version != SHARD_VERSION {
                return Err(Error::Format(format!(
                    "unsupported shard version {version}"
                )));
            }
            let h = (
                r.read_u32::<LittleEndian>()? as usize,
                r.read_u32::<LittleEndian>()? as usize,
                r.read_u32::<LittleEndian>()? as usize,
            );
            match header {
                None => header = Some(h),
                Some(prev) if prev != h => {
                    return Err(Error::Format(format!(
                        "shard header mismatch: {prev:?} vs {h:?}"
                    )))
                }
                _ => {}
            }
            loop {
                let i = match r.read_u32::<LittleEndian>() {
                    Ok(i) => i,
                    Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                    Err(e) => return Err(e.into()),
                };
                let j = r.read_u32::<LittleEndian>()?;
                let c = r.read_u16::<LittleEndian>()?;
                let x = r.read_f64::<LittleEndian>()?;
                entries.push(CoocEntry { i, j, c, x });
            }
        }
        let (n_words, n_conditions, window) =
            header.ok_or_else(|| Error::Format("no shards".into()))?;
        Self::from_entries(n_words, n_conditions, window, entries)
    }

    /// Writes one shard per condition, `cooc-<c>.bin`, into `dir`.
    pub fn save_shards(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut paths = Vec::with_capacity(self.n_conditions);
        for c in 0..self.n_conditions {
            let path = dir.join(format!("cooc-{c:03}.bin"));
            let mut w = BufWriter::new(fs::File::create(&path)?);
            self.write_shard(&mut w, Some(c))?;
            w.flush()?;
            paths.push(path);
        }
        Ok(paths)
    }

    /// Loads a single shard file, or every `*.bin` in a directory.
    pub fn load(path: &Path) -> Result<Self> {
        let files = if path.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "bin"))
                .collect();
            files.sort();
            files
        } else {
            vec![path.to_path_buf()]
        };
        let readers = files
            .iter()
            .map(|p| Ok(BufReader::new(fs::File::open(p)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::read_shards(readers)
    }
}

/// Counts ordered in-window pairs per condition.
///
/// Out-of-vocabulary tokens keep their positions but contribute no counts.
pub fn count_cooccurrences(
    streams: &[Vec<String>],
    vocab: &Vocabulary,
    window: usize,
) -> Result<CoocTensor> {
    if window < 1 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    let per_condition: Vec<Vec<CoocEntry>> = streams
        .par_iter()
        .enumerate()
        .map(|(c, stream)| {
            let ids: Vec<Option<u32>> = stream
                .iter()
                .map(|t| vocab.id(t).map(|i| i as u32))
                .collect();
            let mut cells: HashMap<(u32, u32), u64> = HashMap::new();
            for (p, left) in ids.iter().enumerate() {
                let Some(left) = *left else { continue };
                for right in ids.iter().skip(p + 1).take(window).flatten() {
                    *cells.entry((left, *right)).or_insert(0) += 1;
                    *cells.entry((*right, left)).or_insert(0) += 1;
                }
            }
            let mut out: Vec<CoocEntry> = cells
                .into_iter()
                .map(|((i, j), n)| CoocEntry {
                    i,
                    j,
                    c: c as u16,
                    x: n as f64,
                })
                .collect();
            out.sort_unstable_by_key(|e| (e.i, e.j));
            out
        })
        .collect();
    Ok(CoocTensor::from_sorted(
        vocab.len(),
        streams.len(),
        window,
        per_condition.into_iter().flatten().collect(),
    ))
}

/// Rescales every condition to the mean of the raw totals.
pub fn scale_counts(raw: &CoocTensor) -> Result<CoocTensor> {
    let labels: Vec<String> = (0..raw.n_conditions).map(|c| format!("#{c}")).collect();
    scale_counts_labeled(raw, &labels)
}

/// As [`scale_counts`], naming conditions by `labels` in errors.
pub fn scale_counts_labeled(raw: &CoocTensor, labels: &[String]) -> Result<CoocTensor> {
    if let Some(c) = raw.totals.iter().position(|&t| t <= 0.0) {
        let name = labels.get(c).cloned().unwrap_or_else(|| format!("#{c}"));
        return Err(Error::ZeroTotal(name));
    }
    let target = raw.totals.iter().sum::<f64>() / raw.n_conditions as f64;
    let factors: Vec<f64> = raw.totals.iter().map(|&t| target / t).collect();
    let entries = raw
        .entries
        .iter()
        .map(|e| CoocEntry {
            x: e.x * factors[e.c as usize],
            ..*e
        })
        .collect();
    Ok(CoocTensor::from_sorted(
        raw.n_words,
        raw.n_conditions,
        raw.window,
        entries,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    fn abc() -> (Vec<Vec<String>>, Vocabulary) {
        let streams = vec![toks(&["a", "b", "c"])];
        let vocab = build_vocabulary(&streams, 1).unwrap();
        (streams, vocab)
    }

    fn cell(t: &CoocTensor, v: &Vocabulary, a: &str, b: &str) -> Option<f64> {
        t.get(v.id(a).unwrap() as u32, v.id(b).unwrap() as u32, 0)
    }

    #[test]
    fn window_one_counts_neighbors() {
        let (s, v) = abc();
        let t = count_cooccurrences(&s, &v, 1).unwrap();
        assert_eq!(t.nnz(), 4);
        for (a, b) in [("a", "b"), ("b", "a"), ("b", "c"), ("c", "b")] {
            assert_eq!(cell(&t, &v, a, b), Some(1.0));
        }
        assert_eq!(cell(&t, &v, "a", "c"), None);
    }

    #[test]
    fn window_two_adds_skip_pairs() {
        let (s, v) = abc();
        let t = count_cooccurrences(&s, &v, 2).unwrap();
        assert_eq!(t.nnz(), 6);
        assert_eq!(cell(&t, &v, "a", "c"), Some(1.0));
        assert_eq!(cell(&t, &v, "c", "a"), Some(1.0));
    }

    #[test]
    fn oov_tokens_break_adjacency() {
        let streams = vec![toks(&["a", "zz", "b", "a", "b"])];
        let vocab = Vocabulary::from_entries(vec![("a".into(), vec![2]), ("b".into(), vec![2])], 2)
            .unwrap();
        let t = count_cooccurrences(&streams, &vocab, 1).unwrap();
        // pairs (b,a) and (a,b) at positions 2-3 and 3-4 only
        assert_eq!(t.get(0, 1, 0), Some(2.0));
        assert_eq!(t.get(1, 0, 0), Some(2.0));
        assert_eq!(t.nnz(), 2);
    }

    #[test]
    fn empty_stream_gives_empty_tensor() {
        let vocab = Vocabulary::from_entries(vec![("a".into(), vec![1, 0])], 1).unwrap();
        let t = count_cooccurrences(&[vec![], vec![]], &vocab, 3).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.totals(), [0.0, 0.0]);
        assert!(count_cooccurrences(&[vec![]], &vocab, 0).is_err());
    }

    fn two_condition_tensor(t1: f64, t2: f64) -> CoocTensor {
        CoocTensor::from_entries(
            2,
            2,
            5,
            vec![
                CoocEntry {
                    i: 0,
                    j: 1,
                    c: 0,
                    x: 4.0,
                },
                CoocEntry {
                    i: 1,
                    j: 0,
                    c: 0,
                    x: t1 - 4.0,
                },
                CoocEntry {
                    i: 0,
                    j: 0,
                    c: 1,
                    x: t2,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn scaling_matches_hand_arithmetic() {
        let raw = two_condition_tensor(10.0, 30.0);
        let scaled = scale_counts(&raw).unwrap();
        assert_eq!(scaled.get(0, 1, 0), Some(8.0));
        assert!((scaled.get(0, 0, 1).unwrap() - 20.0).abs() < 1e-12);
        assert!((scaled.totals()[0] - 20.0).abs() < 1e-12);
        assert!((scaled.totals()[1] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn scaling_equal_totals_is_identity() {
        let raw = two_condition_tensor(10.0, 10.0);
        assert_eq!(scale_counts(&raw).unwrap(), raw);
    }

    #[test]
    fn scaling_three_conditions() {
        let raw = CoocTensor::from_entries(
            1,
            3,
            1,
            [5.0, 10.0, 15.0]
                .iter()
                .enumerate()
                .map(|(c, &x)| CoocEntry {
                    i: 0,
                    j: 0,
                    c: c as u16,
                    x,
                }),
        )
        .unwrap();
        let scaled = scale_counts(&raw).unwrap();
        for &t in scaled.totals() {
            assert!(((t - 10.0) / 10.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn zero_total_names_condition() {
        let raw = CoocTensor::from_entries(
            1,
            2,
            1,
            vec![CoocEntry {
                i: 0,
                j: 0,
                c: 0,
                x: 1.0,
            }],
        )
        .unwrap();
        match scale_counts_labeled(&raw, &["1990".into(), "1991".into()]) {
            Err(Error::ZeroTotal(name)) => assert_eq!(name, "1991"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_invalid_entries() {
        assert!(CoocTensor::from_entries(
            1,
            1,
            1,
            vec![CoocEntry {
                i: 0,
                j: 0,
                c: 0,
                x: 0.0
            }]
        )
        .is_err());
        assert!(CoocTensor::from_entries(
            1,
            1,
            1,
            vec![CoocEntry {
                i: 1,
                j: 0,
                c: 0,
                x: 1.0
            }]
        )
        .is_err());
        assert!(CoocTensor::from_entries(
            1,
            1,
            1,
            vec![CoocEntry {
                i: 0,
                j: 0,
                c: 1,
                x: 1.0
            }]
        )
        .is_err());
    }

    #[test]
    fn shard_round_trip_and_tsv() {
        let raw = two_condition_tensor(10.0, 30.0);
        let dir = tempfile::tempdir().unwrap();
        let paths = raw.save_shards(dir.path()).unwrap();
        assert_eq!(paths.len(), 2);
        assert_eq!(CoocTensor::load(dir.path()).unwrap(), raw);
        assert_eq!(CoocTensor::load(&paths[1]).unwrap().nnz(), 1);

        let mut bytes = Vec::new();
        raw.write_shard(&mut bytes, None).unwrap();
        assert_eq!(&bytes[..4], b"CO0C");
        assert_eq!(bytes.len(), 20 + 3 * 18);
        assert_eq!(CoocTensor::read_shard(&bytes[..]).unwrap(), raw);

        let mut tsv = Vec::new();
        raw.write_tsv(&mut tsv).unwrap();
        assert_eq!(
            String::from_utf8(tsv).unwrap(),
            "0\t1\t0\t4\n1\t0\t0\t6\n0\t0\t1\t30\n"
        );
    }

    #[test]
    fn shard_rejects_bad_magic() {
        assert!(CoocTensor::read_shard(&b"XXXX\x01\0\0\0"[..]).is_err());
    }
}
