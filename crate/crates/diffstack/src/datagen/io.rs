//! Dataset persistence.
//!
//! Split file: UTF-8 text, header line `#grammar=<id> seed=<n> window=<a>,<b>`,
//! then one sample per line as `<label><TAB><space-separated symbols>`.
//! A sidecar `.meta` file (same basename) carries JSON metadata.

use super::{Alphabet, DatasetSplit, PcfgParams, Sample};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitMeta {
    pub grammar: String,
    pub split: String,
    pub seed: u64,
    pub size: usize,
    pub positive_fraction: f64,
    pub window: (usize, usize),
    pub length_histogram: BTreeMap<usize, usize>,
    pub pcfg: Option<PcfgParams>,
}

pub fn write_split(
    dir: &Path,
    grammar: &str,
    seed: u64,
    split: &DatasetSplit,
    alphabet: &Alphabet,
    pcfg: Option<PcfgParams>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.txt", split.name));
    let mut out = String::new();
    out.push_str(&format!(
        "#grammar={grammar} seed={seed} window={},{}\n",
        split.window.0, split.window.1
    ));
    for s in &split.samples {
        out.push_str(if s.label { "1" } else { "0" });
        out.push('\t');
        out.push_str(&s.text(alphabet));
        out.push('\n');
    }
    let mut f = std::fs::File::create(&path)?;
    f.write_all(out.as_bytes())?;

    let meta = SplitMeta {
        grammar: grammar.to_string(),
        split: split.name.clone(),
        seed,
        size: split.samples.len(),
        positive_fraction: split.positive_fraction(),
        window: split.window,
        length_histogram: split.length_histogram(),
        pcfg,
    };
    let meta_path = dir.join(format!("{}.meta", split.name));
    let mut f = std::fs::File::create(&meta_path)?;
    f.write_all(serde_json::to_string_pretty(&meta).unwrap().as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_split(path: &Path, alphabet: &Alphabet) -> Result<DatasetSplit> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Io(format!("{}: empty dataset file", path.display())))?;
    let window = parse_header_window(header)
        .ok_or_else(|| Error::Io(format!("{}: malformed header '{header}'", path.display())))?;
    let mut samples = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let (label, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::Io(format!("{}: line {} missing tab", path.display(), ln + 2)))?;
        let label = match label {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Io(format!(
                    "{}: line {} bad label '{other}'",
                    path.display(),
                    ln + 2
                )))
            }
        };
        let tokens = rest
            .split_whitespace()
            .map(|sym| {
                alphabet.index(sym).ok_or_else(|| {
                    Error::Io(format!("{}: unknown symbol '{sym}'", path.display()))
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        samples.push(Sample { tokens, label });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(DatasetSplit {
        name,
        samples,
        window,
    })
}

fn parse_header_window(header: &str) -> Option<(usize, usize)> {
    let w = header.split("window=").nth(1)?;
    let (a, b) = w.trim().split_once(',')?;
    Some((a.parse().ok()?, b.parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Alphabet;

    #[test]
    fn split_round_trips_byte_identically() {
        let a = Alphabet::dyck(2).unwrap();
        let split = DatasetSplit {
            name: "train".into(),
            samples: vec![
                Sample {
                    tokens: vec![0, 1],
                    label: true,
                },
                Sample {
                    tokens: vec![1, 0],
                    label: false,
                },
            ],
            window: (2, 55),
        };
        let dir = tempfile::tempdir().unwrap();
        write_split(dir.path(), "d2", 7, &split, &a, None).unwrap();
        write_split(dir.path().join("b").as_path(), "d2", 7, &split, &a, None).unwrap();
        let f1 = std::fs::read(dir.path().join("train.txt")).unwrap();
        let f2 = std::fs::read(dir.path().join("b/train.txt")).unwrap();
        assert_eq!(f1, f2);

        let back = read_split(&dir.path().join("train.txt"), &a).unwrap();
        assert_eq!(back.samples, split.samples);
        assert_eq!(back.window, (2, 55));
    }

    #[test]
    fn unknown_symbol_rejected() {
        let a = Alphabet::dyck(1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "#grammar=d1 seed=0 window=2,4\n1\t[ } ]\n").unwrap();
        assert!(read_split(&path, &a).is_err());
    }
}
