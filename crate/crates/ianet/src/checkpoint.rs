//! Checkpoint format: a directory holding
//!
//! - `index.txt`  — one line per tensor: `name f64 <dims...> <byte offset>`
//! - `tensors.bin` — the little-endian IEEE-754 float64 payload, in index
//!   order
//! - `config.cfg` — the effective run config (flat key=value text), so a
//!   checkpoint is self-describing
//!
//! Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const INDEX_FILE: &str = "index.txt";
pub const BLOB_FILE: &str = "tensors.bin";
pub const CONFIG_FILE: &str = "config.cfg";

pub fn save(dir: &Path, entries: &[(String, Tensor)], config_echo: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut index = String::new();
    let mut blob: Vec<u8> = Vec::new();
    for (name, t) in entries {
        if name.contains(char::is_whitespace) {
            return Err(Error::InvalidArg(format!(
                "tensor name '{name}' contains whitespace"
            )));
        }
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        index.push_str(&format!("{name} f64 {} {}\n", dims.join(" "), blob.len()));
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(INDEX_FILE), index)?;
    fs::write(dir.join(BLOB_FILE), blob)?;
    fs::write(dir.join(CONFIG_FILE), config_echo)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let index = fs::read_to_string(dir.join(INDEX_FILE))
        .map_err(|e| Error::Data(format!("cannot read {}/{INDEX_FILE}: {e}", dir.display())))?;
    let blob = fs::read(dir.join(BLOB_FILE))
        .map_err(|e| Error::Data(format!("cannot read {}/{BLOB_FILE}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in index.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 || fields[1] != "f64" {
            return Err(Error::Data(format!(
                "index line {}: expected 'name f64 dims... offset'",
                lineno + 1
            )));
        }
        let name = fields[0].to_string();
        let parse = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Data(format!("index line {}: bad integer '{s}'", lineno + 1)))
        };
        let offset = parse(fields[fields.len() - 1])?;
        let shape: Vec<usize> = fields[2..fields.len() - 1]
            .iter()
            .map(|s| parse(s))
            .collect::<Result<_>>()?;
        let numel: usize = shape.iter().product();
        let end = offset + 8 * numel;
        if end > blob.len() {
            return Err(Error::Data(format!(
                "index line {}: tensor extends past blob ({} > {})",
                lineno + 1,
                end,
                blob.len()
            )));
        }
        let data: Vec<f64> = blob[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn load_config_echo(dir: &Path) -> Result<String> {
    Ok(fs::read_to_string(dir.join(CONFIG_FILE))
        .map_err(|e| Error::Data(format!("cannot read {}/{CONFIG_FILE}: {e}", dir.display())))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![
            (
                "a.weight".to_string(),
                Tensor::new(vec![2, 3], vec![0.0, -0.0, 1.5e-308, f64::MAX, -1.25, 3.0]).unwrap(),
            ),
            ("b.bias".to_string(), Tensor::scalar(0.1 + 0.2)),
        ];
        save(dir.path(), &entries, "k = v\n").unwrap();
        let loaded = load(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        for ((n0, t0), (n1, t1)) in entries.iter().zip(&loaded) {
            assert_eq!(n0, n1);
            assert!(t0.bits_eq(t1));
        }
        assert_eq!(load_config_echo(dir.path()).unwrap(), "k = v\n");
    }

    #[test]
    fn saving_twice_produces_identical_bytes() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let entries = vec![(
            "w".to_string(),
            Tensor::from_fn(&[4, 4], |i| (i as f64).sin()),
        )];
        save(d1.path(), &entries, "x = 1\n").unwrap();
        save(d2.path(), &entries, "x = 1\n").unwrap();
        for f in [INDEX_FILE, BLOB_FILE, CONFIG_FILE] {
            assert_eq!(
                fs::read(d1.path().join(f)).unwrap(),
                fs::read(d2.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn corrupt_index_is_reported_with_line() {
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &[("w".into(), Tensor::scalar(1.0))], "").unwrap();
        fs::write(dir.path().join(INDEX_FILE), "w f64 1 0\nbad line\n").unwrap();
        let err = load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
