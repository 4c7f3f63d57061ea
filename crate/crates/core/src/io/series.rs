//! Plain-text series files: one value per line, `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{atomic_write, sha256_hex};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct ReadOptions {
    /// Skip the first non-comment line.
    pub header: bool,
    /// Take natural logs of the values (all must be positive).
    pub log: bool,
}

pub fn parse_series(text: &str, opts: ReadOptions) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    let mut header_pending = opts.header;
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if header_pending {
            header_pending = false;
            continue;
        }
        let v: f64 = line.parse().map_err(|_| Error::Parse {
            line: k + 1,
            msg: format!("not a number: {line:?}"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line: k + 1,
                msg: format!("non-finite value {v}"),
            });
        }
        if opts.log {
            if v <= 0.0 {
                return Err(Error::Parse {
                    line: k + 1,
                    msg: format!("cannot take the log of {v}"),
                });
            }
            values.push(v.ln());
        } else {
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "series file holds no values".into(),
        });
    }
    Ok(values)
}

pub fn read_series(path: &Path, opts: ReadOptions) -> Result<Vec<f64>> {
    parse_series(&std::fs::read_to_string(path)?, opts)
}

/// Shortest round-trip decimal for every value, one per line.
pub fn format_series(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 20);
    for v in values {
        writeln!(s, "{v:?}").unwrap();
    }
    s
}

pub fn write_series(path: &Path, values: &[f64]) -> Result<()> {
    atomic_write(path, format_series(values).as_bytes())
}

/// Digest of the values themselves (little-endian bit patterns), so it does
/// not depend on how the file was formatted.
pub fn series_digest(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_bits().to_le_bytes()).collect();
    sha256_hex(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_lines() {
        assert_eq!(
            parse_series("1\n2.5\n-3e-2\n", ReadOptions::default()).unwrap(),
            vec![1.0, 2.5, -0.03]
        );
    }

    #[test]
    fn comments_blanks_and_header() {
        let text = "# escapement\nyear_value\n\n10 # first\n20\n";
        let v = parse_series(
            text,
            ReadOptions {
                header: true,
                log: false,
            },
        )
        .unwrap();
        assert_eq!(v, vec![10.0, 20.0]);
        assert!(parse_series(text, ReadOptions::default()).is_err());
    }

    #[test]
    fn log_transform() {
        let v = parse_series(
            "1\n2.718281828459045\n",
            ReadOptions {
                header: false,
                log: true,
            },
        )
        .unwrap();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 1.0).abs() < 1e-15);
        assert!(matches!(
            parse_series(
                "1\n0\n",
                ReadOptions {
                    header: false,
                    log: true
                }
            ),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn bad_line_index_and_empty_file() {
        match parse_series("1\n2\nabc\n", ReadOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(parse_series("# nothing\n\n", ReadOptions::default()).is_err());
    }

    #[test]
    fn write_read_is_exact() {
        let values = vec![0.1, 1.0 / 3.0, -2.5e-300, 123456.789, f64::MIN_POSITIVE];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.txt");
        write_series(&p, &values).unwrap();
        let back = read_series(&p, ReadOptions::default()).unwrap();
        assert_eq!(back, values);
        assert_eq!(series_digest(&back), series_digest(&values));
        assert_ne!(series_digest(&values[..4]), series_digest(&values));
    }
}
