//! File helpers shared by the command-line front-end: JSON and JSON-lines
//! input with line-numbered diagnostics, atomic output, float formatting.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub fn read_to_string(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

/// Reads one JSON document.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Reads one JSON value per non-blank line. Errors carry the 1-based line
/// number of the offending record.
pub fn read_json_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let text = read_to_string(path)?;
    parse_json_lines(&text).map_err(|(line, message)| IoError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    })
}

/// Like [`read_json_lines`], keeping each record's line number.
pub fn read_json_lines_numbered<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, IoError> {
    let text = read_to_string(path)?;
    parse_json_lines_numbered(&text).map_err(|(line, message)| IoError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    })
}

pub fn parse_json_lines<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, (usize, String)> {
    Ok(parse_json_lines_numbered(text)?.into_iter().map(|(_, v)| v).collect())
}

pub fn parse_json_lines_numbered<T: DeserializeOwned>(text: &str) -> Result<Vec<(usize, T)>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(line).map_err(|e| (i + 1, e.to_string()))?;
        out.push((i + 1, v));
    }
    Ok(out)
}

/// Writes through a temporary file in the destination directory and
/// renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| IoError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| IoError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| IoError::io(path, e))?;
    tmp.persist(path).map_err(|e| IoError::io(path, e.error))?;
    Ok(())
}

/// Pretty JSON with floats written by [`fmt_f64`].
pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("plain data always serializes");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json writes utf-8")
}

struct Digits17<'a>(PrettyFormatter<'a>);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {
        $(
            fn $name<W: ?Sized + std::io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> std::io::Result<()> {
                self.0.$name(w $(, $arg)*)
            }
        )*
    };
}

impl Formatter for Digits17<'_> {
    delegate!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        begin_object_value(),
        end_object_value(),
    );

    fn write_f64<W: ?Sized + std::io::Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }
}

/// `%.17g`-style formatting: 17 significant digits, trailing zeros dropped,
/// exponent notation outside `[1e-5, 1e17)`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp) as usize;
        trim_fraction(&format!("{:.*}", decimals, x)).to_string()
    } else {
        format!("{}e{}{:02}", trim_fraction(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Renders rows of string cells as CSV.
pub fn csv_string(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "0.10000000000000001");
        assert_eq!(fmt_f64(1.0), "1");
        assert_eq!(fmt_f64(-2.5), "-2.5");
        assert_eq!(fmt_f64(100.0), "100");
        assert_eq!(fmt_f64(1e-7), "9.9999999999999995e-08");
        assert_eq!(fmt_f64(1.5e20), "1.5e+20");
        assert_eq!(fmt_f64(0.0), "0");
        assert_eq!(fmt_f64(1.0 / 3.0), "0.33333333333333331");
    }

    #[test]
    fn seventeen_digits_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let x: f64 = rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-30..30));
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn json_lines_report_line_numbers() {
        let text = "{\"a\": 1}\n\n{\"a\": 2}\n{\"a\": }\n";
        #[derive(serde::Deserialize, Debug)]
        #[allow(dead_code)]
        struct A {
            a: i32,
        }
        let err = parse_json_lines::<A>(text).unwrap_err();
        assert_eq!(err.0, 4);
        assert_eq!(parse_json_lines::<A>("{\"a\": 1}\n\n{\"a\": 2}").unwrap().len(), 2);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn json_floats_use_seventeen_digits() {
        let v = serde_json::json!({"a": [0.1, 1.0, 2], "b": {"c": -1e-7}});
        let s = to_json_pretty(&v);
        assert!(s.contains("0.10000000000000001"));
        assert!(s.contains("-9.9999999999999995e-08"));
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"][0].as_f64(), Some(0.1));
        assert_eq!(back["a"][2].as_i64(), Some(2));
        assert!(s.contains("\n  \"a\": ["));
    }

    #[test]
    fn csv_quotes_when_needed() {
        let s = csv_string(&["a".into(), "b".into()], &[vec!["x,y".into(), "1".into()]]);
        assert_eq!(s, "a,b\n\"x,y\",1\n");
    }
}
