//! Structured report emission.
//!
//! Reports are pretty-printed JSON with a trailing newline. Field order comes
//! from the struct definitions and maps are ordered, so identical inputs give
//! identical bytes. Optional fields are omitted rather than written as `null`,
//! which lets the writer treat any `null` as a non-finite float that serde
//! would otherwise have serialized silently.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// Renders a report to its document text, refusing non-finite numbers.
pub fn render_report<T: Serialize + ?Sized>(report: &T) -> Result<String> {
    let value = serde_json::to_value(report)?;
    if let Some(path) = find_null(&value, String::new()) {
        return Err(Error::NonFinite(format!("report field `{path}`")));
    }
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

/// Writes a report document to `path`.
///
/// The text goes to a sibling temporary file that is then renamed over the
/// target, so a failed write never leaves a truncated report behind.
pub fn emit_report<T: Serialize + ?Sized>(report: &T, path: impl AsRef<Path>) -> Result<()> {
    let text = render_report(report)?;
    write_atomic(path.as_ref(), text.as_bytes())
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn find_null(value: &Value, path: String) -> Option<String> {
    match value {
        Value::Null => Some(if path.is_empty() {
            "<root>".into()
        } else {
            path
        }),
        Value::Array(items) => items
            .iter()
            .enumerate()
            .find_map(|(i, v)| find_null(v, format!("{path}[{i}]"))),
        Value::Object(map) => map.iter().find_map(|(k, v)| {
            let p = if path.is_empty() {
                k.clone()
            } else {
                format!("{path}.{k}")
            };
            find_null(v, p)
        }),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{full_report, MetricsReport};

    fn sample_report() -> MetricsReport {
        full_report(&[1.5, 2.0, 3.5, 4.0], &[1.0, 2.5, 3.0, 4.5]).unwrap()
    }

    #[test]
    fn metrics_report_keys_present() {
        let text = render_report(&sample_report()).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        for key in ["mean_error", "mae", "pearson", "spearman", "kl_sym"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn identical_reports_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
        emit_report(&sample_report(), &a).unwrap();
        emit_report(&sample_report(), &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert!(!dir.path().join("a.json.tmp").exists());
    }

    #[test]
    fn round_trips_full_precision() {
        let r = sample_report();
        let back: MetricsReport = serde_json::from_str(&render_report(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn non_finite_rejected_and_nothing_written() {
        let mut r = sample_report();
        r.mae = f64::NAN;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        let err = emit_report(&r, &path).unwrap_err();
        assert!(
            matches!(err, Error::NonFinite(ref f) if f.contains("mae")),
            "{err}"
        );
        assert!(!path.exists());
        r.mae = 0.1;
        r.kl_sym = f64::INFINITY;
        assert!(render_report(&r).is_err());
    }

    #[test]
    fn absent_correlation_is_omitted() {
        let r = full_report(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        let text = render_report(&r).unwrap();
        assert!(!text.contains("pearson"));
    }

    #[test]
    fn unwritable_path_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("r.json");
        assert!(matches!(
            emit_report(&sample_report(), &path),
            Err(Error::Io { .. })
        ));
    }
}
