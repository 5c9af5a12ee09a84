//! File emission helpers: atomic writes and small fixed-format writers.

use std::path::Path;

use crate::Result;

/// Writes a file atomically (write to a sibling temp file, then rename), so
/// interrupted runs never leave partial output.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Two-column whitespace data file (gnuplot-friendly).
pub fn two_column(pairs: &[(f64, f64)]) -> String {
    let mut out = String::new();
    for (a, b) in pairs {
        out.push_str(&format!("{a:.16e} {b:.16e}\n"));
    }
    out
}

/// Neumaier compensated sum; keeps long mass sums at O(eps) error.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_is_exact_on_cancellation() {
        let vals = vec![1e16, 1.0, -1e16];
        assert_eq!(compensated_sum(vals), 1.0);
    }
}
