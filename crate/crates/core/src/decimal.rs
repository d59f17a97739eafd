//! Fixed-width decimal formatting shared by the embedding, model, and
//! verdict writers. Everything persisted as floating point goes through
//! [`sig9`] so that save → load → save reproduces files byte for byte.

/// Formats a float with exactly nine significant digits.
///
/// `parse::<f64>()` of the result followed by another `sig9` call yields the
/// same string: f64 carries ~15.9 significant digits, so the nearest double
/// to a nine-digit decimal rounds back to that decimal.
pub fn sig9(x: f64) -> String {
    format!("{:.8e}", x)
}

/// Formats a metric for CLI output (six fixed decimals).
pub fn fixed6(x: f64) -> String {
    format!("{:.6}", x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_round_trips() {
        let values = [
            0.0,
            1.0,
            -1.0,
            0.833,
            2.0 / 3.0,
            1e-12,
            -123456.789,
            std::f64::consts::PI,
        ];
        for &x in &values {
            let s = sig9(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(sig9(back), s, "unstable round trip for {x}");
        }
    }

    #[test]
    fn sig9_has_nine_digits() {
        assert_eq!(sig9(0.833), "8.33000000e-1");
        assert_eq!(sig9(0.0001234), "1.23400000e-4");
    }
}
