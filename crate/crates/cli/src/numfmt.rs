//! Number rendering for the `size` and `emissions` subcommands.

/// `m.1e<k>` with the largest exponent that leaves an integer mantissa,
/// e.g. 1.4e10 renders as `14.0e9`.
pub fn integer_mantissa(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.1}e0");
    }
    let top = v.abs().log10().floor() as i32;
    for e in (top - 15..=top).rev() {
        let m = v / 10f64.powi(e);
        if (m - m.round()).abs() <= 1e-9 * m.abs().max(1.0) {
            return format!("{:.1}e{e}", m.round());
        }
    }
    format!("{v:e}")
}

/// Three significant figures, without exponent or trailing zero padding
/// beyond the third figure.
pub fn sig3(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = |x: f64| 2 - x.abs().log10().floor() as i32;
    let d = digits(v);
    let rounded = (v * 10f64.powi(d)).round() / 10f64.powi(d);
    let d = digits(rounded);
    if d > 0 {
        format!("{rounded:.*}", d as usize)
    } else {
        format!("{rounded:.0}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budgets() {
        assert_eq!(integer_mantissa(1.4e10), "14.0e9");
        assert_eq!(integer_mantissa(5e13), "5.0e13");
        assert_eq!(integer_mantissa(2e9), "2.0e9");
        assert_eq!(integer_mantissa(123.0), "123.0e0");
        assert_eq!(integer_mantissa(0.5), "5.0e-1");
    }

    #[test]
    fn significant_figures() {
        assert_eq!(sig3(27.985), "28.0");
        assert_eq!(sig3(500.0), "500");
        assert_eq!(sig3(0.0), "0");
        assert_eq!(sig3(1234.0), "1230");
        assert_eq!(sig3(99.96), "100");
        assert_eq!(sig3(0.012345), "0.0123");
    }
}
