//! Fixed-precision number formatting for user-facing output.

/// Round to six significant digits and print the shortest representation of
/// the rounded value, so output is identical on every platform.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_owned();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    rounded.to_string()
}

#[cfg(test)]
mod tests {
    use super::sig6;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(367.0), "367");
        assert_eq!(sig6(0.7000000000000001), "0.7");
        assert_eq!(sig6(42.0 / 13.0), "3.23077");
        assert_eq!(sig6(734.0 / 21.0), "34.9524");
        assert_eq!(sig6(1234567.0), "1234570");
        assert_eq!(sig6(-0.0), "0");
        assert_eq!(sig6(1.5e-7), "0.00000015");
    }
}
