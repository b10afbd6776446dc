//! Fixed-significant-digit formatting for emitted tables.

/// Format with 6 significant digits, positional for exponents in [-4, 5] and
/// exponent notation outside, trailing zeros trimmed.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    // {:.5e} rounds the mantissa to 6 significant digits
    let sci = format!("{:.5e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent notation");
    let exp: i32 = exp.parse().expect("numeric exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    debug_assert_eq!(digits.len(), 6);

    let body = if (-4..=5).contains(&exp) {
        let mut s = String::new();
        if exp >= 0 {
            let split = (exp + 1) as usize;
            s.push_str(&digits[..split]);
            let frac = digits[split..].trim_end_matches('0');
            if !frac.is_empty() {
                s.push('.');
                s.push_str(frac);
            }
        } else {
            s.push_str("0.");
            for _ in 0..(-exp - 1) {
                s.push('0');
            }
            s.push_str(digits.trim_end_matches('0'));
        }
        s
    } else {
        let frac = digits[1..].trim_end_matches('0');
        if frac.is_empty() {
            format!("{}e{exp}", &digits[..1])
        } else {
            format!("{}.{frac}e{exp}", &digits[..1])
        }
    };
    if negative {
        format!("-{body}")
    } else {
        body
    }
}

/// The value `format_sig6` would print, as a number.
pub fn round_sig6(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    format_sig6(x).parse().unwrap_or(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positional_range() {
        assert_eq!(format_sig6(1.0), "1");
        assert_eq!(format_sig6(-2.5), "-2.5");
        assert_eq!(format_sig6(123456.7), "123457");
        assert_eq!(format_sig6(0.818), "0.818");
        assert_eq!(format_sig6(0.000123456789), "0.000123457");
        assert_eq!(format_sig6(99999.99), "100000");
    }

    #[test]
    fn exponent_range() {
        assert_eq!(format_sig6(1234567.0), "1.23457e6");
        assert_eq!(format_sig6(0.00001), "1e-5");
        assert_eq!(format_sig6(-7.25e12), "-7.25e12");
    }

    #[test]
    fn specials() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(-0.0), "0");
        assert_eq!(format_sig6(f64::NAN), "NaN");
        assert_eq!(format_sig6(f64::INFINITY), "inf");
    }

    #[test]
    fn round_trip_parses() {
        for x in [0.12345649, 9.999999e5, -3.0, 1.5e-9] {
            let r = round_sig6(x);
            assert!((r - x).abs() <= x.abs() * 1e-5);
        }
    }
}
