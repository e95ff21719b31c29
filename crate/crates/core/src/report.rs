//! Text formatting shared by every CSV writer.

/// Formats with 12 significant digits, `%.12g` style: fixed notation for
/// decimal exponents in [-4, 12), scientific otherwise, trailing zeros trimmed.
pub fn fmt_sig12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.11e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_fraction(format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim_fraction(mantissa.to_string()), exp)
    }
}

fn trim_fraction(mut s: String) -> String {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::fmt_sig12;

    #[test]
    fn matches_printf_g() {
        assert_eq!(fmt_sig12(0.0), "0");
        assert_eq!(fmt_sig12(1.5), "1.5");
        assert_eq!(fmt_sig12(-0.048), "-0.048");
        assert_eq!(fmt_sig12(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_sig12(123456.789), "123456.789");
        assert_eq!(fmt_sig12(1e-8), "1e-8");
        assert_eq!(fmt_sig12(2.5e-5), "2.5e-5");
        assert_eq!(fmt_sig12(0.0001984126984126984), "0.000198412698413");
        assert_eq!(fmt_sig12(1e15), "1e15");
        assert_eq!(fmt_sig12(999999999999.9), "1e12");
        assert_eq!(fmt_sig12(f64::NAN), "NaN");
    }
}
