//! Number formatting shared by every rendered output.

pub const MINUS: char = '\u{2212}';

/// Significance footer printed under every table.
pub const STAR_NOTE: &str = "*p<0.1; **p<0.05; ***p<0.01";

/// Magnitudes below this (and above zero) switch to scientific notation.
pub const SCIENTIFIC_BELOW: f64 = 1e-4;

pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

fn superscript(c: char) -> char {
    match c {
        '-' => '\u{207B}',
        '0' => '\u{2070}',
        '1' => '\u{00B9}',
        '2' => '\u{00B2}',
        '3' => '\u{00B3}',
        d => char::from_u32(0x2070 + d.to_digit(10).expect("exponent digit")).unwrap(),
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        s
    }
}

/// Four significant digits, trailing zeros dropped; tiny magnitudes as
/// `2.07×10⁻⁵`. Uses an ASCII hyphen for the sign.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.into();
    }
    if v == 0.0 {
        return "0".into();
    }
    if v.abs() < SCIENTIFIC_BELOW {
        let s = format!("{v:.2e}");
        let (mantissa, exp) = s.split_once('e').expect("scientific format");
        let exp: String = exp.chars().map(superscript).collect();
        return format!("{mantissa}×10{exp}");
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (3 - magnitude).max(0) as usize;
    let s = trim_zeros(format!("{v:.decimals$}"));
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

/// Replaces a leading ASCII hyphen with the typographic minus.
pub fn typographic(s: &str) -> String {
    match s.strip_prefix('-') {
        Some(rest) => format!("{MINUS}{rest}"),
        None => s.to_owned(),
    }
}

/// Inverse of [`typographic`] and of the scientific notation of [`format_number`].
pub fn parse_formatted(s: &str) -> Option<f64> {
    let s = s.replace(MINUS, "-");
    if let Some((mantissa, exp)) = s.split_once("×10") {
        let exp: String = exp
            .chars()
            .map(|c| match c {
                '\u{207B}' => '-',
                '\u{2070}' => '0',
                '\u{00B9}' => '1',
                '\u{00B2}' => '2',
                '\u{00B3}' => '3',
                c => char::from_digit(c as u32 - 0x2070, 10).unwrap_or('?'),
            })
            .collect();
        return format!("{mantissa}e{exp}").parse().ok();
    }
    s.replace(',', "").parse().ok()
}

/// A coefficient cell: number plus stars, e.g. `−0.0007**`.
pub fn format_coef(coef: f64, p: f64) -> String {
    format!("{}{}", typographic(&format_number(coef)), stars(p))
}

/// A standard-error cell, e.g. `(0.0003)`.
pub fn format_se(se: f64) -> String {
    format!("({})", typographic(&format_number(se)))
}

/// Fixed three decimals, as used for R² and residual standard errors.
pub fn format_fixed3(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        typographic(&s)
    }
}

/// `402358` -> `402,358`.
pub fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}
