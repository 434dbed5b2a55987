/// Rounds to 9 significant digits and prints the shortest decimal that reads
/// back to the rounded value (no exponent).
pub fn sig9(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{:.8e}", x).parse().expect("formatted float parses");
    // Avoid "-0".
    if rounded == 0.0 {
        return "0".into();
    }
    rounded.to_string()
}

pub fn parse_sig9(s: &str) -> f64 {
    s.parse().expect("sig9 output parses")
}

pub fn na_or(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), sig9)
}
