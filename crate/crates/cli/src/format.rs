use nalgebra::DMatrix;

/// Four significant digits, fixed notation for moderate magnitudes.
pub fn sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exponent = x.abs().log10().floor() as i32;
    if !(-4..=6).contains(&exponent) {
        return format!("{x:.3e}");
    }
    let decimals = (3 - exponent).max(0) as usize;
    format!("{x:.decimals$}")
}

/// `[[a, b]; [c, d]]` style, rows separated by semicolons.
pub fn matrix_text(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| {
            let entries: Vec<String> = r.iter().map(|v| sig4(*v)).collect();
            format!("[{}]", entries.join(", "))
        })
        .collect();
    format!("[{}]", rows.join("; "))
}
