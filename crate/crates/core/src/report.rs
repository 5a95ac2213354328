//! Evaluation rows in table shape, and the Pearson correlation helper.

use serde::{Deserialize, Serialize};

pub const COLUMNS: [&str; 9] = [
    "Model", "Iters", "Precision", "Recall", "F1", "PSNR", "SSIM", "LPIPS", "T(s)",
];

/// One evaluated run. Percent-valued fidelity scores; PSNR in dB.
/// Fields are optional because 3D and 2D evaluation fill them separately.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalReport {
    pub scenario: String,
    pub model: String,
    pub iterations: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_score: Option<f64>,
    #[serde(with = "nonfinite")]
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub lpips: Option<f64>,
    pub wall_time_s: Option<f64>,
}

impl EvalReport {
    /// Cells in `COLUMNS` order; absent values are empty.
    pub fn cells(&self) -> [String; 9] {
        let f = |v: Option<f64>| v.map(format_float).unwrap_or_default();
        [
            self.model.clone(),
            self.iterations.to_string(),
            f(self.precision),
            f(self.recall),
            f(self.f_score),
            f(self.psnr),
            f(self.ssim),
            f(self.lpips),
            f(self.wall_time_s),
        ]
    }
}

/// Locale-independent float text; `inf`, `-inf`, `nan` for non-finite values.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

/// JSON has no infinity, so PSNR is stored as a number or the string "inf".
mod nonfinite {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_finite() => s.serialize_some(x),
            Some(x) => s.serialize_some(&super::format_float(*x)),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) => t
                .parse::<f64>()
                .map(Some)
                .map_err(serde::de::Error::custom),
        }
    }
}

/// Sample Pearson correlation. `None` for fewer than two pairs, unequal
/// lengths, non-finite input or a zero-variance column.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
