//! Ingestion preprocessing: resample to 100 Hz by linear interpolation,
//! truncate/zero-pad to 1000 samples, then per-lead z-normalization. Padding
//! happens before normalization, so pad values land at the lead mean's
//! negative z-offset.

use crate::data::record::{SAMPLE_RATE, SIGNAL_LEN};
use crate::error::{Error, Result};

/// Resample one lead to the target rate with linear interpolation. No
/// anti-alias filtering; output length is floor(len * target / src).
fn resample(lead: &[f64], src_rate: f64, target_rate: f64) -> Vec<f64> {
    if src_rate == target_rate {
        return lead.to_vec();
    }
    let out_len = ((lead.len() as f64) * target_rate / src_rate).floor() as usize;
    let mut out = Vec::with_capacity(out_len);
    let step = src_rate / target_rate;
    for i in 0..out_len {
        let pos = i as f64 * step;
        let lo = pos.floor() as usize;
        if lo + 1 >= lead.len() {
            out.push(lead[lead.len() - 1]);
        } else {
            let frac = pos - lo as f64;
            out.push(lead[lo] * (1.0 - frac) + lead[lo + 1] * frac);
        }
    }
    out
}

/// Z-normalize in place. Rows that are already normalized (|mean| and
/// |std - 1| below 1e-12) pass through untouched so preprocessing is
/// bitwise idempotent; constant rows become all zeros.
fn znorm(lead: &mut [f64]) -> bool {
    let n = lead.len() as f64;
    let mean: f64 = lead.iter().sum::<f64>() / n;
    let var: f64 = lead.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if mean.abs() < 1e-12 && (std - 1.0).abs() < 1e-12 {
        return false;
    }
    if std == 0.0 {
        for v in lead.iter_mut() {
            *v = 0.0;
        }
        return true;
    }
    for v in lead.iter_mut() {
        *v = (*v - mean) / std;
    }
    false
}

/// Preprocess a multi-lead raw signal into the fixed C x 1000 layout.
/// Returns the processed leads; constant leads are zeroed with a logged
/// warning.
pub fn preprocess(raw: &[Vec<f64>], src_rate: f64) -> Result<Vec<Vec<f64>>> {
    if src_rate <= 0.0 {
        return Err(Error::Input(format!(
            "source sampling rate must be positive, got {src_rate}"
        )));
    }
    let mut out = Vec::with_capacity(raw.len());
    for (c, lead) in raw.iter().enumerate() {
        let mut resampled = resample(lead, src_rate, SAMPLE_RATE);
        resampled.truncate(SIGNAL_LEN);
        resampled.resize(SIGNAL_LEN, 0.0);
        let degenerate = znorm(&mut resampled);
        if degenerate {
            log::warn!("lead {c}: constant signal, normalized to zeros");
        }
        out.push(resampled);
    }
    Ok(out)
}

/// Flatten preprocessed leads into the lead-major f32 storage layout.
pub fn to_storage(leads: &[Vec<f64>]) -> Vec<f32> {
    let mut out = Vec::with_capacity(leads.len() * SIGNAL_LEN);
    for lead in leads {
        out.extend(lead.iter().map(|&x| x as f32));
    }
    out
}
