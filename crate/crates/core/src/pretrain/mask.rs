//! Random patch masking: a uniform subset per lead, independent across
//! leads, reproducible from the seed stream.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Per-lead partition of patch indices (0-based over 0..N) into visible and
/// masked sets, both sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub num_patches: usize,
    pub visible: Vec<Vec<usize>>,
    pub masked: Vec<Vec<usize>>,
}

impl MaskPlan {
    pub fn leads(&self) -> usize {
        self.visible.len()
    }

    pub fn visible_count(&self) -> usize {
        self.visible[0].len()
    }

    pub fn masked_count(&self) -> usize {
        self.masked[0].len()
    }

    pub fn total_masked(&self) -> usize {
        self.masked.iter().map(|m| m.len()).sum()
    }

    pub fn validate(&self, leads: usize, num_patches: usize) -> Result<()> {
        if self.leads() != leads || self.num_patches != num_patches {
            return Err(Error::Internal(format!(
                "mask plan for {} leads / {} patches used with {} leads / {} patches",
                self.leads(),
                self.num_patches,
                leads,
                num_patches
            )));
        }
        for lead in 0..leads {
            let mut all: Vec<usize> = self.visible[lead]
                .iter()
                .chain(self.masked[lead].iter())
                .copied()
                .collect();
            all.sort_unstable();
            let expect: Vec<usize> = (0..num_patches).collect();
            if all != expect {
                return Err(Error::Internal(format!(
                    "lead {lead}: visible and masked sets do not partition 0..{num_patches}"
                )));
            }
        }
        Ok(())
    }
}

/// Draw a mask plan: `round(m * N)` masked indices per lead, uniformly
/// without replacement. Degenerate ratios (nothing masked or everything
/// masked) are config errors.
pub fn sample_mask(rng: &mut ChaCha8Rng, leads: usize, num_patches: usize, ratio: f64) -> Result<MaskPlan> {
    if !(0.0..1.0).contains(&ratio) || ratio <= 0.0 {
        return Err(Error::Config(format!(
            "masking ratio must lie in (0,1), got {ratio}"
        )));
    }
    let masked_count = (ratio * num_patches as f64).round() as usize;
    if masked_count == 0 || masked_count == num_patches {
        return Err(Error::Config(format!(
            "masking ratio {ratio} with {num_patches} patches is degenerate \
             ({masked_count} masked)"
        )));
    }
    let mut visible = Vec::with_capacity(leads);
    let mut masked = Vec::with_capacity(leads);
    for _ in 0..leads {
        let mut idx: Vec<usize> = (0..num_patches).collect();
        idx.shuffle(rng);
        let mut m: Vec<usize> = idx[..masked_count].to_vec();
        let mut v: Vec<usize> = idx[masked_count..].to_vec();
        m.sort_unstable();
        v.sort_unstable();
        masked.push(m);
        visible.push(v);
    }
    Ok(MaskPlan {
        num_patches,
        visible,
        masked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::{stream, StreamTag};

    #[test]
    fn default_ratio_masks_15_of_20() {
        let mut rng = stream(1, StreamTag::Mask, &[0]);
        let plan = sample_mask(&mut rng, 12, 20, 0.75).unwrap();
        for lead in 0..12 {
            assert_eq!(plan.masked[lead].len(), 15);
            assert_eq!(plan.visible[lead].len(), 5);
        }
        plan.validate(12, 20).unwrap();
    }

    #[test]
    fn half_ratio_on_four() {
        let mut rng = stream(2, StreamTag::Mask, &[1]);
        let plan = sample_mask(&mut rng, 1, 4, 0.5).unwrap();
        assert_eq!(plan.masked[0].len(), 2);
        assert_eq!(plan.visible[0].len(), 2);
    }

    #[test]
    fn degenerate_ratios_rejected() {
        let mut rng = stream(3, StreamTag::Mask, &[2]);
        assert!(sample_mask(&mut rng, 1, 20, 0.01).is_err());
        assert!(sample_mask(&mut rng, 1, 20, 0.999).is_err());
        assert!(sample_mask(&mut rng, 1, 20, 0.0).is_err());
        assert!(sample_mask(&mut rng, 1, 20, 1.0).is_err());
    }

    #[test]
    fn masking_frequency_matches_ratio() {
        // Monte-Carlo frequency oracle: per-index masking frequency over
        // many draws approaches the ratio.
        let draws = 100_000;
        let mut counts = vec![0u64; 20];
        for i in 0..draws {
            let mut rng = stream(4, StreamTag::Mask, &[i]);
            let plan = sample_mask(&mut rng, 1, 20, 0.75).unwrap();
            for &j in &plan.masked[0] {
                counts[j] += 1;
            }
        }
        for (j, &c) in counts.iter().enumerate() {
            let freq = c as f64 / draws as f64;
            assert!(
                (freq - 0.75).abs() <= 0.01,
                "index {j}: frequency {freq} not within 0.75 +- 0.01"
            );
        }
    }

    #[test]
    fn every_index_masked_within_100_steps() {
        // coverage property at m = 0.75, N = 20
        let mut hit = vec![false; 20];
        for step in 0..100 {
            let mut rng = stream(5, StreamTag::Mask, &[step]);
            let plan = sample_mask(&mut rng, 1, 20, 0.75).unwrap();
            for &j in &plan.masked[0] {
                hit[j] = true;
            }
        }
        assert!(hit.iter().all(|&h| h));
    }

    #[test]
    fn reproducible_from_seed() {
        let mut a = stream(6, StreamTag::Mask, &[7]);
        let mut b = stream(6, StreamTag::Mask, &[7]);
        assert_eq!(
            sample_mask(&mut a, 12, 20, 0.75).unwrap(),
            sample_mask(&mut b, 12, 20, 0.75).unwrap()
        );
    }
}
