//! Bijective mapping between (lead, within-lead position) and flat token
//! indices for the joint encoder sequence, with SEP slots flagged.

use crate::error::{Error, Result};
use crate::numcore::scalar::Scalar;
use crate::numcore::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenLayout {
    pub leads: usize,
    /// Patch slots per lead (N for a full sequence, S for a masked one).
    pub interior: usize,
}

impl TokenLayout {
    pub fn new(leads: usize, interior: usize) -> Self {
        TokenLayout { leads, interior }
    }

    pub fn rows_per_lead(&self) -> usize {
        self.interior + 2
    }

    pub fn total_tokens(&self) -> usize {
        self.leads * self.rows_per_lead()
    }

    pub fn sep_count(&self) -> usize {
        2 * self.leads
    }

    /// Flat index of (lead, within-lead position incl. SEP slots).
    pub fn flat(&self, lead: usize, pos: usize) -> usize {
        debug_assert!(lead < self.leads && pos < self.rows_per_lead());
        lead * self.rows_per_lead() + pos
    }

    /// Inverse of [`TokenLayout::flat`].
    pub fn lead_pos(&self, flat: usize) -> (usize, usize) {
        (flat / self.rows_per_lead(), flat % self.rows_per_lead())
    }

    pub fn is_sep(&self, flat: usize) -> bool {
        let (_, pos) = self.lead_pos(flat);
        pos == 0 || pos == self.interior + 1
    }

    /// Flat index of interior patch `idx` (0-based) on `lead`.
    pub fn patch_token(&self, lead: usize, idx: usize) -> usize {
        debug_assert!(idx < self.interior);
        self.flat(lead, idx + 1)
    }

    /// All non-SEP flat indices, in (lead, position) order.
    pub fn non_sep_rows(&self) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.leads * self.interior);
        for lead in 0..self.leads {
            for idx in 0..self.interior {
                rows.push(self.patch_token(lead, idx));
            }
        }
        rows
    }

    /// Non-SEP flat indices for one lead.
    pub fn lead_non_sep_rows(&self, lead: usize) -> Vec<usize> {
        (0..self.interior)
            .map(|idx| self.patch_token(lead, idx))
            .collect()
    }

    /// Flat row range owned by one lead.
    pub fn lead_rows(&self, lead: usize) -> std::ops::Range<usize> {
        let r = self.rows_per_lead();
        lead * r..(lead + 1) * r
    }
}

/// Drop the SEP rows from a representation matrix, preserving token order.
pub fn strip_sep<S: Scalar>(h: &Tensor<S>, layout: &TokenLayout) -> Result<Tensor<S>> {
    if h.rows() != layout.total_tokens() {
        return Err(Error::Internal(format!(
            "strip_sep: representation has {} rows, layout expects {}",
            h.rows(),
            layout.total_tokens()
        )));
    }
    let cols = h.cols();
    let keep = layout.non_sep_rows();
    let mut data = Vec::with_capacity(keep.len() * cols);
    for &r in &keep {
        data.extend_from_slice(h.row(r));
    }
    Tensor::matrix(keep.len(), cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bijective_mapping_and_sep_flags() {
        let l = TokenLayout::new(3, 4);
        let mut seen = std::collections::HashSet::new();
        let mut seps = 0;
        for flat in 0..l.total_tokens() {
            let (lead, pos) = l.lead_pos(flat);
            assert_eq!(l.flat(lead, pos), flat);
            assert!(seen.insert(flat));
            if l.is_sep(flat) {
                seps += 1;
            }
        }
        assert_eq!(seps, 2 * 3);
    }

    #[test]
    fn strip_sep_counts() {
        // C=1, N=2: 4 rows in, 2 out
        let l = TokenLayout::new(1, 2);
        let h = Tensor::<f64>::matrix(4, 2, (0..8).map(|x| x as f64).collect()).unwrap();
        let s = strip_sep(&h, &l).unwrap();
        assert_eq!(s.rows(), 2);
        assert_eq!(s.row(0), &[2.0, 3.0]);
        assert_eq!(s.row(1), &[4.0, 5.0]);

        // C=12, N=20: 264 rows in, 240 out
        let l12 = TokenLayout::new(12, 20);
        assert_eq!(l12.total_tokens(), 264);
        assert_eq!(l12.non_sep_rows().len(), 240);
    }

    #[test]
    fn strip_sep_round_trip_preserves_non_sep_rows() {
        let l = TokenLayout::new(2, 3);
        let h = Tensor::<f64>::matrix(
            l.total_tokens(),
            1,
            (0..l.total_tokens()).map(|x| x as f64).collect(),
        )
        .unwrap();
        let s = strip_sep(&h, &l).unwrap();
        for (k, &flat) in l.non_sep_rows().iter().enumerate() {
            assert_eq!(s.row(k)[0], h.row(flat)[0]);
        }
    }

    #[test]
    fn strip_sep_layout_mismatch_is_internal_error() {
        let l = TokenLayout::new(2, 3);
        let h = Tensor::<f64>::matrix(5, 1, vec![0.0; 5]).unwrap();
        assert!(strip_sep(&h, &l).is_err());
    }
}
