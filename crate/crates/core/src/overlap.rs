//! Distribution of the overlap between two independently and uniformly placed
//! contiguous allocations of `M` subchannels out of `B`.
//!
//! Both the closed form and the brute-force enumeration work on integer pair
//! counts over the common denominator `(B - M + 1)^2`; floats appear only in
//! [`OverlapDistribution::prob`].

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("allocation width {width} must satisfy 1 <= M <= B = {subchannels}")]
pub struct OverlapError {
    pub subchannels: u32,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapDistribution {
    /// Ordered start-pair counts indexed by overlap `m = 0..=M`.
    counts: Vec<u64>,
    total: u64,
}

impl OverlapDistribution {
    pub fn width(&self) -> u32 {
        (self.counts.len() - 1) as u32
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Number of ordered start pairs, `(B - M + 1)^2`.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn prob(&self, m: usize) -> f64 {
        self.counts[m] as f64 / self.total as f64
    }

    pub fn probs(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|m| self.prob(m)).collect()
    }
}

fn check(b: u32, m_width: u32) -> Result<(), OverlapError> {
    if m_width == 0 || m_width > b {
        Err(OverlapError {
            subchannels: b,
            width: m_width,
        })
    } else {
        Ok(())
    }
}

/// Closed-form overlap distribution `P_{M,m}`.
///
/// The zero-overlap count `(B + 2 - 2M)(B + 1 - 2M)` is applied for `2M <= B`
/// (at `2M = B` it is `2 * 1 = 2`, the two placements at opposite ends).
pub fn overlap_distribution(b: u32, m_width: u32) -> Result<OverlapDistribution, OverlapError> {
    check(b, m_width)?;
    let (b, mw) = (i64::from(b), i64::from(m_width));
    let starts = b + 1 - mw;
    let counts = (0..=mw)
        .map(|m| {
            let c = if m < 2 * mw - b {
                0
            } else if m == mw {
                starts
            } else if m == 0 {
                (b + 2 - 2 * mw) * (b + 1 - 2 * mw)
            } else {
                2 * (b + m + 1 - 2 * mw)
            };
            c as u64
        })
        .collect();
    Ok(OverlapDistribution {
        counts,
        total: (starts * starts) as u64,
    })
}

/// Enumerates all `(B - M + 1)^2` ordered start pairs and counts overlaps.
pub fn overlap_distribution_oracle(
    b: u32,
    m_width: u32,
) -> Result<OverlapDistribution, OverlapError> {
    let pairs = overlap_pair_counts(b, m_width)?;
    let mut counts = vec![0u64; m_width as usize + 1];
    for row in &pairs {
        for &m in row {
            counts[m as usize] += 1;
        }
    }
    let starts = u64::from(b - m_width + 1);
    Ok(OverlapDistribution {
        counts,
        total: starts * starts,
    })
}

/// Overlap length for every ordered start pair `(s1, s2)`.
pub fn overlap_pair_counts(b: u32, m_width: u32) -> Result<Vec<Vec<u32>>, OverlapError> {
    check(b, m_width)?;
    let starts = b - m_width + 1;
    Ok((0..starts)
        .map(|s1| {
            (0..starts)
                .map(|s2| {
                    let lo = s1.max(s2);
                    let hi = (s1 + m_width).min(s2 + m_width);
                    hi.saturating_sub(lo)
                })
                .collect()
        })
        .collect())
}
