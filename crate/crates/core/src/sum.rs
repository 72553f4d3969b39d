//! Compensated accumulation. Every reduction in this crate that feeds a
//! reported number runs in a fixed index order through one of these, so
//! results are bit-stable across thread counts.

/// Neumaier variant of Kahan summation: tracks a running compensation that
/// also survives the case where the incoming term dominates the sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of an iterator in its own order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in iter {
        acc.add(v);
    }
    acc.total()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_cancellation() {
        // 1 + 1e16 - 1e16 catastrophically cancels under naive summation.
        let naive: f64 = [1.0, 1e16, -1e16].iter().sum();
        let comp = compensated_sum([1.0, 1e16, -1e16]);
        assert_eq!(comp, 1.0);
        assert_ne!(naive, 1.0);
    }

    #[test]
    fn many_small_terms() {
        let n = 1_000_000;
        let comp = compensated_sum((0..n).map(|_| 0.1));
        assert!((comp - n as f64 * 0.1).abs() < 1e-9);
    }
}
