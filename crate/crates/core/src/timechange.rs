//! Affine time change that pins every unknown instant to a fixed breakpoint
//! `k/n` of the normalized variable `s`.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimeChangeError {
    #[error("segment {segment} has negative duration {duration}")]
    NegativeDuration { segment: usize, duration: f64 },
    #[error("normalized time {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("time map needs at least one segment")]
    Empty,
}

/// `instants[k]` is the physical end of segment `k`; the last entry is the
/// terminal instant (`t_h` or `t_f`).
#[derive(Clone, Debug, PartialEq)]
pub struct TimeMap<T> {
    pub t0: T,
    pub instants: Vec<T>,
}

impl<T: Scalar> TimeMap<T> {
    pub fn new(t0: T, instants: Vec<T>) -> Result<Self, TimeChangeError> {
        if instants.is_empty() {
            return Err(TimeChangeError::Empty);
        }
        let map = TimeMap { t0, instants };
        for k in 0..map.n_segments() {
            let d = map.duration(k);
            if d < T::zero() {
                return Err(TimeChangeError::NegativeDuration { segment: k + 1, duration: d.to_f64_lossy() });
            }
        }
        Ok(map)
    }

    /// Build from scaled interior instants `tau_k = (t_k - t0)/(t_end - t0)`.
    pub fn from_scaled(t0: T, taus: &[T], t_end: T) -> Result<Self, TimeChangeError> {
        let span = t_end - t0;
        let mut inst: Vec<T> = taus.iter().map(|&tau| t0 + tau * span).collect();
        inst.push(t_end);
        Self::new(t0, inst)
    }

    pub fn n_segments(&self) -> usize {
        self.instants.len()
    }

    pub fn t_end(&self) -> T {
        *self.instants.last().expect("non-empty")
    }

    pub fn start_of(&self, k: usize) -> T {
        if k == 0 {
            self.t0
        } else {
            self.instants[k - 1]
        }
    }

    pub fn duration(&self, k: usize) -> T {
        self.instants[k] - self.start_of(k)
    }

    pub fn scaled(&self) -> Vec<T> {
        let span = self.t_end() - self.t0;
        self.instants[..self.n_segments() - 1].iter().map(|&t| (t - self.t0) / span).collect()
    }

    pub fn breakpoint(&self, k: usize) -> T {
        T::lit(k as f64) / T::lit(self.n_segments() as f64)
    }

    /// Per-segment multipliers `n * duration_k` so that `dx/ds = factor_k f(x)`.
    pub fn scale_factors(&self) -> Vec<T> {
        let n = T::lit(self.n_segments() as f64);
        (0..self.n_segments()).map(|k| n * self.duration(k)).collect()
    }

    /// Segment index containing `s`; the shared breakpoint belongs to the later segment
    /// except at `s = 1`.
    pub fn segment_of(&self, s: T) -> usize {
        let n = self.n_segments();
        let k = (s * T::lit(n as f64)).floor().to_usize().unwrap_or(0);
        k.min(n - 1)
    }

    pub fn physical_time(&self, s: T) -> Result<T, TimeChangeError> {
        if !(s >= T::zero() && s <= T::one()) {
            return Err(TimeChangeError::OutOfRange(s.to_f64_lossy()));
        }
        let n = self.n_segments();
        let k = self.segment_of(s);
        if s == self.breakpoint(k) {
            return Ok(self.start_of(k));
        }
        if s == T::one() {
            return Ok(self.t_end());
        }
        let local = s * T::lit(n as f64) - T::lit(k as f64);
        Ok(self.start_of(k) + local * self.duration(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_segment_factors() {
        let (t1, t2, th) = (0.03, 0.1, 700.0);
        let m = TimeMap::<f64>::from_scaled(0.0, &[t1, t2], th).unwrap();
        let f = m.scale_factors();
        let expect = [3.0 * th * t1, 3.0 * th * (t2 - t1), 3.0 * th * (1.0 - t2)];
        for (a, b) in f.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12 * b);
        }
    }

    #[test]
    fn uniform_partition_gives_unit_factors() {
        let m = TimeMap::<f64>::from_scaled(0.0, &[1.0 / 3.0, 2.0 / 3.0], 1.0).unwrap();
        for f in m.scale_factors() {
            assert!((f - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn fourth_segment_factor() {
        let m = TimeMap::<f64>::new(0.0, vec![20.0, 60.0, 680.0, 950.0]).unwrap();
        assert_eq!(m.scale_factors()[3], 4.0 * (950.0 - 680.0));
    }

    #[test]
    fn physical_time_at_breakpoints() {
        let m = TimeMap::<f64>::new(0.0, vec![20.0, 60.0, 680.0]).unwrap();
        assert_eq!(m.physical_time(0.0).unwrap(), 0.0);
        assert_eq!(m.physical_time(1.0 / 3.0).unwrap(), 20.0);
        assert_eq!(m.physical_time(2.0 / 3.0).unwrap(), 60.0);
        assert_eq!(m.physical_time(1.0).unwrap(), 680.0);
        assert!((m.physical_time(0.5).unwrap() - 40.0).abs() < 1e-12);
        assert!(m.physical_time(1.5).is_err());
    }

    #[test]
    fn negative_duration_rejected() {
        assert!(matches!(
            TimeMap::<f64>::new(0.0, vec![30.0, 20.0]),
            Err(TimeChangeError::NegativeDuration { segment: 2, .. })
        ));
    }

    #[test]
    fn zero_length_segment_allowed() {
        let m = TimeMap::<f64>::new(0.0, vec![0.0, 0.0, 697.0]).unwrap();
        assert_eq!(m.scale_factors()[0], 0.0);
        assert_eq!(m.physical_time(0.5).unwrap(), 0.0);
        assert!((m.physical_time(0.8).unwrap() - 0.4 * 697.0).abs() < 1e-9);
    }

    #[test]
    fn factors_sum_to_span() {
        let m = TimeMap::new(5.0, vec![7.0, 11.0, 13.5, 100.25]).unwrap();
        let n = m.n_segments() as f64;
        let s: f64 = m.scale_factors().iter().map(|f| f / n).sum();
        assert_eq!(s, 100.25 - 5.0);
    }

    #[test]
    fn f32_map() {
        let m = TimeMap::<f32>::from_scaled(0.0, &[0.25], 8.0).unwrap();
        assert_eq!(m.scale_factors(), vec![4.0, 12.0]);
    }
}
