//! Structured masking plans: whole time columns plus whole frequency rows,
//! topped up with single patches to hit the requested ratio.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub t_p: usize,
    pub f_p: usize,
    /// Masked time indices (columns of the time × frequency grid).
    pub masked_time_cols: Vec<usize>,
    /// Masked frequency indices.
    pub masked_freq_rows: Vec<usize>,
    /// Single patches added to cover the rounding shortfall.
    pub fill: Vec<usize>,
    /// Requested ratio, in parts per million.
    pub ratio_ppm: u32,
}

impl MaskPlan {
    pub fn n_patches(&self) -> usize {
        self.t_p * self.f_p
    }

    pub fn ratio(&self) -> f64 {
        f64::from(self.ratio_ppm) / 1e6
    }

    /// Per-patch mask, indexed `t * f_p + f`.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_patches()];
        for &t in &self.masked_time_cols {
            for f in 0..self.f_p {
                m[t * self.f_p + f] = true;
            }
        }
        for &f in &self.masked_freq_rows {
            for t in 0..self.t_p {
                m[t * self.f_p + f] = true;
            }
        }
        for &i in &self.fill {
            m[i] = true;
        }
        m
    }

    pub fn masked(&self) -> Vec<usize> {
        self.mask().iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }

    pub fn visible(&self) -> Vec<usize> {
        self.mask().iter().enumerate().filter(|(_, &m)| !m).map(|(i, _)| i).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.masked_time_cols.is_empty() && self.masked_freq_rows.is_empty() && self.fill.is_empty()
    }

    /// Patches covered by the time columns and by the frequency rows.
    pub fn axis_contributions(&self) -> (usize, usize) {
        (
            self.masked_time_cols.len() * self.f_p,
            self.masked_freq_rows.len() * self.t_p,
        )
    }
}

/// Plans a mask over a `(t_p, f_p)` grid. Each axis gets
/// `floor(ratio / 2 * lines)` whole lines; the total is then topped up to
/// `round(ratio * t_p * f_p)` with random single patches.
pub fn plan_mask(grid: (usize, usize), ratio: f64, rng_seed: u64) -> Result<MaskPlan> {
    let (t_p, f_p) = grid;
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::precondition(format!("mask ratio {ratio} outside [0, 1)")));
    }
    if t_p == 0 || f_p == 0 {
        return Err(Error::precondition("mask grid must be non-empty"));
    }
    let mut rng = seed::rng(rng_seed, "mask", &[t_p as u64, f_p as u64]);
    let n_t = (ratio / 2.0 * t_p as f64).floor() as usize;
    let n_f = (ratio / 2.0 * f_p as f64).floor() as usize;
    let mut cols: Vec<usize> = (0..t_p).collect();
    cols.shuffle(&mut rng);
    cols.truncate(n_t);
    cols.sort_unstable();
    let mut rows: Vec<usize> = (0..f_p).collect();
    rows.shuffle(&mut rng);
    rows.truncate(n_f);
    rows.sort_unstable();
    let mut plan = MaskPlan {
        t_p,
        f_p,
        masked_time_cols: cols,
        masked_freq_rows: rows,
        fill: Vec::new(),
        ratio_ppm: (ratio * 1e6).round() as u32,
    };
    let target = (ratio * (t_p * f_p) as f64).round() as usize;
    let mut free = plan.visible();
    let masked = t_p * f_p - free.len();
    if masked < target {
        free.shuffle(&mut rng);
        free.truncate(target - masked);
        free.sort_unstable();
        plan.fill = free;
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_by_ten_at_point_four() {
        let p = plan_mask((10, 10), 0.4, 1).unwrap();
        assert_eq!(p.masked_time_cols.len(), 2);
        assert_eq!(p.masked_freq_rows.len(), 2);
        assert_eq!(2 * 10 + 2 * 10 - 4, 36);
        assert_eq!(p.fill.len(), 4);
        assert_eq!(p.masked().len(), 40);
    }

    #[test]
    fn desk_grid_leaves_77_visible() {
        let p = plan_mask((16, 8), 0.4, 7).unwrap();
        let union = 3 * 8 + 16 - 3;
        assert_eq!(union, 37);
        assert_eq!(p.fill.len(), 51 - union);
        assert_eq!(p.visible().len(), 77);
    }

    #[test]
    fn zero_ratio_is_empty() {
        let p = plan_mask((12, 9), 0.0, 3).unwrap();
        assert!(p.is_empty());
        assert_eq!(p.visible().len(), 108);
    }

    #[test]
    fn deterministic() {
        assert_eq!(plan_mask((13, 7), 0.6, 5).unwrap(), plan_mask((13, 7), 0.6, 5).unwrap());
        assert_ne!(plan_mask((13, 7), 0.6, 5).unwrap(), plan_mask((13, 7), 0.6, 6).unwrap());
    }

    #[test]
    fn invalid_ratio() {
        assert!(plan_mask((4, 4), 1.0, 0).is_err());
        assert!(plan_mask((4, 4), -0.1, 0).is_err());
    }

    proptest! {
        #[test]
        fn fill_never_duplicates(t in 1usize..20, f in 1usize..20, r in 0.0f64..0.95, s in any::<u64>()) {
            let p = plan_mask((t, f), r, s).unwrap();
            let lines_only = MaskPlan { fill: vec![], ..p.clone() }.masked().len();
            prop_assert_eq!(lines_only + p.fill.len(), p.masked().len());
            prop_assert!(((p.masked().len() as f64) - r * (t * f) as f64).abs() <= 1.0);
        }
    }
}
