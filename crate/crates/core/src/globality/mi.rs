use std::collections::HashMap;

use rand::Rng;

use super::{DiscreteJoint, GlobalityError, Result};
use crate::tasks::Tokens;

/// Plug-in estimate with its Miller–Madow bias correction, in bits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PluginMi {
    pub raw: f64,
    /// Added to `raw`; usually negative for mutual information.
    pub correction: f64,
    /// `max(0, raw + correction)`.
    pub corrected: f64,
    pub samples: u64,
}

struct Table {
    total: u64,
    key_totals: Vec<u64>,
    y_totals: Vec<u64>,
    /// `(key, y, weight)` sorted, so sums are order-stable.
    cells: Vec<(u32, u32, u64)>,
}

fn check_subset(dist: &DiscreteJoint, s: &[usize]) -> Result<()> {
    if let Some(&bad) = s.iter().find(|&&i| i >= dist.width()) {
        return Err(GlobalityError::Invalid(format!("position {bad} outside width {}", dist.width())));
    }
    Ok(())
}

fn tabulate(dist: &DiscreteJoint, s: &[usize], include_histogram: bool) -> Table {
    let mut keys: HashMap<Vec<u32>, u32> = HashMap::new();
    let mut cells: HashMap<(u32, u32), u64> = HashMap::new();
    let mut key_totals = Vec::new();
    let mut y_totals: Vec<u64> = Vec::new();
    let mut key = Vec::with_capacity(s.len() + 1);
    for i in 0..dist.len() {
        key.clear();
        let x = dist.raw_x(i);
        key.extend(s.iter().map(|&p| x[p]));
        if include_histogram {
            key.push(dist.raw_hist(i));
        }
        let next = keys.len() as u32;
        let k = *keys.entry(key.clone()).or_insert(next);
        if k as usize == key_totals.len() {
            key_totals.push(0);
        }
        let w = dist.weight(i);
        let y = dist.raw_y(i);
        key_totals[k as usize] += w;
        if y_totals.len() <= y as usize {
            y_totals.resize(y as usize + 1, 0);
        }
        y_totals[y as usize] += w;
        *cells.entry((k, y)).or_insert(0) += w;
    }
    let mut cells: Vec<(u32, u32, u64)> = cells.into_iter().map(|((k, y), w)| (k, y, w)).collect();
    cells.sort_unstable();
    Table { total: key_totals.iter().sum(), key_totals, y_totals, cells }
}

impl Table {
    /// Exact zero whenever every cell factorizes in integers.
    fn mi_bits(&self) -> f64 {
        let total = self.total as u128;
        let tf = self.total as f64;
        let mut mi = 0.0;
        for &(k, y, c) in &self.cells {
            let ck = self.key_totals[k as usize] as u128;
            let cy = self.y_totals[y as usize] as u128;
            let joint = c as u128 * total;
            if joint == ck * cy {
                continue;
            }
            let ratio = (c as f64 * tf) / (ck as f64 * cy as f64);
            mi += c as f64 / tf * ratio.log2();
        }
        mi.max(0.0)
    }

    fn occupied_keys(&self) -> usize {
        self.key_totals.iter().filter(|&&c| c > 0).count()
    }

    fn occupied_ys(&self) -> usize {
        self.y_totals.iter().filter(|&&c| c > 0).count()
    }
}

/// Shannon entropy of `Y` in bits.
pub fn entropy_bits(dist: &DiscreteJoint) -> f64 {
    let t = tabulate(dist, &[], false);
    let total = t.total as f64;
    let h: f64 = t
        .y_totals
        .iter()
        .filter(|&&c| c > 0 && c < t.total)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// `I(X[S] (, histogram of X); Y)` in bits over an enumerable support.
pub fn exact_mi(dist: &DiscreteJoint, s: &[usize], include_histogram: bool) -> Result<f64> {
    if dist.is_empirical() {
        return Err(GlobalityError::NonEnumerable);
    }
    check_subset(dist, s)?;
    Ok(tabulate(dist, s, include_histogram).mi_bits())
}

/// Plug-in MI of an empirical joint.
pub fn plugin_mi_joint(dist: &DiscreteJoint, s: &[usize], include_histogram: bool) -> Result<PluginMi> {
    check_subset(dist, s)?;
    let t = tabulate(dist, s, include_histogram);
    let raw = t.mi_bits();
    // Miller–Madow adds (m - 1) / 2N nats to each entropy; I = H(K) + H(Y) - H(K,Y).
    let bins = t.occupied_keys() as f64 + t.occupied_ys() as f64 - t.cells.len() as f64 - 1.0;
    let correction = bins / (2.0 * t.total as f64 * std::f64::consts::LN_2);
    Ok(PluginMi { raw, correction, corrected: (raw + correction).max(0.0), samples: t.total })
}

/// Draws `n_samples` pairs and returns the plug-in estimate.
pub fn plugin_mi<R: Rng + ?Sized>(
    sampler: impl FnMut(&mut R) -> (Tokens, String),
    s: &[usize],
    include_histogram: bool,
    n_samples: usize,
    rng: &mut R,
) -> Result<PluginMi> {
    let dist = DiscreteJoint::from_sampler(sampler, n_samples, rng)?;
    plugin_mi_joint(&dist, s, include_histogram)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor() -> DiscreteJoint {
        DiscreteJoint::uniform(
            ["00", "01", "10", "11"]
                .iter()
                .map(|b| (Tokens::chars(b), if b == &"01" || b == &"10" { "1" } else { "0" }.to_string())),
        )
        .unwrap()
    }

    #[test]
    fn xor_needs_both_bits() {
        let d = xor();
        assert_eq!(exact_mi(&d, &[0], false).unwrap(), 0.0);
        assert_eq!(exact_mi(&d, &[1], false).unwrap(), 0.0);
        assert!((exact_mi(&d, &[0, 1], false).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(entropy_bits(&d), 1.0);
    }

    #[test]
    fn empirical_joint_is_not_exact() {
        let d = xor();
        let mut rng = rand::rngs::mock::StepRng::new(0, 1 << 60);
        let e = DiscreteJoint::from_sampler(|r| d.sample(r), 10, &mut rng).unwrap();
        assert!(matches!(exact_mi(&e, &[0], false), Err(GlobalityError::NonEnumerable)));
    }

    #[test]
    fn out_of_range_position() {
        assert!(exact_mi(&xor(), &[2], false).is_err());
    }
}
