use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-dataset replication that lifts every small dataset to at least
/// `fraction` of the largest one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub sizes: Vec<usize>,
    pub replication: Vec<usize>,
    pub fraction: f64,
    pub total: usize,
}

pub fn resample_plan(sizes: &[usize], fraction: f64) -> Result<SamplePlan> {
    if sizes.is_empty() {
        return Err(Error::invalid("resample plan needs at least one dataset"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} outside (0,1]")));
    }
    if sizes.contains(&0) {
        return Err(Error::invalid("dataset sizes must be at least 1"));
    }
    let max = *sizes.iter().max().expect("non-empty");
    let target = fraction * max as f64;
    let replication: Vec<usize> = sizes
        .iter()
        .map(|&s| {
            // quotients within rounding noise of an integer are not bumped up
            let r = (target / s as f64).ceil();
            let r = if (target / s as f64 - (r - 1.0)).abs() < 1e-9 { r - 1.0 } else { r };
            (r as usize).max(1)
        })
        .collect();
    let total = sizes.iter().zip(&replication).map(|(s, r)| s * r).sum();
    Ok(SamplePlan {
        sizes: sizes.to_vec(),
        replication,
        fraction,
        total,
    })
}

/// Parses a comma-separated size list; `K`/`M` suffixes scale by 1e3/1e6.
pub fn parse_sizes(csv: &str) -> Result<Vec<usize>> {
    csv.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (num, mult) = match s.chars().last() {
                Some('k' | 'K') => (&s[..s.len() - 1], 1_000.0),
                Some('m' | 'M') => (&s[..s.len() - 1], 1_000_000.0),
                _ => (s, 1.0),
            };
            let v: f64 = num
                .parse()
                .map_err(|_| Error::invalid(format!("bad dataset size {s:?}")))?;
            let n = v * mult;
            if n < 1.0 || n.fract() != 0.0 {
                return Err(Error::invalid(format!("dataset size {s:?} is not a positive integer")));
            }
            Ok(n as usize)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn documented_cases() {
        assert_eq!(resample_plan(&[306_000, 1_000], 0.1).unwrap().replication, vec![1, 31]);
        assert_eq!(resample_plan(&[5], 0.1).unwrap().replication, vec![1]);
        assert_eq!(resample_plan(&[100, 100], 0.1).unwrap().replication, vec![1, 1]);
        assert_eq!(resample_plan(&[1000, 100], 0.1).unwrap().replication, vec![1, 1]);
        assert_eq!(resample_plan(&[1000, 99], 0.1).unwrap().replication, vec![1, 2]);
        assert!(resample_plan(&[], 0.1).is_err());
        assert!(resample_plan(&[10], 0.0).is_err());
        assert!(resample_plan(&[10, 0], 0.5).is_err());
    }

    #[test]
    fn size_parsing() {
        assert_eq!(parse_sizes("306K, 1k,42").unwrap(), vec![306_000, 1_000, 42]);
        assert_eq!(parse_sizes("1.5M").unwrap(), vec![1_500_000]);
        assert!(parse_sizes("abc").is_err());
        assert!(parse_sizes("0").is_err());
    }

    proptest! {
        #[test]
        fn minimal_replication(sizes in proptest::collection::vec(1usize..5000, 1..8), fraction in 0.01f64..=1.0) {
            let plan = resample_plan(&sizes, fraction).unwrap();
            let max = *sizes.iter().max().unwrap();
            let target = fraction * max as f64;
            for (&s, &r) in sizes.iter().zip(&plan.replication) {
                prop_assert!(r >= 1);
                if s == max {
                    prop_assert_eq!(r, 1);
                }
                prop_assert!((s * r) as f64 >= target - 1e-6);
                if r > 1 {
                    prop_assert!((((r - 1) * s) as f64) < target);
                }
            }
        }
    }
}
