use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// True and estimated count of one frame of one video.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub video: usize,
    pub frame: usize,
    pub truth: f64,
    pub estimate: f64,
}

/// Mean absolute error and root mean squared error over all frames of all
/// videos.
pub fn mae_mse(records: &[CountRecord]) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Err(Error::invalid("no count records"));
    }
    let mut abs = 0.0;
    let mut sq = 0.0;
    for r in records {
        if !(r.truth.is_finite() && r.estimate.is_finite()) {
            return Err(Error::NonFinite(format!(
                "count of video {} frame {}",
                r.video, r.frame
            )));
        }
        let e = r.truth - r.estimate;
        abs += e.abs();
        sq += e * e;
    }
    let n = records.len() as f64;
    Ok((abs / n, (sq / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn records(pairs: &[(f64, f64)]) -> Vec<CountRecord> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(truth, estimate))| CountRecord {
                video: 0,
                frame: i,
                truth,
                estimate,
            })
            .collect()
    }

    #[test]
    fn hand_values() {
        let (mae, mse) = mae_mse(&records(&[(10.0, 12.0), (20.0, 17.0)])).unwrap();
        assert!((mae - 2.5).abs() <= 1e-9);
        assert!((mse - 6.5f64.sqrt()).abs() <= 1e-9);
        assert_eq!(
            mae_mse(&records(&[(3.0, 3.0), (0.0, 0.0)])).unwrap(),
            (0.0, 0.0)
        );
        assert!(mae_mse(&[]).is_err());
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(pairs in proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..40)) {
            let (mae, mse) = mae_mse(&records(&pairs)).unwrap();
            prop_assert!(mse + 1e-12 >= mae);
        }
    }
}
