//! k-nearest-neighbor voting with deterministic tie-breaking.

use crate::error::{Error, Result};

/// Majority vote among the k nearest by Euclidean distance.
///
/// Ties break by smallest mean distance among the tied classes, then by
/// lowest class index. Returns the class and per-class vote fractions.
pub fn knn_predict(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    x: &[f64],
    k: usize,
    n_classes: usize,
) -> Result<(usize, Vec<f64>)> {
    if k == 0 || k > train_x.len() {
        return Err(Error::data(format!(
            "k = {k} out of range for {} training points",
            train_x.len()
        )));
    }
    let mut dist: Vec<(f64, usize)> = train_x
        .iter()
        .zip(train_y)
        .map(|(row, &label)| {
            let d: f64 = row
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            (d, label)
        })
        .collect();
    dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let neighbors = &dist[..k];

    let mut votes = vec![0usize; n_classes];
    let mut dist_sum = vec![0.0f64; n_classes];
    for &(d, label) in neighbors {
        votes[label] += 1;
        dist_sum[label] += d;
    }
    let top = *votes.iter().max().unwrap();
    let mut best: Option<usize> = None;
    for cls in 0..n_classes {
        if votes[cls] != top {
            continue;
        }
        let mean = dist_sum[cls] / votes[cls] as f64;
        match best {
            None => best = Some(cls),
            Some(b) => {
                let b_mean = dist_sum[b] / votes[b] as f64;
                if mean < b_mean {
                    best = Some(cls);
                }
                // equal mean distance keeps the lower class index
            }
        }
    }
    let scores = votes.iter().map(|&v| v as f64 / k as f64).collect();
    Ok((best.unwrap(), scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_with_k1() {
        let x = vec![vec![0.0, 0.0], vec![5.0, 5.0]];
        let y = vec![1, 0];
        let (cls, _) = knn_predict(&x, &y, &[0.0, 0.0], 1, 2).unwrap();
        assert_eq!(cls, 1);
    }

    #[test]
    fn majority_vote() {
        let x = vec![vec![0.0], vec![0.2], vec![3.0]];
        let y = vec![0, 0, 1];
        let (cls, scores) = knn_predict(&x, &y, &[0.1], 3, 2).unwrap();
        assert_eq!(cls, 0);
        assert!((scores[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn three_way_tie_breaks_by_mean_distance() {
        // one vote per class; class 2 sits closest
        let x = vec![vec![3.0], vec![-2.0], vec![0.5]];
        let y = vec![0, 1, 2];
        let (cls, _) = knn_predict(&x, &y, &[0.0], 3, 3).unwrap();
        assert_eq!(cls, 2);
    }

    #[test]
    fn equal_distance_tie_takes_lowest_class_index() {
        let x = vec![vec![1.0], vec![-1.0]];
        let y = vec![1, 0];
        let (cls, _) = knn_predict(&x, &y, &[0.0], 2, 2).unwrap();
        assert_eq!(cls, 0);
    }

    #[test]
    fn k_out_of_range_errors() {
        let x = vec![vec![0.0]];
        assert!(knn_predict(&x, &[0], &[0.0], 2, 1).is_err());
    }
}
