//! Tie-aware ranking metrics.

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("score {i} is not finite")));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("label {l} is not binary")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by score, grouped into runs of equal scores.
fn tie_groups(scores: &[f64], descending: bool) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        let o = scores[a].total_cmp(&scores[b]);
        if descending {
            o.reverse()
        } else {
            o
        }
    });
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// `P(s_pos > s_neg) + ½·P(s_pos = s_neg)`, computed from rank groups with an
/// exact integer numerator.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (np, nn) = check(scores, labels)?;
    if np == 0 || nn == 0 {
        return Err(Error::UndefinedMetric(format!("AUROC needs both classes ({np} positive, {nn} negative)")));
    }
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    for g in tie_groups(scores, false) {
        let pos = g.iter().filter(|&&i| labels[i] == 1).count() as u128;
        let neg = g.len() as u128 - pos;
        twice_u += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
    }
    Ok(twice_u as f64 / (2 * np * nn) as f64)
}

/// Average precision. Tied scores enter the ranked list together, so every
/// positive in a tie group is credited the precision at the end of the group.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (np, _) = check(scores, labels)?;
    if np == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive".into()));
    }
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut acc = 0.0;
    for g in tie_groups(scores, true) {
        let pos = g.iter().filter(|&&i| labels[i] == 1).count();
        tp += pos;
        seen += g.len();
        acc += pos as f64 * (tp as f64 / seen as f64);
    }
    Ok(acc / np as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        let s = [0.1, 0.4, 0.35, 0.8];
        let y = [0, 0, 1, 1];
        assert_eq!(auroc(&s, &y).unwrap(), 0.75);
        assert!((auprc(&s, &y).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(auroc(&[0.1, 0.2, 0.9], &[0, 0, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert_eq!(auprc(&[0.9, 0.2, 0.1], &[1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auprc(&[0.3, 0.2, 0.1], &[1, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn undefined_cases() {
        assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auprc(&[0.1, 0.2], &[0, 0]), Err(Error::UndefinedMetric(_))));
        assert!(auroc(&[0.1], &[0, 1]).is_err());
        assert!(auroc(&[f64::NAN, 0.1], &[0, 1]).is_err());
    }

    #[test]
    fn ties_share_precision() {
        // both tied at the top: precision 1/2 credited to the one positive
        assert_eq!(auprc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
    }

    proptest::proptest! {
        #[test]
        fn auroc_invariant_under_monotone_transform(
            raw in proptest::collection::vec((0.0f64..1.0, 0u8..2), 2..80)
        ) {
            let s: Vec<f64> = raw.iter().map(|r| (r.0 * 20.0).round() / 20.0).collect();
            let y: Vec<u8> = raw.iter().map(|r| r.1).collect();
            proptest::prop_assume!(y.contains(&0) && y.contains(&1));
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            proptest::prop_assert_eq!(auroc(&s, &y).unwrap(), auroc(&t, &y).unwrap());
        }
    }
}
