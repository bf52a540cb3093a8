use super::params::RegVariant;

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Skip-gram negative-sampling loss of one positive pair:
/// `-ln s(t.c) - sum_i ln s(-t.n_i)`.
pub fn sgns_loss(target: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    softplus(-dot(target, context))
        + negatives
            .iter()
            .map(|n| softplus(dot(target, n)))
            .sum::<f64>()
}

/// Adds the pull of a target-brand vector towards its source-brand counterpart.
pub fn da_loss(base: f64, target: &[f64], source: &[f64], lambda: f64, variant: RegVariant) -> f64 {
    if lambda == 0.0 {
        return base;
    }
    let sq: f64 = target.iter().zip(source).map(|(t, s)| (t - s) * (t - s)).sum();
    match variant {
        RegVariant::Norm => base + lambda * sq.sqrt(),
        RegVariant::SquaredNorm => base + lambda * sq,
    }
}
