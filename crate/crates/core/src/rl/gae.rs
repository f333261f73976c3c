use super::RlError;

/// Generalized advantage estimation over one worker's contiguous segment.
///
/// `dones[t]` marks that the episode ended after step `t`; values are not
/// bootstrapped across it. `last_value` is `V(s_T)` for the state after the
/// final step. Returns `(advantages, returns)` with `returns = A + V`.
pub fn compute_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), RlError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(RlError::LengthMismatch(format!(
            "rewards {n}, values {}, dones {}",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (next_value, next_adv) = if dones[t] {
            (0.0, 0.0)
        } else if t + 1 == n {
            (last_value, 0.0)
        } else {
            (values[t + 1], running)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * next_adv;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales to zero mean and unit variance; a batch with no
/// spread is only centered.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in xs.iter_mut() {
        *x -= mean;
        if std > 1e-8 {
            *x /= std;
        }
    }
}
