/// Generalised advantage estimation over a `steps × envs` rollout stored row-major.
///
/// `dones[t][i]` marks that the transition at step `t` ended its episode, so
/// nothing after it is bootstrapped. Truncated episodes are expected to have
/// their bootstrap folded into `rewards` already. Returns `(advantages, returns)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_values: &[f64],
    envs: usize,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert!(envs > 0);
    assert_eq!(rewards.len(), values.len());
    assert_eq!(rewards.len(), dones.len());
    assert_eq!(last_values.len(), envs);
    let steps = rewards.len() / envs;
    let mut adv = vec![0.0; rewards.len()];
    let mut running = vec![0.0; envs];
    for t in (0..steps).rev() {
        for i in 0..envs {
            let k = t * envs + i;
            let next_value = if t + 1 == steps {
                last_values[i]
            } else {
                values[k + envs]
            };
            let live = if dones[k] { 0.0 } else { 1.0 };
            let delta = rewards[k] + gamma * next_value * live - values[k];
            running[i] = delta + gamma * lambda * live * running[i];
            adv[k] = running[i];
        }
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts and scales to zero mean and unit standard deviation.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    xs.iter_mut().for_each(|x| *x = (*x - mean) / sd);
}
