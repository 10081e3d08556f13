/// Received power at `su_pos` under the log-distance model with shadowing.
///
/// Each PU `n` contributes `P_n - 10 phi log10(d_n) - X_n`, where `X_n` is the
/// shadowing draw for that PU. Distances below `min_distance` are clamped.
/// Returns the per-PU contributions and their sum.
pub fn received_power(
    pu_powers: &[f64],
    su_pos: [f64; 2],
    pu_positions: &[[f64; 2]],
    pathloss_exponent: f64,
    shadow: &[f64],
    min_distance: f64,
) -> (Vec<f64>, f64) {
    debug_assert_eq!(pu_powers.len(), pu_positions.len());
    debug_assert_eq!(shadow.len(), pu_positions.len());
    let terms: Vec<f64> = pu_powers
        .iter()
        .zip(pu_positions)
        .zip(shadow)
        .map(|((&p, pu), &x)| {
            let d = distance(su_pos, *pu).max(min_distance);
            p - 10.0 * pathloss_exponent * d.log10() - x
        })
        .collect();
    let total = terms.iter().sum();
    (terms, total)
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
