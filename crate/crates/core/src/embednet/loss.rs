fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `0.5 y d^2 + 0.5 (1 - y) max(0, m - d)^2` with `d = |e0 - e1|`.
pub fn contrastive_loss(e0: &[f64], e1: &[f64], y: u8, margin: f64) -> f64 {
    let d2 = sq_dist(e0, e1);
    if y == 1 {
        0.5 * d2
    } else {
        let h = (margin - d2.sqrt()).max(0.0);
        0.5 * h * h
    }
}

/// Loss and its gradient with respect to `e0` (the gradient for `e1` is the negation).
pub fn contrastive_grad(e0: &[f64], e1: &[f64], y: u8, margin: f64) -> (f64, Vec<f64>) {
    let diff: Vec<f64> = e0.iter().zip(e1).map(|(a, b)| a - b).collect();
    let d2: f64 = diff.iter().map(|v| v * v).sum();
    if y == 1 {
        return (0.5 * d2, diff);
    }
    let d = d2.sqrt();
    if d >= margin || d == 0.0 {
        // inactive hinge, or no defined direction at d = 0
        let h = (margin - d).max(0.0);
        return (0.5 * h * h, vec![0.0; diff.len()]);
    }
    let scale = -(margin - d) / d;
    let h = margin - d;
    (0.5 * h * h, diff.iter().map(|v| v * scale).collect())
}

/// `max(0, m + |a - p|^2 - |a - n|^2)`.
pub fn triplet_loss(ea: &[f64], ep: &[f64], en: &[f64], margin: f64) -> f64 {
    (margin + sq_dist(ea, ep) - sq_dist(ea, en)).max(0.0)
}

/// Loss and gradients with respect to anchor, positive and negative.
pub fn triplet_grad(ea: &[f64], ep: &[f64], en: &[f64], margin: f64) -> (f64, [Vec<f64>; 3]) {
    let raw = margin + sq_dist(ea, ep) - sq_dist(ea, en);
    let n = ea.len();
    if raw <= 0.0 {
        return (0.0, [vec![0.0; n], vec![0.0; n], vec![0.0; n]]);
    }
    let ga = ep.iter().zip(en).map(|(p, q)| 2.0 * (q - p)).collect();
    let gp = ea.iter().zip(ep).map(|(a, p)| -2.0 * (a - p)).collect();
    let gn = ea.iter().zip(en).map(|(a, q)| 2.0 * (a - q)).collect();
    (raw, [ga, gp, gn])
}
