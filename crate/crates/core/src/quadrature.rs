//! Composite Gauss–Legendre quadrature over boxes.

const GL4_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL4_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

/// Nodes and weights of the 4-point composite rule on `[a, b]` with `cells` panels.
pub fn rule_1d(a: f64, b: f64, cells: usize) -> (Vec<f64>, Vec<f64>) {
    let width = (b - a) / cells as f64;
    let mut nodes = Vec::with_capacity(cells * 4);
    let mut weights = Vec::with_capacity(cells * 4);
    for c in 0..cells {
        let mid = a + (c as f64 + 0.5) * width;
        for (x, w) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
            nodes.push(mid + 0.5 * width * x);
            weights.push(0.5 * width * w);
        }
    }
    (nodes, weights)
}

pub fn integrate_1d(f: impl Fn(f64) -> f64, a: f64, b: f64, cells: usize) -> f64 {
    let (x, w) = rule_1d(a, b, cells);
    x.iter().zip(&w).map(|(&x, &w)| w * f(x)).sum()
}

/// Tensor-product rule over the box `×_j [lo_j, hi_j]` with `cells` panels per axis.
pub fn integrate_box(f: impl Fn(&[f64]) -> f64, lo: &[f64], hi: &[f64], cells: usize) -> f64 {
    let d = lo.len();
    let rules: Vec<_> = (0..d).map(|j| rule_1d(lo[j], hi[j], cells)).collect();
    let m = cells * 4;
    let total = m.pow(d as u32);
    let mut point = vec![0.0; d];
    let mut sum = 0.0;
    for flat in 0..total {
        let mut rem = flat;
        let mut w = 1.0;
        for j in (0..d).rev() {
            let i = rem % m;
            rem /= m;
            point[j] = rules[j].0[i];
            w *= rules[j].1[i];
        }
        sum += w * f(&point);
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_cubics_per_panel() {
        let v = integrate_1d(|x| x.powi(7) - 3.0 * x * x, -1.0, 2.0, 1);
        let exact = (256.0 - 1.0) / 8.0 - (8.0 + 1.0);
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn box_volume() {
        let v = integrate_box(|_| 1.0, &[-1.0, 0.0], &[1.0, 3.0], 2);
        assert!((v - 6.0).abs() < 1e-12);
    }
}
