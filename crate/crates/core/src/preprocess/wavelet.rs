//! Periodized Daubechies-4 wavelet-packet analysis and band-selective synthesis.

/// Daubechies scaling filter with four vanishing moments (8 taps).
pub const DB4_LO: [f64; 8] = [
    0.230_377_813_308_855_23,
    0.714_846_570_552_541_5,
    0.630_880_767_929_590_4,
    -0.027_983_769_416_983_85,
    -0.187_034_811_718_881_14,
    0.030_841_381_835_986_965,
    0.032_883_011_666_982_945,
    -0.010_597_401_784_997_278,
];

fn db4_hi() -> [f64; 8] {
    let mut h = [0.0; 8];
    for (n, v) in h.iter_mut().enumerate() {
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        *v = sign * DB4_LO[7 - n];
    }
    h
}

fn analyze(x: &[f64], h: &[f64; 8]) -> Vec<f64> {
    let n = x.len();
    (0..n / 2)
        .map(|k| h.iter().enumerate().map(|(i, c)| c * x[(2 * k + i) % n]).sum())
        .collect()
}

fn synthesize_into(out: &mut [f64], coeffs: &[f64], h: &[f64; 8]) {
    let n = out.len();
    for (k, c) in coeffs.iter().enumerate() {
        if *c == 0.0 {
            continue;
        }
        for (i, hv) in h.iter().enumerate() {
            out[(2 * k + i) % n] += hv * c;
        }
    }
}

/// Full packet tree at `depth`, leaves stored in natural frequency order.
pub struct PacketTree {
    depth: usize,
    len: usize,
    /// `leaves[f]` covers `[f, f+1) * nyquist / 2^depth`.
    leaves: Vec<Vec<f64>>,
}

impl PacketTree {
    /// `x.len()` must be a multiple of `2^depth`.
    pub fn decompose(x: &[f64], depth: usize) -> PacketTree {
        assert!(x.len() % (1 << depth) == 0, "length must be a multiple of 2^depth");
        let hi = db4_hi();
        // (frequency index, coefficients)
        let mut level: Vec<(usize, Vec<f64>)> = vec![(0, x.to_vec())];
        for _ in 0..depth {
            let mut next = Vec::with_capacity(level.len() * 2);
            for (f, c) in &level {
                let lo_c = analyze(c, &DB4_LO);
                let hi_c = analyze(c, &hi);
                // downsampling the high band mirrors its spectrum, so odd
                // nodes swap the order of their children
                let (lo_f, hi_f) = if f % 2 == 0 { (2 * f, 2 * f + 1) } else { (2 * f + 1, 2 * f) };
                next.push((lo_f, lo_c));
                next.push((hi_f, hi_c));
            }
            level = next;
        }
        level.sort_by_key(|(f, _)| *f);
        PacketTree { depth, len: x.len(), leaves: level.into_iter().map(|(_, c)| c).collect() }
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Inverse transform keeping only leaves for which `keep(f)` is true.
    pub fn reconstruct(&self, keep: impl Fn(usize) -> bool) -> Vec<f64> {
        let hi = db4_hi();
        let mut level: Vec<(usize, Vec<f64>)> = self
            .leaves
            .iter()
            .enumerate()
            .map(|(f, c)| (f, if keep(f) { c.clone() } else { vec![0.0; c.len()] }))
            .collect();
        for _ in 0..self.depth {
            let mut parents: Vec<(usize, Vec<f64>)> = Vec::with_capacity(level.len() / 2);
            let by_freq: std::collections::BTreeMap<usize, Vec<f64>> = level.into_iter().collect();
            let n_parents = by_freq.len() / 2;
            for pf in 0..n_parents {
                let (lo_f, hi_f) = if pf % 2 == 0 { (2 * pf, 2 * pf + 1) } else { (2 * pf + 1, 2 * pf) };
                let lo_c = &by_freq[&lo_f];
                let hi_c = &by_freq[&hi_f];
                let mut out = vec![0.0; lo_c.len() * 2];
                synthesize_into(&mut out, lo_c, &DB4_LO);
                synthesize_into(&mut out, hi_c, &hi);
                parents.push((pf, out));
            }
            level = parents;
        }
        let mut out = level.pop().map(|(_, c)| c).unwrap_or_default();
        out.truncate(self.len);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_is_orthonormal() {
        let norm: f64 = DB4_LO.iter().map(|h| h * h).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        for shift in [2, 4, 6] {
            let dot: f64 = (0..8 - shift).map(|n| DB4_LO[n] * DB4_LO[n + shift]).sum();
            assert!(dot.abs() < 1e-12, "shift {shift}: {dot}");
        }
        let sum: f64 = DB4_LO.iter().sum();
        assert!((sum - std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_reconstruction() {
        let x: Vec<f64> = (0..256).map(|i| ((i * 37 % 101) as f64).sin()).collect();
        let tree = PacketTree::decompose(&x, 4);
        assert_eq!(tree.n_leaves(), 16);
        let y = tree.reconstruct(|_| true);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn leaves_are_frequency_ordered() {
        // a tone at 0.3 * Nyquist should land in leaf floor(0.3 * 16) = 4
        let n = 1024;
        let x: Vec<f64> = (0..n).map(|i| (std::f64::consts::PI * 0.3 * i as f64 + 0.2).sin()).collect();
        let tree = PacketTree::decompose(&x, 4);
        let energies: Vec<f64> = tree.leaves.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
        let best = energies.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(best, 4, "{energies:?}");
    }
}
