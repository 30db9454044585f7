use std::fmt;

/// Per-network parameter layouts being compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamArch {
    /// `L` blocks of `d x d` forcing on a `C^k` state.
    Ck { k: usize, d: usize, layers: usize },
    /// Explicit first-order network on `R^{k d}` with full `kd x kd` blocks.
    FirstOrderEquivalent { k: usize, d: usize, layers: usize },
}

impl ParamArch {
    fn per_layer_width(self) -> (u128, u128) {
        match self {
            ParamArch::Ck { d, layers, .. } => (d as u128, layers as u128),
            ParamArch::FirstOrderEquivalent { k, d, layers } => ((k * d) as u128, layers as u128),
        }
    }
}

/// Weights plus biases over all layers.
pub fn parameter_count(arch: ParamArch) -> u128 {
    let (w, layers) = arch.per_layer_width();
    (w * w + w) * layers
}

/// Weight-matrix entries only.
pub fn weight_count(arch: ParamArch) -> u128 {
    let (w, layers) = arch.per_layer_width();
    w * w * layers
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Weight counts of a `C^k` network and its first-order equivalent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightRatio {
    pub ck: u128,
    pub equivalent: u128,
}

impl WeightRatio {
    /// Single-layer comparison for order `k`, width `d`.
    pub fn new(k: usize, d: usize) -> Self {
        Self::for_depth(k, d, 1)
    }

    pub fn for_depth(k: usize, d: usize, layers: usize) -> Self {
        Self {
            ck: weight_count(ParamArch::Ck { k, d, layers }),
            equivalent: weight_count(ParamArch::FirstOrderEquivalent { k, d, layers }),
        }
    }

    /// The ratio as a reduced fraction `(numerator, denominator)`.
    pub fn reduced(&self) -> (u128, u128) {
        let g = gcd(self.ck, self.equivalent).max(1);
        (self.ck / g, self.equivalent / g)
    }

    pub fn value(&self) -> f64 {
        self.ck as f64 / self.equivalent as f64
    }
}

impl fmt::Display for WeightRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} vs {} (ratio {})", self.ck, self.equivalent, self.value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k2_d3() {
        let r = WeightRatio::new(2, 3);
        assert_eq!((r.ck, r.equivalent), (9, 36));
        assert_eq!(r.reduced(), (1, 4));
        assert_eq!(r.to_string(), "9 vs 36 (ratio 0.25)");
    }

    #[test]
    fn k1_is_unity_and_k4_d64() {
        assert_eq!(WeightRatio::new(1, 7).reduced(), (1, 1));
        let r = WeightRatio::new(4, 64);
        assert_eq!((r.ck, r.equivalent), (4096, 65536));
        assert_eq!(r.reduced(), (1, 16));
    }

    #[test]
    fn totals_include_biases() {
        assert_eq!(parameter_count(ParamArch::Ck { k: 2, d: 3, layers: 5 }), 60);
        assert_eq!(parameter_count(ParamArch::FirstOrderEquivalent { k: 2, d: 3, layers: 5 }), 210);
    }
}
