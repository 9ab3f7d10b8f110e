//! Fixed catalog of the model zoo.

pub struct Entry {
    pub name: &'static str,
    pub params: &'static str,
    pub result: &'static str,
    pub rule: &'static str,
}

pub const MODELS: [Entry; 8] = [
    Entry {
        name: "iid",
        params: "noise",
        result: "precise large deviations for iid regularly varying sums, b+ = p",
        rule: "nagaev_iid",
    },
    Entry {
        name: "ma",
        params: "theta[], noise",
        result: "m0-dependent sums, b+ = b+(m0 + 1) - b+(m0)",
        rule: "m0_dep",
    },
    Entry {
        name: "ar1",
        params: "phi, noise",
        result: "Markov chain with an atom, b+ = (1 - |phi|^a) p (1 - phi)^-a for phi >= 0",
        rule: "markov_atom",
    },
    Entry {
        name: "sre_affine",
        params: "a (factor law), b (noise), alpha",
        result: "stochastic recurrence X = A X + B, b+ = E[(1 + sum Pi)^a - (sum Pi)^a]",
        rule: "sre",
    },
    Entry {
        name: "sre_max",
        params: "a (factor law), b (noise), alpha",
        result: "max recursion X = max(A X, B), Kesten tail with the recursion constant",
        rule: "sre",
    },
    Entry {
        name: "letac",
        params: "a (factor law), c (noise), d (noise), alpha",
        result: "Letac recursion X = A max(C, X) + D, Kesten tail with the recursion constant",
        rule: "sre",
    },
    Entry {
        name: "sv",
        params: "a, sigma_eta, noise",
        result: "stochastic volatility exp(Y) Z, b+ = p of Z",
        rule: "sv",
    },
    Entry {
        name: "garch11",
        params: "alpha0, alpha1, beta1, noise, alpha",
        result: "GARCH(1,1), tail index from E(alpha1 Z^2 + beta1)^(a/2) = 1",
        rule: "garch",
    },
];

pub fn list_models() -> String {
    let mut s = String::new();
    for e in &MODELS {
        s.push_str(&format!("{}\n  params: {}\n  result: {}\n  region rule: {}\n", e.name, e.params, e.result, e.rule));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use ldlab_core::{ModelSpec, NoiseLaw, Variant};

    #[test]
    fn catalog_matches_zoo() {
        let text = list_models();
        assert_eq!(MODELS.len(), 8);
        assert_eq!(text, list_models());
        let g = NoiseLaw::Gaussian { sd: 1.0 };
        let ar: ModelSpec = Variant::Ar1 { phi: 0.5, noise: g.clone() }.into();
        let iid: ModelSpec = Variant::Iid { noise: g }.into();
        for m in [ar, iid] {
            let e = MODELS.iter().find(|e| e.name == m.name()).unwrap();
            assert_eq!(e.rule, ldlab_core::models::default_rule_name(&m.variant));
        }
        assert!(MODELS.iter().all(|e| text.contains(&format!("region rule: {}", e.rule))));
    }
}
