use epistrata::sampler::{sample, targets::DiagNormal};
use epistrata::{DrawSet, LogDensity, SamplerConfig};

/// Neal's funnel in its centered form: `v ~ N(0, 3)`, `x | v ~ N(0, e^{v/2})`.
struct Funnel {
    dim: usize,
}

impl LogDensity for Funnel {
    fn dim(&self) -> usize {
        self.dim + 1
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let v = x[0];
        let mut lp = -v * v / 18.0;
        grad[0] = -v / 9.0;
        let prec = (-v).exp();
        for k in 1..=self.dim {
            lp += -0.5 * x[k] * x[k] * prec - 0.5 * v;
            grad[k] = -x[k] * prec;
            grad[0] += 0.5 * x[k] * x[k] * prec - 0.5;
        }
        lp
    }
}

fn names(d: usize) -> Vec<String> {
    (0..d).map(|k| format!("x[{k}]")).collect()
}

fn cfg(seed: u64) -> SamplerConfig {
    SamplerConfig { chains: 2, warmup: 300, samples: 300, seed, ..Default::default() }
}

#[test]
fn funnel_neck_produces_divergences() {
    let f = Funnel { dim: 9 };
    let draws = sample(&f, &cfg(11), names(10), None).unwrap();
    assert!(draws.divergences() > 0, "the funnel neck should defeat a single step size");
}

#[test]
fn well_conditioned_target_has_none() {
    let t = DiagNormal::standard(4);
    let draws = sample(&t, &cfg(11), names(4), None).unwrap();
    assert_eq!(draws.divergences(), 0);
}

#[test]
fn same_seed_same_draws() {
    let t = DiagNormal { mean: vec![1.0, -2.0], sd: vec![0.5, 3.0] };
    let a = sample(&t, &cfg(4), names(2), None).unwrap();
    let b = sample(&t, &cfg(4), names(2), None).unwrap();
    let c = sample(&t, &cfg(5), names(2), None).unwrap();
    assert_eq!(a.pooled(), b.pooled());
    assert_ne!(a.pooled(), c.pooled());
}

#[test]
fn draws_survive_a_disk_round_trip() {
    let t = DiagNormal::standard(3);
    let a = sample(&t, &cfg(2), names(3), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    a.write_dir(dir.path()).unwrap();
    let b = DrawSet::read_dir(dir.path()).unwrap();
    assert_eq!(a.names, b.names);
    assert_eq!(a.pooled(), b.pooled());
    assert_eq!(a.divergences(), b.divergences());
    let (sa, sb) = (a.summary(), b.summary());
    for (x, y) in sa.iter().zip(&sb) {
        assert_eq!(x.rhat, y.rhat);
        assert_eq!(x.ess_bulk, y.ess_bulk);
    }
}
