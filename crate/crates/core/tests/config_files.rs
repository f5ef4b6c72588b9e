//! Shipped configurations and the serialize/parse round trip.

use std::path::Path;

use overdamped::config::{parse_config, CrystalRule, ExperimentConfig, MomentumSpec};
use proptest::prelude::*;

fn repo_config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    parse_config(&path, false).unwrap()
}

#[test]
fn shipped_configs_parse() {
    let r = repo_config("reference.toml");
    assert_eq!(r.eps, vec![0.4, 0.2, 0.1]);
    assert_eq!(r.ladders.len(), 2);
    assert_eq!(r.ladders[0].phis.len(), 3);
    assert!(matches!(r.crystal.as_ref().unwrap().rule, CrystalRule::Power { a, b } if a == 0.75 && b == 0.5));

    let c = repo_config("converge.toml");
    assert_eq!(c.n_traj, 100_000);
    assert_eq!(c.output_dt, 1.0);
    assert_eq!(c.momentum, MomentumSpec::Zero);

    let k = repo_config("crystal.toml");
    let ks: Vec<u32> = k.eps.iter().map(|&e| k.crystal.as_ref().unwrap().params(e).unwrap().1).collect();
    assert_eq!(ks, vec![2, 3, 4, 5]);
}

#[test]
fn shipped_configs_round_trip() {
    for name in ["reference.toml", "converge.toml", "crystal.toml"] {
        let c = repo_config(name);
        let again = ExperimentConfig::parse_str(&c.to_toml_string(), Path::new("."), false).unwrap();
        assert_eq!(c, again, "{name}");
    }
}

fn config_text(eps: &[f64], beta: f64, n: usize, seed: u64, coef: (f64, f64), gibbs: bool) -> String {
    let eps: Vec<String> = eps.iter().map(|e| format!("{e:?}")).collect();
    format!(
        "dim = 2\nbeta = {beta:?}\neps = [{}]\nhorizon = 1.0\nn_traj = {n}\nseed = \"{seed}\"\n\
         [potential]\nterms = \"1 -1 {:?} {:?}\\n0 2 0.5 0.0\"\n\
         [initial]\nposition = \"uniform\"\nmomentum = \"{}\"\n\
         [[observable]]\nlabel = \"f\"\nterms = \"1 0 1.0 0.0\"\n",
        eps.join(", "),
        coef.0,
        coef.1,
        if gibbs { "gibbs" } else { "zero" }
    )
}

proptest! {
    #[test]
    fn parse_serialize_parse(
        mut eps in prop::collection::vec(1e-3f64..1.0, 1..5),
        beta in 0.1f64..10.0,
        n in 1usize..1_000_000,
        seed in any::<u64>(),
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
        gibbs in any::<bool>(),
    ) {
        eps.sort_by(|x, y| y.total_cmp(x));
        eps.dedup();
        let text = config_text(&eps, beta, n, seed, (a, b), gibbs);
        let c = ExperimentConfig::parse_str(&text, Path::new("."), false).unwrap();
        let again = ExperimentConfig::parse_str(&c.to_toml_string(), Path::new("."), false).unwrap();
        prop_assert_eq!(&c, &again);
        prop_assert_eq!(c.hash(), again.hash());
        prop_assert_eq!(c.seed, seed);
    }
}
