use pathtemper::fixtures::make_builtin_model;
use pathtemper::hmc::SamplerConfig;
use pathtemper::idc::{run_idc, CoordTransform, IdcConfig, TargetMarginal};
use pathtemper::pseudo_prior::KernelBasis;

#[test]
fn debug_seed10() {
    let model = make_builtin_model("eight_schools_centered", &[]).unwrap();
    let cfg = IdcConfig {
        margin_index: 9,
        target_marginal: TargetMarginal::AdaptiveOptimal,
        grid_lo: -7.5,
        grid_hi: 4.0,
        grid_len: 121,
        max_adaptations: 10,
        draws_per_adaptation: 8000,
        khat_threshold: 0.7,
        sampler: SamplerConfig {
            chains: 4,
            seed: 10,
            target_accept: 0.95,
            ..Default::default()
        },
        basis: KernelBasis::default_mixed(),
        transform: CoordTransform::Log,
    };
    let res = run_idc(&model, &cfg).unwrap();
    println!("khat history: {:?}", res.khat_history);
    for (j, dens) in res.adaptation_densities.iter().enumerate() {
        let taus: Vec<f64> = res
            .draws
            .iter()
            .filter(|d| d.adaptation == j)
            .map(|d| d.tau)
            .collect();
        let lo = taus.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = taus.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let peak_idx = dens
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let n_div = res.draws.iter().filter(|d| d.adaptation == j && d.divergent).count();
        println!(
            "adaptation {j}: tau range [{lo:.2},{hi:.2}] divergent={n_div} density peak at grid eta={:.2} logdens range [{:.1},{:.1}]",
            -7.5 + 11.5 * peak_idx as f64 / 120.0,
            dens.iter().cloned().fold(f64::INFINITY, f64::min),
            dens.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        );
    }
}
