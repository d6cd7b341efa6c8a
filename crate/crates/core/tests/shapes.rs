use dunetplus::arch::{Model, NetworkConfig};
use dunetplus::Tensor;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn masks_match_input_and_lie_in_unit_interval(
        levels in 1usize..=3,
        c0 in prop::sample::select(vec![2usize, 4, 6]),
        mult in 1usize..=3,
        in_channels in prop::sample::select(vec![1usize, 3]),
        dual in any::<bool>(),
        flags in 0u8..8,
    ) {
        let side = mult << levels;
        let cfg = NetworkConfig {
            levels,
            base_channels: c0,
            input_size: (side, 2 * side),
            in_channels,
            dual,
            mkrc_on: flags & 1 != 0,
            tam_on: flags & 2 != 0,
            tag_on: flags & 4 != 0,
            ..Default::default()
        };
        prop_assume!(cfg.validate().is_ok());
        let model = Model::build(&cfg).unwrap();
        let x = Tensor::from_fn(&[2, in_channels, side, 2 * side], |i| ((i * 7919) % 101) as f32 / 100.0);
        let out = model.predict(&x).unwrap();
        for m in [&out.mask1, &out.mask2] {
            prop_assert_eq!(m.shape(), &[2, 1, side, 2 * side]);
            prop_assert!(m.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}

#[test]
fn default_configuration_builds_and_runs_at_reduced_resolution() {
    let full = Model::build(&NetworkConfig::default()).unwrap();
    let small = Model::build(&NetworkConfig {
        input_size: (32, 32),
        ..Default::default()
    })
    .unwrap();
    // Parameter count does not depend on the input resolution.
    assert_eq!(full.param_count(), small.param_count());
    let out = small.predict(&Tensor::zeros(&[1, 3, 32, 32])).unwrap();
    assert_eq!(out.mask2.shape(), &[1, 1, 32, 32]);
    println!("default configuration: {} parameters", full.param_count());
}
