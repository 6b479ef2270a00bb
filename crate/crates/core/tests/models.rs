use csi_mtl::models::*;
use csi_nn::{count_flops, count_params, LayerKind, Model, Tensor};

const CRS: [(usize, f64); 5] = [(4, 2.10), (8, 1.05), (16, 0.53), (32, 0.27), (64, 0.14)];

fn ae(family: Family, den: usize) -> ArchSpec {
    ArchSpec::new(family, Ratio::new(1, den), 32, 32)
}

fn ae_params(a: &ArchSpec) -> u64 {
    count_params(&build_encoder(a).unwrap()) + count_params(&build_decoder(a).unwrap())
}

fn ae_flops(a: &ArchSpec) -> u64 {
    count_flops(&build_encoder(a).unwrap()).unwrap() + count_flops(&build_decoder(a).unwrap()).unwrap()
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    ((value - target) / target).abs() <= tol
}

#[test]
fn published_parameter_counts() {
    for (den, millions) in CRS {
        let p = ae_params(&ae(Family::CsiNet, den)) as f64 / 1e6;
        assert!(within(p, millions, 0.05), "CR 1/{den}: {p:.4}M vs {millions}M");
    }
}

#[test]
fn published_flop_counts() {
    let table: [(Family, [f64; 5]); 5] = [
        (Family::SimpleCnn, [2.17, 1.12, 0.60, 0.34, 0.20]),
        (Family::CsiNet, [6.23, 5.19, 4.66, 4.40, 4.27]),
        (Family::CsiNetEncPlus, [10.30, 9.25, 8.72, 8.46, 8.33]),
        (Family::CsiNetWide(8), [210.44, 209.40, 208.87, 208.61, 208.48]),
        (Family::CsiNetWide(16), [833.95, 832.91, 832.38, 832.12, 831.99]),
    ];
    for (family, row) in table {
        for ((den, _), target) in CRS.iter().zip(row) {
            let f = ae_flops(&ae(family, *den)) as f64 / 1e6;
            assert!(within(f, target, 0.10), "{family} CR 1/{den}: {f:.2}M vs {target}M");
        }
    }
}

#[test]
fn capacity_grows_with_width_and_encoder_depth() {
    for (den, _) in CRS {
        let mut last = ae_params(&ae(Family::CsiNet, den));
        for k in [2, 4, 8, 16] {
            let p = ae_params(&ae(Family::CsiNetWide(k), den));
            assert!(p > last);
            last = p;
        }
        assert!(ae_params(&ae(Family::CsiNetEncPlus, den)) > ae_params(&ae(Family::CsiNet, den)));
    }
}

#[test]
fn gatenet_dimensions_and_parameters() {
    let g = build_gatenet(512, 5).unwrap();
    let dims: Vec<(usize, usize)> = g
        .layers
        .iter()
        .filter_map(|l| match l.kind {
            LayerKind::Dense { inputs, outputs } => Some((inputs, outputs)),
            _ => None,
        })
        .collect();
    assert_eq!(dims, vec![(512, 2048), (2048, 512), (512, 5)]);
    let dense = 512 * 2048 + 2048 + 2048 * 512 + 512 + 512 * 5 + 5;
    let bn = 2 * (2048 + 512 + 5);
    assert_eq!(count_params(&g), (dense + bn) as u64);
    assert!(build_gatenet(512, 1).is_err());
    assert!(build_gatenet(0, 3).is_err());
}

#[test]
fn gatenet_outputs_are_distributions() {
    let g = Model::<f64>::new(build_gatenet(16, 4).unwrap(), 5).unwrap();
    let x = Tensor::new((0..3 * 16).map(|i| (i as f64 * 0.37).sin()).collect(), 3, vec![16]);
    let p = g.predict(&x).unwrap();
    for b in 0..3 {
        let row = p.sample(b);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn autoencoders_round_trip_shapes() {
    let families = [Family::SimpleCnn, Family::CsiNet, Family::CsiNetEncPlus, Family::CsiNetWide(2)];
    for family in families {
        let a = ArchSpec::new(family, Ratio::new(1, 8), 4, 8);
        let enc = Model::<f32>::new(build_encoder(&a).unwrap(), 1).unwrap();
        let dec = Model::<f32>::new(build_decoder(&a).unwrap(), 2).unwrap();
        let x = Tensor::new((0..2 * 64).map(|i| (i % 17) as f32 / 17.0).collect(), 2, a.input_shape());
        let code = enc.predict(&x).unwrap();
        assert_eq!(code.shape, vec![a.code_len().unwrap()]);
        let y = dec.predict(&code).unwrap();
        assert_eq!(y.shape, x.shape);
        assert!(y.data.iter().all(|&v| v > 0.0 && v < 1.0), "{family}");
    }
}

#[test]
fn code_length_must_be_integral() {
    assert_eq!(ae(Family::CsiNet, 16).code_len().unwrap(), 128);
    let odd = ArchSpec::new(Family::CsiNet, Ratio::new(1, 64), 3, 3);
    assert!(odd.code_len().is_err());
    assert!(build_encoder(&odd).is_err());
    assert!("1/0".parse::<Ratio>().is_err());
    assert!("CsiNet_0wide".parse::<Family>().is_err());
    assert_eq!("CsiNet_16wide".parse::<Family>().unwrap(), Family::CsiNetWide(16));
}
