use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sic_core::codec::{
    decode_progressive, detail_uniform, encode_progressive, ContextModel, LatentTensor,
    SicBitstream,
};
use sic_core::entropy::{decode_symbols, encode_symbols, ideal_codelength, QuantizedGaussian};
use sic_core::rdp::{
    brute_force_codec_search, rdp_grid, rdp_lagrangian, synonymous_lagrangian_objective,
    DistortionMatrix, SolverConfig, SynonymousCodec,
};
use sic_core::semsrc::{DiscreteDistribution, SynonymousPartition};
use sic_core::transform::{analysis, forward_real, synthesis, zigzag, Image, TransformConfig};

fn h2(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }
}

#[test]
fn grid_binary_uniform_quarter_distortion() {
    let p = DiscreteDistribution::uniform(2).unwrap();
    let pt = rdp_grid(&p, &DistortionMatrix::hamming(2), 0.25, 0.0, &SolverConfig::default()).unwrap();
    // the symmetric channel already has a uniform output, so P = 0 costs nothing
    assert_abs_diff_eq!(pt.rate, 1.0 - h2(0.25), epsilon = 1e-12);
    assert_abs_diff_eq!(pt.distortion, 0.25, epsilon = 1e-12);
    assert_abs_diff_eq!(pt.perception, 0.0, epsilon = 1e-12);
}

#[test]
fn nearest_synset_codec_by_enumeration() {
    let n = 4;
    let source = DiscreteDistribution::uniform(n).unwrap();
    let d = DistortionMatrix::hamming(n);
    let part = SynonymousPartition::new(vec![vec![0, 1], vec![2, 3]], n).unwrap();
    let encoder: Vec<Vec<f64>> = (0..n)
        .map(|x| if x < 2 { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
        .collect();
    let codec = SynonymousCodec::uniform(encoder.clone(), part.clone()).unwrap();

    let (mut p_k, mut p_b, mut dist) = ([0.0; 2], [0.0; 4], 0.0);
    let mut joint = [[0.0; 2]; 4];
    for x in 0..n {
        for k in 0..2 {
            for &b in &part.groups()[k] {
                let w = 0.25 * encoder[x][k] * 0.5;
                dist += w * d.get(x, b);
                p_b[b] += w;
            }
            joint[x][k] += 0.25 * encoder[x][k];
            p_k[k] += 0.25 * encoder[x][k];
        }
    }
    let mut rate = 0.0;
    for x in 0..n {
        for k in 0..2 {
            if joint[x][k] > 0.0 {
                rate += joint[x][k] * (joint[x][k] / (0.25 * p_k[k])).log2();
            }
        }
    }
    let perception: f64 = p_b.iter().map(|&q| 0.25 * (0.25 / q).log2()).sum();

    let got = synonymous_lagrangian_objective(&source, &d, &codec, 1.0, 3.0, 2.0).unwrap();
    assert_abs_diff_eq!(got.rate_bits, rate, epsilon = 1e-12);
    assert_abs_diff_eq!(got.distortion, dist, epsilon = 1e-12);
    assert_abs_diff_eq!(got.perception, perception, epsilon = 1e-12);
    assert_abs_diff_eq!(got.total, rate + 3.0 * dist + 2.0 * perception, epsilon = 1e-12);
    assert_abs_diff_eq!(rate, 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(dist, 0.5, epsilon = 1e-12);
}

#[test]
fn oracle_traces_the_binary_curve() {
    let p = DiscreteDistribution::uniform(2).unwrap();
    let d = DistortionMatrix::hamming(2);
    let single = SynonymousPartition::singletons(2);
    for slope in [0.5f64, 1.0, 2.0, 3.0, 5.0] {
        let pt = brute_force_codec_search(&p, &d, &single, 1.0, slope, 0.0).unwrap();
        // stationarity of 1 − h(D) + slope·D
        let d_star = 1.0 / (1.0 + slope.exp2());
        assert_abs_diff_eq!(pt.rate, 1.0 - h2(pt.distortion), epsilon = 1e-6);
        assert_abs_diff_eq!(pt.distortion, d_star, epsilon = 1e-4);
    }
}

#[test]
fn lagrangian_matches_grid_at_its_own_constraints() {
    let p = DiscreteDistribution::uniform(2).unwrap();
    let d = DistortionMatrix::hamming(2);
    let cfg = SolverConfig::default();
    let pt = rdp_lagrangian(&p, &d, 2.0, 1.0, &cfg).unwrap();
    assert!(pt.converged);
    let grid = rdp_grid(&p, &d, pt.distortion + 1e-9, pt.perception + 1e-9, &cfg).unwrap();
    assert!((grid.rate - pt.rate).abs() <= 2e-3, "{} vs {}", grid.rate, pt.rate);
}

#[test]
fn ramp_block_against_matrix_dct() {
    let b = 8;
    let px: Vec<f64> = (0..b * b).map(|i| ((i % b) * 16 + (i / b) * 9) as f64).collect();
    let got = forward_real(&px, b, b, b).unwrap();
    let c = |u: usize| if u == 0 { (1.0 / 8.0f64).sqrt() } else { 0.5 };
    for (ch, &(u, v)) in zigzag(b).iter().enumerate() {
        let mut want = 0.0;
        for y in 0..b {
            for x in 0..b {
                want += px[y * b + x]
                    * (((2 * y + 1) * u) as f64 * PI / 16.0).cos()
                    * (((2 * x + 1) * v) as f64 * PI / 16.0).cos();
            }
        }
        want *= c(u) * c(v);
        assert_abs_diff_eq!(got[ch], want, epsilon = 1e-9);
    }
    // a separable ramp has energy only in the first row and column
    assert!(got[0] > 0.0);
    assert_abs_diff_eq!(got[4], 0.0, epsilon = 1e-9);
}

#[test]
fn unit_step_roundtrip_error_is_bounded() {
    let b = 8;
    // 0.5·Σ_c |basis_c(y, x)| per pixel
    let basis = |u: usize, i: usize| {
        let c = if u == 0 { (1.0 / 8.0f64).sqrt() } else { 0.5 };
        c * (((2 * i + 1) * u) as f64 * PI / 16.0).cos()
    };
    let bound: Vec<f64> = (0..b * b)
        .map(|i| {
            let (y, x) = (i / b, i % b);
            0.5 * zigzag(b)
                .iter()
                .map(|&(u, v)| (basis(u, y) * basis(v, x)).abs())
                .sum::<f64>()
        })
        .collect();
    let cfg = TransformConfig::unit(b);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let img = Image::new(16, 16, (0..256).map(|_| rng.gen()).collect()).unwrap();
        let back = synthesis(&analysis(&img, &cfg).unwrap(), &cfg).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let err = (img.get(x, y) as f64 - back.get(x, y) as f64).abs();
                // the integer output adds at most half a level on top
                assert!(err <= (bound[(y % b) * b + x % b] + 0.5).floor(), "({x},{y}) {err}");
            }
        }
    }
}

#[test]
fn iid_symbols_cost_their_ideal_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let model = QuantizedGaussian::with_default_range(1.3, 4.0).unwrap();
    let table = model.raw_pmf_table();
    let symbols: Vec<i32> = (0..10_000)
        .map(|_| {
            let mut u: f64 = rng.gen();
            let mut i = 0;
            while i + 1 < table.len() && u >= table[i] {
                u -= table[i];
                i += 1;
            }
            model.symbol_min() + i as i32
        })
        .collect();
    let models = vec![model; symbols.len()];
    let stream = encode_symbols(&symbols, &models).unwrap();
    let ideal = ideal_codelength(&symbols, &models).unwrap();
    let actual = stream.len_bits() as f64;
    assert!((actual - ideal).abs() <= 0.01 * ideal, "{actual} vs {ideal}");
}

#[test]
fn truncated_streams_never_decode() {
    let models: Vec<QuantizedGaussian> = (0..200)
        .map(|i| QuantizedGaussian::with_default_range((i % 7) as f64 - 3.0, 1.5).unwrap())
        .collect();
    let symbols: Vec<i32> = (0..200).map(|i| ((i * 37) % 11) as i32 - 5).collect();
    let golden = encode_symbols(&symbols, &models).unwrap();
    let bytes = golden.as_bytes();
    for cut in 0..bytes.len() {
        let short = sic_core::entropy::RangeCoderStream::from_bytes(bytes[..cut].to_vec());
        assert!(decode_symbols(&short, &models).is_err(), "cut at {cut}");
    }

    let latent = LatentTensor::new(
        4,
        3,
        3,
        (0..36).map(|i| ((i * 5) % 9) as i32 - 4).collect(),
    )
    .unwrap();
    let model = ContextModel::new_static(2, vec![0.0; 4], vec![2.0; 4]).unwrap();
    let file = encode_progressive(&latent, 2, &model, 5).unwrap().to_bytes();
    for cut in 0..file.len() {
        assert!(SicBitstream::from_bytes(&file[..cut]).is_err(), "cut at {cut}");
    }
    let whole = SicBitstream::from_bytes(&file).unwrap();
    assert_eq!(decode_progressive(&whole, &model, 1).unwrap().samples[0], latent);
}

#[test]
fn detail_draws_are_uniform() {
    const N: usize = 1_000_000;
    const BINS: usize = 40;
    let mut counts = [0usize; BINS];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for i in 0..N {
        let pos = (i % 64, (i / 64) % 32, i / 2048);
        let u = detail_uniform(17, 1 + (i % 3) as u64, pos, 1 + (i % 5) as u64);
        assert!((-2.0..2.0).contains(&u));
        counts[((u + 2.0) / 4.0 * BINS as f64) as usize] += 1;
        sum += u;
        sum_sq += u * u;
    }
    let expected = N as f64 / BINS as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 39 degrees of freedom: the 0.999 quantile is about 72.1
    assert!(chi2 < 72.1, "chi2 = {chi2}");
    let mean = sum / N as f64;
    let var = sum_sq / N as f64 - mean * mean;
    assert!(mean.abs() < 0.01, "{mean}");
    assert!((var - 4.0 / 3.0).abs() < 0.01, "{var}");
}
