mod support;

use burnscar::raster::{BandId, RasterPatch};
use burnscar::spectral::{self, IndexKind, Pixel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use support::oracles::{self, Bands, BAND_NAMES};

fn random_bands(rng: &mut impl Rng) -> Bands {
    BAND_NAMES.iter().map(|&n| (n, rng.random_range(0.01..1.0))).collect()
}

fn to_pixel(b: &Bands) -> Pixel {
    let mut p = Pixel::default();
    for band in BandId::ALL {
        p.set(band, b[band.name()]);
    }
    p
}

fn to_patch(pixels: &[Bands]) -> RasterPatch {
    let n = pixels.len();
    let mut data = vec![0.0f32; 10 * n];
    for (k, band) in BandId::ALL.iter().enumerate() {
        for (i, p) in pixels.iter().enumerate() {
            data[k * n + i] = p[band.name()] as f32;
        }
    }
    RasterPatch::new(1, n, BandId::ALL.to_vec(), data).unwrap()
}

#[test]
fn unitemporal_indices_match_oracle() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let b = random_bands(&mut rng);
        let p = to_pixel(&b);
        for kind in IndexKind::UNITEMPORAL {
            let (got, want) = (spectral::evaluate(kind, &p), oracles::index(kind.name(), &b));
            if want.is_nan() {
                assert!(got.is_nan(), "{kind}");
            } else {
                assert!(oracles::rel_err(got, want) < 1e-6, "{kind}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn patch_fields_match_oracle() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
    let pre: Vec<Bands> = (0..200).map(|_| random_bands(&mut rng)).collect();
    let post: Vec<Bands> = (0..200).map(|_| random_bands(&mut rng)).collect();
    // Compare against the oracle on the f32-rounded inputs the patch holds.
    let round = |v: &[Bands]| -> Vec<Bands> {
        v.iter().map(|b| b.iter().map(|(&k, &x)| (k, f64::from(x as f32))).collect()).collect()
    };
    let (pre_r, post_r) = (round(&pre), round(&post));
    let (a, b) = (to_patch(&pre), to_patch(&post));
    for kind in IndexKind::ALL {
        let field = spectral::change_field(kind, &a, &b).unwrap();
        for i in 0..200 {
            let want = match kind {
                IndexKind::Rdnbr => oracles::rdnbr(&pre_r[i], &post_r[i]),
                IndexKind::Rbr => oracles::rbr(&pre_r[i], &post_r[i]),
                k => oracles::index(k.name(), &pre_r[i]) - oracles::index(k.name(), &post_r[i]),
            };
            let got = f64::from(field.values[i]);
            // The field is stored as f32.
            assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0), "{kind} pixel {i}: {got} vs {want}");
        }
    }
}

#[test]
fn hand_values() {
    let mut b: Bands = BAND_NAMES.iter().map(|&n| (n, 0.0)).collect();
    b.insert("B04", 0.1);
    b.insert("B8A", 0.2);
    // NDVI = 0.1 / 0.3.
    assert!((spectral::evaluate(IndexKind::Ndvi, &to_pixel(&b)) - 1.0 / 3.0).abs() < 1e-12);
    // MIRBI with zero SWIR is the constant term.
    assert_eq!(spectral::evaluate(IndexKind::Mirbi, &to_pixel(&b)), 2.0);
    // RdNBR: pre NBR 0.5, post NBR -0.3 -> 0.8 / sqrt(0.0005).
    assert!((spectral::rdnbr(0.5, -0.3) - 0.8 / 0.0005f64.sqrt()).abs() < 1e-9);
}

#[test]
fn zero_denominators_are_nan() {
    let zero: Bands = BAND_NAMES.iter().map(|&n| (n, 0.0)).collect();
    let p = to_pixel(&zero);
    for kind in [IndexKind::Ndvi, IndexKind::Nbr, IndexKind::Nbr2, IndexKind::NbrPlus, IndexKind::Csi, IndexKind::Nbi, IndexKind::Abai, IndexKind::Ndwi] {
        assert!(spectral::evaluate(kind, &p).is_nan(), "{kind}");
    }
    assert!(spectral::rdnbr(0.0, 0.3).is_nan());
}

#[test]
fn missing_band_is_reported() {
    let patch = RasterPatch::new(1, 1, vec![BandId::B04, BandId::B8A], vec![0.1, 0.2]).unwrap();
    assert!(spectral::compute_index(IndexKind::Ndvi, &patch).is_ok());
    match spectral::compute_index(IndexKind::Nbr, &patch) {
        Err(burnscar::Error::MissingBand { band, .. }) => assert_eq!(band, BandId::B12),
        other => panic!("unexpected {other:?}"),
    }
}

proptest! {
    #[test]
    fn identical_pair_has_zero_delta(vals in proptest::collection::vec(0.01f64..1.0, 10)) {
        let b: Bands = BAND_NAMES.iter().zip(&vals).map(|(&n, &v)| (n, v)).collect();
        let patch = to_patch(&[b]);
        for kind in IndexKind::UNITEMPORAL {
            let d = spectral::compute_delta(kind, &patch, &patch).unwrap();
            prop_assert_eq!(d.values[0], 0.0);
        }
        prop_assert_eq!(spectral::compute_rbr(&patch, &patch).unwrap().values[0], 0.0);
    }

    #[test]
    fn normalized_differences_are_bounded(vals in proptest::collection::vec(0.001f64..1.2, 10)) {
        let b: Bands = BAND_NAMES.iter().zip(&vals).map(|(&n, &v)| (n, v)).collect();
        let p = to_pixel(&b);
        for kind in [IndexKind::Ndvi, IndexKind::Ndwi, IndexKind::Nbr, IndexKind::Nbr2, IndexKind::NbrPlus, IndexKind::Nbi] {
            let v = spectral::evaluate(kind, &p);
            prop_assert!((-1.0..=1.0).contains(&v), "{} = {}", kind, v);
        }
    }
}
