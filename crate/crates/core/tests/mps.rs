mod common;

use cmsa_bip::mps::{mps_string, MpsError};
use cmsa_bip::{parse_mps_str, read_mps_file, write_mps, BipBuilder, Sense};
use common::planted_instance;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn real_valued_instance(seed: u64) -> cmsa_bip::BipInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..30);
    let m = rng.gen_range(0..20);
    let scale = |rng: &mut ChaCha8Rng| 10f64.powi(rng.gen_range(-8..9));
    let costs: Vec<f64> = (0..n)
        .map(|_| {
            if rng.gen_bool(0.2) {
                0.0
            } else {
                rng.gen_range(-1.0..1.0) * scale(&mut rng)
            }
        })
        .collect();
    let mut b = BipBuilder::new(format!("rand{seed}")).vars(&costs);
    if rng.gen_bool(0.5) {
        b = b.maximize();
    }
    for _ in 0..m {
        let entries: Vec<(usize, f64)> = (0..n)
            .filter(|_| rng.gen_bool(0.3))
            .collect::<Vec<_>>()
            .into_iter()
            .map(|j| (j, rng.gen_range(-1.0..1.0) * scale(&mut rng)))
            .collect();
        let sense = [Sense::Le, Sense::Ge, Sense::Eq][rng.gen_range(0..3)];
        let rhs = if rng.gen_bool(0.3) {
            0.0
        } else {
            rng.gen_range(-5.0..5.0)
        };
        b = b.row(&entries, sense, rhs);
    }
    b.build().unwrap()
}

#[test]
fn round_trip_real_coefficients() {
    for seed in 0..200 {
        let inst = real_valued_instance(seed);
        let back = parse_mps_str(&mps_string(&inst)).unwrap();
        assert_eq!(back, inst, "seed {seed}");
    }
}

#[test]
fn round_trip_through_gzip() {
    use std::io::Write;
    let inst = real_valued_instance(7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.mps.gz");
    let mut enc = flate2::write::GzEncoder::new(
        std::fs::File::create(&path).unwrap(),
        flate2::Compression::default(),
    );
    enc.write_all(mps_string(&inst).as_bytes()).unwrap();
    enc.finish().unwrap();
    assert_eq!(read_mps_file(&path).unwrap(), inst);
    let plain = dir.path().join("x.mps");
    write_mps(&inst, &plain).unwrap();
    assert_eq!(read_mps_file(&plain).unwrap(), inst);
}

#[test]
fn missing_file_is_io_error() {
    assert!(matches!(
        read_mps_file("/nonexistent/a.mps"),
        Err(MpsError::Io(_))
    ));
}

#[test]
fn fixed_format_style_and_bound_variants() {
    let text = "\
* comment line
NAME          VARIANTS
ROWS
 N  COST
 G  C1
 E  C2
 N  FREE
COLUMNS
    X1        COST         1.0   C1           1.0
    X1        FREE         9.0
    X2        COST         2.0   C1           1.0
    X2        C2           1.0
    X3        C2           1.0
RHS
    RHS       C1           1.0   C2           1.0
BOUNDS
 BV BND       X1
 BV BND       X2
 BV BND       X3
ENDATA
";
    let inst = parse_mps_str(text).unwrap();
    assert_eq!((inst.n(), inst.m()), (3, 2));
    assert_eq!(inst.objective(), &[1.0, 2.0, 0.0]);
    assert_eq!(inst.row(1).sense, Sense::Eq);

    let free_bound = text.replace(" BV BND       X3\n", " FR BND       X3\n");
    assert!(matches!(
        parse_mps_str(&free_bound),
        Err(MpsError::UnsupportedVariable { ref name, .. }) if name == "X3"
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_planted(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = planted_instance(&mut rng, 9, 5);
        prop_assert_eq!(parse_mps_str(&mps_string(&inst)).unwrap(), inst);
    }

    #[test]
    fn mutated_documents_never_panic(seed in any::<u64>(), cut in 0usize..2000, kind in 0u8..4) {
        let text = mps_string(&real_valued_instance(seed % 50));
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let at = cut % lines.len();
        let mutated = match kind {
            0 => text[..cut.min(text.len())].to_string(),
            1 => {
                lines[at] = "GARBAGE here".into();
                lines.join("\n")
            }
            2 => {
                let next = (at + 1) % lines.len();
                lines.swap(at, next);
                lines.join("\n")
            }
            _ => {
                let digits_gone = lines[at].replace(|c: char| c.is_ascii_digit(), "x");
                lines[at] = digits_gone;
                lines.join("\n")
            }
        };
        let _ = parse_mps_str(&mutated);
    }
}
