use proptest::prelude::*;
use reflectnet::checkpoint::{decode, encode, load, save};
use reflectnet::config::RunConfig;
use reflectnet::imageio::{read_image, to_rgb8, write_image};
use reflectnet::sidecar::{ReflectionFit, Sidecar};
use reflectnet::CliError;
use reflectnet_core::model::{DiscriminatorConfig, GeneratorConfig};
use reflectnet_core::synth::{sample_recipe_with, SaliencyMode, SynthRanges};
use reflectnet_core::train::{TrainConfig, TrainPair, Trainer};
use reflectnet_core::Image;

mod support;

fn trained_state() -> reflectnet_core::train::TrainState {
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 2,
        patch_size: 8,
        seed: 77,
        lr0: 0.0123,
        generator: GeneratorConfig { width: 4, reduction: 2 },
        discriminator: DiscriminatorConfig { width: 4, stages: 2 },
        ..TrainConfig::default()
    };
    let pairs: Vec<TrainPair> = (0..3)
        .map(|i| TrainPair {
            input: support::pattern(12, 12, i),
            target: support::scene(12, 12, i),
        })
        .collect();
    let mut t = Trainer::new(cfg).unwrap();
    t.run_epoch(&pairs).unwrap();
    t.state()
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let state = trained_state();
    let bytes = encode(&state).unwrap();
    let back = decode(&bytes).unwrap();
    assert_eq!(back, state);
    assert_eq!(encode(&back).unwrap(), bytes);
    // moments are non-trivial after a step, so the comparison covers them
    assert!(back.adam_g.v.iter().flatten().any(|&v| v != 0.0));
    assert_eq!(back.adam_g.step, 2);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.ckpt");
    save(&p, &state).unwrap();
    assert_eq!(load(&p).unwrap(), state);
}

#[test]
fn header_records_config_and_manifest() {
    let bytes = encode(&trained_state()).unwrap();
    let len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let header = std::str::from_utf8(&bytes[16..16 + len]).unwrap();
    assert_eq!(&bytes[..8], b"RFLNCKPT");
    for needle in [
        "dilations = [1, 1, 2, 4, 8, 16, 1]",
        "width = 4",
        "reduction = 2",
        "lr = 0.0123",
        "name = \"generator/stem.0.weight\"",
        "name = \"adam.discriminator.v/score.bias\"",
    ] {
        assert!(header.contains(needle), "missing `{needle}` in\n{header}");
    }
}

#[test]
fn corrupt_checkpoints_are_format_errors() {
    let bytes = encode(&trained_state()).unwrap();
    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 0x10;
    let cases: Vec<(Vec<u8>, &str)> = vec![
        (flipped, "checksum"),
        (bytes[..bytes.len() - 9].to_vec(), "checksum"),
        (b"PNG\x00garbage-garbage-garbage".to_vec(), "magic"),
        ([&bytes[..8], &9u32.to_le_bytes()[..], &bytes[12..]].concat(), "version"),
        (bytes[..10].to_vec(), "truncated"),
    ];
    for (data, word) in cases {
        let err = decode(&data).unwrap_err();
        assert!(matches!(err, CliError::Format(_)), "{err}");
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains(word), "{err}");
    }
}

fn sidecar(seed: u64, ranges: &SynthRanges, names: (String, String), fit: ReflectionFit) -> Sidecar {
    Sidecar {
        recipe: sample_recipe_with(ranges, seed).unwrap(),
        size: (64, 48),
        transmission: names.0,
        reflection: names.1,
        reflection_size: (90, 120),
        fit,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sidecar_round_trip_is_bit_exact(
        seed in any::<u64>(),
        ones in any::<bool>(),
        fit in 0usize..3,
        t in "[a-z0-9_.]{1,12}",
        r in "[a-z0-9 _.-]{1,12}",
    ) {
        let ranges = SynthRanges {
            saliency_mode: if ones { SaliencyMode::Ones } else { SaliencyMode::ContrastPrior },
            ..SynthRanges::default()
        };
        let fit = [ReflectionFit::Unchanged, ReflectionFit::CenterCrop, ReflectionFit::Resize][fit];
        let sc = sidecar(seed, &ranges, (t, r), fit);
        let text = sc.to_text();
        let back = Sidecar::parse(&text).unwrap();
        prop_assert_eq!(back.recipe.alpha.to_bits(), sc.recipe.alpha.to_bits());
        prop_assert_eq!(back.recipe.desat_factor.to_bits(), sc.recipe.desat_factor.to_bits());
        prop_assert_eq!(back.recipe.kernel.taps(), sc.recipe.kernel.taps());
        prop_assert_eq!(&back, &sc);
        prop_assert_eq!(back.to_text(), text);
    }
}

#[test]
fn malformed_sidecars_are_rejected() {
    let good = sidecar(3, &SynthRanges::default(), ("a.png".into(), "b.png".into()), ReflectionFit::Resize).to_text();
    let cases = [
        good.replace("alpha=", "alfa="),
        format!("{good}alpha=0.4\n"),
        format!("{good}extra=1\n"),
        good.replace("reflection_fit=resize", "reflection_fit=stretch"),
        good.lines().filter(|l| !l.starts_with("seed=")).collect::<Vec<_>>().join("\n"),
        good.replace("size=64x48", "size=64by48"),
    ];
    for text in cases {
        let err = Sidecar::parse(&text).unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");
    }
    let bad_alpha = good
        .lines()
        .map(|l| if l.starts_with("alpha=") { "alpha=1.5".to_string() } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n");
    assert!(Sidecar::parse(&bad_alpha).unwrap_err().to_string().contains("alpha"));
}

#[test]
fn png_and_ppm_quantize_by_rounding() {
    let dir = tempfile::tempdir().unwrap();
    let img = Image::from_fn(3, 4, |y, x| [0.2 * y as f32, 0.3 * x as f32, 0.5 / 255.0 * (y + x) as f32]).unwrap();
    for name in ["q.png", "q.ppm"] {
        let p = dir.path().join(name);
        write_image(&p, &img).unwrap();
        let back = read_image(&p).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a.clamp(0.0, 1.0) - b).abs() <= 0.5 / 255.0 + 1e-7);
        }
        assert_eq!(to_rgb8(&back), to_rgb8(&img));
    }
}

#[test]
fn config_echo_reproduces_the_config() {
    let text = "[paths]\ndata = \"d\"\n[train]\nlr = 0.0003\nseed = 12\n[loss]\nw_adv = 0.02\n[synth]\nsaliency = \"ones\"\n";
    let cfg = RunConfig::parse(text).unwrap();
    let echoed = RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(echoed, cfg);
    assert_eq!(echoed.train.lr, 0.0003);
    assert!(cfg.to_toml().unwrap().contains("lr = 0.0003"));
    let tc = cfg.train_config().unwrap();
    assert_eq!(RunConfig::from_train_config(&tc).train_config().unwrap(), tc);
}
