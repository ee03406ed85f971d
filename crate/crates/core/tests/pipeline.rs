//! End-to-end behavior of the flow, stereo and sparse entry points on
//! synthetic scenes with known motion.

use disflow::synth::{SmoothTexture, TextureSpec, TranslationScene};
use disflow::{
    compose_flows, dis_flow, dis_stereo, endpoint_error, sparse_correspondences, DisParams, GrayImage, Preset,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn smooth_texture(seed: u64) -> SmoothTexture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SmoothTexture::random(
        &mut rng,
        &TextureSpec {
            wavelength: (24.0, 96.0),
            ..TextureSpec::default()
        },
    )
}

#[test]
fn stereo_recovers_horizontal_shift() {
    let (w, h) = (256, 128);
    let texture = smooth_texture(11);
    let left = texture.render(w, h, (0.0, 0.0));
    // content moves 4 px to the left in the right image
    let right = texture.render(w, h, (-4.0, 0.0));
    let params = DisParams::stereo_preset(Preset::Medium).fit_to(w, h).unwrap();
    let disparity = dis_stereo(&left, &right, &params).unwrap();
    let mut worst: f64 = 0.0;
    for y in 16..h - 16 {
        for x in 16..w - 16 {
            let (d, v) = disparity.get(x, y);
            assert_eq!(v, 0.0);
            worst = worst.max((d - 4.0).abs());
        }
    }
    assert!(worst < 0.2, "worst interior disparity error {worst}");
}

#[test]
fn stereo_preset_halves_iterations() {
    assert_eq!(DisParams::stereo_preset(Preset::Fast).iterations, 6);
}

#[test]
fn sparse_matches_follow_constant_translation() {
    let (w, h) = (256, 128);
    let scene = TranslationScene::new(&smooth_texture(12), w, h, (3.4, -1.7));
    let seeds: Vec<(f64, f64)> = (0..40)
        .map(|i| (40.0 + (i % 10) as f64 * 18.0, 36.0 + (i / 10) as f64 * 18.0))
        .collect();
    for densify in [true, false] {
        let mut params = DisParams::preset(Preset::Medium).fit_to(w, h).unwrap();
        params.use_densification = densify;
        let matches = sparse_correspondences(&scene.frame0, &scene.frame1, &seeds, &params).unwrap();
        for m in matches {
            assert!(m.valid);
            let err = (m.displacement.0 - 3.4).hypot(m.displacement.1 + 1.7);
            assert!(err < 0.1, "densify={densify} seed {:?} error {err}", m.seed);
        }
    }
}

#[test]
fn sparse_densification_mode_is_observable() {
    // a square moving right over a static background
    let (w, h) = (128, 96);
    let bg = smooth_texture(13);
    let fg = smooth_texture(14);
    let frame = |shift: f64| {
        GrayImage::from_fn(w, h, |x, y| {
            let (xf, yf) = (x as f64 - shift, y as f64);
            if (40.0..80.0).contains(&xf) && (28.0..68.0).contains(&yf) {
                fg.eval(xf, yf)
            } else {
                bg.eval(x as f64, y as f64)
            }
        })
    };
    let (a, b) = (frame(0.0), frame(5.0));
    let seeds: Vec<(f64, f64)> = (0..24).map(|i| (30.0 + 3.0 * i as f64, 48.0)).collect();
    let mut params = DisParams::preset(Preset::Medium).fit_to(w, h).unwrap();
    let dense = sparse_correspondences(&a, &b, &seeds, &params).unwrap();
    params.use_densification = false;
    let own = sparse_correspondences(&a, &b, &seeds, &params).unwrap();
    assert_ne!(dense, own);
}

#[test]
fn identical_frames_give_near_zero_flow_for_every_preset() {
    let (w, h) = (256, 128);
    let img = smooth_texture(15).render(w, h, (0.0, 0.0));
    for preset in [Preset::UltraFast, Preset::Fast, Preset::Medium, Preset::Accurate] {
        let params = DisParams::preset(preset).fit_to(w, h).unwrap();
        let flow = dis_flow(&img, &img, &params).unwrap();
        let max = flow.u().iter().chain(flow.v()).fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 0.1, "{preset:?}: {max}");
    }
}

#[test]
fn quality_does_not_drop_with_slower_presets() {
    let (w, h) = (128, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let spec = TextureSpec {
        wavelength: (24.0, 96.0),
        ..TextureSpec::default()
    };
    let scenes: Vec<TranslationScene> = (0..20)
        .map(|_| TranslationScene::random(&mut rng, w, h, 4.0, &spec))
        .collect();
    let mean_epe = |preset: Preset| {
        let params = DisParams::preset(preset).fit_to(w, h).unwrap();
        scenes
            .iter()
            .map(|s| {
                let flow = dis_flow(&s.frame0, &s.frame1, &params).unwrap();
                let mask = s.visible_interior(params.patch_size);
                endpoint_error(&s.ground_truth(), &flow, Some(&mask)).unwrap().epe_all
            })
            .sum::<f64>()
            / scenes.len() as f64
    };
    let (fast, medium, high) = (
        mean_epe(Preset::Fast),
        mean_epe(Preset::Medium),
        mean_epe(Preset::Accurate),
    );
    eprintln!("mean EPE fast {fast:.4} medium {medium:.4} high {high:.4}");
    assert!(medium <= fast * 1.1, "medium {medium} vs fast {fast}");
    assert!(high <= medium * 1.1, "high {high} vs medium {medium}");
}

#[test]
fn chained_translations_add_up() {
    let (w, h) = (128, 64);
    let texture = smooth_texture(17);
    let frames: Vec<GrayImage> = (0..4).map(|i| texture.render(w, h, (i as f64, 0.0))).collect();
    let params = DisParams::preset(Preset::Medium).fit_to(w, h).unwrap();
    let mut total = dis_flow(&frames[0], &frames[1], &params).unwrap();
    for pair in frames[1..].windows(2) {
        let leg = dis_flow(&pair[0], &pair[1], &params).unwrap();
        total = compose_flows(&total, &leg).unwrap();
    }
    let (u, v) = total.get(64, 32);
    assert!((u - 3.0).abs() < 0.2 && v.abs() < 0.2, "composed ({u}, {v})");
}
