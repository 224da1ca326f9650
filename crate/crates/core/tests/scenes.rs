use spi_core::scenes::{load_scene, Scene};
use spi_core::Image;

#[test]
fn checked_in_assets_match_the_renderer() {
    for s in Scene::ALL {
        let path = format!("{}/assets/scenes/{}.pgm", env!("CARGO_MANIFEST_DIR"), s.name());
        let disk = Image::read_pgm(&path).unwrap();
        let live = s.image();
        // PGM quantizes to 8 bits
        let worst = disk.data().iter().zip(live.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.5 / 255.0 + 1e-12, "{} drifted by {worst}; rerun the render_scenes example", s.name());
    }
}

#[test]
fn scenes_are_in_range_and_not_flat() {
    for s in Scene::ALL {
        let img = s.image();
        assert_eq!((img.height(), img.width()), (Scene::SIZE, Scene::SIZE));
        let (lo, hi) = img.min_max();
        assert!(lo >= 0.0 && hi <= 1.0 && hi - lo > 0.5, "{}", s.name());
    }
}

#[test]
fn names_resolve() {
    for s in Scene::ALL {
        assert_eq!(Scene::from_name(s.name()), Some(s));
        assert_eq!(load_scene(s.name()).unwrap(), s.image());
    }
    let e = load_scene("missing.pgm").unwrap_err().to_string();
    assert!(e.contains("missing.pgm"), "{e}");
}
