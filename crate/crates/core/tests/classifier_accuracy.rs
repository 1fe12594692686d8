use countbox::confirm::train_baseline;
use countbox::synth::{builtin_sprites, category_label, generate_scene, SceneSpec};
use countbox::RasterImage;

/// Tight crops of single-object scenes rendered from a fresh sprite set.
fn crops(per_category: usize, sprite_seed: u64, scene_seed: u64) -> Vec<(String, RasterImage)> {
    let sprites = builtin_sprites(10, per_category, 50, 130, sprite_seed);
    let mut out = Vec::new();
    for c in 0..10 {
        let label = category_label(c);
        let own: Vec<_> = sprites.iter().filter(|s| s.label == label).cloned().collect();
        for k in 0..per_category {
            let spec = SceneSpec {
                canvas_width: 320,
                canvas_height: 240,
                background: [200, 200, 200],
                noise: 4,
                sprites: vec![own[k].clone()],
                n_objects: 1,
                min_gap: 0,
                seed: scene_seed ^ (c * 1000 + k) as u64,
            };
            let (img, ann) = generate_scene(&spec, "x.png").unwrap();
            out.push((label.clone(), img.crop(&ann.objects[0].bbox).unwrap()));
        }
    }
    out
}

#[test]
fn held_out_accuracy_on_ten_categories() {
    let train = crops(20, 1, 100);
    let test = crops(20, 2, 200);
    let cats: Vec<String> = (0..10).map(category_label).collect();
    let model = train_baseline(&train, &cats, 10.0).unwrap();
    let correct = test.iter().filter(|(l, c)| &model.classify(c).label == l).count();
    let acc = correct as f64 / test.len() as f64;
    assert!(acc >= 0.95, "held-out accuracy {acc}");
}
