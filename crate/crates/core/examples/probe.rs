use wfdl::cli::{evaluate_split, train_on_images, RunConfig};
use wfdl::checkpoint::Checkpoint;
use wfdl::data::{synth_dataset, Background, Defect, SynthConfig};
use wfdl::loss::LossKind;
use wfdl::spectral::{dft2, radial_filter, FilterSpec};
use wfdl::types::{Image, Label};

fn retention(model: &wfdl::model::AutoencoderParams, images: &[&Image]) -> f64 {
    let filter = FilterSpec::high_pass(16.0).unwrap();
    let he = |img: &Image| -> f64 {
        img.planes().iter().map(|p| radial_filter(&dft2(p), &filter).iter().map(|z| z.norm_sqr()).sum::<f64>()).sum()
    };
    images.iter().map(|img| he(&model.reconstruct(img).unwrap()) / he(img)).sum::<f64>() / images.len() as f64
}

fn main() {
    for seed in [1u64, 2, 3] {
        let synth = SynthConfig {
            image_size: 64, train_count: 32, test_normal_count: 8, test_anomalous_count: 8,
            background: Background::Stripes, defect: Defect::Scratch, seed,
        };
        let split = synth_dataset(&synth).unwrap();
        let test_normals: Vec<&Image> = split.test.iter().filter(|s| s.label == Label::Normal).map(|s| &s.image).collect();
        let train_refs: Vec<&Image> = split.train_normal.iter().collect();
        let mut line = format!("seed {seed}:");
        for kind in [LossKind::Wfdl, LossKind::Mse] {
            let config = RunConfig {
                image_size: 64, epochs: 100, batch_size: 8, seed,
                loss: wfdl::loss::LossConfig { kind, weight_mode: wfdl::spectral::WeightMode::Centered },
                checkpoint_path: std::path::PathBuf::from(format!("/tmp/bench/cal3_{kind}_{seed}.ckpt")),
                ..RunConfig::default()
            };
            train_on_images(&config, &split.train_normal).unwrap();
            let model = Checkpoint::load(&config.checkpoint_path).unwrap().to_model().unwrap();
            let report = evaluate_split(&model, &split.test).unwrap();
            line += &format!(" | {kind}: auroc {:.3} band-test {:.3} band-train {:.3}",
                report.auroc, retention(&model, &test_normals), retention(&model, &train_refs));
        }
        println!("{line}");
    }
}
